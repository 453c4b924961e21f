use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use petg_core::graph::EntityId;
use petg_core::model::{TimeInterval, Value, ValueType};
use petg_core::schema::PropertySpec;
use petg_core::txn::TxnState;
use petg_core::{Database, DbConfig, Error};

fn iv(s: u64, e: u64) -> TimeInterval {
    TimeInterval::ticks(s, e).unwrap()
}

fn road_db(dir: &std::path::Path, config: DbConfig) -> (Database, u64) {
    let db = Database::open(dir, config).unwrap();
    db.define_property(PropertySpec::new("travel_time", ValueType::Int)).unwrap();
    let r = {
        let mut t = db.begin();
        let a = t.create_node(&["Intersection"]).unwrap();
        let b = t.create_node(&["Intersection"]).unwrap();
        let r = t.create_edge(a, b, &["Road"]).unwrap();
        t.set_prop(EntityId::Edge(r), "name", Value::from("Haidian East Road")).unwrap();
        t.commit().unwrap();
        r
    };
    (db, r)
}

#[test]
fn aborted_write_is_invisible() {
    let dir = tempfile::tempdir().unwrap();
    let (db, r) = road_db(dir.path(), DbConfig::default());
    let e = EntityId::Edge(r);
    let mut t = db.begin();
    t.set_tp(e, "travel_time", iv(0, 10), Value::Int(5)).unwrap();
    assert_eq!(t.get_tp(e, "travel_time", iv(0, 10)).unwrap().len(), 1);
    t.abort().unwrap();
    let t = db.begin();
    assert!(t.get_tp(e, "travel_time", iv(0, 10)).unwrap().is_empty());
    drop(t);
    assert!(db.lock_table_is_empty());
}

#[test]
fn committed_write_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let e;
    {
        let (db, r) = road_db(dir.path(), DbConfig::default());
        e = EntityId::Edge(r);
        let mut t = db.begin();
        t.set_tp(e, "travel_time", iv(480, 490), Value::Int(36)).unwrap();
        t.commit().unwrap();
    }
    let db = Database::open(dir.path(), DbConfig::default()).unwrap();
    assert_eq!(db.recovery_report().replayed_txns, 2);
    let t = db.begin();
    let h = t.get_tp(e, "travel_time", iv(0, 1000)).unwrap();
    assert_eq!(h.entries(), &[(iv(480, 490), Value::Int(36))]);
    assert_eq!(
        t.get_prop(e, "name").unwrap(),
        Some(Value::from("Haidian East Road"))
    );
}

#[test]
fn finished_transactions_reject_further_use() {
    let dir = tempfile::tempdir().unwrap();
    let (db, r) = road_db(dir.path(), DbConfig::default());
    let mut t = db.begin();
    t.set_tp(EntityId::Edge(r), "travel_time", iv(0, 5), Value::Int(1)).unwrap();
    t.abort().unwrap();
    assert_eq!(t.state(), TxnState::Aborted);
    assert!(matches!(
        t.commit(),
        Err(Error::TxnState { state: TxnState::Aborted, .. })
    ));
    assert!(t.set_prop(EntityId::Edge(r), "x", Value::Int(1)).is_err());
    let mut t2 = db.begin();
    t2.commit().unwrap();
    assert_eq!(t2.state(), TxnState::Committed);
    assert!(t2.abort().is_err());
    assert_eq!(db.counters().aborts, 1);
}

#[test]
fn commit_after_deadlock_reports_state() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = road_db(dir.path(), DbConfig::default());
    let db = Arc::new(db);
    let (a, b) = (EntityId::Node(1), EntityId::Node(2));
    let barrier = Arc::new(Barrier::new(2));
    let mut handles = Vec::new();
    for (first, second) in [(a, b), (b, a)] {
        let db = db.clone();
        let barrier = barrier.clone();
        handles.push(thread::spawn(move || {
            let mut t = db.begin();
            t.set_prop(first, "k", Value::Int(1)).unwrap();
            barrier.wait();
            match t.set_prop(second, "k", Value::Int(2)) {
                Ok(()) => t.commit().map(|_| true),
                Err(e) => {
                    assert!(e.is_deadlock());
                    let again = t.set_prop(second, "k", Value::Int(3));
                    assert!(matches!(again, Err(Error::Deadlock(_))));
                    assert!(t.commit().unwrap_err().is_deadlock());
                    Ok(false)
                }
            }
        }));
    }
    let outcomes: Vec<bool> = handles.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
    assert_eq!(outcomes.iter().filter(|ok| **ok).count(), 1);
    assert_eq!(db.counters().deadlocks, 1);
    assert!(db.lock_table_is_empty());
}

#[test]
fn disjoint_interval_writers_do_not_wait() {
    let dir = tempfile::tempdir().unwrap();
    let (db, r) = road_db(dir.path(), DbConfig::default());
    let e = EntityId::Edge(r);
    let mut t1 = db.begin();
    let mut t2 = db.begin();
    t1.set_tp(e, "travel_time", iv(0, 10), Value::Int(1)).unwrap();
    t2.set_tp(e, "travel_time", iv(10, 20), Value::Int(2)).unwrap();
    t2.commit().unwrap();
    t1.commit().unwrap();
    assert_eq!(db.counters().lock_waits, 0);
    let t = db.begin();
    assert_eq!(t.get_tp(e, "travel_time", iv(0, 20)).unwrap().len(), 2);
}

#[test]
fn overlapping_reader_waits_for_writer() {
    let dir = tempfile::tempdir().unwrap();
    let (db, r) = road_db(dir.path(), DbConfig::default());
    let e = EntityId::Edge(r);
    thread::scope(|s| {
        let mut w = db.begin();
        w.set_tp(e, "travel_time", iv(0, 10), Value::Int(7)).unwrap();
        let reader = s.spawn(|| {
            let t = db.begin();
            t.get_tp(e, "travel_time", iv(5, 8)).unwrap()
        });
        let disjoint = db.begin();
        assert!(disjoint.get_tp(e, "travel_time", iv(10, 30)).unwrap().is_empty());
        thread::sleep(Duration::from_millis(40));
        assert!(!reader.is_finished());
        w.commit().unwrap();
        assert_eq!(reader.join().unwrap().entries(), &[(iv(5, 8), Value::Int(7))]);
    });
}

#[test]
fn coarse_mode_serializes_writers_on_an_entity() {
    let dir = tempfile::tempdir().unwrap();
    let config = DbConfig {
        coarse_lock_mode: true,
        ..Default::default()
    };
    let (db, r) = road_db(dir.path(), config);
    let e = EntityId::Edge(r);
    thread::scope(|s| {
        let mut t1 = db.begin();
        t1.set_tp(e, "travel_time", iv(0, 10), Value::Int(1)).unwrap();
        let h = s.spawn(|| {
            let mut t2 = db.begin();
            t2.set_tp(e, "travel_time", iv(10, 20), Value::Int(2)).unwrap();
            t2.commit().unwrap();
        });
        thread::sleep(Duration::from_millis(40));
        assert!(!h.is_finished());
        t1.commit().unwrap();
        h.join().unwrap();
    });
    assert_eq!(db.counters().lock_waits, 1);
}

#[test]
fn temporal_write_blocks_behind_delete_then_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = road_db(dir.path(), DbConfig::default());
    let n = EntityId::Node(1);
    db.define_property(PropertySpec::new("load", ValueType::Int)).unwrap();
    let db = &db;
    thread::scope(|s| {
        let mut del = db.begin();
        del.delete_node(1).unwrap();
        let started = Instant::now();
        let writer = s.spawn(move || {
            let mut t = db.begin();
            let r = t.set_tp(n, "load", TimeInterval::ticks(0, 5).unwrap(), Value::Int(1));
            (r, started.elapsed())
        });
        thread::sleep(Duration::from_millis(40));
        del.commit().unwrap();
        let (r, waited) = writer.join().unwrap();
        assert!(matches!(r, Err(Error::UnknownNode(1))));
        assert!(waited >= Duration::from_millis(30));
    });
    assert_eq!(db.graph().edge_count(), 0);
}

#[test]
fn read_your_writes_covers_topology_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let (db, r) = road_db(dir.path(), DbConfig::default());
    let mut t = db.begin();
    let c = t.create_node(&["Intersection"]).unwrap();
    let r2 = t.create_edge(1, c, &["Road"]).unwrap();
    t.set_tp(EntityId::Edge(r2), "travel_time", iv(0, 10), Value::Int(3)).unwrap();
    t.set_tp(EntityId::Edge(r), "travel_time", iv(0, 10), Value::Int(4)).unwrap();
    t.set_tp(EntityId::Edge(r), "travel_time", iv(4, 6), Value::Int(9)).unwrap();
    assert_eq!(t.get_nodes(&["Intersection"]).unwrap().len(), 3);
    let out = t.get_rel(1, petg_core::graph::Direction::Outgoing, &["Road"]).unwrap();
    assert_eq!(out, vec![r, r2]);
    let pid = t.property("travel_time").unwrap().id;
    assert_eq!(t.entities_with(pid).unwrap().len(), 2);
    assert_eq!(t.get_tp(EntityId::Edge(r), "travel_time", iv(0, 10)).unwrap().len(), 3);
    t.delete_node(c).unwrap();
    assert_eq!(t.entities_with(pid).unwrap(), vec![EntityId::Edge(r)]);
    assert!(!t.node_exists(c).unwrap());
    t.commit().unwrap();
    assert_eq!(db.graph().node_count(), 2);
}

#[test]
fn namespace_is_shared_between_property_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let (db, r) = road_db(dir.path(), DbConfig::default());
    let e = EntityId::Edge(r);
    let mut t = db.begin();
    t.set_tp(e, "travel_time", iv(0, 10), Value::Int(3)).unwrap();
    assert!(matches!(
        t.set_prop(e, "travel_time", Value::Int(1)),
        Err(Error::NamespaceClash { .. })
    ));
    assert!(matches!(
        t.set_tp(e, "travel_time", iv(0, 1), Value::from("x")),
        Err(Error::TypeMismatch { .. })
    ));
    assert!(t.rm_prop(e, "travel_time").unwrap());
    assert!(t.get_tp(e, "travel_time", iv(0, 10)).unwrap().is_empty());
    t.commit().unwrap();
    let t = db.begin();
    assert!(t.get_tp(e, "travel_time", TimeInterval::ALL).unwrap().is_empty());
    assert!(t.temporal_props(e).unwrap().is_empty());
}

#[test]
fn checkpoint_then_recover_is_exact_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let config = DbConfig {
        checkpoint_interval: 7,
        ..Default::default()
    };
    let image;
    {
        let (db, r) = road_db(dir.path(), config.clone());
        let e = EntityId::Edge(r);
        for k in 0..40u64 {
            let mut t = db.begin();
            t.set_tp(e, "travel_time", iv(k * 10, k * 10 + 10), Value::Int((k % 3) as i64)).unwrap();
            if k % 5 == 0 {
                t.set_tp(e, "travel_time", iv(3, 4), Value::Int(100 + k as i64)).unwrap();
            }
            t.commit().unwrap();
        }
        {
            let mut t = db.begin();
            t.set_tp(e, "travel_time", iv(0, 1), Value::Int(-1)).unwrap();
            t.abort().unwrap();
        }
        assert!(db.counters().checkpoints >= 5);
        image = db.state_image().unwrap();
    }
    let db = Database::open(dir.path(), config.clone()).unwrap();
    assert!(db.recovery_report().checkpoint.is_some());
    assert_eq!(db.state_image().unwrap(), image);
    drop(db);
    let db = Database::open(dir.path(), config).unwrap();
    assert_eq!(db.state_image().unwrap(), image);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".rec") || n.ends_with(".buf"))
        .collect();
    assert_eq!(leftovers.len(), 2, "{leftovers:?}");
}

#[test]
fn transaction_states_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = road_db(dir.path(), DbConfig::default());
    let mut t = db.begin();
    assert_eq!(t.state(), TxnState::Active);
    t.commit().unwrap();
}
