mod common;

use std::sync::Arc;

use common::oracle::ChrononTable;
use petg_core::graph::EntityId;
use petg_core::io::IoGate;
use petg_core::model::{Chronon, TimeInterval, Value, ValueType};
use petg_core::schema::PropertySpec;
use petg_core::timtree::{TimConfig, TimTree};
use petg_core::{Database, DbConfig};
use proptest::prelude::*;

const HORIZON: u64 = 300;

#[derive(Clone, Debug)]
enum Op {
    Write { entity: u64, start: u64, len: Option<u64>, value: i64 },
    Flush,
    Merge,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        8 => (0..6u64, 0..HORIZON - 1, prop::option::weighted(0.85, 1..60u64), 0..20i64)
            .prop_map(|(entity, start, len, value)| Op::Write { entity, start, len, value }),
        1 => Just(Op::Flush),
        1 => Just(Op::Merge),
    ]
}

fn config(compression_on: bool) -> TimConfig {
    TimConfig {
        global_memtable_bytes: 512,
        local_memtable_bytes: 256,
        block_bytes: 128,
        compression_on,
        background_merge: false,
    }
}

fn entity(i: u64) -> EntityId {
    if i.is_multiple_of(2) {
        EntityId::Node(i)
    } else {
        EntityId::Edge(i)
    }
}

fn check(t: &TimTree, pid: petg_core::schema::PropertyId, table: &ChrononTable, a: u64, b: u64) -> Result<(), TestCaseError> {
    t.check_invariants().map_err(TestCaseError::fail)?;
    for i in 0..6 {
        let e = entity(i);
        let s = t.entity_history(e, pid, TimeInterval::ALL).unwrap();
        for c in 0..HORIZON {
            prop_assert_eq!(s.value_at(Chronon::from_raw(c)).unwrap(), table.at(e, c), "entity {:?} chronon {}", e, c);
        }
        let w = t.entity_history(e, pid, TimeInterval::ticks(a, b).unwrap()).unwrap();
        let got: Vec<(u64, u64, Value)> = w
            .entries()
            .iter()
            .map(|(iv, v)| (iv.start().tick(), iv.end().tick().min(b), v.clone()))
            .collect();
        prop_assert_eq!(got, table.runs(e, a, b));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reads_match_a_chronon_table(
        ops in prop::collection::vec(op(), 1..120),
        compression_on in any::<bool>(),
        window in (0..HORIZON - 1, 1..HORIZON),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let t = TimTree::open(dir.path(), config(compression_on), Arc::new(IoGate::unlimited())).unwrap();
        let pid = t.define(PropertySpec::new("level", ValueType::Int)).unwrap().id;
        let mut table = ChrononTable::new(HORIZON);
        for op in &ops {
            match *op {
                Op::Write { entity: i, start, len, value } => {
                    let end = len.map(|l| (start + l).min(HORIZON));
                    let iv = match end {
                        Some(end) => TimeInterval::ticks(start, end).unwrap(),
                        None => TimeInterval::since(Chronon::from_raw(start)).unwrap(),
                    };
                    t.write(entity(i), pid, iv, Value::Int(value)).unwrap();
                    table.set(entity(i), start, end, Some(Value::Int(value)));
                    t.maybe_flush().unwrap();
                }
                Op::Flush => t.flush().unwrap(),
                Op::Merge => t.merge_levels().unwrap(),
            }
        }
        let (a, len) = window;
        let b = (a + len).min(HORIZON);
        check(&t, pid, &table, a, b)?;
        t.flush().unwrap();
        t.merge_levels().unwrap();
        check(&t, pid, &table, a, b)?;
    }

    #[test]
    fn database_reopen_keeps_every_series(
        ops in prop::collection::vec(op(), 1..80),
        checkpoint_at in 0..80usize,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DbConfig {
            tim: config(false),
            fsync_on_commit: false,
            ..DbConfig::default()
        };
        let mut table = ChrononTable::new(HORIZON);
        let nodes = {
            let db = Database::open(dir.path(), cfg.clone()).unwrap();
            db.define_property(PropertySpec::new("level", ValueType::Int)).unwrap();
            let mut setup = db.begin();
            let nodes: Vec<u64> = (0..6).map(|_| setup.create_node(&["Gauge"]).unwrap()).collect();
            setup.commit().unwrap();
            for (k, op) in ops.iter().enumerate() {
                if k == checkpoint_at {
                    db.checkpoint().unwrap();
                }
                match *op {
                    Op::Write { entity: i, start, len, value } => {
                        let e = EntityId::Node(nodes[i as usize]);
                        let end = len.map(|l| (start + l).min(HORIZON));
                        let iv = match end {
                            Some(end) => TimeInterval::ticks(start, end).unwrap(),
                            None => TimeInterval::since(Chronon::from_raw(start)).unwrap(),
                        };
                        let mut txn = db.begin();
                        txn.set_tp(e, "level", iv, Value::Int(value)).unwrap();
                        txn.commit().unwrap();
                        table.set(e, start, end, Some(Value::Int(value)));
                    }
                    Op::Flush | Op::Merge => db.flush_all().unwrap(),
                }
            }
            nodes
        };
        let db = Database::open(dir.path(), cfg).unwrap();
        let txn = db.begin();
        for &vid in &nodes {
            let e = EntityId::Node(vid);
            let s = txn.get_tp(e, "level", TimeInterval::ALL).unwrap();
            for c in 0..HORIZON {
                prop_assert_eq!(s.value_at(Chronon::from_raw(c)).unwrap(), table.at(e, c), "node {} chronon {}", vid, c);
            }
        }
    }
}
