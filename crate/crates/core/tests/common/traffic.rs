//! A small road network with minute-resolution travel times starting at
//! 2010-05-01 00:00.

#![allow(dead_code)]

use chrono::NaiveDate;
use petg_core::graph::EntityId;
use petg_core::model::{TimeInterval, Value, ValueType};
use petg_core::schema::PropertySpec;
use petg_core::Database;

pub const STATEMENT_I: &str =
    r#"MATCH ()-[road {name: "Haidian East Road"}]->() SET road.travel_time = TIS("2010-05-01 08:00"~"2010-05-01 08:10": 36)"#;
pub const STATEMENT_II: &str = r#"MATCH ()-[road]->() RETURN road.name, TIS_AGGR_MAX(road.travel_time, "2010-05-01 08:00"~"2010-05-01 08:30")"#;
pub const STATEMENT_III: &str = "MATCH ()-[road]->() WHERE TIS_WITHIN(road.travel_time, '2010-05-01 08:00'~'2010-05-01 08:30', 600, 1200) RETURN road.name";

/// 08:00 and 08:30 on the first day, in chronons.
pub const WINDOW: (u64, u64) = (480, 510);

pub fn define(db: &Database) {
    let epoch = NaiveDate::from_ymd_opt(2010, 5, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    db.define_property(PropertySpec::new("travel_time", ValueType::Int).epoch(epoch))
        .unwrap();
}

/// Creates `roads` roads with varied travel times; returns their edge ids.
pub fn build(db: &Database, roads: usize) -> Vec<u64> {
    define(db);
    let names = ["Haidian East Road", "Zhongguancun Street", "Xueyuan Road", "Chengfu Road"];
    let mut t = db.begin();
    let mut nodes = Vec::new();
    for _ in 0..=roads {
        nodes.push(t.create_node(&["Intersection"]).unwrap());
    }
    let mut out = Vec::new();
    for i in 0..roads {
        let r = t.create_edge(nodes[i], nodes[i + 1], &["Road"]).unwrap();
        let name = if i < names.len() { names[i].to_owned() } else { format!("Road {i}") };
        t.set_prop(EntityId::Edge(r), "name", Value::from(name)).unwrap();
        // Every third road carries no series at all.
        if i % 3 != 2 {
            for k in 0..12u64 {
                let v = ((i as u64 * 37 + k * 211) % 1500) as i64;
                let iv = TimeInterval::ticks(450 + 10 * k, 460 + 10 * k).unwrap();
                t.set_tp(EntityId::Edge(r), "travel_time", iv, Value::Int(v)).unwrap();
            }
        }
        out.push(r);
    }
    t.commit().unwrap();
    out
}
