//! Random well-formed queries for round-trip checks.

#![allow(dead_code)]

use petg_core::model::Value;
use petg_core::tcypher::ast::*;
use rand::seq::SliceRandom;
use rand::Rng;

const NAMES: &[&str] = &["a", "b", "road", "r", "stop_1", "x9", "_t", "Sensor", "velocity"];
const FUNCS: &[&str] = &["TIS_AGGR_MAX", "TIS_AGGR_MIN", "TIS_AGGR_AVG", "TIS_WITHIN", "TIS_COUNT"];

fn name(rng: &mut impl Rng) -> String {
    NAMES.choose(rng).unwrap().to_string()
}

fn text(rng: &mut impl Rng) -> String {
    const PIECES: &[&str] = &["2010-05-01 08:00", "x", "\"", "'", "\\", "\n", "é", " ", "~", "MATCH", ""];
    (0..rng.gen_range(0..4)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

pub fn value(rng: &mut impl Rng) -> Value {
    match rng.gen_range(0..7) {
        0 => Value::Int(rng.gen()),
        1 => Value::Int(rng.gen_range(-1000..1000)),
        2 => Value::Float(rng.gen_range(-1e6..1e6)),
        3 => Value::Float(*[0.5, -0.0, 1e300, 2.5e-8, 36.0].choose(rng).unwrap()),
        4 => Value::Bool(rng.gen()),
        _ => Value::Str(text(rng)),
    }
}

fn interval(rng: &mut impl Rng) -> IntervalLit {
    IntervalLit {
        start: text(rng),
        end: if rng.gen_bool(0.2) { Bound::Now } else { Bound::Timestamp(text(rng)) },
    }
}

fn props(rng: &mut impl Rng) -> Vec<(String, Value)> {
    (0..rng.gen_range(0..3)).map(|_| (name(rng), value(rng))).collect()
}

fn labels(rng: &mut impl Rng) -> Vec<String> {
    (0..rng.gen_range(0..3)).map(|_| name(rng)).collect()
}

fn maybe_var(rng: &mut impl Rng, taken: &[String]) -> Option<String> {
    let v = name(rng);
    (rng.gen_bool(0.7) && !taken.contains(&v)).then_some(v)
}

pub fn expr(rng: &mut impl Rng, vars: &[String], depth: u32) -> Expr {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    let pick = if leaf { rng.gen_range(0..5) } else { rng.gen_range(0..11) };
    match pick {
        0 => Expr::Literal(value(rng)),
        1 => Expr::Null,
        2 if !vars.is_empty() => Expr::Var(vars.choose(rng).unwrap().clone()),
        3 if !vars.is_empty() => Expr::Prop {
            var: vars.choose(rng).unwrap().clone(),
            key: name(rng),
        },
        2..=4 => Expr::Interval(interval(rng)),
        5 => Expr::Tis(
            (0..rng.gen_range(1..4))
                .map(|_| Segment {
                    interval: interval(rng),
                    value: value(rng),
                })
                .collect(),
        ),
        6 => Expr::Call {
            name: FUNCS.choose(rng).unwrap().to_string(),
            args: (0..rng.gen_range(0..5)).map(|_| expr(rng, vars, depth - 1)).collect(),
        },
        7 => Expr::Not(Box::new(expr(rng, vars, depth - 1))),
        8 => Expr::And(Box::new(expr(rng, vars, depth - 1)), Box::new(expr(rng, vars, depth - 1))),
        9 => Expr::Or(Box::new(expr(rng, vars, depth - 1)), Box::new(expr(rng, vars, depth - 1))),
        _ => {
            let op = *[CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge]
                .choose(rng)
                .unwrap();
            Expr::Cmp(op, Box::new(expr(rng, vars, depth - 1)), Box::new(expr(rng, vars, depth - 1)))
        }
    }
}

pub fn query(rng: &mut impl Rng) -> Query {
    let a = NodePattern {
        var: maybe_var(rng, &[]),
        labels: labels(rng),
        props: props(rng),
    };
    let pattern = if rng.gen_bool(0.3) {
        Pattern::Node(a)
    } else {
        let taken: Vec<String> = a.var.iter().cloned().collect();
        let z = NodePattern {
            // Reusing the first node's variable is allowed.
            var: if rng.gen_bool(0.1) { a.var.clone() } else { maybe_var(rng, &[]) },
            labels: labels(rng),
            props: props(rng),
        };
        let mut taken = taken;
        taken.extend(z.var.iter().cloned());
        let e = EdgePattern {
            var: maybe_var(rng, &taken),
            labels: labels(rng),
            props: props(rng),
            direction: *[EdgeDirection::Out, EdgeDirection::In, EdgeDirection::Either]
                .choose(rng)
                .unwrap(),
        };
        Pattern::Path(a, e, z)
    };
    let vars: Vec<String> = pattern.variables().into_iter().map(str::to_owned).collect();
    let filter = rng.gen_bool(0.5).then(|| expr(rng, &vars, 3));
    let set = if vars.is_empty() {
        Vec::new()
    } else {
        (0..rng.gen_range(0..3))
            .map(|_| Assignment {
                var: vars.choose(rng).unwrap().clone(),
                key: name(rng),
                value: expr(rng, &vars, 2),
            })
            .collect()
    };
    let n_ret = if set.is_empty() { rng.gen_range(1..4) } else { rng.gen_range(0..3) };
    let ret = (0..n_ret)
        .map(|_| Projection {
            expr: expr(rng, &vars, 3),
            alias: rng.gen_bool(0.3).then(|| name(rng)),
        })
        .collect();
    Query {
        pattern,
        filter,
        set,
        ret,
    }
}
