use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::model::{Chronon, TimeInterval, TimeIntervalSeries, Value};
use crate::query::{self, Aggregate, Fold, Quantifier};
use crate::schema::PropertyDef;
use crate::txn::Transaction;

use super::ast::*;
use super::parser::parse_query;

const BUILTINS: &[&str] = &["TIS", "TIS_AGGR_MAX", "TIS_AGGR_MIN", "TIS_AGGR_AVG", "TIS_WITHIN"];

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Null,
    Value(Value),
    Entity(EntityId),
    Series(TimeIntervalSeries),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("null"),
            Cell::Value(v) => write!(f, "{v}"),
            Cell::Entity(e) => write!(f, "{e}"),
            Cell::Series(s) => {
                f.write_char('[')?;
                for (i, (iv, v)) in s.entries().iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{iv}: {v}")?;
                }
                f.write_char(']')
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Bindings a SET clause was applied to.
    pub affected: usize,
}

/// Query interpreter holding the registered user-defined aggregates.
#[derive(Default)]
pub struct Engine {
    udfs: BTreeMap<String, Fold>,
}

type Binding = HashMap<String, EntityId>;

/// Parses a minute-resolution timestamp; seconds are accepted too.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map_err(|_| Error::Type(format!("`{s}` is not a YYYY-MM-DD HH:MM timestamp")))
}

fn resolve_interval(iv: &IntervalLit, def: &PropertyDef) -> Result<TimeInterval> {
    let start = def.chronon_of(parse_timestamp(&iv.start)?)?;
    let end = match &iv.end {
        Bound::Timestamp(s) => def.chronon_of(parse_timestamp(s)?)?,
        Bound::Now => Chronon::NOW,
    };
    Ok(TimeInterval::new(start, end)?)
}

fn truthy(c: &Cell) -> Result<bool> {
    match c {
        Cell::Value(Value::Bool(b)) => Ok(*b),
        Cell::Null => Ok(false),
        other => Err(Error::Type(format!("{other} is not a boolean"))),
    }
}

fn compare(op: CmpOp, a: &Cell, b: &Cell) -> Result<Cell> {
    let (Cell::Value(x), Cell::Value(y)) = (a, b) else {
        return match (a, b) {
            (Cell::Null, _) | (_, Cell::Null) => Ok(Cell::Null),
            (Cell::Entity(x), Cell::Entity(y)) if matches!(op, CmpOp::Eq | CmpOp::Ne) => {
                Ok(Cell::Value(Value::Bool((x == y) == (op == CmpOp::Eq))))
            }
            _ => Err(Error::Type(format!("cannot compare {a} with {b}"))),
        };
    };
    let ord = x.numeric_cmp(y).or_else(|| x.partial_cmp_same(y));
    let r = match (op, ord) {
        (CmpOp::Eq, o) => o == Some(Ordering::Equal),
        (CmpOp::Ne, o) => o != Some(Ordering::Equal),
        (_, None) => return Err(Error::Type(format!("cannot order {x} against {y}"))),
        (CmpOp::Lt, Some(o)) => o == Ordering::Less,
        (CmpOp::Le, Some(o)) => o != Ordering::Greater,
        (CmpOp::Gt, Some(o)) => o == Ordering::Greater,
        (CmpOp::Ge, Some(o)) => o != Ordering::Less,
    };
    Ok(Cell::Value(Value::Bool(r)))
}

impl Engine {
    pub fn new() -> Self {
        Engine::default()
    }

    /// Registers an aggregate callable as `NAME(entity.prop, interval)`.
    pub fn register_udf(&mut self, name: &str, fold: Fold) -> Result<()> {
        let upper = name.to_ascii_uppercase();
        if BUILTINS.contains(&upper.as_str()) || self.udfs.contains_key(&upper) {
            return Err(Error::DuplicateName(upper));
        }
        self.udfs.insert(upper, fold);
        Ok(())
    }

    /// Parses and executes `src` inside `txn`.
    pub fn run(&self, txn: &mut Transaction<'_>, src: &str) -> Result<ResultTable> {
        self.execute(&parse_query(src)?, txn)
    }

    pub fn execute(&self, q: &Query, txn: &mut Transaction<'_>) -> Result<ResultTable> {
        let mut bindings = Vec::new();
        for b in self.matches(&q.pattern, txn)? {
            let keep = match &q.filter {
                Some(w) => truthy(&self.eval(w, &b, txn)?)?,
                None => true,
            };
            if keep {
                bindings.push(b);
            }
        }
        let mut table = ResultTable {
            columns: q
                .ret
                .iter()
                .map(|p| p.alias.clone().unwrap_or_else(|| p.expr.to_string()))
                .collect(),
            ..Default::default()
        };
        if !q.set.is_empty() {
            for b in &bindings {
                for a in &q.set {
                    self.assign(a, b, txn)?;
                }
            }
            table.affected = bindings.len();
        }
        if !q.ret.is_empty() {
            for b in &bindings {
                let row = q.ret.iter().map(|p| self.eval(&p.expr, b, txn)).collect::<Result<_>>()?;
                table.rows.push(row);
            }
        }
        Ok(table)
    }

    fn assign(&self, a: &Assignment, b: &Binding, txn: &mut Transaction<'_>) -> Result<()> {
        let e = b[&a.var];
        match &a.value {
            Expr::Tis(segs) => {
                let def = txn.property(&a.key)?;
                for s in segs {
                    let iv = resolve_interval(&s.interval, &def)?;
                    query::q_update(txn, e, &a.key, iv, s.value.clone())?;
                }
                Ok(())
            }
            other => match self.eval(other, b, txn)? {
                Cell::Value(v) => txn.set_prop(e, &a.key, v),
                Cell::Null => txn.rm_prop(e, &a.key).map(|_| ()),
                c => Err(Error::Type(format!("cannot store {c} in `{}`", a.key))),
            },
        }
    }

    fn node_ok(&self, p: &NodePattern, vid: u64, txn: &Transaction<'_>) -> Result<bool> {
        let e = EntityId::Node(vid);
        if !p.labels.is_empty() {
            let have = txn.labels(e)?;
            if !p.labels.iter().all(|l| have.contains(l)) {
                return Ok(false);
            }
        }
        props_ok(&p.props, e, txn)
    }

    fn matches(&self, pattern: &Pattern, txn: &Transaction<'_>) -> Result<Vec<Binding>> {
        let mut out = Vec::new();
        match pattern {
            Pattern::Node(n) => {
                for vid in txn.get_nodes(&n.labels)? {
                    if props_ok(&n.props, EntityId::Node(vid), txn)? {
                        let mut b = Binding::new();
                        if let Some(v) = &n.var {
                            b.insert(v.clone(), EntityId::Node(vid));
                        }
                        out.push(b);
                    }
                }
            }
            Pattern::Path(a, r, z) => {
                for eid in txn.get_edges(&r.labels)? {
                    if !props_ok(&r.props, EntityId::Edge(eid), txn)? {
                        continue;
                    }
                    let (src, dst) = txn.endpoints(eid)?;
                    let orientations: Vec<(u64, u64)> = match r.direction {
                        EdgeDirection::Out => vec![(src, dst)],
                        EdgeDirection::In => vec![(dst, src)],
                        EdgeDirection::Either if src == dst => vec![(src, dst)],
                        EdgeDirection::Either => vec![(src, dst), (dst, src)],
                    };
                    for (l, rt) in orientations {
                        if a.var.is_some() && a.var == z.var && l != rt {
                            continue;
                        }
                        if !self.node_ok(a, l, txn)? || !self.node_ok(z, rt, txn)? {
                            continue;
                        }
                        let mut b = Binding::new();
                        if let Some(v) = &a.var {
                            b.insert(v.clone(), EntityId::Node(l));
                        }
                        if let Some(v) = &z.var {
                            b.insert(v.clone(), EntityId::Node(rt));
                        }
                        if let Some(v) = &r.var {
                            b.insert(v.clone(), EntityId::Edge(eid));
                        }
                        out.push(b);
                    }
                }
            }
        }
        Ok(out)
    }

    /// The entity and temporal property named by a `var.key` argument.
    fn temporal_arg(&self, e: &Expr, b: &Binding, txn: &Transaction<'_>) -> Result<(EntityId, PropertyDef)> {
        match e {
            Expr::Prop { var, key } => Ok((b[var], txn.property(key)?)),
            other => Err(Error::Type(format!("expected a temporal property, found {other}"))),
        }
    }

    fn interval_arg(&self, e: &Expr, def: &PropertyDef) -> Result<TimeInterval> {
        match e {
            Expr::Interval(iv) => resolve_interval(iv, def),
            other => Err(Error::Type(format!("expected an interval, found {other}"))),
        }
    }

    fn value_arg(&self, e: &Expr, b: &Binding, txn: &Transaction<'_>) -> Result<Value> {
        match self.eval(e, b, txn)? {
            Cell::Value(v) => Ok(v),
            other => Err(Error::Type(format!("expected a value, found {other}"))),
        }
    }

    fn call(&self, name: &str, args: &[Expr], b: &Binding, txn: &Transaction<'_>) -> Result<Cell> {
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Type(format!("{name} takes {n} arguments, got {}", args.len())))
            }
        };
        let agg = match name {
            "TIS_AGGR_MAX" => Aggregate::Max,
            "TIS_AGGR_MIN" => Aggregate::Min,
            "TIS_AGGR_AVG" => Aggregate::Avg,
            "TIS_WITHIN" => {
                arity(4)?;
                let (e, def) = self.temporal_arg(&args[0], b, txn)?;
                let iv = self.interval_arg(&args[1], &def)?;
                let lo = self.value_arg(&args[2], b, txn)?;
                let hi = self.value_arg(&args[3], b, txn)?;
                if !def.value_type.is_numeric() || lo.as_f64().is_none() || hi.as_f64().is_none() {
                    return Err(Error::Type(format!("TIS_WITHIN needs numbers, `{}` is {}", def.name, def.value_type)));
                }
                let s = txn.history(e, def.id, iv)?;
                let hit = query::within(&s, iv, &lo, &hi, Quantifier::Exists);
                return Ok(Cell::Value(Value::Bool(hit)));
            }
            udf => match self.udfs.get(udf) {
                Some(f) => Aggregate::Custom(f.clone()),
                None => return Err(Error::Type(format!("unknown function {udf}"))),
            },
        };
        arity(2)?;
        let (e, def) = self.temporal_arg(&args[0], b, txn)?;
        let iv = self.interval_arg(&args[1], &def)?;
        let s = txn.history(e, def.id, iv)?;
        Ok(match query::aggregate(s.entries(), &agg, def.value_type)? {
            Some(v) => Cell::Value(v),
            None => Cell::Null,
        })
    }

    fn eval(&self, e: &Expr, b: &Binding, txn: &Transaction<'_>) -> Result<Cell> {
        Ok(match e {
            Expr::Literal(v) => Cell::Value(v.clone()),
            Expr::Null => Cell::Null,
            Expr::Var(v) => Cell::Entity(b[v]),
            Expr::Prop { var, key } => {
                let ent = b[var];
                if let Some(v) = txn.get_prop(ent, key)? {
                    Cell::Value(v)
                } else if txn.temporal_props(ent)?.iter().any(|(n, _)| n == key) {
                    Cell::Series(txn.get_tp(ent, key, TimeInterval::ALL)?)
                } else {
                    Cell::Null
                }
            }
            Expr::Interval(_) | Expr::Tis(_) => {
                return Err(Error::Type(format!("{e} only has meaning next to a temporal property")))
            }
            Expr::Call { name, args } => self.call(name, args, b, txn)?,
            Expr::Not(x) => Cell::Value(Value::Bool(!truthy(&self.eval(x, b, txn)?)?)),
            Expr::And(x, y) => {
                let r = truthy(&self.eval(x, b, txn)?)? && truthy(&self.eval(y, b, txn)?)?;
                Cell::Value(Value::Bool(r))
            }
            Expr::Or(x, y) => {
                let r = truthy(&self.eval(x, b, txn)?)? || truthy(&self.eval(y, b, txn)?)?;
                Cell::Value(Value::Bool(r))
            }
            Expr::Cmp(op, x, y) => compare(*op, &self.eval(x, b, txn)?, &self.eval(y, b, txn)?)?,
        })
    }
}

fn props_ok(props: &[(String, Value)], e: EntityId, txn: &Transaction<'_>) -> Result<bool> {
    for (k, want) in props {
        match txn.get_prop(e, k)? {
            Some(v) if compare(CmpOp::Eq, &Cell::Value(v.clone()), &Cell::Value(want.clone()))? == Cell::Value(Value::Bool(true)) => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}
