//! Query syntax tree. `Display` prints the canonical form, which parses back
//! to an equal tree.

use std::fmt::{self, Write};

use crate::model::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub pattern: Pattern,
    pub filter: Option<Expr>,
    pub set: Vec<Assignment>,
    pub ret: Vec<Projection>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pattern {
    Node(NodePattern),
    Path(NodePattern, EdgePattern, NodePattern),
}

impl Pattern {
    /// Variables bound by the pattern, nodes first.
    pub fn variables(&self) -> Vec<&str> {
        let slots: Vec<&Option<String>> = match self {
            Pattern::Node(n) => vec![&n.var],
            Pattern::Path(a, e, b) => vec![&a.var, &b.var, &e.var],
        };
        slots.into_iter().flatten().map(String::as_str).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodePattern {
    pub var: Option<String>,
    pub labels: Vec<String>,
    pub props: Vec<(String, Value)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeDirection {
    /// `-[..]->`
    Out,
    /// `<-[..]-`
    In,
    /// `-[..]-`
    Either,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgePattern {
    pub var: Option<String>,
    pub labels: Vec<String>,
    pub props: Vec<(String, Value)>,
    pub direction: EdgeDirection,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Bound {
    Timestamp(String),
    Now,
}

/// `start ~ end`, with wall-clock timestamps resolved against a property.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalLit {
    pub start: String,
    pub end: Bound,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub interval: IntervalLit,
    pub value: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Literal(Value),
    Null,
    Var(String),
    Prop { var: String, key: String },
    Interval(IntervalLit),
    Tis(Vec<Segment>),
    /// Function names are stored upper-case.
    Call { name: String, args: Vec<Expr> },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub var: String,
    pub key: String,
    pub value: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub expr: Expr,
    pub alias: Option<String>,
}

pub(crate) fn write_string(f: &mut impl Write, s: &str) -> fmt::Result {
    f.write_char('"')?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => f.write_char(c)?,
        }
    }
    f.write_char('"')
}

pub(crate) fn write_value(f: &mut impl Write, v: &Value) -> fmt::Result {
    match v {
        Value::Int(i) => write!(f, "{i}"),
        Value::Float(x) => write!(f, "{x:?}"),
        Value::Bool(true) => f.write_str("TRUE"),
        Value::Bool(false) => f.write_str("FALSE"),
        Value::Str(s) => write_string(f, s),
    }
}

fn write_props(f: &mut fmt::Formatter<'_>, props: &[(String, Value)]) -> fmt::Result {
    if props.is_empty() {
        return Ok(());
    }
    f.write_str(" {")?;
    for (i, (k, v)) in props.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{k}: ")?;
        write_value(f, v)?;
    }
    f.write_char('}')
}

fn write_head(f: &mut fmt::Formatter<'_>, var: &Option<String>, labels: &[String]) -> fmt::Result {
    if let Some(v) = var {
        f.write_str(v)?;
    }
    for l in labels {
        write!(f, ":{l}")?;
    }
    Ok(())
}

impl fmt::Display for NodePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('(')?;
        write_head(f, &self.var, &self.labels)?;
        write_props(f, &self.props)?;
        f.write_char(')')
    }
}

impl fmt::Display for EdgePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.direction == EdgeDirection::In { "<-[" } else { "-[" })?;
        write_head(f, &self.var, &self.labels)?;
        write_props(f, &self.props)?;
        f.write_str(if self.direction == EdgeDirection::Out { "]->" } else { "]-" })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Node(n) => write!(f, "{n}"),
            Pattern::Path(a, e, b) => write!(f, "{a}{e}{b}"),
        }
    }
}

impl fmt::Display for IntervalLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_string(f, &self.start)?;
        f.write_char('~')?;
        match &self.end {
            Bound::Timestamp(s) => write_string(f, s),
            Bound::Now => f.write_str("NOW"),
        }
    }
}

// Binding strength, loosest first.
fn level(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 0,
        Expr::And(..) => 1,
        Expr::Not(_) => 2,
        Expr::Cmp(..) => 3,
        _ => 4,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if level(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write_value(f, v),
            Expr::Null => f.write_str("NULL"),
            Expr::Var(v) => f.write_str(v),
            Expr::Prop { var, key } => write!(f, "{var}.{key}"),
            Expr::Interval(iv) => write!(f, "{iv}"),
            Expr::Tis(segs) => {
                f.write_str("TIS(")?;
                for (i, s) in segs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}: ", s.interval)?;
                    write_value(f, &s.value)?;
                }
                f.write_char(')')
            }
            Expr::Call { name, args } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_char(')')
            }
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                write_at(f, e, 2)
            }
            Expr::And(a, b) => {
                write_at(f, a, 1)?;
                f.write_str(" AND ")?;
                write_at(f, b, 2)
            }
            Expr::Or(a, b) => {
                write_at(f, a, 0)?;
                f.write_str(" OR ")?;
                write_at(f, b, 1)
            }
            Expr::Cmp(op, a, b) => {
                write_at(f, a, 4)?;
                write!(f, " {} ", op.as_str())?;
                write_at(f, b, 4)
            }
        }
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        if let Some(a) = &self.alias {
            write!(f, " AS {a}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MATCH {}", self.pattern)?;
        if let Some(w) = &self.filter {
            write!(f, " WHERE {w}")?;
        }
        for (i, a) in self.set.iter().enumerate() {
            f.write_str(if i == 0 { " SET " } else { ", " })?;
            write!(f, "{}.{} = {}", a.var, a.key, a.value)?;
        }
        for (i, p) in self.ret.iter().enumerate() {
            f.write_str(if i == 0 { " RETURN " } else { ", " })?;
            write!(f, "{p}")?;
        }
        Ok(())
    }
}
