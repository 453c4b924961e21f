use crate::error::{Error, Result};
use crate::model::Value;

use super::ast::*;
use super::lexer::{tokenize, Keyword, Symbol, Token, TokenKind};

/// Parses one query from source text.
pub fn parse_query(src: &str) -> Result<Query> {
    parse(&tokenize(src)?, src.len())
}

/// Parses a token stream; `end` is the source length, used to report errors
/// at the end of input.
pub fn parse(tokens: &[Token], end: usize) -> Result<Query> {
    let mut p = Parser {
        tokens,
        pos: 0,
        end,
        uses: Vec::new(),
    };
    let q = p.query()?;
    check_bindings(&q, &p.uses)?;
    Ok(q)
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    end: usize,
    uses: Vec<(String, usize)>,
}

fn error(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn check_bindings(q: &Query, uses: &[(String, usize)]) -> Result<()> {
    let mut bound: Vec<&str> = Vec::new();
    let mut edge_var = None;
    if let Pattern::Path(_, e, _) = &q.pattern {
        edge_var = e.var.as_deref();
    }
    for v in q.pattern.variables() {
        if bound.contains(&v) && Some(v) == edge_var {
            return Err(error(0, format!("variable `{v}` names both a node and an edge")));
        }
        bound.push(v);
    }
    for (name, at) in uses {
        if !bound.contains(&name.as_str()) {
            return Err(error(*at, format!("variable `{name}` is not bound in MATCH")));
        }
    }
    Ok(())
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn peek_at(&self, k: usize) -> Option<&'t TokenKind> {
        self.tokens.get(self.pos + k).map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.span.0)
    }

    fn unexpected<T>(&self, expected: &str) -> Result<T> {
        let found = match self.peek() {
            Some(k) => k.to_string(),
            None => "end of input".to_owned(),
        };
        Err(error(self.offset(), format!("expected {expected}, found {found}")))
    }

    fn eat_symbol(&mut self, s: Symbol) -> bool {
        if self.peek() == Some(&TokenKind::Symbol(s)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_keyword(&mut self, k: Keyword) -> bool {
        if self.peek() == Some(&TokenKind::Keyword(k)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn symbol(&mut self, s: Symbol) -> Result<()> {
        if self.eat_symbol(s) {
            Ok(())
        } else {
            self.unexpected(&format!("`{}`", s.as_str()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(TokenKind::Ident(s)) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => self.unexpected(what),
        }
    }

    fn string(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(TokenKind::Str(s)) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => self.unexpected(what),
        }
    }

    fn query(&mut self) -> Result<Query> {
        if !self.eat_keyword(Keyword::Match) {
            return self.unexpected("MATCH");
        }
        let pattern = self.pattern()?;
        let filter = if self.eat_keyword(Keyword::Where) {
            Some(self.expr()?)
        } else {
            None
        };
        let mut set = Vec::new();
        if self.eat_keyword(Keyword::Set) {
            loop {
                set.push(self.assignment()?);
                if !self.eat_symbol(Symbol::Comma) {
                    break;
                }
            }
        }
        let mut ret = Vec::new();
        if self.eat_keyword(Keyword::Return) {
            loop {
                let expr = self.expr()?;
                let alias = if self.eat_keyword(Keyword::As) {
                    Some(self.ident("an alias")?)
                } else {
                    None
                };
                ret.push(Projection { expr, alias });
                if !self.eat_symbol(Symbol::Comma) {
                    break;
                }
            }
        }
        if set.is_empty() && ret.is_empty() {
            return self.unexpected("WHERE, SET or RETURN");
        }
        if self.pos < self.tokens.len() {
            return self.unexpected("end of query");
        }
        Ok(Query {
            pattern,
            filter,
            set,
            ret,
        })
    }

    fn pattern(&mut self) -> Result<Pattern> {
        let a = self.node()?;
        let open_in = match self.peek() {
            Some(TokenKind::Symbol(Symbol::EdgeOpen)) => false,
            Some(TokenKind::Symbol(Symbol::EdgeOpenIn)) => true,
            _ => return Ok(Pattern::Node(a)),
        };
        self.pos += 1;
        let (var, labels, props) = self.head()?;
        let direction = match (open_in, self.peek()) {
            (false, Some(TokenKind::Symbol(Symbol::EdgeCloseOut))) => EdgeDirection::Out,
            (false, Some(TokenKind::Symbol(Symbol::EdgeClose))) => EdgeDirection::Either,
            (true, Some(TokenKind::Symbol(Symbol::EdgeClose))) => EdgeDirection::In,
            (true, _) => return self.unexpected("`]-`"),
            (false, _) => return self.unexpected("`]->` or `]-`"),
        };
        self.pos += 1;
        let b = self.node()?;
        Ok(Pattern::Path(
            a,
            EdgePattern {
                var,
                labels,
                props,
                direction,
            },
            b,
        ))
    }

    fn node(&mut self) -> Result<NodePattern> {
        self.symbol(Symbol::LParen)?;
        let (var, labels, props) = self.head()?;
        self.symbol(Symbol::RParen)?;
        Ok(NodePattern { var, labels, props })
    }

    /// `[var] {:label} [{k: v, ..}]`
    #[allow(clippy::type_complexity)]
    fn head(&mut self) -> Result<(Option<String>, Vec<String>, Vec<(String, Value)>)> {
        let var = match self.peek() {
            Some(TokenKind::Ident(s)) => {
                self.pos += 1;
                Some(s.clone())
            }
            _ => None,
        };
        let mut labels = Vec::new();
        while self.eat_symbol(Symbol::Colon) {
            labels.push(self.ident("a label")?);
        }
        let mut props = Vec::new();
        if self.eat_symbol(Symbol::LBrace) {
            loop {
                let k = self.ident("a property name")?;
                self.symbol(Symbol::Colon)?;
                props.push((k, self.literal()?));
                if !self.eat_symbol(Symbol::Comma) {
                    break;
                }
            }
            self.symbol(Symbol::RBrace)?;
        }
        Ok((var, labels, props))
    }

    fn literal(&mut self) -> Result<Value> {
        let v = match self.peek() {
            Some(TokenKind::Int(i)) => Value::Int(*i),
            Some(TokenKind::Float(x)) => Value::Float(*x),
            Some(TokenKind::Str(s)) => Value::Str(s.clone()),
            Some(TokenKind::Keyword(Keyword::True)) => Value::Bool(true),
            Some(TokenKind::Keyword(Keyword::False)) => Value::Bool(false),
            _ => return self.unexpected("a literal"),
        };
        self.pos += 1;
        Ok(v)
    }

    fn assignment(&mut self) -> Result<Assignment> {
        let at = self.offset();
        let var = self.ident("a variable")?;
        self.uses.push((var.clone(), at));
        self.symbol(Symbol::Dot)?;
        let key = self.ident("a property name")?;
        self.symbol(Symbol::Eq)?;
        let value = self.expr()?;
        Ok(Assignment { var, key, value })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.and()?;
        while self.eat_keyword(Keyword::Or) {
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr> {
        let mut lhs = self.not()?;
        while self.eat_keyword(Keyword::And) {
            lhs = Expr::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr> {
        if self.eat_keyword(Keyword::Not) {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr> {
        let lhs = self.primary()?;
        let op = match self.peek() {
            Some(TokenKind::Symbol(Symbol::Eq)) => CmpOp::Eq,
            Some(TokenKind::Symbol(Symbol::Ne)) => CmpOp::Ne,
            Some(TokenKind::Symbol(Symbol::Lt)) => CmpOp::Lt,
            Some(TokenKind::Symbol(Symbol::Le)) => CmpOp::Le,
            Some(TokenKind::Symbol(Symbol::Gt)) => CmpOp::Gt,
            Some(TokenKind::Symbol(Symbol::Ge)) => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.primary()?;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn interval_after_start(&mut self, start: String) -> Result<IntervalLit> {
        if self.peek() != Some(&TokenKind::Tilde) {
            return self.unexpected("`~`");
        }
        self.pos += 1;
        let end = if self.eat_keyword(Keyword::Now) {
            Bound::Now
        } else {
            Bound::Timestamp(self.string("a timestamp or NOW")?)
        };
        Ok(IntervalLit { start, end })
    }

    fn primary(&mut self) -> Result<Expr> {
        let at = self.offset();
        match self.peek() {
            Some(TokenKind::Symbol(Symbol::LParen)) => {
                self.pos += 1;
                let e = self.expr()?;
                self.symbol(Symbol::RParen)?;
                Ok(e)
            }
            Some(TokenKind::Keyword(Keyword::Null)) => {
                self.pos += 1;
                Ok(Expr::Null)
            }
            Some(TokenKind::Str(s)) if self.peek_at(1) == Some(&TokenKind::Tilde) => {
                self.pos += 1;
                Ok(Expr::Interval(self.interval_after_start(s.clone())?))
            }
            Some(TokenKind::Ident(name)) => {
                self.pos += 1;
                if self.eat_symbol(Symbol::LParen) {
                    let upper = name.to_ascii_uppercase();
                    if upper == "TIS" {
                        return self.tis_body();
                    }
                    let mut args = Vec::new();
                    if !self.eat_symbol(Symbol::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_symbol(Symbol::Comma) {
                                break;
                            }
                        }
                        self.symbol(Symbol::RParen)?;
                    }
                    return Ok(Expr::Call { name: upper, args });
                }
                self.uses.push((name.clone(), at));
                if self.eat_symbol(Symbol::Dot) {
                    let key = self.ident("a property name")?;
                    Ok(Expr::Prop { var: name.clone(), key })
                } else {
                    Ok(Expr::Var(name.clone()))
                }
            }
            _ => match self.literal() {
                Ok(v) => Ok(Expr::Literal(v)),
                Err(_) => self.unexpected("an expression"),
            },
        }
    }

    fn tis_body(&mut self) -> Result<Expr> {
        let mut segs = Vec::new();
        loop {
            let start = self.string("a timestamp")?;
            let interval = self.interval_after_start(start)?;
            self.symbol(Symbol::Colon)?;
            let value = self.literal()?;
            segs.push(Segment { interval, value });
            if !self.eat_symbol(Symbol::Comma) {
                break;
            }
        }
        self.symbol(Symbol::RParen)?;
        Ok(Expr::Tis(segs))
    }
}
