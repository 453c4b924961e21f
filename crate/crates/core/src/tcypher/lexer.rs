use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keyword {
    Match,
    Where,
    Set,
    Return,
    And,
    Or,
    Not,
    As,
    True,
    False,
    Null,
    Now,
}

impl Keyword {
    fn lookup(word: &str) -> Option<Keyword> {
        let k = match word.to_ascii_uppercase().as_str() {
            "MATCH" => Keyword::Match,
            "WHERE" => Keyword::Where,
            "SET" => Keyword::Set,
            "RETURN" => Keyword::Return,
            "AND" => Keyword::And,
            "OR" => Keyword::Or,
            "NOT" => Keyword::Not,
            "AS" => Keyword::As,
            "TRUE" => Keyword::True,
            "FALSE" => Keyword::False,
            "NULL" => Keyword::Null,
            "NOW" => Keyword::Now,
            _ => return None,
        };
        Some(k)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Match => "MATCH",
            Keyword::Where => "WHERE",
            Keyword::Set => "SET",
            Keyword::Return => "RETURN",
            Keyword::And => "AND",
            Keyword::Or => "OR",
            Keyword::Not => "NOT",
            Keyword::As => "AS",
            Keyword::True => "TRUE",
            Keyword::False => "FALSE",
            Keyword::Null => "NULL",
            Keyword::Now => "NOW",
        }
    }

    pub fn is_keyword(word: &str) -> bool {
        Keyword::lookup(word).is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symbol {
    LParen,
    RParen,
    LBrace,
    RBrace,
    Colon,
    Comma,
    Dot,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    /// `-[`
    EdgeOpen,
    /// `<-[`
    EdgeOpenIn,
    /// `]->`
    EdgeCloseOut,
    /// `]-`
    EdgeClose,
}

impl Symbol {
    pub fn as_str(self) -> &'static str {
        match self {
            Symbol::LParen => "(",
            Symbol::RParen => ")",
            Symbol::LBrace => "{",
            Symbol::RBrace => "}",
            Symbol::Colon => ":",
            Symbol::Comma => ",",
            Symbol::Dot => ".",
            Symbol::Eq => "=",
            Symbol::Ne => "<>",
            Symbol::Lt => "<",
            Symbol::Le => "<=",
            Symbol::Gt => ">",
            Symbol::Ge => ">=",
            Symbol::EdgeOpen => "-[",
            Symbol::EdgeOpenIn => "<-[",
            Symbol::EdgeCloseOut => "]->",
            Symbol::EdgeClose => "]-",
        }
    }
}

// Longest match first.
const SYMBOLS: &[Symbol] = &[
    Symbol::EdgeOpenIn,
    Symbol::EdgeCloseOut,
    Symbol::EdgeOpen,
    Symbol::EdgeClose,
    Symbol::Ne,
    Symbol::Le,
    Symbol::Ge,
    Symbol::Lt,
    Symbol::Gt,
    Symbol::LParen,
    Symbol::RParen,
    Symbol::LBrace,
    Symbol::RBrace,
    Symbol::Colon,
    Symbol::Comma,
    Symbol::Dot,
    Symbol::Eq,
];

#[derive(Clone, Debug, PartialEq)]
pub enum TokenKind {
    Keyword(Keyword),
    Ident(String),
    Str(String),
    Int(i64),
    Float(f64),
    Symbol(Symbol),
    Tilde,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Keyword(k) => f.write_str(k.as_str()),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Str(s) => write!(f, "string {s:?}"),
            TokenKind::Int(i) => write!(f, "number {i}"),
            TokenKind::Float(x) => write!(f, "number {x:?}"),
            TokenKind::Symbol(s) => write!(f, "`{}`", s.as_str()),
            TokenKind::Tilde => f.write_str("`~`"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte range in the source.
    pub span: (usize, usize),
}

fn lex_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Lex {
        offset,
        message: message.into(),
    }
}

/// Splits `src` into tokens; whitespace separates tokens and is dropped.
pub fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let rest = &src[i..];
        if c == b'"' || c == b'\'' {
            let (s, len) = lex_string(rest).ok_or_else(|| lex_error(start, "unterminated string"))?;
            i += len;
            out.push(Token { kind: TokenKind::Str(s), span: (start, i) });
            continue;
        }
        let negative_number = c == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        if c.is_ascii_digit() || negative_number {
            let (kind, len) = lex_number(rest).map_err(|m| lex_error(start, m))?;
            i += len;
            out.push(Token { kind, span: (start, i) });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let len = rest
                .bytes()
                .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                .count();
            let word = &rest[..len];
            i += len;
            let kind = match Keyword::lookup(word) {
                Some(k) => TokenKind::Keyword(k),
                None => TokenKind::Ident(word.to_owned()),
            };
            out.push(Token { kind, span: (start, i) });
            continue;
        }
        if c == b'~' {
            i += 1;
            out.push(Token { kind: TokenKind::Tilde, span: (start, i) });
            continue;
        }
        for s in SYMBOLS {
            if rest.starts_with(s.as_str()) {
                i += s.as_str().len();
                out.push(Token { kind: TokenKind::Symbol(*s), span: (start, i) });
                continue 'outer;
            }
        }
        let ch = rest.chars().next().unwrap();
        return Err(lex_error(start, format!("unexpected character {ch:?}")));
    }
    Ok(out)
}

/// Returns the unescaped contents and the byte length including quotes.
fn lex_string(rest: &str) -> Option<(String, usize)> {
    let quote = rest.chars().next()?;
    let mut out = String::new();
    let mut chars = rest.char_indices().skip(1);
    while let Some((at, ch)) = chars.next() {
        match ch {
            '\\' => {
                let (_, esc) = chars.next()?;
                out.push(match esc {
                    'n' => '\n',
                    't' => '\t',
                    other => other,
                });
            }
            c if c == quote => return Some((out, at + 1)),
            c => out.push(c),
        }
    }
    None
}

fn lex_number(rest: &str) -> std::result::Result<(TokenKind, usize), String> {
    let b = rest.as_bytes();
    let mut n = usize::from(b[0] == b'-');
    let digits = |n: &mut usize| {
        while b.get(*n).is_some_and(u8::is_ascii_digit) {
            *n += 1;
        }
    };
    digits(&mut n);
    let mut float = false;
    if b.get(n) == Some(&b'.') && b.get(n + 1).is_some_and(u8::is_ascii_digit) {
        float = true;
        n += 1;
        digits(&mut n);
    }
    if matches!(b.get(n), Some(b'e' | b'E')) {
        let mut m = n + 1;
        if matches!(b.get(m), Some(b'+' | b'-')) {
            m += 1;
        }
        if b.get(m).is_some_and(u8::is_ascii_digit) {
            float = true;
            n = m;
            digits(&mut n);
        }
    }
    let text = &rest[..n];
    let kind = if float {
        TokenKind::Float(text.parse().map_err(|e| format!("bad number {text}: {e}"))?)
    } else {
        TokenKind::Int(text.parse().map_err(|e| format!("bad number {text}: {e}"))?)
    };
    Ok((kind, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn edge_pattern_is_twelve_tokens() {
        let toks = tokenize("MATCH ()-[road]->() RETURN road.name").unwrap();
        assert_eq!(toks.len(), 12);
        assert_eq!(toks[3].kind, TokenKind::Symbol(Symbol::EdgeOpen));
        assert_eq!(toks[5].kind, TokenKind::Symbol(Symbol::EdgeCloseOut));
    }

    #[test]
    fn interval_is_string_tilde_string() {
        assert_eq!(
            kinds(r#""2010-05-01 08:00"~"2010-05-01 08:10""#),
            vec![
                TokenKind::Str("2010-05-01 08:00".into()),
                TokenKind::Tilde,
                TokenKind::Str("2010-05-01 08:10".into()),
            ]
        );
        assert_eq!(kinds("'a'"), vec![TokenKind::Str("a".into())]);
    }

    #[test]
    fn unterminated_string_reports_offset() {
        match tokenize("RETURN \"abc") {
            Err(Error::Lex { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(tokenize("RETURN #"), Err(Error::Lex { offset: 7, .. })));
    }

    #[test]
    fn numbers_and_keywords() {
        assert_eq!(
            kinds("match x -3 1.5 2e3 <> <= where"),
            vec![
                TokenKind::Keyword(Keyword::Match),
                TokenKind::Ident("x".into()),
                TokenKind::Int(-3),
                TokenKind::Float(1.5),
                TokenKind::Float(2000.0),
                TokenKind::Symbol(Symbol::Ne),
                TokenKind::Symbol(Symbol::Le),
                TokenKind::Keyword(Keyword::Where),
            ]
        );
    }

    #[test]
    fn spans_relex_to_the_same_token() {
        let src = r#"MATCH (a:Stop {id: 'x\'y'})<-[r]-(b) WHERE a.v >= -2.5 RETURN r"#;
        for t in tokenize(src).unwrap() {
            let again = tokenize(&src[t.span.0..t.span.1]).unwrap();
            assert_eq!(again.len(), 1);
            assert_eq!(again[0].kind, t.kind);
        }
    }
}
