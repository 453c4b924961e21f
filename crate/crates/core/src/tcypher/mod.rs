//! A small Cypher dialect with interval series literals and temporal
//! aggregate functions. The grammar is in `docs/tcypher.md`.

pub mod ast;
mod exec;
pub mod lexer;
mod parser;

pub use exec::{parse_timestamp, Cell, Engine, ResultTable};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::{parse, parse_query};
