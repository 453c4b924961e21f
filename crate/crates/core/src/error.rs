use thiserror::Error;

use crate::codec::DecodeError;
use crate::graph::EntityId;
use crate::model::{TimeError, ValueType};
use crate::txn::{TxnId, TxnState};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("injected crash: storage is no longer writable")]
    Crashed,
    #[error("corrupt {what}: {detail}")]
    Corrupt { what: &'static str, detail: String },
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("unknown edge {0}")]
    UnknownEdge(u64),
    #[error("unknown temporal property `{0}`")]
    UnknownProperty(String),
    #[error("temporal property `{0}` already exists")]
    DuplicateProperty(String),
    #[error("`{name}` on {entity} is a {existing} property")]
    NamespaceClash {
        entity: EntityId,
        name: String,
        existing: &'static str,
    },
    #[error("temporal property `{property}` holds {expected} values, got {found}")]
    TypeMismatch {
        property: String,
        expected: ValueType,
        found: ValueType,
    },
    #[error("{0}")]
    Type(String),
    #[error("append out of order: {0}")]
    AppendOrder(String),
    #[error("transaction {0} chosen as deadlock victim")]
    Deadlock(TxnId),
    #[error("transaction {txn} is {state:?}")]
    TxnState { txn: TxnId, state: TxnState },
    #[error("commit of transaction {txn} failed: {source}")]
    CommitIo {
        txn: TxnId,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("lexical error at offset {offset}: {message}")]
    Lex { offset: usize, message: String },
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("`{0}` is already registered")]
    DuplicateName(String),
}

impl Error {
    pub(crate) fn corrupt(what: &'static str, detail: impl ToString) -> Error {
        Error::Corrupt {
            what,
            detail: detail.to_string(),
        }
    }

    pub fn is_deadlock(&self) -> bool {
        matches!(self, Error::Deadlock(_))
    }
}

impl From<DecodeError> for Error {
    fn from(e: DecodeError) -> Self {
        Error::corrupt("record", e)
    }
}
