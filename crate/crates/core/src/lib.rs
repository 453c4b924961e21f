//! Embeddable temporal property graph kernel.

pub mod codec;
pub mod db;
pub mod error;
pub mod graph;
pub mod io;
pub mod model;
pub mod query;
pub mod schema;
pub mod tcypher;
pub mod timtree;
pub mod txn;

pub use db::{Database, DbConfig};
pub use error::{Error, Result};
