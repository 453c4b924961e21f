pub mod oracle;
pub mod query_gen;
pub mod traffic;
