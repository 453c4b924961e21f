//! Time algebra and value types shared by every layer of the kernel.

mod chronon;
mod interval;
mod tis;
mod value;

pub use chronon::{Chronon, ChrononScale};
pub use interval::TimeInterval;
pub use tis::TimeIntervalSeries;
pub use value::{Value, ValueType};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("invalid interval [{start}, {end}): start must precede end")]
    InvalidInterval { start: Chronon, end: Chronon },
    #[error("intervals are not continuous: gap at {at}")]
    Gap { at: Chronon },
    #[error("entries overlap: {first} and {second}")]
    Overlap {
        first: TimeInterval,
        second: TimeInterval,
    },
    #[error("chronon arithmetic overflow")]
    Overflow,
    #[error("interval ending at NOW has no finite duration")]
    InfiniteDuration,
    #[error("NOW is an open endpoint, not an instant")]
    NowIsNotAnInstant,
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch {
        expected: ValueType,
        found: ValueType,
    },
    #[error("chronon scale must be positive")]
    ZeroScale,
    #[error("conversion between chronon scales is not integral")]
    NonIntegralConversion,
    #[error("empty input")]
    EmptyInput,
}
