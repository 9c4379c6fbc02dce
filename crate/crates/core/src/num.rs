//! Scalar abstraction for scores and metrics.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type used for every score, probability and metric: `f32` or `f64`.
pub trait Score:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; panics only if the value is unrepresentable, which cannot
    /// happen for `f32`/`f64`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Score type")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Score type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Score converts to f64")
    }
}

impl Score for f32 {}
impl Score for f64 {}

/// Total order over scores; NaN sorts below every number so it never wins a ranking.
pub fn cmp_scores<S: Score>(a: S, b: S) -> std::cmp::Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => std::cmp::Ordering::Equal,
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        _ => a.partial_cmp(&b).expect("non-NaN scores compare"),
    }
}
