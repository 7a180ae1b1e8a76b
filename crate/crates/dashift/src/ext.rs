//! Extended reals.
//!
//! Risks and KL integrals on finite instances are either finite or exactly
//! +inf (a predictor puts probability zero on a label that carries mass).
//! Arithmetic here keeps that distinction explicit: `inf - inf` is a hard
//! error, never a NaN, and a zero-mass weight annihilates an infinite value
//! so that integrals over null sets vanish.
//!
//! `NegInf` never arises from a risk or a divergence; it only appears as the
//! value of a difference of risks, which gap computations take suprema over.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtError {
    /// inf - inf (or equivalently inf + (-inf)) has no value.
    #[error("indeterminate infinity: {0}")]
    Indeterminate(&'static str),
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    /// Wraps a finite value. NaN is a programming error upstream.
    pub fn finite(x: f64) -> ExtReal {
        debug_assert!(!x.is_nan(), "NaN is not a member of the extended reals");
        ExtReal::Finite(x)
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn as_f64(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            _ => None,
        }
    }

    pub fn checked_add(self, other: ExtReal) -> Result<ExtReal, ExtError> {
        use ExtReal::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Ok(ExtReal::finite(a + b)),
            (PosInf, NegInf) | (NegInf, PosInf) => {
                Err(ExtError::Indeterminate("inf + -inf"))
            }
            (PosInf, _) | (_, PosInf) => Ok(PosInf),
            (NegInf, _) | (_, NegInf) => Ok(NegInf),
        }
    }

    pub fn checked_sub(self, other: ExtReal) -> Result<ExtReal, ExtError> {
        self.checked_add(-other)
    }

    /// Integrand weighting: `w * self` with the measure-theoretic convention
    /// that a weight of exactly zero kills an infinity.
    pub fn weighted(self, w: f64) -> ExtReal {
        debug_assert!(w >= 0.0, "integration weights are nonnegative");
        if w == 0.0 {
            return ExtReal::ZERO;
        }
        match self {
            ExtReal::Finite(x) => ExtReal::finite(w * x),
            inf => inf,
        }
    }

    /// Sums a sequence of extended reals, failing on inf + (-inf).
    pub fn sum<I: IntoIterator<Item = ExtReal>>(items: I) -> Result<ExtReal, ExtError> {
        let mut acc = ExtReal::ZERO;
        for item in items {
            acc = acc.checked_add(item)?;
        }
        Ok(acc)
    }

    /// `self <= other + tol` under the order below; infinities compare by sign.
    pub fn le_with_tol(self, other: ExtReal, tol: f64) -> bool {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a <= b + tol,
            _ => self <= other,
        }
    }
}

impl std::ops::Neg for ExtReal {
    type Output = ExtReal;

    fn neg(self) -> ExtReal {
        match self {
            ExtReal::NegInf => ExtReal::PosInf,
            ExtReal::Finite(x) => ExtReal::Finite(-x),
            ExtReal::PosInf => ExtReal::NegInf,
        }
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Eq for ExtReal {}

impl Ord for ExtReal {
    fn cmp(&self, other: &Self) -> Ordering {
        use ExtReal::*;
        match (self, other) {
            (NegInf, NegInf) | (PosInf, PosInf) => Ordering::Equal,
            (NegInf, _) => Ordering::Less,
            (_, NegInf) => Ordering::Greater,
            (PosInf, _) => Ordering::Greater,
            (_, PosInf) => Ordering::Less,
            (Finite(a), Finite(b)) => a.total_cmp(b),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::PosInf => write!(f, "inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtReal::NegInf => s.serialize_str("-inf"),
            ExtReal::Finite(x) => s.serialize_f64(*x),
            ExtReal::PosInf => s.serialize_str("inf"),
        }
    }
}
