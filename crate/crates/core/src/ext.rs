//! Extended-real scalar used where penalty values and directional
//! derivatives can be genuinely infinite.

use std::fmt;

/// A real number extended with `-inf` and `+inf`, kept as an explicit tag so
/// that IEEE infinities never leak into downstream arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Extended {
    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// Finite payload, if any.
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::NegInf => write!(f, "-inf"),
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::PosInf => write!(f, "+inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_extraction() {
        assert_eq!(Extended::Finite(1.5).finite(), Some(1.5));
        assert_eq!(Extended::PosInf.finite(), None);
        assert!(!Extended::NegInf.is_finite());
        assert_eq!(format!("{}", Extended::PosInf), "+inf");
        assert_eq!(format!("{}", Extended::Finite(2.0)), "2");
    }
}
