//! Signed margins with noise bands.

use serde::{Deserialize, Serialize};

/// Slack for comparisons between deterministic quantities.
pub const EXACT_TOL: f64 = 1e-9;

/// Width of the noise band in standard errors.
pub const BAND_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    NonPositive,
    Uncertain,
}

/// A criterion value together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub value: f64,
    pub stderr: f64,
}

impl Margin {
    pub fn exact(value: f64) -> Self {
        Margin { value, stderr: 0.0 }
    }

    pub fn new(value: f64, stderr: f64) -> Self {
        Margin { value, stderr }
    }

    /// `Positive` above `+2σ`, `NonPositive` below `−2σ`, `Uncertain` between.
    /// With zero error the split is at `EXACT_TOL`.
    pub fn sign(&self) -> Sign {
        let band = BAND_SIGMAS * self.stderr;
        if self.value > band + EXACT_TOL {
            Sign::Positive
        } else if self.stderr == 0.0 || self.value < -band + EXACT_TOL {
            Sign::NonPositive
        } else {
            Sign::Uncertain
        }
    }

    pub fn is_positive(&self) -> bool {
        self.sign() == Sign::Positive
    }

    pub fn is_nonpositive(&self) -> bool {
        self.sign() == Sign::NonPositive
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands() {
        assert_eq!(Margin::exact(1e-12).sign(), Sign::NonPositive);
        assert_eq!(Margin::exact(1e-6).sign(), Sign::Positive);
        assert_eq!(Margin::new(0.01, 0.01).sign(), Sign::Uncertain);
        assert_eq!(Margin::new(-0.03, 0.01).sign(), Sign::NonPositive);
        assert_eq!(Margin::new(0.03, 0.01).sign(), Sign::Positive);
    }
}
