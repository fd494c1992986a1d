//! Learning-rate schedules and the partial sums that drive the GD envelopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { eta: f64 },
    /// `η₀ qⁿ`
    Geometric { eta0: f64, q: f64 },
    /// `η₀ (n+1)^α`
    Power { eta0: f64, alpha: f64 },
}

impl Schedule {
    pub fn constant(eta: f64) -> Result<Self> {
        Schedule::Constant { eta }.validated()
    }

    pub fn geometric(eta0: f64, q: f64) -> Result<Self> {
        Schedule::Geometric { eta0, q }.validated()
    }

    pub fn power(eta0: f64, alpha: f64) -> Result<Self> {
        Schedule::Power { eta0, alpha }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Schedule::Constant { eta } => eta > 0.0 && eta.is_finite(),
            Schedule::Geometric { eta0, q } => eta0 > 0.0 && eta0.is_finite() && q > 0.0 && q.is_finite(),
            Schedule::Power { eta0, alpha } => eta0 > 0.0 && eta0.is_finite() && alpha.is_finite(),
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::config(format!("invalid schedule {self:?}: rates must be positive and finite")))
        }
    }

    pub fn rate(&self, n: usize) -> f64 {
        match *self {
            Schedule::Constant { eta } => eta,
            Schedule::Geometric { eta0, q } => eta0 * q.powf(n as f64),
            Schedule::Power { eta0, alpha } => eta0 * ((n + 1) as f64).powf(alpha),
        }
    }

    /// `(η₋, η₊)` when every rate of the infinite schedule lies in a
    /// compact subinterval of `(0, ∞)`.
    pub fn rate_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Schedule::Constant { eta } => Some((eta, eta)),
            Schedule::Geometric { eta0, q } if q == 1.0 => Some((eta0, eta0)),
            Schedule::Power { eta0, alpha } if alpha == 0.0 => Some((eta0, eta0)),
            _ => None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.rate_bounds().is_some()
    }

    /// Largest rate among the first `steps` steps.
    pub fn max_rate(&self, steps: usize) -> f64 {
        match *self {
            Schedule::Constant { eta } => eta,
            Schedule::Geometric { q, .. } if q > 1.0 => self.rate(steps.saturating_sub(1)),
            Schedule::Power { alpha, .. } if alpha > 0.0 => self.rate(steps.saturating_sub(1)),
            _ => self.rate(0),
        }
    }
}

/// Which partial sum to accumulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartialSum {
    /// `Σ η_k / √(A + Σ_{i≤k} η_i²)`
    Minus { a: f64 },
    /// `Σ η_k / √(A + Σ_{i≤k} (η_i² + C η_i))`
    Plus { a: f64, c: f64 },
    /// `Σ η_k / √(base + Σ_{i≤k} (2η_i²c₀² + 0.6 η_i))`
    Relu { base: f64, c0: f64 },
}

impl PartialSum {
    fn base(&self) -> f64 {
        match *self {
            PartialSum::Minus { a } | PartialSum::Plus { a, .. } => a,
            PartialSum::Relu { base, .. } => base,
        }
    }

    fn inner(&self, eta: f64) -> f64 {
        match *self {
            PartialSum::Minus { .. } => eta * eta,
            PartialSum::Plus { c, .. } => eta * eta + c * eta,
            PartialSum::Relu { c0, .. } => 2.0 * eta * eta * c0 * c0 + 0.6 * eta,
        }
    }
}

/// `S_n` for the schedule started at step 0.
pub fn partial_sums(schedule: &Schedule, n: usize, variant: PartialSum) -> f64 {
    partial_sum_series(schedule, 0, n, variant)[n]
}

/// `[S_0, S_1, …, S_count]` for the schedule started at step `start`, i.e.
/// with rates `η_start, η_{start+1}, …`.
pub fn partial_sum_series(schedule: &Schedule, start: usize, count: usize, variant: PartialSum) -> Vec<f64> {
    let mut out = Vec::with_capacity(count + 1);
    out.push(0.0);
    let mut inner = variant.base();
    let mut s = 0.0;
    for k in 0..count {
        let eta = schedule.rate(start + k);
        inner += variant.inner(eta);
        s += eta / inner.sqrt();
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(Schedule::constant(0.0).is_err());
        assert!(Schedule::geometric(1.0, 0.0).is_err());
        assert!(Schedule::power(-1.0, 0.5).is_err());
        assert!(Schedule::constant(f64::NAN).is_err());
    }

    #[test]
    fn rates_and_bounds() {
        let p = Schedule::power(1.0, -0.25).unwrap();
        assert_eq!(p.rate(0), 1.0);
        assert!((p.rate(15) - 0.5).abs() < 1e-15);
        assert!(!p.is_bounded());
        assert_eq!(Schedule::constant(0.1).unwrap().rate_bounds(), Some((0.1, 0.1)));
        let g = Schedule::geometric(0.01, 1.01).unwrap();
        assert!((g.rate(2) - 0.01 * 1.0201).abs() < 1e-17);
        assert!((g.max_rate(3) - g.rate(2)).abs() < 1e-18);
    }

    #[test]
    fn single_term_sums() {
        let s = Schedule::constant(0.5).unwrap();
        let m = partial_sums(&s, 1, PartialSum::Minus { a: 2.0 });
        assert!((m - 0.5 / (2.25f64).sqrt()).abs() < 1e-15);
        let p = partial_sums(&s, 1, PartialSum::Plus { a: 2.0, c: 0.6 });
        assert!((p - 0.5 / (2.0f64 + 0.25 + 0.3).sqrt()).abs() < 1e-15);
        let r = partial_sums(&s, 1, PartialSum::Relu { base: 3.0, c0: 1.0 });
        assert!((r - 0.5 / (3.0f64 + 0.5 + 0.3).sqrt()).abs() < 1e-15);
        assert_eq!(partial_sums(&s, 0, PartialSum::Minus { a: 2.0 }), 0.0);
    }

    #[test]
    fn constant_rate_minus_sum_matches_direct_summation() {
        // S_n = Σ_{k<n} η/√(A+(k+1)η²), summed independently
        let eta = 0.05;
        let a = 1.0;
        let n = 1000;
        let direct: f64 = (0..n).map(|k| eta / (a + (k + 1) as f64 * eta * eta).sqrt()).sum();
        let s = partial_sums(&Schedule::constant(eta).unwrap(), n, PartialSum::Minus { a });
        assert!((s - direct).abs() < 1e-12);
    }

    #[test]
    fn series_is_consistent_with_shifted_start() {
        let sch = Schedule::geometric(0.01, 1.01).unwrap();
        let v = PartialSum::Plus { a: 1.0, c: 0.6 };
        let full = partial_sum_series(&sch, 3, 10, v);
        assert_eq!(full.len(), 11);
        let first = sch.rate(3) / (1.0 + sch.rate(3).powi(2) + 0.6 * sch.rate(3)).sqrt();
        assert!((full[1] - first).abs() < 1e-15);
    }
}
