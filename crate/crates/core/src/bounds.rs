//! Closed-form directional-convergence envelopes, identities and checks.
//!
//! Most cosine envelopes have the form `1 − 2/(e^z + 1)`, evaluated here as
//! `tanh(z/2)`, which equals `cosθ` at `z = −2 ln tan(θ/2)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DVector, Vector2};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::{Clock, Record, Trajectory};
use crate::error::{Error, Result};
use crate::gradient::{linear_gradient, monte_carlo_n};
use crate::law::RadialLaw;
use crate::models::ModelSpec;
use crate::plane::{angle, rotate, side_of};
use crate::quadrature::QuadratureConfig;
use crate::schedule::{partial_sum_series, PartialSum, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    LinearFlowLower,
    GdNegativeLower,
    GdSuffLower,
    DeepLowerPhase1,
    DeepLowerPhase2,
    DeepUpper,
    ReluDiffInitLower,
    ReluGdLower,
    DeepNormEnvelope,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// Trajectory quantity compared against a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Cos1,
    /// `max(cosθ₁, −cosθ₂)`
    MaxCos1NegCos2,
    Norm1,
    /// Either `cosθ₁` or `−cosθ₂` clears its own envelope.
    EitherNeuron,
}

impl Observable {
    pub fn value(&self, r: &Record) -> f64 {
        match self {
            Observable::Cos1 => r.cos[0],
            Observable::MaxCos1NegCos2 | Observable::EitherNeuron => r.cos[0].max(-r.cos[1]),
            Observable::Norm1 => r.norms[0],
        }
    }

    /// `1 − value` computed from half angles, so that it keeps full
    /// relative precision as the cosine approaches one.
    fn gap(&self, r: &Record, v: &Vector2<f64>) -> f64 {
        let g1 = || versine(angle(&r.weights[0], v));
        match self {
            Observable::Cos1 => g1(),
            Observable::MaxCos1NegCos2 | Observable::EitherNeuron => g1().min(coversine_neg(angle(&r.weights[1], v))),
            Observable::Norm1 => 1.0 - r.norms[0],
        }
    }
}

/// `1 − cosθ`
fn versine(theta: f64) -> f64 {
    2.0 * (0.5 * theta).sin().powi(2)
}

/// `1 + cosθ`
fn coversine_neg(theta: f64) -> f64 {
    2.0 * (0.5 * theta).cos().powi(2)
}

/// Signed margin at one record; positive means the bound holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMargin {
    pub margin: f64,
    /// Floating-point resolution of the comparison (a few ulps of the
    /// compared quantities).
    pub rounding: f64,
}

const ROUNDING_ULPS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// `tanh((A1 (x − t0) + B1)/2)`
    ExpLinear,
    /// `tanh((A2 √(x − T + C2) + B2)/2)`
    ExpSqrt,
    /// `1 − gap0 e^{−B S_{x−n0}}`
    ExpSeries,
    /// `1 − 2/(C1 (A1 (x − t0)/B1 + 1)^α + 1)`
    DeepPhase1,
    /// `tanh((A2 (x − T) + B2)/2)`
    DeepPhase2,
    /// `tanh((F[(0.6(x − t0) + D)^{N/2} − D^{N/2}] + E)/2)`
    DeepUpper,
    /// `(D + 0.6(x − t0))^{N/2}`
    NormUpper,
    /// `(B1 + A1 (x − t0))^{−N/(N−2)}`
    NormLower,
    /// `tanh((A √(x − t0 + B) + C)/2)`
    ReluSqrt,
    /// `1 − coef_i e^{−B S_x}`, one envelope per neuron
    ReluSeries,
    Constant,
}

/// A closed-form envelope with named constants, a side, a clock and a
/// window of validity.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub side: Side,
    pub clock: Clock,
    pub observable: Observable,
    /// Closed interval of clock values on which the curve applies.
    pub domain: (f64, f64),
    constants: BTreeMap<String, f64>,
    shape: Shape,
    series: Vec<f64>,
    /// Source of `series`, so that edited constants can rebuild it.
    sums: Option<(Schedule, PartialSum)>,
}

fn tanh_half(z: f64) -> f64 {
    (0.5 * z).tanh()
}

/// `−2 ln tan(θ/2)`, the exponent at which the envelopes equal `cosθ`.
pub fn half_angle_exponent(theta: f64) -> f64 {
    -2.0 * (0.5 * theta).tan().abs().ln()
}

fn check_angle(theta: f64, what: &str) -> Result<()> {
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::domain(format!("{what} must lie in (0, π), got {theta}")));
    }
    Ok(())
}

fn check_positive(x: f64, what: &str) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("{what} must be positive, got {x}")));
    }
    Ok(())
}

impl BoundCurve {
    fn build(
        kind: BoundKind,
        side: Side,
        clock: Clock,
        observable: Observable,
        domain: (f64, f64),
        shape: Shape,
        constants: &[(&str, f64)],
        series: Vec<f64>,
    ) -> Result<Self> {
        if !(domain.0 <= domain.1) || domain.0.is_nan() {
            return Err(Error::domain(format!("empty domain [{}, {}]", domain.0, domain.1)));
        }
        for (k, c) in constants {
            if !c.is_finite() {
                return Err(Error::domain(format!("constant {k} is not finite ({c})")));
            }
        }
        Ok(Self {
            kind,
            side,
            clock,
            observable,
            domain,
            constants: constants.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            shape,
            series,
            sums: None,
        })
    }

    fn with_sums(mut self, schedule: &Schedule, variant: PartialSum) -> Self {
        self.sums = Some((*schedule, variant));
        self
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    fn c(&self, name: &str) -> f64 {
        self.constants[name]
    }

    /// Copy with one constant replaced, e.g. for negative controls.
    pub fn with_constant(&self, name: &str, value: f64) -> Result<Self> {
        if !self.constants.contains_key(name) {
            return Err(Error::config(format!("curve has no constant named {name}")));
        }
        let mut c = self.clone();
        c.constants.insert(name.to_string(), value);
        if let Some((schedule, variant)) = self.sums {
            let variant = match (variant, name) {
                (PartialSum::Minus { .. }, "A") => PartialSum::Minus { a: value },
                (PartialSum::Plus { c, .. }, "A") => PartialSum::Plus { a: value, c },
                (PartialSum::Plus { a, .. }, "C") => PartialSum::Plus { a, c: value },
                (PartialSum::Relu { c0, .. }, "base") => PartialSum::Relu { base: value, c0 },
                (_, "n0") => return Err(Error::config("the start step of a partial-sum curve is fixed")),
                _ => variant,
            };
            let n0 = self.c("n0") as usize;
            c.series = partial_sum_series(&schedule, n0, self.series.len() - 1, variant);
            c.sums = Some((schedule, variant));
        }
        Ok(c)
    }

    /// Copy restricted to `[lo, hi] ∩ domain`.
    pub fn restricted(&self, lo: f64, hi: f64) -> Result<Self> {
        let d = (self.domain.0.max(lo), self.domain.1.min(hi));
        if !(d.0 <= d.1) {
            return Err(Error::domain("restriction leaves an empty domain"));
        }
        let mut c = self.clone();
        c.domain = d;
        Ok(c)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    fn series_at(&self, x: f64) -> f64 {
        let n0 = self.constants.get("n0").copied().unwrap_or(0.0);
        let idx = (x - n0).round().max(0.0) as usize;
        self.series[idx.min(self.series.len() - 1)]
    }

    /// Exponent `z` of the cosine curves `1 − 2/(e^z + 1)`.
    fn exponent(&self, x: f64) -> Option<f64> {
        Some(match self.shape {
            Shape::ExpLinear => self.c("A1") * (x - self.c("t0")) + self.c("B1"),
            Shape::ExpSqrt => self.c("A2") * (x - self.c("T") + self.c("C2")).max(0.0).sqrt() + self.c("B2"),
            Shape::DeepPhase1 => self.c("C1").ln() + self.c("alpha") * (self.c("A1") * (x - self.c("t0")) / self.c("B1")).ln_1p(),
            Shape::DeepPhase2 => self.c("A2") * (x - self.c("T")) + self.c("B2"),
            Shape::DeepUpper => {
                let (d, n) = (self.c("D"), self.c("N"));
                self.c("F") * ((0.6 * (x - self.c("t0")) + d).powf(0.5 * n) - d.powf(0.5 * n)) + self.c("E")
            }
            Shape::ReluSqrt => self.c("A") * (x - self.c("t0") + self.c("B")).sqrt() + self.c("C"),
            _ => return None,
        })
    }

    /// `1 − value(x)` for cosine curves, evaluated without cancellation.
    fn gap(&self, x: f64) -> Option<f64> {
        if let Some(z) = self.exponent(x) {
            return Some(2.0 / (z.exp() + 1.0));
        }
        match self.shape {
            Shape::ExpSeries => Some(self.c("gap0") * (-self.c("B") * self.series_at(x)).exp()),
            Shape::ReluSeries => Some(self.c("coef1") * (-self.c("B") * self.series_at(x)).exp()),
            _ => None,
        }
    }

    /// Curve value at clock value `x`. For the per-neuron ReLU GD envelope
    /// this is the neuron-1 curve.
    pub fn value(&self, x: f64) -> f64 {
        if let Some(z) = self.exponent(x) {
            return tanh_half(z);
        }
        match self.shape {
            Shape::NormUpper => (self.c("D") + 0.6 * (x - self.c("t0"))).powf(0.5 * self.c("N")),
            Shape::NormLower => {
                let n = self.c("N");
                (self.c("B1") + self.c("A1") * (x - self.c("t0"))).powf(-n / (n - 2.0))
            }
            Shape::Constant => self.c("value"),
            _ => 1.0 - self.gap(x).expect("cosine curve"),
        }
    }

    /// Margin at a record of a trajectory with target `v`, or `None` when
    /// the record lies outside the domain. Cosine curves are compared on
    /// `1 − cos` so that margins stay meaningful as both sides approach one.
    pub fn margin(&self, r: &Record, v: &Vector2<f64>) -> Option<PointMargin> {
        let x = r.clock_value(self.clock);
        if !self.contains(x) {
            return None;
        }
        let signed = |lower_is_good: f64, b: f64, obs: f64| PointMargin {
            margin: lower_is_good,
            rounding: ROUNDING_ULPS * f64::EPSILON * b.abs().max(obs.abs()),
        };
        if self.shape == Shape::ReluSeries {
            let decay = (-self.c("B") * self.series_at(x)).exp();
            let (b1, b2) = (self.c("coef1") * decay, self.c("coef2") * decay);
            let o1 = versine(angle(&r.weights[0], v));
            let o2 = coversine_neg(angle(&r.weights[1], v));
            let best = if b1 - o1 >= b2 - o2 { (b1, o1) } else { (b2, o2) };
            return Some(signed(best.0 - best.1, best.0, best.1));
        }
        if let (Some(b), Observable::Cos1 | Observable::MaxCos1NegCos2) = (self.gap(x), self.observable) {
            let obs = self.observable.gap(r, v);
            let m = match self.side {
                Side::Lower => b - obs,
                Side::Upper => obs - b,
            };
            return Some(signed(m, b, obs));
        }
        let obs = self.observable.value(r);
        let b = self.value(x);
        let m = match self.side {
            Side::Lower => obs - b,
            Side::Upper => b - obs,
        };
        Some(signed(m, b, obs))
    }

    /// Constant curve, e.g. `cosθ ≤ 1`.
    pub fn constant_curve(value: f64, side: Side, clock: Clock, observable: Observable) -> Result<Self> {
        Self::build(
            BoundKind::Constant,
            side,
            clock,
            observable,
            (0.0, f64::INFINITY),
            Shape::Constant,
            &[("value", value)],
            Vec::new(),
        )
    }
}

/// Phase-switch data entering the second-phase constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub t: f64,
    pub norm: f64,
    pub theta: f64,
}

impl Anchor {
    /// State of the first weight at a record.
    pub fn at(r: &Record, v: &Vector2<f64>, clock: Clock) -> Self {
        Self {
            t: r.clock_value(clock),
            norm: r.weights[0].norm(),
            theta: angle(&r.weights[0], v),
        }
    }
}

/// Both phase curves of the linear-flow envelope started from the state
/// `start` at time `start.t`; the first applies on `[t₀, T]`, the second on
/// `[T, ∞)`.
pub fn linear_flow_curves(start: Anchor, switch: Anchor, c0: f64) -> Result<[BoundCurve; 2]> {
    check_positive(start.norm, "‖w(t₀)‖")?;
    check_angle(start.theta, "θ(t₀)")?;
    check_angle(switch.theta, "θ(T)")?;
    check_positive(switch.norm, "‖w(T)‖")?;
    if !(switch.t >= start.t) {
        return Err(Error::domain("T must not precede the anchor time"));
    }
    let a1 = 2.0 * c0 / (PI * start.norm);
    let b1 = half_angle_exponent(start.theta);
    let p1 = BoundCurve::build(
        BoundKind::LinearFlowLower,
        Side::Lower,
        Clock::Time,
        Observable::Cos1,
        (start.t, switch.t),
        Shape::ExpLinear,
        &[("A1", a1), ("B1", b1), ("t0", start.t)],
        Vec::new(),
    )?;
    Ok([p1, phase_two_curve(switch, c0)?])
}

/// Second-phase curve anchored at any `t₀ ≥ T`.
pub fn phase_two_curve(anchor: Anchor, c0: f64) -> Result<BoundCurve> {
    check_angle(anchor.theta, "θ(T)")?;
    check_positive(anchor.norm, "‖w(T)‖")?;
    let a2 = 4.0 * c0 / (0.6f64.sqrt() * PI);
    let b2 = half_angle_exponent(anchor.theta) - 4.0 * c0 * anchor.norm / (0.6 * PI);
    let c2 = anchor.norm * anchor.norm / 0.6;
    BoundCurve::build(
        BoundKind::LinearFlowLower,
        Side::Lower,
        Clock::Time,
        Observable::Cos1,
        (anchor.t, f64::INFINITY),
        Shape::ExpSqrt,
        &[("A2", a2), ("B2", b2), ("C2", c2), ("T", anchor.t)],
        Vec::new(),
    )
}

/// Lower bound on `cosθ(t)` for the linear flow.
pub fn linear_flow_bound(t: f64, start: Anchor, switch: Anchor, c0: f64) -> Result<f64> {
    let [p1, p2] = linear_flow_curves(start, switch, c0)?;
    Ok(if t <= switch.t { p1.value(t) } else { p2.value(t) })
}

/// Negative-start GD envelope anchored at step `n0` with state
/// `(‖w(n0)‖, θ(n0))`, over steps `n0..=n0 + horizon`. Valid until the first
/// step with `cosθ(n) ≥ 0`.
pub fn gd_negative_curve(
    schedule: &Schedule,
    n0: usize,
    w0_norm: f64,
    theta0: f64,
    c0: f64,
    horizon: usize,
) -> Result<BoundCurve> {
    check_positive(w0_norm, "‖w(0)‖")?;
    if !(theta0 > 0.5 * PI && theta0 < PI) {
        return Err(Error::domain(format!("needs vᵀw(0) < 0 and θ(0) ≠ π, got θ(0) = {theta0}")));
    }
    let a = w0_norm * w0_norm / (c0 * c0);
    let b = coversine_neg(theta0) / PI;
    let series = partial_sum_series(schedule, n0, horizon, PartialSum::Minus { a });
    BoundCurve::build(
        BoundKind::GdNegativeLower,
        Side::Lower,
        Clock::Step,
        Observable::Cos1,
        (n0 as f64, (n0 + horizon) as f64),
        Shape::ExpSeries,
        &[("A", a), ("B", b), ("gap0", versine(theta0)), ("n0", n0 as f64)],
        series,
    )
    .map(|c| c.with_sums(schedule, PartialSum::Minus { a }))
}

pub fn gd_negative_bound(n: usize, schedule: &Schedule, w0_norm: f64, theta0: f64, c0: f64) -> Result<f64> {
    Ok(gd_negative_curve(schedule, 0, w0_norm, theta0, c0, n)?.value(n as f64))
}

/// Both sides of the sufficient condition for one GD step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuffCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `‖w(n+1)‖ + w̄(n)ᵀw(n+1) ≥ (1+δ) c₀ η_n cosθ(n) / π`.
pub fn gd_suff_check(w_n: &Vector2<f64>, w_n1: &Vector2<f64>, eta_n: f64, theta_n: f64, c0: f64, delta: f64) -> SuffCheck {
    let nrm = w_n.norm();
    let proj = if nrm > 0.0 { w_n.dot(w_n1) / nrm } else { 0.0 };
    let lhs = w_n1.norm() + proj;
    let rhs = (1.0 + delta) * c0 * eta_n * theta_n.cos() / PI;
    SuffCheck { lhs, rhs, holds: lhs >= rhs }
}

/// `R₁ = η₊c₀ + c₀η₊/π`
pub fn r1_threshold(eta_plus: f64, c0: f64) -> f64 {
    eta_plus * c0 + c0 * eta_plus / PI
}

/// Sufficient-condition GD envelope anchored at step `n0` with the state
/// `(‖w(n0)‖, θ(n0))`, over steps `n0..=n0 + horizon`.
pub fn gd_suff_curve(
    schedule: &Schedule,
    n0: usize,
    w_norm: f64,
    theta: f64,
    c0: f64,
    delta: f64,
    horizon: usize,
) -> Result<BoundCurve> {
    check_positive(w_norm, "‖w(n0)‖")?;
    check_positive(delta, "δ")?;
    if !(theta >= 0.0 && theta < PI) {
        return Err(Error::domain(format!("θ(n0) must lie in [0, π), got {theta}")));
    }
    let a = w_norm * w_norm / (c0 * c0);
    let c = 0.6 / (c0 * c0);
    let b = delta * coversine_neg(theta) / (PI + delta * PI);
    let series = partial_sum_series(schedule, n0, horizon, PartialSum::Plus { a, c });
    BoundCurve::build(
        BoundKind::GdSuffLower,
        Side::Lower,
        Clock::Step,
        Observable::Cos1,
        (n0 as f64, (n0 + horizon) as f64),
        Shape::ExpSeries,
        &[("A", a), ("B", b), ("C", c), ("gap0", versine(theta)), ("n0", n0 as f64), ("delta", delta)],
        series,
    )
    .map(|curve| curve.with_sums(schedule, PartialSum::Plus { a, c }))
}

fn check_depth(depth: usize) -> Result<f64> {
    if depth <= 2 {
        return Err(Error::domain(format!("deep envelopes need N > 2, got {depth}")));
    }
    Ok(depth as f64)
}

/// Lower-envelope constants for deep networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeepConstants {
    /// Obtained by integrating the angle rate `c₀ sin²θ ‖w_e‖^{1−2/N}/π`
    /// against the norm envelopes: `α = 2/((N−2)π)` and
    /// `A2 = 2c₀‖w_e(T)‖^{1−2/N}/π`.
    #[default]
    Derived,
    /// `α = 2c₀/π` and `A2 = 2c₀‖w_e(T)‖^{2−2/N}/π`. The first-phase curve
    /// with this `α` is violated by the induced flow, e.g. `N = 4` from
    /// `(0.6, −0.8)` on the unit circle.
    Printed,
}

/// Deep-network envelopes started from `start`: first-phase lower on
/// `[t0, T]`, second-phase lower on `[T, ∞)` and the upper curve on `[t0, ∞)`.
pub fn deep_curves(depth: usize, start: Anchor, switch: Anchor, c0: f64) -> Result<[BoundCurve; 3]> {
    deep_curves_with(DeepConstants::Derived, depth, start, switch, c0)
}

pub fn deep_curves_with(
    constants: DeepConstants,
    depth: usize,
    start: Anchor,
    switch: Anchor,
    c0: f64,
) -> Result<[BoundCurve; 3]> {
    let n = check_depth(depth)?;
    let (t0, w_e0_norm, theta0) = (start.t, start.norm, start.theta);
    if !(switch.t >= t0) {
        return Err(Error::domain(format!("switch time {} precedes the start {t0}", switch.t)));
    }
    let (alpha, a2_power) = match constants {
        DeepConstants::Derived => (2.0 / ((n - 2.0) * PI), 1.0 - 2.0 / n),
        DeepConstants::Printed => (2.0 * c0 / PI, 2.0 - 2.0 / n),
    };
    check_positive(w_e0_norm, "‖w_e(0)‖")?;
    check_angle(theta0, "θ(0)")?;
    check_angle(switch.theta, "θ(T)")?;
    check_positive(switch.norm, "‖w_e(T)‖")?;
    let p1 = BoundCurve::build(
        BoundKind::DeepLowerPhase1,
        Side::Lower,
        Clock::Time,
        Observable::Cos1,
        (t0, switch.t),
        Shape::DeepPhase1,
        &[
            ("A1", (n - 2.0) * c0),
            ("B1", w_e0_norm.powf(2.0 / n - 1.0)),
            ("C1", coversine_neg(theta0) / versine(theta0)),
            ("alpha", alpha),
            ("t0", t0),
        ],
        Vec::new(),
    )?;
    let p2 = BoundCurve::build(
        BoundKind::DeepLowerPhase2,
        Side::Lower,
        Clock::Time,
        Observable::Cos1,
        (switch.t, f64::INFINITY),
        Shape::DeepPhase2,
        &[
            ("A2", 2.0 * c0 * switch.norm.powf(a2_power) / PI),
            ("B2", half_angle_exponent(switch.theta)),
            ("T", switch.t),
        ],
        Vec::new(),
    )?;
    let up = BoundCurve::build(
        BoundKind::DeepUpper,
        Side::Upper,
        Clock::Time,
        Observable::Cos1,
        (t0, f64::INFINITY),
        Shape::DeepUpper,
        &[
            ("D", w_e0_norm.powf(2.0 / n)),
            ("E", half_angle_exponent(theta0)),
            ("F", 4.0 * c0 / (0.6 * n * PI)),
            ("N", n),
            ("t0", t0),
        ],
        Vec::new(),
    )?;
    Ok([p1, p2, up])
}

/// `(lower, upper)` on `cosθ(t)` for the deep induced flow.
pub fn deep_bounds(t: f64, depth: usize, w_e0_norm: f64, theta0: f64, switch: Anchor, c0: f64) -> Result<(f64, f64)> {
    let start = Anchor { t: 0.0, norm: w_e0_norm, theta: theta0 };
    let [p1, p2, up] = deep_curves(depth, start, switch, c0)?;
    let lower = if t <= switch.t { p1.value(t) } else { p2.value(t) };
    Ok((lower, up.value(t)))
}

/// Norm envelopes `[lower, upper]` of the deep effective weight from time
/// `t0` with `‖w_e(t0)‖ = w_e0_norm`.
pub fn deep_norm_curves(depth: usize, t0: f64, w_e0_norm: f64, c0: f64) -> Result<[BoundCurve; 2]> {
    let n = check_depth(depth)?;
    check_positive(w_e0_norm, "‖w_e(0)‖")?;
    let lower = BoundCurve::build(
        BoundKind::DeepNormEnvelope,
        Side::Lower,
        Clock::Time,
        Observable::Norm1,
        (t0, f64::INFINITY),
        Shape::NormLower,
        &[("B1", w_e0_norm.powf(2.0 / n - 1.0)), ("A1", (n - 2.0) * c0), ("N", n), ("t0", t0)],
        Vec::new(),
    )?;
    let upper = BoundCurve::build(
        BoundKind::DeepNormEnvelope,
        Side::Upper,
        Clock::Time,
        Observable::Norm1,
        (t0, f64::INFINITY),
        Shape::NormUpper,
        &[("D", w_e0_norm.powf(2.0 / n)), ("N", n), ("t0", t0)],
        Vec::new(),
    )?;
    Ok([lower, upper])
}

pub fn deep_norm_envelope(t: f64, depth: usize, w_e0_norm: f64, c0: f64) -> Result<(f64, f64)> {
    let [lo, up] = deep_norm_curves(depth, 0.0, w_e0_norm, c0)?;
    Ok((lo.value(t), up.value(t)))
}

fn check_diff_halfplane(w1: &Vector2<f64>, w2: &Vector2<f64>, v: &Vector2<f64>) -> Result<()> {
    if side_of(v, w1) * side_of(v, w2) >= 0.0 {
        return Err(Error::domain("weights are not in different half-planes of the target line"));
    }
    Ok(())
}

/// Different-half-plane ReLU flow envelope on `max(cosθ₁, −cosθ₂)`.
pub fn relu_diff_init_curve(w1: &Vector2<f64>, w2: &Vector2<f64>, v: &Vector2<f64>, c0: f64) -> Result<BoundCurve> {
    relu_diff_init_curve_at(0.0, w1, w2, v, c0)
}

/// Same envelope restarted from the state `(w1, w2)` reached at time `t0`.
pub fn relu_diff_init_curve_at(
    t0: f64,
    w1: &Vector2<f64>,
    w2: &Vector2<f64>,
    v: &Vector2<f64>,
    c0: f64,
) -> Result<BoundCurve> {
    check_diff_halfplane(w1, w2, v)?;
    relu_diff_init_curve_from(t0, w1.norm_squared() + w2.norm_squared(), angle(w1, v), angle(w2, v), c0)
}

fn relu_diff_init_curve_from(t0: f64, r0_sq: f64, theta1: f64, theta2: f64, c0: f64) -> Result<BoundCurve> {
    let r0 = r0_sq.sqrt();
    let m = theta1.max(PI - theta2);
    check_angle(m, "max{θ₁(0), π−θ₂(0)}")?;
    let a = 2.0 * c0 / (PI * 0.6f64.sqrt());
    let b = r0_sq / 0.6;
    let c = -2.0 * c0 * r0 / (0.6 * PI) + half_angle_exponent(m);
    BoundCurve::build(
        BoundKind::ReluDiffInitLower,
        Side::Lower,
        Clock::Time,
        Observable::MaxCos1NegCos2,
        (t0, f64::INFINITY),
        Shape::ReluSqrt,
        &[("A", a), ("B", b), ("C", c), ("t0", t0)],
        Vec::new(),
    )
}

/// Scalar form of [`relu_diff_init_curve`] from norms and angles.
pub fn relu_diff_init_bound(t: f64, r0: f64, theta1_0: f64, theta2_0: f64, c0: f64) -> Result<f64> {
    Ok(relu_diff_init_curve_from(0.0, r0 * r0, theta1_0, theta2_0, c0)?.value(t))
}

/// ReLU GD envelope over steps `0..=horizon`: at each step neuron 1 clears
/// `1 − (1−cosθ₁(0))e^{−BS_n}` or neuron 2 clears
/// `1 − (1+cosθ₂(0))e^{−BS_n}` on `−cosθ₂`.
pub fn relu_gd_curve(
    schedule: &Schedule,
    w1: &Vector2<f64>,
    w2: &Vector2<f64>,
    v: &Vector2<f64>,
    c0: f64,
    horizon: usize,
) -> Result<BoundCurve> {
    check_diff_halfplane(w1, w2, v)?;
    let gap1 = versine(angle(w1, v));
    let gap2 = coversine_neg(angle(w2, v));
    let b = c0 * gap1.min(gap2) / (4.0 * PI);
    let base = w1.norm_squared() + w2.norm_squared();
    let series = partial_sum_series(schedule, 0, horizon, PartialSum::Relu { base, c0 });
    BoundCurve::build(
        BoundKind::ReluGdLower,
        Side::Lower,
        Clock::Step,
        Observable::EitherNeuron,
        (0.0, horizon as f64),
        Shape::ReluSeries,
        &[("B", b), ("coef1", gap1), ("coef2", gap2), ("base", base), ("n0", 0.0)],
        series,
    )
    .map(|c| c.with_sums(schedule, PartialSum::Relu { base, c0 }))
}

pub fn relu_gd_bound(
    n: usize,
    schedule: &Schedule,
    w1: &Vector2<f64>,
    w2: &Vector2<f64>,
    v: &Vector2<f64>,
    c0: f64,
) -> Result<[f64; 2]> {
    let c = relu_gd_curve(schedule, w1, w2, v, c0, n)?;
    let decay = (-c.c("B") * c.series_at(n as f64)).exp();
    Ok([1.0 - c.c("coef1") * decay, 1.0 - c.c("coef2") * decay])
}

/// Outcome of the same-half-plane crossover search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossover {
    /// First time with `θ₁ ≤ θ₂`, linearly interpolated between records.
    pub time: Option<f64>,
    /// `θ₁` nonincreasing and `θ₂` nondecreasing on records up to the crossing.
    pub monotone: bool,
}

pub fn relu_crossover_time(traj: &Trajectory) -> Result<Crossover> {
    let r0 = &traj.records[0];
    if r0.weights.len() != 2 {
        return Err(Error::config("crossover needs a two-neuron trajectory"));
    }
    if side_of(&traj.v, &r0.weights[0]) * side_of(&traj.v, &r0.weights[1]) < 0.0 {
        return Err(Error::domain("crossover is defined for same-half-plane starts"));
    }
    let th = |r: &Record| (angle(&r.weights[0], &traj.v), angle(&r.weights[1], &traj.v));
    let (a0, b0) = th(r0);
    if a0 < b0 {
        return Err(Error::domain("needs θ₁(0) ≥ θ₂(0)"));
    }
    if a0 == b0 {
        return Ok(Crossover {
            time: Some(r0.clock_value(traj.clock)),
            monotone: true,
        });
    }
    let tol = 1e-12;
    let mut monotone = true;
    let mut prev = (a0, b0, r0.clock_value(traj.clock));
    for r in &traj.records[1..] {
        let (a, b) = th(r);
        let t = r.clock_value(traj.clock);
        if a - b <= 0.0 {
            let d0 = prev.0 - prev.1;
            let d1 = a - b;
            let s = d0 / (d0 - d1);
            return Ok(Crossover {
                time: Some(prev.2 + s * (t - prev.2)),
                monotone,
            });
        }
        monotone &= a <= prev.0 + tol && b >= prev.1 - tol;
        prev = (a, b, t);
    }
    Ok(Crossover { time: None, monotone })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

/// `ν(z) = E[σ(z‖x‖) − σ(−z‖x‖)]/z` over the radial law.
pub fn nu(z: f64, activation: Activation, law: &RadialLaw) -> Result<f64> {
    check_positive(z, "z")?;
    let sigma = |u: f64| match activation {
        Activation::Relu => u.max(0.0),
        Activation::Identity => u,
        Activation::Tanh => u.tanh(),
    };
    Ok(law.support().iter().map(|&(r, p)| p * (sigma(z * r) - sigma(-z * r))).sum::<f64>() / z)
}

/// Quadrature values of `N(w)` on a `(‖w‖, θ)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignMap {
    pub norms: Vec<f64>,
    pub thetas: Vec<f64>,
    /// `values[i][j]` at `(norms[j], thetas[i])`.
    pub values: Vec<Vec<f64>>,
}

/// Cells contradicting the predicted sign structure of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignMapCheck {
    /// `θ ≥ π/2` but `N > tol`.
    pub positive_in_obtuse: usize,
    /// `0 < ‖w‖ ≤ 2cosθ/π`, `cosθ > 0`, but `N ≤ 0`.
    pub nonpositive_near_origin: usize,
}

impl SignMap {
    pub fn check(&self, tol: f64) -> SignMapCheck {
        let mut c = SignMapCheck {
            positive_in_obtuse: 0,
            nonpositive_near_origin: 0,
        };
        for (i, &th) in self.thetas.iter().enumerate() {
            for (j, &r) in self.norms.iter().enumerate() {
                let n = self.values[i][j];
                if th >= 0.5 * PI && n > tol {
                    c.positive_in_obtuse += 1;
                }
                if th.cos() > 0.0 && r > 0.0 && r <= 2.0 * th.cos() / PI && n <= 0.0 {
                    c.nonpositive_near_origin += 1;
                }
            }
        }
        c
    }
}

/// Evaluates `N(w)` for the linear model on the grid, with `v = e₁`.
pub fn sign_map(law: &RadialLaw, norms: &[f64], thetas: &[f64], cfg: &QuadratureConfig) -> Result<SignMap> {
    let v = Vector2::new(1.0, 0.0);
    let values = thetas
        .par_iter()
        .map(|&th| {
            norms
                .iter()
                .map(|&r| {
                    let w = rotate(&v, th) * r;
                    if r == 0.0 {
                        return Ok(0.0);
                    }
                    Ok(-w.dot(&linear_gradient(&w, &v, law, cfg)?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignMap {
        norms: norms.to_vec(),
        thetas: thetas.to_vec(),
        values,
    })
}

/// Default `(‖w‖, θ)` grid for sign maps: 80 norms evenly spaced on
/// `[0.125, 10]` and 73 angles evenly spaced on `[0, π]`.
pub fn default_sign_grid() -> (Vec<f64>, Vec<f64>) {
    let norms = (1..=80).map(|k| 0.125 * k as f64).collect();
    let thetas = (0..=72).map(|k| PI * k as f64 / 72.0).collect();
    (norms, thetas)
}

/// Monte Carlo estimates of `N(w)` and their standard errors on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSignMap {
    pub values: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub samples: usize,
}

/// Cell `(i, j)` uses seed `seed + i·len(norms) + j`.
pub fn sign_map_mc(law: &RadialLaw, norms: &[f64], thetas: &[f64], samples: usize, seed: u64) -> Result<McSignMap> {
    let v = DVector::from_column_slice(&[1.0, 0.0]);
    let rows = thetas
        .par_iter()
        .enumerate()
        .map(|(i, &th)| {
            norms
                .iter()
                .enumerate()
                .map(|(j, &r)| {
                    let w = rotate(&Vector2::new(1.0, 0.0), th) * r;
                    let cell = seed.wrapping_add((i * norms.len() + j) as u64);
                    monte_carlo_n(&ModelSpec::Linear, &[DVector::from_column_slice(&[w.x, w.y])], &v, law, samples, cell)
                })
                .collect::<Result<Vec<(f64, f64)>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McSignMap {
        values: rows.iter().map(|r| r.iter().map(|p| p.0).collect()).collect(),
        stderr: rows.iter().map(|r| r.iter().map(|p| p.1).collect()).collect(),
        samples,
    })
}

/// Sign agreement between quadrature and Monte Carlo maps, restricted to
/// cells where `|N| > k_se` Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignAgreement {
    pub eligible: usize,
    pub agree: usize,
}

impl SignAgreement {
    pub fn fraction(&self) -> f64 {
        if self.eligible == 0 {
            1.0
        } else {
            self.agree as f64 / self.eligible as f64
        }
    }
}

pub fn compare_sign_maps(quad: &SignMap, mc: &McSignMap, k_se: f64) -> SignAgreement {
    let mut out = SignAgreement { eligible: 0, agree: 0 };
    for (qr, (mr, sr)) in quad.values.iter().zip(mc.values.iter().zip(&mc.stderr)) {
        for (&q, (&m, &se)) in qr.iter().zip(mr.iter().zip(sr)) {
            if q.abs() > k_se * se {
                out.eligible += 1;
                if (q > 0.0) == (m > 0.0) {
                    out.agree += 1;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaCheck {
    Inapplicable,
    Holds,
    Violated,
}

/// `‖w‖ sinθ ≤ 2 ln(4π/θ + 1)` for `x ~ U(S¹)`, applicable when `N(w) > 0`
/// and `‖w‖ sinθ ≥ 2`.
pub fn unit_circle_norm_lemma_check(w_norm: f64, theta: f64, cfg: &QuadratureConfig) -> Result<LemmaCheck> {
    let lhs = w_norm * theta.sin();
    if !(theta > 0.0) || lhs < 2.0 {
        return Ok(LemmaCheck::Inapplicable);
    }
    let v = Vector2::new(1.0, 0.0);
    let w = rotate(&v, theta) * w_norm;
    let n = -w.dot(&linear_gradient(&w, &v, &RadialLaw::unit_circle(), cfg)?);
    if n <= 0.0 {
        return Ok(LemmaCheck::Inapplicable);
    }
    Ok(if lhs <= 2.0 * (4.0 * PI / theta + 1.0).ln() {
        LemmaCheck::Holds
    } else {
        LemmaCheck::Violated
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMethod {
    /// `w(0) ~ N(0, τ² I)` with the realised start `w0`.
    LargeNormGaussian { w0: Vector2<f64>, tau: f64, eta_plus: f64 },
    /// Small start followed by one large step `η₀`.
    OneStepBoost { w0: Vector2<f64>, eta0: f64, eta_plus: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitReport {
    pub applicable: bool,
    pub holds: bool,
    pub r1: f64,
    /// Named derived quantities (gates, probabilities, executed step).
    pub quantities: BTreeMap<String, f64>,
}

/// Checks the two initialization recipes that place the iterate above `R₁`.
/// The target is `v = e₁`.
pub fn init_check(method: &InitMethod, law: &RadialLaw, cfg: &QuadratureConfig) -> Result<InitReport> {
    let m = law.moment_constants();
    let v = Vector2::new(1.0, 0.0);
    let mut q = BTreeMap::new();
    match *method {
        InitMethod::LargeNormGaussian { w0, tau, eta_plus } => {
            check_positive(tau, "τ")?;
            let r1 = r1_threshold(eta_plus, m.c0);
            let normal = Normal::new(0.0, 1.0).map_err(|e| Error::config(e.to_string()))?;
            q.insert("probability".into(), 1.0 - normal.cdf(r1 / tau));
            q.insert("v_dot_w0".into(), v.dot(&w0));
            Ok(InitReport {
                applicable: true,
                holds: v.dot(&w0) >= r1,
                r1,
                quantities: q,
            })
        }
        InitMethod::OneStepBoost { w0, eta0, eta_plus } => {
            let r1 = r1_threshold(eta_plus, m.c0);
            let norm_gate = m.c1 / m.c2;
            let eta_gate = 4.0 * eta_plus * (m.c0 + m.c0 / PI) / m.c1 + 4.0 / m.c2;
            q.insert("norm_gate".into(), norm_gate);
            q.insert("eta0_gate".into(), eta_gate);
            if w0.norm() > norm_gate || eta0 < eta_gate {
                return Ok(InitReport {
                    applicable: false,
                    holds: false,
                    r1,
                    quantities: q,
                });
            }
            let w1 = w0 - linear_gradient(&w0, &v, law, cfg)? * eta0;
            q.insert("v_dot_w1".into(), v.dot(&w1));
            Ok(InitReport {
                applicable: true,
                holds: v.dot(&w1) >= r1,
                r1,
                quantities: q,
            })
        }
    }
}
