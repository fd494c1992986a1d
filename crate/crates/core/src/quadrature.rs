//! Gauss–Legendre rules and a globally adaptive panel integrator.
//!
//! Integrands handled here are piecewise smooth with kinks or jumps at known
//! abscissae. Callers pass those abscissae as mandatory panel breaks; inside
//! each panel a 16-point Gauss–Legendre rule is compared against the same rule
//! applied on both halves, and the panel with the largest discrepancy is
//! bisected until the summed discrepancy drops below the tolerance.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance and work limit for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl QuadratureConfig {
    pub fn new(abs_tol: f64, max_panels: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || !abs_tol.is_finite() {
            return Err(Error::config(format!("abs_tol must be positive, got {abs_tol}")));
        }
        if max_panels == 0 {
            return Err(Error::config("max_panels must be positive"));
        }
        Ok(Self { abs_tol, max_panels })
    }
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            max_panels: 4096,
        }
    }
}

/// Nodes and weights of an n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the rule by Newton iteration on P_n started from the
    /// Chebyshev-like guesses `cos(pi (i - 1/4) / (n + 1/2))`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Applies the rule on [a, b].
    pub fn integrate<const K: usize>(&self, a: f64, b: f64, f: &impl Fn(f64) -> [f64; K]) -> [f64; K] {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = [0.0; K];
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x);
            for k in 0..K {
                acc[k] += w * v[k];
            }
        }
        for a in acc.iter_mut() {
            *a *= half;
        }
        acc
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub(crate) fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral<const K: usize> {
    pub value: [f64; K],
    pub error: f64,
    pub panels: usize,
}

struct Panel<const K: usize> {
    a: f64,
    b: f64,
    left: [f64; K],
    right: [f64; K],
    err: f64,
}

fn make_panel<const K: usize>(
    rule: &GaussLegendre,
    f: &impl Fn(f64) -> [f64; K],
    a: f64,
    b: f64,
    coarse: [f64; K],
) -> Panel<K> {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, f);
    let right = rule.integrate(m, b, f);
    let mut err = 0.0f64;
    for k in 0..K {
        let e = (coarse[k] - left[k] - right[k]).abs();
        // differences at the rounding level of the panel value carry no information
        let floor = 64.0 * f64::EPSILON * (left[k].abs() + right[k].abs());
        err = err.max(if e <= floor { 0.0 } else { e });
    }
    // Panels this narrow cannot be refined further in f64.
    if (b - a).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
        err = 0.0;
    }
    Panel { a, b, left, right, err }
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, never letting a panel
/// straddle one of the interior `breaks`.
pub fn integrate_panels<const K: usize>(
    f: impl Fn(f64) -> [f64; K],
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Integral<K>> {
    let rule = gl16();
    let mut panels: Vec<Panel<K>> = Vec::with_capacity(2 * breaks.len() + 16);
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let coarse = rule.integrate(a, b, &f);
        panels.push(make_panel(rule, &f, a, b, coarse));
    }
    loop {
        let total: f64 = panels.iter().map(|p| p.err).sum();
        if total <= cfg.abs_tol {
            let mut value = [0.0; K];
            for p in &panels {
                for k in 0..K {
                    value[k] += p.left[k] + p.right[k];
                }
            }
            return Ok(Integral {
                value,
                error: total,
                panels: panels.len(),
            });
        }
        if panels.len() >= cfg.max_panels {
            return Err(Error::Quadrature {
                panels: panels.len(),
                residual: total,
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.err > acc.1 { (i, p.err) } else { acc });
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        panels.push(make_panel(rule, &f, p.a, m, p.left));
        panels.push(make_panel(rule, &f, m, p.b, p.right));
    }
}
