//! Population loss and gradients by angular quadrature in the invariant
//! plane, and a seeded Monte Carlo estimator in `R^d`.
//!
//! With `x = r (cos φ, sin φ)` in plane coordinates every expectation is
//! `Σ_k p_k (1/2π) ∫₀^{2π} f(r_k, φ) dφ`. The angular integrands jump where
//! `vᵀx` changes sign and kink (ReLU) or steepen (large weights) where
//! `wᵢᵀx = 0`; all of those angles are used as panel breaks.

use std::f64::consts::{PI, TAU};

use nalgebra::{DVector, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::law::RadialLaw;
use crate::models::ModelSpec;
use crate::plane::PlaneState;
use crate::quadrature::{integrate_panels, QuadratureConfig};

/// Norm below which the deep induced flow is treated as singular.
pub const SINGULAR_NORM: f64 = 1e-12;

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn label(vx: f64) -> f64 {
    if vx >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn angular_breaks(dirs: &[Vector2<f64>]) -> Vec<f64> {
    let mut b = vec![0.0, TAU];
    for d in dirs {
        if d.norm() == 0.0 {
            continue;
        }
        let a = d.y.atan2(d.x);
        for z in [a + 0.5 * PI, a - 0.5 * PI] {
            let z = z.rem_euclid(TAU);
            if z > 0.0 && z < TAU {
                b.push(z);
            }
        }
    }
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    b
}

/// `E f(r, x̂, y)` over the law, with the angular domain split at the zeros
/// of `vᵀx` and of every direction in `dirs`.
fn expectation<const K: usize>(
    v: &Vector2<f64>,
    dirs: &[Vector2<f64>],
    law: &RadialLaw,
    cfg: &QuadratureConfig,
    f: impl Fn(f64, Vector2<f64>, f64) -> [f64; K],
) -> Result<[f64; K]> {
    let mut all = Vec::with_capacity(dirs.len() + 1);
    all.push(*v);
    all.extend_from_slice(dirs);
    let breaks = angular_breaks(&all);
    let support = law.support();
    let integrand = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let xh = Vector2::new(c, s);
        let y = label(v.dot(&xh));
        let mut acc = [0.0; K];
        for &(r, p) in support {
            let val = f(r, xh, y);
            for k in 0..K {
                acc[k] += p * val[k];
            }
        }
        acc
    };
    let tol = QuadratureConfig {
        abs_tol: cfg.abs_tol * TAU,
        max_panels: cfg.max_panels,
    };
    let res = integrate_panels(integrand, &breaks, &tol)?;
    let mut out = res.value;
    for o in out.iter_mut() {
        *o /= TAU;
    }
    Ok(out)
}

/// `∇L(w) = −E y x / (1 + e^{y wᵀx})` for the linear predictor.
pub fn linear_gradient(
    w: &Vector2<f64>,
    v: &Vector2<f64>,
    law: &RadialLaw,
    cfg: &QuadratureConfig,
) -> Result<Vector2<f64>> {
    let g = expectation(v, &[*w], law, cfg, |r, xh, y| {
        let s = -y * r * sigmoid(-y * r * w.dot(&xh));
        [s * xh.x, s * xh.y]
    })?;
    Ok(Vector2::new(g[0], g[1]))
}

pub fn linear_loss(w: &Vector2<f64>, v: &Vector2<f64>, law: &RadialLaw, cfg: &QuadratureConfig) -> Result<f64> {
    let l = expectation(v, &[*w], law, cfg, |r, xh, y| [softplus(-y * r * w.dot(&xh))])?;
    Ok(l[0])
}

/// Gradients `(∇₁L, ∇₂L)` of the two-neuron ReLU network, with `σ′(0) = 1`.
pub fn pair_gradient(
    w1: &Vector2<f64>,
    w2: &Vector2<f64>,
    v: &Vector2<f64>,
    law: &RadialLaw,
    cfg: &QuadratureConfig,
) -> Result<[Vector2<f64>; 2]> {
    let g = expectation(v, &[*w1, *w2], law, cfg, |r, xh, y| {
        let a1 = w1.dot(&xh);
        let a2 = w2.dot(&xh);
        let phi = r * (a1.max(0.0) - a2.max(0.0));
        let s = y * r * sigmoid(-y * phi);
        let s1 = if a1 >= 0.0 { -s } else { 0.0 };
        let s2 = if a2 >= 0.0 { s } else { 0.0 };
        [s1 * xh.x, s1 * xh.y, s2 * xh.x, s2 * xh.y]
    })?;
    Ok([Vector2::new(g[0], g[1]), Vector2::new(g[2], g[3])])
}

pub fn pair_loss(
    w1: &Vector2<f64>,
    w2: &Vector2<f64>,
    v: &Vector2<f64>,
    law: &RadialLaw,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let l = expectation(v, &[*w1, *w2], law, cfg, |r, xh, y| {
        let phi = r * (w1.dot(&xh).max(0.0) - w2.dot(&xh).max(0.0));
        [softplus(-y * phi)]
    })?;
    Ok(l[0])
}

/// Population loss of the model at the state. Deep linear models are
/// evaluated at their effective weight, which determines the predictor.
pub fn loss(state: &PlaneState, model: &ModelSpec, law: &RadialLaw, cfg: &QuadratureConfig) -> Result<f64> {
    check_weights(state, model)?;
    match model {
        ModelSpec::Linear | ModelSpec::DeepLinear { .. } => linear_loss(&state.weights[0], &state.v, law, cfg),
        ModelSpec::TwoNeuronRelu => pair_loss(&state.weights[0], &state.weights[1], &state.v, law, cfg),
    }
}

fn check_weights(state: &PlaneState, model: &ModelSpec) -> Result<()> {
    if state.weights.len() != model.weight_count() {
        return Err(Error::config(format!(
            "{} model needs {} weight vector(s), state has {}",
            model.name(),
            model.weight_count(),
            state.weights.len()
        )));
    }
    Ok(())
}

pub fn grad_linear(state: &PlaneState, law: &RadialLaw, cfg: &QuadratureConfig) -> Result<Vector2<f64>> {
    check_weights(state, &ModelSpec::Linear)?;
    linear_gradient(&state.weights[0], &state.v, law, cfg)
}

pub fn grad_two_neuron(state: &PlaneState, law: &RadialLaw, cfg: &QuadratureConfig) -> Result<[Vector2<f64>; 2]> {
    check_weights(state, &ModelSpec::TwoNeuronRelu)?;
    pair_gradient(&state.weights[0], &state.weights[1], &state.v, law, cfg)
}

/// `−‖w‖^{2−2/N} (g + (N−1) w̄ w̄ᵀ g)` for a given single-layer gradient `g`.
pub fn induced_velocity(w_e: &Vector2<f64>, depth: usize, g: &Vector2<f64>) -> Result<Vector2<f64>> {
    if depth == 0 {
        return Err(Error::config("depth must be at least 1"));
    }
    if depth == 1 {
        return Ok(-g);
    }
    let n = w_e.norm();
    if n < SINGULAR_NORM {
        return Err(Error::Singular(format!(
            "effective weight norm {n:e} is below {SINGULAR_NORM:e} for depth {depth}"
        )));
    }
    let nf = depth as f64;
    let wb = w_e / n;
    let scale = n.powf(2.0 - 2.0 / nf);
    Ok(-(g + wb * ((nf - 1.0) * wb.dot(g))) * scale)
}

/// Time derivative of the effective weight under the induced flow.
pub fn grad_deep_effective(
    w_e: &Vector2<f64>,
    depth: usize,
    v: &Vector2<f64>,
    law: &RadialLaw,
    cfg: &QuadratureConfig,
) -> Result<Vector2<f64>> {
    let g = linear_gradient(w_e, v, law, cfg)?;
    induced_velocity(w_e, depth, &g)
}

/// `N(w) = −wᵀ∇L(w)`; for the ReLU pair `−w₁ᵀ∇₁L − w₂ᵀ∇₂L`; for deep
/// models the single-layer value at the effective weight.
pub fn n_of_w(state: &PlaneState, model: &ModelSpec, law: &RadialLaw, cfg: &QuadratureConfig) -> Result<f64> {
    check_weights(state, model)?;
    match model {
        ModelSpec::Linear | ModelSpec::DeepLinear { .. } => {
            let w = &state.weights[0];
            if w.norm() == 0.0 {
                return Ok(0.0);
            }
            Ok(-w.dot(&linear_gradient(w, &state.v, law, cfg)?))
        }
        ModelSpec::TwoNeuronRelu => {
            let [g1, g2] = pair_gradient(&state.weights[0], &state.weights[1], &state.v, law, cfg)?;
            Ok(-state.weights[0].dot(&g1) - state.weights[1].dot(&g2))
        }
    }
}

/// Sample mean and per-coordinate standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    /// One block per weight vector (for deep models: the effective gradient).
    pub mean: Vec<DVector<f64>>,
    pub stderr: Vec<DVector<f64>>,
    pub samples: usize,
}

/// Minimum sample count accepted by the Monte Carlo estimators.
pub const MC_MIN_SAMPLES: usize = 1000;
const MC_BATCH: usize = 10_000;

struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn merge(&mut self, other: &Moments) {
        let n = self.count + other.count;
        if n == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n as f64;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n as f64;
        }
        self.count = n;
    }
}

/// Parallel sample moments of `contrib(x)`; batch `b` uses stream `b` of
/// the seeded generator and batches are merged in index order, so the
/// result does not depend on the thread count.
fn mc_moments(
    law: &RadialLaw,
    dim: usize,
    n: usize,
    seed: u64,
    k: usize,
    contrib: impl Fn(&[f64], &mut [f64]) + Sync,
) -> Result<Moments> {
    law.check_dimension(dim)?;
    if n < MC_MIN_SAMPLES {
        return Err(Error::config(format!(
            "Monte Carlo needs at least {MC_MIN_SAMPLES} samples, got {n}"
        )));
    }
    let batches = n.div_ceil(MC_BATCH);
    let parts: Vec<Moments> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = MC_BATCH.min(n - b * MC_BATCH);
            let mut x = vec![0.0; dim];
            let mut out = vec![0.0; k];
            let mut m = Moments {
                count: 0,
                mean: vec![0.0; k],
                m2: vec![0.0; k],
            };
            for i in 0..count {
                law.draw_into(&mut rng, &mut x);
                contrib(&x, &mut out);
                let c = (i + 1) as f64;
                for j in 0..k {
                    let delta = out[j] - m.mean[j];
                    m.mean[j] += delta / c;
                    m.m2[j] += delta * (out[j] - m.mean[j]);
                }
                m.count += 1;
            }
            m
        })
        .collect();
    let mut total = Moments {
        count: 0,
        mean: vec![0.0; k],
        m2: vec![0.0; k],
    };
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

fn check_ambient(model: &ModelSpec, weights: &[DVector<f64>], v: &DVector<f64>) -> Result<(usize, DVector<f64>)> {
    model.validate()?;
    if weights.len() != model.weight_count() {
        return Err(Error::config(format!(
            "{} model needs {} weight vector(s), got {}",
            model.name(),
            model.weight_count(),
            weights.len()
        )));
    }
    let d = v.len();
    if weights.iter().any(|w| w.len() != d) {
        return Err(Error::config("weights and target have different dimensions"));
    }
    let vn = v.norm();
    if !(vn > 0.0) {
        return Err(Error::config("target must be nonzero"));
    }
    Ok((d, v / vn))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample gradient contributions in `R^d`, written into `out` (one block
/// of `d` entries per weight vector).
fn sample_gradient(model: &ModelSpec, w: &[&[f64]], v: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let y = label(dot(v, x));
    match model {
        ModelSpec::Linear | ModelSpec::DeepLinear { .. } => {
            let s = -y * sigmoid(-y * dot(w[0], x));
            for i in 0..d {
                out[i] = s * x[i];
            }
        }
        ModelSpec::TwoNeuronRelu => {
            let a1 = dot(w[0], x);
            let a2 = dot(w[1], x);
            let s = y * sigmoid(-y * (a1.max(0.0) - a2.max(0.0)));
            let s1 = if a1 >= 0.0 { -s } else { 0.0 };
            let s2 = if a2 >= 0.0 { s } else { 0.0 };
            for i in 0..d {
                out[i] = s1 * x[i];
                out[d + i] = s2 * x[i];
            }
        }
    }
}

/// Monte Carlo estimate of the population gradient in `R^d`. For deep
/// linear models `weights` holds the effective weight and the estimate is
/// of `‖w‖^{2−2/N}(g + (N−1) w̄ w̄ᵀ g)`, the negative induced velocity.
pub fn monte_carlo_grad(
    model: &ModelSpec,
    weights: &[DVector<f64>],
    v: &DVector<f64>,
    law: &RadialLaw,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (d, v) = check_ambient(model, weights, v)?;
    let blocks = model.weight_count();
    let wslices: Vec<&[f64]> = weights.iter().map(|w| w.as_slice()).collect();
    let deep = match model {
        ModelSpec::DeepLinear { depth, .. } if *depth >= 2 => {
            let nrm = weights[0].norm();
            if nrm < SINGULAR_NORM {
                return Err(Error::Singular("effective weight is zero".into()));
            }
            let nf = *depth as f64;
            Some((weights[0].clone() / nrm, nrm.powf(2.0 - 2.0 / nf), nf - 1.0))
        }
        _ => None,
    };
    let m = mc_moments(law, d, n, seed, blocks * d, |x, out| {
        sample_gradient(model, &wslices, v.as_slice(), x, out);
        if let Some((wb, scale, extra)) = &deep {
            let proj = dot(wb.as_slice(), out) * extra;
            for i in 0..d {
                out[i] = scale * (out[i] + proj * wb[i]);
            }
        }
    })?;
    let nf = m.count as f64;
    let mut mean = Vec::with_capacity(blocks);
    let mut stderr = Vec::with_capacity(blocks);
    for b in 0..blocks {
        mean.push(DVector::from_column_slice(&m.mean[b * d..(b + 1) * d]));
        stderr.push(DVector::from_iterator(
            d,
            m.m2[b * d..(b + 1) * d].iter().map(|&m2| (m2 / (nf - 1.0) / nf).sqrt()),
        ));
    }
    Ok(McEstimate {
        mean,
        stderr,
        samples: m.count,
    })
}

/// Monte Carlo estimate of `N(w)` with its standard error.
pub fn monte_carlo_n(
    model: &ModelSpec,
    weights: &[DVector<f64>],
    v: &DVector<f64>,
    law: &RadialLaw,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (d, v) = check_ambient(model, weights, v)?;
    let blocks = model.weight_count();
    let wslices: Vec<&[f64]> = weights.iter().map(|w| w.as_slice()).collect();
    let mut scratch_len = blocks * d;
    scratch_len = scratch_len.max(1);
    let m = mc_moments(law, d, n, seed, 1, |x, out| {
        let mut g = vec![0.0; scratch_len];
        sample_gradient(model, &wslices, v.as_slice(), x, &mut g);
        out[0] = -(0..blocks).map(|b| dot(wslices[b], &g[b * d..(b + 1) * d])).sum::<f64>();
    })?;
    let nf = m.count as f64;
    Ok((m.mean[0], (m.m2[0] / (nf - 1.0) / nf).sqrt()))
}

/// Minibatch gradient in plane coordinates from `batch` fresh samples.
pub(crate) fn minibatch_gradient<R: Rng + ?Sized>(
    model: &ModelSpec,
    weights: &[Vector2<f64>],
    v: &Vector2<f64>,
    law: &RadialLaw,
    batch: usize,
    rng: &mut R,
) -> Vec<Vector2<f64>> {
    let blocks = model.weight_count();
    let w: Vec<[f64; 2]> = weights.iter().map(|w| [w.x, w.y]).collect();
    let ws: Vec<&[f64]> = w.iter().map(|w| &w[..]).collect();
    let vs = [v.x, v.y];
    let mut acc = vec![0.0; 2 * blocks];
    let mut out = vec![0.0; 2 * blocks];
    let mut x = [0.0; 2];
    for _ in 0..batch {
        law.draw_into(rng, &mut x);
        sample_gradient(model, &ws, &vs, &x, &mut out);
        for (a, o) in acc.iter_mut().zip(&out) {
            *a += o;
        }
    }
    let b = batch as f64;
    (0..blocks).map(|i| Vector2::new(acc[2 * i] / b, acc[2 * i + 1] / b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::new(1e-12, 4096).unwrap()
    }

    #[test]
    fn stable_scalar_helpers() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-16);
        assert_abs_diff_eq!(softplus(-50.0), (-50f64).exp(), epsilon = 1e-30);
        assert_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn zero_weight_loss_is_ln2() {
        let law = RadialLaw::unit_circle();
        let v = Vector2::new(0.0, 1.0);
        let l = linear_loss(&Vector2::zeros(), &v, &law, &cfg()).unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-14);
        let w = Vector2::new(0.4, 0.3);
        assert_abs_diff_eq!(pair_loss(&w, &w, &v, &law, &cfg()).unwrap(), 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn loss_along_target_matches_one_dimensional_quadrature() {
        // E ln(1+e^{-r|cos φ|}) by a fine midpoint rule on [0, π/2]
        let law = RadialLaw::unit_circle();
        let v = Vector2::new(1.0, 0.0);
        let mut prev = f64::INFINITY;
        for r in [10.0, 50.0, 100.0] {
            let m = 400_000;
            let h = 0.5 * PI / m as f64;
            let oracle: f64 =
                (0..m).map(|i| softplus(-r * ((i as f64 + 0.5) * h).cos())).sum::<f64>() * h * 2.0 / PI;
            let l = linear_loss(&(v * r), &v, &law, &cfg()).unwrap();
            assert!((l - oracle).abs() < 1e-9, "r={r}: {l} vs {oracle}");
            assert!(l < prev);
            // two crossings of the decision line, each contributing π²/(6r)
            assert!((l * r / (PI / 6.0) - 1.0).abs() < 2.0 / r);
            prev = l;
        }
    }

    #[test]
    fn gradient_at_origin_is_half_c1_along_target() {
        let law = RadialLaw::unit_circle();
        let v = Vector2::new(0.0, 1.0);
        let g = linear_gradient(&Vector2::zeros(), &v, &law, &cfg()).unwrap();
        assert_abs_diff_eq!(g.x, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.y, -1.0 / PI, epsilon = 1e-14);
    }

    #[test]
    fn gradient_on_target_ray_is_parallel() {
        let law = RadialLaw::gaussian2d();
        let v = Vector2::new(0.6, 0.8);
        let g = linear_gradient(&(v * 3.0), &v, &law, &cfg()).unwrap();
        assert!((g.x * v.y - g.y * v.x).abs() < 1e-13);
        assert!(g.dot(&v) < 0.0);
    }

    #[test]
    fn tangential_identity_at_right_angle() {
        let law = RadialLaw::unit_circle();
        let v = Vector2::new(0.0, 1.0);
        let w = Vector2::new(2.0, 0.0);
        let g = linear_gradient(&w, &v, &law, &cfg()).unwrap();
        let wb = w.normalize();
        let tangential = -(v - wb * wb.dot(&v)).dot(&g);
        assert_abs_diff_eq!(tangential, 1.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn n_of_w_signs() {
        let law = RadialLaw::unit_circle();
        let v = Vector2::new(0.0, 1.0);
        let s = |w: Vector2<f64>| PlaneState::new(v, vec![w]).unwrap();
        let c = cfg();
        assert!(n_of_w(&s(Vector2::new(3.0, 0.0)), &ModelSpec::Linear, &law, &c).unwrap() <= 0.0);
        assert!(n_of_w(&s(Vector2::new(0.0, 0.1)), &ModelSpec::Linear, &law, &c).unwrap() > 0.0);
        assert_eq!(n_of_w(&s(Vector2::zeros()), &ModelSpec::Linear, &law, &c).unwrap(), 0.0);
    }

    #[test]
    fn induced_velocity_depth_one_and_singularity() {
        let g = Vector2::new(0.1, -0.2);
        assert_eq!(induced_velocity(&Vector2::new(1.0, 1.0), 1, &g).unwrap(), -g);
        assert!(matches!(
            induced_velocity(&Vector2::zeros(), 3, &g),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn pair_signs_match_target() {
        let law = RadialLaw::unit_circle();
        let v = Vector2::new(1.0, 0.0);
        let [g1, g2] = pair_gradient(&Vector2::new(3.0, 4.0), &Vector2::new(4.0, -3.0), &v, &law, &cfg()).unwrap();
        assert!(v.dot(&g1) < 0.0);
        assert!(v.dot(&g2) > 0.0);
    }

    #[test]
    fn monte_carlo_rejects_small_samples_and_is_thread_independent() {
        let law = RadialLaw::unit_circle();
        let v = DVector::from_column_slice(&[0.0, 1.0]);
        let w = vec![DVector::from_column_slice(&[0.6, -0.8])];
        assert!(monte_carlo_grad(&ModelSpec::Linear, &w, &v, &law, 0, 1).is_err());
        let a = monte_carlo_grad(&ModelSpec::Linear, &w, &v, &law, 25_000, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| monte_carlo_grad(&ModelSpec::Linear, &w, &v, &law, 25_000, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_n_agrees_with_quadrature() {
        let law = RadialLaw::unit_circle();
        let v2 = Vector2::new(0.0, 1.0);
        let w2 = Vector2::new(0.6, -0.8);
        let q = n_of_w(&PlaneState::new(v2, vec![w2]).unwrap(), &ModelSpec::Linear, &law, &cfg()).unwrap();
        let (m, se) = monte_carlo_n(
            &ModelSpec::Linear,
            &[DVector::from_column_slice(&[0.6, -0.8])],
            &DVector::from_column_slice(&[0.0, 1.0]),
            &law,
            200_000,
            9,
        )
        .unwrap();
        assert!((m - q).abs() < 4.0 * se, "{m} ± {se} vs {q}");
    }
}
