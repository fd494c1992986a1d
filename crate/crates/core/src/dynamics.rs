//! Gradient flow (fixed-step RK4) and gradient descent in plane coordinates.

use nalgebra::{DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{induced_velocity, linear_gradient, linear_loss, minibatch_gradient, pair_gradient, pair_loss};
use crate::law::RadialLaw;
use crate::models::{balanced_factorization, layerwise_gradients_from, LayerStack, ModelSpec};
use crate::plane::{cos_angle, side_of, PlaneState};
use crate::quadrature::QuadratureConfig;
use crate::schedule::Schedule;

/// Which steps are written to the trajectory. The first and last steps are
/// always recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStride {
    Every(usize),
    /// Steps `⌈10^{j/per_decade}⌉`, plus a uniform grid of at least
    /// `min_records` points.
    Geometric { per_decade: usize, min_records: usize },
}

impl Default for RecordStride {
    fn default() -> Self {
        RecordStride::Geometric {
            per_decade: 40,
            min_records: 400,
        }
    }
}

impl RecordStride {
    pub fn steps(&self, total: usize) -> Vec<usize> {
        let mut s = vec![0, total];
        match *self {
            RecordStride::Every(m) => {
                let m = m.max(1);
                s.extend((0..=total).step_by(m));
            }
            RecordStride::Geometric { per_decade, min_records } => {
                let pd = per_decade.max(1) as f64;
                let mut j = 0u32;
                loop {
                    let k = 10f64.powf(j as f64 / pd).ceil() as usize;
                    if k > total {
                        break;
                    }
                    s.push(k);
                    j += 1;
                }
                if min_records > 0 {
                    let gap = total.div_ceil(min_records).max(1);
                    s.extend((0..=total).step_by(gap));
                }
            }
        }
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// RK4 step; `None` selects `10⁻³ / max(1, c₀)`.
    pub step: Option<f64>,
    pub stride: RecordStride,
    /// Re-run at half the step and store the change in the final cosines.
    pub audit: bool,
    pub quad: QuadratureConfig,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step: None,
            stride: RecordStride::default(),
            audit: true,
            quad: QuadratureConfig::default(),
        }
    }
}

impl IntegratorConfig {
    pub fn step_for(&self, law: &RadialLaw) -> f64 {
        self.step.unwrap_or(1e-3 / law.moment_constants().c0.max(1.0))
    }
}

/// Whether records are indexed by continuous time or by step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    Time,
    Step,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Continuous time; for GD the elapsed `Σ η_k`.
    pub time: f64,
    pub step: usize,
    /// Plane coordinates; for deep models the effective weight.
    pub weights: Vec<Vector2<f64>>,
    pub cos: Vec<f64>,
    pub norms: Vec<f64>,
    pub loss: f64,
    /// `N(w)` (total over neurons for the ReLU pair).
    pub n_value: f64,
    /// Rate of the step leaving this record (GD only).
    pub eta: Option<f64>,
    pub balance_residual: Option<f64>,
}

impl Record {
    pub fn clock_value(&self, clock: Clock) -> f64 {
        match clock {
            Clock::Time => self.time,
            Clock::Step => self.step as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Full,
    Minibatch { size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub step: Option<f64>,
    pub schedule: Option<Schedule>,
    pub batch: Option<Batch>,
    /// `max_i |cosθᵢ(t_end; h) − cosθᵢ(t_end; h/2)|`
    pub audit_delta: Option<f64>,
    /// Start on the ray opposite to the target.
    pub degenerate_ray: bool,
    pub explicit_layers: bool,
    pub final_layers: Option<LayerStack>,
    /// First GD step at which some neuron changed side of the line through `v`.
    pub halfplane_exit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: ModelSpec,
    pub law: RadialLaw,
    pub v: Vector2<f64>,
    pub clock: Clock,
    pub records: Vec<Record>,
    pub meta: RunMeta,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectories are never empty")
    }

    /// CSV with header `t_or_n,cos_theta1,cos_theta2,norm1,norm2,loss,N,eta`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_or_n,cos_theta1,cos_theta2,norm1,norm2,loss,N,eta\n");
        let opt = |x: Option<&f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let t = match self.clock {
                Clock::Time => r.time.to_string(),
                Clock::Step => r.step.to_string(),
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                t,
                opt(r.cos.first()),
                opt(r.cos.get(1)),
                opt(r.norms.first()),
                opt(r.norms.get(1)),
                r.loss,
                r.n_value,
                opt(r.eta.as_ref())
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
enum System<'a> {
    Linear,
    Induced(usize),
    Pair,
    Layers(&'a LayerStack),
}

struct Ctx<'a> {
    sys: System<'a>,
    v: Vector2<f64>,
    law: &'a RadialLaw,
    quad: QuadratureConfig,
}

impl Ctx<'_> {
    fn weights(&self, x: &DVector<f64>) -> Vec<Vector2<f64>> {
        match self.sys {
            System::Linear | System::Induced(_) => vec![Vector2::new(x[0], x[1])],
            System::Pair => vec![Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3])],
            System::Layers(t) => {
                let w = t.from_flat(x).effective_weight();
                vec![Vector2::new(w[0], w[1])]
            }
        }
    }

    fn velocity(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self.sys {
            System::Linear => {
                let g = linear_gradient(&Vector2::new(x[0], x[1]), &self.v, self.law, &self.quad)?;
                Ok(DVector::from_column_slice(&[-g.x, -g.y]))
            }
            System::Induced(depth) => {
                let w = Vector2::new(x[0], x[1]);
                let g = linear_gradient(&w, &self.v, self.law, &self.quad)?;
                let u = induced_velocity(&w, depth, &g)?;
                Ok(DVector::from_column_slice(&[u.x, u.y]))
            }
            System::Pair => {
                let [g1, g2] =
                    pair_gradient(&Vector2::new(x[0], x[1]), &Vector2::new(x[2], x[3]), &self.v, self.law, &self.quad)?;
                Ok(DVector::from_column_slice(&[-g1.x, -g1.y, -g2.x, -g2.y]))
            }
            System::Layers(t) => {
                let stack = t.from_flat(x);
                let we = stack.effective_weight();
                let g = linear_gradient(&Vector2::new(we[0], we[1]), &self.v, self.law, &self.quad)?;
                let grads = layerwise_gradients_from(&stack, &DVector::from_column_slice(&[g.x, g.y]))?;
                let mut out = DVector::zeros(x.len());
                let mut k = 0;
                for gj in grads {
                    for (o, gv) in out.rows_mut(k, gj.len()).iter_mut().zip(gj.iter()) {
                        *o = -gv;
                    }
                    k += gj.len();
                }
                Ok(out)
            }
        }
    }

    fn rk4(&self, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        let k1 = self.velocity(x)?;
        let k2 = self.velocity(&(x + &k1 * (0.5 * h)))?;
        let k3 = self.velocity(&(x + &k2 * (0.5 * h)))?;
        let k4 = self.velocity(&(x + &k3 * h))?;
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        self.check_singular(&next)?;
        Ok(next)
    }

    fn check_singular(&self, x: &DVector<f64>) -> Result<()> {
        let depth = match self.sys {
            System::Induced(d) => d,
            System::Layers(t) => t.depth(),
            _ => return Ok(()),
        };
        if depth >= 2 {
            let n = self.weights(x)[0].norm();
            if n < crate::gradient::SINGULAR_NORM {
                return Err(Error::Singular(format!(
                    "effective weight norm fell to {n:e}; integration aborted"
                )));
            }
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Singular("state became non-finite".into()));
        }
        Ok(())
    }

    /// Integrates over `[0, tau]` with `m = ⌈tau/h⌉` equal steps.
    fn advance(&self, x: &DVector<f64>, tau: f64, h: f64) -> Result<DVector<f64>> {
        if tau <= 0.0 {
            return Ok(x.clone());
        }
        let m = (tau / h).ceil().max(1.0) as usize;
        let hh = tau / m as f64;
        let mut y = x.clone();
        for _ in 0..m {
            y = self.rk4(&y, hh)?;
        }
        Ok(y)
    }

    fn n_value(&self, ws: &[Vector2<f64>]) -> Result<f64> {
        match self.sys {
            System::Pair => {
                let [g1, g2] = pair_gradient(&ws[0], &ws[1], &self.v, self.law, &self.quad)?;
                Ok(-ws[0].dot(&g1) - ws[1].dot(&g2))
            }
            _ => {
                if ws[0].norm() == 0.0 {
                    return Ok(0.0);
                }
                Ok(-ws[0].dot(&linear_gradient(&ws[0], &self.v, self.law, &self.quad)?))
            }
        }
    }

    fn record(&self, x: &DVector<f64>, time: f64, step: usize, eta: Option<f64>) -> Result<Record> {
        let ws = self.weights(x);
        let loss = match self.sys {
            System::Pair => pair_loss(&ws[0], &ws[1], &self.v, self.law, &self.quad)?,
            _ => linear_loss(&ws[0], &self.v, self.law, &self.quad)?,
        };
        let balance_residual = match self.sys {
            System::Layers(t) => Some(t.from_flat(x).balance_residual()),
            _ => None,
        };
        Ok(Record {
            time,
            step,
            cos: ws.iter().map(|w| cos_angle(w, &self.v)).collect(),
            norms: ws.iter().map(|w| w.norm()).collect(),
            n_value: self.n_value(&ws)?,
            loss,
            eta,
            balance_residual,
            weights: ws,
        })
    }
}

fn flatten(ws: &[Vector2<f64>]) -> DVector<f64> {
    DVector::from_iterator(2 * ws.len(), ws.iter().flat_map(|w| [w.x, w.y]))
}

fn check_start(model: &ModelSpec, start: &PlaneState) -> Result<()> {
    model.validate()?;
    if start.weights.len() != model.weight_count() {
        return Err(Error::config(format!(
            "{} model needs {} weight vector(s), start has {}",
            model.name(),
            model.weight_count(),
            start.weights.len()
        )));
    }
    if let ModelSpec::DeepLinear { depth, .. } = model {
        if *depth >= 2 && start.weights[0].norm() < crate::gradient::SINGULAR_NORM {
            return Err(Error::config("deep flow cannot start from a zero effective weight"));
        }
    }
    Ok(())
}

fn is_degenerate_ray(model: &ModelSpec, start: &PlaneState) -> bool {
    !matches!(model, ModelSpec::TwoNeuronRelu) && {
        let w = start.weights[0];
        w.norm() > 0.0 && side_of(&start.v, &w) == 0.0 && w.dot(&start.v) < 0.0
    }
}

fn run_flow(ctx: &Ctx<'_>, x0: DVector<f64>, t_end: f64, h: f64, stride: &RecordStride) -> Result<(Vec<Record>, DVector<f64>)> {
    let steps = (t_end / h).round().max(1.0) as usize;
    let hh = t_end / steps as f64;
    let marks = stride.steps(steps);
    let mut records = Vec::with_capacity(marks.len());
    let mut next_mark = 0;
    let mut x = x0;
    for k in 0..=steps {
        if next_mark < marks.len() && marks[next_mark] == k {
            records.push(ctx.record(&x, k as f64 * hh, k, None)?);
            next_mark += 1;
        }
        if k < steps {
            x = ctx.rk4(&x, hh)?;
        }
    }
    Ok((records, x))
}

fn final_only(ctx: &Ctx<'_>, x0: &DVector<f64>, t_end: f64, h: f64) -> Result<Vec<f64>> {
    let steps = (t_end / h).round().max(1.0) as usize;
    let x = ctx.advance(x0, t_end, t_end / steps as f64)?;
    Ok(ctx.weights(&x).iter().map(|w| cos_angle(w, &ctx.v)).collect())
}

fn audit(ctx: &Ctx<'_>, x0: &DVector<f64>, t_end: f64, h: f64, last: &Record) -> Result<f64> {
    let fine = final_only(ctx, x0, t_end, 0.5 * h)?;
    Ok(fine
        .iter()
        .zip(&last.cos)
        .map(|(a, b)| (a - b).abs())
        .filter(|d| !d.is_nan())
        .fold(0.0, f64::max))
}

/// Gradient flow from `start` over `[0, t_end]`. Deep models follow the
/// induced flow of the effective weight; see [`flow_layers`] for the
/// explicit multilayer system.
pub fn flow(
    model: &ModelSpec,
    start: &PlaneState,
    law: &RadialLaw,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_start(model, start)?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::config(format!("t_end must be positive, got {t_end}")));
    }
    let sys = match model {
        ModelSpec::Linear => System::Linear,
        ModelSpec::DeepLinear { depth, .. } => System::Induced(*depth),
        ModelSpec::TwoNeuronRelu => System::Pair,
    };
    let ctx = Ctx {
        sys,
        v: start.v,
        law,
        quad: cfg.quad,
    };
    let h = cfg.step_for(law);
    let x0 = flatten(&start.weights);
    let (records, _) = run_flow(&ctx, x0.clone(), t_end, h, &cfg.stride)?;
    let audit_delta = if cfg.audit {
        Some(audit(&ctx, &x0, t_end, h, records.last().unwrap())?)
    } else {
        None
    };
    Ok(Trajectory {
        model: model.clone(),
        law: law.clone(),
        v: start.v,
        clock: Clock::Time,
        records,
        meta: RunMeta {
            step: Some(h),
            schedule: None,
            batch: None,
            audit_delta,
            degenerate_ray: is_degenerate_ray(model, start),
            explicit_layers: false,
            final_layers: None,
            halfplane_exit: None,
        },
    })
}

/// Gradient flow on every layer matrix of a deep linear network whose
/// inputs are plane coordinates (`widths[0] = 2`).
pub fn flow_layers(
    stack: &LayerStack,
    v: &Vector2<f64>,
    law: &RadialLaw,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if stack.input_dim() != 2 {
        return Err(Error::config("explicit layer flow runs in plane coordinates; input width must be 2"));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::config(format!("t_end must be positive, got {t_end}")));
    }
    let ctx = Ctx {
        sys: System::Layers(stack),
        v: *v,
        law,
        quad: cfg.quad,
    };
    let h = cfg.step_for(law);
    let x0 = stack.to_flat();
    let (records, xf) = run_flow(&ctx, x0.clone(), t_end, h, &cfg.stride)?;
    let audit_delta = if cfg.audit {
        Some(audit(&ctx, &x0, t_end, h, records.last().unwrap())?)
    } else {
        None
    };
    Ok(Trajectory {
        model: ModelSpec::deep_with_widths(stack.depth(), stack.widths())?,
        law: law.clone(),
        v: *v,
        clock: Clock::Time,
        records,
        meta: RunMeta {
            step: Some(h),
            schedule: None,
            batch: None,
            audit_delta,
            degenerate_ray: false,
            explicit_layers: true,
            final_layers: Some(stack.from_flat(&xf)),
            halfplane_exit: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub stride: RecordStride,
    pub quad: QuadratureConfig,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            stride: RecordStride::default(),
            quad: QuadratureConfig::default(),
        }
    }
}

/// Gradient descent `w(n+1) = w(n) − η_n ∇L(w(n))` for `steps` steps.
/// Full batch uses quadrature gradients; minibatch mode draws fresh samples
/// every step. Deep models update every layer of a balanced factorization of
/// the start.
pub fn gd(
    model: &ModelSpec,
    start: &PlaneState,
    law: &RadialLaw,
    schedule: &Schedule,
    steps: usize,
    batch: &Batch,
    cfg: &GdConfig,
) -> Result<Trajectory> {
    check_start(model, start)?;
    let schedule = schedule.validated()?;
    if steps == 0 {
        return Err(Error::config("gd needs at least one step"));
    }
    let mut rng = match batch {
        Batch::Full => None,
        Batch::Minibatch { size, seed } => {
            if *size == 0 {
                return Err(Error::config("minibatch size must be positive"));
            }
            law.check_dimension(2)?;
            Some(ChaCha8Rng::seed_from_u64(*seed))
        }
    };
    let template = match model {
        ModelSpec::DeepLinear { depth, widths } => {
            if widths[0] != 2 {
                return Err(Error::config("deep gd runs in plane coordinates; input width must be 2"));
            }
            let w = start.weights[0];
            Some(balanced_factorization(&DVector::from_column_slice(&[w.x, w.y]), *depth, widths)?)
        }
        _ => None,
    };
    let sys = match (&template, model) {
        (Some(t), _) => System::Layers(t),
        (None, ModelSpec::TwoNeuronRelu) => System::Pair,
        _ => System::Linear,
    };
    let ctx = Ctx {
        sys,
        v: start.v,
        law,
        quad: cfg.quad,
    };
    let mut x = match &template {
        Some(t) => t.to_flat(),
        None => flatten(&start.weights),
    };
    let sides0: Vec<f64> = start.weights.iter().map(|w| side_of(&start.v, w).signum()).collect();
    let mut halfplane_exit = None;
    let marks = cfg.stride.steps(steps);
    let mut next_mark = 0;
    let mut records = Vec::with_capacity(marks.len());
    let mut time = 0.0;
    for n in 0..=steps {
        let eta = schedule.rate(n);
        if next_mark < marks.len() && marks[next_mark] == n {
            records.push(ctx.record(&x, time, n, Some(eta))?);
            next_mark += 1;
        }
        if n == steps {
            break;
        }
        let ws = ctx.weights(&x);
        let grads: Vec<Vector2<f64>> = match (&mut rng, sys) {
            (None, System::Pair) => pair_gradient(&ws[0], &ws[1], &ctx.v, law, &ctx.quad)?.to_vec(),
            (None, _) => vec![linear_gradient(&ws[0], &ctx.v, law, &ctx.quad)?],
            (Some(r), System::Pair) => minibatch_gradient(model, &ws, &ctx.v, law, batch_size(batch), r),
            (Some(r), _) => minibatch_gradient(&ModelSpec::Linear, &ws, &ctx.v, law, batch_size(batch), r),
        };
        match sys {
            System::Layers(t) => {
                let stack = t.from_flat(&x);
                let lg = layerwise_gradients_from(&stack, &DVector::from_column_slice(&[grads[0].x, grads[0].y]))?;
                let mut k = 0;
                for gj in lg {
                    for (xi, gv) in x.rows_mut(k, gj.len()).iter_mut().zip(gj.iter()) {
                        *xi -= eta * gv;
                    }
                    k += gj.len();
                }
            }
            _ => {
                x -= flatten(&grads) * eta;
            }
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Singular(format!("iterate became non-finite at step {}", n + 1)));
        }
        time += eta;
        if halfplane_exit.is_none() && matches!(sys, System::Pair) {
            let now = ctx.weights(&x);
            if now.iter().zip(&sides0).any(|(w, s0)| side_of(&ctx.v, w).signum() != *s0) {
                halfplane_exit = Some(n + 1);
            }
        }
    }
    Ok(Trajectory {
        model: model.clone(),
        law: law.clone(),
        v: start.v,
        clock: Clock::Step,
        records,
        meta: RunMeta {
            step: None,
            schedule: Some(schedule),
            batch: Some(batch.clone()),
            audit_delta: None,
            degenerate_ray: is_degenerate_ray(model, start),
            explicit_layers: template.is_some(),
            final_layers: template.as_ref().map(|t| t.from_flat(&x)),
            halfplane_exit,
        },
    })
}

fn batch_size(b: &Batch) -> usize {
    match b {
        Batch::Full => 0,
        Batch::Minibatch { size, .. } => *size,
    }
}

/// Time `T` at which `N(w(T)) = 0` on a flow trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSwitch {
    pub t: f64,
    pub w_at_t: Vector2<f64>,
    pub theta_at_t: f64,
    pub n_at_t: f64,
    pub found: bool,
}

/// Locates the first zero of `t ↦ N(w(t))` by bisection, re-integrating
/// the flow from the last record before the sign change and evaluating `N`
/// by quadrature. Linear and deep (effective-weight) flows only.
pub fn find_phase_switch(traj: &Trajectory, cfg: &IntegratorConfig) -> Result<PhaseSwitch> {
    if traj.clock != Clock::Time {
        return Err(Error::config("phase switch is defined for flow trajectories"));
    }
    let sys = match &traj.model {
        ModelSpec::Linear => System::Linear,
        ModelSpec::DeepLinear { depth, .. } => System::Induced(*depth),
        ModelSpec::TwoNeuronRelu => return Err(Error::config("phase switch is defined for linear and deep models")),
    };
    let ctx = Ctx {
        sys,
        v: traj.v,
        law: &traj.law,
        quad: cfg.quad,
    };
    let make = |t: f64, w: Vector2<f64>, n: f64, found: bool| PhaseSwitch {
        t,
        w_at_t: w,
        theta_at_t: crate::plane::angle(&w, &traj.v),
        n_at_t: n,
        found,
    };
    let first = &traj.records[0];
    if first.n_value >= 0.0 {
        return Ok(make(first.time, first.weights[0], first.n_value, true));
    }
    let Some(k) = traj.records.iter().position(|r| r.n_value >= 0.0) else {
        let last = traj.last();
        return Ok(make(last.time, last.weights[0], last.n_value, false));
    };
    let base = &traj.records[k - 1];
    let x0 = flatten(&base.weights);
    let h = cfg.step_for(&traj.law);
    let (mut lo, mut hi) = (0.0, traj.records[k].time - base.time);
    let mut best = (hi, traj.records[k].weights[0], traj.records[k].n_value);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let w = ctx.weights(&ctx.advance(&x0, mid, h)?)[0];
        let n = ctx.n_value(&[w])?;
        if n.abs() < best.2.abs() {
            best = (mid, w, n);
        }
        if n.abs() < 1e-10 || hi - lo < 1e-15 {
            break;
        }
        if n < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(make(base.time + best.0, best.1, best.2, best.2.abs() < 1e-8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::linear_gradient;

    fn lin_start(w: [f64; 2]) -> PlaneState {
        PlaneState::new(Vector2::new(0.0, 1.0), vec![Vector2::new(w[0], w[1])]).unwrap()
    }

    #[test]
    fn stride_always_contains_endpoints() {
        let s = RecordStride::Every(7).steps(20);
        assert_eq!(s.first(), Some(&0));
        assert_eq!(s.last(), Some(&20));
        let g = RecordStride::Geometric {
            per_decade: 10,
            min_records: 0,
        }
        .steps(1000);
        assert!(g.contains(&1) && g.contains(&10) && g.contains(&100) && g.contains(&1000));
        assert!(g.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn rk4_matches_exact_solution_on_target_ray() {
        // On the ray w = r v the flow is 1D: ṙ = E|x₁|/(1+e^{r|x₁|}) > 0.
        let law = RadialLaw::unit_circle();
        let cfg = IntegratorConfig {
            step: Some(1e-2),
            ..Default::default()
        };
        let tr = flow(&ModelSpec::Linear, &lin_start([0.0, 0.5]), &law, 2.0, &cfg).unwrap();
        for r in &tr.records {
            assert!(r.weights[0].x.abs() < 1e-14);
            assert!((r.cos[0] - 1.0).abs() < 1e-14);
        }
        assert!(tr.records.windows(2).all(|p| p[1].norms[0] > p[0].norms[0]));
        assert!(tr.meta.audit_delta.unwrap() < 1e-12);
    }

    #[test]
    fn degenerate_ray_is_tagged() {
        let law = RadialLaw::unit_circle();
        let cfg = IntegratorConfig {
            step: Some(1e-2),
            audit: false,
            ..Default::default()
        };
        let tr = flow(&ModelSpec::Linear, &lin_start([0.0, -1.0]), &law, 0.5, &cfg).unwrap();
        assert!(tr.meta.degenerate_ray);
        assert!(tr.records.iter().all(|r| (r.cos[0] + 1.0).abs() < 1e-12));
    }

    #[test]
    fn gd_single_step_is_explicit_update() {
        let law = RadialLaw::unit_circle();
        let s = lin_start([0.6, -0.8]);
        let tr = gd(
            &ModelSpec::Linear,
            &s,
            &law,
            &Schedule::constant(0.1).unwrap(),
            1,
            &Batch::Full,
            &GdConfig::default(),
        )
        .unwrap();
        let g = linear_gradient(&s.weights[0], &s.v, &law, &QuadratureConfig::default()).unwrap();
        let expect = s.weights[0] - g * 0.1;
        assert!((tr.last().weights[0] - expect).norm() < 1e-15);
        assert_eq!(tr.last().step, 1);
        assert!((tr.last().time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn minibatch_gd_is_seeded() {
        let law = RadialLaw::unit_circle();
        let s = lin_start([0.6, -0.8]);
        let run = |seed| {
            gd(
                &ModelSpec::Linear,
                &s,
                &law,
                &Schedule::constant(0.01).unwrap(),
                50,
                &Batch::Minibatch { size: 100, seed },
                &GdConfig::default(),
            )
            .unwrap()
            .to_csv()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn zero_deep_start_and_bad_horizon_are_rejected() {
        let law = RadialLaw::unit_circle();
        let deep = ModelSpec::deep(3, 2).unwrap();
        let cfg = IntegratorConfig::default();
        assert!(flow(&deep, &lin_start([0.0, 0.0]), &law, 1.0, &cfg).is_err());
        assert!(flow(&ModelSpec::Linear, &lin_start([1.0, 0.0]), &law, 0.0, &cfg).is_err());
        assert!(flow(&ModelSpec::TwoNeuronRelu, &lin_start([1.0, 0.0]), &law, 1.0, &cfg).is_err());
    }

    #[test]
    fn phase_switch_is_zero_when_norm_grows_initially() {
        let law = RadialLaw::unit_circle();
        let cfg = IntegratorConfig {
            step: Some(1e-2),
            audit: false,
            ..Default::default()
        };
        let tr = flow(&ModelSpec::Linear, &lin_start([0.05, 0.1]), &law, 0.5, &cfg).unwrap();
        let ps = find_phase_switch(&tr, &cfg).unwrap();
        assert!(ps.found);
        assert_eq!(ps.t, 0.0);
    }

    #[test]
    fn csv_has_header_and_empty_second_neuron() {
        let law = RadialLaw::unit_circle();
        let cfg = IntegratorConfig {
            step: Some(0.1),
            stride: RecordStride::Every(5),
            audit: false,
            ..Default::default()
        };
        let tr = flow(&ModelSpec::Linear, &lin_start([0.6, -0.8]), &law, 1.0, &cfg).unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t_or_n,cos_theta1,cos_theta2,norm1,norm2,loss,N,eta"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 8);
        assert_eq!(row[2], "");
        assert_eq!(row[7], "");
        assert_eq!(csv.lines().count(), 1 + 3);
    }
}
