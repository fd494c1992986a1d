//! `simulate`: run a configured trajectory, certify the requested curves and
//! write the artifacts.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dirflow::bounds::{
    deep_curves, deep_norm_curves, gd_negative_curve, gd_suff_check, gd_suff_curve, linear_flow_curves, phase_two_curve,
    r1_threshold, relu_diff_init_curve_at, relu_gd_curve, Anchor, BoundCurve, Observable, Side,
};
use dirflow::certify::{certify, Slack};
use dirflow::dynamics::{find_phase_switch, flow, gd, Clock, IntegratorConfig, Record, Trajectory};
use dirflow::law::RadialLaw;
use dirflow::models::ModelSpec;
use dirflow::plane::{angle, PlaneState};
use dirflow::schedule::Schedule;
use dirflow::Error;

use crate::config::{BoundName, CertifyBlock, Method, RunConfig};
use crate::report::Report;
use crate::svg::{line_plot, Series};

pub const DEFAULT_SLACK: f64 = 1e-9;

/// A curve ready for certification, with its report id.
#[derive(Debug, Clone)]
pub struct NamedCurve {
    pub id: String,
    pub curve: BoundCurve,
}

pub fn run(cfg: &RunConfig) -> Result<Trajectory> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let start = cfg.start_state()?;
    let traj = match &cfg.method {
        Method::Flow { t_end, .. } => flow(&model, &start, &law, *t_end, &cfg.integrator())?,
        Method::Gd { steps, schedule, .. } => gd(
            &model,
            &start,
            &law,
            schedule,
            *steps,
            &cfg.batch().expect("gd runs have a batch mode"),
            &cfg.gd_config(),
        )?,
    };
    Ok(traj)
}

/// The same records indexed by elapsed time `Σ η_k`.
pub fn time_view(traj: &Trajectory) -> Trajectory {
    let mut t = traj.clone();
    t.clock = Clock::Time;
    t
}

/// First record at or after clock value `at`.
pub fn anchor_record(traj: &Trajectory, at: f64) -> Result<&Record> {
    traj.records
        .iter()
        .find(|r| r.clock_value(traj.clock) >= at)
        .ok_or_else(|| anyhow!("anchor {at} lies after the last record"))
}

/// Phase switch of the deterministic flow started from `r` at its own time.
/// Records with `N ≥ 0` are their own switch.
pub fn flow_switch(model: &ModelSpec, law: &RadialLaw, v: &nalgebra::Vector2<f64>, r: &Record, horizon: f64) -> Result<Option<Anchor>> {
    if r.n_value >= 0.0 {
        return Ok(Some(Anchor::at(r, v, Clock::Time)));
    }
    let start = PlaneState::new(*v, r.weights.clone())?;
    let icfg = IntegratorConfig {
        audit: false,
        ..IntegratorConfig::default()
    };
    // grow the window until N changes sign or the horizon is exhausted
    let mut span = horizon.clamp(1e-3, 1.0);
    loop {
        let tr = flow(model, &start, law, span, &icfg)?;
        let sw = find_phase_switch(&tr, &icfg)?;
        if sw.found {
            return Ok(Some(Anchor {
                t: r.time + sw.t,
                norm: sw.w_at_t.norm(),
                theta: sw.theta_at_t,
            }));
        }
        if span >= horizon {
            return Ok(None);
        }
        span = (2.0 * span).min(horizon);
    }
}

fn schedule_of(cfg: &RunConfig) -> Option<(&Schedule, usize)> {
    match &cfg.method {
        Method::Gd { schedule, steps, .. } => Some((schedule, *steps)),
        Method::Flow { .. } => None,
    }
}

/// Builds the curves of one certify block. Curves whose clock is time are
/// certified against the time view of a GD run.
pub fn build_curves(cfg: &RunConfig, traj: &Trajectory, index: usize) -> Result<Vec<NamedCurve>> {
    let block = &cfg.certify[index];
    let c0 = traj.law.moment_constants().c0;
    let v = traj.v;
    let r = anchor_record(traj, block.anchor)?;
    let base = format!("{}[{index}]", block.bound.as_str());
    let named = |part: &str, curve: BoundCurve| NamedCurve {
        id: format!("{base}.{part}"),
        curve,
    };
    let horizon = traj.last().time - r.time;
    let mut out = Vec::new();
    match block.bound {
        BoundName::LinearFlow | BoundName::Deep => {
            let start = Anchor::at(r, &v, Clock::Time);
            let switch = flow_switch(&traj.model, &traj.law, &v, r, horizon)?;
            if block.bound == BoundName::LinearFlow {
                match switch {
                    Some(sw) if sw.t == start.t => out.push(named("phase2", phase_two_curve(sw, c0)?)),
                    Some(sw) => {
                        let [p1, p2] = linear_flow_curves(start, sw, c0)?;
                        out.push(named("phase1", p1));
                        out.push(named("phase2", p2));
                    }
                    None => {
                        let end = Anchor::at(traj.last(), &v, Clock::Time);
                        out.push(named("phase1", linear_flow_curves(start, end, c0)?[0].clone()));
                    }
                }
            } else {
                let depth = traj.model.depth();
                let sw = match switch {
                    Some(sw) => sw,
                    None => Anchor::at(traj.last(), &v, Clock::Time),
                };
                let [p1, p2, up] = deep_curves(depth, start, sw, c0)?;
                out.push(named("phase1", p1));
                if switch.is_some() {
                    out.push(named("phase2", p2));
                }
                out.push(named("upper", up));
            }
        }
        BoundName::DeepNorm => {
            let [lo, up] = deep_norm_curves(traj.model.depth(), r.time, r.weights[0].norm(), c0)?;
            out.push(named("lower", lo));
            out.push(named("upper", up));
        }
        BoundName::ReluFlow => {
            out.push(named("envelope", relu_diff_init_curve_at(r.time, &r.weights[0], &r.weights[1], &v, c0)?));
        }
        BoundName::GdNegative => {
            let (schedule, steps) = schedule_of(cfg).expect("validated as gd");
            if r.cos[0] >= 0.0 {
                bail!("{base}: gd_negative needs cosθ < 0 at the anchor, found {}", r.cos[0]);
            }
            let curve = gd_negative_curve(schedule, r.step, r.norms[0], angle(&r.weights[0], &v), c0, steps - r.step)?;
            let end = traj
                .records
                .iter()
                .find(|q| q.step > r.step && q.cos[0] >= 0.0)
                .map(|q| q.step as f64 - 1.0)
                .unwrap_or(steps as f64);
            out.push(named("envelope", curve.restricted(r.step as f64, end)?));
        }
        BoundName::GdSuff => {
            let (schedule, steps) = schedule_of(cfg).expect("validated as gd");
            let r1 = r1_threshold(schedule.max_rate(steps), c0);
            if let Some(s) = traj.records.iter().find(|q| q.step >= r.step && q.norms[0] * q.cos[0] >= r1) {
                let delta = block.delta.unwrap_or(1.0);
                let curve = gd_suff_curve(schedule, s.step, s.norms[0], angle(&s.weights[0], &v), c0, delta, steps - s.step)?;
                out.push(named("envelope", curve));
            }
        }
        BoundName::ReluGd => {
            let (schedule, steps) = schedule_of(cfg).expect("validated as gd");
            let curve = relu_gd_curve(schedule, &r.weights[0], &r.weights[1], &v, c0, steps)?;
            let end = traj.meta.halfplane_exit.map(|e| e as f64 - 1.0).unwrap_or(steps as f64);
            if end >= 0.0 {
                out.push(named("envelope", curve.restricted(0.0, end)?));
            }
        }
    }
    edit_constants(&mut out, block)?;
    Ok(out)
}

fn edit_constants(curves: &mut [NamedCurve], block: &CertifyBlock) -> Result<()> {
    for (name, factor) in &block.scale {
        let mut hit = false;
        for nc in curves.iter_mut() {
            if let Some(c) = nc.curve.constant(name) {
                nc.curve = nc.curve.with_constant(name, c * factor)?;
                hit = true;
            }
        }
        if !hit {
            bail!("{} has no constant named {name}", block.bound.as_str());
        }
    }
    for (name, value) in &block.set {
        let mut hit = false;
        for nc in curves.iter_mut() {
            if nc.curve.constant(name).is_some() {
                nc.curve = nc.curve.with_constant(name, *value)?;
                hit = true;
            }
        }
        if !hit {
            bail!("{} has no constant named {name}", block.bound.as_str());
        }
    }
    Ok(())
}

/// Certifies one curve and appends the outcome to `report`.
pub fn certify_into(report: &mut Report, traj: &Trajectory, nc: &NamedCurve, slack: &Slack) -> Result<()> {
    let view = if nc.curve.clock == traj.clock { traj.clone() } else { time_view(traj) };
    match certify(&view, &nc.curve, slack) {
        Ok(c) => {
            let side = match nc.curve.side {
                Side::Lower => "lower",
                Side::Upper => "upper",
            };
            report.push(
                &nc.id,
                c.pass,
                c.min_margin,
                format!(
                    "{side} curve, {} records, {} violations, min margin at {:.6}",
                    c.margins.len(),
                    c.violations,
                    c.argmin
                ),
            );
        }
        Err(Error::Domain(msg)) => report.push(&nc.id, true, f64::INFINITY, format!("not checked: {msg}")),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Extra per-block checks that are not curve comparisons.
fn side_checks(report: &mut Report, cfg: &RunConfig, traj: &Trajectory, index: usize, slack: f64) -> Result<()> {
    let block = &cfg.certify[index];
    let base = format!("{}[{index}]", block.bound.as_str());
    match block.bound {
        BoundName::ReluFlow => {
            // d(‖w₁‖² + ‖w₂‖²)/dt = 2N(w) ≤ 0.6
            let worst = traj
                .records
                .iter()
                .filter(|r| r.time >= block.anchor)
                .map(|r| 0.6 - 2.0 * r.n_value)
                .fold(f64::INFINITY, f64::min);
            report.push(format!("{base}.norm_rate"), worst >= -slack, worst, "0.6 − d‖w‖²/dt over records");
        }
        BoundName::GdSuff => {
            let (schedule, steps) = schedule_of(cfg).expect("validated as gd");
            let c0 = traj.law.moment_constants().c0;
            let r1 = r1_threshold(schedule.max_rate(steps), c0);
            let delta = block.delta.unwrap_or(1.0);
            let Some(k) = traj
                .records
                .iter()
                .position(|q| q.step as f64 >= block.anchor && q.norms[0] * q.cos[0] >= r1)
            else {
                report.push(format!("{base}.threshold"), true, f64::INFINITY, format!("‖w‖cosθ never reached R1 = {r1:.6}"));
                return Ok(());
            };
            let (mut checked, mut bad, mut worst) = (0usize, 0usize, f64::INFINITY);
            for pair in traj.records[k..].windows(2) {
                if pair[1].step != pair[0].step + 1 {
                    continue;
                }
                let chk = gd_suff_check(
                    &pair[0].weights[0],
                    &pair[1].weights[0],
                    schedule.rate(pair[0].step),
                    angle(&pair[0].weights[0], &traj.v),
                    c0,
                    delta,
                );
                checked += 1;
                worst = worst.min(chk.lhs - chk.rhs);
                bad += usize::from(!chk.holds);
            }
            report.push(
                format!("{base}.eq1"),
                bad == 0,
                worst,
                format!("from step {}: {checked} consecutive pairs, {bad} violations", traj.records[k].step),
            );
        }
        _ => {}
    }
    Ok(())
}

/// Runs every certify block. Slack precedence: CLI override, block, config, default.
pub fn certify_config(cfg: &RunConfig, traj: &Trajectory, slack_override: Option<f64>) -> Result<(Report, Vec<NamedCurve>)> {
    let mut report = Report::new("simulate");
    let mut all = Vec::new();
    for i in 0..cfg.certify.len() {
        let slack = slack_override
            .or(cfg.certify[i].slack)
            .or(cfg.slack)
            .unwrap_or(DEFAULT_SLACK);
        let curves = build_curves(cfg, traj, i).with_context(|| format!("certify[{i}]"))?;
        for nc in &curves {
            certify_into(&mut report, traj, nc, &Slack::Uniform(slack))?;
        }
        side_checks(&mut report, cfg, traj, i, slack)?;
        all.extend(curves);
    }
    Ok((report, all))
}

fn sampled(curve: &BoundCurve, traj: &Trajectory) -> Vec<(f64, f64)> {
    let view = if curve.clock == traj.clock { traj.clone() } else { time_view(traj) };
    view.records
        .iter()
        .filter(|r| curve.contains(r.clock_value(curve.clock)))
        .map(|r| (r.clock_value(traj.clock), curve.value(r.clock_value(curve.clock))))
        .collect()
}

pub fn xlabel(traj: &Trajectory) -> &'static str {
    match traj.clock {
        Clock::Time => "t",
        Clock::Step => "n",
    }
}

pub fn angle_plot(traj: &Trajectory, curves: &[NamedCurve], title: &str) -> String {
    let x = |r: &Record| r.clock_value(traj.clock);
    let mut series: Vec<Series> = (0..traj.records[0].cos.len())
        .map(|i| Series::line(format!("cos θ{}", i + 1), traj.records.iter().map(|r| (x(r), r.cos[i])).collect()))
        .collect();
    for nc in curves.iter().filter(|c| c.curve.observable != Observable::Norm1) {
        series.push(Series::dashed(&nc.id, sampled(&nc.curve, traj)));
    }
    line_plot(title, xlabel(traj), "cos θ", &series)
}

pub fn norm_plot(traj: &Trajectory, curves: &[NamedCurve], title: &str) -> String {
    let x = |r: &Record| r.clock_value(traj.clock);
    let mut series: Vec<Series> = (0..traj.records[0].norms.len())
        .map(|i| Series::line(format!("‖w{}‖", i + 1), traj.records.iter().map(|r| (x(r), r.norms[i])).collect()))
        .collect();
    for nc in curves.iter().filter(|c| c.curve.observable == Observable::Norm1) {
        series.push(Series::dashed(&nc.id, sampled(&nc.curve, traj)));
    }
    line_plot(title, xlabel(traj), "norm", &series)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let p = dir.join(name);
    std::fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))
}

/// Runs `cfg`, writes `traj.csv`, `angle.svg`, `norm.svg` and `report.json`
/// into `out`, and returns the report.
pub fn simulate(cfg: &RunConfig, out: &Path, slack_override: Option<f64>) -> Result<Report> {
    let traj = run(cfg)?;
    let (report, curves) = certify_config(cfg, &traj, slack_override)?;
    write(out, "traj.csv", &traj.to_csv())?;
    write(out, "angle.svg", &angle_plot(&traj, &curves, "direction"))?;
    write(out, "norm.svg", &norm_plot(&traj, &curves, "norm"))?;
    write(out, "report.json", &report.to_json())?;
    Ok(report)
}
