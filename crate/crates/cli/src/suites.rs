//! `verify <suite>`: fixed property suites with pass/fail reports.

use std::f64::consts::PI;

use anyhow::Result;
use clap::ValueEnum;
use dirflow::bounds::{
    default_sign_grid, init_check, relu_crossover_time, unit_circle_norm_lemma_check, InitMethod, LemmaCheck,
};
use dirflow::dynamics::{flow, flow_layers, IntegratorConfig, RecordStride};
use dirflow::gradient::linear_gradient;
use dirflow::law::RadialLaw;
use dirflow::models::{balanced_factorization, ModelSpec};
use dirflow::plane::{rotate, PlaneState};
use dirflow::quadrature::QuadratureConfig;
use nalgebra::{DVector, Vector2};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::report::Report;
use crate::run::{certify_config, run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Identities,
    Bounds,
    Gd,
    Relu,
    Appendix,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Bounds => "bounds",
            Suite::Gd => "gd",
            Suite::Relu => "relu",
            Suite::Appendix => "appendix",
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Report> {
    let mut r = match suite {
        Suite::Identities => identities()?,
        Suite::Bounds => bounds()?,
        Suite::Gd => gd_suite()?,
        Suite::Relu => relu()?,
        Suite::Appendix => appendix()?,
    };
    r.suite = suite.name().to_string();
    Ok(r)
}

/// Builds a run config from a JSON value, filling in the schema.
pub fn config(mut v: Value) -> Result<RunConfig> {
    v["schema"] = json!(crate::config::SCHEMA);
    let cfg: RunConfig = serde_json::from_value(v)?;
    cfg.validate()?;
    Ok(cfg)
}

fn simulate_report(v: Value, slack: Option<f64>) -> Result<Report> {
    let cfg = config(v)?;
    let traj = run(&cfg)?;
    Ok(certify_config(&cfg, &traj, slack)?.0)
}

const TOL: f64 = 1e-8;

fn identities() -> Result<Report> {
    let mut rep = Report::new("identities");
    let cfg = QuadratureConfig::default();
    let v = Vector2::new(0.0, 1.0);
    for law in [RadialLaw::unit_circle(), RadialLaw::gaussian2d()] {
        let c0 = law.moment_constants().c0;
        let states: Vec<(f64, f64)> = (0..25)
            .flat_map(|i| (1..12).map(move |j| (10f64.powf(-2.0 + 4.0 * i as f64 / 24.0), PI * j as f64 / 12.0)))
            .collect();
        let rows = states
            .par_iter()
            .map(|&(r, th)| {
                let w = rotate(&v, th) * r;
                let g = linear_gradient(&w, &v, &law, &cfg)?;
                let wb = w / r;
                let tangential = -(v - wb * wb.dot(&v)).dot(&g);
                let e1 = (tangential - c0 * th.sin().powi(2) / PI).abs();
                let p = g + v * (c0 / PI);
                let e2 = (p - wb * wb.dot(&p)).norm();
                Ok((e1, e2, g.norm() - c0))
            })
            .collect::<dirflow::Result<Vec<_>>>()?;
        let max = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let (e1, e2, cap) = (max(|r| r.0), max(|r| r.1), max(|r| r.2));
        let tag = law.label().to_string();
        let n = rows.len();
        rep.push(format!("angle_rate[{tag}]"), e1 < TOL, TOL - e1, format!("{n} states, max error {e1:.2e}"));
        rep.push(format!("projection[{tag}]"), e2 < TOL, TOL - e2, format!("{n} states, max error {e2:.2e}"));
        rep.push(format!("gradient_cap[{tag}]"), cap <= 0.0, -cap, format!("max ‖∇L‖ − c0 = {cap:.3e}"));
    }
    Ok(rep)
}

fn bounds() -> Result<Report> {
    let mut rep = simulate_report(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "linear"},
            "target": [0.0, 1.0],
            "start": [[0.6, -0.8]],
            "method": {"kind": "flow", "t_end": 30.0},
            "certify": [{"bound": "linear_flow"}]
        }),
        Some(1e-9),
    )?;
    // N changes sign exactly once on the same run
    let traj = run(&config(json!({
        "law": {"atoms": [[1.0, 1.0]]},
        "model": {"kind": "linear"},
        "target": [0.0, 1.0],
        "start": [[0.6, -0.8]],
        "method": {"kind": "flow", "t_end": 30.0}
    }))?)?;
    let changes = traj
        .records
        .windows(2)
        .filter(|p| (p[0].n_value >= 0.0) != (p[1].n_value >= 0.0))
        .count();
    rep.push("linear_flow.sign_changes", changes == 1, 0.0, format!("{changes} sign change(s) of N"));

    rep.extend(simulate_report(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "deep_linear", "depth": 4},
            "target": [0.0, 1.0],
            "start": [[0.6, -0.8]],
            "method": {"kind": "flow", "t_end": 10.0},
            "certify": [{"bound": "deep"}, {"bound": "deep_norm"}]
        }),
        Some(1e-9),
    )?);

    // explicit layers against the induced flow
    let law = RadialLaw::unit_circle();
    let v = Vector2::new(0.0, 1.0);
    let w0 = Vector2::new(0.6, -0.8);
    let icfg = IntegratorConfig {
        audit: false,
        stride: RecordStride::Every(100),
        ..IntegratorConfig::default()
    };
    let stack = balanced_factorization(&DVector::from_column_slice(&[w0.x, w0.y]), 4, &[2, 2, 2, 2, 1])?;
    let layers = flow_layers(&stack, &v, &law, 10.0, &icfg)?;
    let induced = flow(&ModelSpec::deep(4, 2)?, &PlaneState::new(v, vec![w0])?, &law, 10.0, &icfg)?;
    let (a, b) = (layers.last().weights[0], induced.last().weights[0]);
    let rel = (a - b).norm() / b.norm();
    rep.push("deep.layers_vs_induced", rel < 1e-5, 1e-5 - rel, format!("relative difference {rel:.2e} at t = 10"));
    let bal = layers
        .records
        .iter()
        .filter_map(|r| r.balance_residual)
        .fold(0.0, f64::max);
    rep.push("deep.balance", bal < 1e-6, 1e-6 - bal, format!("max residual {bal:.2e}"));
    Ok(rep)
}

fn gd_suite() -> Result<Report> {
    let mut rep = Report::new("gd");
    let start = json!([[-0.8, 0.6]]);
    let schedules = [
        json!({"kind": "constant", "eta": 0.1}),
        json!({"kind": "power", "eta0": 1.0, "alpha": -0.25}),
        json!({"kind": "geometric", "eta0": 0.01, "q": 1.01}),
    ];
    for s in schedules {
        let mut r = simulate_report(
            json!({
                "law": {"atoms": [[1.0, 1.0]]},
                "model": {"kind": "linear"},
                "target": [1.0, 0.0],
                "start": start,
                "method": {"kind": "gd", "steps": 400, "schedule": s},
                "stride": {"every": 1},
                "certify": [{"bound": "gd_negative"}]
            }),
            Some(0.0),
        )?;
        for i in &mut r.invariants {
            i.id = format!("{}[{}]", i.id, s["kind"].as_str().unwrap_or("?"));
        }
        rep.extend(r);
    }
    for eta in [0.1, 1.0] {
        let mut r = simulate_report(
            json!({
                "law": {"atoms": [[1.0, 1.0]]},
                "model": {"kind": "linear"},
                "target": [1.0, 0.0],
                "start": start,
                "method": {"kind": "gd", "steps": 600, "schedule": {"kind": "constant", "eta": eta}},
                "stride": {"every": 1},
                "certify": [{"bound": "gd_suff", "delta": 1.0}]
            }),
            Some(0.0),
        )?;
        for i in &mut r.invariants {
            i.id = format!("{}[eta={eta}]", i.id);
        }
        rep.extend(r);
    }
    Ok(rep)
}

fn relu() -> Result<Report> {
    let mut rep = simulate_report(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "two_neuron_relu"},
            "target": [1.0, 0.0],
            "start": [[3.0, 4.0], [4.0, -3.0]],
            "method": {"kind": "flow", "t_end": 200.0, "step": 0.01},
            "certify": [{"bound": "relu_flow"}]
        }),
        Some(1e-9),
    )?;
    rep.extend(simulate_report(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "two_neuron_relu"},
            "target": [1.0, 0.0],
            "start": [[3.0, 4.0], [4.0, -3.0]],
            "method": {"kind": "gd", "steps": 10000, "schedule": {"kind": "constant", "eta": 0.01}},
            "stride": {"every": 1},
            "certify": [{"bound": "relu_gd"}]
        }),
        Some(0.0),
    )?);
    let crossings = crossover_sweep(&[0.3, 0.03, 0.003])?;
    let ok = crossings.iter().all(|c| c.1.is_some() && c.2);
    let detail = crossings
        .iter()
        .map(|(d, t, m)| format!("δ={d}: T={} monotone={m}", t.map_or("none".into(), |t| format!("{t:.4}"))))
        .collect::<Vec<_>>()
        .join(", ");
    rep.push("relu_same.crossover", ok, 0.0, detail);
    Ok(rep)
}

/// Crossover time and pre-crossing monotonicity for same-half-plane starts
/// `θ₂ = 0.5`, `cosθ₁ = cos 0.5 − δ`, unit norms, `v = e₁`.
pub fn crossover_sweep(deltas: &[f64]) -> Result<Vec<(f64, Option<f64>, bool)>> {
    let law = RadialLaw::unit_circle();
    let v = Vector2::new(1.0, 0.0);
    deltas
        .par_iter()
        .map(|&d| {
            let th1 = (0.5f64.cos() - d).acos();
            let start = PlaneState::new(v, vec![rotate(&v, th1), rotate(&v, 0.5)])?;
            let icfg = IntegratorConfig {
                audit: false,
                stride: RecordStride::Every(1),
                ..IntegratorConfig::default()
            };
            let traj = flow(&ModelSpec::TwoNeuronRelu, &start, &law, 4.0, &icfg)?;
            let c = relu_crossover_time(&traj)?;
            Ok((d, c.time, c.monotone))
        })
        .collect()
}

fn appendix() -> Result<Report> {
    let mut rep = Report::new("appendix");
    let law = RadialLaw::gaussian2d();
    let m = law.moment_constants();
    let qcfg = QuadratureConfig::default();
    let eta_plus = 0.1;
    let gate = 4.0 * eta_plus * (m.c0 + m.c0 / PI) / m.c1 + 4.0 / m.c2;
    let norm_gate = m.c1 / m.c2;
    let (mut applicable, mut worst) = (0usize, f64::INFINITY);
    for i in 0..10 {
        for j in 0..10 {
            let w0 = rotate(&Vector2::new(1.0, 0.0), 2.0 * PI * i as f64 / 10.0) * (norm_gate * (j as f64 + 0.5) / 10.0);
            let eta0 = gate * (1.0 + 0.1 * j as f64);
            let r = init_check(&InitMethod::OneStepBoost { w0, eta0, eta_plus }, &law, &qcfg)?;
            if r.applicable {
                applicable += 1;
                worst = worst.min(r.quantities["v_dot_w1"] - r.r1);
            }
        }
    }
    rep.push(
        "init.one_step_boost",
        applicable == 100 && worst >= 0.0,
        worst,
        format!("{applicable} compliant starts, min vᵀw(1) − R1 = {worst:.4}"),
    );

    let (norms, thetas) = default_sign_grid();
    let cells: Vec<(f64, f64)> = thetas.iter().flat_map(|&t| norms.iter().map(move |&r| (r, t))).collect();
    let checks = cells
        .par_iter()
        .map(|&(r, t)| unit_circle_norm_lemma_check(r, t, &qcfg))
        .collect::<dirflow::Result<Vec<_>>>()?;
    let count = |k: LemmaCheck| checks.iter().filter(|&&c| c == k).count();
    let (held, bad) = (count(LemmaCheck::Holds), count(LemmaCheck::Violated));
    rep.push(
        "unit_circle_norm_lemma",
        bad == 0,
        0.0 - bad as f64,
        format!("{} cells, {} applicable, {bad} violations", cells.len(), held + bad),
    );
    Ok(rep)
}
