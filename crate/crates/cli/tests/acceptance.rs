//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dirflow::bounds::{
    compare_sign_maps, deep_curves_with, default_sign_grid, init_check, sign_map, sign_map_mc, unit_circle_norm_lemma_check,
    Anchor, DeepConstants, InitMethod, LemmaCheck,
};
use dirflow::certify::{certify, Slack};
use dirflow::dynamics::{find_phase_switch, flow, flow_layers, Clock, IntegratorConfig, RecordStride, Trajectory};
use dirflow::gradient::{grad_deep_effective, linear_gradient, monte_carlo_grad, pair_gradient, McEstimate};
use dirflow::law::RadialLaw;
use dirflow::models::{balanced_factorization, ModelSpec};
use dirflow::plane::{rotate, PlaneState};
use dirflow::quadrature::QuadratureConfig;
use dirflow_cli::figures::sgd_ensemble;
use dirflow_cli::report::Report;
use dirflow_cli::run::{certify_config, run};
use dirflow_cli::suites::{config, crossover_sweep};
use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

const C1_TOL: f64 = 1e-8;
const C1_STATES: usize = 1000;
const C1_SECONDS: f64 = 10.0;
const C3_SAMPLES: usize = 1_000_000;
const C3_K_SE: f64 = 4.0;
const C3_STATES: usize = 20;
const C4_K_SE: f64 = 3.0;
const C4_AGREEMENT: f64 = 0.99;
const C4_SAMPLES: usize = 1000;
const FLOW_SLACK: f64 = 1e-9;
const C5_SECONDS: f64 = 30.0;
const C6_FINAL_COS: f64 = 0.99;
const C7_REL: f64 = 1e-5;
const C7_BALANCE: f64 = 1e-6;
const C10_RATE: f64 = 0.6;
const C11_DELTAS: [f64; 3] = [0.3, 0.03, 0.003];
const C13_STARTS: usize = 100;

struct Line {
    ok: bool,
    text: String,
}

fn line(ok: bool, text: impl Into<String>) -> Line {
    Line { ok, text: text.into() }
}

fn pipeline(v: Value, slack: f64) -> (Report, Trajectory) {
    let cfg = config(v).expect("config");
    let traj = run(&cfg).expect("run");
    let (rep, _) = certify_config(&cfg, &traj, Some(slack)).expect("certify");
    (rep, traj)
}

fn ids(rep: &Report) -> String {
    rep.invariants
        .iter()
        .map(|i| format!("{}={:.2e}", i.id, i.margin))
        .collect::<Vec<_>>()
        .join(" ")
}

fn linear_gd(steps: usize, schedule: Value, certify: Value) -> Value {
    json!({
        "law": {"atoms": [[1.0, 1.0]]},
        "model": {"kind": "linear"},
        "target": [1.0, 0.0],
        "start": [[-0.8, 0.6]],
        "method": {"kind": "gd", "steps": steps, "schedule": schedule},
        "stride": {"every": 1},
        "certify": [certify]
    })
}

fn c1_c2() -> Vec<Line> {
    let t0 = Instant::now();
    let v = Vector2::new(0.0, 1.0);
    let law = RadialLaw::unit_circle();
    let c0 = law.moment_constants().c0;
    let cfg = QuadratureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let states: Vec<(f64, f64)> = (0..C1_STATES)
        .map(|_| (10f64.powf(rng.random_range(-2.0..=2.0)), rng.random_range(1e-6..PI - 1e-6)))
        .collect();
    let errs: Vec<(f64, f64)> = states
        .par_iter()
        .map(|&(r, th)| {
            let w = rotate(&v, th) * r;
            let g = linear_gradient(&w, &v, &law, &cfg).unwrap();
            let wb = w / r;
            let tangential = -(v - wb * wb.dot(&v)).dot(&g);
            let p = g + v * (c0 / PI);
            ((tangential - c0 * th.sin().powi(2) / PI).abs(), (p - wb * wb.dot(&p)).norm())
        })
        .collect();
    let secs = t0.elapsed().as_secs_f64();
    let e1 = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let e2 = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    vec![
        line(
            e1 < C1_TOL && secs < C1_SECONDS,
            format!("C1 angle rate: max error {e1:.2e} < {C1_TOL:e} over {C1_STATES} random states in {secs:.2} s"),
        ),
        line(e2 < C1_TOL, format!("C2 projection onto w̄: max residual {e2:.2e} < {C1_TOL:e}")),
    ]
}

fn max_z(quad: &[f64], mc: &McEstimate) -> f64 {
    let mean: Vec<f64> = mc.mean.iter().flat_map(|b| b.iter().copied()).collect();
    let se: Vec<f64> = mc.stderr.iter().flat_map(|b| b.iter().copied()).collect();
    quad.iter()
        .zip(mean.iter().zip(&se))
        .map(|(q, (m, s))| (q - m).abs() / s)
        .fold(0.0, f64::max)
}

fn c3() -> Line {
    let law = RadialLaw::gaussian2d();
    let cfg = QuadratureConfig::default();
    let v2 = Vector2::new(0.0, 1.0);
    let v = DVector::from_column_slice(&[0.0, 1.0]);
    let dv = |w: Vector2<f64>| DVector::from_column_slice(&[w.x, w.y]);
    let deep = ModelSpec::deep(4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = || rotate(&v2, rng.random_range(0.05..PI - 0.05)) * 10f64.powf(rng.random_range(-1.0..1.0));
    let states: Vec<_> = (0..C3_STATES).map(|_| (draw(), draw())).collect();
    let zs: Vec<[f64; 3]> = states
        .par_iter()
        .enumerate()
        .map(|(k, &(w, u))| {
            let seed = 100 + 3 * k as u64;
            let g = linear_gradient(&w, &v2, &law, &cfg).unwrap();
            let mc = monte_carlo_grad(&ModelSpec::Linear, &[dv(w)], &v, &law, C3_SAMPLES, seed).unwrap();
            let z_lin = max_z(&[g.x, g.y], &mc);
            let vel = grad_deep_effective(&w, 4, &v2, &law, &cfg).unwrap();
            let mc = monte_carlo_grad(&deep, &[dv(w)], &v, &law, C3_SAMPLES, seed + 1).unwrap();
            let z_deep = max_z(&[-vel.x, -vel.y], &mc);
            let [g1, g2] = pair_gradient(&w, &u, &v2, &law, &cfg).unwrap();
            let mc = monte_carlo_grad(&ModelSpec::TwoNeuronRelu, &[dv(w), dv(u)], &v, &law, C3_SAMPLES, seed + 2).unwrap();
            let z_relu = max_z(&[g1.x, g1.y, g2.x, g2.y], &mc);
            [z_lin, z_deep, z_relu]
        })
        .collect();
    let m = |i: usize| zs.iter().map(|z| z[i]).fold(0.0, f64::max);
    let (a, b, c) = (m(0), m(1), m(2));
    line(
        a.max(b).max(c) < C3_K_SE,
        format!(
            "C3 quadrature vs Monte Carlo ({C3_SAMPLES} samples, {C3_STATES} states): max |z| linear {a:.2}, deep {b:.2}, relu pair {c:.2} < {C3_K_SE}"
        ),
    )
}

fn c4() -> Line {
    let law = RadialLaw::unit_circle();
    let (norms, thetas) = default_sign_grid();
    let q = sign_map(&law, &norms, &thetas, &QuadratureConfig::default()).unwrap();
    let chk = q.check(0.0);
    let mc = sign_map_mc(&law, &norms, &thetas, C4_SAMPLES, 4).unwrap();
    let a = compare_sign_maps(&q, &mc, C4_K_SE);
    line(
        chk.positive_in_obtuse == 0 && chk.nonpositive_near_origin == 0 && a.fraction() >= C4_AGREEMENT,
        format!(
            "C4 sign map: {} obtuse cells with N > 0, {} small-norm cells with N ≤ 0; MC agrees on {}/{} = {:.4} (≥ {C4_AGREEMENT}, {C4_K_SE} SE)",
            chk.positive_in_obtuse,
            chk.nonpositive_near_origin,
            a.agree,
            a.eligible,
            a.fraction()
        ),
    )
}

fn c5() -> Line {
    let t0 = Instant::now();
    let (rep, traj) = pipeline(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "linear"},
            "target": [0.0, 1.0],
            "start": [[0.6, -0.8]],
            "method": {"kind": "flow", "t_end": 30.0},
            "certify": [{"bound": "linear_flow"}]
        }),
        FLOW_SLACK,
    );
    let changes = traj
        .records
        .windows(2)
        .filter(|p| (p[0].n_value >= 0.0) != (p[1].n_value >= 0.0))
        .count();
    let secs = t0.elapsed().as_secs_f64();
    line(
        rep.pass && changes == 1 && secs < C5_SECONDS,
        format!("C5 linear flow (slack {FLOW_SLACK:e}): {}; {changes} sign change of N; {secs:.1} s", ids(&rep)),
    )
}

fn c6() -> Line {
    let base = json!({
        "law": {"atoms": [[1.0, 1.0]]},
        "model": {"kind": "linear"},
        "target": [0.0, 1.0],
        "start": [[0.6, -0.8]],
        "method": {"kind": "gd", "steps": 30000, "schedule": {"kind": "constant", "eta": 1e-3},
                   "batch": {"kind": "minibatch", "size": 1000}},
        "stride": {"every": 50},
        "certify": [{"bound": "linear_flow", "anchor": 0}, {"bound": "linear_flow", "anchor": 5000}]
    });
    let (rep, trajs, _) = sgd_ensemble(&base, 0, None).unwrap();
    let final_cos = trajs.iter().map(|t| t.last().cos[0]).fold(f64::INFINITY, f64::min);
    line(
        rep.pass && final_cos > C6_FINAL_COS,
        format!(
            "C6 SGD, {} seeds, slack 3 sd: {}; min final cosθ {final_cos:.5} > {C6_FINAL_COS}",
            trajs.len(),
            ids(&rep)
        ),
    )
}

fn c7() -> Vec<Line> {
    let (rep, induced) = pipeline(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "deep_linear", "depth": 4},
            "target": [0.0, 1.0],
            "start": [[0.6, -0.8]],
            "method": {"kind": "flow", "t_end": 10.0},
            "certify": [{"bound": "deep"}, {"bound": "deep_norm"}]
        }),
        FLOW_SLACK,
    );
    let law = RadialLaw::unit_circle();
    let v = Vector2::new(0.0, 1.0);
    let w0 = Vector2::new(0.6, -0.8);
    let icfg = IntegratorConfig {
        audit: false,
        stride: RecordStride::Every(100),
        ..IntegratorConfig::default()
    };
    let stack = balanced_factorization(&DVector::from_column_slice(&[w0.x, w0.y]), 4, &[2, 2, 2, 2, 1]).unwrap();
    let layers = flow_layers(&stack, &v, &law, 10.0, &icfg).unwrap();
    let direct = flow(&ModelSpec::deep(4, 2).unwrap(), &PlaneState::new(v, vec![w0]).unwrap(), &law, 10.0, &icfg).unwrap();
    let (a, b) = (layers.last().weights[0], direct.last().weights[0]);
    let rel = (a - b).norm() / b.norm();
    let bal = layers.records.iter().filter_map(|r| r.balance_residual).fold(0.0, f64::max);

    // alternative first-phase constants, reported only
    let sw = find_phase_switch(&induced, &IntegratorConfig::default()).unwrap();
    let start = Anchor::at(&induced.records[0], &v, Clock::Time);
    let switch = Anchor {
        t: sw.t,
        norm: sw.w_at_t.norm(),
        theta: sw.theta_at_t,
    };
    let alt = deep_curves_with(DeepConstants::Printed, 4, start, switch, 1.0).unwrap();
    let p1 = certify(&induced, &alt[0], &Slack::Uniform(FLOW_SLACK)).unwrap();
    vec![
        line(
            rep.pass && rel < C7_REL && bal < C7_BALANCE,
            format!(
                "C7 deep N=4 flow: {}; layers vs induced rel {rel:.1e} < {C7_REL:e}; balance {bal:.1e} < {C7_BALANCE:e}",
                ids(&rep)
            ),
        ),
        line(
            true,
            format!(
                "C7 diagnostic: α = 2c0/π first-phase curve has min margin {:.3e} at t = {:.3} with {} violations (not gated)",
                p1.min_margin, p1.argmin, p1.violations
            ),
        ),
    ]
}

fn c8() -> Line {
    let mut rep = Report::new("c8");
    for s in [
        json!({"kind": "constant", "eta": 0.1}),
        json!({"kind": "power", "eta0": 1.0, "alpha": -0.25}),
        json!({"kind": "geometric", "eta0": 0.01, "q": 1.01}),
    ] {
        let (mut r, _) = pipeline(linear_gd(400, s.clone(), json!({"bound": "gd_negative"})), 0.0);
        for i in &mut r.invariants {
            i.id = format!("{}[{}]", i.id, s["kind"].as_str().unwrap());
        }
        rep.extend(r);
    }
    line(rep.pass, format!("C8 GD from cosθ < 0 (slack 0): {}", ids(&rep)))
}

fn c9() -> Line {
    let mut rep = Report::new("c9");
    for eta in [0.1, 1.0] {
        let (mut r, _) = pipeline(
            linear_gd(600, json!({"kind": "constant", "eta": eta}), json!({"bound": "gd_suff", "delta": 1.0})),
            0.0,
        );
        for i in &mut r.invariants {
            i.id = format!("{}[η={eta}]", i.id);
        }
        rep.extend(r);
    }
    let checked = rep.invariants.iter().any(|i| i.id.contains(".eq1"));
    line(rep.pass && checked, format!("C9 sufficient condition δ=1 (slack 0): {}", ids(&rep)))
}

fn c10() -> Line {
    let (rep, traj) = pipeline(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "two_neuron_relu"},
            "target": [1.0, 0.0],
            "start": [[3.0, 4.0], [4.0, -3.0]],
            "method": {"kind": "flow", "t_end": 200.0, "step": 0.01},
            "certify": [{"bound": "relu_flow"}]
        }),
        FLOW_SLACK,
    );
    let rate = traj.records.iter().map(|r| 2.0 * r.n_value).fold(f64::NEG_INFINITY, f64::max);
    line(
        rep.pass && rate <= C10_RATE + FLOW_SLACK,
        format!("C10 ReLU flow, split start: {}; max d‖w‖²/dt = {rate:.4} ≤ {C10_RATE}", ids(&rep)),
    )
}

fn c11() -> Line {
    let rows = crossover_sweep(&C11_DELTAS).unwrap();
    let found = rows.iter().all(|r| r.1.is_some() && r.2);
    let xs: Vec<f64> = C11_DELTAS.iter().map(|d| (1.0 / d).ln().powi(2)).collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.1.unwrap_or(f64::NAN)).collect();
    let ratio: Vec<f64> = ts.iter().zip(&xs).map(|(t, x)| t / x).collect();
    let shrinking = ratio.windows(2).all(|p| p[1] <= p[0]);
    // least squares T ≈ a ln²(1/δ) + b, reported only
    let k = xs.len() as f64;
    let (mx, mt) = (xs.iter().sum::<f64>() / k, ts.iter().sum::<f64>() / k);
    let a = xs.iter().zip(&ts).map(|(x, t)| (x - mx) * (t - mt)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let b = mt - a * mx;
    let times = rows
        .iter()
        .map(|r| format!("δ={} T={:.4}", r.0, r.1.unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(", ");
    line(
        found && shrinking,
        format!("C11 ReLU same half-plane: {times}; angles monotone before crossing; T/ln²(1/δ) nonincreasing; fit a={a:.4} b={b:.4}"),
    )
}

fn c12() -> Line {
    let (rep, traj) = pipeline(
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "two_neuron_relu"},
            "target": [1.0, 0.0],
            "start": [[3.0, 4.0], [4.0, -3.0]],
            "method": {"kind": "gd", "steps": 10000, "schedule": {"kind": "constant", "eta": 0.01}},
            "stride": {"every": 1},
            "certify": [{"bound": "relu_gd"}]
        }),
        0.0,
    );
    line(
        rep.pass,
        format!("C12 ReLU GD η=0.01 (slack 0): {}; half-plane exit at step {:?}", ids(&rep), traj.meta.halfplane_exit),
    )
}

fn c13() -> Line {
    let law = RadialLaw::gaussian2d();
    let m = law.moment_constants();
    let cfg = QuadratureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut applicable, mut held, mut excess) = (0, 0, f64::INFINITY);
    for _ in 0..C13_STARTS {
        let eta_plus: f64 = rng.random_range(0.01..1.0);
        let gate = 4.0 * eta_plus * (m.c0 + m.c0 / PI) / m.c1 + 4.0 / m.c2;
        let eta0 = gate * rng.random_range(1.0..2.0);
        let r = (m.c1 / m.c2) * rng.random_range(0.0..1.0);
        let w0 = rotate(&Vector2::new(1.0, 0.0), rng.random_range(0.0..2.0 * PI)) * r;
        let rep = init_check(&InitMethod::OneStepBoost { w0, eta0, eta_plus }, &law, &cfg).unwrap();
        if rep.applicable {
            applicable += 1;
            held += usize::from(rep.holds);
            excess = excess.min(rep.quantities["v_dot_w1"] - rep.r1);
        }
    }
    line(
        applicable == C13_STARTS && held == C13_STARTS,
        format!("C13 one-step init, Gaussian: {held}/{applicable} of {C13_STARTS} random compliant starts reach R1; min vᵀw(1) − R1 = {excess:.4}"),
    )
}

fn c14() -> Line {
    let (norms, thetas) = default_sign_grid();
    let cells: Vec<(f64, f64)> = thetas.iter().flat_map(|&t| norms.iter().map(move |&r| (r, t))).collect();
    let cfg = QuadratureConfig::default();
    let checks: Vec<LemmaCheck> = cells
        .par_iter()
        .map(|&(r, t)| unit_circle_norm_lemma_check(r, t, &cfg).unwrap())
        .collect();
    let count = |k: LemmaCheck| checks.iter().filter(|&&c| c == k).count();
    let (held, bad) = (count(LemmaCheck::Holds), count(LemmaCheck::Violated));
    line(
        bad == 0,
        format!("C14 unit-circle norm lemma over {} grid cells: {} applicable, {bad} violations", cells.len(), held + bad),
    )
}

fn c15() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("control.json");
    let v = json!({
        "schema": dirflow_cli::config::SCHEMA,
        "law": {"atoms": [[1.0, 1.0]]},
        "model": {"kind": "linear"},
        "target": [0.0, 1.0],
        "start": [[0.6, -0.8]],
        "method": {"kind": "flow", "t_end": 30.0},
        "slack": FLOW_SLACK,
        "certify": [{"bound": "linear_flow", "scale": {"A1": 1.5}}]
    });
    std::fs::write(&path, v.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dirflow"))
        .arg("simulate")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    let fail = stdout.lines().find(|l| l.starts_with("FAIL")).unwrap_or("no FAIL line").to_string();
    line(
        o.status.code() == Some(1) && fail.contains("linear_flow[0].phase1"),
        format!("C15 negative control, A1 × 1.5: exit {:?}; {fail}", o.status.code()),
    )
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let criteria: [fn() -> Vec<Line>; 14] = [
        c1_c2,
        || vec![c3()],
        || vec![c4()],
        || vec![c5()],
        || vec![c6()],
        c7,
        || vec![c8()],
        || vec![c9()],
        || vec![c10()],
        || vec![c11()],
        || vec![c12()],
        || vec![c13()],
        || vec![c14()],
        || vec![c15()],
    ];
    let mut failed = 0;
    for c in criteria {
        for l in c() {
            println!("{} {}", if l.ok { "PASS" } else { "FAIL" }, l.text);
            failed += usize::from(!l.ok);
        }
    }
    println!("acceptance: {failed} failing, {:.1} s", t0.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
