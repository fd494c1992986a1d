//! `reproduce <fig>` and `signmap <config>`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use dirflow::bounds::{compare_sign_maps, default_sign_grid, sign_map, sign_map_mc, McSignMap, SignMap};
use dirflow::certify::Slack;
use dirflow::dynamics::Trajectory;
use dirflow::quadrature::QuadratureConfig;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{LawBlock, RunConfig};
use crate::report::Report;
use crate::run::{angle_plot, build_curves, certify_into, norm_plot, run, write, xlabel, NamedCurve};
use crate::suites::config;
use crate::svg::{line_plot, scatter_plot, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
}

pub const SIGNMAP_SCHEMA: &str = "dirflow.signmap/1";

/// Sign-map configuration. Missing grids default to the 80 × 73 grid
/// `‖w‖ = 0.125k`, `θ = πk/72`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignmapConfig {
    pub schema: String,
    pub law: LawBlock,
    #[serde(default)]
    pub norms: Option<Vec<f64>>,
    #[serde(default)]
    pub thetas: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Cells count towards agreement when `|N| > k_se` standard errors.
    #[serde(default = "default_k_se")]
    pub k_se: f64,
    #[serde(default = "default_agreement")]
    pub min_agreement: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    1000
}

fn default_k_se() -> f64 {
    3.0
}

fn default_agreement() -> f64 {
    0.99
}

impl SignmapConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let c: Self = serde_json::from_str(&text)
            .map_err(|e| anyhow!("{e}"))
            .with_context(|| format!("in {}", path.display()))?;
        if c.schema != SIGNMAP_SCHEMA {
            bail!("field `schema`: expected \"{SIGNMAP_SCHEMA}\", got \"{}\"", c.schema);
        }
        Ok(c)
    }
}

fn law_of(block: &LawBlock) -> Result<dirflow::law::RadialLaw> {
    // reuse the run-config validation of the law block
    let probe = RunConfig {
        schema: crate::config::SCHEMA.into(),
        law: block.clone(),
        model: crate::config::ModelBlock::Linear,
        target: [1.0, 0.0],
        start: vec![[1.0, 0.0]],
        method: crate::config::Method::Flow { t_end: 1.0, step: None },
        seed: 0,
        slack: None,
        stride: None,
        out: None,
        certify: Vec::new(),
    };
    probe.law()
}

fn signmap_csv(q: &SignMap, mc: &McSignMap) -> String {
    let mut s = String::from("norm,theta,n_quad,n_mc,se_mc\n");
    for (i, th) in q.thetas.iter().enumerate() {
        for (j, r) in q.norms.iter().enumerate() {
            s.push_str(&format!("{r},{th},{},{},{}\n", q.values[i][j], mc.values[i][j], mc.stderr[i][j]));
        }
    }
    s
}

fn signmap_svg(title: &str, norms: &[f64], thetas: &[f64], values: &[Vec<f64>]) -> String {
    let mut pts = Vec::new();
    for (i, &th) in thetas.iter().enumerate() {
        for (j, &r) in norms.iter().enumerate() {
            let c = if values[i][j] > 0.0 { "#d62728" } else { "#1f77b4" };
            pts.push((r, th, c));
        }
    }
    scatter_plot(title, "‖w‖", "θ (red: N > 0)", &pts)
}

/// Quadrature and Monte Carlo sign maps of `N(w)` for the linear model.
pub fn signmap(cfg: &SignmapConfig, out: &Path) -> Result<Report> {
    let law = law_of(&cfg.law)?;
    let (dn, dt) = default_sign_grid();
    let norms = cfg.norms.clone().unwrap_or(dn);
    let thetas = cfg.thetas.clone().unwrap_or(dt);
    if norms.iter().chain(&thetas).any(|x| !x.is_finite()) || norms.iter().any(|&r| r <= 0.0) {
        bail!("field `norms`/`thetas`: norms must be positive and all values finite");
    }
    let quad = sign_map(&law, &norms, &thetas, &QuadratureConfig::default())?;
    let mc = sign_map_mc(&law, &norms, &thetas, cfg.samples, cfg.seed)?;
    let mut rep = Report::new("signmap");
    let chk = quad.check(0.0);
    let bad = chk.positive_in_obtuse + chk.nonpositive_near_origin;
    rep.push(
        "quadrature.sign_structure",
        bad == 0,
        0.0 - bad as f64,
        format!(
            "{} cells with N > 0 at θ ≥ π/2, {} cells with N ≤ 0 for ‖w‖ ≤ 2cosθ/π",
            chk.positive_in_obtuse, chk.nonpositive_near_origin
        ),
    );
    let agree = compare_sign_maps(&quad, &mc, cfg.k_se);
    let f = agree.fraction();
    rep.push(
        "mc.sign_agreement",
        f >= cfg.min_agreement,
        f - cfg.min_agreement,
        format!("{}/{} eligible cells agree at {} SE, {} samples", agree.agree, agree.eligible, cfg.k_se, cfg.samples),
    );
    write(out, "signmap.csv", &signmap_csv(&quad, &mc))?;
    write(out, "signmap_quad.svg", &signmap_svg("sign of N (quadrature)", &norms, &thetas, &quad.values))?;
    write(out, "signmap_mc.svg", &signmap_svg("sign of N (Monte Carlo)", &norms, &thetas, &mc.values))?;
    write(out, "report.json", &rep.to_json())?;
    Ok(rep)
}

pub fn reproduce(fig: Figure, out: &Path, seed: u64, slack: Option<f64>) -> Result<Report> {
    let mut rep = match fig {
        Figure::Fig1 => {
            let cfg = SignmapConfig {
                schema: SIGNMAP_SCHEMA.into(),
                law: LawBlock {
                    atoms: Some(vec![(1.0, 1.0)]),
                    gaussian2d: None,
                },
                norms: None,
                thetas: None,
                samples: 1000,
                k_se: 3.0,
                min_agreement: 0.99,
                seed,
            };
            signmap(&cfg, out)?
        }
        Figure::Fig2 => fig2(out, seed, slack)?,
        Figure::Fig3 => fig3(out, seed)?,
    };
    rep.suite = format!("{fig:?}").to_lowercase();
    write(out, "report.json", &rep.to_json())?;
    Ok(rep)
}

pub const SGD_SEEDS: u64 = 10;

/// Runs one configuration over `SGD_SEEDS` seeds and certifies every seed
/// with a per-record slack of three standard deviations of `cosθ₁` across
/// seeds, or a uniform `slack` when given.
pub fn sgd_ensemble(base: &Value, seed: u64, slack: Option<f64>) -> Result<(Report, Vec<Trajectory>, Vec<NamedCurve>)> {
    let runs = (0..SGD_SEEDS)
        .into_par_iter()
        .map(|k| {
            let mut v = base.clone();
            v["seed"] = json!(seed + k);
            let cfg = config(v)?;
            let traj = run(&cfg)?;
            let curves = (0..cfg.certify.len())
                .map(|i| build_curves(&cfg, &traj, i))
                .collect::<Result<Vec<_>>>()?
                .concat();
            Ok((traj, curves))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = runs[0].0.records.len();
    let sd: Vec<f64> = (0..n)
        .map(|i| {
            let xs: Vec<f64> = runs.iter().map(|r| r.0.records[i].cos[0]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        })
        .collect();
    let sl = match slack {
        Some(s) => Slack::Uniform(s),
        None => Slack::PerRecord(sd.iter().map(|s| 3.0 * s).collect()),
    };
    // merge per-seed outcomes: an id passes when it passes on every seed
    let mut merged = Report::new("sgd");
    for (k, (traj, curves)) in runs.iter().enumerate() {
        let mut r = Report::new("seed");
        for nc in curves {
            certify_into(&mut r, traj, nc, &sl)?;
        }
        for inv in r.invariants {
            match merged.invariants.iter_mut().find(|i| i.id == inv.id) {
                Some(m) => {
                    if inv.margin < m.margin {
                        m.margin = inv.margin;
                        m.detail = format!("worst seed {}: {}", seed + k as u64, inv.detail);
                    }
                    if inv.status == crate::report::Status::Fail {
                        m.status = inv.status;
                    }
                }
                None => merged.push(inv.id, inv.status == crate::report::Status::Pass, inv.margin, format!("worst seed {}: {}", seed + k as u64, inv.detail)),
            }
        }
    }
    let failed = merged.failures().next().is_some();
    merged.pass = !failed;
    let (trajs, mut curves): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok((merged, trajs, curves.swap_remove(0)))
}

fn fig2(out: &Path, seed: u64, slack: Option<f64>) -> Result<Report> {
    let gd = json!({"kind": "gd", "steps": 30000, "schedule": {"kind": "constant", "eta": 1e-3},
                    "batch": {"kind": "minibatch", "size": 1000}});
    let linear = json!({
        "law": {"atoms": [[1.0, 1.0]]},
        "model": {"kind": "linear"},
        "target": [0.0, 1.0],
        "start": [[0.6, -0.8]],
        "method": gd,
        "stride": {"every": 50},
        "certify": [{"bound": "linear_flow", "anchor": 0}, {"bound": "linear_flow", "anchor": 5000}]
    });
    let deep = json!({
        "law": {"atoms": [[1.0, 1.0]]},
        "model": {"kind": "deep_linear", "depth": 4},
        "target": [0.0, 1.0],
        "start": [[0.6, -0.8]],
        "method": gd,
        "stride": {"every": 50},
        "certify": [{"bound": "deep", "anchor": 0}, {"bound": "deep", "anchor": 18000}]
    });
    let mut rep = Report::new("fig2");
    for (name, base) in [("linear", linear), ("deep", deep)] {
        let dir = out.join(name);
        let (mut r, trajs, curves) = sgd_ensemble(&base, seed, slack)?;
        for i in &mut r.invariants {
            i.id = format!("{name}.{}", i.id);
        }
        let worst = trajs.iter().map(|t| t.last().cos[0]).fold(f64::INFINITY, f64::min);
        r.push(format!("{name}.final_cos"), worst > 0.99, worst - 0.99, format!("min final cosθ over {SGD_SEEDS} seeds {worst:.6}"));
        write(&dir, "traj.csv", &trajs[0].to_csv())?;
        write(&dir, "angle.svg", &angle_plot(&trajs[0], &curves, &format!("{name} SGD, seed {seed}")))?;
        write(&dir, "norm.svg", &norm_plot(&trajs[0], &[], &format!("{name} SGD, seed {seed}")))?;
        rep.extend(r);
    }
    Ok(rep)
}

fn fig3(out: &Path, seed: u64) -> Result<Report> {
    let scenario = |start: Value, steps: usize| {
        json!({
            "law": {"atoms": [[1.0, 1.0]]},
            "model": {"kind": "two_neuron_relu"},
            "target": [1.0, 0.0],
            "start": start,
            "method": {"kind": "gd", "steps": steps, "schedule": {"kind": "constant", "eta": 1e-2},
                       "batch": {"kind": "minibatch", "size": 1000}},
            "seed": seed,
            "stride": {"geometric": {"per_decade": 40, "min_records": 1000}}
        })
    };
    let cases = [
        ("diff_halfplane", scenario(json!([[3.0, 4.0], [4.0, -3.0]]), 20_000)),
        ("same_halfplane", scenario(json!([[9.0, 1.0], [9.0, 7.0]]), 200_000)),
    ];
    let runs = cases
        .par_iter()
        .map(|(name, v)| Ok((*name, run(&config(v.clone())?)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rep = Report::new("fig3");
    for (name, traj) in runs {
        let dir: PathBuf = out.join(name);
        let last = traj.last();
        let (c1, nc2) = (last.cos[0], -last.cos[1]);
        if name == "diff_halfplane" {
            let best = c1.max(nc2);
            rep.push(format!("{name}.final_direction"), best > 0.99, best - 0.99, format!("final max(cosθ1, −cosθ2) = {best:.6}"));
        } else {
            let worst = c1.min(nc2);
            rep.push(
                format!("{name}.final_direction"),
                worst > 0.99,
                worst - 0.99,
                format!("final cosθ1 = {c1:.6}, −cosθ2 = {nc2:.6}"),
            );
        }
        write(&dir, "traj.csv", &traj.to_csv())?;
        write(&dir, "angle.svg", &angle_plot(&traj, &[], name))?;
        write(&dir, "norm.svg", &norm_plot(&traj, &[], name))?;
        let x = |r: &dirflow::dynamics::Record| r.clock_value(traj.clock);
        let loss = Series::line("loss", traj.records.iter().map(|r| (x(r), r.loss)).collect());
        write(&dir, "loss.svg", &line_plot(name, xlabel(&traj), "population loss", &[loss]))?;
        let path = |i: usize| {
            Series::line(
                format!("w{}", i + 1),
                traj.records.iter().map(|r| (r.weights[i].x, r.weights[i].y)).collect(),
            )
        };
        let v = traj.v * traj.records.iter().map(|r| r.norms[0].max(r.norms[1])).fold(0.0, f64::max);
        let target = Series::dashed("v", vec![(0.0, 0.0), (v.x, v.y)]);
        write(&dir, "trajectory.svg", &line_plot(name, "x₁", "x₂", &[path(0), path(1), target]))?;
    }
    Ok(rep)
}
