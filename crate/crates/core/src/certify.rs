//! Checks recorded trajectories against bound curves.

use serde::Serialize;

use crate::bounds::BoundCurve;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

/// Allowed violation of a bound before a record fails.
#[derive(Debug, Clone, PartialEq)]
pub enum Slack {
    Uniform(f64),
    /// One tolerance per trajectory record.
    PerRecord(Vec<f64>),
}

impl Default for Slack {
    fn default() -> Self {
        Slack::Uniform(1e-6)
    }
}

impl Slack {
    fn at(&self, i: usize) -> f64 {
        match self {
            Slack::Uniform(s) => *s,
            Slack::PerRecord(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    pub record: usize,
    pub clock: f64,
    pub margin: f64,
    pub slack: f64,
    /// Floating-point resolution added to the slack.
    pub rounding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub margins: Vec<Margin>,
    pub min_margin: f64,
    /// Clock value at which the smallest margin occurs.
    pub argmin: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Compares every record inside the curve's domain with the curve. A
/// record fails when its margin is below `−(slack + rounding)`, where the
/// rounding term is a few ulps of the compared quantities, so slack zero
/// means exact comparison up to floating-point resolution.
pub fn certify(traj: &Trajectory, curve: &BoundCurve, slack: &Slack) -> Result<CertificationReport> {
    if curve.clock != traj.clock {
        return Err(Error::config("curve and trajectory use different clocks"));
    }
    if let Slack::PerRecord(v) = slack {
        if v.len() != traj.records.len() {
            return Err(Error::config(format!(
                "per-record slack has {} entries for {} records",
                v.len(),
                traj.records.len()
            )));
        }
    }
    let margins: Vec<Margin> = traj
        .records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            curve.margin(r, &traj.v).map(|m| Margin {
                record: i,
                clock: r.clock_value(traj.clock),
                margin: m.margin,
                slack: slack.at(i),
                rounding: m.rounding,
            })
        })
        .collect();
    if margins.is_empty() {
        return Err(Error::domain(format!(
            "no record falls in the curve domain [{}, {}]",
            curve.domain.0, curve.domain.1
        )));
    }
    let worst = margins
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin))
        .expect("nonempty");
    let violations = margins.iter().filter(|m| !(m.margin >= -(m.slack + m.rounding))).count();
    Ok(CertificationReport {
        min_margin: worst.margin,
        argmin: worst.clock,
        violations,
        pass: violations == 0,
        margins,
    })
}

/// Certifies against several curves; passes only if all do.
pub fn certify_all(traj: &Trajectory, curves: &[BoundCurve], slack: &Slack) -> Result<Vec<CertificationReport>> {
    curves.iter().map(|c| certify(traj, c, slack)).collect()
}
