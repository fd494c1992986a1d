//! Spherically symmetric input laws, described through the radial law of
//! their two-dimensional marginal.
//!
//! Every population quantity in this crate only depends on the marginal of `x`
//! on a 2-plane, so a law is stored as a finite list of `(radius, weight)`
//! pairs for `‖x‖` under that marginal: exact atoms plus optional quadrature
//! nodes standing in for a continuous part.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::{gl16, GaussLegendre};

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Discrete,
    /// Standard Gaussian; lifts to `N(0, I_d)` in any dimension.
    Gaussian,
}

/// Radial law of the 2D marginal of a spherically symmetric distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialLaw {
    atoms: Vec<(f64, f64)>,
    quantile_nodes: Vec<(f64, f64)>,
    label: String,
    family: Family,
    support: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

/// Moment constants of the 2D marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentConstants {
    /// `E‖x‖`
    pub c0: f64,
    /// `E|x₁|`
    pub c1: f64,
    /// `E x₁²`
    pub c2: f64,
}

impl RadialLaw {
    /// Builds a law from exact atoms and quadrature nodes. All weights
    /// together must sum to one.
    pub fn new(atoms: Vec<(f64, f64)>, quantile_nodes: Vec<(f64, f64)>, label: impl Into<String>) -> Result<Self> {
        Self::build(atoms, quantile_nodes, label.into(), Family::Discrete)
    }

    fn build(
        atoms: Vec<(f64, f64)>,
        quantile_nodes: Vec<(f64, f64)>,
        label: String,
        family: Family,
    ) -> Result<Self> {
        if atoms.is_empty() && quantile_nodes.is_empty() {
            return Err(Error::config("radial law has no atoms and no quadrature nodes"));
        }
        let mut total = 0.0;
        let mut any_positive = false;
        for &(r, p) in atoms.iter().chain(&quantile_nodes) {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::config(format!("radius must be finite and nonnegative, got {r}")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("probability must lie in [0, 1], got {p}")));
            }
            total += p;
            any_positive |= r > 0.0 && p > 0.0;
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::config(format!("probabilities sum to {total}, not 1")));
        }
        if !any_positive {
            return Err(Error::config("radial law is concentrated at the origin"));
        }
        let support: Vec<(f64, f64)> = atoms
            .iter()
            .chain(&quantile_nodes)
            .copied()
            .filter(|&(_, p)| p > 0.0)
            .collect();
        let mut acc = 0.0;
        let cumulative = support
            .iter()
            .map(|&(_, p)| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            atoms,
            quantile_nodes,
            label,
            family,
            support,
            cumulative,
        })
    }

    /// Discrete law with the given `(radius, probability)` atoms.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let label = format!("atoms{atoms:?}");
        Self::new(atoms, Vec::new(), label)
    }

    /// `x ~ U(S¹)`: a single atom at radius one.
    pub fn unit_circle() -> Self {
        Self::build(vec![(1.0, 1.0)], Vec::new(), "unit_circle".into(), Family::Discrete)
            .expect("unit circle law is valid")
    }

    /// Continuous law given by its quantile function, discretised with an
    /// `n`-point Gauss–Legendre rule in the probability variable.
    pub fn from_quantile(quantile: impl Fn(f64) -> f64, n: usize, label: impl Into<String>) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("at least one quantile node is required"));
        }
        let rule = GaussLegendre::new(n);
        let nodes = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(u, w)| (quantile(0.5 * (u + 1.0)), 0.5 * w))
            .collect();
        Self::new(Vec::new(), nodes, label)
    }

    /// Radial law of the 2D standard Gaussian (Rayleigh). The density
    /// `r e^{-r²/2}` is integrated with graded Gauss–Legendre panels on
    /// `[0, 10]`; the neglected tail mass is below `1e-21`.
    pub fn gaussian2d() -> Self {
        const EDGES: [f64; 14] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0];
        let rule = gl16();
        let mut nodes = Vec::with_capacity(16 * (EDGES.len() - 1));
        for pair in EDGES.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let r = mid + half * x;
                nodes.push((r, half * w * r * (-0.5 * r * r).exp()));
            }
        }
        let total: f64 = nodes.iter().map(|&(_, w)| w).sum();
        for node in nodes.iter_mut() {
            node.1 /= total;
        }
        Self::build(Vec::new(), nodes, "gaussian2d".into(), Family::Gaussian).expect("gaussian nodes are valid")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn quantile_nodes(&self) -> &[(f64, f64)] {
        &self.quantile_nodes
    }

    pub fn is_gaussian(&self) -> bool {
        self.family == Family::Gaussian
    }

    /// All `(radius, weight)` pairs with positive weight.
    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn moment_constants(&self) -> MomentConstants {
        let mean_r: f64 = self.support.iter().map(|&(r, p)| p * r).sum();
        let mean_r2: f64 = self.support.iter().map(|&(r, p)| p * r * r).sum();
        MomentConstants {
            c0: mean_r,
            // angular averages of |cos| and cos² over the circle
            c1: mean_r * 2.0 / std::f64::consts::PI,
            c2: 0.5 * mean_r2,
        }
    }

    /// Draws one radius of the 2D marginal.
    pub(crate) fn draw_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.support.len() - 1);
        self.support[idx].0
    }

    /// Writes one sample of the `out.len()`-dimensional lift into `out`.
    /// Only the Gaussian family lifts above two dimensions.
    pub(crate) fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.family {
            Family::Gaussian => {
                for x in out.iter_mut() {
                    *x = StandardNormal.sample(rng);
                }
            }
            Family::Discrete => {
                debug_assert_eq!(out.len(), 2);
                let r = self.draw_radius(rng);
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                out[0] = r * phi.cos();
                out[1] = r * phi.sin();
            }
        }
    }

    pub(crate) fn check_dimension(&self, dimension: usize) -> Result<()> {
        if dimension < 2 {
            return Err(Error::config(format!("dimension must be at least 2, got {dimension}")));
        }
        if dimension > 2 && self.family != Family::Gaussian {
            return Err(Error::config(format!(
                "radial law '{}' describes a 2D marginal with no spherically symmetric lift to dimension {dimension}",
                self.label
            )));
        }
        Ok(())
    }
}

/// Free-function form of [`RadialLaw::moment_constants`].
pub fn moment_constants(law: &RadialLaw) -> MomentConstants {
    law.moment_constants()
}

/// Draws `count` i.i.d. samples in `R^dimension`, deterministic in `seed`.
pub fn sample(law: &RadialLaw, dimension: usize, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    law.check_dimension(dimension)?;
    if count == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; dimension];
    Ok((0..count)
        .map(|_| {
            law.draw_into(&mut rng, &mut buf);
            DVector::from_column_slice(&buf)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_circle_constants() {
        let m = RadialLaw::unit_circle().moment_constants();
        assert_eq!(m.c0, 1.0);
        assert!((m.c2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unit_circle_c1_matches_angular_quadrature() {
        // (1/2π)∫|cos θ| dθ by composite midpoint rule, independent of the closed form
        let n = 200_000;
        let h = 2.0 * PI / n as f64;
        let s: f64 = (0..n).map(|i| ((i as f64 + 0.5) * h).cos().abs()).sum::<f64>() * h / (2.0 * PI);
        let m = RadialLaw::unit_circle().moment_constants();
        assert!((m.c1 - s).abs() < 1e-9);
        assert!((m.c1 - 0.63662).abs() < 1e-5);
    }

    #[test]
    fn gaussian_constants() {
        let m = RadialLaw::gaussian2d().moment_constants();
        assert!((m.c0 - (PI / 2.0).sqrt()).abs() < 1e-13, "{}", m.c0);
        assert!((m.c1 - (2.0 / PI).sqrt()).abs() < 1e-13);
        assert!((m.c2 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn two_atoms_mean() {
        let law = RadialLaw::from_atoms(vec![(1.0, 0.5), (3.0, 0.5)]).unwrap();
        assert_eq!(law.moment_constants().c0, 2.0);
    }

    #[test]
    fn quantile_law_uniform_radius() {
        // r ~ U[0, 2]: E r = 1, E r² = 4/3
        let law = RadialLaw::from_quantile(|u| 2.0 * u, 64, "uniform").unwrap();
        let m = law.moment_constants();
        assert!((m.c0 - 1.0).abs() < 1e-14);
        assert!((m.c2 - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_laws_are_rejected() {
        assert!(RadialLaw::from_atoms(vec![]).is_err());
        assert!(RadialLaw::from_atoms(vec![(1.0, 0.4)]).is_err());
        assert!(RadialLaw::from_atoms(vec![(-1.0, 1.0)]).is_err());
        assert!(RadialLaw::from_atoms(vec![(0.0, 1.0)]).is_err());
    }

    #[test]
    fn sampling_checks_arguments() {
        let law = RadialLaw::unit_circle();
        assert!(sample(&law, 1, 4, 0).is_err());
        assert!(sample(&law, 2, 0, 0).is_err());
        assert!(sample(&law, 3, 4, 0).is_err());
        assert!(sample(&RadialLaw::gaussian2d(), 7, 4, 0).is_ok());
    }

    #[test]
    fn unit_circle_samples_have_unit_norm() {
        let xs = sample(&RadialLaw::unit_circle(), 2, 4, 7).unwrap();
        assert_eq!(xs.len(), 4);
        for x in xs {
            assert!((x.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let law = RadialLaw::from_atoms(vec![(1.0, 0.25), (2.0, 0.75)]).unwrap();
        assert_eq!(sample(&law, 2, 16, 3).unwrap(), sample(&law, 2, 16, 3).unwrap());
        assert_ne!(sample(&law, 2, 16, 3).unwrap(), sample(&law, 2, 16, 4).unwrap());
    }
}
