//! Model families and balanced layer stacks for deep linear networks.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which predictor is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// `φ(x) = wᵀx`
    Linear,
    /// `φ(x) = W_N⋯W₁x`; `widths[0] = d`, `widths[depth] = 1`.
    DeepLinear { depth: usize, widths: Vec<usize> },
    /// `φ(x) = σ(w₁ᵀx) − σ(w₂ᵀx)` with ReLU `σ`.
    TwoNeuronRelu,
}

impl ModelSpec {
    /// Deep linear model with hidden widths `max(2, d)`.
    pub fn deep(depth: usize, input_dim: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        let hidden = input_dim.max(2);
        let mut widths = vec![hidden; depth + 1];
        widths[0] = input_dim;
        widths[depth] = 1;
        Self::deep_with_widths(depth, widths)
    }

    pub fn deep_with_widths(depth: usize, widths: Vec<usize>) -> Result<Self> {
        let spec = ModelSpec::DeepLinear { depth, widths };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let ModelSpec::DeepLinear { depth, widths } = self {
            if *depth == 0 {
                return Err(Error::config("depth must be at least 1"));
            }
            if widths.len() != depth + 1 {
                return Err(Error::config(format!(
                    "depth {depth} needs {} widths, got {}",
                    depth + 1,
                    widths.len()
                )));
            }
            if widths.iter().any(|&w| w == 0) {
                return Err(Error::config("layer widths must be positive"));
            }
            if widths[*depth] != 1 {
                return Err(Error::config("last width must be 1"));
            }
            if widths[0] < 2 {
                return Err(Error::config("input width must be at least 2"));
            }
        }
        Ok(())
    }

    /// Number of weight vectors tracked in the plane.
    pub fn weight_count(&self) -> usize {
        match self {
            ModelSpec::TwoNeuronRelu => 2,
            _ => 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ModelSpec::DeepLinear { depth, .. } => *depth,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Linear => "linear",
            ModelSpec::DeepLinear { .. } => "deep_linear",
            ModelSpec::TwoNeuronRelu => "two_neuron_relu",
        }
    }
}

/// Layer matrices `W₁ … W_N`, `W_j ∈ R^{h_j × h_{j-1}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<DMatrix<f64>>,
}

impl LayerStack {
    pub fn new(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a layer stack needs at least one layer"));
        }
        for j in 1..layers.len() {
            if layers[j].ncols() != layers[j - 1].nrows() {
                return Err(Error::config(format!(
                    "layer {} has {} columns but layer {} has {} rows",
                    j + 1,
                    layers[j].ncols(),
                    j,
                    layers[j - 1].nrows()
                )));
            }
        }
        if layers.last().map(|w| w.nrows()) != Some(1) {
            return Err(Error::config("last layer must have a single row"));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.nrows()));
        w
    }

    /// `w_e = (W_N⋯W₁)ᵀ`
    pub fn effective_weight(&self) -> DVector<f64> {
        let p = self.partial_product(0, self.depth());
        DVector::from_iterator(p.ncols(), p.row(0).iter().copied())
    }

    /// `W_{hi}⋯W_{lo+1}` with 0-based layer indices `lo..hi`; identity when empty.
    fn partial_product(&self, lo: usize, hi: usize) -> DMatrix<f64> {
        if lo >= hi {
            let n = if lo == 0 { self.input_dim() } else { self.layers[lo - 1].nrows() };
            return DMatrix::identity(n, n);
        }
        let mut p = self.layers[lo].clone();
        for l in &self.layers[lo + 1..hi] {
            p = l * p;
        }
        p
    }

    /// `max_j ‖W_{j+1}ᵀW_{j+1} − W_jW_jᵀ‖_F`
    pub fn balance_residual(&self) -> f64 {
        self.layers
            .windows(2)
            .map(|p| (p[1].transpose() * &p[1] - &p[0] * p[0].transpose()).norm())
            .fold(0.0, f64::max)
    }

    pub(crate) fn to_flat(&self) -> DVector<f64> {
        let n: usize = self.layers.iter().map(|l| l.len()).sum();
        let mut out = DVector::zeros(n);
        let mut k = 0;
        for l in &self.layers {
            out.rows_mut(k, l.len()).copy_from_slice(l.as_slice());
            k += l.len();
        }
        out
    }

    pub(crate) fn from_flat(&self, flat: &DVector<f64>) -> Self {
        let mut k = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let m = DMatrix::from_column_slice(l.nrows(), l.ncols(), &flat.as_slice()[k..k + l.len()]);
                k += l.len();
                m
            })
            .collect();
        Self { layers }
    }
}

/// Unit vectors used for the hidden spaces of a balanced factorization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HiddenDirections {
    #[default]
    FirstAxis,
    Random(u64),
}

/// Rank-one balanced stack with product `w_e0ᵀ`, using `e₁` in every hidden space.
pub fn balanced_factorization(w_e0: &DVector<f64>, depth: usize, widths: &[usize]) -> Result<LayerStack> {
    balanced_factorization_with(w_e0, depth, widths, HiddenDirections::FirstAxis)
}

/// `W_j = s u_{j+1} u_jᵀ`, `s = ‖w_e0‖^{1/N}`, `u₁ = w̄_e0`, `u_{N+1} = 1`.
pub fn balanced_factorization_with(
    w_e0: &DVector<f64>,
    depth: usize,
    widths: &[usize],
    hidden: HiddenDirections,
) -> Result<LayerStack> {
    ModelSpec::deep_with_widths(depth, widths.to_vec())?;
    if widths[0] != w_e0.len() {
        return Err(Error::config(format!(
            "input width {} does not match the weight dimension {}",
            widths[0],
            w_e0.len()
        )));
    }
    let norm = w_e0.norm();
    if !(norm > 0.0) {
        return Err(Error::config("cannot factor a zero effective weight"));
    }
    let s = norm.powf(1.0 / depth as f64);
    let mut rng = match hidden {
        HiddenDirections::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        HiddenDirections::FirstAxis => None,
    };
    let mut units: Vec<DVector<f64>> = Vec::with_capacity(depth + 1);
    units.push(w_e0 / norm);
    for &h in &widths[1..depth] {
        let u = match rng.as_mut() {
            Some(rng) => loop {
                let g: DVector<f64> = DVector::from_fn(h, |_, _| StandardNormal.sample(rng));
                let n = g.norm();
                if n > 1e-8 {
                    break g / n;
                }
            },
            None => {
                let mut e = DVector::zeros(h);
                e[0] = 1.0;
                e
            }
        };
        units.push(u);
    }
    units.push(DVector::from_element(1, 1.0));
    let layers = (0..depth).map(|j| &units[j + 1] * units[j].transpose() * s).collect();
    LayerStack::new(layers)
}

/// `∇_{W_j} = (W_N⋯W_{j+1})ᵀ g_eᵀ (W_{j-1}⋯W₁)ᵀ` for the gradient `g_e` of the
/// single-layer loss at the effective weight.
pub fn layerwise_gradients_from(stack: &LayerStack, g_e: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    if g_e.len() != stack.input_dim() {
        return Err(Error::config(format!(
            "gradient has dimension {} but the stack takes inputs of dimension {}",
            g_e.len(),
            stack.input_dim()
        )));
    }
    let n = stack.depth();
    Ok((0..n)
        .map(|j| {
            let above = stack.partial_product(j + 1, n); // 1 × h_j
            let below = stack.partial_product(0, j); // h_{j-1} × d
            above.transpose() * g_e.transpose() * below.transpose()
        })
        .collect())
}

/// Free-function form of [`LayerStack::effective_weight`].
pub fn effective_weight(stack: &LayerStack) -> DVector<f64> {
    stack.effective_weight()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_layer_is_the_weight() {
        let w = dv(&[0.6, -0.8]);
        let s = balanced_factorization(&w, 1, &[2, 1]).unwrap();
        assert_eq!(s.layers()[0], DMatrix::from_row_slice(1, 2, &[0.6, -0.8]));
        assert_eq!(s.effective_weight(), w);
    }

    #[test]
    fn depth_four_reproduces_product_and_is_balanced() {
        let w = dv(&[0.6, -0.8]);
        let spec = ModelSpec::deep(4, 2).unwrap();
        let ModelSpec::DeepLinear { widths, .. } = spec else { unreachable!() };
        assert_eq!(widths, vec![2, 2, 2, 2, 1]);
        for hidden in [HiddenDirections::FirstAxis, HiddenDirections::Random(11)] {
            let s = balanced_factorization_with(&w, 4, &widths, hidden).unwrap();
            assert!((s.effective_weight() - &w).norm() < 1e-12);
            assert!(s.balance_residual() < 1e-12);
        }
    }

    #[test]
    fn depth_two_singular_values() {
        let w = dv(&[4.0, 0.0, 0.0]);
        let s = balanced_factorization(&w, 2, &[3, 3, 1]).unwrap();
        for l in s.layers() {
            let sv = l.clone().svd(false, false).singular_values;
            assert_relative_eq!(sv.max(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_weight_and_bad_widths_are_rejected() {
        assert!(balanced_factorization(&dv(&[0.0, 0.0]), 2, &[2, 2, 1]).is_err());
        assert!(balanced_factorization(&dv(&[1.0, 0.0]), 2, &[2, 2]).is_err());
        assert!(balanced_factorization(&dv(&[1.0, 0.0]), 2, &[3, 2, 1]).is_err());
        assert!(LayerStack::new(vec![DMatrix::zeros(2, 2), DMatrix::zeros(1, 3)]).is_err());
    }

    #[test]
    fn layer_gradients_match_finite_differences_of_a_linear_functional() {
        // For L = gᵀ w_e the layer gradients are exact directional derivatives.
        let w = dv(&[0.3, 1.1]);
        let s = balanced_factorization_with(&w, 3, &[2, 3, 2, 1], HiddenDirections::Random(3)).unwrap();
        let g = dv(&[0.7, -0.2]);
        let grads = layerwise_gradients_from(&s, &g).unwrap();
        let h = 1e-6;
        for (j, gj) in grads.iter().enumerate() {
            for idx in 0..gj.len() {
                let mut flat = s.to_flat();
                let offset: usize = s.layers()[..j].iter().map(|l| l.len()).sum();
                flat[offset + idx] += h;
                let up = g.dot(&s.from_flat(&flat).effective_weight());
                flat[offset + idx] -= 2.0 * h;
                let down = g.dot(&s.from_flat(&flat).effective_weight());
                assert_relative_eq!((up - down) / (2.0 * h), gj[idx], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let s = balanced_factorization(&dv(&[1.0, 2.0]), 3, &[2, 2, 2, 1]).unwrap();
        assert_eq!(s.from_flat(&s.to_flat()), s);
    }
}
