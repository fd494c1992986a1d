//! Coordinates in the invariant plane spanned by the target and the weights.

use nalgebra::{DVector, Vector2};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-12;

/// Target direction and one or two weight vectors in plane coordinates,
/// together with an orthonormal basis embedding the plane in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneState {
    pub v: Vector2<f64>,
    pub weights: Vec<Vector2<f64>>,
    basis: [DVector<f64>; 2],
}

impl PlaneState {
    /// State in `R²` with the standard basis.
    pub fn new(v: Vector2<f64>, weights: Vec<Vector2<f64>>) -> Result<Self> {
        let basis = [DVector::from_column_slice(&[1.0, 0.0]), DVector::from_column_slice(&[0.0, 1.0])];
        Self::with_basis(v, weights, basis)
    }

    pub fn with_basis(v: Vector2<f64>, weights: Vec<Vector2<f64>>, basis: [DVector<f64>; 2]) -> Result<Self> {
        if (v.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::config(format!("target must be a unit vector, got norm {}", v.norm())));
        }
        if weights.is_empty() || weights.len() > 2 {
            return Err(Error::config(format!("expected one or two weight vectors, got {}", weights.len())));
        }
        if weights.iter().any(|w| !w.iter().all(|c| c.is_finite())) {
            return Err(Error::config("weights must be finite"));
        }
        let [e1, e2] = &basis;
        if e1.len() != e2.len() || e1.len() < 2 {
            return Err(Error::config("basis vectors must share a dimension of at least 2"));
        }
        if (e1.norm() - 1.0).abs() > UNIT_TOL || (e2.norm() - 1.0).abs() > UNIT_TOL || e1.dot(e2).abs() > UNIT_TOL {
            return Err(Error::config("basis is not orthonormal"));
        }
        Ok(Self { v, weights, basis })
    }

    /// Builds plane coordinates from ambient vectors. The first basis vector
    /// is `v̄`; the second comes from Gram–Schmidt on the first weight not
    /// parallel to `v`. Fails if the weights do not lie in one plane with `v`.
    pub fn from_ambient(v: &DVector<f64>, weights: &[DVector<f64>]) -> Result<Self> {
        let d = v.len();
        if d < 2 {
            return Err(Error::config("dimension must be at least 2"));
        }
        if weights.iter().any(|w| w.len() != d) {
            return Err(Error::config("weights and target have different dimensions"));
        }
        let vn = v.norm();
        if !(vn > 0.0) {
            return Err(Error::config("target must be nonzero"));
        }
        let e1 = v / vn;
        let mut e2 = None;
        for w in weights {
            let r = w - &e1 * e1.dot(w);
            if r.norm() > 1e-10 * w.norm().max(1.0) {
                e2 = Some(r.normalize());
                break;
            }
        }
        let e2 = e2.unwrap_or_else(|| {
            // any unit vector orthogonal to v
            let k = (0..d).min_by(|&a, &b| e1[a].abs().total_cmp(&e1[b].abs())).unwrap_or(0);
            let mut u = DVector::zeros(d);
            u[k] = 1.0;
            (&u - &e1 * e1[k]).normalize()
        });
        let mut coords = Vec::with_capacity(weights.len());
        for w in weights {
            let c = Vector2::new(e1.dot(w), e2.dot(w));
            let back = &e1 * c.x + &e2 * c.y;
            if (w - back).norm() > 1e-12 * w.norm().max(1.0) {
                return Err(Error::config("weights and target do not lie in a common plane"));
            }
            coords.push(c);
        }
        Self::with_basis(Vector2::new(1.0, 0.0), coords, [e1, e2])
    }

    pub fn dimension(&self) -> usize {
        self.basis[0].len()
    }

    pub fn basis(&self) -> &[DVector<f64>; 2] {
        &self.basis
    }

    pub fn embed(&self, p: &Vector2<f64>) -> DVector<f64> {
        &self.basis[0] * p.x + &self.basis[1] * p.y
    }

    pub fn project(&self, x: &DVector<f64>) -> Vector2<f64> {
        Vector2::new(self.basis[0].dot(x), self.basis[1].dot(x))
    }

    pub fn cos_theta(&self, i: usize) -> f64 {
        cos_angle(&self.weights[i], &self.v)
    }
}

/// Cosine of the angle between `w` and unit `v`; `NaN` for `w = 0`.
pub fn cos_angle(w: &Vector2<f64>, v: &Vector2<f64>) -> f64 {
    let n = w.norm();
    if n == 0.0 {
        return f64::NAN;
    }
    (w.dot(v) / n).clamp(-1.0, 1.0)
}

/// Angle in `[0, π]` between `w` and unit `v`, computed with `atan2` for
/// accuracy near `0` and `π`.
pub fn angle(w: &Vector2<f64>, v: &Vector2<f64>) -> f64 {
    let cross = v.x * w.y - v.y * w.x;
    cross.abs().atan2(w.dot(v))
}

/// Signed side of `w` relative to the line through `v` (`v × w`).
pub fn side_of(v: &Vector2<f64>, w: &Vector2<f64>) -> f64 {
    v.x * w.y - v.y * w.x
}

/// Unit vector at angle `theta` from `v`, rotated counterclockwise.
pub fn rotate(v: &Vector2<f64>, theta: f64) -> Vector2<f64> {
    let (s, c) = theta.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_unit_target_is_rejected() {
        assert!(PlaneState::new(Vector2::new(1.0, 1.0), vec![Vector2::zeros()]).is_err());
    }

    #[test]
    fn embed_project_round_trip_in_high_dimension() {
        let d = 7;
        let v = DVector::from_fn(d, |i, _| if i == 3 { 2.0 } else { 0.0 });
        let w = DVector::from_fn(d, |i, _| match i {
            3 => 0.5,
            5 => -1.5,
            _ => 0.0,
        });
        let s = PlaneState::from_ambient(&v, &[w.clone()]).unwrap();
        assert!((s.embed(&s.weights[0]) - &w).norm() < 1e-12);
        assert!((s.project(&w) - s.weights[0]).norm() < 1e-12);
        assert!((s.v - Vector2::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn weights_off_the_plane_are_rejected() {
        let v = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let w1 = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        let w2 = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        assert!(PlaneState::from_ambient(&v, &[w1, w2]).is_err());
    }

    #[test]
    fn parallel_weight_gets_some_orthogonal_basis() {
        let v = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        let w = DVector::from_column_slice(&[0.0, 0.0, -3.0]);
        let s = PlaneState::from_ambient(&v, &[w]).unwrap();
        assert!(s.basis()[0].dot(&s.basis()[1]).abs() < 1e-15);
        assert!((s.weights[0] - Vector2::new(-3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn angle_helpers() {
        let v = Vector2::new(0.0, 1.0);
        let w = Vector2::new(0.6, -0.8);
        assert!((cos_angle(&w, &v) + 0.8).abs() < 1e-15);
        assert!((angle(&w, &v).cos() + 0.8).abs() < 1e-15);
        assert!(cos_angle(&Vector2::zeros(), &v).is_nan());
        let r = rotate(&v, std::f64::consts::FRAC_PI_2);
        assert!((r - Vector2::new(-1.0, 0.0)).norm() < 1e-15);
    }
}
