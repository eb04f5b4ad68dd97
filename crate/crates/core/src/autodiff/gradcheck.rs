//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(f(w + eps·e_ij) − f(w − eps·e_ij)) / (2·eps)` for every entry of `w`.
pub fn finite_diff_grad<F>(mut f: F, w: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!(
            "finite-difference step must be > 0, got {eps}"
        )));
    }
    let mut probe = w.clone();
    let mut out = Tensor::zeros(w.rows(), w.cols());
    for k in 0..w.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[k] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("objective not finite at entry {k}")));
        }
        out.data_mut()[k] = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}

/// Worst-case agreement between an analytic and a numeric gradient.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradComparison {
    /// Largest relative error over entries whose absolute error exceeds the floor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradComparison {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol
    }

    pub fn merge(self, other: GradComparison) -> GradComparison {
        GradComparison {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
        }
    }
}

impl Default for GradComparison {
    fn default() -> Self {
        Self {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        }
    }
}

/// Entries with `|a − n| ≤ abs_floor` count as exact; the rest are scored by
/// `|a − n| / max(|a|, |n|)`.
pub fn compare_gradients(analytic: &Tensor, numeric: &Tensor, abs_floor: f64) -> GradComparison {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    let mut cmp = GradComparison::default();
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let abs = (a - n).abs();
        cmp.max_abs_err = cmp.max_abs_err.max(abs);
        if abs > abs_floor {
            cmp.max_rel_err = cmp.max_rel_err.max(abs / a.abs().max(n.abs()));
        }
    }
    cmp
}
