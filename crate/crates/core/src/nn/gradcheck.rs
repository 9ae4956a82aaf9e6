//! Central finite-difference check of analytic gradients.

use super::layer::{LayerId, ParamStore};
use super::tape::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Worst disagreement found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(1e-8, |a| + |n|)` over all checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(layer name, flat index, analytic, numeric)` at the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares the analytic gradient of `objective` against central differences
/// with step `h` for every entry of the given layers.
///
/// `objective` must be deterministic (no live dropout).
pub fn grad_check<S, F>(
    params: &ParamStore<S>,
    layers: &[LayerId],
    h: S,
    objective: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&ParamStore<S>) -> Result<(S, Gradients<S>)>,
{
    let (base, analytic) = objective(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base} at the base point")));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let two_h = h + h;
    let mut probe = params.clone();
    for &id in layers {
        let count = params.layer(id).param_count();
        for k in 0..count {
            let orig = params.layer(id).get_flat(k);
            *probe.layer_mut(id).flat_mut(k) = orig + h;
            let (plus, _) = objective(&probe)?;
            *probe.layer_mut(id).flat_mut(k) = orig - h;
            let (minus, _) = objective(&probe)?;
            *probe.layer_mut(id).flat_mut(k) = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing {}[{k}]",
                    params.name(id)
                )));
            }
            let numeric = ((plus - minus) / two_h).to_f64_lossy();
            let a = analytic.flat(id, k).to_f64_lossy();
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), k, a, numeric));
            }
        }
    }
    Ok(report)
}
