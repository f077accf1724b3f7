//! Finite-difference verification of analytic gradients.
//!
//! The backward passes in this crate are written by hand, so every one of
//! them is checked against central differences:
//!
//! ```text
//! dL/dp ~ (L(p + h) - L(p - h)) / (2h)
//! ```
//!
//! The caller runs its analytic backward pass first (gradients accumulated
//! in the store), then hands over a pure loss closure. The checker perturbs
//! each sampled element, re-evaluates the loss twice, restores the value,
//! and compares. The loss closure must be deterministic: anything stochastic
//! (reference sampling, negative sampling) has to be frozen beforehand.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Central-difference step size.
    pub h: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Cap on elements checked per parameter; `None` checks every element.
    pub max_samples_per_param: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h: 1e-5,
            tolerance: 1e-4,
            max_samples_per_param: None,
        }
    }
}

/// Worst disagreement found, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct GradCheckWorst {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub worst: Option<GradCheckWorst>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Relative error with an absolute floor: tiny values compare absolutely.
fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs())
}

/// Compare the analytic gradients currently stored in `store` against
/// central finite differences of `loss_fn`.
///
/// `rng` drives the element subsample when `max_samples_per_param` is set;
/// pass any seeded stream. Parameter values are restored exactly after each
/// probe, so the store is bit-identical on return.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    opts: &GradCheck,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        tolerance: opts.tolerance,
        worst: None,
    };

    for name in &names {
        let len = store.value(name)?.len();
        let indices: Vec<usize> = match opts.max_samples_per_param {
            Some(cap) if cap < len => rng.sample_distinct(len, cap, &[]),
            _ => (0..len).collect(),
        };

        for idx in indices {
            let analytic = store.grad(name)?.data()[idx];
            let original = store.value(name)?.data()[idx];

            store.value_mut(name)?.data_mut()[idx] = original + opts.h;
            let plus = loss_fn(store)?;
            store.value_mut(name)?.data_mut()[idx] = original - opts.h;
            let minus = loss_fn(store)?;
            store.value_mut(name)?.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * opts.h);
            let err = rel_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(GradCheckWorst {
                    param: name.clone(),
                    index: idx,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
