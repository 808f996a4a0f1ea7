//! Central finite-difference oracle for analytic gradients.
//!
//! The oracle only ever evaluates the scalar loss, so it is independent of any
//! backward-pass code it is used to check.

use crate::tensor::ParamSet;

/// Per-array comparison result.
#[derive(Clone, Debug)]
pub struct ArrayCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub arrays: Vec<ArrayCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.arrays
            .iter()
            .map(|a| a.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ArrayCheck> {
        self.arrays
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps entries whose true
/// gradient is numerically zero from dominating the maximum.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` at `params`,
/// element by element, for every array accepted by `include`.
pub fn check<P, F>(
    params: &P,
    analytic: &P,
    loss: F,
    eps: f64,
    floor: f64,
    include: impl Fn(&str) -> bool,
) -> GradReport
where
    P: ParamSet<f64> + Clone,
    F: Fn(&P) -> f64,
{
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .into_iter()
        .map(|(_, t)| t.data.clone())
        .collect();
    let mut probe = params.clone();
    let mut arrays = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        if !include(name) {
            continue;
        }
        let len = grads[idx].len();
        let mut worst_rel = 0.0f64;
        let mut worst_abs = 0.0f64;
        for j in 0..len {
            let orig = probe.tensors()[idx].1.data[j];
            probe.tensors_mut()[idx].1.data[j] = orig + eps;
            let up = loss(&probe);
            probe.tensors_mut()[idx].1.data[j] = orig - eps;
            let down = loss(&probe);
            probe.tensors_mut()[idx].1.data[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[idx][j];
            worst_rel = worst_rel.max(relative_error(a, numeric, floor));
            worst_abs = worst_abs.max((a - numeric).abs());
        }
        arrays.push(ArrayCheck {
            name: name.clone(),
            max_rel_error: worst_rel,
            max_abs_error: worst_abs,
            checked: len,
        });
    }
    GradReport { arrays }
}
