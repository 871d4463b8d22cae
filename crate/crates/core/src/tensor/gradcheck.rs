use super::ParamStore;
use crate::error::{MogError, Result};

/// Denominator floor for [`relative_error`]. Below this magnitude the
/// comparison degrades to an absolute one, so coordinates whose true
/// gradient is ~0 are not judged on round-off alone.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-3;

/// `|analytic - numeric| / max(|analytic|, |numeric|, GRADCHECK_ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADCHECK_ABS_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per-tensor maximum relative error, in store order.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the gradients currently held in `params` against central
/// differences `(f(θ + h eᵢ) - f(θ - h eᵢ)) / 2h` for every coordinate of
/// every tensor that requires a gradient.
///
/// `params` is restored bit-for-bit before returning. A missing gradient
/// buffer is treated as all zeros.
pub fn gradient_check<F>(params: &mut ParamStore, h: f64, tol: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(MogError::invalid("finite-difference step must be positive"));
    }
    if let Some((name, what)) = params.first_non_finite() {
        return Err(MogError::invalid(format!("parameter `{name}` has a non-finite {what}")));
    }
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(MogError::state(format!(
            "objective is not deterministic: {first} then {second}"
        )));
    }

    let mut per_tensor = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut coordinates = 0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if !params.get(id).requires_grad() {
            continue;
        }
        let analytic: Vec<f64> = params
            .get(id)
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; params.get(id).numel()]);
        let mut tensor_max: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let original = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = original + h;
            let plus = f(params);
            params.get_mut(id).data_mut()[i] = original - h;
            let minus = f(params);
            params.get_mut(id).data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(a, numeric);
            coordinates += 1;
            tensor_max = tensor_max.max(err);
            if err > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(err);
                worst = Some((params.name(id).to_string(), i));
            }
        }
        per_tensor.push((params.name(id).to_string(), tensor_max));
    }
    Ok(GradCheckReport {
        per_tensor,
        max_rel_error,
        worst,
        coordinates,
        tol,
        passed: max_rel_error < tol,
    })
}
