use serde::Serialize;

use super::{Precision, Scalar, Tensor};
use crate::error::{Error, Result};

/// Central-difference settings.
///
/// Entry error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
/// The floor keeps entries whose true gradient is near zero from being judged
/// on round-off alone.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheckConfig {
    pub step: f64,
    pub tol: f64,
    pub floor: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            step: 1e-5,
            tol: 1e-5,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EntryError {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst: Option<EntryError>,
    pub tol: f64,
    pub passed: bool,
}

/// Compare the tape gradient of `f` against central differences for every
/// entry of every tensor in `params`.
///
/// `f` receives the parameter list to evaluate at; it must build its loss
/// from those tensors only.
pub fn finite_difference_check<T, F>(f: F, params: &[Tensor<T>], cfg: &CheckConfig) -> Result<CheckReport>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    if T::PRECISION != Precision::Double {
        return Err(Error::SinglePrecisionCheck);
    }
    if cfg.step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::config("/step", "finite-difference step must be > 0"));
    }

    let tracked: Vec<Tensor<T>> = params.iter().map(|p| p.detach_as_parameter()).collect();
    f(&tracked)?.backward()?;
    let analytic: Vec<Vec<T>> = tracked
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]))
        .collect();

    let frozen: Vec<Tensor<T>> = params.iter().map(|p| p.detach()).collect();
    let h = T::from_f64_lossy(cfg.step);
    let two_h = h + h;
    let mut entries = 0;
    let mut worst: Option<EntryError> = None;
    for (pi, p) in frozen.iter().enumerate() {
        for idx in 0..p.numel() {
            let eval_at = |delta: T| -> Result<T> {
                let mut data = p.to_vec();
                data[idx] += delta;
                let mut args = frozen.clone();
                args[pi] = Tensor::new(p.shape(), data)?;
                Ok(f(&args)?.item())
            };
            let numeric = ((eval_at(h)? - eval_at(-h)?) / two_h).as_f64();
            let a = analytic[pi][idx].as_f64();
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel_error = (a - numeric).abs() / denom;
            entries += 1;
            if worst.as_ref().is_none_or(|w| rel_error > w.rel_error || rel_error.is_nan()) {
                worst = Some(EntryError {
                    param: pi,
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    let max_rel_error = worst.as_ref().map_or(0.0, |w| w.rel_error);
    Ok(CheckReport {
        entries,
        max_rel_error,
        worst,
        tol: cfg.tol,
        passed: max_rel_error <= cfg.tol,
    })
}
