use crate::error::{Error, Result};

/// Inverse square-root schedule with linear warmup:
/// `d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Contract("lr_schedule: steps are 1-based".into()));
    }
    if warmup == 0 || d_model == 0 {
        return Err(Error::Config("lr_schedule: warmup and d_model must be positive".into()));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}
