//! Order supervision for the dynamic position encoding layers.
//!
//! The DPE network itself is a stack of encoder layers owned by
//! [`Transformer`](crate::model::Transformer) (see `dpe_forward`); this module
//! holds the two objectives that train it: the order loss between DPE outputs
//! and the sinusoidal rows of their target-side positions, and its affine blend
//! with the translation loss.

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};

/// `Σ_i MSE(PE_i, r_i) / |S|` over the rows of `r` and `supervision`.
///
/// Every row has the same width, so the mean of per-row MSEs equals the MSE
/// over all elements.
pub fn order_loss<F: Scalar>(g: &mut Graph<F>, r: Var, supervision: Var) -> Result<Var> {
    Ok(g.mse(r, supervision)?)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda {lambda} outside [0, 1]")))
    }
}

/// `λ·translation + (1-λ)·order`.
pub fn total_loss(translation: f64, order: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * translation + (1.0 - lambda) * order)
}

/// Graph form of [`total_loss`].
pub fn total_loss_graph<F: Scalar>(g: &mut Graph<F>, translation: Var, order: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let t = g.scale(translation, F::of(lambda));
    let o = g.scale(order, F::of(1.0 - lambda));
    Ok(g.add(t, o)?)
}
