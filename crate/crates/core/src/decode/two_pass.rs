use crate::autodiff::Scalar;
use crate::error::Result;
use crate::model::Transformer;

use super::beam::translate;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoPassOutput {
    /// First-pass output: the source rearranged into target order.
    pub reordered: Vec<u32>,
    pub translation: Vec<u32>,
    /// Set when either pass hit its output cap before EOS, or the first
    /// pass output had to be shortened for the second model.
    pub truncated: bool,
}

/// Reorders `src` with the first model, then translates the result with the
/// second. Both models share the source vocabulary on the reordered side.
///
/// An empty first-pass output falls back to the original source so the
/// second pass always has input; one longer than the second model accepts is
/// cut to its `max_len`.
pub fn run_2pt<F: Scalar>(
    reorder_model: &Transformer<F>,
    translate_model: &Transformer<F>,
    src: &[u32],
    beam: usize,
) -> Result<TwoPassOutput> {
    let first = translate(reorder_model, src, beam)?;
    let mut reordered = first.output().to_vec();
    if reordered.is_empty() {
        log::warn!("reordering pass produced no tokens; using the original source");
        reordered = src.to_vec();
    }
    let cap = translate_model.config().max_len;
    let cut = reordered.len() > cap;
    if cut {
        log::warn!("reordered source of {} tokens cut to {cap}", reordered.len());
        reordered.truncate(cap);
    }
    let second = translate(translate_model, &reordered, beam)?;
    let truncated = cut || !first.finished || !second.finished;
    if truncated {
        log::warn!("two-pass decoding stopped at the output cap before EOS");
    }
    Ok(TwoPassOutput {
        translation: second.output().to_vec(),
        reordered,
        truncated,
    })
}
