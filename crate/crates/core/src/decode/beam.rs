use std::cmp::Ordering;
use std::sync::Arc;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::{Transformer, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

/// Output cap used when the caller does not choose one. Decoders further
/// limit it to the model's `max_len`, since BOS plus the emitted tokens must
/// fit the position table.
pub fn default_max_out(src_len: usize) -> usize {
    2 * src_len + 8
}

/// A (partial) output sequence. `tokens` excludes BOS and ends with EOS
/// exactly when `finished`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Length-normalized score: log-probability per emitted token.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing EOS.
    pub fn output(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOS_ID, rest)) if self.finished => rest,
            _ => &self.tokens,
        }
    }
}

/// Tokens a decoder may emit: EOS and the content vocabulary.
pub(crate) fn emittable(vocab: usize) -> impl Iterator<Item = u32> {
    (0..vocab as u32).filter(|&t| t != PAD_ID && t != BOS_ID && t != UNK_ID)
}

fn prefixes(live: &[Hypothesis]) -> Vec<Vec<u32>> {
    live.iter()
        .map(|h| std::iter::once(BOS_ID).chain(h.tokens.iter().copied()).collect())
        .collect()
}

fn encode<F: Scalar>(model: &Transformer<F>, src: &[u32]) -> Result<Arc<Tensor<F>>> {
    if src.is_empty() {
        return Err(Error::Contract("cannot decode an empty source sentence".into()));
    }
    model.encode_sentence(src)
}

/// Step-wise argmax decoding; ties go to the lower token id.
pub fn greedy<F: Scalar>(model: &Transformer<F>, src: &[u32], max_out: usize) -> Result<Hypothesis> {
    let enc = encode(model, src)?;
    let max_out = max_out.min(model.config().max_len);
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_out {
        let lp = &model.next_log_probs(&enc, &prefixes(std::slice::from_ref(&hyp)))?[0];
        let mut best = None::<(u32, f64)>;
        for t in emittable(lp.len()) {
            if best.is_none_or(|(_, b)| lp[t as usize] > b) {
                best = Some((t, lp[t as usize]));
            }
        }
        let (t, l) = best.ok_or_else(|| Error::Contract("empty output vocabulary".into()))?;
        hyp.tokens.push(t);
        hyp.log_prob += l;
        if t == EOS_ID {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Orders candidates by cumulative log-probability (descending), then by
/// parent rank and token id, which fixes every tie.
fn by_logprob(a: &(f64, usize, u32), b: &(f64, usize, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Best hypothesis by normalized score among the finished ones and those
/// that reached the output cap. Ties resolve to the earlier entry.
fn pick_best(finished: Vec<Hypothesis>, live: Vec<Hypothesis>, max_out: usize) -> Option<Hypothesis> {
    finished
        .into_iter()
        .chain(live.into_iter().filter(|h| h.tokens.len() >= max_out))
        .fold(None, |best: Option<Hypothesis>, h| match &best {
            Some(b) if b.score() >= h.score() => best,
            _ => Some(h),
        })
}

/// Beam search with length-normalized final selection.
///
/// Each step expands every live hypothesis over the emittable tokens and
/// ranks all candidates by cumulative log-probability. EOS candidates ranked
/// within the top `beam` become finished; the best `beam` non-EOS candidates
/// stay live. Search stops once `beam` hypotheses finished, nothing is live,
/// or `max_out` tokens (at most `max_len`) were produced; live hypotheses
/// that reached the cap then compete with the finished ones.
pub fn beam_search<F: Scalar>(
    model: &Transformer<F>,
    src: &[u32],
    beam: usize,
    max_out: usize,
) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let enc = encode(model, src)?;
    let max_out = max_out.min(model.config().max_len);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished = Vec::new();
    for _ in 0..max_out {
        let lps = model.next_log_probs(&enc, &prefixes(&live))?;
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (parent, (h, lp)) in live.iter().zip(&lps).enumerate() {
            for t in emittable(lp.len()) {
                cands.push((h.log_prob + lp[t as usize], parent, t));
            }
        }
        cands.sort_by(by_logprob);
        let mut next = Vec::with_capacity(beam);
        for (rank, &(lp, parent, t)) in cands.iter().enumerate() {
            if rank >= beam && next.len() >= beam {
                break;
            }
            let mut tokens = live[parent].tokens.clone();
            tokens.push(t);
            if t == EOS_ID {
                if rank < beam {
                    finished.push(Hypothesis {
                        tokens,
                        log_prob: lp,
                        finished: true,
                    });
                }
            } else if next.len() < beam {
                next.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: false,
                });
            }
        }
        live = next;
        if finished.len() >= beam || live.is_empty() {
            break;
        }
    }
    pick_best(finished, live, max_out).ok_or_else(|| Error::Contract("beam search produced nothing".into()))
}

/// Decodes with `beam_search` (greedy when `beam == 1` is equivalent) using
/// the default output cap.
pub fn translate<F: Scalar>(model: &Transformer<F>, src: &[u32], beam: usize) -> Result<Hypothesis> {
    beam_search(model, src, beam, default_max_out(src.len()))
}

/// Decodes every sentence of `src`, returning outputs without EOS.
pub fn decode_corpus<F: Scalar>(model: &Transformer<F>, src: &[Vec<u32>], beam: usize) -> Result<Vec<Vec<u32>>> {
    src.iter()
        .map(|s| Ok(translate(model, s, beam)?.output().to_vec()))
        .collect()
}
