use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

/// Sufficient statistics of corpus BLEU-4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add_sentence<T: Eq + Hash>(&mut self, hyp: &[T], reference: &[T]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            for (gram, c) in ngram_counts(hyp, n) {
                self.matches[n - 1] += c.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    /// BLEU in `[0, 100]`: geometric mean of the modified precisions times
    /// `exp(min(0, 1 - r/c))`; zero when any precision is zero.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0);
        100.0 * (log_p + bp).exp()
    }
}

fn ngram_counts<T: Eq + Hash>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_lines(h: usize, r: usize) -> Result<()> {
    if h != r {
        return Err(Error::Input(format!("{h} hypothesis lines but {r} reference lines")));
    }
    Ok(())
}

/// Corpus BLEU over token sequences.
pub fn bleu_tokens<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_lines(hyps.len(), refs.len())?;
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.add_sentence(h, r);
    }
    Ok(stats.score())
}

/// Corpus BLEU over whitespace-tokenized lines.
pub fn bleu<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    let split = |xs: &[S]| -> Vec<Vec<String>> {
        xs.iter()
            .map(|s| s.as_ref().split_whitespace().map(str::to_string).collect())
            .collect()
    };
    bleu_tokens(&split(hyps), &split(refs))
}

/// Fraction of lines whose token sequences match exactly.
pub fn exact_match<T: PartialEq>(hyps: &[T], refs: &[T]) -> Result<f64> {
    check_lines(hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Err(Error::Input("exact_match over an empty corpus".into()));
    }
    let hits = hyps.iter().zip(refs).filter(|(h, r)| h == r).count();
    Ok(hits as f64 / hyps.len() as f64)
}
