//! Word-alignment driven reordering.
//!
//! Alignments arrive in Pharaoh format (`"i-j"` pairs, 0-based source then
//! target index). Each source token gets a target key:
//!
//! * one-to-many: the smallest linked target index wins;
//! * keys past the end of the source sentence are clamped to `src_len - 1`;
//! * tokens without links stay [`TargetKey::Unaligned`].
//!
//! Reordering pins unaligned tokens to their slot and stably sorts the rest by
//! key, so tokens sharing a target (many-to-one) move as one unit and keep
//! their relative order.

use std::collections::BTreeSet;
use std::fmt;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Deduplicated `(source, target)` links of one sentence pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AlignmentSet {
    links: BTreeSet<(usize, usize)>,
}

impl AlignmentSet {
    pub fn new(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            links: links.into_iter().collect(),
        }
    }

    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

impl fmt::Display for AlignmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, (s, t)) in self.links.iter().enumerate() {
            if n > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}-{t}")?;
        }
        Ok(())
    }
}

pub fn parse_alignments(line: &str) -> Result<AlignmentSet> {
    let mut links = BTreeSet::new();
    for (position, token) in line.split_whitespace().enumerate() {
        let err = |reason: &str| Error::Parse {
            position,
            token: token.to_string(),
            reason: reason.to_string(),
        };
        let (s, t) = token.split_once('-').ok_or_else(|| err("expected i-j"))?;
        let s = s.parse().map_err(|_| err("source index is not an integer"))?;
        let t = t.parse().map_err(|_| err("target index is not an integer"))?;
        links.insert((s, t));
    }
    Ok(AlignmentSet { links })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetKey {
    Aligned(usize),
    Unaligned,
}

/// One key per source token.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TargetKeyVector(pub Vec<TargetKey>);

impl TargetKeyVector {
    pub fn identity(len: usize) -> Self {
        Self((0..len).map(TargetKey::Aligned).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Supervising position of each token: its key, or its own index when
    /// unaligned.
    pub fn positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, k)| match k {
                TargetKey::Aligned(j) => *j,
                TargetKey::Unaligned => i,
            })
            .collect()
    }

    /// Parses the keys-file line format: integers, `-` for unaligned.
    pub fn parse(line: &str) -> Result<Self> {
        line.split_whitespace()
            .enumerate()
            .map(|(position, tok)| {
                if tok == "-" {
                    Ok(TargetKey::Unaligned)
                } else {
                    tok.parse().map(TargetKey::Aligned).map_err(|_| Error::Parse {
                        position,
                        token: tok.to_string(),
                        reason: "expected an integer or '-'".into(),
                    })
                }
            })
            .collect::<Result<_>>()
            .map(Self)
    }
}

impl fmt::Display for TargetKeyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, k) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(" ")?;
            }
            match k {
                TargetKey::Aligned(j) => write!(f, "{j}")?,
                TargetKey::Unaligned => f.write_str("-")?,
            }
        }
        Ok(())
    }
}

pub fn assign_target_keys(
    align: &AlignmentSet,
    src_len: usize,
    tgt_len: usize,
) -> Result<TargetKeyVector> {
    let mut keys = vec![TargetKey::Unaligned; src_len];
    for (s, t) in align.links() {
        if s >= src_len || t >= tgt_len {
            return Err(Error::Input(format!(
                "alignment link {s}-{t} outside a {src_len}x{tgt_len} sentence pair"
            )));
        }
        // Links iterate in ascending (s, t) order, so the first one seen per
        // source token carries its smallest target index.
        if keys[s] == TargetKey::Unaligned {
            keys[s] = TargetKey::Aligned(t.min(src_len - 1));
        }
    }
    Ok(TargetKeyVector(keys))
}

pub fn reorder_source<T: Clone>(tokens: &[T], keys: &TargetKeyVector) -> Result<Vec<T>> {
    if tokens.len() != keys.len() {
        return Err(Error::Contract(format!(
            "reorder_source: {} tokens but {} keys",
            tokens.len(),
            keys.len()
        )));
    }
    let mut moving: Vec<(usize, usize)> = keys
        .0
        .iter()
        .enumerate()
        .filter_map(|(i, k)| match k {
            TargetKey::Aligned(j) => Some((*j, i)),
            TargetKey::Unaligned => None,
        })
        .collect();
    moving.sort_unstable();
    let mut moving = moving.into_iter();
    Ok(keys
        .0
        .iter()
        .enumerate()
        .map(|(slot, k)| match k {
            TargetKey::Unaligned => tokens[slot].clone(),
            TargetKey::Aligned(_) => {
                let (_, src) = moving.next().expect("one aligned token per aligned slot");
                tokens[src].clone()
            }
        })
        .collect())
}

/// Row `i` is `pe_table[j]` for `Aligned(j)`, `pe_table[i]` when unaligned.
pub fn supervising_positions<F: Scalar>(
    keys: &TargetKeyVector,
    pe_table: &Tensor<F>,
) -> Result<Tensor<F>> {
    let max_len = pe_table.shape()[0];
    let d = pe_table.cols();
    let mut data = Vec::with_capacity(keys.len() * d);
    for pos in keys.positions() {
        if pos >= max_len {
            return Err(Error::Contract(format!(
                "supervising position {pos} beyond table of {max_len} rows"
            )));
        }
        data.extend_from_slice(pe_table.row(pos));
    }
    Ok(Tensor::new(vec![keys.len(), d], data)?)
}
