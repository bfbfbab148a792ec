//! Synthetic parallel languages with a known word-order permutation.
//!
//! Source words are `s{k}`, target words `t{(k + offset) mod n}` where `n` is
//! the number of content words, and the target sentence is the mapped source
//! sentence permuted by the task's family. Alignments are exact.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_value, unknown_key, Entry};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::model::RESERVED;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Permutation {
    Identity,
    Reverse,
    /// Token `i` lands at `(i + k) mod len`.
    Rotate(usize),
    /// A fresh seeded permutation per sentence.
    Random,
}

impl Permutation {
    /// Landing position of every source index for a sentence of `len`.
    pub fn landing(&self, len: usize, rng: &mut impl Rng) -> Vec<usize> {
        match *self {
            Permutation::Identity => (0..len).collect(),
            Permutation::Reverse => (0..len).rev().collect(),
            Permutation::Rotate(k) => (0..len).map(|i| (i + k) % len).collect(),
            Permutation::Random => {
                let mut p: Vec<usize> = (0..len).collect();
                p.shuffle(rng);
                p
            }
        }
    }
}

impl FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "reverse" => Ok(Self::Reverse),
            "random" => Ok(Self::Random),
            _ => s
                .strip_prefix("rotate-")
                .and_then(|k| k.parse().ok())
                .map(Self::Rotate)
                .ok_or_else(|| Error::Config(format!("unknown permutation family {s:?}"))),
        }
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::Reverse => f.write_str("reverse"),
            Self::Rotate(k) => write!(f, "rotate-{k}"),
            Self::Random => f.write_str("random"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    /// Vocabulary size including the four reserved ids.
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub family: Permutation,
    pub offset: usize,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            vocab: 64,
            min_len: 5,
            max_len: 12,
            family: Permutation::Reverse,
            offset: 1,
            seed: 1,
        }
    }
}

impl SyntheticTask {
    pub fn content_words(&self) -> usize {
        self.vocab.saturating_sub(RESERVED)
    }

    pub fn validate(&self) -> Result<()> {
        if self.content_words() == 0 {
            return Err(Error::Config(format!(
                "synthetic vocab {} leaves no content words after {RESERVED} reserved ids",
                self.vocab
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid synthetic length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    /// Checks that every generated pair fits a model with `model_max_len`
    /// positions (the decoder input carries one extra BOS).
    pub fn check_fits(&self, model_max_len: usize) -> Result<()> {
        if self.max_len + 1 > model_max_len {
            return Err(Error::Config(format!(
                "synthetic sentences up to {} tokens need max_len >= {}, model has {model_max_len}",
                self.max_len,
                self.max_len + 1
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, e: &Entry) -> Result<bool> {
        let (k, v) = (e.key.as_str(), e.value.as_str());
        match k {
            "vocab" => self.vocab = parse_value(k, v)?,
            "min_len" => self.min_len = parse_value(k, v)?,
            "max_len" => self.max_len = parse_value(k, v)?,
            "family" => self.family = v.parse()?,
            "offset" => self.offset = parse_value(k, v)?,
            "seed" => self.seed = parse_value(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_entries(&self) -> Vec<(String, String)> {
        [
            ("vocab", self.vocab.to_string()),
            ("min_len", self.min_len.to_string()),
            ("max_len", self.max_len.to_string()),
            ("family", self.family.to_string()),
            ("offset", self.offset.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Generates `n_pairs` sentence pairs with exact alignments.
pub fn make_synthetic(task: &SyntheticTask, n_pairs: usize) -> Result<Corpus> {
    task.validate()?;
    let n = task.content_words();
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let (mut src, mut tgt, mut align) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n_pairs {
        let len = rng.gen_range(task.min_len..=task.max_len);
        let words: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n)).collect();
        let landing = task.family.landing(len, &mut rng);
        let mut out = vec![String::new(); len];
        for (i, &w) in words.iter().enumerate() {
            out[landing[i]] = format!("t{}", (w + task.offset) % n);
        }
        src.push(words.iter().map(|w| format!("s{w}")).collect::<Vec<_>>().join(" "));
        tgt.push(out.join(" "));
        align.push(
            landing
                .iter()
                .enumerate()
                .map(|(i, j)| format!("{i}-{j}"))
                .collect::<Vec<_>>()
                .join(" "),
        );
    }
    Corpus::new(src, tgt, Some(align))
}

/// A synthetic task plus split sizes, read from `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            task: SyntheticTask::default(),
            n_train: 3000,
            n_dev: 100,
            n_test: 500,
        }
    }
}

/// Train, dev and test splits of one synthetic corpus.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl SyntheticSpec {
    pub fn set(&mut self, e: &Entry) -> Result<bool> {
        let (k, v) = (e.key.as_str(), e.value.as_str());
        match k {
            "n_train" => self.n_train = parse_value(k, v)?,
            "n_dev" => self.n_dev = parse_value(k, v)?,
            "n_test" => self.n_test = parse_value(k, v)?,
            _ => return self.task.set(e),
        }
        Ok(true)
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut spec = Self::default();
        for e in entries {
            if !spec.set(e)? {
                return Err(unknown_key(e));
            }
        }
        spec.task.validate()?;
        Ok(spec)
    }

    /// Generates one corpus and cuts it into train, dev and test in order.
    pub fn generate(&self) -> Result<Splits> {
        let all = make_synthetic(&self.task, self.n_train + self.n_dev + self.n_test)?;
        let cut = |a: usize, b: usize| {
            Corpus::new(
                all.src[a..b].to_vec(),
                all.tgt[a..b].to_vec(),
                all.align.as_ref().map(|x| x[a..b].to_vec()),
            )
        };
        let (d0, t0) = (self.n_train, self.n_train + self.n_dev);
        Ok(Splits {
            train: cut(0, d0)?,
            dev: cut(d0, t0)?,
            test: cut(t0, all.len())?,
        })
    }
}
