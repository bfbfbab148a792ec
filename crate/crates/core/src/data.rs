//! Vocabularies, id-encoded parallel corpora and line-oriented file I/O.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::alignment::{assign_target_keys, parse_alignments, reorder_source, TargetKeyVector};
use crate::error::{Error, Result};
use crate::model::{BOS_ID, EOS_ID, PAD_ID, RESERVED, UNK_ID};

pub const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ id map. Ids `0..4` are `<pad> <s> </s> <unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED || tokens[..RESERVED] != RESERVED_TOKENS {
            return Err(Error::Input("vocabulary must start with <pad> <s> </s> <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary ordered by descending frequency, ties broken
    /// lexicographically.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in lines {
            for tok in line.split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED_TOKENS.contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(entries.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix is present")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, line: &str) -> Vec<u32> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with spaces, dropping padding and sentence markers.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i != PAD_ID && i != BOS_ID && i != EOS_ID)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_lines(path, self.tokens.iter())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tokens(read_lines(path)?)
    }
}

/// Parallel corpus of id sequences, optionally with DPE supervision keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bitext {
    pub src: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
    pub keys: Option<Vec<TargetKeyVector>>,
}

impl Bitext {
    pub fn new(src: Vec<Vec<u32>>, tgt: Vec<Vec<u32>>, keys: Option<Vec<TargetKeyVector>>) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::Input(format!(
                "{} source lines but {} target lines",
                src.len(),
                tgt.len()
            )));
        }
        if let Some(k) = &keys {
            if k.len() != src.len() {
                return Err(Error::Input(format!(
                    "{} supervision lines for {} sentence pairs",
                    k.len(),
                    src.len()
                )));
            }
            for (i, (kv, s)) in k.iter().zip(&src).enumerate() {
                if kv.len() != s.len() {
                    return Err(Error::Input(format!(
                        "line {}: {} keys for {} source tokens",
                        i + 1,
                        kv.len(),
                        s.len()
                    )));
                }
            }
        }
        Ok(Self { src, tgt, keys })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.src.iter().chain(&self.tgt).map(Vec::len).max().unwrap_or(0)
    }
}

/// Tokenized parallel text with optional Pharaoh alignments, line-aligned.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub align: Option<Vec<String>>,
}

impl Corpus {
    pub fn new(src: Vec<String>, tgt: Vec<String>, align: Option<Vec<String>>) -> Result<Self> {
        if src.len() != tgt.len() || align.as_ref().is_some_and(|a| a.len() != src.len()) {
            return Err(Error::Input(format!(
                "line counts differ: source {}, target {}, alignments {}",
                src.len(),
                tgt.len(),
                align.as_ref().map_or("-".to_string(), |a| a.len().to_string())
            )));
        }
        Ok(Self { src, tgt, align })
    }

    /// Reads source, target and (optionally) alignment files; an error names
    /// each file with its line count when they disagree.
    pub fn read(src: &Path, tgt: &Path, align: Option<&Path>) -> Result<Self> {
        let (s, t) = (read_lines(src)?, read_lines(tgt)?);
        let a = align.map(read_lines).transpose()?;
        let counts_match = s.len() == t.len() && a.as_ref().is_none_or(|a| a.len() == s.len());
        if !counts_match {
            let mut msg = format!("{}: {} lines, {}: {} lines", src.display(), s.len(), tgt.display(), t.len());
            if let (Some(p), Some(a)) = (align, &a) {
                msg.push_str(&format!(", {}: {} lines", p.display(), a.len()));
            }
            return Err(Error::Input(msg));
        }
        Self::new(s, t, a)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Target keys per sentence, or `None` without alignments.
    pub fn keys(&self) -> Result<Option<Vec<TargetKeyVector>>> {
        let Some(align) = &self.align else {
            return Ok(None);
        };
        let mut out = Vec::with_capacity(align.len());
        for (i, ((a, s), t)) in align.iter().zip(&self.src).zip(&self.tgt).enumerate() {
            let links = parse_alignments(a).map_err(|e| Error::Input(format!("alignment line {}: {e}", i + 1)))?;
            let keys = assign_target_keys(&links, s.split_whitespace().count(), t.split_whitespace().count())
                .map_err(|e| Error::Input(format!("alignment line {}: {e}", i + 1)))?;
            out.push(keys);
        }
        Ok(Some(out))
    }

    /// Source lines rearranged into target order by the alignment rules.
    pub fn reordered_source(&self) -> Result<Vec<String>> {
        let keys = self
            .keys()?
            .ok_or_else(|| Error::Input("reordering needs alignments".into()))?;
        self.src
            .iter()
            .zip(&keys)
            .map(|(s, k)| {
                let toks: Vec<&str> = s.split_whitespace().collect();
                Ok(reorder_source(&toks, k)?.join(" "))
            })
            .collect()
    }

    /// Encodes both sides, attaching keys when alignments are present.
    pub fn encode(&self, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<Bitext> {
        Bitext::new(
            self.src.iter().map(|l| src_vocab.encode(l)).collect(),
            self.tgt.iter().map(|l| tgt_vocab.encode(l)).collect(),
            self.keys()?,
        )
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut buf = Vec::new();
    for l in lines {
        buf.extend_from_slice(l.as_ref().as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn format_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

pub fn parse_ids(line: &str) -> Result<Vec<u32>> {
    line.split_whitespace()
        .enumerate()
        .map(|(position, t)| {
            t.parse().map_err(|_| Error::Parse {
                position,
                token: t.to_string(),
                reason: "expected a token id".into(),
            })
        })
        .collect()
}

pub fn read_ids(path: &Path) -> Result<Vec<Vec<u32>>> {
    read_lines(path)?.iter().map(|l| parse_ids(l)).collect()
}

pub fn read_keys(path: &Path) -> Result<Vec<TargetKeyVector>> {
    read_lines(path)?.iter().map(|l| TargetKeyVector::parse(l)).collect()
}
