//! Scripted comparison of model variants on one dataset.
//!
//! An experiment spec uses the shared `key=value` dialect:
//!
//! ```text
//! variant = baseline          # repeatable: baseline | dpe | dpe:<lambda> | 2pt | oracle-reorder
//! variant = dpe:0.5
//! seeds = 1 2 3               # optional; defaults to the run seed
//! task.family = reverse       # synthetic data (any task.* key), or
//! # data_dir = corpus/        # {train,dev,test}.{src,tgt,align}
//! updates = 2000              # any run-config key
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::config::{parse_value, read_kv, Entry};
use crate::data::{write_lines, Bitext, Corpus, Vocab};
use crate::decode::{bleu_tokens, decode_corpus, exact_match, run_2pt, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::train::{train, DevMetrics, MetricsRecord, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Baseline,
    /// DPE with the given λ; `None` keeps the run config's λ.
    Dpe(Option<f64>),
    /// Reordering model followed by a translation model on its output.
    TwoPass,
    /// The second pass fed gold reordered input.
    OracleReorder,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(Self::Baseline),
            "dpe" => Ok(Self::Dpe(None)),
            "2pt" => Ok(Self::TwoPass),
            "oracle-reorder" => Ok(Self::OracleReorder),
            other => match other.strip_prefix("dpe:") {
                Some(l) => {
                    let lambda: f64 = parse_value("variant", l)?;
                    if !(0.0..=1.0).contains(&lambda) {
                        return Err(Error::Config(format!("variant {other}: lambda outside [0, 1]")));
                    }
                    Ok(Self::Dpe(Some(lambda)))
                }
                None => Err(Error::Config(format!("unknown variant {other:?}"))),
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Baseline => f.write_str("baseline"),
            Self::Dpe(None) => f.write_str("dpe"),
            Self::Dpe(Some(l)) => write!(f, "dpe:{l}"),
            Self::TwoPass => f.write_str("2pt"),
            Self::OracleReorder => f.write_str("oracle-reorder"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub data: DataSource,
    pub run: RunConfig,
}

impl ExperimentSpec {
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut variants = Vec::new();
        let mut seeds = None;
        let mut synth = SyntheticSpec::default();
        let mut any_task = false;
        let mut data_dir = None;
        let mut run_entries = Vec::new();
        for e in entries {
            if e.key == "variant" {
                variants.push(e.value.parse()?);
            } else if e.key == "seeds" {
                let s = e
                    .value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| parse_value("seeds", t))
                    .collect::<Result<Vec<u64>>>()?;
                seeds = Some(s);
            } else if e.key == "data_dir" {
                data_dir = Some(PathBuf::from(&e.value));
            } else if let Some(k) = e.key.strip_prefix("task.") {
                any_task = true;
                let sub = Entry {
                    key: k.to_string(),
                    ..e.clone()
                };
                if !synth.set(&sub)? {
                    return Err(crate::config::unknown_key(e));
                }
            } else {
                run_entries.push(e.clone());
            }
        }
        if variants.is_empty() {
            return Err(Error::Config("experiment spec lists no variants".into()));
        }
        let run = RunConfig::from_entries(&run_entries)?;
        let seeds = seeds.unwrap_or_else(|| vec![run.train.seed]);
        if seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one value".into()));
        }
        let data = match (data_dir, any_task) {
            (Some(_), true) => return Err(Error::Config("use either data_dir or task.* keys, not both".into())),
            (Some(d), false) => DataSource::Files(d),
            (None, _) => {
                synth.task.validate()?;
                DataSource::Synthetic(synth)
            }
        };
        Ok(Self {
            variants,
            seeds,
            data,
            run,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut spec = Self::from_entries(&read_kv(path)?)?;
        if let DataSource::Files(d) = &mut spec.data {
            if d.is_relative() {
                *d = path.parent().unwrap_or(Path::new(".")).join(&*d);
            }
        }
        Ok(spec)
    }
}

/// One trained variant under one seed.
#[derive(Clone, Debug)]
pub struct VariantResult {
    pub variant: Variant,
    pub seed: u64,
    /// Test BLEU of the final (averaged) model or pipeline.
    pub bleu: f64,
    /// Fraction of test sentences translated exactly.
    pub exact: f64,
    /// Exact match of the first pass against gold reordering (2pt only).
    pub reorder_exact: Option<f64>,
    pub dev: DevMetrics,
    /// Dev order loss before training (DPE only).
    pub initial_order: Option<f64>,
    pub parameters: usize,
    pub seconds: f64,
    pub log: Vec<MetricsRecord>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub rows: Vec<VariantResult>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl ExperimentReport {
    pub const HEADER: &'static str =
        "variant\tseed\ttest_bleu\texact\treorder_exact\tdev_translation\tdev_order\tdev_total\tinitial_order\tparameters\tseconds";

    pub fn row_line(r: &VariantResult) -> String {
        format!(
            "{}\t{}\t{:.2}\t{:.4}\t{}\t{:.4}\t{}\t{:.4}\t{}\t{}\t{:.1}",
            r.variant,
            r.seed,
            r.bleu,
            r.exact,
            cell(r.reorder_exact),
            r.dev.translation,
            cell(r.dev.order),
            r.dev.total,
            cell(r.initial_order),
            r.parameters,
            r.seconds
        )
    }

    pub fn lines(&self) -> Vec<String> {
        std::iter::once(Self::HEADER.to_string())
            .chain(self.rows.iter().map(Self::row_line))
            .collect()
    }

    /// Mean test BLEU over seeds, per variant in first-seen order.
    pub fn mean_bleu(&self) -> Vec<(Variant, f64)> {
        let mut out: Vec<(Variant, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(v, _, _)| *v == r.variant) {
                Some(e) => {
                    e.1 += r.bleu;
                    e.2 += 1;
                }
                None => out.push((r.variant, r.bleu, 1)),
            }
        }
        out.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect()
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in self.lines() {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Train/dev/test corpora of an experiment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl Dataset {
    pub fn load(source: &DataSource) -> Result<Self> {
        match source {
            DataSource::Synthetic(spec) => {
                let s = spec.generate()?;
                Ok(Self {
                    train: s.train,
                    dev: s.dev,
                    test: s.test,
                })
            }
            DataSource::Files(dir) => {
                let split = |name: &str| {
                    let align = dir.join(format!("{name}.align"));
                    Corpus::read(
                        &dir.join(format!("{name}.src")),
                        &dir.join(format!("{name}.tgt")),
                        align.exists().then_some(align.as_path()),
                    )
                };
                Ok(Self {
                    train: split("train")?,
                    dev: split("dev")?,
                    test: split("test")?,
                })
            }
        }
    }
}

/// Vocabularies and encoded views needed by every variant.
struct Prepared {
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    train: Bitext,
    dev: Bitext,
    test: Bitext,
}

fn reordered(c: &Corpus) -> Result<Corpus> {
    Corpus::new(c.reordered_source()?, c.tgt.clone(), None)
}

fn prepare(ds: &Dataset) -> Result<Prepared> {
    let src_vocab = Vocab::build(ds.train.src.iter().map(String::as_str));
    let tgt_vocab = Vocab::build(ds.train.tgt.iter().map(String::as_str));
    Ok(Prepared {
        train: ds.train.encode(&src_vocab, &tgt_vocab)?,
        dev: ds.dev.encode(&src_vocab, &tgt_vocab)?,
        test: ds.test.encode(&src_vocab, &tgt_vocab)?,
        src_vocab,
        tgt_vocab,
    })
}

fn strip_keys(b: &Bitext) -> Bitext {
    Bitext {
        keys: None,
        ..b.clone()
    }
}

struct Trained {
    model: Transformer<f32>,
    dev: DevMetrics,
    initial_order: Option<f64>,
    log: Vec<MetricsRecord>,
}

fn fit(cfg: &RunConfig, train_data: &Bitext, dev: &Bitext, out: Option<PathBuf>) -> Result<Trained> {
    let o = train(cfg, train_data, dev, out.as_deref())?;
    Ok(Trained {
        model: o.model,
        dev: o.final_dev,
        initial_order: o.initial.order,
        log: o.log,
    })
}

/// Runs every variant for every seed, sequentially.
///
/// With `out_dir`, each run writes into `<variant>_seed<seed>/` and the
/// report is rewritten to `report.tsv` after every finished row, so a
/// failure keeps earlier results on disk.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let ds = Dataset::load(&spec.data)?;
    if let DataSource::Synthetic(s) = &spec.data {
        s.task.check_fits(spec.run.model.max_len)?;
    }
    let p = prepare(&ds)?;
    let needs_align = spec.variants.iter().any(|v| !matches!(v, Variant::Baseline));
    if needs_align && (ds.train.align.is_none() || ds.dev.align.is_none() || ds.test.align.is_none()) {
        return Err(Error::Input("DPE and reordering variants need alignments for every split".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut report = ExperimentReport::default();
    for &seed in &spec.seeds {
        // Second-pass translation model, shared by 2pt and oracle-reorder.
        let mut second: Option<(Trained, Bitext, Bitext, f64)> = None;
        for &variant in &spec.variants {
            let started = Instant::now();
            let run_dir = |tag: &str| out_dir.map(|d| d.join(format!("{tag}_seed{seed}")));
            let mut cfg = spec.run.clone();
            cfg.train.seed = seed;
            cfg.model.vocab_src = p.src_vocab.len();
            cfg.model.vocab_tgt = p.tgt_vocab.len();
            let beam = cfg.train.beam;
            let row = match variant {
                Variant::Baseline | Variant::Dpe(_) => {
                    let (tr, dv) = if let Variant::Dpe(l) = variant {
                        if cfg.model.dpe_layers == 0 {
                            cfg.model.dpe_layers = 2;
                        }
                        if let Some(l) = l {
                            cfg.model.lambda = l;
                        }
                        (p.train.clone(), p.dev.clone())
                    } else {
                        cfg.model.dpe_layers = 0;
                        (strip_keys(&p.train), strip_keys(&p.dev))
                    };
                    let t = fit(&cfg, &tr, &dv, run_dir(&variant.to_string()))?;
                    let hyps = decode_corpus(&t.model, &p.test.src, beam)?;
                    VariantResult {
                        variant,
                        seed,
                        bleu: bleu_tokens(&hyps, &p.test.tgt)?,
                        exact: exact_match(&hyps, &p.test.tgt)?,
                        reorder_exact: None,
                        dev: t.dev,
                        initial_order: t.initial_order,
                        parameters: t.model.num_parameters(),
                        seconds: 0.0,
                        log: t.log,
                    }
                }
                Variant::TwoPass | Variant::OracleReorder => {
                    cfg.model.dpe_layers = 0;
                    if second.is_none() {
                        let (tr, dv, te) = (reordered(&ds.train)?, reordered(&ds.dev)?, reordered(&ds.test)?);
                        let (tr, dv, te) = (
                            tr.encode(&p.src_vocab, &p.tgt_vocab)?,
                            dv.encode(&p.src_vocab, &p.tgt_vocab)?,
                            te.encode(&p.src_vocab, &p.tgt_vocab)?,
                        );
                        let t0 = Instant::now();
                        let t = fit(&cfg, &tr, &dv, run_dir("second_pass"))?;
                        second = Some((t, tr, te, t0.elapsed().as_secs_f64()));
                    }
                    let (t2, _, gold_test, t2_secs) = second.as_ref().expect("trained above");
                    if variant == Variant::OracleReorder {
                        let hyps = decode_corpus(&t2.model, &gold_test.src, beam)?;
                        VariantResult {
                            variant,
                            seed,
                            bleu: bleu_tokens(&hyps, &p.test.tgt)?,
                            exact: exact_match(&hyps, &p.test.tgt)?,
                            reorder_exact: None,
                            dev: t2.dev,
                            initial_order: None,
                            parameters: t2.model.num_parameters(),
                            seconds: *t2_secs,
                            log: t2.log.clone(),
                        }
                    } else {
                        let mut rcfg = cfg.clone();
                        rcfg.model.vocab_tgt = p.src_vocab.len();
                        let mono = |b: &Bitext, gold: &Bitext| Bitext::new(b.src.clone(), gold.src.clone(), None);
                        let (_, gold_train, _, _) = second.as_ref().expect("trained above");
                        let gold_dev = reordered(&ds.dev)?.encode(&p.src_vocab, &p.tgt_vocab)?;
                        let r = fit(
                            &rcfg,
                            &mono(&p.train, gold_train)?,
                            &mono(&p.dev, &gold_dev)?,
                            run_dir("reorder"),
                        )?;
                        let mut outs = Vec::with_capacity(p.test.len());
                        let mut firsts = Vec::with_capacity(p.test.len());
                        for s in &p.test.src {
                            let o = run_2pt(&r.model, &t2.model, s, beam)?;
                            firsts.push(o.reordered);
                            outs.push(o.translation);
                        }
                        VariantResult {
                            variant,
                            seed,
                            bleu: bleu_tokens(&outs, &p.test.tgt)?,
                            exact: exact_match(&outs, &p.test.tgt)?,
                            reorder_exact: Some(exact_match(&firsts, &gold_test.src)?),
                            dev: t2.dev,
                            initial_order: None,
                            parameters: r.model.num_parameters() + t2.model.num_parameters(),
                            seconds: *t2_secs,
                            log: t2.log.clone(),
                        }
                    }
                }
            };
            let row = VariantResult {
                seconds: row.seconds + started.elapsed().as_secs_f64(),
                ..row
            };
            log::info!("{}", ExperimentReport::row_line(&row));
            report.rows.push(row);
            if let Some(dir) = out_dir {
                write_lines(&dir.join("report.tsv"), report.lines())?;
            }
        }
    }
    Ok(report)
}
