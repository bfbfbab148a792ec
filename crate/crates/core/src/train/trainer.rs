use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, clip_grad_norm, TrainState};
use super::batching::epoch_batches;
use super::checkpoint::{average_checkpoints, Checkpoint};
use super::run_config::RunConfig;
use super::schedule::lr_schedule;
use crate::autodiff::{Graph, Scalar};
use crate::data::{write_lines, Bitext};
use crate::decode::{bleu_tokens, decode_corpus};
use crate::error::{Error, Result};
use crate::model::{TrainBatch, Transformer};

/// Loss values of one optimizer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub step: u64,
    pub lr: f64,
    pub translation: f64,
    pub order: Option<f64>,
    pub total: f64,
}

/// Dev-set losses (one batch over the whole set) and BLEU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DevMetrics {
    pub translation: f64,
    pub order: Option<f64>,
    pub total: f64,
    pub bleu: Option<f64>,
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub dev: DevMetrics,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// `step  translation  order  total  bleu`, tab-separated; `-` marks a
/// value that does not apply (no DPE layers).
impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{}\t{:.6}\t{}",
            self.step,
            self.dev.translation,
            opt(self.dev.order),
            self.dev.total,
            opt(self.dev.bleu)
        )
    }
}

pub struct TrainOutcome {
    /// Average of the last `average_last` checkpoints.
    pub model: Transformer<f32>,
    pub averaged: Checkpoint,
    /// The checkpoints that went into the average, oldest first.
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<MetricsRecord>,
    pub steps: Vec<StepLosses>,
    /// Dev losses of the freshly initialized model.
    pub initial: DevMetrics,
    /// Dev losses and BLEU of the averaged model.
    pub final_dev: DevMetrics,
}

fn batch_of(data: &Bitext, idx: &[usize], with_keys: bool) -> TrainBatch {
    let pairs: Vec<(&[u32], &[u32])> = idx
        .iter()
        .map(|&i| (data.src[i].as_slice(), data.tgt[i].as_slice()))
        .collect();
    let keys = match (&data.keys, with_keys) {
        (Some(k), true) => Some(idx.iter().map(|&i| k[i].clone()).collect()),
        _ => None,
    };
    TrainBatch::new(&pairs, keys)
}

/// Losses of `model` on the whole of `data` as a single batch, so the
/// logged total is exactly the blend of the logged parts.
pub fn evaluate_losses<F: Scalar>(model: &Transformer<F>, data: &Bitext) -> Result<DevMetrics> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty corpus".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = batch_of(data, &idx, model.has_dpe());
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let l = model.losses(&mut g, &b, &batch)?;
    Ok(DevMetrics {
        translation: g.scalar(l.translation).as_f64(),
        order: l.order.map(|o| g.scalar(o).as_f64()),
        total: g.scalar(l.total).as_f64(),
        bleu: None,
    })
}

/// Dev losses computed in double precision, plus beam-search BLEU.
fn validate(model: &Transformer<f32>, dev: &Bitext, beam: usize) -> Result<DevMetrics> {
    let mut m = evaluate_losses(&model.cast::<f64>(), dev)?;
    let hyps = decode_corpus(model, &dev.src, beam)?;
    m.bleu = Some(bleu_tokens(&hyps, &dev.tgt)?);
    Ok(m)
}

fn check_data(model: &Transformer<f32>, name: &str, data: &Bitext) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input(format!("{name} corpus is empty")));
    }
    if model.has_dpe() && data.keys.is_none() {
        return Err(Error::Input(format!("{name} corpus lacks supervision keys for a DPE model")));
    }
    let cfg = model.config();
    for (i, (s, t)) in data.src.iter().zip(&data.tgt).enumerate() {
        if s.is_empty() {
            return Err(Error::Input(format!("{name} line {}: empty source sentence", i + 1)));
        }
        if s.len() > cfg.max_len || t.len() + 1 > cfg.max_len {
            return Err(Error::Length {
                len: s.len().max(t.len() + 1),
                max_len: cfg.max_len,
            });
        }
        let bad_src = s.iter().any(|&x| x as usize >= cfg.vocab_src);
        let bad_tgt = t.iter().any(|&x| x as usize >= cfg.vocab_tgt);
        if bad_src || bad_tgt {
            return Err(Error::Input(format!("{name} line {}: token id outside the vocabulary", i + 1)));
        }
    }
    Ok(())
}

/// One forward/backward pass and Adam update on `batch`.
fn update(state: &mut TrainState<f32>, batch: &TrainBatch, cfg: &RunConfig) -> Result<StepLosses> {
    let mut g = Graph::new();
    let b = state.model.bind(&mut g, true);
    let l = state.model.losses(&mut g, &b, batch)?;
    g.backward(l.total)?;
    let mut grads: Vec<Vec<f32>> = b
        .vars()
        .iter()
        .map(|&v| {
            g.take_grad(v)
                .ok_or_else(|| Error::Contract("parameter received no gradient".into()))
        })
        .collect::<Result<_>>()?;
    clip_grad_norm(&mut grads, cfg.train.clip_norm);
    let step = state.step() + 1;
    let lr = cfg.train.lr_scale * lr_schedule(step, cfg.model.d_model, cfg.train.warmup)?;
    let grads: Vec<Option<Vec<f32>>> = grads.into_iter().map(Some).collect();
    adam_step(state, &grads, lr)?;
    Ok(StepLosses {
        step,
        lr,
        translation: f64::from(g.scalar(l.translation)),
        order: l.order.map(|o| f64::from(g.scalar(o))),
        total: f64::from(g.scalar(l.total)),
    })
}

/// Trains a model from scratch.
///
/// Every `valid_interval` updates the dev set is scored and a checkpoint is
/// taken; the returned model averages the last `average_last` checkpoints.
/// With `out_dir`, checkpoints, `metrics.tsv`, `train_loss.tsv`,
/// `final.dpec` and `run.info` are written there.
pub fn train(cfg: &RunConfig, train_data: &Bitext, dev: &Bitext, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.train.validate()?;
    let model = Transformer::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    check_data(&model, "training", train_data)?;
    check_data(&model, "dev", dev)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let info = format!("{}parameters={}\n", cfg.to_text(), model.num_parameters());
        std::fs::write(dir.join("run.info"), info).map_err(|e| Error::io(dir, e))?;
    }
    let extra = cfg
        .train
        .to_entries()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect::<String>();

    let initial = evaluate_losses(&model.cast::<f64>(), dev)?;
    let mut state = TrainState::new(model, cfg.train.adam, cfg.train.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let lens: Vec<(usize, usize)> = train_data
        .src
        .iter()
        .zip(&train_data.tgt)
        .map(|(s, t)| (s.len(), t.len()))
        .collect();
    let with_keys = state.model.has_dpe();

    let mut steps = Vec::with_capacity(cfg.train.updates as usize);
    let mut log = Vec::new();
    let mut recent: VecDeque<Checkpoint> = VecDeque::new();
    'outer: loop {
        for idx in epoch_batches(&lens, cfg.train.batch_tokens, &mut rng) {
            if state.step() >= cfg.train.updates {
                break 'outer;
            }
            let batch = batch_of(train_data, &idx, with_keys);
            let s = update(&mut state, &batch, cfg)?;
            if !s.total.is_finite() {
                return Err(Error::Contract(format!("non-finite loss at step {}", s.step)));
            }
            steps.push(s);
            if s.step % cfg.train.valid_interval == 0 {
                let dev_m = validate(&state.model, dev, cfg.train.beam)?;
                let rec = MetricsRecord { step: s.step, dev: dev_m };
                log::info!("{rec}");
                log.push(rec);
                let cp = Checkpoint::from_model(&state.model, s.step, &extra);
                if let Some(dir) = out_dir {
                    cp.write(&dir.join(format!("checkpoint_{}.dpec", s.step)))?;
                }
                recent.push_back(cp);
                if recent.len() > cfg.train.average_last {
                    recent.pop_front();
                }
            }
        }
    }
    if recent.is_empty() {
        recent.push_back(Checkpoint::from_model(&state.model, state.step(), &extra));
    }
    let checkpoints: Vec<Checkpoint> = recent.into_iter().collect();
    let averaged = average_checkpoints(&checkpoints)?;
    let model = averaged.to_model()?;
    let final_dev = validate(&model, dev, cfg.train.beam)?;
    if let Some(dir) = out_dir {
        averaged.write(&dir.join("final.dpec"))?;
        write_lines(&dir.join("metrics.tsv"), log.iter().map(ToString::to_string))?;
        write_lines(
            &dir.join("train_loss.tsv"),
            steps.iter().map(|s| {
                format!("{}\t{:e}\t{:.6}\t{}\t{:.6}", s.step, s.lr, s.translation, opt(s.order), s.total)
            }),
        )?;
    }
    Ok(TrainOutcome {
        model,
        averaged,
        checkpoints,
        log,
        steps,
        initial,
        final_dev,
    })
}
