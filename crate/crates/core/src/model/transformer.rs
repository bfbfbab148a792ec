use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, BOS_ID, EOS_ID, PAD_ID};
use crate::alignment::TargetKeyVector;
use crate::autodiff::{AttentionLayout, Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Sinusoidal table: `PE(p, 2i) = sin(p / 10000^(2i/d))`,
/// `PE(p, 2i+1) = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_pe<F: Scalar>(max_len: usize, d_model: usize) -> Result<Tensor<F>> {
    if !d_model.is_multiple_of(2) || d_model == 0 {
        return Err(Error::Config(format!("sinusoidal table needs an even width, got {d_model}")));
    }
    Ok(Tensor::from_fn(&[max_len, d_model], |idx| {
        let (pos, col) = (idx / d_model, idx % d_model);
        let freq = 10000f64.powf((col - col % 2) as f64 / d_model as f64);
        let angle = pos as f64 / freq;
        F::of(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}

/// Named parameter arrays in a fixed order.
#[derive(Clone, Debug)]
pub struct ParamSet<F> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<F>>>,
}

impl<F: Scalar> ParamSet<F> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor<F>) -> usize {
        self.names.push(name);
        self.values.push(Arc::new(t));
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Tensor<F> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.values[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Mha {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct EncLayer {
    attn: Mha,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

#[derive(Clone, Copy, Debug)]
struct DecLayer {
    self_attn: Mha,
    norm1: Norm,
    cross: Mha,
    norm2: Norm,
    ff1: Linear,
    ff2: Linear,
    norm3: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    src_emb: usize,
    tgt_emb: usize,
    dpe: Vec<EncLayer>,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    out: Linear,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Each parameter draws from its own stream keyed by `(seed, name)`, so
/// adding or removing parameters never shifts the initialization of others.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()))
}

struct Builder<F> {
    params: ParamSet<F>,
    seed: u64,
}

impl<F: Scalar> Builder<F> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> usize {
        let mut rng = param_rng(self.seed, &name);
        let dist = Uniform::new_inclusive(-bound, bound);
        let t = Tensor::from_fn(shape, |_| F::of(dist.sample(&mut rng)));
        self.params.push(name, t)
    }

    fn filled(&mut self, name: String, n: usize, v: f64) -> usize {
        self.params.push(name, Tensor::from_fn(&[n], |_| F::of(v)))
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            w: self.uniform(format!("{name}.weight"), &[input, output], bound),
            b: self.filled(format!("{name}.bias"), output, 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.filled(format!("{name}.gain"), d, 1.0),
            b: self.filled(format!("{name}.bias"), d, 0.0),
        }
    }

    fn mha(&mut self, name: &str, d: usize) -> Mha {
        Mha {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn enc_layer(&mut self, name: &str, d: usize, ff: usize) -> EncLayer {
        EncLayer {
            attn: self.mha(&format!("{name}.self_attn"), d),
            norm1: self.norm(&format!("{name}.norm1"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, ff),
            ff2: self.linear(&format!("{name}.ff2"), ff, d),
            norm2: self.norm(&format!("{name}.norm2"), d),
        }
    }

    fn dec_layer(&mut self, name: &str, d: usize, ff: usize) -> DecLayer {
        DecLayer {
            self_attn: self.mha(&format!("{name}.self_attn"), d),
            norm1: self.norm(&format!("{name}.norm1"), d),
            cross: self.mha(&format!("{name}.cross_attn"), d),
            norm2: self.norm(&format!("{name}.norm2"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, ff),
            ff2: self.linear(&format!("{name}.ff2"), ff, d),
            norm3: self.norm(&format!("{name}.norm3"), d),
        }
    }
}

/// A padded batch of token sequences, flattened row-major `[batch × len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqBatch {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub len: usize,
}

impl SeqBatch {
    pub fn new(seqs: &[&[u32]]) -> Self {
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            ids.extend(s.iter().map(|&t| t as usize));
            ids.extend(std::iter::repeat_n(PAD_ID as usize, len - s.len()));
        }
        Self {
            ids,
            lens: seqs.iter().map(|s| s.len()).collect(),
            len,
        }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    /// Flat indices of the non-pad positions, in row-major order.
    pub fn real_positions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (b, &l) in self.lens.iter().enumerate() {
            out.extend(b * self.len..b * self.len + l);
        }
        out
    }
}

/// Teacher-forced training batch.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub src: SeqBatch,
    /// `BOS y_1 .. y_n`
    pub tgt_in: SeqBatch,
    /// `y_1 .. y_n EOS`, flattened over `tgt_in`'s layout.
    pub targets: Vec<usize>,
    pub target_mask: Vec<bool>,
    /// Per-sentence supervision keys, present for DPE models.
    pub keys: Option<Vec<TargetKeyVector>>,
}

impl TrainBatch {
    pub fn new(pairs: &[(&[u32], &[u32])], keys: Option<Vec<TargetKeyVector>>) -> Self {
        let srcs: Vec<&[u32]> = pairs.iter().map(|p| p.0).collect();
        let tgt_in: Vec<Vec<u32>> = pairs
            .iter()
            .map(|p| std::iter::once(BOS_ID).chain(p.1.iter().copied()).collect())
            .collect();
        let tgt_refs: Vec<&[u32]> = tgt_in.iter().map(Vec::as_slice).collect();
        let tgt_in = SeqBatch::new(&tgt_refs);
        let mut targets = vec![PAD_ID as usize; tgt_in.ids.len()];
        let mut target_mask = vec![false; tgt_in.ids.len()];
        for (b, p) in pairs.iter().enumerate() {
            let row = b * tgt_in.len;
            for (t, &tok) in p.1.iter().chain(std::iter::once(&EOS_ID)).enumerate() {
                targets[row + t] = tok as usize;
                target_mask[row + t] = true;
            }
        }
        Self {
            src: SeqBatch::new(&srcs),
            tgt_in,
            targets,
            target_mask,
            keys,
        }
    }

    pub fn target_tokens(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }
}

/// Graph handles for every parameter plus the position table.
pub struct Bound {
    vars: Vec<Var>,
    pe: Var,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Encoder output on a graph.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub states: Var,
    pub lens: Vec<usize>,
    pub len: usize,
}

/// Everything the source side produces.
pub struct Encoded {
    pub state: EncoderState,
    pub enriched: Var,
    /// DPE output `r`, when the model has DPE layers.
    pub dpe_out: Option<Var>,
    pub order_loss: Option<Var>,
}

pub struct Losses {
    pub translation: Var,
    pub order: Option<Var>,
    pub total: Var,
}

/// Post-norm encoder-decoder Transformer with optional DPE layers between
/// the enriched source embeddings and the first encoder layer.
#[derive(Clone, Debug)]
pub struct Transformer<F> {
    cfg: ModelConfig,
    params: ParamSet<F>,
    layout: Layout,
    pe: Arc<Tensor<F>>,
}

impl<F: Scalar> Transformer<F> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (d, ff) = (cfg.d_model, cfg.ff_dim);
        let mut b = Builder {
            params: ParamSet::new(),
            seed,
        };
        let src_emb = b.uniform("src_embed".into(), &[cfg.vocab_src, d], 0.1);
        let tgt_emb = b.uniform("tgt_embed".into(), &[cfg.vocab_tgt, d], 0.1);
        let dpe = (0..cfg.dpe_layers)
            .map(|i| b.enc_layer(&format!("dpe.{i}"), d, ff))
            .collect();
        let enc = (0..cfg.n_enc_layers)
            .map(|i| b.enc_layer(&format!("encoder.{i}"), d, ff))
            .collect();
        let dec = (0..cfg.n_dec_layers)
            .map(|i| b.dec_layer(&format!("decoder.{i}"), d, ff))
            .collect();
        let out = b.linear("output", d, cfg.vocab_tgt);
        let pe = Arc::new(sinusoidal_pe(cfg.max_len, d)?);
        Ok(Self {
            cfg,
            params: b.params,
            layout: Layout {
                src_emb,
                tgt_emb,
                dpe,
                enc,
                dec,
                out,
            },
            pe,
        })
    }

    /// Builds a model whose parameters come from `named` (name → tensor).
    pub fn from_named(cfg: ModelConfig, mut lookup: impl FnMut(&str) -> Option<Tensor<F>>) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        for i in 0..model.params.len() {
            let name = model.params.names[i].clone();
            let t = lookup(&name)
                .ok_or_else(|| Error::Input(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != model.params.get(i).shape() {
                return Err(Error::Input(format!(
                    "parameter {name}: shape {:?}, model expects {:?}",
                    t.shape(),
                    model.params.get(i).shape()
                )));
            }
            model.params.values[i] = Arc::new(t);
        }
        Ok(model)
    }

    /// The same model in another scalar precision.
    pub fn cast<G: Scalar>(&self) -> Transformer<G> {
        Transformer {
            cfg: self.cfg.clone(),
            params: ParamSet {
                names: self.params.names.clone(),
                values: self.params.values.iter().map(|t| Arc::new(t.cast())).collect(),
            },
            layout: self.layout.clone(),
            pe: Arc::new(sinusoidal_pe(self.cfg.max_len, self.cfg.d_model).expect("validated width")),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn pe_table(&self) -> &Tensor<F> {
        &self.pe
    }

    pub fn has_dpe(&self) -> bool {
        !self.layout.dpe.is_empty()
    }

    /// Puts every parameter on the graph; `trainable` controls whether
    /// gradients are collected for them.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Bound {
        let vars = self
            .params
            .values
            .iter()
            .map(|v| g.leaf_shared(Arc::clone(v), trainable))
            .collect();
        let pe = g.leaf_shared(Arc::clone(&self.pe), false);
        Bound { vars, pe }
    }

    /// Uses existing graph nodes as the parameters, in [`ParamSet`] order.
    /// Lets callers differentiate with respect to leaves they created.
    pub fn bind_vars(&self, g: &mut Graph<F>, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameter nodes for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (i, &v) in vars.iter().enumerate() {
            if g.shape(v) != self.params.get(i).shape() {
                return Err(Error::Contract(format!(
                    "parameter {} bound to a node of shape {:?}",
                    self.params.names[i],
                    g.shape(v)
                )));
            }
        }
        let pe = g.leaf_shared(Arc::clone(&self.pe), false);
        Ok(Bound { vars, pe })
    }

    fn linear(&self, g: &mut Graph<F>, b: &Bound, x: Var, p: Linear) -> Result<Var> {
        let y = g.matmul(x, b.vars[p.w])?;
        Ok(g.add_bias(y, b.vars[p.b])?)
    }

    fn norm(&self, g: &mut Graph<F>, b: &Bound, x: Var, p: Norm) -> Result<Var> {
        let eps = F::of(self.cfg.layer_norm_eps);
        Ok(g.layer_norm(x, b.vars[p.g], b.vars[p.b], eps)?)
    }

    fn mha(
        &self,
        g: &mut Graph<F>,
        b: &Bound,
        p: Mha,
        xq: Var,
        xkv: Var,
        layout: AttentionLayout,
    ) -> Result<Var> {
        let q = self.linear(g, b, xq, p.q)?;
        let k = self.linear(g, b, xkv, p.k)?;
        let v = self.linear(g, b, xkv, p.v)?;
        let a = g.attention(q, k, v, layout)?;
        self.linear(g, b, a, p.o)
    }

    fn feed_forward(&self, g: &mut Graph<F>, b: &Bound, x: Var, ff1: Linear, ff2: Linear) -> Result<Var> {
        let h = self.linear(g, b, x, ff1)?;
        let h = g.relu(h);
        self.linear(g, b, h, ff2)
    }

    fn enc_layer(&self, g: &mut Graph<F>, b: &Bound, p: EncLayer, x: Var, src: &SeqBatch) -> Result<Var> {
        let layout = AttentionLayout {
            batch: src.batch(),
            q_len: src.len,
            k_len: src.len,
            heads: self.cfg.n_heads,
            causal: false,
            key_lens: src.lens.clone(),
        };
        let a = self.mha(g, b, p.attn, x, x, layout)?;
        let x = g.add(x, a)?;
        let x = self.norm(g, b, x, p.norm1)?;
        let f = self.feed_forward(g, b, x, p.ff1, p.ff2)?;
        let x = g.add(x, f)?;
        self.norm(g, b, x, p.norm2)
    }

    /// Word embeddings scaled by `√d_model`, plus position rows.
    pub fn enrich(&self, g: &mut Graph<F>, b: &Bound, table: Var, seqs: &SeqBatch) -> Result<Var> {
        if seqs.len > self.cfg.max_len {
            return Err(Error::Length {
                len: seqs.len,
                max_len: self.cfg.max_len,
            });
        }
        let emb = g.gather_rows(table, &seqs.ids)?;
        let emb = g.scale(emb, F::of((self.cfg.d_model as f64).sqrt()));
        let positions: Vec<usize> = (0..seqs.ids.len()).map(|i| i % seqs.len.max(1)).collect();
        let pe = g.gather_rows(b.pe, &positions)?;
        Ok(g.add(emb, pe)?)
    }

    /// Runs the DPE layers over enriched embeddings, producing `r`.
    pub fn dpe_forward(&self, g: &mut Graph<F>, b: &Bound, enriched: Var, src: &SeqBatch) -> Result<Var> {
        if self.layout.dpe.is_empty() {
            return Err(Error::Config("dpe_forward on a model with dpe_layers = 0".into()));
        }
        let mut x = enriched;
        for &layer in &self.layout.dpe {
            x = self.enc_layer(g, b, layer, x, src)?;
        }
        Ok(x)
    }

    pub fn encode(
        &self,
        g: &mut Graph<F>,
        b: &Bound,
        src: &SeqBatch,
        keys: Option<&[TargetKeyVector]>,
    ) -> Result<Encoded> {
        if src.batch() == 0 || src.lens.contains(&0) {
            return Err(Error::Contract("encoder input contains an empty sentence".into()));
        }
        let enriched = self.enrich(g, b, b.vars[self.layout.src_emb], src)?;
        let mut x = enriched;
        let mut dpe_out = None;
        let mut order_loss = None;
        if self.has_dpe() {
            let r = self.dpe_forward(g, b, enriched, src)?;
            if let Some(keys) = keys {
                order_loss = Some(self.order_loss(g, b, r, src, keys)?);
            }
            x = match self.cfg.dpe_injection {
                super::Injection::Replace => r,
                super::Injection::Residual => g.add(enriched, r)?,
                super::Injection::Bypass => enriched,
            };
            dpe_out = Some(r);
        }
        for &layer in &self.layout.enc {
            x = self.enc_layer(g, b, layer, x, src)?;
        }
        Ok(Encoded {
            state: EncoderState {
                states: x,
                lens: src.lens.clone(),
                len: src.len,
            },
            enriched,
            dpe_out,
            order_loss,
        })
    }

    /// Mean over real source tokens of the per-token MSE between `r_i` and
    /// the sinusoidal row of its supervising position.
    fn order_loss(
        &self,
        g: &mut Graph<F>,
        b: &Bound,
        r: Var,
        src: &SeqBatch,
        keys: &[TargetKeyVector],
    ) -> Result<Var> {
        if keys.len() != src.batch() {
            return Err(Error::Contract(format!(
                "{} key vectors for a batch of {}",
                keys.len(),
                src.batch()
            )));
        }
        let mut sup = Vec::new();
        for (k, &l) in keys.iter().zip(&src.lens) {
            if k.len() != l {
                return Err(Error::Input(format!("{} keys for a sentence of {l} tokens", k.len())));
            }
            for p in k.positions() {
                if p >= self.cfg.max_len {
                    return Err(Error::Contract(format!("supervising position {p} beyond max_len")));
                }
                sup.push(p);
            }
        }
        let rows = g.gather_rows(r, &src.real_positions())?;
        let target = g.gather_rows(b.pe, &sup)?;
        crate::dpe::order_loss(g, rows, target)
    }

    pub fn decode(&self, g: &mut Graph<F>, b: &Bound, enc: &EncoderState, tgt_in: &SeqBatch) -> Result<Var> {
        if tgt_in.len == 0 || tgt_in.batch() != enc.lens.len() {
            return Err(Error::Contract("decoder input is empty or mismatches the source batch".into()));
        }
        let mut x = self.enrich(g, b, b.vars[self.layout.tgt_emb], tgt_in)?;
        let self_layout = AttentionLayout {
            batch: tgt_in.batch(),
            q_len: tgt_in.len,
            k_len: tgt_in.len,
            heads: self.cfg.n_heads,
            causal: true,
            key_lens: tgt_in.lens.clone(),
        };
        let cross_layout = AttentionLayout {
            batch: tgt_in.batch(),
            q_len: tgt_in.len,
            k_len: enc.len,
            heads: self.cfg.n_heads,
            causal: false,
            key_lens: enc.lens.clone(),
        };
        for &p in &self.layout.dec {
            let a = self.mha(g, b, p.self_attn, x, x, self_layout.clone())?;
            let h = g.add(x, a)?;
            x = self.norm(g, b, h, p.norm1)?;
            let c = self.mha(g, b, p.cross, x, enc.states, cross_layout.clone())?;
            let h = g.add(x, c)?;
            x = self.norm(g, b, h, p.norm2)?;
            let f = self.feed_forward(g, b, x, p.ff1, p.ff2)?;
            let h = g.add(x, f)?;
            x = self.norm(g, b, h, p.norm3)?;
        }
        self.linear(g, b, x, self.layout.out)
    }

    /// Translation loss, order loss (DPE models with keys) and their blend.
    pub fn losses(&self, g: &mut Graph<F>, b: &Bound, batch: &TrainBatch) -> Result<Losses> {
        let enc = self.encode(g, b, &batch.src, batch.keys.as_deref())?;
        if self.has_dpe() && enc.order_loss.is_none() {
            return Err(Error::Input("DPE model needs supervision keys".into()));
        }
        let logits = self.decode(g, b, &enc.state, &batch.tgt_in)?;
        let translation = g.cross_entropy(
            logits,
            &batch.targets,
            &batch.target_mask,
            F::of(self.cfg.label_smoothing),
        )?;
        let total = match enc.order_loss {
            Some(order) => crate::dpe::total_loss_graph(g, translation, order, self.cfg.lambda)?,
            None => translation,
        };
        Ok(Losses {
            translation,
            order: enc.order_loss,
            total,
        })
    }

    /// Encodes a single source sentence and returns the encoder states.
    pub fn encode_sentence(&self, src: &[u32]) -> Result<Arc<Tensor<F>>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let enc = self.encode(&mut g, &b, &SeqBatch::new(&[src]), None)?;
        Ok(g.shared_value(enc.state.states))
    }

    /// Log-probabilities of the next token after each prefix, all prefixes
    /// conditioned on the same encoded sentence. Prefixes must share a
    /// length and start with BOS.
    pub fn next_log_probs(&self, enc_states: &Arc<Tensor<F>>, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let len = prefixes.first().map_or(0, Vec::len);
        if prefixes.iter().any(|p| p.len() != len) {
            return Err(Error::Contract("prefixes must share one length".into()));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let src_len = enc_states.shape()[0];
        let shared = g.leaf_shared(Arc::clone(enc_states), false);
        let rows: Vec<usize> = (0..prefixes.len()).flat_map(|_| 0..src_len).collect();
        let states = g.gather_rows(shared, &rows)?;
        let enc = EncoderState {
            states,
            lens: vec![src_len; prefixes.len()],
            len: src_len,
        };
        let refs: Vec<&[u32]> = prefixes.iter().map(Vec::as_slice).collect();
        let tgt = SeqBatch::new(&refs);
        let logits = self.decode(&mut g, &b, &enc, &tgt)?;
        let lt = g.value(logits);
        Ok((0..prefixes.len())
            .map(|p| log_softmax(lt.row(p * len + len - 1)))
            .collect())
    }
}

pub fn log_softmax<F: Scalar>(row: &[F]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v.as_f64() - lse).collect()
}
