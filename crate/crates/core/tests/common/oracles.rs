//! Independent reference implementations shared by the test targets.

use super::{random_keys, random_tensor, rng, sentence, tiny_model};
use dpe_nmt::alignment::{TargetKey, TargetKeyVector};
use dpe_nmt::autodiff::{grad_check, AttentionLayout, Graph, Tensor, TensorError, Var};
use dpe_nmt::decode::Hypothesis;
use dpe_nmt::model::{ModelConfig, SeqBatch, TrainBatch, Transformer, BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use dpe_nmt::Error;
use rand::Rng;

/// Reduces any node to a scalar through a fixed random weighting so every
/// output element contributes a distinct amount.
pub fn weigh(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var, TensorError> {
    let w = g.constant(random_tensor(g.shape(x), seed, 1.0));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

/// Entries in `[0.05, 1]` with random sign, away from the relu kink.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = random_tensor::<f64>(shape, seed, 1.0);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + 0.95 * v.abs());
    }
    t
}

pub type Case = (&'static str, Box<dyn Fn(u64) -> f64>);

pub fn primitive_cases() -> Vec<Case> {
    let eps = 1e-4;
    vec![
        (
            "matmul",
            Box::new(move |s| {
                let (a, b) = (random_tensor(&[3, 4], s, 1.0), random_tensor(&[4, 5], s + 1, 1.0));
                grad_check(|g, v| { let y = g.matmul(v[0], v[1])?; weigh(g, y, s) }, &[a, b], eps).unwrap()
            }),
        ),
        (
            "add",
            Box::new(move |s| {
                let (a, b) = (random_tensor(&[3, 4], s, 1.0), random_tensor(&[3, 4], s + 1, 1.0));
                grad_check(|g, v| { let y = g.add(v[0], v[1])?; weigh(g, y, s) }, &[a, b], eps).unwrap()
            }),
        ),
        (
            "sub",
            Box::new(move |s| {
                let (a, b) = (random_tensor(&[2, 5], s, 1.0), random_tensor(&[2, 5], s + 1, 1.0));
                grad_check(|g, v| { let y = g.sub(v[0], v[1])?; weigh(g, y, s) }, &[a, b], eps).unwrap()
            }),
        ),
        (
            "mul",
            Box::new(move |s| {
                let (a, b) = (random_tensor(&[3, 3], s, 1.0), random_tensor(&[3, 3], s + 1, 1.0));
                grad_check(|g, v| { let y = g.mul(v[0], v[1])?; weigh(g, y, s) }, &[a, b], eps).unwrap()
            }),
        ),
        (
            "scale",
            Box::new(move |s| {
                let a = random_tensor(&[4, 2], s, 1.0);
                grad_check(|g, v| { let y = g.scale(v[0], -1.7); weigh(g, y, s) }, &[a], eps).unwrap()
            }),
        ),
        (
            "add_bias",
            Box::new(move |s| {
                let (a, b) = (random_tensor(&[3, 4], s, 1.0), random_tensor(&[4], s + 1, 1.0));
                grad_check(|g, v| { let y = g.add_bias(v[0], v[1])?; weigh(g, y, s) }, &[a, b], eps).unwrap()
            }),
        ),
        (
            "relu",
            Box::new(move |s| {
                let a = away_from_zero(&[4, 4], s);
                grad_check(|g, v| { let y = g.relu(v[0]); weigh(g, y, s) }, &[a], eps).unwrap()
            }),
        ),
        (
            "gather_rows",
            Box::new(move |s| {
                let a = random_tensor(&[5, 3], s, 1.0);
                grad_check(|g, v| { let y = g.gather_rows(v[0], &[4, 0, 4, 2, 4])?; weigh(g, y, s) }, &[a], eps)
                    .unwrap()
            }),
        ),
        (
            "concat_rows",
            Box::new(move |s| {
                let (a, b) = (random_tensor(&[2, 3], s, 1.0), random_tensor(&[4, 3], s + 1, 1.0));
                grad_check(|g, v| { let y = g.concat_rows(&[v[0], v[1], v[0]])?; weigh(g, y, s) }, &[a, b], eps)
                    .unwrap()
            }),
        ),
        (
            "transpose",
            Box::new(move |s| {
                let a = random_tensor(&[3, 5], s, 1.0);
                grad_check(|g, v| { let y = g.transpose(v[0])?; weigh(g, y, s) }, &[a], eps).unwrap()
            }),
        ),
        (
            "softmax",
            Box::new(move |s| {
                let a = random_tensor(&[3, 4], s, 2.0);
                let e0 = grad_check(|g, v| { let y = g.softmax(v[0], 0)?; weigh(g, y, s) }, std::slice::from_ref(&a), eps).unwrap();
                let e1 = grad_check(|g, v| { let y = g.softmax(v[0], 1)?; weigh(g, y, s) }, &[a], eps).unwrap();
                e0.max(e1)
            }),
        ),
        (
            "layer_norm",
            Box::new(move |s| {
                let x = random_tensor(&[3, 6], s, 2.0);
                let gain = random_tensor(&[6], s + 1, 1.5);
                let bias = random_tensor(&[6], s + 2, 1.0);
                grad_check(|g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?; weigh(g, y, s) }, &[x, gain, bias], eps)
                    .unwrap()
            }),
        ),
        (
            "cross_entropy",
            Box::new(move |s| {
                let x = random_tensor(&[5, 6], s, 2.0);
                let mask = [true, true, false, true, true];
                grad_check(|g, v| g.cross_entropy(v[0], &[0, 5, 1, 3, 3], &mask, 0.1), &[x], eps).unwrap()
            }),
        ),
        (
            "mse",
            Box::new(move |s| {
                let (a, b) = (random_tensor(&[3, 4], s, 1.0), random_tensor(&[3, 4], s + 1, 1.0));
                grad_check(|g, v| g.mse(v[0], v[1]), &[a, b], eps).unwrap()
            }),
        ),
        (
            "sum",
            Box::new(move |s| {
                let a = random_tensor(&[2, 7], s, 1.0);
                grad_check(|g, v| { let y = g.mul(v[0], v[0])?; Ok(g.sum(y)) }, &[a], eps).unwrap()
            }),
        ),
        (
            "attention",
            Box::new(move |s| {
                let layout = AttentionLayout {
                    batch: 2,
                    q_len: 3,
                    k_len: 4,
                    heads: 2,
                    causal: false,
                    key_lens: vec![4, 2],
                };
                let q = random_tensor(&[6, 4], s, 1.0);
                let k = random_tensor(&[8, 4], s + 1, 1.0);
                let v = random_tensor(&[8, 4], s + 2, 1.0);
                grad_check(|g, x| { let y = g.attention(x[0], x[1], x[2], layout.clone())?; weigh(g, y, s) }, &[q, k, v], eps)
                    .unwrap()
            }),
        ),
        (
            "causal_attention",
            Box::new(move |s| {
                let layout = AttentionLayout {
                    batch: 2,
                    q_len: 3,
                    k_len: 3,
                    heads: 2,
                    causal: true,
                    key_lens: vec![3, 2],
                };
                let x = random_tensor(&[6, 4], s, 1.0);
                let k = random_tensor(&[6, 4], s + 1, 1.0);
                grad_check(|g, v| { let y = g.attention(v[0], v[1], v[0], layout.clone())?; weigh(g, y, s) }, &[x, k], eps)
                    .unwrap()
            }),
        ),
    ]
}

pub fn encode_states(model: &Transformer<f64>, batch: &[&[u32]]) -> (Vec<f64>, usize) {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let src = SeqBatch::new(batch);
    let enc = model.encode(&mut g, &b, &src, None).unwrap();
    (g.value(enc.state.states).data().to_vec(), src.len)
}

pub fn decode_logits(model: &Transformer<f64>, src: &[u32], tgt_in: &[u32]) -> Vec<f64> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let enc = model.encode(&mut g, &b, &SeqBatch::new(&[src]), None).unwrap();
    let l = model.decode(&mut g, &b, &enc.state, &SeqBatch::new(&[tgt_in])).unwrap();
    assert_eq!(g.shape(l), &[tgt_in.len(), 11]);
    g.value(l).data().to_vec()
}

/// Loss of a fixed small batch, differentiated with respect to every
/// parameter through leaves owned by `grad_check`.
pub fn full_model_check(dpe_layers: usize, seed: u64, eps: f64) -> f64 {
    let model = tiny_model::<f64>(dpe_layers, seed);
    let mut r = rng(seed + 100);
    let srcs: Vec<Vec<u32>> = vec![sentence(&mut r, 5, 11), sentence(&mut r, 3, 11)];
    let tgts: Vec<Vec<u32>> = vec![sentence(&mut r, 4, 11), sentence(&mut r, 5, 11)];
    let keys: Option<Vec<TargetKeyVector>> = (dpe_layers > 0).then(|| srcs.iter().map(|s| random_keys(&mut r, s.len())).collect());
    let pairs: Vec<(&[u32], &[u32])> = srcs.iter().zip(&tgts).map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
    let batch = TrainBatch::new(&pairs, keys);
    let inputs: Vec<Tensor<f64>> = (0..model.params().len()).map(|i| model.params().get(i).clone()).collect();
    grad_check(
        |g, vars: &[Var]| {
            let b = model.bind_vars(g, vars.to_vec()).map_err(tensor_err)?;
            let l = model.losses(g, &b, &batch).map_err(tensor_err)?;
            Ok(l.total)
        },
        &inputs,
        eps,
    )
    .unwrap()
}

pub fn tensor_err(e: Error) -> dpe_nmt::autodiff::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

/// Rule oracle: per token, the minimum linked target, clamped to the source
/// length.
pub fn oracle_keys(links: &[(usize, usize)], src_len: usize) -> Vec<TargetKey> {
    (0..src_len)
        .map(|i| {
            links
                .iter()
                .filter(|l| l.0 == i)
                .map(|l| l.1)
                .min()
                .map_or(TargetKey::Unaligned, |t| TargetKey::Aligned(t.min(src_len - 1)))
        })
        .collect()
}

/// Placement oracle: slots of unaligned tokens are fixed, the aligned tokens
/// are stably sorted by key alone and poured into the free slots.
pub fn oracle_reorder<T: Clone>(tokens: &[T], keys: &[TargetKey]) -> Vec<T> {
    let mut aligned: Vec<(usize, usize)> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        if let TargetKey::Aligned(j) = k {
            aligned.push((*j, i));
        }
    }
    aligned.sort_by_key(|&(j, _)| j);
    let mut out: Vec<Option<T>> = vec![None; tokens.len()];
    for (i, k) in keys.iter().enumerate() {
        if *k == TargetKey::Unaligned {
            out[i] = Some(tokens[i].clone());
        }
    }
    let mut it = aligned.into_iter();
    for slot in out.iter_mut() {
        if slot.is_none() {
            *slot = Some(tokens[it.next().unwrap().1].clone());
        }
    }
    out.into_iter().map(Option::unwrap).collect()
}

pub fn small_model(vocab: usize, seed: u64) -> Transformer<f64> {
    Transformer::new(
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ff_dim: 16,
            vocab_src: vocab,
            vocab_tgt: vocab,
            max_len: 24,
            ..ModelConfig::default()
        },
        seed,
    )
    .unwrap()
}

/// A random model is nearly uniform; sharpening the output layer makes its
/// choices decisive enough to exercise real search behaviour.
pub fn sharpened(vocab: usize, seed: u64, gain: f64) -> Transformer<f64> {
    let mut m = small_model(vocab, seed);
    let i = m.params().index_of("output.weight").unwrap();
    for v in m.params_mut().get_mut(i).data_mut() {
        *v *= gain;
    }
    m
}

/// Every token sequence of at most `max_out` tokens, scored like the beam:
/// sequences ending in EOS and unfinished ones of exactly `max_out` tokens
/// compete on log-probability per token.
pub fn exhaustive(m: &Transformer<f64>, src: &[u32], max_out: usize) -> Hypothesis {
    let enc = m.encode_sentence(src).unwrap();
    let vocab = m.config().vocab_tgt as u32;
    let content: Vec<u32> = (0..vocab).filter(|&t| ![PAD_ID, BOS_ID, EOS_ID, UNK_ID].contains(&t)).collect();
    let mut best: Option<Hypothesis> = None;
    let mut frontier = vec![(Vec::<u32>::new(), 0.0f64)];
    for _ in 0..max_out {
        let mut next = Vec::new();
        for (toks, lp) in &frontier {
            let prefix: Vec<u32> = std::iter::once(BOS_ID).chain(toks.iter().copied()).collect();
            let dist = &m.next_log_probs(&enc, &[prefix]).unwrap()[0];
            let mut done = toks.clone();
            done.push(EOS_ID);
            let h = Hypothesis {
                tokens: done,
                log_prob: lp + dist[EOS_ID as usize],
                finished: true,
            };
            if best.as_ref().is_none_or(|b| h.score() > b.score()) {
                best = Some(h);
            }
            for &t in &content {
                let mut more = toks.clone();
                more.push(t);
                next.push((more, lp + dist[t as usize]));
            }
        }
        frontier = next;
    }
    for (tokens, log_prob) in frontier {
        let h = Hypothesis {
            tokens,
            log_prob,
            finished: false,
        };
        if best.as_ref().is_none_or(|b| h.score() > b.score()) {
            best = Some(h);
        }
    }
    best.unwrap()
}

/// Corpus BLEU-4 written independently: n-grams as joined strings, clipped
/// counts by sorting, precisions multiplied directly.
pub fn reference_bleu(hyps: &[String], refs: &[String]) -> f64 {
    let grams = |toks: &[&str], n: usize| -> Vec<String> {
        if toks.len() < n {
            return Vec::new();
        }
        let mut v: Vec<String> = toks.windows(n).map(|w| w.join("\u{1}")).collect();
        v.sort();
        v
    };
    let mut num = [0f64; 4];
    let mut den = [0f64; 4];
    let (mut c, mut rl) = (0f64, 0f64);
    for (h, r) in hyps.iter().zip(refs) {
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        c += ht.len() as f64;
        rl += rt.len() as f64;
        for n in 1..=4 {
            let hg = grams(&ht, n);
            let mut rg = grams(&rt, n);
            den[n - 1] += hg.len() as f64;
            for g in hg {
                if let Some(p) = rg.iter().position(|x| *x == g) {
                    rg.remove(p);
                    num[n - 1] += 1.0;
                }
            }
        }
    }
    if c == 0.0 || num.contains(&0.0) {
        return 0.0;
    }
    let prod: f64 = num.iter().zip(&den).map(|(a, b)| a / b).product();
    let bp = if c >= rl { 1.0 } else { (1.0 - rl / c).exp() };
    100.0 * bp * prod.powf(0.25)
}

pub fn random_corpus(r: &mut impl Rng, lines: usize) -> (Vec<String>, Vec<String>) {
    let words = ["a", "b", "c", "d", "e", "f"];
    let line = |r: &mut dyn rand::RngCore| {
        let n = r.gen_range(1..12);
        (0..n).map(|_| words[r.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    let refs: Vec<String> = (0..lines).map(|_| line(r)).collect();
    // Hypotheses are noisy copies so that n-gram overlap is substantial.
    let hyps = refs
        .iter()
        .map(|s| {
            let mut toks: Vec<&str> = s.split_whitespace().collect();
            for t in toks.iter_mut() {
                if r.gen_ratio(1, 6) {
                    *t = words[r.gen_range(0..words.len())];
                }
            }
            if r.gen_ratio(1, 3) {
                toks.pop();
            }
            toks.join(" ")
        })
        .collect();
    (hyps, refs)
}
