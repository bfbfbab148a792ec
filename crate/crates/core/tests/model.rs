mod common;

use common::oracles::{decode_logits, encode_states, full_model_check};
use common::{rng, sentence, tiny_config, tiny_model};
use dpe_nmt::alignment::TargetKeyVector;
use dpe_nmt::autodiff::{Graph, Tensor};
use dpe_nmt::model::{sinusoidal_pe, Injection, ModelConfig, SeqBatch, TrainBatch, Transformer, PAD_ID};
use dpe_nmt::Error;

#[test]
fn sinusoidal_examples() {
    let pe = sinusoidal_pe::<f64>(4, 4).unwrap();
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    // Direct formula evaluation.
    let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
    for (a, b) in pe.row(1).iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    for (a, b) in pe.row(1).iter().zip([0.8415, 0.5403, 0.0100, 0.99995]) {
        assert!((a - b).abs() < 1e-4);
    }
    let big = sinusoidal_pe::<f64>(256, 64).unwrap();
    assert!(big.data().iter().all(|v| v.abs() <= 1.0));
    assert!(matches!(sinusoidal_pe::<f64>(8, 5), Err(Error::Config(_))));
}

#[test]
fn sinusoidal_rows_are_distinct() {
    for d in [4, 8, 64] {
        let pe = sinusoidal_pe::<f64>(128, d).unwrap();
        for i in 0..128 {
            for j in i + 1..128 {
                let dist: f64 = pe.row(i).iter().zip(pe.row(j)).map(|(a, b)| (a - b).abs()).sum();
                assert!(dist > 1e-6, "d={d}: rows {i} and {j} collide");
            }
        }
    }
}

fn cfg_d(d: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        n_heads: 1,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ff_dim: 4,
        vocab_src: vocab,
        vocab_tgt: vocab,
        max_len: 4,
        ..ModelConfig::default()
    }
}

/// Embeds `ids` with an explicit table; the model supplies only its PE rows.
fn enrich_with(model: &Transformer<f64>, table: Tensor<f64>, ids: &[u32]) -> Vec<f64> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let t = g.constant(table);
    let e = model.enrich(&mut g, &b, t, &SeqBatch::new(&[ids])).unwrap();
    g.value(e).data().to_vec()
}

#[test]
fn enrich_examples() {
    let model = Transformer::<f64>::new(cfg_d(2, 6), 1).unwrap();
    let pe = model.pe_table().clone();
    let got = enrich_with(&model, Tensor::zeros(&[6, 2]), &[4, 5, 4]);
    assert_eq!(got, pe.data()[..6].to_vec());

    // w ⊕ p is an elementwise sum; with d=2 the embedding is scaled by √2.
    let table = Tensor::from_fn(&[6, 2], |_| 1.0 / 2f64.sqrt());
    let got = enrich_with(&model, table, &[4]);
    assert!((got[0] - (1.0 + pe.row(0)[0])).abs() < 1e-15);
    assert!((got[1] - (1.0 + pe.row(0)[1])).abs() < 1e-15);

    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let t = g.constant(Tensor::zeros(&[6, 2]));
    let too_long = SeqBatch::new(&[&[4, 4, 4, 4, 4]]);
    assert!(matches!(model.enrich(&mut g, &b, t, &too_long), Err(Error::Length { len: 5, max_len: 4 })));
}

#[test]
fn enrich_adds_position_rows_to_embeddings() {
    let model = Transformer::<f64>::new(cfg_d(2, 6), 1).unwrap();
    let table = Tensor::from_fn(&[6, 2], |i| i as f64 * 0.1);
    let got = enrich_with(&model, table.clone(), &[5, 4]);
    let pe = model.pe_table();
    for (pos, id) in [5usize, 4].iter().enumerate() {
        for c in 0..2 {
            let want = table.row(*id)[c] * 2f64.sqrt() + pe.row(pos)[c];
            assert!((got[pos * 2 + c] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn encoder_output_shape_and_determinism() {
    let model = tiny_model::<f64>(0, 3);
    let mut r = rng(4);
    let s = sentence(&mut r, 6, 11);
    let (a, _) = encode_states(&model, &[&s]);
    assert_eq!(a.len(), 6 * 8);
    assert!(a.iter().all(|v| v.is_finite()));
    let (b, _) = encode_states(&model, &[&s]);
    assert_eq!(a, b);
    let (pair, _) = encode_states(&model, &[&s, &s]);
    assert_eq!(&pair[..48], &pair[48..]);

    let mut g = Graph::new();
    let bnd = model.bind(&mut g, false);
    let empty: &[u32] = &[];
    assert!(matches!(
        model.encode(&mut g, &bnd, &SeqBatch::new(&[empty]), None),
        Err(Error::Contract(_))
    ));
}

#[test]
fn pad_embeddings_do_not_reach_real_positions() {
    let mut r = rng(7);
    for seed in 0..5 {
        let mut model = tiny_model::<f64>(0, seed);
        let long = sentence(&mut r, 7, 11);
        let short = sentence(&mut r, 3, 11);
        let (before, len) = encode_states(&model, &[&long, &short]);
        let idx = model.params().index_of("src_embed").unwrap();
        let emb = model.params_mut().get_mut(idx);
        for v in &mut emb.data_mut()[PAD_ID as usize * 8..(PAD_ID as usize + 1) * 8] {
            *v += 3.0;
        }
        let (after, _) = encode_states(&model, &[&long, &short]);
        assert_eq!(&before[..len * 8], &after[..len * 8]);
        assert_eq!(&before[len * 8..(len + 3) * 8], &after[len * 8..(len + 3) * 8]);
        assert_ne!(&before[(len + 3) * 8..], &after[(len + 3) * 8..]);

        // Padding in a batch matches encoding the sentence alone.
        let (alone, _) = encode_states(&model, &[&short]);
        for (a, b) in alone.iter().zip(&after[len * 8..]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn decoder_is_causal() {
    let mut r = rng(11);
    for seed in 0..10 {
        let model = tiny_model::<f64>(0, seed);
        let src = sentence(&mut r, 5, 11);
        let mut tgt = sentence(&mut r, 8, 11);
        tgt[0] = 1;
        let base = decode_logits(&model, &src, &tgt);
        for t in 1..8 {
            let mut changed = tgt.clone();
            for x in &mut changed[t..] {
                *x = 4 + (*x + 3) % 7;
            }
            let other = decode_logits(&model, &src, &changed);
            assert_eq!(&base[..t * 11], &other[..t * 11], "seed {seed} position {t}");
        }
    }
}

#[test]
fn single_token_source_receives_all_cross_attention() {
    let model = tiny_model::<f64>(0, 2);
    let a = decode_logits(&model, &[5], &[1, 6, 7]);
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a, decode_logits(&model, &[5], &[1, 6, 7]));
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let enc = model.encode(&mut g, &b, &SeqBatch::new(&[&[5]]), None).unwrap();
    let empty: &[u32] = &[];
    assert!(matches!(
        model.decode(&mut g, &b, &enc.state, &SeqBatch::new(&[empty])),
        Err(Error::Contract(_))
    ));
}

#[test]
fn full_translation_loss_matches_finite_differences() {
    let err = full_model_check(0, 5, 1e-4);
    assert!(err < 1e-3, "max relative error {err:e}");
}

#[test]
fn full_dpe_loss_matches_finite_differences() {
    let err = full_model_check(2, 6, 1e-4);
    assert!(err < 1e-3, "max relative error {err:e}");
}

#[test]
fn bind_vars_checks_the_parameter_list() {
    let model = tiny_model::<f64>(0, 1);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1]));
    assert!(matches!(model.bind_vars(&mut g, vec![x]), Err(Error::Contract(_))));
    let n = model.params().len();
    assert!(matches!(model.bind_vars(&mut g, vec![x; n]), Err(Error::Contract(_))));
}

fn dpe_output(model: &Transformer<f64>, src: &[u32]) -> (Vec<f64>, Vec<usize>) {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let s = SeqBatch::new(&[src]);
    let e = model.enrich(&mut g, &b, b.vars()[0], &s).unwrap();
    let r = model.dpe_forward(&mut g, &b, e, &s).unwrap();
    assert_eq!(g.shape(r), g.shape(e));
    (g.value(r).data().to_vec(), g.shape(r).to_vec())
}

#[test]
fn dpe_forward_shape_and_determinism() {
    let model = tiny_model::<f64>(2, 8);
    let (a, shape) = dpe_output(&model, &[4, 5, 6, 7, 8]);
    assert_eq!(shape, vec![5, 8]);
    assert_eq!(a, dpe_output(&model, &[4, 5, 6, 7, 8]).0);

    let base = tiny_model::<f64>(0, 8);
    let mut g = Graph::new();
    let b = base.bind(&mut g, false);
    let s = SeqBatch::new(&[&[4, 5]]);
    let e = base.enrich(&mut g, &b, b.vars()[0], &s).unwrap();
    assert!(matches!(base.dpe_forward(&mut g, &b, e, &s), Err(Error::Config(_))));
}

#[test]
fn translation_gradient_reaches_embeddings_through_dpe() {
    for injection in [Injection::Replace, Injection::Residual] {
        let cfg = ModelConfig {
            dpe_injection: injection,
            lambda: 1.0,
            ..tiny_config(2)
        };
        let model = Transformer::<f64>::new(cfg, 9).unwrap();
        let src = [4u32, 5, 6];
        let batch = TrainBatch::new(&[(&src, &[7, 8])], Some(vec![TargetKeyVector::identity(3)]));
        let mut g = Graph::new();
        let b = model.bind(&mut g, true);
        let l = model.losses(&mut g, &b, &batch).unwrap();
        g.backward(l.total).unwrap();
        let emb = g.grad(b.vars()[0]).unwrap();
        let used: f64 = src.iter().flat_map(|&i| emb[i as usize * 8..(i as usize + 1) * 8].iter()).map(|v| v.abs()).sum();
        assert!(used > 1e-8, "{injection}: embedding gradient vanished");
        let dpe_idx = model.params().index_of("dpe.0.ff1.weight").unwrap();
        let dpe_grad: f64 = g.grad(b.vars()[dpe_idx]).unwrap().iter().map(|v| v.abs()).sum();
        assert!(dpe_grad > 1e-8, "{injection}: DPE layers receive no translation gradient");

        // Finite-difference oracle on one used embedding entry.
        let idx = 4 * 8 + 2;
        let loss_at = |delta: f64| {
            let mut m = model.clone();
            m.params_mut().get_mut(0).data_mut()[idx] += delta;
            let mut g = Graph::new();
            let b = m.bind(&mut g, false);
            let l = m.losses(&mut g, &b, &batch).unwrap();
            g.scalar(l.total)
        };
        let numeric = (loss_at(1e-6) - loss_at(-1e-6)) / 2e-6;
        assert!((numeric - emb[idx]).abs() <= 1e-6 * numeric.abs().max(1e-3), "{numeric} vs {}", emb[idx]);
    }
}

#[test]
fn dpe_layers_zero_is_the_plain_transformer() {
    let base = tiny_model::<f64>(0, 12);
    let dpe = Transformer::<f64>::new(
        ModelConfig {
            dpe_injection: Injection::Bypass,
            lambda: 1.0,
            ..tiny_config(2)
        },
        12,
    )
    .unwrap();
    assert!(!base.has_dpe());
    assert!(base.params().names().iter().all(|n| !n.starts_with("dpe.")));
    assert_eq!(base.num_parameters(), tiny_model::<f64>(0, 99).num_parameters());
    let dpe_only: usize = dpe
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with("dpe."))
        .map(|(_, t)| t.numel())
        .sum();
    assert_eq!(dpe.num_parameters(), base.num_parameters() + dpe_only);
    // Shared parameters start identical, and the bypassed DPE model computes
    // the same translation loss bit for bit.
    for (name, t) in base.params().iter() {
        let i = dpe.params().index_of(name).unwrap();
        assert_eq!(dpe.params().get(i), t);
    }
    let mut r = rng(13);
    let src = sentence(&mut r, 6, 11);
    let tgt = sentence(&mut r, 5, 11);
    let run = |m: &Transformer<f64>, keys| {
        let batch = TrainBatch::new(&[(&src, &tgt)], keys);
        let mut g = Graph::new();
        let b = m.bind(&mut g, false);
        let l = m.losses(&mut g, &b, &batch).unwrap();
        (g.scalar(l.translation), g.scalar(l.total))
    };
    let (bt, btot) = run(&base, None);
    let (dt, dtot) = run(&dpe, Some(vec![TargetKeyVector::identity(6)]));
    assert_eq!(bt, btot);
    assert_eq!(bt.to_bits(), dt.to_bits());
    assert_eq!(dt.to_bits(), dtot.to_bits());
}

#[test]
fn cast_round_trip_preserves_f32_values() {
    let m = tiny_model::<f32>(2, 4);
    let back = m.cast::<f64>().cast::<f32>();
    for (a, b) in m.params().iter().zip(back.params().iter()) {
        assert_eq!(a.1, b.1);
    }
    assert_eq!(m.pe_table(), back.pe_table());
}
