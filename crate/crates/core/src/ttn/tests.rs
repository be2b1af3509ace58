use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::numerics::{finite_diff_check, GradCheckOptions, Reduction, Var};
use crate::scene_graph::{BoundingBox, SceneGraph, SceneObject, SceneRelation, Triplet};
use crate::vocab::{BOS, EOS};

fn small_config(t: usize) -> ModelConfig {
    ModelConfig {
        d: 32,
        heads: 4,
        d_ffn: 48,
        enc_layers: 2,
        dec_layers: 1,
        num_theme_nodes: t,
        vocab_size: 12,
        relation_vocab_size: 3,
        d_o: 6,
        dropout: 0.0,
        ..ModelConfig::desk(12, 3, 6)
    }
}

fn model(t: usize) -> Model<f64> {
    Model::new(small_config(t), vec![4, 5, 6], 7).unwrap()
}

fn scene(no: usize, nr: usize, seed: u64) -> SceneGraph {
    let mut k = seed;
    let mut next = move || {
        k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((k >> 33) as f64) / (1u64 << 31) as f64
    };
    let objects = (0..no)
        .map(|i| {
            let x1 = next() * 50.0;
            let y1 = next() * 50.0;
            SceneObject {
                id: i,
                feature: (0..6).map(|_| next() * 2.0 - 1.0).collect(),
                bbox: BoundingBox::new(x1, y1, x1 + 10.0 + next() * 40.0, y1 + 10.0 + next() * 40.0),
                label: Some(format!("l{i}")),
            }
        })
        .collect();
    let relations = (0..nr).map(|r| SceneRelation { id: r, label_id: r % 3 }).collect();
    let triplets = (0..nr).map(|r| Triplet::new(r % no, r, (r + 1) % no)).collect();
    SceneGraph { objects, relations, triplets, image_size: (100.0, 100.0) }
}

fn values(g: &Graph<f64>, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

#[test]
fn image_embedding_shape() {
    let cfg = ModelConfig { d: 64, ..small_config(16) };
    let m: Model<f64> = Model::new(cfg, vec![4, 5, 6], 1).unwrap();
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let h = net.embed_image_inputs(&mut g, &scene(5, 3, 1)).unwrap();
    assert_eq!(g.shape(h), &[24, 64]);
}

#[test]
fn object_projection_has_d_o_plus_5_columns() {
    for d_o in [1, 6, 32] {
        let cfg = ModelConfig { d_o, ..small_config(2) };
        let m: Model<f64> = Model::new(cfg, vec![4, 5, 6], 1).unwrap();
        assert_eq!(m.params.get(m.layout.object_w).shape(), &[32, d_o + 5]);
    }
}

#[test]
fn zero_object_input_gives_group_embedding() {
    let m = model(2);
    let mut sg = scene(2, 1, 3);
    sg.objects[0].feature = vec![0.0; 6];
    // A box at the origin with zero extent has all-zero geometry.
    sg.objects[0].bbox = BoundingBox::new(0.0, 0.0, 0.0, 0.0);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let h = net.embed_image_inputs(&mut g, &sg).unwrap();
    assert_eq!(g.value(h).row(2), m.params.get(m.layout.group[1]).data());
}

#[test]
fn feature_length_mismatch_is_an_error() {
    let m = model(2);
    let mut sg = scene(2, 1, 3);
    sg.objects[1].feature.pop();
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    assert!(matches!(net.embed_image_inputs(&mut g, &sg), Err(TtnError::FeatureLength { object: 1, .. })));
}

#[test]
fn caption_embedding_shape_and_theme_rows() {
    let m = model(16);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let tokens = [BOS, 4, 5, 6, 7, 8, EOS];
    let hc = net.embed_caption_inputs(&mut g, &tokens).unwrap();
    assert_eq!(g.shape(hc), &[23, 32]);
    let hi = net.embed_image_inputs(&mut g, &scene(3, 2, 1)).unwrap();
    assert_eq!(&g.value(hc).data()[..16 * 32], &g.value(hi).data()[..16 * 32]);
    assert!(net.embed_caption_inputs(&mut g, &[BOS, 99]).is_err());
}

#[test]
fn positional_encoding_base_row() {
    let pe: Tensor<f64> = positional_encoding(3, 8);
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!((pe.get2(1, 0) - 1f64.sin()).abs() < 1e-15);
    assert!((pe.get2(1, 3) - (1.0 / 10f64).cos()).abs() < 1e-15);
}

#[test]
fn identical_keys_average_values() {
    let cfg = ModelConfig { heads: 1, ..small_config(0) };
    let m: Model<f64> = Model::new(cfg, vec![4, 5, 6], 2).unwrap();
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let q = g.constant(Tensor::from_fn(&[3, 32], |k| (k as f64 * 0.37).sin()));
    let k = g.constant(Tensor::from_fn(&[4, 32], |k| ((k % 32) as f64 * 0.11).cos()));
    let v = g.constant(Tensor::from_fn(&[4, 32], |k| (k as f64 * 0.05).sin()));
    let ids = m.layout.encoder[0].attn;
    let mut trace = Vec::new();
    net.multi_head_attention(&mut g, q, k, v, None, &ids, Some(&mut trace)).unwrap();
    for x in g.value(trace[0]).data() {
        assert!((x - 0.25).abs() < 1e-15);
    }
}

#[test]
fn masked_weights_are_exactly_zero_and_zero_mask_is_identity() {
    let m = model(2);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let x = g.constant(Tensor::from_fn(&[5, 32], |k| (k as f64 * 0.3).sin()));
    let mut mask = Tensor::zeros(&[5, 5]);
    mask.data_mut()[1] = f64::NEG_INFINITY;
    mask.data_mut()[5 * 3 + 4] = f64::NEG_INFINITY;
    let mask = Arc::new(mask);
    let ids = m.layout.encoder[0].attn;
    let mut trace = Vec::new();
    net.multi_head_attention(&mut g, x, x, x, Some(&mask), &ids, Some(&mut trace)).unwrap();
    for &a in &trace {
        assert_eq!(g.value(a).get2(0, 1), 0.0);
        assert_eq!(g.value(a).get2(3, 4), 0.0);
    }
    let zero = Arc::new(Tensor::zeros(&[5, 5]));
    let a = net.encoder_layer(&mut g, x, Some(&zero), 0, None).unwrap();
    let b = net.encoder_layer(&mut g, x, None, 0, None).unwrap();
    assert_eq!(values(&g, a), values(&g, b));
    assert_eq!(g.shape(a), &[5, 32]);
}

#[test]
fn encoder_blocks_and_mode_checks() {
    let cfg = ModelConfig { num_theme_nodes: 16, ..small_config(16) };
    let m: Model<f64> = Model::new(cfg, vec![4, 5, 6], 3).unwrap();
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let enc = net.encode_image(&mut g, &scene(5, 3, 2)).unwrap();
    let t = enc.theme_states(&mut g).unwrap();
    let o = enc.object_states(&mut g).unwrap();
    let r = enc.relation_states(&mut g).unwrap();
    assert_eq!((g.shape(t)[0], g.shape(o)[0], g.shape(r)[0]), (16, 5, 3));
    assert!(enc.token_states(&mut g).is_none());

    let x = g.constant(Tensor::zeros(&[16, 32]));
    let zero = Arc::new(Tensor::zeros(&[16, 16]));
    assert!(matches!(
        net.run_encoder(&mut g, x, EncoderMode::Visual, None, 0, 0, 0),
        Err(TtnError::ModeMask { .. })
    ));
    assert!(matches!(
        net.run_encoder(&mut g, x, EncoderMode::Language, Some(&zero), 0, 0, 0),
        Err(TtnError::ModeMask { .. })
    ));
}

#[test]
fn default_layer_counts() {
    let cfg = ModelConfig::desk(10, 3, 32);
    assert_eq!((cfg.enc_layers, cfg.dec_layers, cfg.num_theme_nodes), (3, 1, 16));
    let p = ModelConfig::paper(10, 3, 32);
    assert_eq!((p.d, p.heads, p.d_ffn, p.dropout), (1024, 8, 2048, 0.3));
    assert!(ModelConfig { heads: 5, ..cfg.clone() }.validate().is_err());
}

#[test]
fn shared_parameters_across_views() {
    let mut m = model(4);
    let x = Tensor::from_fn(&[4, 32], |k| (k as f64 * 0.21).cos());
    let run = |m: &Model<f64>| {
        let mut g = Graph::new();
        let net = m.bind(&mut g, false);
        let xi = g.constant(x.clone());
        let zero = Arc::new(Tensor::zeros(&[4, 4]));
        let v = net.run_encoder(&mut g, xi, EncoderMode::Visual, Some(&zero), 0, 0, 0).unwrap();
        let l = net.run_encoder(&mut g, xi, EncoderMode::Language, None, 0, 0, 0).unwrap();
        (values(&g, v.states), values(&g, l.states))
    };
    let (v0, l0) = run(&m);
    assert_eq!(v0, l0);
    let id = m.layout.encoder[1].ffn.inner.w;
    m.params.get_mut(id).data_mut()[0] += 0.5;
    let (v1, l1) = run(&m);
    assert_eq!(v1, l1);
    assert_ne!(v0, v1);
}

#[test]
fn reconstruction_sees_exactly_the_theme_states() {
    let m = model(16);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let tokens = [BOS, 4, 7, 8, EOS];
    let enc = net.encode_caption(&mut g, &tokens).unwrap();
    let mem = net.memory(&mut g, &enc, Task::Reconstruction).unwrap();
    assert_eq!(mem.rows, 16);
    let a = net.run_decoder(&mut g, &tokens[..4], &enc, Task::Reconstruction).unwrap();

    let mut perturbed = g.value(enc.states).clone();
    for x in &mut perturbed.data_mut()[16 * 32..] {
        *x += 3.0;
    }
    let states = g.constant(perturbed);
    let enc2 = EncoderOutput { states, ..enc.clone() };
    let b = net.run_decoder(&mut g, &tokens[..4], &enc2, Task::Reconstruction).unwrap();
    assert_eq!(values(&g, a), values(&g, b));
    assert!(matches!(net.run_decoder(&mut g, &tokens[..4], &enc, Task::Captioning), Err(TtnError::Task { .. })));
    assert!(matches!(net.run_decoder(&mut g, &tokens[1..4], &enc, Task::Reconstruction), Err(TtnError::Task { .. })));
}

#[test]
fn decoder_is_causal() {
    let m = model(3);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let enc = net.encode_image(&mut g, &scene(3, 2, 9)).unwrap();
    let base = [BOS, 4, 5, 6, 7];
    let a = net.run_decoder(&mut g, &base, &enc, Task::Captioning).unwrap();
    for j in 1..base.len() {
        let mut p = base;
        p[j] = 9;
        let b = net.run_decoder(&mut g, &p, &enc, Task::Captioning).unwrap();
        for i in 0..base.len() {
            let same = g.value(a).row(i) == g.value(b).row(i);
            assert_eq!(same, i < j, "row {i} after perturbing {j}");
        }
    }
}

#[test]
fn incremental_decoding_matches_full_prefix() {
    let m = model(3);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let enc = net.encode_image(&mut g, &scene(4, 2, 5)).unwrap();
    let mem = net.memory(&mut g, &enc, Task::Captioning).unwrap();
    let prefix = [BOS, 4, 9, 5];
    let h = net.decode_prefix(&mut g, &prefix, &mem).unwrap();
    let full = net.vocab_logits(&mut g, h).unwrap();
    let mut state = DecoderState::default();
    for (i, &tok) in prefix.iter().enumerate() {
        let (next, logits) = net.decode_step(&mut g, &mem, &state, tok).unwrap();
        for (x, y) in g.value(logits).data().iter().zip(g.value(full).row(i)) {
            assert!((x - y).abs() < 1e-12);
        }
        state = next;
    }
    assert_eq!(state.len(), 4);
}

#[test]
fn vocab_rows_are_distributions() {
    let mut m = model(2);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let h = g.constant(Tensor::from_fn(&[3, 32], |k| (k as f64).sin()));
    let p = net.project_vocab(&mut g, h).unwrap();
    assert_eq!(g.shape(p), &[3, 12]);
    for r in 0..3 {
        assert!((g.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let (w, b) = (m.layout.out_w.unwrap(), m.layout.out_b);
    m.params.get_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
    m.params.get_mut(b).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let mut g = Graph::new();
    let net = m.bind(&mut g, false);
    let h = g.constant(Tensor::from_fn(&[3, 32], |k| (k as f64).sin()));
    let p = net.project_vocab(&mut g, h).unwrap();
    assert!(g.value(p).data().iter().all(|&x| (x - 1.0 / 12.0).abs() < 1e-15));
}

#[test]
fn forward_passes_are_deterministic_and_shaped() {
    let m = model(4);
    let sg = scene(4, 3, 11);
    let tokens = [BOS, 4, 5, 7, EOS];
    let run = || {
        let mut g = Graph::new();
        let net = m.bind(&mut g, false);
        let c = net.forward_captioning(&mut g, &sg, &tokens).unwrap();
        let r = net.forward_reconstruction(&mut g, &tokens).unwrap();
        assert_eq!(g.shape(c.logits), &[4, 12]);
        assert_eq!(g.shape(r.logits), &[4, 12]);
        (values(&g, c.logits), values(&g, r.logits))
    };
    assert_eq!(run(), run());
}

#[test]
fn theme_bank_receives_gradient() {
    let m = model(4);
    let sg = scene(4, 3, 13);
    let tokens = [BOS, 4, 5, 7, EOS];
    for task in [Task::Captioning, Task::Reconstruction] {
        let mut g = Graph::new();
        let net = m.bind(&mut g, true);
        let f = match task {
            Task::Captioning => net.forward_captioning(&mut g, &sg, &tokens).unwrap(),
            Task::Reconstruction => net.forward_reconstruction(&mut g, &tokens).unwrap(),
        };
        let loss = g.cross_entropy(f.logits, &f.targets, 0.0, Reduction::Mean).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(net.param(m.layout.theme_bank.unwrap())).unwrap();
        assert!(grad.iter().any(|&x| x.abs() > 1e-8), "{task:?}");
    }
}

#[test]
fn theme_bank_gradient_matches_a_probe() {
    let mut m = model(4);
    let sg = scene(4, 3, 13);
    let tokens = [BOS, 4, 5, 7, EOS];
    let bank = m.layout.theme_bank.unwrap();
    let loss_at = |m: &Model<f64>| {
        let mut g = Graph::new();
        let net = m.bind(&mut g, false);
        let f = net.forward_captioning(&mut g, &sg, &tokens).unwrap();
        let loss = g.cross_entropy(f.logits, &f.targets, 0.0, Reduction::Mean).unwrap();
        g.value(loss).item()
    };
    let analytic = {
        let mut g = Graph::new();
        let net = m.bind(&mut g, true);
        let f = net.forward_captioning(&mut g, &sg, &tokens).unwrap();
        let loss = g.cross_entropy(f.logits, &f.targets, 0.0, Reduction::Mean).unwrap();
        g.backward(loss).unwrap();
        g.grad(net.param(bank)).unwrap()[5]
    };
    let eps = 1e-5;
    m.params.get_mut(bank).data_mut()[5] += eps;
    let up = loss_at(&m);
    m.params.get_mut(bank).data_mut()[5] -= 2.0 * eps;
    let down = loss_at(&m);
    let numeric = (up - down) / (2.0 * eps);
    assert!(numeric.abs() > 1e-8);
    assert!((analytic - numeric).abs() <= 1e-6 * analytic.abs().max(1.0));
}

#[test]
fn one_encoder_layer_gradcheck() {
    let cfg = ModelConfig { enc_layers: 1, ..small_config(2) };
    let m: Model<f64> = Model::new(cfg, vec![4, 5, 6], 4).unwrap();
    let mut params = m.params.clone();
    let layout = m.layout.clone();
    let word_emb = layout.word_emb;
    let head = layout.out_w.unwrap();
    let report = finite_diff_check(
        &mut params,
        |g, b| {
            let x = g.embedding(b.get(word_emb), &[4, 5, 6])?;
            let mask = Arc::new(Tensor::zeros(&[3, 3]));
            let net = Net::rebind(&m, b.clone());
            let h = net.encoder_layer(g, x, Some(&mask), 0, None).map_err(numerics_err)?;
            let logits = g.matmul(h, b.get(head))?;
            g.cross_entropy(logits, &[7, 8, 9], 0.0, Reduction::Mean)
        },
        &GradCheckOptions { coords_per_param: Some(4), ..Default::default() },
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}

#[test]
fn full_forward_gradcheck() {
    let m = model(3);
    let sg = scene(4, 3, 21);
    let tokens = [BOS, 4, 5, 9, 7, EOS];
    let mut params = m.params.clone();
    let report = finite_diff_check(
        &mut params,
        |g, b| {
            let net = Net::rebind(&m, b.clone());
            let c = net.forward_captioning(g, &sg, &tokens).map_err(numerics_err)?;
            let r = net.forward_reconstruction(g, &tokens).map_err(numerics_err)?;
            let l0 = g.cross_entropy(c.logits, &c.targets, 0.2, Reduction::Mean)?;
            let l1 = g.cross_entropy(r.logits, &r.targets, 0.2, Reduction::Mean)?;
            g.add(l0, l1)
        },
        &GradCheckOptions { coords_per_param: Some(3), ..Default::default() },
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}

fn numerics_err(e: TtnError) -> crate::numerics::NumericsError {
    match e {
        TtnError::Numerics(n) => n,
        other => panic!("{other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn permuting_objects_permutes_states(seed in 0u64..1000, rot in 1usize..5) {
        let m = model(3);
        let sg = scene(5, 3, seed);
        let perm: Vec<usize> = (0..5).map(|k| (k + rot) % 5).collect();
        let sp = sg.permute_objects(&perm);
        let mut g = Graph::new();
        let net = m.bind(&mut g, false);
        let a = net.encode_image(&mut g, &sg).unwrap();
        let b = net.encode_image(&mut g, &sp).unwrap();
        let (ta, tb) = (a.theme_states(&mut g).unwrap(), b.theme_states(&mut g).unwrap());
        for (x, y) in values(&g, ta).iter().zip(values(&g, tb)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        let (oa, ob) = (a.object_states(&mut g).unwrap(), b.object_states(&mut g).unwrap());
        for (k, &old) in perm.iter().enumerate() {
            for (x, y) in g.value(oa).row(old).iter().zip(g.value(ob).row(k)) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
