use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::corpus::tokenize_pair_ids;
use crate::tensor::Gradients;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        dim: 8,
        heads: 2,
        arp_layers: 1,
        max_len: 16,
        vocab_size: 12,
        ffn_mult: 2,
    }
}

fn pair() -> TokenSeq {
    tokenize_pair_ids(&[4, 5, 6], &[7, 5, 8, 9], 16).unwrap()
}

#[test]
fn config_validation() {
    let mut c = small_config();
    c.heads = 3;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = small_config();
    c.arp_layers = 0;
    assert!(c.validate().is_err());
    let mut c = small_config();
    c.vocab_size = 4;
    assert!(c.validate().is_err());
    assert!(small_config().validate().is_ok());
}

#[test]
fn parameter_names_are_stable() {
    let m = EncoderModel::new(small_config(), 24, 1).unwrap();
    for name in [
        "emb.token",
        "emb.position",
        "rot.attn.wq",
        "rot.ffn.w2",
        "arp.0.ln1.gain",
        "rouge_head.w1",
        "pred_head.b2",
    ] {
        assert!(m.store.id(name).is_some(), "{name}");
    }
    assert_eq!(m.head_input(), 24);
    assert_eq!(m.store.value(m.store.id("emb.token").unwrap()).shape(), [12, 8]);
}

#[test]
fn same_seed_same_weights() {
    let a = EncoderModel::new(small_config(), 24, 5).unwrap();
    let b = EncoderModel::new(small_config(), 24, 5).unwrap();
    let c = EncoderModel::new(small_config(), 24, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn shapes_through_the_stack() {
    let m = EncoderModel::new(small_config(), 24, 1).unwrap();
    let mut g = Graph::new(&m.store);
    let p = pair();
    let rot = m.encode_rot(&mut g, &p).unwrap();
    assert_eq!(g.value(rot.z).shape(), [p.len(), 8]);
    let r = m.rouge_head(&mut g, &rot).unwrap();
    assert_eq!(g.value(r).shape(), [1, 2]);
    assert!(g.value(r).data().iter().all(|&v| v > 0.0 && v < 1.0));
    let arp = m.encode_arp(&mut g, &rot).unwrap();
    let (q, s) = m.mean_pool(&mut g, &arp).unwrap();
    assert_eq!(g.value(q).shape(), [1, 8]);
    assert_eq!(g.value(s).shape(), [1, 8]);
}

#[test]
fn pooling_skips_special_tokens() {
    let m = EncoderModel::new(small_config(), 24, 1).unwrap();
    let mut g = Graph::new(&m.store);
    let p = pair();
    let rows: Vec<f64> = (0..p.len() * 8).map(|i| (i / 8) as f64).collect();
    let z = g.constant(Tensor::new(p.len(), 8, rows).unwrap());
    let enc = PairEncoding { z, seq: p };
    let (q, s) = m.mean_pool(&mut g, &enc).unwrap();
    // claim rows 1..=3, sentence rows 5..=8
    assert_eq!(g.value(q).data()[0], 2.0);
    assert_eq!(g.value(s).data()[0], 6.5);
}

#[test]
fn over_long_pair_is_rejected() {
    let m = EncoderModel::new(small_config(), 24, 1).unwrap();
    let mut g = Graph::new(&m.store);
    let long = tokenize_pair_ids(&[4; 20], &[5; 20], 32).unwrap();
    assert!(matches!(m.encode_rot(&mut g, &long), Err(Error::Contract(_))));
}

#[test]
fn average_embedding_is_row_mean() {
    let m = EncoderModel::new(small_config(), 24, 1).unwrap();
    let table = m.store.value(m.token_embedding_id());
    let avg = m.avg_embedding_ids(&[4, 6]).unwrap();
    for (j, v) in avg.iter().enumerate() {
        let expect = (table.at(4, j) + table.at(6, j)) / 2.0;
        assert!((v - expect).abs() < 1e-15);
    }
    assert!(m.avg_embedding_ids(&[]).is_err());
}

#[test]
fn drift_penalty_needs_snapshot() {
    let m = EncoderModel::new(small_config(), 24, 1).unwrap();
    let mut g = Graph::new(&m.store);
    assert!(matches!(drift_penalty(&mut g, 0.1), Err(Error::Contract(_))));
}

#[test]
fn drift_penalty_counts_squared_displacement() {
    let mut m = EncoderModel::new(small_config(), 24, 1).unwrap();
    let ids = m.rot_param_ids();
    m.store.take_snapshot(&ids);
    let wq = m.store.id("rot.attn.wq").unwrap();
    m.store.value_mut(wq).data_mut()[0] += 0.5;
    m.store.value_mut(wq).data_mut()[3] -= 1.0;
    let mut g = Graph::new(&m.store);
    let d = drift_penalty(&mut g, 2.0).unwrap();
    assert!((g.value(d).item().unwrap() - 2.0 * 1.25).abs() < 1e-12);
}

fn pretrain_loss(m: &EncoderModel, g: &mut Graph, p: &TokenSeq) -> Var {
    let enc = m.encode_rot(g, p).unwrap();
    let r = m.rouge_head(g, &enc).unwrap();
    let target = RougeTarget {
        precision: 0.25,
        recall: 0.5,
    };
    rot_pretrain_loss(g, r, target, 0.3).unwrap()
}

fn matching_loss(m: &EncoderModel, g: &mut Graph, p: &TokenSeq) -> Var {
    let enc = m.encode_rot(g, p).unwrap();
    let arp = m.encode_arp(g, &enc).unwrap();
    let (q, s) = m.mean_pool(g, &arp).unwrap();
    let mem = g.constant(Tensor::row_vector(vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.4]));
    let v = g.concat_cols(&[q, s, mem]).unwrap();
    let y = m.predict_head(g, v).unwrap();
    g.bce(y, 1.0).unwrap()
}

fn check_gradients(m: &mut EncoderModel, f: fn(&EncoderModel, &mut Graph, &TokenSeq) -> Var) -> f64 {
    let p = pair();
    let mut grads = Gradients::zeros_for(&m.store);
    {
        let mut g = Graph::new(&m.store);
        let loss = f(m, &mut g, &p);
        g.backward(loss, &mut grads).unwrap();
    }
    let h = 1e-5;
    let mut worst = 0.0f64;
    let ids: Vec<ParamId> = m.store.ids().filter(|&id| m.store.is_trainable(id)).collect();
    for id in ids {
        for i in 0..m.store.value(id).len() {
            let orig = m.store.value(id).data()[i];
            let mut eval = |v: f64| {
                m.store.value_mut(id).data_mut()[i] = v;
                let mut g = Graph::new(&m.store);
                let loss = f(m, &mut g, &p);
                g.value(loss).item().unwrap()
            };
            let plus = eval(orig + h);
            let minus = eval(orig - h);
            m.store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).unwrap()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn pretraining_gradients_match_finite_differences() {
    let mut m = EncoderModel::new(small_config(), 24, 2).unwrap();
    let mut ids = m.rot_param_ids();
    ids.extend(m.rouge_head_ids());
    m.set_trainable_only(&ids);
    let rot = m.rot_param_ids();
    m.store.take_snapshot(&rot);
    // move away from the snapshot so the penalty gradient is non-zero
    let pos = m.store.id("emb.position").unwrap();
    for (i, v) in m.store.value_mut(pos).data_mut().iter_mut().enumerate() {
        *v = 0.01 * (i % 7) as f64 - 0.03;
    }
    let worst = check_gradients(&mut m, pretrain_loss);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn matching_gradients_match_finite_differences() {
    let mut m = EncoderModel::new(small_config(), 24, 3).unwrap();
    let ids = m.arp_param_ids();
    m.set_trainable_only(&ids);
    let worst = check_gradients(&mut m, matching_loss);
    assert!(worst < 1e-4, "max relative error {worst}");
}
