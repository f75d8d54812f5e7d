use super::*;
use crate::autodiff::{seeded_rng, Graph, Tensor, Var};
use crate::data::{HistoryEvent, Label, Polarity, ReasoningSample};
use crate::testutil::{numeric_param_grads, random_tensor, rel_err};

fn params(variant: Variant, d: usize, std: f64, seed: u64) -> ModelParams {
    let cfg = VariantConfig::new(variant, d);
    ModelParams::init_with_std(&cfg, 4, 9, 12, seed, std).unwrap()
}

fn sample(user: usize, hist: &[(usize, usize, i8)], item: usize, time: usize) -> ReasoningSample {
    ReasoningSample {
        user,
        history: hist
            .iter()
            .map(|&(item, bucket, s)| HistoryEvent {
                item,
                bucket,
                polarity: Polarity::from_sign(s).unwrap(),
            })
            .collect(),
        candidate_item: item,
        candidate_time: time,
        label: Label::Positive,
        position: hist.len(),
        train_only: false,
    }
}

fn rows(g: &Graph<'_>, v: Var) -> Vec<Vec<f64>> {
    let c = *g.shape(v).last().unwrap();
    g.value(v).chunks(c).map(<[f64]>::to_vec).collect()
}

fn mat(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect()
}

fn vecmat(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; w[0].len()];
    for (xi, row) in x.iter().zip(w) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

#[test]
fn lookup_matches_one_hot_product() {
    let p = params(Variant::Tisancr, 5, 0.3, 1);
    let mut g = Graph::with_params(&p.store);
    let table = g.param(p.ids.item_emb);
    let row = embed_lookup(&mut g, table, &[3]).unwrap();
    let mut onehot = vec![0.0; 9];
    onehot[3] = 1.0;
    let oh = g.constant(Tensor::matrix(1, 9, onehot).unwrap());
    let prod = g.matmul(oh, table).unwrap();
    assert_eq!(g.value(row), g.value(prod));
    assert!(matches!(
        embed_lookup(&mut g, table, &[9]),
        Err(Error::OutOfBounds { index: 9, .. })
    ));
}

#[test]
fn lookup_gradient_is_sparse_and_shared() {
    let p = params(Variant::Tisancr, 3, 0.3, 2);
    let mut g = Graph::with_params(&p.store);
    let table = g.param(p.ids.item_emb);
    let a = embed_lookup(&mut g, table, &[3]).unwrap();
    let s = g.sum(a).unwrap();
    let grads = g.backward(s).unwrap();
    let gr = grads.param(p.ids.item_emb).unwrap();
    for (i, v) in gr.iter().enumerate() {
        assert_eq!(*v, if i / 3 == 3 { 1.0 } else { 0.0 });
    }

    // Two lookups of one row, nonlinear loss.
    let loss = |store: &crate::autodiff::ParamStore| {
        let mut g = Graph::with_params(store);
        let t = g.param(p.ids.item_emb);
        let a = embed_lookup(&mut g, t, &[2]).unwrap();
        let b = embed_lookup(&mut g, t, &[2]).unwrap();
        let m = g.mul(a, b).unwrap();
        let m = g.mul(m, a).unwrap();
        let s = g.sum(m).unwrap();
        (g.scalar(s), g.backward(s).unwrap().param(p.ids.item_emb).unwrap().to_vec())
    };
    let (_, analytic) = loss(&p.store);
    let numeric = numeric_param_grads(&p.store, |s| loss(s).0);
    let (_, num) = numeric.iter().find(|(n, _)| n == "item_emb").unwrap();
    assert!(max_rel(&analytic, num) < 1e-6);
}

#[test]
fn relative_time_of_current_bucket_is_zero() {
    let p = params(Variant::Tisancr, 4, 0.3, 3);
    let mut g = Graph::with_params(&p.store);
    let tau = relative_time_embeddings(&mut g, &p, &[5, 2, 2], 5).unwrap();
    let r = rows(&g, tau);
    assert!(r[0].iter().all(|v| *v == 0.0));
    assert_eq!(r[1], r[2]);
    assert!(r[1].iter().any(|v| *v != 0.0));
    assert!(relative_time_embeddings(&mut g, &p, &[], 5).is_err());
}

#[test]
fn relative_time_gradient_reaches_both_rows() {
    let p = params(Variant::Tisancr, 3, 0.3, 4);
    let w = random_tensor(&[1, 3], 5);
    let run = |store: &crate::autodiff::ParamStore| {
        let mut g = Graph::with_params(store);
        let tau = relative_time_embeddings(&mut g, &p, &[1], 7).unwrap();
        let wv = g.constant(w.clone());
        let sq = g.mul(tau, tau).unwrap();
        let m = g.mul(sq, wv).unwrap();
        let s = g.sum(m).unwrap();
        (g.scalar(s), g.backward(s).unwrap().param(p.ids.time_emb).unwrap().to_vec())
    };
    let (_, analytic) = run(&p.store);
    assert!(analytic[3..6].iter().all(|v| *v != 0.0));
    assert!(analytic[21..24].iter().all(|v| *v != 0.0));
    let numeric = numeric_param_grads(&p.store, |s| run(s).0);
    let (_, num) = numeric.iter().find(|(n, _)| n == "time_emb").unwrap();
    assert!(max_rel(&analytic, num) < 1e-6);
}

#[test]
fn attention_of_single_row_is_value_projection() {
    let p = params(Variant::Tisancr, 4, 0.3, 5);
    let mut g = Graph::with_params(&p.store);
    let tau = g.constant(random_tensor(&[1, 4], 6));
    let att = self_attention(&mut g, &p, tau, 1, &[1]).unwrap();
    assert_eq!(g.value(att.weights), &[1.0]);
    let wv = mat(p.store.get(p.ids.w_value));
    let expect = vecmat(g.value(tau), &wv);
    assert!(max_rel(g.value(att.output), &expect) < 1e-14);
}

#[test]
fn identical_times_attend_uniformly() {
    let p = params(Variant::Tisancr, 4, 0.3, 6);
    let mut g = Graph::with_params(&p.store);
    let row = random_tensor(&[1, 4], 7);
    let tau = g.constant(Tensor::matrix(3, 4, row.data().repeat(3)).unwrap());
    let att = self_attention(&mut g, &p, tau, 3, &[3]).unwrap();
    for w in g.value(att.weights) {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
}

/// Direct evaluation of the attention equations with plain loops.
fn attention_oracle(p: &ModelParams, tau: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (wq, wk, wv) = (
        mat(p.store.get(p.ids.w_query)),
        mat(p.store.get(p.ids.w_key)),
        mat(p.store.get(p.ids.w_value)),
    );
    let q: Vec<_> = tau.iter().map(|t| vecmat(t, &wq)).collect();
    let k: Vec<_> = tau.iter().map(|t| vecmat(t, &wk)).collect();
    let v: Vec<_> = tau.iter().map(|t| vecmat(t, &wv)).collect();
    let r = tau.len();
    let mut weights = Vec::new();
    let mut out = Vec::new();
    for i in 0..r {
        let alpha: Vec<f64> = (0..r)
            .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (p.d as f64).sqrt())
            .collect();
        let z: f64 = alpha.iter().map(|a| a.exp()).sum();
        let w: Vec<f64> = alpha.iter().map(|a| a.exp() / z).collect();
        let mut l = vec![0.0; p.d];
        for j in 0..r {
            for (o, vj) in l.iter_mut().zip(&v[j]) {
                *o += w[j] * vj;
            }
        }
        weights.push(w);
        out.push(l);
    }
    (weights, out)
}

#[test]
fn attention_matches_direct_evaluation() {
    let p = params(Variant::Tisancr, 4, 0.5, 7);
    let t = random_tensor(&[3, 4], 8);
    let mut g = Graph::with_params(&p.store);
    let tau = g.constant(t.clone());
    let att = self_attention(&mut g, &p, tau, 3, &[3]).unwrap();
    let (w, l) = attention_oracle(&p, &mat(&t));
    for (a, b) in rows(&g, att.weights).iter().zip(&w) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    for (a, b) in rows(&g, att.output).iter().zip(&l) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn padded_blocks_match_unpadded_attention() {
    let p = params(Variant::Tisancr, 4, 0.5, 8);
    let t = random_tensor(&[3, 4], 9);
    let mut padded = t.data().to_vec();
    padded.extend(random_tensor(&[1, 4], 10).data());
    let mut g = Graph::with_params(&p.store);
    let tau = g.constant(Tensor::matrix(4, 4, padded).unwrap());
    let att = self_attention(&mut g, &p, tau, 2, &[2, 1]).unwrap();
    let w = rows(&g, att.weights);
    let (w0, _) = attention_oracle(&p, &mat(&t)[..2]);
    assert!(max_rel(&w[0], &w0[0]) < 1e-12);
    assert_eq!(w[2], vec![1.0, 0.0]);
    assert_eq!(w[3], vec![1.0, 0.0]);
}

#[test]
fn attention_logits_are_scaled_by_root_d() {
    for d in [4, 64] {
        let p = params(Variant::Tisancr, d, 0.3, d as u64);
        let t = random_tensor(&[2, d], 11);
        let mut g = Graph::with_params(&p.store);
        let tau = g.constant(t.clone());
        let att = self_attention(&mut g, &p, tau, 2, &[2]).unwrap();
        let (w, _) = attention_oracle(&p, &mat(&t));
        for (a, b) in g.value(att.weights).iter().zip(w.concat()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_encoder_gives_zero_event() {
    let mut p = params(Variant::Tisancr, 4, 0.3, 9);
    for id in [p.ids.enc_w1, p.ids.enc_b1, p.ids.enc_w2, p.ids.enc_b2] {
        p.store.get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::with_params(&p.store);
    let (eu, ev) = (g.param(p.ids.user_emb), g.param(p.ids.item_emb));
    let u = g.gather(eu, &[1, 2]).unwrap();
    let v = g.gather(ev, &[3, 4]).unwrap();
    let e = encode_event(&mut g, &p, u, v, &mut Mode::Eval).unwrap();
    assert_eq!(g.shape(e), &[2, 4]);
    assert!(g.value(e).iter().all(|x| *x == 0.0));
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let p = params(Variant::Tisancr, 4, 0.5, 10);
    let w = random_tensor(&[1, 4], 12);
    let run = |store: &crate::autodiff::ParamStore| {
        let mut g = Graph::with_params(store);
        let (eu, ev) = (g.param(p.ids.user_emb), g.param(p.ids.item_emb));
        let u = g.gather(eu, &[1]).unwrap();
        let v = g.gather(ev, &[2]).unwrap();
        let e = encode_event(&mut g, &p, u, v, &mut Mode::Eval).unwrap();
        let wv = g.constant(w.clone());
        let m = g.mul(e, wv).unwrap();
        let s = g.sum(m).unwrap();
        let v = g.scalar(s);
        let grads = g.backward(s).unwrap();
        (v, store.trainable().map(|id| grads.param(id).map(<[f64]>::to_vec)).collect::<Vec<_>>())
    };
    let (_, analytic) = run(&p.store);
    let numeric = numeric_param_grads(&p.store, |s| run(s).0);
    for (a, (name, n)) in analytic.iter().zip(&numeric) {
        let a = a.clone().unwrap_or_else(|| vec![0.0; n.len()]);
        assert!(max_rel(&a, n) < 1e-4, "{name}");
    }
}

#[test]
fn fusion_by_time_mode() {
    let p = params(Variant::Tisancr, 3, 0.3, 11);
    let mut g = Graph::with_params(&p.store);
    let e = g.constant(random_tensor(&[2, 3], 1));
    let l = g.constant(random_tensor(&[2, 3], 2));
    let zero = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
    let none = VariantConfig::new(Variant::Ncr, 3);
    let full = VariantConfig::new(Variant::Tisancr, 3);
    let out = fuse_temporal(&mut g, &none, e, Some(l)).unwrap();
    assert_eq!(g.value(out), g.value(e));
    let out = fuse_temporal(&mut g, &full, e, Some(zero)).unwrap();
    assert_eq!(g.value(out), g.value(e));
    let out = fuse_temporal(&mut g, &full, e, Some(l)).unwrap();
    let sum: Vec<f64> = g.value(e).iter().zip(g.value(l)).map(|(a, b)| a + b).collect();
    assert_eq!(g.value(out), sum.as_slice());
}

#[test]
fn logic_modules_are_deterministic_at_inference() {
    let p = params(Variant::Tisancr, 6, 0.3, 12);
    let mut g = Graph::with_params(&p.store);
    let x = g.constant(random_tensor(&[1, 6], 3));
    let y = g.constant(random_tensor(&[1, 6], 4));
    let a = logic_not(&mut g, &p, x, &mut Mode::Eval).unwrap();
    let b = logic_not(&mut g, &p, x, &mut Mode::Eval).unwrap();
    assert_eq!(g.shape(a), &[1, 6]);
    assert_eq!(g.value(a), g.value(b));
    let xy = logic_or(&mut g, &p, x, y, &mut Mode::Eval).unwrap();
    let yx = logic_or(&mut g, &p, y, x, &mut Mode::Eval).unwrap();
    assert_eq!(g.shape(xy), &[1, 6]);
    assert_ne!(g.value(xy), g.value(yx));
}

#[test]
fn or_gradient_reaches_both_operands() {
    let p = params(Variant::Tisancr, 4, 0.5, 13);
    let mut g = Graph::with_params(&p.store);
    let a = g.input(random_tensor(&[1, 4], 5).with_requires_grad(true));
    let b = g.input(random_tensor(&[1, 4], 6).with_requires_grad(true));
    let o = logic_or(&mut g, &p, a, b, &mut Mode::Eval).unwrap();
    let s = g.sum_squares(o).unwrap();
    let grads = g.backward(s).unwrap();
    for (v, seed) in [(a, 5), (b, 6)] {
        let analytic = grads.get(v).unwrap().to_vec();
        let other = if seed == 5 { 6 } else { 5 };
        let numeric = crate::testutil::numeric_grad(random_tensor(&[1, 4], seed).data(), |x| {
            let mut g = Graph::with_params(&p.store);
            let mine = g.constant(Tensor::matrix(1, 4, x.to_vec()).unwrap());
            let theirs = g.constant(random_tensor(&[1, 4], other));
            let (l, r) = if seed == 5 { (mine, theirs) } else { (theirs, mine) };
            let o = logic_or(&mut g, &p, l, r, &mut Mode::Eval).unwrap();
            let s = g.sum_squares(o).unwrap();
            g.scalar(s)
        });
        assert!(analytic.iter().any(|v| *v != 0.0));
        assert!(max_rel(&analytic, &numeric) < 1e-5);
    }
}

#[test]
fn lnn_base_cases() {
    let p = params(Variant::Tisancr, 4, 0.3, 14);
    let mut g = Graph::with_params(&p.store);
    let c = g.constant(random_tensor(&[1, 4], 1));
    let e = g.constant(random_tensor(&[2, 4], 2));
    let m = &mut Mode::Eval;
    let exp = lnn_expression(&mut g, &p, None, &[], c, &[], m).unwrap();
    assert_eq!(g.value(exp), g.value(c));

    let e0 = g.gather(e, &[0]).unwrap();
    let one = lnn_expression(&mut g, &p, Some(e0), &[Polarity::Positive], c, &[0], m).unwrap();
    let n = logic_not(&mut g, &p, e0, m).unwrap();
    let manual = logic_or(&mut g, &p, c, n, m).unwrap();
    assert_eq!(g.value(one), g.value(manual));

    let neg = lnn_expression(&mut g, &p, Some(e0), &[Polarity::Negative], c, &[0], m).unwrap();
    let nn = logic_not(&mut g, &p, n, m).unwrap();
    let manual = logic_or(&mut g, &p, c, nn, m).unwrap();
    assert_eq!(g.value(neg), g.value(manual));

    let pol = [Polarity::Positive; 2];
    let ab = lnn_expression(&mut g, &p, Some(e), &pol, c, &[0, 1], m).unwrap();
    let ba = lnn_expression(&mut g, &p, Some(e), &pol, c, &[1, 0], m).unwrap();
    assert_ne!(g.value(ab), g.value(ba));
    for bad in [&[0, 0][..], &[0][..], &[0, 2][..]] {
        assert!(matches!(
            lnn_expression(&mut g, &p, Some(e), &pol, c, bad, m),
            Err(Error::InvalidArgument(_))
        ));
    }
}

#[test]
fn truth_score_is_cosine_to_anchor() {
    let p = params(Variant::Tisancr, 5, 0.3, 15);
    let mut g = Graph::with_params(&p.store);
    let anchor = p.anchor().data().to_vec();
    let neg: Vec<f64> = anchor.iter().map(|v| -v).collect();
    let x = random_tensor(&[1, 5], 3);
    let scaled: Vec<f64> = x.data().iter().map(|v| v * 7.5).collect();
    let data = [anchor, neg, x.data().to_vec(), scaled].concat();
    let e = g.constant(Tensor::matrix(4, 5, data).unwrap());
    let s = truth_score(&mut g, &p, e).unwrap();
    let s = g.value(s);
    assert!((s[0] - 1.0).abs() < 1e-15);
    assert!((s[1] + 1.0).abs() < 1e-15);
    assert!((s[2] - s[3]).abs() < 1e-15);
    let z = g.constant(Tensor::zeros(vec![1, 5]).unwrap());
    assert!(matches!(truth_score(&mut g, &p, z), Err(Error::ZeroNorm(_))));
}

/// Per-sample composition of the individual layers, as an oracle for the
/// batched forward pass.
fn reference_score(p: &ModelParams, cfg: &VariantConfig, s: &ReasoningSample, item: usize) -> f64 {
    let mut g = Graph::with_params(&p.store);
    let m = &mut Mode::Eval;
    let (eu, ev, et) = (g.param(p.ids.user_emb), g.param(p.ids.item_emb), g.param(p.ids.time_emb));
    let encode = |g: &mut Graph<'_>, item: usize| {
        let u = g.gather(eu, &[s.user]).unwrap();
        let v = g.gather(ev, &[item]).unwrap();
        encode_event(g, p, u, v, &mut Mode::Eval).unwrap()
    };
    let cand = encode(&mut g, item);
    let r = s.history.len();
    let events = (r > 0).then(|| {
        let parts: Vec<Var> = s.history.iter().map(|h| encode(&mut g, h.item)).collect();
        let e = g.vstack(&parts).unwrap();
        let buckets: Vec<usize> = s.history.iter().map(|h| h.bucket).collect();
        let time = match (cfg.time_mode, cfg.attention) {
            (TimeMode::None, _) => None,
            (TimeMode::Absolute, _) => Some(g.gather(et, &buckets).unwrap()),
            (TimeMode::Relative, att) => {
                let tau = relative_time_embeddings(&mut g, p, &buckets, s.candidate_time).unwrap();
                if att {
                    Some(self_attention(&mut g, p, tau, r, &[r]).unwrap().output)
                } else {
                    Some(tau)
                }
            }
        };
        fuse_temporal(&mut g, cfg, e, time).unwrap()
    });
    let pol: Vec<Polarity> = s.history.iter().map(|h| h.polarity).collect();
    let order: Vec<usize> = (0..r).collect();
    let exp = lnn_expression(&mut g, p, events, &pol, cand, &order, m).unwrap();
    let score = truth_score(&mut g, p, exp).unwrap();
    g.value(score)[0]
}

fn batch() -> Vec<ReasoningSample> {
    vec![
        sample(0, &[(1, 2, 1), (4, 5, -1), (2, 9, 1)], 3, 10),
        sample(1, &[], 5, 0),
        sample(2, &[(7, 11, -1)], 8, 11),
        sample(3, &[(0, 1, 1), (6, 3, 1)], 2, 4),
    ]
}

#[test]
fn batched_forward_matches_per_sample_composition() {
    for variant in Variant::ALL {
        let p = params(variant, 5, 0.4, 16);
        let cfg = VariantConfig::new(variant, 5);
        let samples = batch();
        let refs: Vec<&ReasoningSample> = samples.iter().collect();
        let cands = vec![vec![3, 6], vec![5], vec![8, 0, 1], vec![2, 2]];
        let mut g = Graph::with_params(&p.store);
        let out = forward_batch(&mut g, &p, &cfg, &refs, &cands, &mut Mode::Eval).unwrap();
        let got = g.value(out.scores).to_vec();
        let want: Vec<f64> = samples
            .iter()
            .zip(&cands)
            .flat_map(|(s, c)| c.iter().map(|&i| reference_score(&p, &cfg, s, i)).collect::<Vec<_>>())
            .collect();
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{variant:?}: {a} vs {b}");
        }
        // candidates: 8, history events: 6, their negations: 6 + 2,
        // intermediate expressions: 2 + 3 + 2 (step 1), 2 + 2, 2
        assert_eq!(g.shape(out.logic_vectors), &[8 + 6 + 8 + 7 + 4 + 2, 5]);
    }
}

#[test]
fn candidate_event_is_never_fused() {
    let samples = batch();
    let mut firsts = Vec::new();
    for variant in Variant::ALL {
        let p = params(variant, 5, 0.4, 17);
        let mut g = Graph::with_params(&p.store);
        let out = forward_batch(
            &mut g,
            &p,
            &VariantConfig::new(variant, 5),
            &[&samples[0]],
            &[[3]],
            &mut Mode::Eval,
        )
        .unwrap();
        firsts.push(rows(&g, out.logic_vectors)[0].clone());
    }
    assert!(firsts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn forward_score_is_bounded_and_reproducible() {
    let p = params(Variant::Tisancr, 6, 1.0, 18);
    let cfg = VariantConfig::new(Variant::Tisancr, 6);
    for s in batch() {
        let run = |seed| {
            let mut g = Graph::with_params(&p.store);
            let mut rng = seeded_rng(seed);
            let mut mode = Mode::Train { dropout: 0.2, rng: &mut rng };
            let v = forward_score(&mut g, &p, &cfg, &s, &mut mode).unwrap();
            g.scalar(v)
        };
        let a = run(3);
        assert!((-1.0..=1.0).contains(&a));
        assert_eq!(a.to_bits(), run(3).to_bits());
    }
}

#[test]
fn no_time_variant_leaves_time_parameters_untouched() {
    let mut p = params(Variant::Ncr, 4, 0.4, 19);
    for id in [p.ids.time_emb, p.ids.w_query, p.ids.w_key, p.ids.w_value] {
        p.store.get_mut(id).set_requires_grad(true);
    }
    let cfg = VariantConfig::new(Variant::Ncr, 4);
    let s = &batch()[0];
    let mut g = Graph::with_params(&p.store);
    let v = forward_score(&mut g, &p, &cfg, s, &mut Mode::Eval).unwrap();
    let grads = g.backward(v).unwrap();
    for id in [p.ids.time_emb, p.ids.w_query, p.ids.w_key, p.ids.w_value] {
        assert!(grads.param(id).is_none_or(|g| g.iter().all(|v| *v == 0.0)));
    }
    assert!(grads.param(p.ids.user_emb).is_some());
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let d = 4;
    let p = params(Variant::Tisancr, d, 0.5, 20);
    let cfg = VariantConfig::new(Variant::Tisancr, d);
    let samples = [
        sample(0, &[(1, 2, 1), (4, 5, -1), (2, 9, 1)], 3, 10),
        sample(2, &[(7, 11, 1), (0, 4, 1), (5, 1, -1)], 8, 11),
    ];
    let refs: Vec<&ReasoningSample> = samples.iter().collect();
    let cands = [[3, 6], [8, 1]];
    let run = |store: &crate::autodiff::ParamStore| {
        let mut g = Graph::with_params(store);
        let mut rng = seeded_rng(9);
        let mut mode = Mode::Train { dropout: 0.2, rng: &mut rng };
        let out = forward_batch(&mut g, &p, &cfg, &refs, &cands, &mut mode).unwrap();
        let w = g.constant(Tensor::vector(vec![1.0, -0.7, 0.4, -1.3]));
        let m = g.mul(out.scores, w).unwrap();
        let a = g.sum(m).unwrap();
        let b = g.sum_squares(out.logic_vectors).unwrap();
        let b = g.scale(b, 0.01).unwrap();
        let loss = g.add(a, b).unwrap();
        let v = g.scalar(loss);
        let grads = g.backward(loss).unwrap();
        (v, store.trainable().map(|id| grads.param(id).map(<[f64]>::to_vec)).collect::<Vec<_>>())
    };
    let (_, analytic) = run(&p.store);
    let numeric = numeric_param_grads(&p.store, |s| run(s).0);
    assert_eq!(analytic.len(), 18);
    for (a, (name, n)) in analytic.iter().zip(&numeric) {
        let a = a.clone().unwrap_or_else(|| vec![0.0; n.len()]);
        let err = max_rel(&a, n);
        assert!(err < 1e-4, "{name}: {err}");
    }
}
