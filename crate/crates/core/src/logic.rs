//! Logical-law penalties on the NOT / OR modules.
//!
//! Every law is scored as `1 ± Sim(·, ·)` averaged over a set of vectors, so
//! perfect satisfaction gives 0 and each penalty lies in `[0, 2]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{logic_not, ModelParams, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    /// `1 + Sim(NOT x, x)`
    Negation,
    /// `1 − Sim(NOT NOT x, x)`
    DoubleNegation,
    /// `1 − Sim(OR(x, F), x)`
    Identity,
    /// `1 − Sim(OR(x, T), T)`
    Annihilator,
    /// `1 − Sim(OR(x, x), x)`
    Idempotence,
    /// `1 − Sim(OR(x, NOT x), T)`
    Complementation,
}

impl Law {
    pub const ALL: [Law; 6] = [
        Law::Negation,
        Law::DoubleNegation,
        Law::Identity,
        Law::Annihilator,
        Law::Idempotence,
        Law::Complementation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Law::Negation => "negation",
            Law::DoubleNegation => "double_negation",
            Law::Identity => "identity",
            Law::Annihilator => "annihilator",
            Law::Idempotence => "idempotence",
            Law::Complementation => "complementation",
        }
    }
}

pub struct LogicLoss {
    /// Sum of the six law penalties, shape `[1]`.
    pub total: Var,
    /// Per-law penalties in [`Law::ALL`] order.
    pub laws: [Var; 6],
}

/// Logic regularizer over the rows of `vectors` together with the truth
/// anchor `T` and `F = NOT(T)`.
pub fn logic_regularizer_loss(
    g: &mut Graph<'_>,
    params: &ModelParams,
    vectors: Var,
    mode: &mut Mode<'_>,
) -> Result<LogicLoss> {
    let shape = g.shape(vectors).to_vec();
    if shape.len() != 2 || shape[1] != params.d {
        return Err(Error::shape("logic_regularizer", format!("{shape:?}")));
    }
    let ids = &params.ids;
    let d = params.d;
    let anchor = g.param(ids.anchor);
    let t = g.gather(anchor, &[0])?;
    let f = logic_not(g, params, t, mode)?;
    let x = g.vstack(&[vectors, t, f])?;
    let m = shape[0] + 2;

    let not_x = logic_not(g, params, x, mode)?;
    let not_not_x = logic_not(g, params, not_x, mode)?;

    // OR(a, b) = relu(a·W1a + b·W1b + b1)·W2 + b2. The `x·W1a` half is
    // shared by all four OR laws.
    let or_w1 = g.param(ids.or_w1);
    let w1a = g.gather(or_w1, &(0..d).collect::<Vec<_>>())?;
    let w1b = g.gather(or_w1, &(d..2 * d).collect::<Vec<_>>())?;
    let xa = g.matmul(x, w1a)?;
    let xb = g.matmul(x, w1b)?;
    let nb = g.matmul(not_x, w1b)?;
    let tf = g.vstack(&[t, f])?;
    let tfb = g.matmul(tf, w1b)?;
    let tb = g.gather(tfb, &vec![0; m])?;
    let fb = g.gather(tfb, &vec![1; m])?;
    let pre = [fb, tb, xb, nb]
        .into_iter()
        .map(|b| g.add(xa, b))
        .collect::<Result<Vec<_>>>()?;
    let pre = g.vstack(&pre)?;
    let [b1, w2, b2] = [ids.or_b1, ids.or_w2, ids.or_b2].map(|i| g.param(i));
    let h = g.add_bias(pre, b1)?;
    let h = g.relu(h)?;
    let h = mode.dropout(g, h)?;
    let o = g.matmul(h, w2)?;
    let ors = g.add_bias(o, b2)?;
    let block = |g: &mut Graph<'_>, i: usize| g.gather(ors, &(i * m..(i + 1) * m).collect::<Vec<_>>());
    let or_xf = block(g, 0)?;
    let or_xt = block(g, 1)?;
    let or_xx = block(g, 2)?;
    let or_xnx = block(g, 3)?;
    let t_rows = g.gather(anchor, &vec![0; m])?;

    let laws = law_penalties(
        g,
        LawInputs {
            x,
            t: t_rows,
            not_x,
            not_not_x,
            or_x_false: or_xf,
            or_x_true: or_xt,
            or_x_x: or_xx,
            or_x_not_x: or_xnx,
        },
    )?;
    let mut total = laws[0];
    for &l in &laws[1..] {
        total = g.add(total, l)?;
    }
    Ok(LogicLoss { total, laws })
}

/// Module outputs the laws are scored on, all `[m, d]`; `t` is the truth
/// anchor repeated per row.
pub struct LawInputs {
    pub x: Var,
    pub t: Var,
    pub not_x: Var,
    pub not_not_x: Var,
    pub or_x_false: Var,
    pub or_x_true: Var,
    pub or_x_x: Var,
    pub or_x_not_x: Var,
}

/// The six penalties in [`Law::ALL`] order.
pub fn law_penalties(g: &mut Graph<'_>, v: LawInputs) -> Result<[Var; 6]> {
    let pairs = [
        (v.not_x, v.x, 1.0),
        (v.not_not_x, v.x, -1.0),
        (v.or_x_false, v.x, -1.0),
        (v.or_x_true, v.t, -1.0),
        (v.or_x_x, v.x, -1.0),
        (v.or_x_not_x, v.t, -1.0),
    ];
    let mut out = Vec::with_capacity(6);
    for (a, b, sign) in pairs {
        let sim = g.cosine_rows(a, b)?;
        let s = g.scale(sim, sign)?;
        let s = g.add_scalar(s, 1.0)?;
        out.push(g.mean(s)?);
    }
    Ok(out.try_into().expect("six laws"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{adam_step, seeded_rng, AdamState, Tensor};
    use crate::model::{logic_or, Variant, VariantConfig};
    use crate::testutil::random_tensor;

    fn params(d: usize, std: f64, seed: u64) -> ModelParams {
        ModelParams::init_with_std(&VariantConfig::new(Variant::Tisancr, d), 2, 2, 2, seed, std)
            .unwrap()
    }

    #[test]
    fn exact_laws_give_zero_penalty() {
        let mut g = Graph::new();
        let xt = random_tensor(&[3, 4], 1);
        let neg: Vec<f64> = xt.data().iter().map(|v| -v).collect();
        let x = g.constant(xt.clone());
        let nx = g.constant(Tensor::matrix(3, 4, neg).unwrap());
        let t = g.constant(random_tensor(&[3, 4], 2));
        let other = g.constant(random_tensor(&[3, 4], 3));
        let laws = law_penalties(
            &mut g,
            LawInputs {
                x,
                t,
                not_x: nx,
                not_not_x: x,
                or_x_false: other,
                or_x_true: other,
                or_x_x: x,
                or_x_not_x: other,
            },
        )
        .unwrap();
        for i in [0, 1, 4] {
            assert!(g.scalar(laws[i]).abs() < 1e-15, "{:?}", Law::ALL[i]);
        }
        for l in laws {
            assert!((0.0..=2.0).contains(&g.scalar(l)));
        }
    }

    #[test]
    fn fused_computation_matches_module_composition() {
        let p = params(5, 0.4, 3);
        let xs = random_tensor(&[4, 5], 4);
        let mut g = Graph::with_params(&p.store);
        let v = g.constant(xs.clone());
        let got = logic_regularizer_loss(&mut g, &p, v, &mut Mode::Eval).unwrap();

        let mut h = Graph::with_params(&p.store);
        let m = &mut Mode::Eval;
        let anchor = h.param(p.ids.anchor);
        let t1 = h.gather(anchor, &[0]).unwrap();
        let f1 = logic_not(&mut h, &p, t1, m).unwrap();
        let v = h.constant(xs);
        let x = h.vstack(&[v, t1, f1]).unwrap();
        let t = h.gather(anchor, &[0; 6]).unwrap();
        let f = h.gather(f1, &[0; 6]).unwrap();
        let not_x = logic_not(&mut h, &p, x, m).unwrap();
        let not_not_x = logic_not(&mut h, &p, not_x, m).unwrap();
        let inputs = LawInputs {
            x,
            t,
            not_x,
            not_not_x,
            or_x_false: logic_or(&mut h, &p, x, f, m).unwrap(),
            or_x_true: logic_or(&mut h, &p, x, t, m).unwrap(),
            or_x_x: logic_or(&mut h, &p, x, x, m).unwrap(),
            or_x_not_x: logic_or(&mut h, &p, x, not_x, m).unwrap(),
        };
        let want = law_penalties(&mut h, inputs).unwrap();
        for (a, b) in got.laws.iter().zip(&want) {
            assert!((g.scalar(*a) - h.scalar(*b)).abs() < 1e-13);
        }
        let sum: f64 = want.iter().map(|w| h.scalar(*w)).sum();
        assert!((g.scalar(got.total) - sum).abs() < 1e-13);
    }

    #[test]
    fn random_modules_violate_the_laws() {
        let p = params(64, 0.01, 5);
        let mut g = Graph::with_params(&p.store);
        let mut rng = seeded_rng(6);
        let x = g.input(crate::autodiff::gaussian_init(&[128, 64], 1.0, &mut rng).unwrap());
        let loss = logic_regularizer_loss(&mut g, &p, x, &mut Mode::Eval).unwrap();
        assert!(g.scalar(loss.total) > 0.0);
        for l in loss.laws {
            assert!((0.0..=2.0).contains(&g.scalar(l)));
        }
        let grads = g.backward(loss.total).unwrap();
        for id in [p.ids.not_w1, p.ids.not_w2, p.ids.or_w1, p.ids.or_w2, p.ids.or_b2] {
            assert!(grads.param(id).unwrap().iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn rejects_empty_or_misshaped_input() {
        let p = params(4, 0.1, 7);
        let mut g = Graph::with_params(&p.store);
        let x = g.constant(random_tensor(&[2, 3], 1));
        assert!(logic_regularizer_loss(&mut g, &p, x, &mut Mode::Eval).is_err());
    }

    #[test]
    fn training_on_negation_makes_not_anti_aligned() {
        let d = 8;
        let mut p = params(d, 0.3, 8);
        let mut rng = seeded_rng(9);
        let train = crate::autodiff::gaussian_init(&[64, d], 1.0, &mut rng).unwrap();
        let held_out = crate::autodiff::gaussian_init(&[64, d], 1.0, &mut rng).unwrap();
        let negation = |p: &ModelParams, xs: &Tensor| {
            let mut g = Graph::with_params(&p.store);
            let x = g.constant(xs.clone());
            let n = logic_not(&mut g, p, x, &mut Mode::Eval).unwrap();
            let c = g.cosine_rows(n, x).unwrap();
            let c = g.mean(c).unwrap();
            (g.scalar(c), g.backward(c).unwrap())
        };
        let (before, _) = negation(&p, &held_out);
        let mut adam = AdamState::new(&p.store, 1e-2);
        for _ in 0..300 {
            let (_, grads) = negation(&p, &train);
            p.store.zero_grad();
            for id in p.store.trainable().collect::<Vec<_>>() {
                if grads.param(id).is_none() {
                    let n = p.store.get(id).numel();
                    p.store.get_mut(id).accumulate_grad(&vec![0.0; n]).unwrap();
                }
            }
            p.store.accumulate(&grads).unwrap();
            adam_step(&mut p.store, &mut adam).unwrap();
        }
        let (after, _) = negation(&p, &held_out);
        assert!(after < 0.0, "mean Sim(NOT x, x): {before} -> {after}");
    }
}
