use rand::seq::SliceRandom;

use crate::autodiff::{Graph, SeededRng, Var};
use crate::data::Polarity;
use crate::error::{Error, Result};
use crate::model::{ModelParams, TimeMode, VariantConfig};

/// Inference or training behaviour for one forward pass.
pub enum Mode<'r> {
    /// No dropout, chronological aggregation order.
    Eval,
    /// Dropout on every hidden layer and a random aggregation order per
    /// history, both drawn from `rng`.
    Train { dropout: f64, rng: &'r mut SeededRng },
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    pub fn dropout(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { dropout, rng } => g.dropout(x, *dropout, true, &mut **rng),
        }
    }

    /// Order in which `r` history events are folded into the expression.
    pub fn order(&mut self, r: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..r).collect();
        if let Mode::Train { rng, .. } = self {
            order.shuffle(&mut **rng);
        }
        order
    }
}

/// Rows of an embedding table, `[indices.len(), d]`.
pub fn embed_lookup(g: &mut Graph<'_>, table: Var, indices: &[usize]) -> Result<Var> {
    g.gather(table, indices)
}

/// `τ_i = E_t[t_x] − E_t[t_i]` for every history bucket.
pub fn relative_time_embeddings(
    g: &mut Graph<'_>,
    params: &ModelParams,
    t_hist: &[usize],
    t_x: usize,
) -> Result<Var> {
    if t_hist.is_empty() {
        return Err(Error::Empty("history"));
    }
    let table = g.param(params.ids.time_emb);
    let now = g.gather(table, &vec![t_x; t_hist.len()])?;
    let then = g.gather(table, t_hist)?;
    g.sub(now, then)
}

/// Output of [`self_attention`].
pub struct Attention {
    pub output: Var,
    pub weights: Var,
}

/// Single-head scaled dot-product attention applied independently to blocks
/// of `group` rows of `tau`. Block `b` attends over its first `lens[b]`
/// rows only; weights on the remaining (padding) keys are exactly zero.
pub fn self_attention(
    g: &mut Graph<'_>,
    params: &ModelParams,
    tau: Var,
    group: usize,
    lens: &[usize],
) -> Result<Attention> {
    if group == 0 || g.shape(tau)[0] != group * lens.len() {
        return Err(Error::shape(
            "self_attention",
            format!("{:?} rows for {} blocks of {}", g.shape(tau), lens.len(), group),
        ));
    }
    let ids = &params.ids;
    let (wq, wk, wv) = (g.param(ids.w_query), g.param(ids.w_key), g.param(ids.w_value));
    let q = g.matmul(tau, wq)?;
    let k = g.matmul(tau, wk)?;
    let v = g.matmul(tau, wv)?;
    let raw = g.group_scores(q, k, group)?;
    let alpha = g.scale(raw, 1.0 / (params.d as f64).sqrt())?;
    let row_lens: Vec<usize> = lens.iter().flat_map(|&l| std::iter::repeat_n(l, group)).collect();
    let weights = g.softmax_rows(alpha, &row_lens)?;
    let output = g.group_mix(weights, v, group)?;
    Ok(Attention { output, weights })
}

/// `e = relu((u ⊛ v)·W1 + b1)·W2 + b2`, row-wise, with dropout on the hidden
/// layer in training mode.
pub fn encode_event(
    g: &mut Graph<'_>,
    params: &ModelParams,
    user: Var,
    item: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let ids = &params.ids;
    let x = g.concat(user, item)?;
    let w = [ids.enc_w1, ids.enc_b1, ids.enc_w2, ids.enc_b2].map(|i| g.param(i));
    two_layer(g, x, w, mode)
}

pub(crate) fn two_layer(g: &mut Graph<'_>, x: Var, w: [Var; 4], mode: &mut Mode<'_>) -> Result<Var> {
    let h = g.matmul(x, w[0])?;
    let h = g.add_bias(h, w[1])?;
    let h = g.relu(h)?;
    let h = mode.dropout(g, h)?;
    let o = g.matmul(h, w[2])?;
    g.add_bias(o, w[3])
}

/// Adds the time signal to history event vectors: the attention output or
/// the relative embeddings (relative mode), the absolute bucket embeddings
/// (absolute mode) or nothing. Candidate events never go through this.
pub fn fuse_temporal(
    g: &mut Graph<'_>,
    config: &VariantConfig,
    events: Var,
    time: Option<Var>,
) -> Result<Var> {
    match (config.time_mode, time) {
        (TimeMode::None, _) | (_, None) => Ok(events),
        (_, Some(t)) => g.add(events, t),
    }
}

/// Two-layer NOT module, `d → d → d`, row-wise.
pub fn logic_not(g: &mut Graph<'_>, params: &ModelParams, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
    let ids = &params.ids;
    let w = [ids.not_w1, ids.not_b1, ids.not_w2, ids.not_b2].map(|i| g.param(i));
    two_layer(g, x, w, mode)
}

/// Two-layer OR module on `a ⊛ b`, `2d → d → d`, row-wise. Not symmetric in
/// its operands.
pub fn logic_or(
    g: &mut Graph<'_>,
    params: &ModelParams,
    a: Var,
    b: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let ids = &params.ids;
    let x = g.concat(a, b)?;
    let w = [ids.or_w1, ids.or_b1, ids.or_w2, ids.or_b2].map(|i| g.param(i));
    two_layer(g, x, w, mode)
}

/// Folds history events into the candidate event:
/// `Exp ← OR(Exp, NOT(e_i))`, or `OR(Exp, NOT(NOT(e_i)))` for a negative
/// event, visiting events in `order`. `events` is `[r, d]` (absent when
/// `r = 0`) and `candidate` is `[1, d]`.
pub fn lnn_expression(
    g: &mut Graph<'_>,
    params: &ModelParams,
    events: Option<Var>,
    polarities: &[Polarity],
    candidate: Var,
    order: &[usize],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let r = polarities.len();
    check_permutation(order, r)?;
    let mut exp = candidate;
    let Some(events) = events else {
        if r == 0 {
            return Ok(exp);
        }
        return Err(Error::shape("lnn_expression", format!("{r} polarities, no events")));
    };
    if g.shape(events)[0] != r {
        return Err(Error::shape(
            "lnn_expression",
            format!("{:?} events for {} polarities", g.shape(events), r),
        ));
    }
    for &i in order {
        let e = g.gather(events, &[i])?;
        let mut operand = logic_not(g, params, e, mode)?;
        if polarities[i] == Polarity::Negative {
            operand = logic_not(g, params, operand, mode)?;
        }
        exp = logic_or(g, params, exp, operand, mode)?;
    }
    Ok(exp)
}

pub(crate) fn check_permutation(order: &[usize], r: usize) -> Result<()> {
    let mut seen = vec![false; r];
    let ok = order.len() == r
        && order.iter().all(|&i| i < r && !std::mem::replace(&mut seen[i], true));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "order {order:?} is not a permutation of 0..{r}"
        )))
    }
}

/// Cosine similarity of each expression row with the truth anchor, `[n]`.
pub fn truth_score(g: &mut Graph<'_>, params: &ModelParams, exp: Var) -> Result<Var> {
    let anchor = g.param(params.ids.anchor);
    let n = g.shape(exp)[0];
    let tiled = g.gather(anchor, &vec![0; n])?;
    g.cosine_rows(exp, tiled)
}
