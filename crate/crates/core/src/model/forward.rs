use crate::autodiff::{Graph, Var};
use crate::data::{Polarity, ReasoningSample};
use crate::error::{Error, Result};
use crate::model::layers::{encode_event, logic_not, self_attention, truth_score, Mode};
use crate::model::{ModelParams, TimeMode, VariantConfig};

pub struct ForwardOutput {
    /// One score per (sample, candidate) pair, samples in input order and
    /// candidates in the order given for each sample.
    pub scores: Var,
    /// Every vector the expressions visit: fused history events, their
    /// negations, candidate events and each intermediate `Exp`.
    pub logic_vectors: Var,
    /// Attention weights, `[blocks * group, group]`, when attention is on and
    /// some history is non-empty.
    pub attention: Option<Var>,
}

/// Scores every candidate of every sample in one graph. All candidates of a
/// sample share its history, its time bucket and its aggregation order.
pub fn forward_batch<C: AsRef<[usize]>>(
    g: &mut Graph<'_>,
    params: &ModelParams,
    config: &VariantConfig,
    samples: &[&ReasoningSample],
    candidates: &[C],
    mode: &mut Mode<'_>,
) -> Result<ForwardOutput> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    if candidates.len() != samples.len() {
        return Err(Error::shape(
            "forward_batch",
            format!("{} candidate lists for {} samples", candidates.len(), samples.len()),
        ));
    }
    if candidates.iter().any(|c| c.as_ref().is_empty()) {
        return Err(Error::Empty("candidate list"));
    }
    let ids = &params.ids;

    // Flattened history rows followed by one row per query.
    let mut hist_offset = Vec::with_capacity(samples.len());
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut buckets = Vec::new();
    let mut now = Vec::new();
    for s in samples {
        hist_offset.push(users.len());
        for h in &s.history {
            users.push(s.user);
            items.push(h.item);
            buckets.push(h.bucket);
            now.push(s.candidate_time);
        }
    }
    let n_hist = users.len();
    let mut query_sample = Vec::new();
    for (b, (s, c)) in samples.iter().zip(candidates).enumerate() {
        for &item in c.as_ref() {
            query_sample.push(b);
            users.push(s.user);
            items.push(item);
        }
    }
    let n_query = query_sample.len();

    let eu = g.param(ids.user_emb);
    let ev = g.param(ids.item_emb);
    let u = g.gather(eu, &users)?;
    let v = g.gather(ev, &items)?;
    let encoded = encode_event(g, params, u, v, mode)?;
    let cand: Vec<usize> = (n_hist..n_hist + n_query).collect();
    let cand_events = g.gather(encoded, &cand)?;
    let mut exp = cand_events;
    let mut logic_parts = Vec::new();
    let mut attention = None;

    if n_hist > 0 {
        let rows: Vec<usize> = (0..n_hist).collect();
        let mut hist = g.gather(encoded, &rows)?;
        let time = match config.time_mode {
            TimeMode::None => None,
            TimeMode::Absolute => {
                let et = g.param(ids.time_emb);
                Some(g.gather(et, &buckets)?)
            }
            TimeMode::Relative if !config.attention => {
                let et = g.param(ids.time_emb);
                let a = g.gather(et, &now)?;
                let b = g.gather(et, &buckets)?;
                Some(g.sub(a, b)?)
            }
            TimeMode::Relative => {
                let (l, w) = attend(g, params, samples)?;
                attention = Some(w);
                Some(l)
            }
        };
        if let Some(t) = time {
            hist = g.add(hist, t)?;
        }
        logic_parts.push(hist);

        // Operand table: NOT(e) for every event, then NOT(NOT(e)) for the
        // negative ones.
        let not1 = logic_not(g, params, hist, mode)?;
        logic_parts.push(not1);
        let negatives: Vec<usize> = samples
            .iter()
            .flat_map(|s| s.history.iter())
            .enumerate()
            .filter(|(_, h)| h.polarity == Polarity::Negative)
            .map(|(i, _)| i)
            .collect();
        let mut operand_row: Vec<usize> = (0..n_hist).collect();
        let operands = if negatives.is_empty() {
            not1
        } else {
            let sel = g.gather(not1, &negatives)?;
            let not2 = logic_not(g, params, sel, mode)?;
            logic_parts.push(not2);
            for (k, &i) in negatives.iter().enumerate() {
                operand_row[i] = n_hist + k;
            }
            g.vstack(&[not1, not2])?
        };

        // The OR first layer is split as Exp·W1a + op·W1b so the operand half
        // is projected once per history event rather than once per query.
        let d = params.d;
        let or_w1 = g.param(ids.or_w1);
        let w1a = g.gather(or_w1, &(0..d).collect::<Vec<_>>())?;
        let w1b = g.gather(or_w1, &(d..2 * d).collect::<Vec<_>>())?;
        let projected = g.matmul(operands, w1b)?;
        let [b1, w2, b2] = [ids.or_b1, ids.or_w2, ids.or_b2].map(|i| g.param(i));

        let orders: Vec<Vec<usize>> = samples.iter().map(|s| mode.order(s.history.len())).collect();
        let max_r = samples.iter().map(|s| s.history.len()).max().unwrap_or(0);
        for step in 0..max_r {
            let active: Vec<usize> = (0..n_query)
                .filter(|&q| samples[query_sample[q]].history.len() > step)
                .collect();
            let op_rows: Vec<usize> = active
                .iter()
                .map(|&q| {
                    let b = query_sample[q];
                    operand_row[hist_offset[b] + orders[b][step]]
                })
                .collect();
            let cur = if active.len() == n_query { exp } else { g.gather(exp, &active)? };
            let op = g.gather(projected, &op_rows)?;
            let h = g.matmul(cur, w1a)?;
            let h = g.add(h, op)?;
            let h = g.add_bias(h, b1)?;
            let h = g.relu(h)?;
            let h = mode.dropout(g, h)?;
            let o = g.matmul(h, w2)?;
            let next = g.add_bias(o, b2)?;
            logic_parts.push(next);
            exp = if active.len() == n_query {
                next
            } else {
                // Scatter back: active rows from `next`, the rest unchanged.
                let stacked = g.vstack(&[next, exp])?;
                let mut pos = vec![None; n_query];
                for (k, &q) in active.iter().enumerate() {
                    pos[q] = Some(k);
                }
                let idx: Vec<usize> = (0..n_query)
                    .map(|q| pos[q].unwrap_or(active.len() + q))
                    .collect();
                g.gather(stacked, &idx)?
            };
        }
    }
    // Candidate events enter the regularizer unfused, as they are used.
    logic_parts.insert(0, cand_events);
    let logic_vectors = g.vstack(&logic_parts)?;
    let scores = truth_score(g, params, exp)?;
    Ok(ForwardOutput {
        scores,
        logic_vectors,
        attention,
    })
}

/// Attention over each sample's relative times, padded to the longest
/// history. Padding rows use the current bucket (τ = 0) and are masked out
/// as keys; their outputs are dropped.
fn attend(
    g: &mut Graph<'_>,
    params: &ModelParams,
    samples: &[&ReasoningSample],
) -> Result<(Var, Var)> {
    let group = samples.iter().map(|s| s.history.len()).max().unwrap_or(0);
    let mut now = Vec::new();
    let mut then = Vec::new();
    let mut lens = Vec::new();
    let mut keep = Vec::new();
    for s in samples.iter().filter(|s| !s.history.is_empty()) {
        let base = lens.len() * group;
        lens.push(s.history.len());
        for i in 0..group {
            now.push(s.candidate_time);
            then.push(s.history.get(i).map_or(s.candidate_time, |h| h.bucket));
            if i < s.history.len() {
                keep.push(base + i);
            }
        }
    }
    let et = g.param(params.ids.time_emb);
    let a = g.gather(et, &now)?;
    let b = g.gather(et, &then)?;
    let tau = g.sub(a, b)?;
    let att = self_attention(g, params, tau, group, &lens)?;
    let out = g.gather(att.output, &keep)?;
    Ok((out, att.weights))
}

/// Score of a single sample's own candidate, shape `[1]`.
pub fn forward_score(
    g: &mut Graph<'_>,
    params: &ModelParams,
    config: &VariantConfig,
    sample: &ReasoningSample,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let out = forward_batch(g, params, config, &[sample], &[[sample.candidate_item]], mode)?;
    Ok(out.scores)
}
