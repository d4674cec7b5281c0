use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::{Model, TIME_SLOTS};
use crate::data::Transition;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

/// Who is asking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserRef {
    /// A user with a trained embedding row.
    Known(usize),
    /// A user without an embedding row, represented by meta item ids only;
    /// the user intent is computed with beta = 0.
    Cold(Vec<usize>),
    /// No user information: the user intent is omitted (zero).
    Anonymous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryContext {
    pub user: UserRef,
    pub prev_poi: usize,
    /// Timestamp of the previous check-in, seconds.
    pub prev_time: i64,
    /// Query timestamp, seconds.
    pub time: i64,
}

impl QueryContext {
    pub fn from_transition(t: &Transition) -> Self {
        QueryContext {
            user: UserRef::Known(t.user),
            prev_poi: t.prev_poi,
            prev_time: t.prev_time,
            time: t.time,
        }
    }

    /// Time since the previous check-in, in fractional hours.
    pub fn interval_hours(&self) -> f64 {
        (self.time - self.prev_time) as f64 / 3600.0
    }
}

/// The three nonnegative intent vectors behind one score.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentTriple {
    pub h_q: Array1<f64>,
    pub h_u: Array1<f64>,
    pub c: Array1<f64>,
}

fn relu(a: Array1<f64>) -> Array1<f64> {
    a.mapv_into(|v| if v > 0.0 { v } else { 0.0 })
}

/// Mean of the listed rows; zero vector for an empty list.
pub fn meta_embed(items: &[usize], table: &EmbeddingTable) -> Array1<f64> {
    let mut acc = Array1::zeros(table.dim());
    if items.is_empty() {
        return acc;
    }
    for &m in items {
        acc += &table.row(m);
    }
    acc / items.len() as f64
}

/// Interpolation coefficients `(w_0, w_pi)` for an interval of `hours`:
/// `((pi - t) / pi, t / pi)` below the threshold, `(0, 1)` from it on.
pub fn interval_weights(hours: f64, pi: f64) -> Result<(f64, f64)> {
    if !(hours >= 0.0) || !hours.is_finite() {
        return Err(Error::Numeric(format!("time interval must be finite and >= 0, got {hours}")));
    }
    if hours >= pi {
        Ok((0.0, 1.0))
    } else {
        Ok(((pi - hours) / pi, hours / pi))
    }
}

/// Interval-dependent transition matrix, linear between `w0` at `t = 0` and
/// `w_pi` at `t = pi`, constant at `w_pi` beyond.
pub fn interval_matrix(hours: f64, w0: &Array2<f64>, w_pi: &Array2<f64>, pi: f64) -> Result<Array2<f64>> {
    let (a, b) = interval_weights(hours, pi)?;
    if b == 0.0 {
        return Ok(w0.clone());
    }
    if a == 0.0 {
        return Ok(w_pi.clone());
    }
    Ok(w0 * a + w_pi * b)
}

/// Hour-of-day slot of a UTC timestamp shifted by `tz_offset_secs`.
pub fn time_slot(timestamp: i64, tz_offset_secs: i64) -> usize {
    ((timestamp + tz_offset_secs).rem_euclid(86_400) / 3_600) as usize % TIME_SLOTS
}

/// Mixes an embedding with its meta embedding: `w * e + (1 - w) * m`. With
/// meta switched off, or `w == 1`, the embedding passes through untouched.
fn mix(model: &Model, w: f64, emb: ArrayView1<f64>, meta: impl FnOnce() -> Array1<f64>) -> Array1<f64> {
    if !model.hp.use_meta || w == 1.0 {
        emb.to_owned()
    } else {
        emb.to_owned() * w + meta() * (1.0 - w)
    }
}

pub(crate) fn poi_input(poi: usize, model: &Model) -> Array1<f64> {
    let p = &model.params;
    mix(model, model.hp.alpha, p.poi_emb.row(poi), || {
        meta_embed(&model.meta.poi_words[poi], &p.poi_meta_emb)
    })
}

/// Input to the user layer, `None` for an anonymous user.
pub(crate) fn user_input(user: &UserRef, model: &Model) -> Result<Option<Array1<f64>>> {
    let p = &model.params;
    match user {
        UserRef::Anonymous => Ok(None),
        &UserRef::Known(u) => {
            if u >= model.num_users() {
                return Err(Error::Data(format!("unknown user id {u}")));
            }
            Ok(Some(mix(model, model.hp.beta, p.user_emb.row(u), || {
                meta_embed(&model.meta.user_items[u], &p.user_meta_emb)
            })))
        }
        UserRef::Cold(items) => {
            if !model.hp.use_meta {
                return Err(Error::Config(
                    "a user without an embedding needs the meta-data model; query anonymously instead"
                        .into(),
                ));
            }
            if items.is_empty() {
                return Err(Error::Data(
                    "user has no embedding and no meta items; use the anonymous (POI-intent only) mode"
                        .into(),
                ));
            }
            if let Some(&bad) = items.iter().find(|&&m| m >= p.user_meta_emb.rows()) {
                return Err(Error::Data(format!("unknown user meta item id {bad}")));
            }
            Ok(Some(meta_embed(items, &p.user_meta_emb)))
        }
    }
}

/// Transition matrix for the POI layer and, when the interval context is on,
/// the interpolation coefficients that produced it.
pub(crate) fn poi_transition(ctx: &QueryContext, model: &Model) -> Result<(Array2<f64>, Option<(f64, f64)>)> {
    let p = &model.params;
    if model.hp.use_interval {
        let hours = ctx.interval_hours();
        let coef = interval_weights(hours, model.hp.interval_hours)?;
        let w = interval_matrix(hours, &p.w0, &p.w_pi, model.hp.interval_hours)?;
        Ok((w, Some(coef)))
    } else {
        Ok((p.w1.clone(), None))
    }
}

/// Bias row for the POI layer and the slot it came from (`None` means `b1`).
pub(crate) fn poi_bias<'a>(ctx: &QueryContext, model: &'a Model) -> (ArrayView1<'a, f64>, Option<usize>) {
    if model.hp.use_timeslot {
        let slot = time_slot(ctx.time, model.hp.tz_offset_secs);
        (model.params.slot_bias.row(slot), Some(slot))
    } else {
        (model.params.b1.view(), None)
    }
}

fn check_poi(poi: usize, model: &Model) -> Result<()> {
    if poi >= model.num_pois() {
        return Err(Error::Data(format!("unknown poi id {poi}")));
    }
    Ok(())
}

/// POI intent `ReLU(W(dt) x + b_slot)` for the previous check-in, with
/// `W1` / `b1` standing in when the interval / slot context is off.
pub fn poi_intent(ctx: &QueryContext, model: &Model) -> Result<Array1<f64>> {
    check_poi(ctx.prev_poi, model)?;
    let x = poi_input(ctx.prev_poi, model);
    let (w, _) = poi_transition(ctx, model)?;
    let (b, _) = poi_bias(ctx, model);
    Ok(relu(w.dot(&x) + b))
}

/// User intent `ReLU(W2 (beta u + (1 - beta) m_u) + b2)`; zero when anonymous.
pub fn user_intent(user: &UserRef, model: &Model) -> Result<Array1<f64>> {
    let p = &model.params;
    Ok(match user_input(user, model)? {
        Some(x) => relu(p.w2.dot(&x) + &p.b2),
        None => Array1::zeros(model.hp.dim),
    })
}

pub(crate) fn candidate_inputs(model: &Model) -> Array2<f64> {
    let p = &model.params;
    let mut x = p.poi_emb.as_array().clone();
    let alpha = model.hp.alpha;
    if model.hp.use_meta && alpha != 1.0 {
        x *= alpha;
        for (l, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(1.0 - alpha, &meta_embed(&model.meta.poi_words[l], &p.poi_meta_emb));
        }
    }
    x
}

/// Candidate intent of a single POI, `ReLU(W3 (alpha q + (1 - alpha) m_q) + b3)`.
pub fn candidate_intent(poi: usize, model: &Model) -> Result<Array1<f64>> {
    check_poi(poi, model)?;
    let x = poi_input(poi, model);
    Ok(relu(model.params.w3.dot(&x) + &model.params.b3))
}

/// Candidate intents of all POIs as rows of one matrix.
pub fn candidate_intents(model: &Model) -> Array2<f64> {
    let x = candidate_inputs(model);
    let mut z = x.dot(&model.params.w3.t());
    z += &model.params.b3;
    z.mapv_into(|v| if v > 0.0 { v } else { 0.0 })
}

/// `(h_u + h_q) . c`.
pub fn score(h_u: &Array1<f64>, h_q: &Array1<f64>, c: &Array1<f64>) -> Result<f64> {
    for v in [h_q, c] {
        if v.len() != h_u.len() {
            return Err(Error::DimMismatch {
                expected: h_u.len(),
                got: v.len(),
            });
        }
    }
    Ok((h_u + h_q).dot(c))
}

/// Scores of all POIs for a query, given precomputed candidate intents.
pub fn scores(ctx: &QueryContext, model: &Model, candidates: &Array2<f64>) -> Result<Array1<f64>> {
    let s = user_intent(&ctx.user, model)? + poi_intent(ctx, model)?;
    Ok(candidates.dot(&s))
}

/// Softmax with the maximum subtracted first.
pub fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = scores.mapv(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

pub fn predict_distribution(ctx: &QueryContext, model: &Model) -> Result<Array1<f64>> {
    Ok(softmax(&scores(ctx, model, &candidate_intents(model))?))
}

/// 1-based rank of `target` when POIs are ordered by descending score with
/// ties going to the lower id.
pub fn rank_of(scores: &Array1<f64>, target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(k, &s)| s > t || (s == t && k < target))
        .count()
}

/// Top-`k` POIs as `(poi, score)`, by descending score, ties by ascending id.
pub fn recommend_topk(ctx: &QueryContext, model: &Model, k: usize) -> Result<Vec<(usize, f64)>> {
    let n = model.num_pois();
    if k < 1 || k > n {
        return Err(Error::Config(format!("K must lie in 1..={n}, got {k}")));
    }
    let s = scores(ctx, model, &candidate_intents(model))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(k).map(|i| (i, s[i])).collect())
}

/// Forward pass with every intermediate kept for back-propagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub x_q: Array1<f64>,
    pub transition: Array2<f64>,
    /// Interpolation coefficients (w_0, w_pi), when the interval context is on.
    pub interval: Option<(f64, f64)>,
    /// Slot whose bias was used, `None` when `b1` was used.
    pub slot: Option<usize>,
    pub z_q: Array1<f64>,
    pub h_q: Array1<f64>,
    pub x_u: Option<Array1<f64>>,
    pub z_u: Option<Array1<f64>>,
    pub h_u: Array1<f64>,
    pub x_c: Array2<f64>,
    pub z_c: Array2<f64>,
    pub c: Array2<f64>,
    pub scores: Array1<f64>,
}

impl ForwardPass {
    pub fn run(ctx: &QueryContext, model: &Model) -> Result<ForwardPass> {
        check_poi(ctx.prev_poi, model)?;
        let p = &model.params;
        let x_q = poi_input(ctx.prev_poi, model);
        let (transition, interval) = poi_transition(ctx, model)?;
        let (bias, slot) = poi_bias(ctx, model);
        let z_q = transition.dot(&x_q) + bias;
        let h_q = relu(z_q.clone());

        let x_u = user_input(&ctx.user, model)?;
        let z_u = x_u.as_ref().map(|x| p.w2.dot(x) + &p.b2);
        let h_u = match &z_u {
            Some(z) => relu(z.clone()),
            None => Array1::zeros(model.hp.dim),
        };

        let x_c = candidate_inputs(model);
        let mut z_c = x_c.dot(&p.w3.t());
        z_c += &p.b3;
        let c = z_c.mapv(|v| if v > 0.0 { v } else { 0.0 });
        let scores = c.dot(&(&h_u + &h_q));
        Ok(ForwardPass {
            x_q,
            transition,
            interval,
            slot,
            z_q,
            h_q,
            x_u,
            z_u,
            h_u,
            x_c,
            z_c,
            c,
            scores,
        })
    }

    pub fn probs(&self) -> Array1<f64> {
        softmax(&self.scores)
    }

    pub fn intents(&self, candidate: usize) -> IntentTriple {
        IntentTriple {
            h_q: self.h_q.clone(),
            h_u: self.h_u.clone(),
            c: self.c.row(candidate).to_owned(),
        }
    }
}
