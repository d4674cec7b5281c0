use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::data::Transition;
use crate::error::{Error, Result};
use crate::model::{ForwardPass, Model, ParamId, Parameters, QueryContext, UserRef};

/// A training example: the previous check-in, the query time and the POI
/// actually visited next.
pub type TrainInstance = Transition;

/// Gradient rows keyed by tensor and row. Vectors are a single row 0. A row
/// present in the set counts as touched, even if it is all zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    rows: BTreeMap<(ParamId, usize), Array1<f64>>,
}

impl GradientSet {
    pub fn new() -> Self {
        GradientSet::default()
    }

    /// Adds `scale * v` to row `row` of tensor `id`.
    pub fn add(&mut self, id: ParamId, row: usize, scale: f64, v: ArrayView1<f64>) {
        self.rows
            .entry((id, row))
            .and_modify(|g| g.scaled_add(scale, &v))
            .or_insert_with(|| v.to_owned() * scale);
    }

    /// Adds every row of `m` to tensor `id`.
    pub fn add_matrix(&mut self, id: ParamId, scale: f64, m: &Array2<f64>) {
        for (r, row) in m.axis_iter(Axis(0)).enumerate() {
            self.add(id, r, scale, row);
        }
    }

    pub fn row(&self, id: ParamId, row: usize) -> Option<&Array1<f64>> {
        self.rows.get(&(id, row))
    }

    pub fn touched(&self) -> impl Iterator<Item = (ParamId, usize, &Array1<f64>)> {
        self.rows.iter().map(|(&(id, r), g)| (id, r, g))
    }

    pub fn is_touched(&self, id: ParamId) -> bool {
        self.rows.range((id, 0)..=(id, usize::MAX)).next().is_some()
    }

    /// Gradient with respect to coordinate `index` of the row-major flattening
    /// of tensor `id`; zero when untouched.
    pub fn coord(&self, params: &Parameters, id: ParamId, index: usize) -> f64 {
        let cols = params.shape(id).1;
        self.row(id, index / cols).map_or(0.0, |g| g[index % cols])
    }

    /// The gradient of tensor `id` as a dense matrix shaped like the tensor.
    pub fn dense(&self, params: &Parameters, id: ParamId) -> Array2<f64> {
        let mut out = Array2::zeros(params.shape(id));
        for ((_, r), g) in self.rows.range((id, 0)..=(id, usize::MAX)) {
            out.row_mut(*r).assign(g);
        }
        out
    }
}

fn relu_mask(z: &Array1<f64>, upstream: &Array1<f64>) -> Array1<f64> {
    let mut out = upstream.clone();
    out.zip_mut_with(z, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    out
}

/// `logsumexp(y) - y_target`.
fn neg_log_softmax(scores: &Array1<f64>, target: usize) -> f64 {
    let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + scores.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - scores[target]
}

fn check_target(inst_target: usize, model: &Model) -> Result<()> {
    if inst_target >= model.num_pois() {
        return Err(Error::Data(format!("unknown target poi id {inst_target}")));
    }
    Ok(())
}

/// Negative log-likelihood of the target POI, without the regularizer.
pub fn instance_loss(inst: &TrainInstance, model: &Model) -> Result<f64> {
    check_target(inst.target, model)?;
    let f = ForwardPass::run(&QueryContext::from_transition(inst), model)?;
    Ok(neg_log_softmax(&f.scores, inst.target))
}

/// `lambda * ||theta||^2` over all parameters.
pub fn regularizer(params: &Parameters, lambda: f64) -> f64 {
    lambda * params.squared_norm()
}

/// Spreads the gradient of a mixed input `w * e + (1 - w) * mean(meta rows)`
/// back onto the embedding row and the meta rows.
fn push_mixed(
    g: &mut GradientSet,
    model: &Model,
    w: f64,
    emb: Option<(ParamId, usize)>,
    meta_id: ParamId,
    meta: &[usize],
    upstream: ArrayView1<f64>,
) {
    let meta_on = model.hp.use_meta && (w != 1.0 || emb.is_none());
    if let Some((id, row)) = emb {
        g.add(id, row, if meta_on { w } else { 1.0 }, upstream);
    }
    if meta_on && !meta.is_empty() {
        let share = (if emb.is_some() { 1.0 - w } else { 1.0 }) / meta.len() as f64;
        for &m in meta {
            g.add(meta_id, m, share, upstream);
        }
    }
}

/// Loss and exact gradient of the data term for one instance. The ReLU
/// derivative at 0 is taken as 0.
pub fn instance_gradients(inst: &TrainInstance, model: &Model) -> Result<(f64, GradientSet)> {
    check_target(inst.target, model)?;
    let ctx = QueryContext::from_transition(inst);
    let f = ForwardPass::run(&ctx, model)?;
    Ok((neg_log_softmax(&f.scores, inst.target), backward(&ctx, &f, inst.target, model)))
}

pub(crate) fn backward(ctx: &QueryContext, f: &ForwardPass, target: usize, model: &Model) -> GradientSet {
    let p = &model.params;
    let hp = &model.hp;
    let mut g = GradientSet::new();

    // d loss / d scores = softmax - onehot
    let mut dy = f.probs();
    dy[target] -= 1.0;
    let s = &f.h_u + &f.h_q;
    let ds = f.c.t().dot(&dy);

    // candidate side
    let mut dz_c = Array2::from_shape_fn(f.c.raw_dim(), |(l, i)| dy[l] * s[i]);
    dz_c.zip_mut_with(&f.z_c, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    g.add_matrix(ParamId::W3, 1.0, &dz_c.t().dot(&f.x_c));
    g.add(ParamId::B3, 0, 1.0, dz_c.sum_axis(Axis(0)).view());
    let dx_c = dz_c.dot(&p.w3);
    for (l, row) in dx_c.axis_iter(Axis(0)).enumerate() {
        push_mixed(&mut g, model, hp.alpha, Some((ParamId::PoiEmb, l)), ParamId::PoiMetaEmb, &model.meta.poi_words[l], row);
    }

    // previous-POI side
    let dz_q = relu_mask(&f.z_q, &ds);
    let dw = outer(&dz_q, &f.x_q);
    match f.interval {
        Some((a, b)) => {
            g.add_matrix(ParamId::W0, a, &dw);
            g.add_matrix(ParamId::WPi, b, &dw);
        }
        None => g.add_matrix(ParamId::W1, 1.0, &dw),
    }
    match f.slot {
        Some(slot) => g.add(ParamId::SlotBias, slot, 1.0, dz_q.view()),
        None => g.add(ParamId::B1, 0, 1.0, dz_q.view()),
    }
    let dx_q = f.transition.t().dot(&dz_q);
    let prev = ctx.prev_poi;
    push_mixed(&mut g, model, hp.alpha, Some((ParamId::PoiEmb, prev)), ParamId::PoiMetaEmb, &model.meta.poi_words[prev], dx_q.view());

    // user side
    if let (Some(x_u), Some(z_u)) = (&f.x_u, &f.z_u) {
        let dz_u = relu_mask(z_u, &ds);
        g.add_matrix(ParamId::W2, 1.0, &outer(&dz_u, x_u));
        g.add(ParamId::B2, 0, 1.0, dz_u.view());
        let dx_u = p.w2.t().dot(&dz_u);
        match &ctx.user {
            UserRef::Known(u) => push_mixed(
                &mut g,
                model,
                hp.beta,
                Some((ParamId::UserEmb, *u)),
                ParamId::UserMetaEmb,
                &model.meta.user_items[*u],
                dx_u.view(),
            ),
            UserRef::Cold(items) => {
                push_mixed(&mut g, model, 0.0, None, ParamId::UserMetaEmb, items, dx_u.view())
            }
            UserRef::Anonymous => {}
        }
    }
    g
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// `theta <- theta - lr * (g + 2 * lambda * theta)` on every touched row.
pub fn sgd_step(params: &mut Parameters, grads: &GradientSet, lr: f64, lambda: f64) {
    for (id, row, g) in grads.touched() {
        let cols = params.shape(id).1;
        let theta = &mut params.coords_mut(id)[row * cols..(row + 1) * cols];
        for (t, &gv) in theta.iter_mut().zip(g) {
            *t -= lr * (gv + 2.0 * lambda * *t);
        }
    }
}
