//! Ranking metrics, the chronological test protocol, the cold-start-user
//! protocol and per-dimension keyword tables.

mod interpret;

use std::collections::HashMap;
use std::fmt::Write as _;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{CheckIn, Dataset, Segment, Split};
use crate::error::{Error, Result};
use crate::model::{candidate_intents, rank_of, scores, Model, QueryContext, UserRef, Vocab};

pub use interpret::{all_dimension_keywords, dimension_keywords, dims_text, word_contribution};

/// Fraction of ranks at most `k`.
pub fn acc_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    if ranks.is_empty() {
        return Err(Error::Data("no evaluation instances".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean of `1 / rank`: with a single relevant POI per instance, average
/// precision is the reciprocal rank.
pub fn mean_average_precision(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Data("no evaluation instances".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// One scored query with the rank of its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub user: String,
    pub prev_poi: usize,
    pub prev_time: i64,
    pub time: i64,
    pub target: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub map: f64,
    pub instances: Vec<EvalInstance>,
}

impl EvalReport {
    pub fn from_instances(instances: Vec<EvalInstance>) -> Result<EvalReport> {
        let ranks: Vec<usize> = instances.iter().map(|i| i.rank).collect();
        Ok(EvalReport {
            acc1: acc_at_k(&ranks, 1)?,
            acc5: acc_at_k(&ranks, 5)?,
            acc10: acc_at_k(&ranks, 10)?,
            map: mean_average_precision(&ranks)?,
            instances,
        })
    }

    pub fn count(&self) -> usize {
        self.instances.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.rank).collect()
    }

    /// `report.tsv`: metric, value, instance count.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\tinstances\n");
        for (name, v) in [("acc@1", self.acc1), ("acc@5", self.acc5), ("acc@10", self.acc10), ("map", self.map)] {
            let _ = writeln!(out, "{name}\t{v}\t{}", self.count());
        }
        out
    }

    /// `ranks.tsv`: one line per instance with its context ids.
    pub fn ranks_tsv(&self, vocab: &Vocab) -> String {
        let mut out = String::from("user\tprev_poi\tprev_time\ttime\ttarget\trank\n");
        for i in &self.instances {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                i.user, vocab.pois[i.prev_poi], i.prev_time, i.time, vocab.pois[i.target], i.rank
            );
        }
        out
    }
}

/// A query, its ground truth and a label for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub label: String,
    pub ctx: QueryContext,
    pub target: usize,
}

/// Ranks every query's target over the full POI vocabulary. Instances are
/// scored in parallel; the result does not depend on scheduling.
pub fn evaluate_queries(model: &Model, queries: &[LabeledQuery]) -> Result<EvalReport> {
    let candidates = candidate_intents(model);
    let instances = queries
        .par_iter()
        .map(|q| {
            if q.target >= model.num_pois() {
                return Err(Error::Data(format!("unknown target poi id {}", q.target)));
            }
            let s = scores(&q.ctx, model, &candidates)?;
            Ok(EvalInstance {
                user: q.label.clone(),
                prev_poi: q.ctx.prev_poi,
                prev_time: q.ctx.prev_time,
                time: q.ctx.time,
                target: q.target,
                rank: rank_of(&s, q.target),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_instances(instances)
}

/// Evaluates every check-in of a validation or test segment.
pub fn evaluate(model: &Model, ds: &Dataset, split: &Split, segment: Segment) -> Result<EvalReport> {
    let queries: Vec<LabeledQuery> = split
        .transitions(ds, segment)
        .iter()
        .map(|t| LabeledQuery {
            label: ds.users[t.user].user_id.clone(),
            ctx: QueryContext::from_transition(t),
            target: t.target,
        })
        .collect();
    if queries.is_empty() {
        return Err(Error::Data(format!("segment {segment:?} has no instances")));
    }
    evaluate_queries(model, &queries)
}

/// A user removed from training, with their raw history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldOutUser {
    pub user_id: String,
    pub meta_items: Vec<String>,
    /// `(poi id, timestamp)` in chronological order.
    pub checkins: Vec<(String, i64)>,
}

/// Groups raw check-ins by user, sorted by user id then timestamp.
pub fn held_out_users(checkins: &[CheckIn], meta: &HashMap<String, Vec<String>>) -> Vec<HeldOutUser> {
    let mut by_user: std::collections::BTreeMap<&str, Vec<(String, i64)>> = Default::default();
    for c in checkins {
        by_user
            .entry(c.user_id.as_str())
            .or_default()
            .push((c.poi_id.clone(), c.timestamp));
    }
    by_user
        .into_iter()
        .map(|(u, mut seq)| {
            seq.sort_by_key(|&(_, t)| t);
            HeldOutUser {
                user_id: u.to_string(),
                meta_items: meta.get(u).cloned().unwrap_or_default(),
                checkins: seq,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartReport {
    pub report: EvalReport,
    /// Users without a transition between two known POIs.
    pub skipped: usize,
    /// Users scored from meta items; the rest used the POI intent alone.
    pub with_meta: usize,
    /// Meta items dropped because the model has never seen them.
    pub dropped_meta_items: usize,
}

/// For each held-out user, one seeded random transition whose two POIs are
/// both in the model's vocabulary. The user intent comes from the user's
/// known meta items with beta = 0, or is omitted when there are none.
pub fn cold_start_eval(
    model: &Model,
    vocab: &Vocab,
    users: &[HeldOutUser],
    seed: u64,
) -> Result<ColdStartReport> {
    let poi_index: HashMap<&str, usize> = vocab.pois.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let item_index: HashMap<&str, usize> = vocab.items.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let user_index: HashMap<&str, usize> = vocab.users.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let mut queries = Vec::new();
    let (mut skipped, mut with_meta, mut dropped) = (0, 0, 0);
    for (k, u) in users.iter().enumerate() {
        if user_index.contains_key(u.user_id.as_str()) {
            return Err(Error::Data(format!("held-out user {} is part of the trained model", u.user_id)));
        }
        let qualifying: Vec<usize> = (1..u.checkins.len())
            .filter(|&i| {
                poi_index.contains_key(u.checkins[i - 1].0.as_str())
                    && poi_index.contains_key(u.checkins[i].0.as_str())
            })
            .collect();
        if qualifying.is_empty() {
            skipped += 1;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let i = qualifying[rng.random_range(0..qualifying.len())];

        let mut items = Vec::new();
        for m in &u.meta_items {
            match item_index.get(m.as_str()) {
                Some(&id) => items.push(id),
                None => {
                    warn!("held-out user {}: unknown meta item {m:?} dropped", u.user_id);
                    dropped += 1;
                }
            }
        }
        items.sort_unstable();
        items.dedup();
        let user = if items.is_empty() || !model.hp.use_meta {
            UserRef::Anonymous
        } else {
            with_meta += 1;
            UserRef::Cold(items)
        };
        let (prev, cur) = (&u.checkins[i - 1], &u.checkins[i]);
        queries.push(LabeledQuery {
            label: u.user_id.clone(),
            ctx: QueryContext {
                user,
                prev_poi: poi_index[prev.0.as_str()],
                prev_time: prev.1,
                time: cur.1,
            },
            target: poi_index[cur.0.as_str()],
        });
    }
    if queries.is_empty() {
        return Err(Error::Data("no held-out user has a qualifying transition".into()));
    }
    Ok(ColdStartReport {
        report: evaluate_queries(model, &queries)?,
        skipped,
        with_meta,
        dropped_meta_items: dropped,
    })
}
