//! End-to-end stages shared by the command-line tool and the test harnesses.

mod config;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    build_transition_counts, compute_geo_stats, filter_activity, load_checkins, read_checkin_file,
    read_user_file, write_bundle, CorpusPaths, Dataset, DatasetStats, DistanceMode, Segment, Split,
    TransitionGraph,
};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{all_dimension_keywords, cold_start_eval, dims_text, evaluate, held_out_users, EvalReport};
use crate::model::{
    recommend_topk, Hyperparams, MetaSets, Model, ModelArchive, Parameters, QueryContext, UserRef, Vocab,
    VocabSizes,
};
use crate::pretrain::{
    generate_walks, init_user_embeddings, train_skipgram, walk_transition_distribution, SkipGramConfig,
    WalkConfig,
};
use crate::train::{history_tsv, train_with, training_instances, TrainOutcome};

pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub poi_emb: EmbeddingTable,
    pub user_emb: EmbeddingTable,
}

/// Random walks over the training transition graph, SkipGram over the walks,
/// then user embeddings as the mean of their training POIs.
pub fn pretrain(
    ds: &Dataset,
    split: &Split,
    walks: &WalkConfig,
    skipgram: &SkipGramConfig,
    distance: DistanceMode,
    geo_pair_cap: Option<usize>,
) -> Result<Pretrained> {
    let counts = build_transition_counts(ds, split);
    let geo = if walks.rho > 0.0 {
        Some(compute_geo_stats(&ds.pois, distance, geo_pair_cap.map(|c| (c, walks.seed)))?)
    } else {
        None
    };
    let graph = TransitionGraph::new(counts, &ds.pois, distance, geo);
    let corpus = generate_walks(&graph, walks)?;
    info!("{} walks generated", corpus.len());
    let out = train_skipgram(&corpus, ds.num_pois(), skipgram)?;
    if let Some(loss) = out.epoch_losses.last() {
        info!("skipgram final epoch loss {loss:.5}");
    }
    let user_emb = init_user_embeddings(ds, split, &out.embeddings)?;
    Ok(Pretrained {
        poi_emb: out.embeddings,
        user_emb,
    })
}

/// Randomly initialized parameters, with Q and U replaced by pre-trained
/// embeddings when given.
pub fn init_model(ds: &Dataset, hp: &Hyperparams, pretrained: Option<&Pretrained>, seed: u64) -> Result<Model> {
    let sizes = VocabSizes {
        users: ds.num_users(),
        pois: ds.num_pois(),
        items: ds.items.len(),
        words: ds.words.len(),
    };
    let mut params = Parameters::random(sizes, hp.dim, &mut ChaCha8Rng::seed_from_u64(seed));
    if let Some(p) = pretrained {
        for (name, table, rows) in [("poi", &p.poi_emb, sizes.pois), ("user", &p.user_emb, sizes.users)] {
            if table.rows() != rows || table.dim() != hp.dim {
                return Err(Error::Data(format!(
                    "pre-trained {name} embeddings are {}x{}, model needs {rows}x{}",
                    table.rows(),
                    table.dim(),
                    hp.dim
                )));
            }
        }
        params.poi_emb = p.poi_emb.clone();
        params.user_emb = p.user_emb.clone();
    }
    Model::new(hp.clone(), params, MetaSets::from_dataset(ds))
}

/// Directory of the dataset bundle inside a work directory.
pub fn data_dir(work: &Path) -> PathBuf {
    work.join("data")
}

/// Check-ins and meta of users removed by the activity filter.
pub fn heldout_dir(work: &Path) -> PathBuf {
    data_dir(work).join("heldout")
}

pub fn pretrain_dir(work: &Path) -> PathBuf {
    work.join("pretrain")
}

pub fn train_dir(work: &Path) -> PathBuf {
    work.join("train")
}

/// Default location of the trained model archive.
pub fn model_path(work: &Path) -> PathBuf {
    train_dir(work).join("model.txt")
}

pub fn eval_dir(work: &Path, segment: &str) -> PathBuf {
    work.join("eval").join(segment)
}

pub fn interpret_dir(work: &Path) -> PathBuf {
    work.join("interpret")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join("config.txt"), &cfg.to_text())
}

/// Loads the bundle of a work directory with its chronological split.
pub fn load_bundle(work: &Path) -> Result<(Dataset, Split)> {
    let dir = data_dir(work);
    if !dir.join("checkins.tsv").exists() {
        return Err(Error::Config(format!(
            "no dataset bundle in {}; run preprocess first",
            dir.display()
        )));
    }
    let ds = load_checkins(&CorpusPaths::in_bundle(&dir))?;
    let split = Split::chronological(&ds)?;
    Ok((ds, split))
}

/// Reads the corpus, applies the activity filter and writes the bundle plus
/// the check-ins of the removed users.
pub fn cmd_preprocess(cfg: &RunConfig, work: &Path) -> Result<DatasetStats> {
    cfg.validate()?;
    let (Some(checkins), Some(pois)) = (&cfg.checkins, &cfg.pois) else {
        return Err(Error::Config("preprocess needs the checkins and pois input files".into()));
    };
    let paths = CorpusPaths {
        checkins: checkins.clone(),
        pois: pois.clone(),
        users: cfg.users.clone(),
    };
    let raw = load_checkins(&paths)?;
    let ds = filter_activity(&raw, cfg.min_user_checkins, cfg.min_poi_users)?;
    let split = Split::chronological(&ds)?;
    let dir = data_dir(work);
    write_bundle(&dir, &ds, &split)?;

    let kept: HashSet<&str> = ds.users.iter().map(|u| u.user_id.as_str()).collect();
    let mut removed = String::new();
    let mut removed_meta = String::new();
    for (u, seq) in raw.users.iter().zip(&raw.sequences) {
        if kept.contains(u.user_id.as_str()) {
            continue;
        }
        for v in seq {
            let _ = writeln!(removed, "{}\t{}\t{}", u.user_id, raw.pois[v.poi].poi_id, v.timestamp);
        }
        if !u.meta_items.is_empty() {
            let _ = writeln!(removed_meta, "{}\t{}", u.user_id, u.meta_items.join(","));
        }
    }
    write_file(&heldout_dir(work).join("checkins.tsv"), &removed)?;
    write_file(&heldout_dir(work).join("users.tsv"), &removed_meta)?;
    write_config(&dir, cfg)?;
    info!(
        "kept {} of {} users, {} of {} POIs",
        ds.num_users(),
        raw.num_users(),
        ds.num_pois(),
        raw.num_pois()
    );
    Ok(ds.stats())
}

/// Pre-trains POI and user embeddings and writes them in the table format.
pub fn cmd_pretrain(cfg: &RunConfig, work: &Path) -> Result<Pretrained> {
    cfg.validate()?;
    let (ds, split) = load_bundle(work)?;
    if cfg.walks.rho > 0.0 && log::log_enabled!(log::Level::Debug) {
        let counts = build_transition_counts(&ds, &split);
        let geo = compute_geo_stats(&ds.pois, cfg.distance, cfg.geo_pair_cap())?;
        let graph = TransitionGraph::new(counts, &ds.pois, cfg.distance, Some(geo));
        if let Some(p) = walk_transition_distribution(0, &graph, cfg.walks.rho)? {
            debug!("walk step distribution from {}: {p:?}", ds.pois[0].poi_id);
        }
    }
    let pre = pretrain(&ds, &split, &cfg.walks, &cfg.skipgram, cfg.distance, cfg.geo_pair_cap().map(|c| c.0))?;
    let dir = pretrain_dir(work);
    let vocab = Vocab::from_dataset(&ds);
    write_file(&dir.join("poi_emb.txt"), &pre.poi_emb.to_text(&vocab.pois))?;
    write_file(&dir.join("user_emb.txt"), &pre.user_emb.to_text(&vocab.users))?;
    write_config(&dir, cfg)?;
    Ok(pre)
}

fn read_table(path: &Path, ids: &[String]) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!("{} not found; run pretrain first or set pretrain = false", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    let (got, table) = EmbeddingTable::parse_text(&text, &path.display().to_string(), 1)?;
    if got != ids {
        return Err(Error::Data(format!("{} does not match the dataset vocabulary", path.display())));
    }
    Ok(table)
}

/// Reads the pre-trained tables of a work directory.
pub fn load_pretrained(work: &Path, ds: &Dataset) -> Result<Pretrained> {
    let vocab = Vocab::from_dataset(ds);
    let dir = pretrain_dir(work);
    Ok(Pretrained {
        poi_emb: read_table(&dir.join("poi_emb.txt"), &vocab.pois)?,
        user_emb: read_table(&dir.join("user_emb.txt"), &vocab.users)?,
    })
}

/// Trains the model, writing the best snapshot, `history.tsv` and, when
/// enabled, one archive per epoch.
pub fn cmd_train(cfg: &RunConfig, work: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (ds, split) = load_bundle(work)?;
    let pre = if cfg.pretrain { Some(load_pretrained(work, &ds)?) } else { None };
    let model = init_model(&ds, &cfg.hp, pre.as_ref(), cfg.init_seed())?;
    let vocab = Vocab::from_dataset(&ds);
    let dir = train_dir(work);
    let instances = training_instances(&ds, &split);
    let outcome = train_with(
        model,
        &instances,
        &cfg.train,
        |m| Ok(evaluate(m, &ds, &split, Segment::Validation)?.map),
        |record, m| {
            if cfg.checkpoints {
                let path = dir.join("checkpoints").join(format!("model.epoch{}.txt", record.epoch));
                ModelArchive::new(m.clone(), vocab.clone())?.save(&path)?;
            }
            Ok(())
        },
    )?;
    ModelArchive::new(outcome.model.clone(), vocab)?.save(&model_path(work))?;
    write_file(&dir.join("history.tsv"), &history_tsv(&outcome.history))?;
    write_config(&dir, cfg)?;
    Ok(outcome)
}

/// Which instances `cmd_evaluate` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTarget {
    Segment(Segment),
    /// Held-out users' check-ins and, optionally, their meta file.
    ColdStart { checkins: PathBuf, meta: Option<PathBuf> },
}

pub fn load_model(path: &Path) -> Result<ModelArchive> {
    if !path.exists() {
        return Err(Error::Config(format!("model archive {} not found", path.display())));
    }
    ModelArchive::load(path)
}

/// Evaluates a model and writes `report.tsv` and `ranks.tsv`.
pub fn cmd_evaluate(cfg: &RunConfig, work: &Path, model: &Path, target: &EvalTarget) -> Result<EvalReport> {
    let archive = load_model(model)?;
    let (report, name, skipped) = match target {
        EvalTarget::Segment(seg) => {
            let (ds, split) = load_bundle(work)?;
            archive.vocab.check_matches(&ds)?;
            let name = if *seg == Segment::Test { "test" } else { "validation" };
            (evaluate(&archive.model, &ds, &split, *seg)?, name, None)
        }
        EvalTarget::ColdStart { checkins, meta } => {
            let raw = read_checkin_file(checkins)?;
            let meta = match meta {
                Some(p) => read_user_file(p)?,
                None => HashMap::new(),
            };
            let mut users = held_out_users(&raw, &meta);
            users.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            users.truncate(cfg.coldstart_users);
            users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
            let r = cold_start_eval(&archive.model, &archive.vocab, &users, cfg.seed)?;
            info!(
                "cold start: {} users scored ({} with meta), {} skipped, {} unknown meta items dropped",
                r.report.count(),
                r.with_meta,
                r.skipped,
                r.dropped_meta_items
            );
            (r.report, "coldstart", Some(r.skipped))
        }
    };
    let dir = eval_dir(work, name);
    let mut tsv = report.to_tsv();
    if let Some(s) = skipped {
        let _ = writeln!(tsv, "skipped_users\t{s}\t{}", report.count());
    }
    write_file(&dir.join("report.tsv"), &tsv)?;
    write_file(&dir.join("ranks.tsv"), &report.ranks_tsv(&archive.vocab))?;
    Ok(report)
}

/// Who a recommendation is for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Requester {
    User(String),
    /// A user outside the model, described by meta items.
    Cold(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendQuery {
    pub requester: Requester,
    pub prev_poi: String,
    pub prev_time: i64,
    pub time: i64,
    pub k: usize,
}

/// Top-K POIs as `(poi id, score)`.
pub fn cmd_recommend(model: &Path, q: &RecommendQuery) -> Result<Vec<(String, f64)>> {
    let archive = load_model(model)?;
    let vocab = &archive.vocab;
    let prev_poi = vocab
        .poi(&q.prev_poi)
        .ok_or_else(|| Error::Data(format!("unknown poi {:?}", q.prev_poi)))?;
    let user = match &q.requester {
        Requester::User(id) => UserRef::Known(vocab.user(id).ok_or_else(|| {
            Error::Data(format!("unknown user {id:?}; pass --cold-user with meta items instead"))
        })?),
        Requester::Cold(items) => {
            let mut known: Vec<usize> = items
                .iter()
                .filter_map(|m| {
                    let id = vocab.item(m);
                    if id.is_none() {
                        warn!("unknown meta item {m:?} dropped");
                    }
                    id
                })
                .collect();
            known.sort_unstable();
            known.dedup();
            if known.is_empty() || !archive.model.hp.use_meta {
                warn!("no usable meta items; ranking by the previous POI alone");
                UserRef::Anonymous
            } else {
                UserRef::Cold(known)
            }
        }
    };
    let ctx = QueryContext {
        user,
        prev_poi,
        prev_time: q.prev_time,
        time: q.time,
    };
    Ok(recommend_topk(&ctx, &archive.model, q.k)?
        .into_iter()
        .map(|(i, s)| (vocab.pois[i].clone(), s))
        .collect())
}

/// Writes `dims.txt` with the top words of every hidden dimension.
pub fn cmd_interpret(model: &Path, top_n: usize, out: &Path) -> Result<String> {
    let archive = load_model(model)?;
    if archive.vocab.words.is_empty() || !archive.model.hp.use_meta {
        return Err(Error::Config("model has no POI meta vocabulary to interpret".into()));
    }
    if top_n < 1 {
        return Err(Error::Config("top N must be >= 1".into()));
    }
    let text = dims_text(&all_dimension_keywords(top_n, &archive.model), &archive.vocab);
    write_file(&out.join("dims.txt"), &text)?;
    Ok(text)
}
