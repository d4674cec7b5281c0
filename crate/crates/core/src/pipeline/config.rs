use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DistanceMode, DEFAULT_MIN_POI_USERS, DEFAULT_MIN_USER_CHECKINS};
use crate::error::{Error, Result};
use crate::model::Hyperparams;
use crate::pretrain::{SkipGramConfig, WalkConfig};
use crate::train::TrainConfig;

/// Every setting of a run. Stored as flat `key = value` lines; `#` starts a
/// comment. Sub-seeds for walks, SkipGram, initialization and shuffling are
/// derived from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub checkins: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub min_user_checkins: usize,
    pub min_poi_users: usize,
    pub distance: DistanceMode,
    /// Sample this many POI pairs for the distance statistics; 0 uses all pairs.
    pub geo_pair_samples: usize,
    pub seed: u64,
    pub hp: Hyperparams,
    pub walks: WalkConfig,
    pub skipgram: SkipGramConfig,
    pub train: TrainConfig,
    /// Initialize Q and U from pre-training; random otherwise.
    pub pretrain: bool,
    /// Write a model archive after every epoch.
    pub checkpoints: bool,
    pub coldstart_users: usize,
    pub top_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            checkins: None,
            pois: None,
            users: None,
            min_user_checkins: DEFAULT_MIN_USER_CHECKINS,
            min_poi_users: DEFAULT_MIN_POI_USERS,
            distance: DistanceMode::Haversine,
            geo_pair_samples: 0,
            seed: 42,
            hp: Hyperparams::default(),
            walks: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
            train: TrainConfig::default(),
            pretrain: true,
            checkpoints: false,
            coldstart_users: 200,
            top_n: 10,
        };
        c.derive_seeds();
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn path_or_none(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    fn derive_seeds(&mut self) {
        self.walks.seed = self.seed;
        self.skipgram.seed = self.seed.wrapping_add(1);
        self.train.seed = self.seed.wrapping_add(3);
    }

    /// Pair-sampling cap and seed for the distance statistics, when enabled.
    pub fn geo_pair_cap(&self) -> Option<(usize, u64)> {
        (self.geo_pair_samples > 0).then_some((self.geo_pair_samples, self.walks.seed))
    }

    /// Seed of the random parameter initialization.
    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "checkins" => self.checkins = path_or_none(v),
            "pois" => self.pois = path_or_none(v),
            "users" => self.users = path_or_none(v),
            "min_user_checkins" => self.min_user_checkins = parse(key, v)?,
            "min_poi_users" => self.min_poi_users = parse(key, v)?,
            "distance" => self.distance = parse(key, v)?,
            "geo_pair_samples" => self.geo_pair_samples = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.derive_seeds();
            }
            "dim" => {
                self.hp.dim = parse(key, v)?;
                self.skipgram.dim = self.hp.dim;
            }
            "alpha" => self.hp.alpha = parse(key, v)?,
            "beta" => self.hp.beta = parse(key, v)?,
            "interval_hours" => self.hp.interval_hours = parse(key, v)?,
            "lambda" => self.hp.lambda = parse(key, v)?,
            "learning_rate" => self.hp.learning_rate = parse(key, v)?,
            "use_meta" => self.hp.use_meta = parse(key, v)?,
            "use_interval" => self.hp.use_interval = parse(key, v)?,
            "use_timeslot" => self.hp.use_timeslot = parse(key, v)?,
            "tz_offset_seconds" => self.hp.tz_offset_secs = parse(key, v)?,
            "rho" => self.walks.rho = parse(key, v)?,
            "walks_per_node" => self.walks.walks_per_node = parse(key, v)?,
            "walk_length" => self.walks.walk_length = parse(key, v)?,
            "window" => self.skipgram.window = parse(key, v)?,
            "skipgram_epochs" => self.skipgram.epochs = parse(key, v)?,
            "skipgram_learning_rate" => self.skipgram.learning_rate = parse(key, v)?,
            "skipgram_min_learning_rate" => self.skipgram.min_learning_rate = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "pretrain" => self.pretrain = parse(key, v)?,
            "checkpoints" => self.checkpoints = parse(key, v)?,
            "coldstart_users" => self.coldstart_users = parse(key, v)?,
            "top_n" => self.top_n = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` assignments in order.
    pub fn apply<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        for a in assignments {
            let (k, v) = a
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {:?}", a.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            c.set(k, v)
                .map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// The effective configuration; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let hp = &self.hp;
        let entries: Vec<(&str, String)> = vec![
            ("checkins", show(&self.checkins)),
            ("pois", show(&self.pois)),
            ("users", show(&self.users)),
            ("min_user_checkins", self.min_user_checkins.to_string()),
            ("min_poi_users", self.min_poi_users.to_string()),
            ("distance", self.distance.to_string()),
            ("geo_pair_samples", self.geo_pair_samples.to_string()),
            ("seed", self.seed.to_string()),
            ("dim", hp.dim.to_string()),
            ("alpha", hp.alpha.to_string()),
            ("beta", hp.beta.to_string()),
            ("interval_hours", hp.interval_hours.to_string()),
            ("lambda", hp.lambda.to_string()),
            ("learning_rate", hp.learning_rate.to_string()),
            ("use_meta", hp.use_meta.to_string()),
            ("use_interval", hp.use_interval.to_string()),
            ("use_timeslot", hp.use_timeslot.to_string()),
            ("tz_offset_seconds", hp.tz_offset_secs.to_string()),
            ("rho", self.walks.rho.to_string()),
            ("walks_per_node", self.walks.walks_per_node.to_string()),
            ("walk_length", self.walks.walk_length.to_string()),
            ("window", self.skipgram.window.to_string()),
            ("skipgram_epochs", self.skipgram.epochs.to_string()),
            ("skipgram_learning_rate", self.skipgram.learning_rate.to_string()),
            ("skipgram_min_learning_rate", self.skipgram.min_learning_rate.to_string()),
            ("max_epochs", self.train.max_epochs.to_string()),
            ("patience", self.train.patience.to_string()),
            ("pretrain", self.pretrain.to_string()),
            ("checkpoints", self.checkpoints.to_string()),
            ("coldstart_users", self.coldstart_users.to_string()),
            ("top_n", self.top_n.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.walks.validate()?;
        self.skipgram.validate()?;
        self.train.validate()?;
        if self.top_n < 1 {
            return Err(Error::Config("top_n must be >= 1".into()));
        }
        Ok(())
    }
}
