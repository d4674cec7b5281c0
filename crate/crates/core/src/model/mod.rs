//! The recommendation network: parameters, hyperparameters and the forward
//! computation from (user, previous POI, time) to scores over all POIs.

mod archive;
mod forward;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::data::Dataset;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

pub use archive::{ModelArchive, Vocab};
pub use forward::{
    candidate_intent, candidate_intents, interval_matrix, interval_weights, meta_embed,
    poi_intent, predict_distribution, rank_of, recommend_topk, score, scores, softmax,
    time_slot, user_intent, ForwardPass, IntentTriple, QueryContext, UserRef,
};

/// Hour-of-day slots, each with its own bias vector.
pub const TIME_SLOTS: usize = 24;

/// Half-width of the uniform initializer for randomly initialized parameters.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub dim: usize,
    /// Weight of the POI embedding against its meta embedding.
    pub alpha: f64,
    /// Weight of the user embedding against its meta embedding.
    pub beta: f64,
    /// Interval threshold in hours beyond which the transition saturates.
    pub interval_hours: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub use_meta: bool,
    pub use_interval: bool,
    pub use_timeslot: bool,
    /// Offset added to UTC timestamps before taking the hour of day.
    pub tz_offset_secs: i64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 60,
            alpha: 0.3,
            beta: 0.2,
            interval_hours: 6.0,
            lambda: 0.01,
            learning_rate: 0.005,
            use_meta: true,
            use_interval: true,
            use_timeslot: true,
            tz_offset_secs: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("alpha and beta must lie in [0, 1]".into()));
        }
        if !(self.interval_hours > 0.0) || !self.interval_hours.is_finite() {
            return Err(Error::Config("interval threshold must be positive".into()));
        }
        if self.lambda < 0.0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("need lambda >= 0 and learning rate > 0".into()));
        }
        Ok(())
    }
}

/// Names of the parameter tensors, in archive order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    UserEmb,
    PoiEmb,
    UserMetaEmb,
    PoiMetaEmb,
    W0,
    WPi,
    W1,
    W2,
    W3,
    B1,
    B2,
    B3,
    SlotBias,
}

impl ParamId {
    pub const ALL: [ParamId; 13] = [
        ParamId::UserEmb,
        ParamId::PoiEmb,
        ParamId::UserMetaEmb,
        ParamId::PoiMetaEmb,
        ParamId::W0,
        ParamId::WPi,
        ParamId::W1,
        ParamId::W2,
        ParamId::W3,
        ParamId::B1,
        ParamId::B2,
        ParamId::B3,
        ParamId::SlotBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::UserEmb => "user_emb",
            ParamId::PoiEmb => "poi_emb",
            ParamId::UserMetaEmb => "user_meta_emb",
            ParamId::PoiMetaEmb => "poi_meta_emb",
            ParamId::W0 => "w0",
            ParamId::WPi => "w_pi",
            ParamId::W1 => "w1",
            ParamId::W2 => "w2",
            ParamId::W3 => "w3",
            ParamId::B1 => "b1",
            ParamId::B2 => "b2",
            ParamId::B3 => "b3",
            ParamId::SlotBias => "slot_bias",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn is_bias(self) -> bool {
        matches!(self, ParamId::B1 | ParamId::B2 | ParamId::B3 | ParamId::SlotBias)
    }
}

/// All trainable tensors. `w1`/`b1` serve when the interval or slot context
/// is switched off; otherwise `w0`/`w_pi` and `slot_bias` take their place.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub user_emb: EmbeddingTable,
    pub poi_emb: EmbeddingTable,
    pub user_meta_emb: EmbeddingTable,
    pub poi_meta_emb: EmbeddingTable,
    pub w0: Array2<f64>,
    pub w_pi: Array2<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
    pub b1: Array1<f64>,
    pub b2: Array1<f64>,
    pub b3: Array1<f64>,
    /// One bias row per hour-of-day slot.
    pub slot_bias: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSizes {
    pub users: usize,
    pub pois: usize,
    pub items: usize,
    pub words: usize,
}

impl Parameters {
    pub fn zeros(sizes: VocabSizes, dim: usize) -> Parameters {
        let sq = || Array2::zeros((dim, dim));
        Parameters {
            user_emb: EmbeddingTable::zeros(sizes.users, dim),
            poi_emb: EmbeddingTable::zeros(sizes.pois, dim),
            user_meta_emb: EmbeddingTable::zeros(sizes.items, dim),
            poi_meta_emb: EmbeddingTable::zeros(sizes.words, dim),
            w0: sq(),
            w_pi: sq(),
            w1: sq(),
            w2: sq(),
            w3: sq(),
            b1: Array1::zeros(dim),
            b2: Array1::zeros(dim),
            b3: Array1::zeros(dim),
            slot_bias: Array2::zeros((TIME_SLOTS, dim)),
        }
    }

    /// Every entry uniform in `[-INIT_RANGE, INIT_RANGE]`.
    pub fn random<R: Rng + ?Sized>(sizes: VocabSizes, dim: usize, rng: &mut R) -> Parameters {
        let mut p = Parameters::zeros(sizes, dim);
        for id in ParamId::ALL {
            for v in p.coords_mut(id) {
                *v = rng.random_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
        p
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            users: self.user_emb.rows(),
            pois: self.poi_emb.rows(),
            items: self.user_meta_emb.rows(),
            words: self.poi_meta_emb.rows(),
        }
    }

    pub fn dim(&self) -> usize {
        self.b3.len()
    }

    /// Shape of a tensor as (rows, cols); vectors are one row.
    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let m = match id {
            ParamId::UserEmb => self.user_emb.as_array(),
            ParamId::PoiEmb => self.poi_emb.as_array(),
            ParamId::UserMetaEmb => self.user_meta_emb.as_array(),
            ParamId::PoiMetaEmb => self.poi_meta_emb.as_array(),
            ParamId::W0 => &self.w0,
            ParamId::WPi => &self.w_pi,
            ParamId::W1 => &self.w1,
            ParamId::W2 => &self.w2,
            ParamId::W3 => &self.w3,
            ParamId::SlotBias => &self.slot_bias,
            ParamId::B1 | ParamId::B2 | ParamId::B3 => return (1, self.dim()),
        };
        m.dim()
    }

    /// Row-major view of a tensor's entries.
    pub fn coords(&self, id: ParamId) -> &[f64] {
        let s = match id {
            ParamId::UserEmb => self.user_emb.as_array().as_slice(),
            ParamId::PoiEmb => self.poi_emb.as_array().as_slice(),
            ParamId::UserMetaEmb => self.user_meta_emb.as_array().as_slice(),
            ParamId::PoiMetaEmb => self.poi_meta_emb.as_array().as_slice(),
            ParamId::W0 => self.w0.as_slice(),
            ParamId::WPi => self.w_pi.as_slice(),
            ParamId::W1 => self.w1.as_slice(),
            ParamId::W2 => self.w2.as_slice(),
            ParamId::W3 => self.w3.as_slice(),
            ParamId::B1 => self.b1.as_slice(),
            ParamId::B2 => self.b2.as_slice(),
            ParamId::B3 => self.b3.as_slice(),
            ParamId::SlotBias => self.slot_bias.as_slice(),
        };
        s.expect("parameters are stored in standard layout")
    }

    pub fn coords_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = match id {
            ParamId::UserEmb => self.user_emb.as_array_mut().as_slice_mut(),
            ParamId::PoiEmb => self.poi_emb.as_array_mut().as_slice_mut(),
            ParamId::UserMetaEmb => self.user_meta_emb.as_array_mut().as_slice_mut(),
            ParamId::PoiMetaEmb => self.poi_meta_emb.as_array_mut().as_slice_mut(),
            ParamId::W0 => self.w0.as_slice_mut(),
            ParamId::WPi => self.w_pi.as_slice_mut(),
            ParamId::W1 => self.w1.as_slice_mut(),
            ParamId::W2 => self.w2.as_slice_mut(),
            ParamId::W3 => self.w3.as_slice_mut(),
            ParamId::B1 => self.b1.as_slice_mut(),
            ParamId::B2 => self.b2.as_slice_mut(),
            ParamId::B3 => self.b3.as_slice_mut(),
            ParamId::SlotBias => self.slot_bias.as_slice_mut(),
        };
        s.expect("parameters are stored in standard layout")
    }

    pub fn is_finite(&self) -> bool {
        ParamId::ALL
            .iter()
            .all(|&id| self.coords(id).iter().all(|v| v.is_finite()))
    }

    /// Sum of squared entries over all tensors.
    pub fn squared_norm(&self) -> f64 {
        ParamId::ALL
            .iter()
            .map(|&id| self.coords(id).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// Meta item sets per POI (A_q) and per user (A_u), as dense ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetaSets {
    pub poi_words: Vec<Vec<usize>>,
    pub user_items: Vec<Vec<usize>>,
}

impl MetaSets {
    pub fn from_dataset(ds: &Dataset) -> MetaSets {
        MetaSets {
            poi_words: ds.poi_words.clone(),
            user_items: ds.user_items.clone(),
        }
    }
}

/// Everything the forward pass reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hp: Hyperparams,
    pub params: Parameters,
    pub meta: MetaSets,
}

impl Model {
    pub fn new(hp: Hyperparams, params: Parameters, meta: MetaSets) -> Result<Model> {
        hp.validate()?;
        let sizes = params.sizes();
        if params.dim() != hp.dim || params.poi_emb.dim() != hp.dim || params.user_emb.dim() != hp.dim {
            return Err(Error::DimMismatch {
                expected: hp.dim,
                got: params.poi_emb.dim(),
            });
        }
        if meta.poi_words.len() != sizes.pois || meta.user_items.len() != sizes.users {
            return Err(Error::Data("meta sets do not match the parameter vocabularies".into()));
        }
        if meta.poi_words.iter().flatten().any(|&w| w >= sizes.words)
            || meta.user_items.iter().flatten().any(|&m| m >= sizes.items)
        {
            return Err(Error::Data("meta item id outside its vocabulary".into()));
        }
        Ok(Model { hp, params, meta })
    }

    pub fn num_pois(&self) -> usize {
        self.params.poi_emb.rows()
    }

    pub fn num_users(&self) -> usize {
        self.params.user_emb.rows()
    }
}
