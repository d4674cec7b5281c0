//! Check-in corpora: loading, activity filtering, chronological splits and
//! the transition/geography statistics used for pre-training.

mod filter;
mod graph;
mod io;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

pub use filter::{filter_activity, DEFAULT_MIN_POI_USERS, DEFAULT_MIN_USER_CHECKINS};
pub use graph::{
    build_transition_counts, compute_geo_stats, distance, DistanceMode, GeoStats,
    TransitionCounts, TransitionGraph,
};
pub use io::{
    load_checkins, read_checkin_file, read_poi_file, read_user_file, write_bundle, CorpusPaths,
    BUNDLE_FILES,
};
pub use split::{Segment, Split, Transition, UserSplit};

/// One raw check-in event, before ids are densified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckIn {
    pub user_id: String,
    pub poi_id: String,
    /// Seconds since the epoch, UTC.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub poi_id: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Descriptive words (A_q), deduplicated and sorted.
    pub meta_items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: String,
    /// Auxiliary items such as friend ids (A_u), deduplicated and sorted.
    pub meta_items: Vec<String>,
}

/// A check-in with its POI resolved to a dense id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub poi: usize,
    pub timestamp: i64,
}

/// A densified corpus. Dense ids are positions in the sorted id lists, so the
/// mapping is stable for a given set of ids regardless of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: Vec<UserRecord>,
    pub pois: Vec<Poi>,
    /// Per user, visits sorted by timestamp (ties keep input order).
    pub sequences: Vec<Vec<Visit>>,
    /// POI meta vocabulary, sorted.
    pub words: Vec<String>,
    /// User meta vocabulary, sorted.
    pub items: Vec<String>,
    /// Dense word ids per POI (A_q).
    pub poi_words: Vec<Vec<usize>>,
    /// Dense item ids per user (A_u).
    pub user_items: Vec<Vec<usize>>,
    user_index: HashMap<String, usize>,
    poi_index: HashMap<String, usize>,
    word_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

fn dedup_sorted(items: &[String]) -> Vec<String> {
    items
        .iter()
        .filter(|s| !s.is_empty())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn index_of(ids: &[String]) -> HashMap<String, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

impl Dataset {
    /// Builds a dataset from raw records. Users are exactly those with at least
    /// one check-in; `user_meta` entries for other users are ignored. Every POI
    /// record is kept, visited or not.
    pub fn from_records(
        pois: Vec<Poi>,
        user_meta: &HashMap<String, Vec<String>>,
        checkins: &[CheckIn],
    ) -> Result<Dataset> {
        let mut poi_map: BTreeMap<String, Poi> = BTreeMap::new();
        for mut p in pois {
            if p.poi_id.is_empty() {
                return Err(Error::Data("empty poi_id".into()));
            }
            p.meta_items = dedup_sorted(&p.meta_items);
            poi_map.insert(p.poi_id.clone(), p);
        }
        let pois: Vec<Poi> = poi_map.into_values().collect();
        let poi_index = index_of(&pois.iter().map(|p| p.poi_id.clone()).collect::<Vec<_>>());

        let mut per_user: BTreeMap<&str, Vec<Visit>> = BTreeMap::new();
        for c in checkins {
            if c.user_id.is_empty() || c.poi_id.is_empty() {
                return Err(Error::Data("check-in with empty id".into()));
            }
            if c.timestamp <= 0 {
                return Err(Error::Data(format!(
                    "non-positive timestamp {} for user {}",
                    c.timestamp, c.user_id
                )));
            }
            let poi = *poi_index.get(&c.poi_id).ok_or_else(|| {
                Error::Data(format!("check-in references unknown poi_id {}", c.poi_id))
            })?;
            per_user.entry(&c.user_id).or_default().push(Visit {
                poi,
                timestamp: c.timestamp,
            });
        }

        let mut users = Vec::with_capacity(per_user.len());
        let mut sequences = Vec::with_capacity(per_user.len());
        for (uid, mut visits) in per_user {
            visits.sort_by_key(|v| v.timestamp);
            let meta = user_meta.get(uid).map(|m| dedup_sorted(m)).unwrap_or_default();
            users.push(UserRecord {
                user_id: uid.to_string(),
                meta_items: meta,
            });
            sequences.push(visits);
        }

        let words: Vec<String> = pois
            .iter()
            .flat_map(|p| p.meta_items.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<String> = users
            .iter()
            .flat_map(|u| u.meta_items.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let word_index = index_of(&words);
        let item_index = index_of(&items);
        let poi_words = pois
            .iter()
            .map(|p| p.meta_items.iter().map(|w| word_index[w]).collect())
            .collect();
        let user_items = users
            .iter()
            .map(|u| u.meta_items.iter().map(|m| item_index[m]).collect())
            .collect();
        let user_index = index_of(&users.iter().map(|u| u.user_id.clone()).collect::<Vec<_>>());

        Ok(Dataset {
            users,
            pois,
            sequences,
            words,
            items,
            poi_words,
            user_items,
            user_index,
            poi_index,
            word_index,
            item_index,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn num_checkins(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn user_id(&self, name: &str) -> Option<usize> {
        self.user_index.get(name).copied()
    }

    pub fn poi_id(&self, name: &str) -> Option<usize> {
        self.poi_index.get(name).copied()
    }

    pub fn word_id(&self, name: &str) -> Option<usize> {
        self.word_index.get(name).copied()
    }

    pub fn item_id(&self, name: &str) -> Option<usize> {
        self.item_index.get(name).copied()
    }

    /// Flattens back into raw check-ins, user by user in chronological order.
    pub fn checkins(&self) -> Vec<CheckIn> {
        self.sequences
            .iter()
            .zip(&self.users)
            .flat_map(|(seq, u)| {
                seq.iter().map(move |v| CheckIn {
                    user_id: u.user_id.clone(),
                    poi_id: self.pois[v.poi].poi_id.clone(),
                    timestamp: v.timestamp,
                })
            })
            .collect()
    }

    pub fn user_meta_map(&self) -> HashMap<String, Vec<String>> {
        self.users
            .iter()
            .map(|u| (u.user_id.clone(), u.meta_items.clone()))
            .collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let users = self.num_users();
        let pois = self.num_pois();
        let checkins = self.num_checkins();
        let avg = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
        DatasetStats {
            users,
            pois,
            checkins,
            avg_checkins: avg(checkins, users),
            avg_user_meta: avg(self.user_items.iter().map(Vec::len).sum(), users),
            avg_poi_meta: avg(self.poi_words.iter().map(Vec::len).sum(), pois),
        }
    }
}

/// Corpus summary in the usual #User / #POI / #Check-in / #AvgC layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub pois: usize,
    pub checkins: usize,
    pub avg_checkins: f64,
    pub avg_user_meta: f64,
    pub avg_poi_meta: f64,
}

impl DatasetStats {
    pub fn to_tsv(&self) -> String {
        format!(
            "#User\t{}\n#POI\t{}\n#Check-in\t{}\n#AvgC\t{:.2}\n#Avg(A_u)\t{:.2}\n#Avg(A_q)\t{:.2}\n",
            self.users,
            self.pois,
            self.checkins,
            self.avg_checkins,
            self.avg_user_meta,
            self.avg_poi_meta
        )
    }
}
