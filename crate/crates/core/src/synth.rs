//! Planted synthetic check-in corpora with known next-POI structure.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CheckIn, Dataset, Poi};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pois: usize,
    pub users: usize,
    pub checkins_per_user: usize,
    /// Probability of following the planted successor; otherwise a uniform
    /// draw among the remaining POIs.
    pub dominant: f64,
    /// When set, the planted successor depends on whether the hour of the
    /// next visit is before or after noon (two independent successor tables).
    pub two_regimes: bool,
    /// Gap between consecutive check-ins, uniform in this range (hours).
    pub gap_hours: (f64, f64),
    /// Distinct POI meta words; POI `l` gets word `l % words`.
    pub words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pois: 30,
            users: 50,
            checkins_per_user: 40,
            dominant: 1.0,
            two_regimes: false,
            gap_hours: (0.5, 5.0),
            words: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub pois: Vec<Poi>,
    pub user_meta: HashMap<String, Vec<String>>,
    pub checkins: Vec<CheckIn>,
    /// Planted successor per regime (one table unless two regimes), indexed
    /// by POI position in `pois`.
    pub successors: Vec<Vec<usize>>,
}

/// Regime of a visit at `timestamp` (UTC): 0 before noon, 1 after.
pub fn regime_of(timestamp: i64) -> usize {
    usize::from(timestamp.rem_euclid(86_400) >= 43_200)
}

fn successor_table(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // a single random cycle, so no POI is its own successor
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut next = vec![0; n];
    for k in 0..n {
        next[order[k]] = order[(k + 1) % n];
    }
    next
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.pois < 2 || cfg.users < 1 || cfg.checkins_per_user < 3 || cfg.words < 1 {
        return Err(Error::Config("synthetic corpus needs >= 2 POIs, >= 1 user, >= 3 check-ins".into()));
    }
    if !(0.0..=1.0).contains(&cfg.dominant) || !(cfg.gap_hours.0 > 0.0 && cfg.gap_hours.1 >= cfg.gap_hours.0) {
        return Err(Error::Config("bad dominant probability or gap range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.pois;
    let successors: Vec<Vec<usize>> = (0..if cfg.two_regimes { 2 } else { 1 })
        .map(|_| successor_table(n, &mut rng))
        .collect();
    let pois: Vec<Poi> = (0..n)
        .map(|l| Poi {
            poi_id: format!("p{l:03}"),
            latitude: 1.25 + rng.random_range(0.0..0.2),
            longitude: 103.7 + rng.random_range(0.0..0.3),
            meta_items: vec![format!("w{}", l % cfg.words)],
        })
        .collect();
    let mut user_meta = HashMap::new();
    let mut checkins = Vec::with_capacity(cfg.users * cfg.checkins_per_user);
    for u in 0..cfg.users {
        let user = format!("u{u:03}");
        user_meta.insert(user.clone(), vec![format!("g{}", u % 4)]);
        let mut t: i64 = 1_400_000_000 + rng.random_range(0..86_400 * 30);
        let mut poi = rng.random_range(0..n);
        for k in 0..cfg.checkins_per_user {
            if k > 0 {
                let hours = rng.random_range(cfg.gap_hours.0..=cfg.gap_hours.1);
                t += (hours * 3600.0).round() as i64;
                let planted = successors[if cfg.two_regimes { regime_of(t) } else { 0 }][poi];
                poi = if rng.random::<f64>() < cfg.dominant {
                    planted
                } else {
                    let other = rng.random_range(0..n - 1);
                    if other >= planted { other + 1 } else { other }
                };
            }
            checkins.push(CheckIn {
                user_id: user.clone(),
                poi_id: pois[poi].poi_id.clone(),
                timestamp: t,
            });
        }
    }
    Ok(SynthCorpus {
        pois,
        user_meta,
        checkins,
        successors,
    })
}

impl SynthCorpus {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_records(self.pois.clone(), &self.user_meta, &self.checkins)
    }

    /// Writes `checkins.tsv`, `pois.tsv` and `users.tsv` in the input formats.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))
        };
        let mut c = String::new();
        for ch in &self.checkins {
            c += &format!("{}\t{}\t{}\n", ch.user_id, ch.poi_id, ch.timestamp);
        }
        write("checkins.tsv", c)?;
        let mut p = String::new();
        for poi in &self.pois {
            p += &format!("{}\t{}\t{}\t{}\n", poi.poi_id, poi.latitude, poi.longitude, poi.meta_items.join(","));
        }
        write("pois.tsv", p)?;
        let mut users: Vec<_> = self.user_meta.iter().collect();
        users.sort();
        let mut s = String::new();
        for (u, items) in users {
            s += &format!("{u}\t{}\n", items.join(","));
        }
        write("users.tsv", s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_corpus_follows_its_table() {
        let c = generate(&SynthConfig::default()).unwrap();
        assert_eq!(c.checkins.len(), 50 * 40);
        let ds = c.dataset().unwrap();
        assert_eq!(ds.num_pois(), 30);
        for seq in &ds.sequences {
            for w in seq.windows(2) {
                assert_eq!(c.successors[0][w[0].poi], w[1].poi);
            }
        }
        assert!(c.successors[0].iter().enumerate().all(|(l, &s)| l != s));
    }

    #[test]
    fn stochastic_rate_is_close_to_dominant() {
        let cfg = SynthConfig { dominant: 0.8, seed: 2, ..SynthConfig::default() };
        let c = generate(&cfg).unwrap();
        let ds = c.dataset().unwrap();
        let (mut hit, mut total) = (0, 0);
        for seq in &ds.sequences {
            for w in seq.windows(2) {
                total += 1;
                hit += usize::from(c.successors[0][w[0].poi] == w[1].poi);
            }
        }
        let rate = hit as f64 / total as f64;
        assert!((rate - 0.8).abs() < 0.03, "{rate}");
    }

    #[test]
    fn regimes_follow_hour_of_day() {
        let cfg = SynthConfig { two_regimes: true, seed: 5, ..SynthConfig::default() };
        let c = generate(&cfg).unwrap();
        let ds = c.dataset().unwrap();
        for seq in &ds.sequences {
            for w in seq.windows(2) {
                assert_eq!(c.successors[regime_of(w[1].timestamp)][w[0].poi], w[1].poi);
            }
        }
        assert_ne!(c.successors[0], c.successors[1]);
    }

    #[test]
    fn written_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&SynthConfig { users: 5, ..SynthConfig::default() }).unwrap();
        c.write(dir.path()).unwrap();
        let ds = crate::data::load_checkins(&crate::data::CorpusPaths::in_bundle(dir.path())).unwrap();
        assert_eq!(ds, c.dataset().unwrap());
    }
}
