use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Dataset, Poi, Segment, Split};
use crate::error::{Error, Result};

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// How pairwise POI distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// Great-circle distance in meters from latitude/longitude in degrees.
    #[default]
    Haversine,
    /// Euclidean distance treating (latitude, longitude) as plain (y, x).
    Planar,
}

impl std::str::FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haversine" => Ok(DistanceMode::Haversine),
            "planar" => Ok(DistanceMode::Planar),
            other => Err(Error::Config(format!("unknown distance mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceMode::Haversine => "haversine",
            DistanceMode::Planar => "planar",
        })
    }
}

pub fn distance(a: (f64, f64), b: (f64, f64), mode: DistanceMode) -> f64 {
    match mode {
        DistanceMode::Planar => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
        DistanceMode::Haversine => {
            let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
            let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
            let h = ((lat2 - lat1) / 2.0).sin().powi(2)
                + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
            2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
        }
    }
}

/// Mean and population standard deviation of pairwise POI distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoStats {
    pub mean: f64,
    pub std: f64,
}

/// Statistics over all unordered pairs of distinct POIs, or over `pair_cap`
/// uniformly sampled pairs when given (`(cap, seed)`).
pub fn compute_geo_stats(
    pois: &[Poi],
    mode: DistanceMode,
    pair_cap: Option<(usize, u64)>,
) -> Result<GeoStats> {
    let n = pois.len();
    if n < 2 {
        return Err(Error::Data("geo statistics need at least 2 POIs".into()));
    }
    let coords: Vec<(f64, f64)> = pois.iter().map(|p| (p.latitude, p.longitude)).collect();
    let dists: Vec<f64> = match pair_cap {
        Some((cap, seed)) if cap < n * (n - 1) / 2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..cap)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    distance(coords[i], coords[j], mode)
                })
                .collect()
        }
        _ => Vec::new(),
    };

    let (mean, var) = if !dists.is_empty() {
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dists.len() as f64;
        (mean, var)
    } else {
        // Row partial sums are computed in parallel and combined in row order,
        // so the result does not depend on the thread count.
        let pairs = (n * (n - 1) / 2) as f64;
        let row_sum = |f: &(dyn Fn(f64) -> f64 + Sync)| -> f64 {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    ((i + 1)..n)
                        .map(|j| f(distance(coords[i], coords[j], mode)))
                        .sum::<f64>()
                })
                .collect::<Vec<f64>>()
                .into_iter()
                .sum()
        };
        let mean = row_sum(&|d| d) / pairs;
        let var = row_sum(&|d| (d - mean).powi(2)) / pairs;
        (mean, var)
    };
    let std = var.sqrt();
    if !mean.is_finite() || !std.is_finite() {
        return Err(Error::Numeric("non-finite POI distance".into()));
    }
    if std <= 0.0 {
        return Err(Error::Data(
            "pairwise POI distances have zero spread; the geographic kernel is undefined \
             (disable it with rho=0)"
                .into(),
        ));
    }
    Ok(GeoStats { mean, std })
}

/// Sparse consecutive-visit counts: `rows[a]` lists `(b, f_ab)` sorted by `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    rows: Vec<Vec<(usize, u64)>>,
}

impl TransitionCounts {
    pub fn from_sequences<'a>(n: usize, seqs: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut dense: Vec<std::collections::BTreeMap<usize, u64>> = vec![Default::default(); n];
        for seq in seqs {
            for w in seq.windows(2) {
                *dense[w[0]].entry(w[1]).or_insert(0) += 1;
            }
        }
        TransitionCounts {
            rows: dense.into_iter().map(|m| m.into_iter().collect()).collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, a: usize) -> &[(usize, u64)] {
        &self.rows[a]
    }

    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.rows[a]
            .binary_search_by_key(&b, |&(k, _)| k)
            .map(|i| self.rows[a][i].1)
            .unwrap_or(0)
    }

    pub fn out_degree(&self, a: usize) -> u64 {
        self.rows[a].iter().map(|&(_, c)| c).sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.rows.len()).map(|a| self.out_degree(a)).sum()
    }
}

/// Counts consecutive training-segment pairs per user. Pairs never span two
/// users or a segment boundary.
pub fn build_transition_counts(ds: &Dataset, split: &Split) -> TransitionCounts {
    let seqs: Vec<Vec<usize>> = (0..ds.num_users())
        .map(|u| {
            split
                .segment(ds, u, Segment::Train)
                .iter()
                .map(|v| v.poi)
                .collect()
        })
        .collect();
    TransitionCounts::from_sequences(ds.num_pois(), seqs.iter().map(Vec::as_slice))
}

/// Everything the random-walk generator needs: transition counts plus,
/// when the geographic kernel is enabled, coordinates and distance statistics.
#[derive(Debug, Clone)]
pub struct TransitionGraph {
    pub counts: TransitionCounts,
    pub coords: Vec<(f64, f64)>,
    pub mode: DistanceMode,
    pub geo: Option<GeoStats>,
}

impl TransitionGraph {
    pub fn new(counts: TransitionCounts, pois: &[Poi], mode: DistanceMode, geo: Option<GeoStats>) -> Self {
        TransitionGraph {
            counts,
            coords: pois.iter().map(|p| (p.latitude, p.longitude)).collect(),
            mode,
            geo,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.num_nodes()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        distance(self.coords[a], self.coords[b], self.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::poi;
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn single_pair_has_zero_spread() {
        let pois = vec![poi("a", 0.0, 0.0, &[]), poi("b", 0.0, 1000.0 / 111_195.0, &[])];
        let err = compute_geo_stats(&pois, DistanceMode::Haversine, None).unwrap_err();
        assert!(err.to_string().contains("rho=0"));
    }

    #[test]
    fn collinear_planar_points() {
        let pois = vec![poi("a", 0.0, 0.0, &[]), poi("b", 0.0, 3.0, &[]), poi("c", 0.0, 6.0, &[])];
        let s = compute_geo_stats(&pois, DistanceMode::Planar, None).unwrap();
        assert!((s.mean - 4.0).abs() < 1e-12);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn haversine_one_degree_of_latitude() {
        let d = distance((0.0, 0.0), (1.0, 0.0), DistanceMode::Haversine);
        assert!((d - 111_195.08).abs() < 1.0, "{d}");
    }

    #[test]
    fn transition_counts_examples() {
        let c = TransitionCounts::from_sequences(2, [&[0usize, 1, 0][..]]);
        assert_eq!(c.get(0, 1), 1);
        assert_eq!(c.get(1, 0), 1);
        assert_eq!(c.get(0, 0), 0);
        assert_eq!(c.get(1, 1), 0);
        let c = TransitionCounts::from_sequences(2, [&[0usize, 1][..], &[0, 1][..]]);
        assert_eq!(c.get(0, 1), 2);
    }

    #[test]
    fn counts_match_brute_force_pair_counter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seqs: Vec<Vec<usize>> = (0..10)
            .map(|_| (0..10).map(|_| rng.random_range(0..6)).collect())
            .collect();
        let c = TransitionCounts::from_sequences(6, seqs.iter().map(Vec::as_slice));
        for a in 0..6 {
            for b in 0..6 {
                let brute = seqs
                    .iter()
                    .flat_map(|s| (1..s.len()).map(move |i| (s[i - 1], s[i])))
                    .filter(|&p| p == (a, b))
                    .count() as u64;
                assert_eq!(c.get(a, b), brute);
            }
        }
        assert_eq!(c.total(), 10 * 9);
    }

    fn planar(points: &[(f64, f64)]) -> Vec<Poi> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(y, x))| poi(&format!("p{i}"), y, x, &[]))
            .collect()
    }

    proptest! {
        #[test]
        fn geo_stats_permutation_invariant_and_scale_covariant(
            pts in prop::collection::vec((-40.0f64..40.0, -40.0f64..40.0), 3..25),
            seed in any::<u64>(),
        ) {
            let base = compute_geo_stats(&planar(&pts), DistanceMode::Planar, None);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let s = compute_geo_stats(&planar(&shuffled), DistanceMode::Planar, None).unwrap();
            prop_assert!((s.mean - base.mean).abs() <= 1e-9 * base.mean.max(1.0));
            prop_assert!((s.std - base.std).abs() <= 1e-9 * base.std.max(1.0));
            let doubled: Vec<(f64, f64)> = pts.iter().map(|&(a, b)| (2.0 * a, 2.0 * b)).collect();
            let d = compute_geo_stats(&planar(&doubled), DistanceMode::Planar, None).unwrap();
            prop_assert!((d.mean - 2.0 * base.mean).abs() <= 1e-9 * base.mean.max(1.0));
            prop_assert!((d.std - 2.0 * base.std).abs() <= 1e-9 * base.std.max(1.0));
        }
    }
}
