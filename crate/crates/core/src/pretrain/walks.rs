use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{GeoStats, TransitionGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    /// Weight of the geographic kernel against observed transition counts.
    pub rho: f64,
    pub walks_per_node: usize,
    /// Maximum number of nodes per walk, start node included.
    pub walk_length: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            rho: 0.0,
            walks_per_node: 50,
            walk_length: 20,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.walks_per_node < 1 {
            return Err(Error::Config("walks_per_node must be >= 1".into()));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be >= 2".into()));
        }
        Ok(())
    }
}

/// Logistic kernel of the standardized distance: `1 / (1 + exp(5 (d - mean) / std))`.
pub fn geo_kernel(d: f64, stats: &GeoStats) -> Result<f64> {
    if !d.is_finite() {
        return Err(Error::Numeric(format!("non-finite distance {d}")));
    }
    if stats.std <= 0.0 || !stats.std.is_finite() {
        return Err(Error::Numeric(format!("kernel needs std > 0, got {}", stats.std)));
    }
    Ok(1.0 / (1.0 + (5.0 * (d - stats.mean) / stats.std).exp()))
}

/// Kernel weights from `from` to every node; the self entry is zero.
fn kernel_row(from: usize, graph: &TransitionGraph, stats: &GeoStats) -> Result<Vec<f64>> {
    (0..graph.num_nodes())
        .map(|k| {
            if k == from {
                Ok(0.0)
            } else {
                geo_kernel(graph.distance(from, k), stats)
            }
        })
        .collect()
}

fn geo_stats(graph: &TransitionGraph, rho: f64) -> Result<Option<&GeoStats>> {
    if rho > 0.0 {
        graph
            .geo
            .as_ref()
            .map(Some)
            .ok_or_else(|| Error::Config("rho > 0 needs geo statistics on the graph".into()))
    } else {
        Ok(None)
    }
}

/// Mixture weights actually applied at a node: a component with no mass
/// (all-zero count row, or no other node to move to) is dropped and the
/// other one renormalized. `None` marks a dead end.
fn component_weights(rho: f64, has_geo: bool, has_freq: bool) -> Option<(f64, f64)> {
    let g = if has_geo { rho } else { 0.0 };
    let f = if has_freq { 1.0 - rho } else { 0.0 };
    let total = g + f;
    (total > 0.0).then(|| (g / total, f / total))
}

/// Exact next-node distribution of the biased walk at `from`:
/// `rho * kappa / sum(kappa) + (1 - rho) * f / sum(f)`. Returns `None` when
/// the walk cannot move.
pub fn walk_transition_distribution(
    from: usize,
    graph: &TransitionGraph,
    rho: f64,
) -> Result<Option<Vec<f64>>> {
    let n = graph.num_nodes();
    let stats = geo_stats(graph, rho)?;
    let kernel = match stats {
        Some(s) => Some(kernel_row(from, graph, s)?),
        None => None,
    };
    let kernel_total: f64 = kernel.as_ref().map_or(0.0, |k| k.iter().sum());
    let freq_total = graph.counts.out_degree(from);
    let Some((wg, wf)) = component_weights(rho, kernel_total > 0.0, freq_total > 0) else {
        return Ok(None);
    };
    let mut p = vec![0.0; n];
    if wg > 0.0 {
        for (pk, k) in p.iter_mut().zip(kernel.as_ref().unwrap()) {
            *pk += wg * k / kernel_total;
        }
    }
    if wf > 0.0 {
        for &(k, c) in graph.counts.row(from) {
            p[k] += wf * c as f64 / freq_total as f64;
        }
    }
    Ok(Some(p))
}

/// Per-node samplers for the walk distribution. Sampling picks a mixture
/// component first, then a node within it by inverse CDF.
pub struct WalkSampler {
    /// (target, cumulative count) per node.
    freq: Vec<Vec<(usize, u64)>>,
    /// Cumulative kernel weights per node; empty when the kernel is off.
    geo: Vec<Vec<f64>>,
    rho: f64,
}

impl WalkSampler {
    pub fn new(graph: &TransitionGraph, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
        }
        let n = graph.num_nodes();
        let freq = (0..n)
            .map(|a| {
                let mut acc = 0;
                graph
                    .counts
                    .row(a)
                    .iter()
                    .map(|&(b, c)| {
                        acc += c;
                        (b, acc)
                    })
                    .collect()
            })
            .collect();
        // O(n^2) memory when the kernel is active.
        let geo = match geo_stats(graph, rho)? {
            Some(stats) => (0..n)
                .into_par_iter()
                .map(|a| {
                    let mut row = kernel_row(a, graph, stats)?;
                    let mut acc = 0.0;
                    for v in row.iter_mut() {
                        acc += *v;
                        *v = acc;
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(WalkSampler { freq, geo, rho })
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> Option<usize> {
        let freq = &self.freq[from];
        let freq_total = freq.last().map_or(0, |&(_, c)| c);
        let geo = self.geo.get(from);
        let geo_total = geo.and_then(|g| g.last().copied()).unwrap_or(0.0);
        let (wg, _) = component_weights(self.rho, geo_total > 0.0, freq_total > 0)?;
        if wg > 0.0 && (wg >= 1.0 || rng.random::<f64>() < wg) {
            let cum = geo.unwrap();
            let u = rng.random::<f64>() * geo_total;
            // first index whose cumulative weight exceeds u; zero-weight
            // entries (the node itself) can never be picked
            let idx = cum.partition_point(|&c| c <= u);
            Some(idx.min(cum.len() - 1))
        } else {
            let u = rng.random_range(0..freq_total);
            let idx = freq.partition_point(|&(_, c)| c <= u);
            Some(freq[idx].0)
        }
    }
}

/// `walks_per_node` walks from every node, ordered pass by pass
/// (pass 0 over nodes 0..n, then pass 1, ...). Each walk draws from its own
/// stream derived from (seed, node, pass), so the output does not depend on
/// thread scheduling. A walk stops early at a dead end.
pub fn generate_walks(graph: &TransitionGraph, cfg: &WalkConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let n = graph.num_nodes();
    if n == 0 {
        return Err(Error::Data("cannot walk an empty graph".into()));
    }
    let sampler = WalkSampler::new(graph, cfg.rho)?;
    let walks = (0..cfg.walks_per_node * n)
        .into_par_iter()
        .map(|idx| {
            let (pass, start) = (idx / n, idx % n);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((start as u64) << 32) | pass as u64);
            let mut walk = Vec::with_capacity(cfg.walk_length);
            walk.push(start);
            while walk.len() < cfg.walk_length {
                match sampler.sample_next(*walk.last().unwrap(), &mut rng) {
                    Some(next) => walk.push(next),
                    None => break,
                }
            }
            walk
        })
        .collect();
    Ok(walks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DistanceMode, TransitionCounts};

    fn graph(n: usize, seqs: &[&[usize]], coords: Vec<(f64, f64)>, geo: Option<GeoStats>) -> TransitionGraph {
        TransitionGraph {
            counts: TransitionCounts::from_sequences(n, seqs.iter().copied()),
            coords,
            mode: DistanceMode::Planar,
            geo,
        }
    }

    #[test]
    fn kernel_closed_forms() {
        let s = GeoStats { mean: 1000.0, std: 250.0 };
        assert_eq!(geo_kernel(1000.0, &s).unwrap(), 0.5);
        let above = geo_kernel(1250.0, &s).unwrap();
        let below = geo_kernel(750.0, &s).unwrap();
        assert!((above - 1.0 / (1.0 + 5f64.exp())).abs() < 1e-15);
        assert!((above - 0.0066928509242848554).abs() < 1e-12);
        assert!((below - 0.9933071490757153).abs() < 1e-12);
        assert!((above + below - 1.0).abs() < 1e-12);
        assert!(geo_kernel(f64::NAN, &s).is_err());
        assert!(geo_kernel(f64::INFINITY, &s).is_err());
    }

    #[test]
    fn frequency_only_distribution() {
        // A=0 -> B=1 three times, A -> C=2 once
        let g = graph(3, &[&[0, 1, 0, 1, 0, 1, 0, 2]], vec![(0.0, 0.0); 3], None);
        let p = walk_transition_distribution(0, &g, 0.0).unwrap().unwrap();
        assert_eq!(p, vec![0.0, 0.75, 0.25]);
    }

    #[test]
    fn equidistant_geo_distribution_is_uniform() {
        let h = 3f64.sqrt() / 2.0;
        let coords = vec![(0.0, 0.0), (0.0, 1.0), (h, 0.5)];
        let stats = GeoStats { mean: 1.0, std: 0.5 };
        let g = graph(3, &[], coords, Some(stats));
        let p = walk_transition_distribution(0, &g, 1.0).unwrap().unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.5).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dead_end_without_kernel() {
        let g = graph(2, &[&[0, 1]], vec![(0.0, 0.0); 2], None);
        assert!(walk_transition_distribution(1, &g, 0.0).unwrap().is_none());
        assert!(walk_transition_distribution(0, &g, 0.5).is_err());
    }

    #[test]
    fn single_node_walks_have_length_one() {
        let g = graph(1, &[], vec![(0.0, 0.0)], None);
        let cfg = WalkConfig { walks_per_node: 7, ..WalkConfig::default() };
        let walks = generate_walks(&g, &cfg).unwrap();
        assert_eq!(walks, vec![vec![0]; 7]);
    }

    #[test]
    fn chain_walks_stop_at_dead_end() {
        let g = graph(3, &[&[0, 1, 2]], vec![(0.0, 0.0); 3], None);
        let cfg = WalkConfig { walks_per_node: 5, walk_length: 20, ..WalkConfig::default() };
        let walks = generate_walks(&g, &cfg).unwrap();
        assert_eq!(walks.len(), 15);
        for w in walks.iter().filter(|w| w[0] == 0) {
            assert_eq!(w, &vec![0, 1, 2]);
        }
    }

    #[test]
    fn walks_are_reproducible() {
        let coords: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, (i * i) as f64 * 0.3)).collect();
        let g = graph(
            6,
            &[&[0, 1, 2, 3, 4, 5, 0, 2, 4, 1, 3, 5]],
            coords,
            Some(GeoStats { mean: 5.0, std: 3.0 }),
        );
        let cfg = WalkConfig { rho: 0.4, walks_per_node: 4, walk_length: 10, seed: 9 };
        let a = generate_walks(&g, &cfg).unwrap();
        let b = generate_walks(&g, &cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_walks(&g, &WalkConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn config_validation() {
        assert!(WalkConfig { rho: 1.5, ..Default::default() }.validate().is_err());
        assert!(WalkConfig { walks_per_node: 0, ..Default::default() }.validate().is_err());
        assert!(WalkConfig { walk_length: 1, ..Default::default() }.validate().is_err());
    }
}
