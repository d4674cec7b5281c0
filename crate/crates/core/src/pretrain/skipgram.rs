use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ndarray::{Array1, Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the end of the last epoch.
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 60,
            window: 10,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.window < 1 || self.epochs < 1 {
            return Err(Error::Config("skipgram dim, window and epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.min_learning_rate < 0.0 {
            return Err(Error::Config("skipgram learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Root-to-leaf path of one vocabulary item in the Huffman tree:
/// inner node index and the branch bit taken there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanPath {
    pub nodes: Vec<usize>,
    pub codes: Vec<u8>,
}

/// Binary Huffman coding of `counts`. Ties are broken by node id (leaves are
/// `0..n`, inner nodes are numbered in creation order after them), so the tree
/// is a pure function of the counts. Inner node `n + k` has output row `k`.
pub fn huffman_paths(counts: &[u64]) -> Vec<HuffmanPath> {
    let n = counts.len();
    if n <= 1 {
        return vec![HuffmanPath { nodes: vec![], codes: vec![] }; n];
    }
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        counts.iter().enumerate().map(|(i, &c)| Reverse((c, i))).collect();
    // parent[node] = (parent id, bit)
    let mut parent = vec![(usize::MAX, 0u8); 2 * n - 1];
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((c0, a)) = heap.pop().unwrap();
        let Reverse((c1, b)) = heap.pop().unwrap();
        parent[a] = (next, 0);
        parent[b] = (next, 1);
        heap.push(Reverse((c0 + c1, next)));
        next += 1;
    }
    let root = next - 1;
    (0..n)
        .map(|leaf| {
            let mut nodes = Vec::new();
            let mut codes = Vec::new();
            let mut cur = leaf;
            while cur != root {
                let (p, bit) = parent[cur];
                nodes.push(p - n);
                codes.push(bit);
                cur = p;
            }
            nodes.reverse();
            codes.reverse();
            HuffmanPath { nodes, codes }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SkipGramOutcome {
    /// Input-side vectors, one row per item.
    pub embeddings: EmbeddingTable,
    /// Mean negative log path probability per (center, context) pair, per epoch.
    pub epoch_losses: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SkipGram with hierarchical softmax over walk sequences. For every item and
/// every neighbor within `window` positions, the neighbor's input vector is
/// trained to predict the item's Huffman path. Items are dense ids in
/// `0..vocab_size`. Single-threaded and deterministic for a fixed seed.
pub fn train_skipgram(
    walks: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SkipGramConfig,
) -> Result<SkipGramOutcome> {
    cfg.validate()?;
    let total_tokens: usize = walks.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::Data("empty walk corpus".into()));
    }
    let mut counts = vec![0u64; vocab_size];
    for &item in walks.iter().flatten() {
        if item >= vocab_size {
            return Err(Error::Data(format!("walk item {item} outside vocabulary of {vocab_size}")));
        }
        counts[item] += 1;
    }
    let paths = huffman_paths(&counts);
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input = EmbeddingTable::uniform(vocab_size, d, 0.5 / d as f64, &mut rng).into_array();
    let mut output: Array2<f64> = Array2::zeros((vocab_size.saturating_sub(1), d));
    let mut grad_in = Array1::<f64>::zeros(d);

    let work = (cfg.epochs * total_tokens) as f64;
    let mut processed = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (mut loss, mut pairs) = (0.0, 0usize);
        for walk in walks {
            for (pos, &center) in walk.iter().enumerate() {
                let progress = processed as f64 / work;
                let lr = cfg.learning_rate
                    - (cfg.learning_rate - cfg.min_learning_rate) * progress;
                processed += 1;
                let path = &paths[center];
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(walk.len());
                for ctx in (lo..hi).filter(|&c| c != pos) {
                    let ctx_item = walk[ctx];
                    grad_in.fill(0.0);
                    let in_row = input.row(ctx_item).to_owned();
                    for (&node, &code) in path.nodes.iter().zip(&path.codes) {
                        let out_row = output.row(node);
                        let x = in_row.dot(&out_row);
                        // branch 0 is the positive class
                        let label = 1.0 - code as f64;
                        loss += if code == 0 { softplus(-x) } else { softplus(x) };
                        let g = (label - sigmoid(x)) * lr;
                        grad_in.scaled_add(g, &out_row);
                        output.row_mut(node).scaled_add(g, &in_row);
                    }
                    Zip::from(input.row_mut(ctx_item))
                        .and(&grad_in)
                        .for_each(|v, &g| *v += g);
                    pairs += 1;
                }
            }
        }
        epoch_losses.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
    }
    let embeddings = EmbeddingTable::from_array(input);
    if !embeddings.is_finite() {
        return Err(Error::Numeric("skipgram produced non-finite embeddings".into()));
    }
    Ok(SkipGramOutcome {
        embeddings,
        epoch_losses,
    })
}
