//! POI embedding pre-training: biased random walks over the POI transition
//! graph, SkipGram with hierarchical softmax over the walks, and user
//! embeddings initialized from the POIs each user visited.

mod skipgram;
mod walks;

use ndarray::Array1;

use crate::data::{Dataset, Segment, Split};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

pub use skipgram::{huffman_paths, train_skipgram, HuffmanPath, SkipGramConfig, SkipGramOutcome};
pub use walks::{
    generate_walks, geo_kernel, walk_transition_distribution, WalkConfig, WalkSampler,
};

/// `u_u = (1/|L_u|) * sum_j f_j^u q_j` over the user's training check-ins,
/// i.e. the mean POI embedding of those check-ins.
pub fn init_user_embeddings(
    ds: &Dataset,
    split: &Split,
    poi_emb: &EmbeddingTable,
) -> Result<EmbeddingTable> {
    if poi_emb.rows() != ds.num_pois() {
        return Err(Error::DimMismatch {
            expected: ds.num_pois(),
            got: poi_emb.rows(),
        });
    }
    let mut users = EmbeddingTable::zeros(ds.num_users(), poi_emb.dim());
    for u in 0..ds.num_users() {
        let train = split.segment(ds, u, Segment::Train);
        if train.is_empty() {
            return Err(Error::Data(format!(
                "user {} has no training check-ins",
                ds.users[u].user_id
            )));
        }
        let mut freq = vec![0u32; ds.num_pois()];
        for v in train {
            freq[v.poi] += 1;
        }
        let mut acc = Array1::<f64>::zeros(poi_emb.dim());
        for (poi, &f) in freq.iter().enumerate().filter(|(_, &f)| f > 0) {
            acc.scaled_add(f as f64, &poi_emb.row(poi));
        }
        users.row_mut(u).assign(&(acc / train.len() as f64));
    }
    Ok(users)
}
