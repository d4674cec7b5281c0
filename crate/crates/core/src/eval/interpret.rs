use std::fmt::Write as _;

use log::warn;
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{Model, Vocab};

/// Contribution vector of POI meta word `w`: `ReLU(W3 m_w + b3)`.
pub fn word_contribution(w: usize, model: &Model) -> Result<Array1<f64>> {
    let p = &model.params;
    if w >= p.poi_meta_emb.rows() {
        return Err(Error::Data(format!("unknown word id {w}")));
    }
    let z = p.w3.dot(&p.poi_meta_emb.row(w)) + &p.b3;
    Ok(z.mapv_into(|v| if v > 0.0 { v } else { 0.0 }))
}

fn contributions(model: &Model) -> Array2<f64> {
    let p = &model.params;
    let mut z = p.poi_meta_emb.as_array().dot(&p.w3.t());
    z += &p.b3;
    z.mapv_into(|v| if v > 0.0 { v } else { 0.0 })
}

fn ranked(omega: &Array2<f64>, totals: &Array1<f64>, i: usize, top_n: usize) -> Vec<(usize, f64)> {
    let mut words: Vec<(usize, f64)> = (0..omega.nrows())
        .filter(|&w| totals[w] > 0.0)
        .map(|w| (w, omega[[w, i]] / totals[w]))
        .collect();
    words.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    words.truncate(top_n);
    words
}

/// Top words of hidden dimension `i` by `kappa_i(w) = omega_w(i) / sum_j omega_w(j)`,
/// ties by word id. Words whose contribution vector is all zero are left out.
pub fn dimension_keywords(i: usize, top_n: usize, model: &Model) -> Result<Vec<(usize, f64)>> {
    if i >= model.hp.dim {
        return Err(Error::Config(format!("dimension {i} out of range 0..{}", model.hp.dim)));
    }
    let omega = contributions(model);
    let totals = omega.sum_axis(Axis(1));
    let out = ranked(&omega, &totals, i, top_n);
    if out.is_empty() {
        warn!("no word has a nonzero contribution");
    }
    Ok(out)
}

/// Keyword lists for every dimension.
pub fn all_dimension_keywords(top_n: usize, model: &Model) -> Vec<Vec<(usize, f64)>> {
    let omega = contributions(model);
    let totals = omega.sum_axis(Axis(1));
    if totals.iter().all(|&t| t <= 0.0) {
        warn!("no word has a nonzero contribution");
    }
    (0..model.hp.dim).map(|i| ranked(&omega, &totals, i, top_n)).collect()
}

/// `dims.txt`: a `# dimension i` header per dimension, then `word<TAB>kappa`.
pub fn dims_text(tables: &[Vec<(usize, f64)>], vocab: &Vocab) -> String {
    let mut out = String::new();
    for (i, words) in tables.iter().enumerate() {
        let _ = writeln!(out, "# dimension {i}");
        for &(w, k) in words {
            let _ = writeln!(out, "{}\t{k:.6}", vocab.words[w]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingTable;
    use crate::model::{Hyperparams, MetaSets, Parameters, VocabSizes};
    use ndarray::array;

    fn model(words: Array2<f64>, w3: Array2<f64>, b3: Array1<f64>) -> Model {
        let d = w3.nrows();
        let sizes = VocabSizes { users: 1, pois: 1, items: 0, words: words.nrows() };
        let mut p = Parameters::zeros(sizes, d);
        p.poi_meta_emb = EmbeddingTable::from_array(words);
        p.w3 = w3;
        p.b3 = b3;
        let hp = Hyperparams { dim: d, ..Hyperparams::default() };
        Model::new(hp, p, MetaSets { poi_words: vec![vec![]], user_items: vec![vec![]] }).unwrap()
    }

    #[test]
    fn contribution_examples() {
        let zero = model(array![[1.0, 2.0]], Array2::zeros((2, 2)), array![0.0, 0.0]);
        assert_eq!(word_contribution(0, &zero).unwrap(), array![0.0, 0.0]);
        assert!(word_contribution(1, &zero).is_err());
        // W3 m + b3 = (1 - 2 + 0.5, 3*1 + 0) = (-0.5, 3)
        let m = model(array![[1.0, 2.0]], array![[1.0, -1.0], [3.0, 0.0]], array![0.5, 0.0]);
        assert_eq!(word_contribution(0, &m).unwrap(), array![0.0, 3.0]);
    }

    #[test]
    fn five_word_table_matches_brute_force() {
        let words = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.2, 0.1, 0.9], [-1.0, -1.0, -1.0]];
        let w3 = array![[1.0, 0.5, 0.0], [0.0, 1.0, 0.3], [0.4, 0.0, 1.0]];
        let m = model(words.clone(), w3.clone(), array![0.0, 0.0, 0.0]);
        for i in 0..3 {
            let mut oracle = Vec::new();
            for w in 0..5 {
                let omega: Vec<f64> = (0..3)
                    .map(|r| (0..3).map(|c| w3[[r, c]] * words[[w, c]]).sum::<f64>().max(0.0))
                    .collect();
                let total: f64 = omega.iter().sum();
                if total > 0.0 {
                    oracle.push((w, omega[i] / total));
                }
            }
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let got = dimension_keywords(i, 10, &m).unwrap();
            assert_eq!(got.len(), 4, "word 4 contributes nothing");
            for (g, o) in got.iter().zip(&oracle) {
                assert_eq!(g.0, o.0);
                assert!((g.1 - o.1).abs() < 1e-12);
            }
        }
        let tables = all_dimension_keywords(10, &m);
        for w in 0..4 {
            let sum: f64 = tables.iter().flatten().filter(|e| e.0 == w).map(|e| e.1).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert_eq!(dimension_keywords(0, 2, &m).unwrap().len(), 2);
        assert!(dimension_keywords(3, 2, &m).is_err());
    }

    #[test]
    fn single_word_and_all_zero() {
        let m = model(array![[1.0, 3.0]], Array2::eye(2), array![0.0, 0.0]);
        assert_eq!(dimension_keywords(1, 10, &m).unwrap(), vec![(0, 0.75)]);
        let dead = model(array![[-1.0, -3.0]], Array2::eye(2), array![0.0, 0.0]);
        assert!(dimension_keywords(0, 10, &dead).unwrap().is_empty());
        let vocab = Vocab { words: vec!["cafe".into()], ..Vocab::default() };
        assert_eq!(dims_text(&all_dimension_keywords(5, &m), &vocab), "# dimension 0\ncafe\t0.250000\n# dimension 1\ncafe\t0.750000\n");
    }
}
