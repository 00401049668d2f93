//! Recommendation head: item encoding, the item embedding table, and
//! inner-product scoring.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::params::PolicyParams;
use super::transformer::forward_segment;
use super::tree::SegmentTree;
use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A final hidden state, `d` wide.
pub type HiddenState<F = f32> = Array1<F>;

/// How an item prompt's hidden states become one embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Last,
    Mean,
    Max,
}

impl Pooling {
    pub fn pool<F: Scalar>(self, rows: &[ArrayView1<F>]) -> Array1<F> {
        let last = rows.last().expect("pooling needs at least one row");
        match self {
            Pooling::Last => last.to_owned(),
            Pooling::Mean => {
                let mut acc = Array1::zeros(last.len());
                for r in rows {
                    acc += r;
                }
                acc / F::of(rows.len() as f64)
            }
            Pooling::Max => {
                let mut acc = rows[0].to_owned();
                for r in &rows[1..] {
                    acc.zip_mut_with(r, |a, &b| {
                        if b > *a {
                            *a = b
                        }
                    });
                }
                acc
            }
        }
    }

    /// Gradient of `pool(rows)` routed back to each row; `None` for rows that
    /// receive nothing. Max ties go to the earliest row.
    pub fn pool_backward<F: Scalar>(
        self,
        rows: &[ArrayView1<F>],
        grad: ArrayView1<F>,
    ) -> Vec<Option<Array1<F>>> {
        let n = rows.len();
        let mut out: Vec<Option<Array1<F>>> = vec![None; n];
        match self {
            Pooling::Last => out[n - 1] = Some(grad.to_owned()),
            Pooling::Mean => {
                let g = grad.mapv(|x| x / F::of(n as f64));
                out.iter_mut().for_each(|o| *o = Some(g.clone()));
            }
            Pooling::Max => {
                for j in 0..grad.len() {
                    let mut best = 0;
                    for (i, r) in rows.iter().enumerate() {
                        if r[j] > rows[best][j] {
                            best = i;
                        }
                    }
                    out[best].get_or_insert_with(|| Array1::zeros(grad.len()))[j] += grad[j];
                }
            }
        }
        out
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Last => "last",
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        })
    }
}

/// Encodes an item prompt into the shared hidden space.
pub fn encode_item<F: Scalar>(
    params: &PolicyParams<F>,
    item_prompt: &TokenSequence,
    strategy: Pooling,
) -> Result<HiddenState<F>> {
    if item_prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let seg = forward_segment(params, item_prompt.as_slice(), None)?;
    let rows: Vec<ArrayView1<F>> = seg.hidden.rows().into_iter().collect();
    Ok(strategy.pool(&rows))
}

/// Encodes many item prompts that share `header`, forwarding the header once.
/// Prompts that do not start with the header are encoded on their own.
pub fn encode_items<F: Scalar>(
    params: &PolicyParams<F>,
    header: &TokenSequence,
    prompts: &[TokenSequence],
    strategy: Pooling,
) -> Result<Array2<F>> {
    let d = params.config.width;
    let mut out = Array2::zeros((prompts.len(), d));
    let mut tree = SegmentTree::new(params);
    let root = if header.is_empty() {
        None
    } else {
        Some(tree.push(None, header.as_slice())?)
    };
    for (i, prompt) in prompts.iter().enumerate() {
        let emb = match root {
            Some(r) if prompt.starts_with(header) && prompt.len() > header.len() => {
                let id = tree.push(Some(r), &prompt.as_slice()[header.len()..])?;
                let e = tree.pooled(id, strategy);
                // Keep memory flat across large catalogs.
                tree.truncate(id);
                e
            }
            _ => encode_item(params, prompt, strategy)?,
        };
        out.row_mut(i).assign(&emb);
    }
    Ok(out)
}

/// `|V| x d` item embeddings plus bookkeeping about how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbeddingTable<F = f32> {
    pub embeddings: Array2<F>,
    /// Incremented by every full refresh.
    pub generation: u64,
    /// Parameter version the last full refresh used.
    pub params_version: u64,
    pub pooling: Pooling,
}

impl<F: Scalar> ItemEmbeddingTable<F> {
    pub fn new(embeddings: Array2<F>, pooling: Pooling) -> Self {
        ItemEmbeddingTable {
            embeddings,
            generation: 0,
            params_version: 0,
            pooling,
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn set_row(&mut self, item: usize, emb: ArrayView1<F>) {
        self.embeddings.row_mut(item).assign(&emb);
    }
}

/// `s(v) = <h_T, H_V[v]>` for every item in one matrix-vector product.
pub fn score_items<F: Scalar>(h: ArrayView1<F>, table: &ItemEmbeddingTable<F>) -> Result<Array1<F>> {
    if h.len() != table.width() {
        return Err(Error::DimensionMismatch {
            expected: table.width(),
            actual: h.len(),
        });
    }
    Ok(table.embeddings.dot(&h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use ndarray::array;

    #[test]
    fn last_pool_of_single_row_is_identity() {
        let r = array![1.0, -2.0, 3.0];
        for s in [Pooling::Last, Pooling::Mean, Pooling::Max] {
            assert_eq!(s.pool(&[r.view()]), r);
        }
    }

    #[test]
    fn mean_of_constant_rows_is_the_constant() {
        let r: Array1<f64> = array![0.5, -1.5];
        let rows = vec![r.view(); 4];
        let m = Pooling::Mean.pool(&rows);
        assert!((&m - &r).iter().all(|x: &f64| x.abs() < 1e-15));
    }

    #[test]
    fn max_dominates_mean() {
        let a = array![1.0, -2.0, 0.3];
        let b = array![-1.0, 4.0, 0.2];
        let c = array![0.0, 0.0, 0.9];
        let rows = [a.view(), b.view(), c.view()];
        let mx = Pooling::Max.pool(&rows);
        let mn = Pooling::Mean.pool(&rows);
        assert!(mx.iter().zip(&mn).all(|(x, m)| x >= m));
        assert_eq!(mx, array![1.0, 4.0, 0.9]);
    }

    fn table(rows: Array2<f64>) -> ItemEmbeddingTable<f64> {
        ItemEmbeddingTable::new(rows, Pooling::Last)
    }

    #[test]
    fn orthonormal_rows_pick_the_matching_item() {
        let t = table(Array2::eye(5));
        let h = t.embeddings.row(3).to_owned();
        let s = score_items(h.view(), &t).unwrap();
        assert_eq!(s[3], 1.0);
        assert!(s.iter().enumerate().all(|(i, &x)| i == 3 || x < 1.0));
    }

    #[test]
    fn zero_query_and_linearity() {
        let t = table(Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - 2.5) * (j as f64 + 0.5)));
        let z = score_items(Array1::zeros(3).view(), &t).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        let h = array![0.3, -1.2, 0.7];
        let s1 = score_items(h.view(), &t).unwrap();
        let s2 = score_items((&h * 2.0).view(), &t).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert!(score_items(array![1.0, 2.0].view(), &t).is_err());
    }

    #[test]
    fn shared_header_encoding_matches_direct() {
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            width: 8,
            ff_width: 16,
            max_context: 32,
            init_std: 0.2,
            ..ModelConfig::default()
        };
        let p = PolicyParams::<f64>::init(&cfg, 9).unwrap();
        let header = TokenSequence(vec![10, 11, 12]);
        let prompts = vec![
            TokenSequence(vec![10, 11, 12, 40, 41]),
            TokenSequence(vec![10, 11, 12, 50]),
            TokenSequence(vec![60, 61]),
        ];
        for s in [Pooling::Last, Pooling::Mean, Pooling::Max] {
            let batch = encode_items(&p, &header, &prompts, s).unwrap();
            for (i, pr) in prompts.iter().enumerate() {
                let direct = encode_item(&p, pr, s).unwrap();
                for j in 0..8 {
                    assert!((batch[[i, j]] - direct[j]).abs() < 1e-12);
                }
            }
        }
        assert!(matches!(
            encode_item(&p, &TokenSequence::default(), Pooling::Last),
            Err(Error::EmptyPrompt)
        ));
    }
}
