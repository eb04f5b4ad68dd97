use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::csr::{normalize_adjacency, CsrMatrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which split a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A node-classification graph: raw symmetric adjacency without self-loops,
/// dense features, labels and disjoint split masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDataset {
    pub adjacency: CsrMatrix,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl GraphDataset {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn mask(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train_mask,
            Split::Val => &self.val_mask,
            Split::Test => &self.test_mask,
        }
    }

    pub fn normalized_adjacency(&self, add_self_loops: bool) -> Result<CsrMatrix> {
        normalize_adjacency(&self.adjacency, add_self_loops)
    }

    /// Checks every invariant of the type.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.adjacency.n_rows() != n || self.adjacency.n_cols() != n || self.features.rows() != n
        {
            return Err(Error::Structural(
                "adjacency, features and labels disagree on n".into(),
            ));
        }
        if !self.adjacency.is_symmetric() {
            return Err(Error::Structural("adjacency is not symmetric".into()));
        }
        if (0..n).any(|i| self.adjacency.get(i, i).is_some()) {
            return Err(Error::Structural(
                "raw adjacency must not contain self-loops".into(),
            ));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Structural(format!(
                "label {l} >= n_classes {}",
                self.n_classes
            )));
        }
        for mask in [&self.train_mask, &self.val_mask, &self.test_mask] {
            if mask.len() != n {
                return Err(Error::Structural(
                    "mask length differs from node count".into(),
                ));
            }
        }
        if (0..n).any(|i| {
            [self.train_mask[i], self.val_mask[i], self.test_mask[i]]
                .iter()
                .filter(|&&b| b)
                .count()
                > 1
        }) {
            return Err(Error::Structural("split masks overlap".into()));
        }
        Ok(())
    }

    pub fn set_splits(&mut self, splits: &[Option<Split>]) {
        self.train_mask = splits.iter().map(|s| *s == Some(Split::Train)).collect();
        self.val_mask = splits.iter().map(|s| *s == Some(Split::Val)).collect();
        self.test_mask = splits.iter().map(|s| *s == Some(Split::Test)).collect();
    }

    pub fn splits(&self) -> Vec<Option<Split>> {
        (0..self.n_nodes())
            .map(|i| {
                if self.train_mask[i] {
                    Some(Split::Train)
                } else if self.val_mask[i] {
                    Some(Split::Val)
                } else if self.test_mask[i] {
                    Some(Split::Test)
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Deterministic 60/20/20 split stratified by label.
pub fn stratified_split(labels: &[usize], n_classes: usize, seed: u64) -> Vec<Option<Split>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![None; labels.len()];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let k = members.len();
        let n_train = k * 6 / 10;
        let n_val = k * 2 / 10;
        for (pos, &node) in members.iter().enumerate() {
            out[node] = Some(if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    out
}
