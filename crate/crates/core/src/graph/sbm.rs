//! Planted-partition stochastic block model with class-informative features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::csr::CsrMatrix;
use super::dataset::{stratified_split, GraphDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub n_per_block: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Feature dimension.
    pub features: usize,
    /// Magnitude of the block indicator added to the Gaussian noise.
    pub signal: f64,
    pub seed: u64,
}

impl SbmParams {
    pub fn validate(&self) -> Result<usize> {
        let n = self
            .n_per_block
            .checked_mul(self.n_blocks)
            .ok_or_else(|| Error::Parameter("n_per_block * n_blocks overflows".into()))?;
        if n == 0 {
            return Err(Error::Parameter("SBM must have at least one node".into()));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !(self.signal >= 0.0 && self.signal.is_finite()) {
            return Err(Error::Parameter(format!(
                "signal must be >= 0, got {}",
                self.signal
            )));
        }
        if self.features == 0 {
            return Err(Error::Parameter(
                "feature dimension must be positive".into(),
            ));
        }
        Ok(n)
    }
}

/// Draws an SBM graph. Node `i` belongs to block `i / n_per_block`; its feature
/// row is `signal * e_{block mod f} + N(0, I)`. Splits are 60/20/20 per block.
pub fn generate_sbm(params: &SbmParams) -> Result<GraphDataset> {
    let n = params.validate()?;
    let block = |i: usize| i / params.n_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let adjacency = CsrMatrix::from_undirected_edges(n, &edges)?;

    let f = params.features;
    let mut data = Vec::with_capacity(n * f);
    for i in 0..n {
        let hot = block(i) % f;
        for k in 0..f {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(noise + if k == hot { params.signal } else { 0.0 });
        }
    }
    let features = Tensor::from_vec(n, f, data)?;
    let labels: Vec<usize> = (0..n).map(block).collect();
    let splits = stratified_split(&labels, params.n_blocks, params.seed.wrapping_add(0x5b11));

    let mut ds = GraphDataset {
        adjacency,
        features,
        labels,
        n_classes: params.n_blocks,
        train_mask: vec![],
        val_mask: vec![],
        test_mask: vec![],
    };
    ds.set_splits(&splits);
    ds.validate()?;
    Ok(ds)
}
