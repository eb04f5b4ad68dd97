use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Distiller;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Metrics evaluated at the start of an epoch, before its update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cross-entropy on the training mask.
    pub train_ce: f64,
    /// Unweighted auxiliary loss (distillation term) when one is active.
    pub aux_loss: Option<f64>,
    pub total_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// `‖P‖_F` when a distillation head is attached.
    pub subspace_norm: Option<f64>,
}

/// Attention and dissimilarity maps at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub epoch: usize,
    pub attention: Tensor,
    pub dissimilarity: Tensor,
    /// Singular values of the subspace matrix, descending.
    pub subspace_singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub role: String,
    pub distiller: Distiller,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (best validation accuracy, earliest on ties).
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc_at_best: f64,
    pub train_ce_at_best: f64,
    pub snapshots: Vec<MapSnapshot>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Copy with the wall-clock time zeroed, for exact comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn snapshot(&self, epoch: usize) -> Option<&MapSnapshot> {
        self.snapshots.iter().find(|s| s.epoch == epoch)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}
