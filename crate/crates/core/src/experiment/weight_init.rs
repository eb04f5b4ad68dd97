//! Single-layer networks seeded from the student layer the attention map
//! points at.
//!
//! The chosen layer `W_j` of a trained student has shape `d_{j}×d_{j+1}`,
//! which generally differs from `f×c`. The donor's earlier layers are
//! multiplied into a frozen input map and its later layers into a frozen
//! output map, giving `logits = Â X W_in W_j W_out` with only `W_j` trainable.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{mean_std, sub_seed, CORE_STREAM};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::gnn::{accuracy, supervised_loss, GcnModel};
use crate::tensor::Tensor;
use crate::train::{AdamConfig, AdamState, Distiller, TrainData, TrainReport};

/// Majority vote over the row-wise argmax of `attention`; ties go to the
/// deeper student layer.
pub fn select_layer(attention: &Tensor) -> Result<usize> {
    if attention.is_empty() {
        return Err(Error::Structural("empty attention map".into()));
    }
    let mut votes = vec![0usize; attention.cols()];
    for j in attention.row_argmax() {
        votes[j] += 1;
    }
    let top = *votes.iter().max().expect("non-empty");
    Ok(votes.iter().rposition(|&v| v == top).expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedGcn {
    pub input: Tensor,
    pub core: Tensor,
    pub output: Tensor,
}

fn chain(ws: &[Tensor], dim: usize) -> Result<Tensor> {
    ws.iter()
        .try_fold(Tensor::identity(dim), |acc, w| acc.matmul(w))
}

impl FactorizedGcn {
    /// Frozen maps from `donor`'s layers before and after `layer`, with that
    /// layer's weights as the core.
    pub fn from_donor(donor: &GcnModel, layer: usize) -> Result<Self> {
        let ws = donor.weights();
        if layer >= ws.len() {
            return Err(Error::Parameter(format!(
                "layer {layer} out of range for {} layers",
                ws.len()
            )));
        }
        Ok(Self {
            input: chain(&ws[..layer], donor.in_dim())?,
            core: ws[layer].clone(),
            output: chain(&ws[layer + 1..], ws[layer].cols())?,
        })
    }

    pub fn with_core(&self, core: Tensor) -> Result<Self> {
        if core.shape() != self.core.shape() {
            return Err(Error::Structural("core shape differs".into()));
        }
        Ok(Self {
            core,
            ..self.clone()
        })
    }

    pub fn logits(&self, data: &TrainData) -> Result<Tensor> {
        let h = data
            .features
            .matmul(&self.input)?
            .matmul(&self.core)?
            .matmul(&self.output)?;
        data.a_hat.spmm(&h)
    }

    /// Trains the core with Adam and keeps the best-validation core. Returns
    /// the model and its test accuracy.
    pub fn train_core(&self, data: &TrainData, epochs: usize, lr: f64) -> Result<(Self, f64)> {
        if epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        let projected = data.features.matmul(&self.input)?;
        let mut core = self.core.clone();
        let mut opt = AdamState::new(AdamConfig::with_lr(lr), &[&core])?;
        let names = ["core".to_string()];
        let mut best: Option<(f64, f64, Tensor)> = None;
        for epoch in 0..epochs {
            let mut tape = Tape::new();
            let x = tape.constant(projected.clone());
            let w = tape.param(core.clone());
            let out = tape.constant(self.output.clone());
            let h = tape.matmul(x, w)?;
            let h = tape.matmul(h, out)?;
            let logits = tape.spmm(&data.a_hat, h)?;
            let loss = supervised_loss(&mut tape, logits, &data.labels, &data.train_mask)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "single-layer loss is not finite".into(),
                });
            }
            let lv = tape.value(logits);
            let val = accuracy(lv, &data.labels, &data.val_mask)?;
            if best.as_ref().is_none_or(|b| val > b.0) {
                best = Some((
                    val,
                    accuracy(lv, &data.labels, &data.test_mask)?,
                    core.clone(),
                ));
            }
            let g = tape.backward(loss)?.get_or_zeros(w, &core);
            opt.step(&mut [&mut core], &[g], &names)
                .map_err(|e| match e {
                    Error::Numeric(detail) => Error::Divergence { epoch, detail },
                    other => other,
                })?;
        }
        let (_, test, core) = best.expect("at least one epoch");
        Ok((self.with_core(core)?, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightInitSeed {
    pub seed: u64,
    pub selected_layer: usize,
    pub initialized_trained: f64,
    pub random_trained: f64,
    pub initialized_untrained: f64,
}

#[derive(Debug, Clone)]
pub struct WeightInitResult {
    pub per_seed: Vec<WeightInitSeed>,
    /// Means of (initialized-trained, random-trained, initialized-untrained).
    pub means: [f64; 3],
    pub csv_path: PathBuf,
}

/// For each seed of `cfg`, reads the ABKD student and its last attention
/// snapshot from `run_dir`, picks a layer and compares the three
/// single-layer variants. Untrained accuracy is measured on the test mask.
pub fn cmd_weight_init(cfg: &ExperimentConfig, run_dir: &Path) -> Result<WeightInitResult> {
    cfg.validate()?;
    let dist_dir = run_dir.join(Distiller::Abkd.name());
    let per_seed: Vec<WeightInitSeed> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<WeightInitSeed> {
            let report = TrainReport::load(&dist_dir.join(format!("report_{seed}.json")))?;
            let snap = report.snapshots.last().ok_or_else(|| {
                Error::MissingArtifact(dist_dir.join(format!("report_{seed}.json (snapshots)")))
            })?;
            let (student, _) = GcnModel::load(&dist_dir.join(format!("seed_{seed}")), "student")?;
            let layer = select_layer(&snap.attention)?;

            let ds = cfg.dataset.load(seed)?;
            let data = TrainData::from_dataset(&ds, cfg.add_self_loops)?;
            if student.in_dim() != data.n_features() || student.out_dim() != data.n_classes {
                return Err(Error::Config(
                    "saved student does not match the dataset".into(),
                ));
            }
            let init = FactorizedGcn::from_donor(&student, layer)?;
            let untrained = accuracy(&init.logits(&data)?, &data.labels, &data.test_mask)?;
            let (_, trained) = init.train_core(&data, cfg.weight_init_epochs, cfg.lr)?;
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, CORE_STREAM));
            let (r, c) = init.core.shape();
            let random = init.with_core(Tensor::glorot_uniform(r, c, &mut rng))?;
            let (_, random_trained) = random.train_core(&data, cfg.weight_init_epochs, cfg.lr)?;
            Ok(WeightInitSeed {
                seed,
                selected_layer: layer,
                initialized_trained: trained,
                random_trained,
                initialized_untrained: untrained,
            })
        })
        .collect::<Result<_>>()?;

    let col = |f: fn(&WeightInitSeed) -> f64| mean_std(&per_seed.iter().map(f).collect::<Vec<_>>());
    let stats = [
        col(|s| s.initialized_trained),
        col(|s| s.random_trained),
        col(|s| s.initialized_untrained),
    ];
    let mut csv = String::from(
        "seed,selected_layer,initialized_trained,random_trained,initialized_untrained\n",
    );
    for s in &per_seed {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6}",
            s.seed,
            s.selected_layer,
            s.initialized_trained,
            s.random_trained,
            s.initialized_untrained
        );
    }
    let _ = writeln!(
        csv,
        "mean,,{:.6},{:.6},{:.6}",
        stats[0].0, stats[1].0, stats[2].0
    );
    let _ = writeln!(
        csv,
        "std,,{:.6},{:.6},{:.6}",
        stats[0].1, stats[1].1, stats[2].1
    );
    let csv_path = run_dir.join("weight_init.csv");
    std::fs::write(&csv_path, csv)?;
    Ok(WeightInitResult {
        per_seed,
        means: [stats[0].0, stats[1].0, stats[2].0],
        csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column_wins() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(select_layer(&a).unwrap(), 1);
    }

    #[test]
    fn majority_then_deeper() {
        let a = Tensor::from_rows(&[vec![0.6, 0.4], vec![0.7, 0.3], vec![0.1, 0.9]]).unwrap();
        assert_eq!(select_layer(&a).unwrap(), 0);
        let tie = Tensor::from_rows(&[vec![0.6, 0.4], vec![0.1, 0.9]]).unwrap();
        assert_eq!(select_layer(&tie).unwrap(), 1);
    }

    #[test]
    fn factorization_reproduces_linear_donor() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let donor = GcnModel::glorot(&[5, 3, 4, 2], &mut rng).unwrap();
        for layer in 0..3 {
            let f = FactorizedGcn::from_donor(&donor, layer).unwrap();
            assert_eq!(f.input.shape().0, 5);
            assert_eq!(f.output.shape().1, 2);
            let full = f.input.matmul(&f.core).unwrap().matmul(&f.output).unwrap();
            let direct = donor.weights()[0]
                .matmul(&donor.weights()[1])
                .unwrap()
                .matmul(&donor.weights()[2])
                .unwrap();
            assert!(full.max_abs_diff(&direct) < 1e-12);
        }
        assert!(FactorizedGcn::from_donor(&donor, 3).is_err());
    }
}
