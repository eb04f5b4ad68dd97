//! Bias-free multi-layer GCN, `Z_l = Â H_{l−1} W_l`, with ReLU on hidden
//! layers and identity on the last. Every layer's pre-activation `Z_l` can be
//! captured for distillation.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{load_tensors, save_tensors};
use crate::error::{Error, Result};
use crate::graph::CsrMatrix;
use crate::tensor::Tensor;

/// Depth and hidden width, e.g. `3L-64H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcnArch {
    pub layers: usize,
    pub hidden: usize,
}

impl GcnArch {
    pub fn new(layers: usize, hidden: usize) -> Self {
        Self { layers, hidden }
    }

    /// Layer widths `[f, h, …, h, c]`.
    pub fn dims(&self, in_dim: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(
            self.hidden,
            self.layers.saturating_sub(1),
        ));
        dims.push(n_classes);
        dims
    }
}

impl std::fmt::Display for GcnArch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}L-{}H", self.layers, self.hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    weights: Vec<Tensor>,
}

/// Plain (tape-free) forward result.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub logits: Tensor,
    /// One `n×d_l` tensor per layer when captured, empty otherwise.
    pub pre_activations: Vec<Tensor>,
}

/// Forward result recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeForward {
    pub logits: Var,
    pub pre_activations: Vec<Var>,
    /// Leaf handles of the layer weights, in layer order.
    pub weights: Vec<Var>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub dims: Vec<usize>,
    pub n_layers: usize,
    pub seed: u64,
}

impl GcnModel {
    pub fn from_weights(weights: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Structural("a GCN needs at least one layer".into()));
        }
        for pair in weights.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::Structural(format!(
                    "layer dims do not chain: {}x{} then {}x{}",
                    pair[0].rows(),
                    pair[0].cols(),
                    pair[1].rows(),
                    pair[1].cols()
                )));
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite layer weight".into()));
        }
        Ok(Self { weights })
    }

    /// Glorot-uniform layers with widths `dims[0] → dims[1] → …`.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Structural("need input and output dims".into()));
        }
        let weights = dims
            .windows(2)
            .map(|d| Tensor::glorot_uniform(d[0], d[1], rng))
            .collect();
        Self::from_weights(weights)
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().unwrap().cols()
    }

    /// Output width of every layer.
    pub fn layer_widths(&self) -> Vec<usize> {
        self.weights.iter().map(Tensor::cols).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layer_widths());
        d
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, a_hat: &CsrMatrix, rows: usize, cols: usize) -> Result<()> {
        if a_hat.n_rows() != rows || a_hat.n_cols() != rows {
            return Err(Error::Structural(format!(
                "adjacency is {}x{} but features have {rows} rows",
                a_hat.n_rows(),
                a_hat.n_cols()
            )));
        }
        if cols != self.in_dim() {
            return Err(Error::Structural(format!(
                "features have {cols} columns, first layer expects {}",
                self.in_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, a_hat: &CsrMatrix, x: &Tensor, capture: bool) -> Result<ForwardRecord> {
        self.check_input(a_hat, x.rows(), x.cols())?;
        let last = self.weights.len() - 1;
        let mut pre_activations = Vec::new();
        let mut h = x.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let z = a_hat.spmm(&h.matmul(w)?)?;
            h = if l == last {
                z.clone()
            } else {
                z.map(|v| if v > 0.0 { v } else { 0.0 })
            };
            if capture {
                pre_activations.push(z);
            }
        }
        Ok(ForwardRecord {
            logits: h,
            pre_activations,
        })
    }

    /// Records the forward pass. Weights become trainable leaves when
    /// `trainable`, constants otherwise.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        a_hat: &Arc<CsrMatrix>,
        x: Var,
        trainable: bool,
    ) -> Result<TapeForward> {
        let (rows, cols) = tape.value(x).shape();
        self.check_input(a_hat, rows, cols)?;
        let weights: Vec<Var> = self
            .weights
            .iter()
            .map(|w| {
                if trainable {
                    tape.param(w.clone())
                } else {
                    tape.constant(w.clone())
                }
            })
            .collect();
        let last = weights.len() - 1;
        let mut pre_activations = Vec::with_capacity(weights.len());
        let mut h = x;
        for (l, &w) in weights.iter().enumerate() {
            let hw = tape.matmul(h, w)?;
            let z = tape.spmm(a_hat, hw)?;
            pre_activations.push(z);
            h = if l == last { z } else { tape.relu(z) };
        }
        Ok(TapeForward {
            logits: h,
            pre_activations,
            weights,
        })
    }

    pub fn save(&self, dir: &Path, name: &str, seed: u64) -> Result<()> {
        save_tensors(&dir.join(format!("{name}.bin")), &self.weights)?;
        let manifest = ModelManifest {
            dims: self.dims(),
            n_layers: self.n_layers(),
            seed,
        };
        std::fs::write(
            dir.join(format!("{name}.json")),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, name: &str) -> Result<(Self, ModelManifest)> {
        let manifest_path = dir.join(format!("{name}.json"));
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path));
        }
        let manifest: ModelManifest =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        let model = Self::from_weights(load_tensors(&dir.join(format!("{name}.bin")))?)?;
        if model.dims() != manifest.dims {
            return Err(Error::Checkpoint(format!(
                "manifest dims {:?} disagree with tensors {:?}",
                manifest.dims,
                model.dims()
            )));
        }
        Ok((model, manifest))
    }
}

/// Mean cross-entropy of `logits` over masked nodes, recorded on the tape.
pub fn supervised_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mask: &[bool],
) -> Result<Var> {
    tape.cross_entropy(logits, labels, mask)
}

/// Value-only cross-entropy, identical to [`supervised_loss`]'s forward value.
pub fn cross_entropy_value(logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let l = tape.cross_entropy(z, labels, mask)?;
    Ok(tape.scalar(l))
}

/// Fraction of masked nodes whose arg-max logit (lowest index on ties)
/// equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<f64> {
    if labels.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(Error::Structural(
            "accuracy: labels/mask length differs from logits".into(),
        ));
    }
    let selected = mask.iter().filter(|&&m| m).count();
    if selected == 0 {
        return Err(Error::Contract("accuracy mask selects no nodes".into()));
    }
    let pred = logits.row_argmax();
    let correct = (0..labels.len())
        .filter(|&i| mask[i] && pred[i] == labels[i])
        .count();
    Ok(correct as f64 / selected as f64)
}
