//! Numerical check that student-layer gradients depend on deeper teacher
//! weights once the distillation term is active.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{abkd_loss, modified_abkd_mask, total_loss, AbkdHead};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::gnn::{supervised_loss, GcnModel};
use crate::graph::CsrMatrix;
use crate::tensor::Tensor;

/// Which factor of `A ⊙ D` is allowed to carry gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingPath {
    /// Learned attention and dissimilarity both differentiated.
    Full,
    /// `D` detached.
    AttentionOnly,
    /// `A` detached.
    DissimilarityOnly,
    /// `A` replaced by the last-pair indicator.
    LastPairMask,
}

/// Everything needed to rebuild the student objective.
#[derive(Debug, Clone, Copy)]
pub struct CouplingProbe<'a> {
    pub teacher: &'a GcnModel,
    pub student: &'a GcnModel,
    pub head: &'a AbkdHead,
    pub a_hat: &'a Arc<CsrMatrix>,
    pub features: &'a Tensor,
    pub labels: &'a [usize],
    pub mask: &'a [bool],
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub teacher_layer: usize,
    pub student_layer: usize,
    pub path: CouplingPath,
    pub beta: f64,
    /// `‖g₁‖_F` at the unperturbed teacher.
    pub baseline_grad_norm: f64,
    /// `‖g₁ − g₂‖_F`
    pub coupling: f64,
}

impl CouplingReport {
    pub fn coupled(&self, threshold: f64) -> bool {
        self.coupling > threshold
    }
}

/// Gradient of `CE + β·L_abkd` with respect to student layer `j`, with the
/// teacher's pre-activations treated as constants.
pub fn student_layer_gradient(
    probe: &CouplingProbe<'_>,
    teacher_pre: &[Tensor],
    j: usize,
    path: CouplingPath,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(probe.features.clone());
    let fw = probe.student.forward_on(&mut tape, probe.a_hat, x, true)?;
    let ce = supervised_loss(&mut tape, fw.logits, probe.labels, probe.mask)?;
    let loss = if probe.beta == 0.0 {
        ce
    } else {
        let hv = probe.head.attach(&mut tape, true);
        let t: Vec<_> = teacher_pre
            .iter()
            .map(|z| tape.constant(z.clone()))
            .collect();
        let s = &fw.pre_activations;
        let kd = match path {
            CouplingPath::LastPairMask => {
                let a = tape.constant(modified_abkd_mask(t.len(), s.len())?);
                let d = probe.head.dissimilarity_map(&mut tape, &hv, &t, s)?;
                abkd_loss(&mut tape, a, d)?
            }
            _ => {
                let mut a = probe.head.attention_map(&mut tape, &hv, &t, s)?;
                let mut d = probe.head.dissimilarity_map(&mut tape, &hv, &t, s)?;
                match path {
                    CouplingPath::AttentionOnly => d = tape.detach(d),
                    CouplingPath::DissimilarityOnly => a = tape.detach(a),
                    _ => {}
                }
                abkd_loss(&mut tape, a, d)?
            }
        };
        total_loss(&mut tape, ce, kd, probe.beta)?
    };
    let grads = tape.backward(loss)?;
    Ok(grads.get_or_zeros(fw.weights[j], &probe.student.weights()[j]))
}

/// Perturbs teacher layer `i` by `δ ~ U[-1, 1]·1e-2` and reports how far the
/// gradient of student layer `j` moves. Requires `j < i`.
pub fn verify_theorem1(
    probe: &CouplingProbe<'_>,
    i: usize,
    j: usize,
    path: CouplingPath,
    seed: u64,
) -> Result<CouplingReport> {
    let t_l = probe.teacher.n_layers();
    let s_l = probe.student.n_layers();
    if i >= t_l || j >= s_l {
        return Err(Error::Parameter(format!(
            "layer pair ({i}, {j}) out of range for {t_l} teacher and {s_l} student layers"
        )));
    }
    if j >= i {
        return Err(Error::Parameter(format!(
            "need student layer {j} < teacher layer {i}"
        )));
    }
    let base_pre = probe
        .teacher
        .forward(probe.a_hat, probe.features, true)?
        .pre_activations;
    let g1 = student_layer_gradient(probe, &base_pre, j, path)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed = probe.teacher.clone();
    let w = &mut perturbed.weights_mut()[i];
    let delta = Tensor::uniform(w.rows(), w.cols(), -1.0, 1.0, &mut rng).scale(1e-2);
    w.add_assign(&delta)?;
    let pert_pre = perturbed
        .forward(probe.a_hat, probe.features, true)?
        .pre_activations;
    let g2 = student_layer_gradient(probe, &pert_pre, j, path)?;

    Ok(CouplingReport {
        teacher_layer: i,
        student_layer: j,
        path,
        beta: probe.beta,
        baseline_grad_norm: g1.frobenius(),
        coupling: g1.sub(&g2)?.frobenius(),
    })
}
