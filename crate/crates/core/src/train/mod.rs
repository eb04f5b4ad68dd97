//! Adam, teacher pretraining and student distillation loops.

mod adam;
mod report;

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use report::{EpochRecord, MapSnapshot, TrainReport};

use crate::abkd::{fitnet_last_layer_mse, total_loss, AbkdHead, AttentionVariant, HeadConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gnn::{accuracy, supervised_loss, GcnModel};
use crate::graph::{CsrMatrix, GraphDataset, Split};
use crate::tensor::Tensor;

/// Full-graph inputs shared by every run on one dataset.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub a_hat: Arc<CsrMatrix>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl TrainData {
    pub fn from_dataset(ds: &GraphDataset, add_self_loops: bool) -> Result<Self> {
        ds.validate()?;
        Ok(Self {
            a_hat: Arc::new(ds.normalized_adjacency(add_self_loops)?),
            features: ds.features.clone(),
            labels: ds.labels.clone(),
            n_classes: ds.n_classes,
            train_mask: ds.mask(Split::Train).to_vec(),
            val_mask: ds.mask(Split::Val).to_vec(),
            test_mask: ds.mask(Split::Test).to_vec(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distiller {
    None,
    Abkd,
    AbkdModified,
    Softkd,
    Fitnet,
}

impl Distiller {
    pub const ALL: [Distiller; 5] = [
        Distiller::None,
        Distiller::Abkd,
        Distiller::AbkdModified,
        Distiller::Softkd,
        Distiller::Fitnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distiller::None => "none",
            Distiller::Abkd => "abkd",
            Distiller::AbkdModified => "abkd_modified",
            Distiller::Softkd => "softkd",
            Distiller::Fitnet => "fitnet",
        }
    }

    pub fn uses_head(self) -> bool {
        matches!(self, Distiller::Abkd | Distiller::AbkdModified)
    }
}

impl std::fmt::Display for Distiller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Distiller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Distiller::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown distiller {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub distiller: Distiller,
    /// Weight of the attention-based term.
    pub beta: f64,
    /// Weight of the SoftKD or FitNet term.
    pub alpha: f64,
    pub head: HeadConfig,
    pub epochs: usize,
    pub lr: f64,
    /// Map snapshot period in epochs; 0 disables snapshots.
    pub snapshot_every: usize,
    /// L2 penalty on the subspace matrix only; 0 disables it.
    pub subspace_weight_decay: f64,
    /// Seeds the head and FitNet projection initialisation.
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            distiller: Distiller::Abkd,
            beta: 10.0,
            alpha: 1.0,
            head: HeadConfig::default(),
            epochs: 200,
            lr: 1e-2,
            snapshot_every: 0,
            subspace_weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Trained student plus the head it was distilled with.
#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: GcnModel,
    pub head: Option<AbkdHead>,
    pub report: TrainReport,
}

/// Supervised training on the train mask; returns the best-validation weights.
pub fn train_teacher(
    model: GcnModel,
    data: &TrainData,
    cfg: &TeacherConfig,
) -> Result<(GcnModel, TrainReport)> {
    let settings = LoopSettings {
        role: "teacher",
        distiller: Distiller::None,
        beta: 0.0,
        alpha: 0.0,
        epochs: cfg.epochs,
        lr: cfg.lr,
        snapshot_every: 0,
        subspace_weight_decay: 0.0,
        seed: cfg.seed,
    };
    let out = run_loop(model, None, None, None, data, &settings)?;
    Ok((out.student, out.report))
}

/// Trains `student` against a frozen `teacher`. A head is created from
/// `cfg.seed` when the distiller needs one and none is supplied.
pub fn distill_student(
    teacher: &GcnModel,
    student: GcnModel,
    head: Option<AbkdHead>,
    data: &TrainData,
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    check_pair(teacher, &student, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let teacher_fw = teacher.forward(&data.a_hat, &data.features, true)?;
    let head = match (cfg.distiller.uses_head(), head) {
        (false, _) => None,
        (true, Some(h)) => {
            if h.teacher_layers() != teacher.n_layers() || h.student_layers() != student.n_layers()
            {
                return Err(Error::Config(
                    "head layer counts do not match teacher/student".into(),
                ));
            }
            Some(h)
        }
        (true, None) => Some(AbkdHead::new(
            &teacher.layer_widths(),
            &student.layer_widths(),
            cfg.head,
            &mut rng,
        )?),
    };
    let proj = (cfg.distiller == Distiller::Fitnet)
        .then(|| Tensor::glorot_uniform(student.out_dim(), teacher.out_dim(), &mut rng));
    let settings = LoopSettings {
        role: "student",
        distiller: cfg.distiller,
        beta: cfg.beta,
        alpha: cfg.alpha,
        epochs: cfg.epochs,
        lr: cfg.lr,
        snapshot_every: cfg.snapshot_every,
        subspace_weight_decay: cfg.subspace_weight_decay,
        seed: cfg.seed,
    };
    let teacher_ctx = TeacherCache {
        pre: teacher_fw.pre_activations,
        probs: teacher_fw.logits.row_softmax(),
    };
    run_loop(student, Some(&teacher_ctx), head, proj, data, &settings)
}

fn check_pair(teacher: &GcnModel, student: &GcnModel, data: &TrainData) -> Result<()> {
    if teacher.in_dim() != data.n_features() || student.in_dim() != data.n_features() {
        return Err(Error::Config(
            "model input width differs from the feature width".into(),
        ));
    }
    if teacher.out_dim() != data.n_classes || student.out_dim() != data.n_classes {
        return Err(Error::Config(
            "model output width differs from the class count".into(),
        ));
    }
    Ok(())
}

struct TeacherCache {
    pre: Vec<Tensor>,
    probs: Tensor,
}

struct LoopSettings {
    role: &'static str,
    distiller: Distiller,
    beta: f64,
    alpha: f64,
    epochs: usize,
    lr: f64,
    snapshot_every: usize,
    subspace_weight_decay: f64,
    seed: u64,
}

/// Singular values of `m`, largest first.
pub fn singular_values(m: &Tensor) -> Vec<f64> {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn run_loop(
    mut model: GcnModel,
    teacher: Option<&TeacherCache>,
    mut head: Option<AbkdHead>,
    mut proj: Option<Tensor>,
    data: &TrainData,
    s: &LoopSettings,
) -> Result<DistillOutcome> {
    if s.epochs == 0 {
        return Err(Error::Parameter("epochs must be >= 1".into()));
    }
    if !(s.beta >= 0.0) || !(s.alpha >= 0.0) || !(s.subspace_weight_decay >= 0.0) {
        return Err(Error::Parameter("loss weights must be non-negative".into()));
    }
    let start = Instant::now();
    let variant = match s.distiller {
        Distiller::AbkdModified => AttentionVariant::LastPairOnly,
        _ => AttentionVariant::Learned,
    };
    let abkd_active = head.is_some() && s.beta > 0.0;

    let mut names: Vec<String> = (0..model.n_layers())
        .map(|l| format!("{}.w{l}", s.role))
        .collect();
    if let Some(h) = &head {
        names.extend(h.param_names());
    }
    if proj.is_some() {
        names.push("fitnet.proj".into());
    }
    let subspace_idx = head
        .as_ref()
        .map(|_| names.len() - 1 - usize::from(proj.is_some()));

    let mut opt = {
        let mut refs: Vec<&Tensor> = model.weights().iter().collect();
        if let Some(h) = &head {
            refs.extend(h.params());
        }
        refs.extend(proj.iter());
        AdamState::new(AdamConfig::with_lr(s.lr), &refs)?
    };

    let mut records = Vec::with_capacity(s.epochs);
    let mut snapshots = Vec::new();
    let mut best: Option<(usize, f64, GcnModel)> = None;

    for epoch in 0..s.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(data.features.clone());
        let fw = model.forward_on(&mut tape, &data.a_hat, x, true)?;
        let ce = supervised_loss(&mut tape, fw.logits, &data.labels, &data.train_mask)?;

        let mut extra: Vec<Var> = Vec::new();
        let (loss, aux) = match (s.distiller, teacher) {
            (Distiller::Abkd | Distiller::AbkdModified, Some(t)) if abkd_active => {
                let h = head.as_ref().expect("head present");
                let hv = h.attach(&mut tape, true);
                extra = hv.all();
                let tv: Vec<Var> = t.pre.iter().map(|z| tape.constant(z.clone())).collect();
                let terms = h.terms(&mut tape, &hv, &tv, &fw.pre_activations, variant)?;
                (
                    total_loss(&mut tape, ce, terms.loss, s.beta)?,
                    Some(terms.loss),
                )
            }
            (Distiller::Softkd, Some(t)) => {
                let soft = tape.soft_cross_entropy(fw.logits, &t.probs, &data.train_mask)?;
                (total_loss(&mut tape, ce, soft, s.alpha)?, Some(soft))
            }
            (Distiller::Fitnet, Some(t)) => {
                let p = tape.param(proj.clone().expect("projection present"));
                extra.push(p);
                let last = *fw.pre_activations.last().expect("at least one layer");
                let target = tape.constant(t.pre.last().expect("teacher layer").clone());
                let mse = fitnet_last_layer_mse(&mut tape, last, target, p)?;
                (total_loss(&mut tape, ce, mse, s.alpha)?, Some(mse))
            }
            _ => (ce, None),
        };

        let logits = tape.value(fw.logits);
        let record = EpochRecord {
            epoch,
            train_ce: tape.scalar(ce),
            aux_loss: aux.map(|a| tape.scalar(a)),
            total_loss: tape.scalar(loss),
            train_acc: accuracy(logits, &data.labels, &data.train_mask)?,
            val_acc: accuracy(logits, &data.labels, &data.val_mask)?,
            test_acc: accuracy(logits, &data.labels, &data.test_mask)?,
            subspace_norm: head.as_ref().map(|h| h.subspace.frobenius()),
        };
        if !record.total_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("{} loss became {}", s.role, record.total_loss),
            });
        }
        log::debug!(
            "{} epoch {epoch}: ce {:.5} aux {:?} val {:.4}",
            s.role,
            record.train_ce,
            record.aux_loss,
            record.val_acc
        );

        let snap_due =
            s.snapshot_every > 0 && (epoch % s.snapshot_every == 0 || epoch + 1 == s.epochs);
        if let (true, Some(h), Some(t)) = (snap_due, &head, teacher) {
            let student_pre: Vec<Tensor> = fw
                .pre_activations
                .iter()
                .map(|&v| tape.value(v).clone())
                .collect();
            let (attention, dissimilarity) = h.maps(&t.pre, &student_pre)?;
            snapshots.push(MapSnapshot {
                epoch,
                attention,
                dissimilarity,
                subspace_singular_values: singular_values(&h.subspace),
            });
        }

        if best.as_ref().is_none_or(|b| record.val_acc > b.1) {
            best = Some((epoch, record.val_acc, model.clone()));
        }
        records.push(record);

        let grads = tape.backward(loss)?;
        let mut grad_list: Vec<Tensor> = fw
            .weights
            .iter()
            .zip(model.weights())
            .map(|(&v, w)| grads.get_or_zeros(v, w))
            .collect();
        {
            let mut like: Vec<&Tensor> = Vec::new();
            if let Some(h) = &head {
                like.extend(h.params());
            }
            like.extend(proj.iter());
            for (k, w) in like.into_iter().enumerate() {
                grad_list.push(match extra.get(k) {
                    Some(&v) => grads.get_or_zeros(v, w),
                    None => Tensor::zeros(w.rows(), w.cols()),
                });
            }
        }
        if let (Some(idx), Some(h)) = (subspace_idx, &head) {
            if s.subspace_weight_decay > 0.0 {
                grad_list[idx].add_assign(&h.subspace.scale(s.subspace_weight_decay))?;
            }
        }

        let mut params: Vec<&mut Tensor> = model.weights_mut().iter_mut().collect();
        if let Some(h) = head.as_mut() {
            params.extend(h.params_mut());
        }
        params.extend(proj.iter_mut());
        opt.step(&mut params, &grad_list, &names)
            .map_err(|e| match e {
                Error::Numeric(detail) => Error::Divergence { epoch, detail },
                other => other,
            })?;
    }

    let (best_epoch, best_val_acc, best_model) = best.expect("at least one epoch");
    let best_record = &records[best_epoch];
    let report = TrainReport {
        role: s.role.to_string(),
        distiller: s.distiller,
        seed: s.seed,
        best_epoch,
        best_val_acc,
        test_acc_at_best: best_record.test_acc,
        train_ce_at_best: best_record.train_ce,
        epochs: records,
        snapshots,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "{} ({}) best epoch {} val {:.4} test {:.4}",
        s.role,
        s.distiller,
        report.best_epoch,
        report.best_val_acc,
        report.test_acc_at_best
    );
    Ok(DistillOutcome {
        student: best_model,
        head,
        report,
    })
}
