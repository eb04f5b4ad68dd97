use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(Error::Config(format!("unknown distance {other:?}"))),
        }
    }
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Distance::Euclidean => "euclidean",
            Distance::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Shared embedding width for all projections.
    pub d_a: usize,
    pub distance: Distance,
    /// Project differences through the learned `d_a×d_a` subspace matrix.
    pub use_subspace: bool,
    /// One attention projection per side instead of one per layer.
    pub shared_att_proj: bool,
    /// Divide each squared distance by the node count.
    pub node_mean: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            d_a: 256,
            distance: Distance::Euclidean,
            use_subspace: true,
            shared_att_proj: false,
            node_mean: true,
        }
    }
}

/// Which attention matrix weights the dissimilarities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionVariant {
    /// Learned softmax attention over all layer pairs.
    Learned,
    /// Fixed indicator on the (last teacher, last student) pair.
    LastPairOnly,
}

/// Trainable projections of the distillation head.
///
/// Layer outputs narrower than the widest layer on their side (typically the
/// logits layer) are zero-padded on the right before projection, so a single
/// `d_t×d_a` (or `d_s×d_a`) matrix serves every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbkdHead {
    /// `W_i^{pt}`, one per teacher layer (a single entry when shared).
    pub att_proj_teacher: Vec<Tensor>,
    /// `W_j^{ps}`, one per student layer (a single entry when shared).
    pub att_proj_student: Vec<Tensor>,
    /// `P_t`
    pub diss_proj_teacher: Tensor,
    /// `P_s`
    pub diss_proj_student: Tensor,
    /// `P`
    pub subspace: Tensor,
    pub config: HeadConfig,
    teacher_layers: usize,
    student_layers: usize,
}

/// Tape handles for one step's head parameters.
#[derive(Debug, Clone)]
pub struct HeadVars {
    pub att_teacher: Vec<Var>,
    pub att_student: Vec<Var>,
    pub diss_teacher: Var,
    pub diss_student: Var,
    pub subspace: Var,
}

impl HeadVars {
    /// Handles in the same order as [`AbkdHead::params`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.att_teacher.clone();
        v.extend(&self.att_student);
        v.extend([self.diss_teacher, self.diss_student, self.subspace]);
        v
    }
}

/// Tape handles for the maps and the weighted loss.
#[derive(Debug, Clone, Copy)]
pub struct AbkdTerms {
    pub attention: Var,
    pub dissimilarity: Var,
    pub loss: Var,
}

impl AbkdHead {
    /// Glorot-initialised head for the given per-layer output widths.
    pub fn new<R: Rng + ?Sized>(
        teacher_widths: &[usize],
        student_widths: &[usize],
        config: HeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.d_a == 0 {
            return Err(Error::Parameter("d_a must be positive".into()));
        }
        if teacher_widths.is_empty() || student_widths.is_empty() {
            return Err(Error::Parameter(
                "teacher and student need at least one layer".into(),
            ));
        }
        let d_t = *teacher_widths.iter().max().unwrap();
        let d_s = *student_widths.iter().max().unwrap();
        let d_a = config.d_a;
        let n_t = if config.shared_att_proj {
            1
        } else {
            teacher_widths.len()
        };
        let n_s = if config.shared_att_proj {
            1
        } else {
            student_widths.len()
        };
        let att_proj_teacher = (0..n_t)
            .map(|_| Tensor::glorot_uniform(d_t, d_a, rng))
            .collect();
        let att_proj_student = (0..n_s)
            .map(|_| Tensor::glorot_uniform(d_s, d_a, rng))
            .collect();
        let diss_proj_teacher = Tensor::glorot_uniform(d_t, d_a, rng);
        let diss_proj_student = Tensor::glorot_uniform(d_s, d_a, rng);
        let subspace = Tensor::glorot_uniform(d_a, d_a, rng);
        Ok(Self {
            att_proj_teacher,
            att_proj_student,
            diss_proj_teacher,
            diss_proj_student,
            subspace,
            config,
            teacher_layers: teacher_widths.len(),
            student_layers: student_widths.len(),
        })
    }

    pub fn teacher_layers(&self) -> usize {
        self.teacher_layers
    }

    pub fn student_layers(&self) -> usize {
        self.student_layers
    }

    pub fn teacher_dim(&self) -> usize {
        self.diss_proj_teacher.rows()
    }

    pub fn student_dim(&self) -> usize {
        self.diss_proj_student.rows()
    }

    /// Copies every teacher-side projection into the matching student slot.
    /// Requires identical teacher and student layer counts and widths.
    pub fn tie_student_to_teacher(&mut self) -> Result<()> {
        if self.teacher_layers != self.student_layers || self.teacher_dim() != self.student_dim() {
            return Err(Error::Parameter(
                "tying needs same-shape teacher and student".into(),
            ));
        }
        self.att_proj_student = self.att_proj_teacher.clone();
        self.diss_proj_student = self.diss_proj_teacher.clone();
        Ok(())
    }

    /// All parameter tensors: teacher attention projections, student
    /// attention projections, `P_t`, `P_s`, `P`.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.att_proj_teacher.iter().collect();
        v.extend(&self.att_proj_student);
        v.extend([
            &self.diss_proj_teacher,
            &self.diss_proj_student,
            &self.subspace,
        ]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.att_proj_teacher.iter_mut().collect();
        v.extend(self.att_proj_student.iter_mut());
        v.push(&mut self.diss_proj_teacher);
        v.push(&mut self.diss_proj_student);
        v.push(&mut self.subspace);
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.att_proj_teacher.len())
            .map(|i| format!("head.att_teacher.{i}"))
            .collect();
        v.extend((0..self.att_proj_student.len()).map(|j| format!("head.att_student.{j}")));
        v.extend([
            "head.diss_teacher".into(),
            "head.diss_student".into(),
            "head.subspace".into(),
        ]);
        v
    }

    /// Registers the parameters on `tape`.
    pub fn attach(&self, tape: &mut Tape, trainable: bool) -> HeadVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        HeadVars {
            att_teacher: self.att_proj_teacher.iter().map(&mut leaf).collect(),
            att_student: self.att_proj_student.iter().map(&mut leaf).collect(),
            diss_teacher: leaf(&self.diss_proj_teacher),
            diss_student: leaf(&self.diss_proj_student),
            subspace: leaf(&self.subspace),
        }
    }

    fn check_layers(&self, tape: &Tape, teacher: &[Var], student: &[Var]) -> Result<()> {
        if teacher.len() != self.teacher_layers || student.len() != self.student_layers {
            return Err(Error::Structural(format!(
                "head built for {}x{} layers, got {}x{}",
                self.teacher_layers,
                self.student_layers,
                teacher.len(),
                student.len()
            )));
        }
        let n = tape.value(teacher[0]).rows();
        let sides = [
            (teacher, self.teacher_dim(), "teacher"),
            (student, self.student_dim(), "student"),
        ];
        for (layers, limit, side) in sides {
            for &v in layers {
                let (rows, cols) = tape.value(v).shape();
                if rows != n {
                    return Err(Error::Structural(
                        "teacher and student node counts differ".into(),
                    ));
                }
                if cols > limit {
                    return Err(Error::Structural(format!(
                        "{side} layer width {cols} exceeds head width {limit}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Row-stochastic `T_l×S_l` attention over layer pairs: node-mean each
    /// layer, project it, and take `softmax(T_p S_pᵀ / √d_a)` along rows.
    pub fn attention_map(
        &self,
        tape: &mut Tape,
        hv: &HeadVars,
        teacher: &[Var],
        student: &[Var],
    ) -> Result<Var> {
        self.check_layers(tape, teacher, student)?;
        let t_p = project_means(tape, teacher, &hv.att_teacher, self.teacher_dim())?;
        let s_p = project_means(tape, student, &hv.att_student, self.student_dim())?;
        let s_t = tape.transpose(s_p);
        let logits = tape.matmul(t_p, s_t)?;
        let logits = tape.scale(logits, 1.0 / (self.config.d_a as f64).sqrt());
        Ok(tape.row_softmax(logits))
    }

    /// `T_l×S_l` dissimilarities between projected layer outputs.
    ///
    /// Euclidean mode: `‖(T_i P_t − S_j P_s) P 𝟙/d_a‖²`, divided by `n` when
    /// `node_mean`. Since the trailing `P 𝟙/d_a` is a fixed column, it is folded
    /// into the projections first so each layer reduces to one `n×1` vector.
    /// Cosine mode: `1 − cos` between node-mean projected vectors.
    pub fn dissimilarity_map(
        &self,
        tape: &mut Tape,
        hv: &HeadVars,
        teacher: &[Var],
        student: &[Var],
    ) -> Result<Var> {
        self.check_layers(tape, teacher, student)?;
        let n = tape.value(teacher[0]).rows();
        let (d_t, d_s, d_a) = (self.teacher_dim(), self.student_dim(), self.config.d_a);

        let mut cells: Vec<Vec<Var>> = Vec::with_capacity(teacher.len());
        match self.config.distance {
            Distance::Euclidean => {
                let avg = tape.constant(Tensor::filled(d_a, 1, 1.0 / d_a as f64));
                let col = if self.config.use_subspace {
                    tape.matmul(hv.subspace, avg)?
                } else {
                    avg
                };
                let t_col = tape.matmul(hv.diss_teacher, col)?;
                let s_col = tape.matmul(hv.diss_student, col)?;
                let reduce =
                    |tape: &mut Tape, layers: &[Var], width: usize, col: Var| -> Result<Vec<Var>> {
                        layers
                            .iter()
                            .map(|&z| {
                                let z = tape.pad_cols(z, width)?;
                                tape.matmul(z, col)
                            })
                            .collect()
                    };
                let us = reduce(tape, teacher, d_t, t_col)?;
                let ws = reduce(tape, student, d_s, s_col)?;
                let norm = if self.config.node_mean {
                    1.0 / n as f64
                } else {
                    1.0
                };
                for &u in &us {
                    let mut row = Vec::with_capacity(ws.len());
                    for &w in &ws {
                        let diff = tape.sub(u, w)?;
                        let sq = tape.sum_squares(diff);
                        row.push(tape.scale(sq, norm));
                    }
                    cells.push(row);
                }
            }
            Distance::Cosine => {
                let embed = |tape: &mut Tape,
                             layers: &[Var],
                             width: usize,
                             proj: Var|
                 -> Result<Vec<Var>> {
                    layers
                        .iter()
                        .map(|&z| {
                            let m = tape.mean_rows(z)?;
                            let m = tape.pad_cols(m, width)?;
                            let e = tape.matmul(m, proj)?;
                            if self.config.use_subspace {
                                tape.matmul(e, hv.subspace)
                            } else {
                                Ok(e)
                            }
                        })
                        .collect()
                };
                let us = embed(tape, teacher, d_t, hv.diss_teacher)?;
                let ws = embed(tape, student, d_s, hv.diss_student)?;
                for &u in &us {
                    let row = ws
                        .iter()
                        .map(|&w| tape.cosine_distance(u, w))
                        .collect::<Result<Vec<_>>>()?;
                    cells.push(row);
                }
            }
        }
        let rows = cells
            .iter()
            .map(|row| tape.concat_cols(row))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)
    }

    /// Builds attention, dissimilarity and the weighted loss on the tape.
    pub fn terms(
        &self,
        tape: &mut Tape,
        hv: &HeadVars,
        teacher: &[Var],
        student: &[Var],
        variant: AttentionVariant,
    ) -> Result<AbkdTerms> {
        let attention = match variant {
            AttentionVariant::Learned => self.attention_map(tape, hv, teacher, student)?,
            AttentionVariant::LastPairOnly => tape.constant(modified_abkd_mask(
                self.teacher_layers,
                self.student_layers,
            )?),
        };
        let dissimilarity = self.dissimilarity_map(tape, hv, teacher, student)?;
        let loss = abkd_loss(tape, attention, dissimilarity)?;
        Ok(AbkdTerms {
            attention,
            dissimilarity,
            loss,
        })
    }
}

impl AbkdHead {
    /// Evaluates both maps for fixed layer outputs without keeping a tape.
    pub fn maps(&self, teacher: &[Tensor], student: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let hv = self.attach(&mut tape, false);
        let t: Vec<Var> = teacher.iter().map(|x| tape.constant(x.clone())).collect();
        let s: Vec<Var> = student.iter().map(|x| tape.constant(x.clone())).collect();
        let a = self.attention_map(&mut tape, &hv, &t, &s)?;
        let d = self.dissimilarity_map(&mut tape, &hv, &t, &s)?;
        Ok((tape.value(a).clone(), tape.value(d).clone()))
    }
}

/// Node-means each layer, zero-pads to `width`, and projects with its own
/// matrix (or the single shared one), stacking the results as rows.
fn project_means(
    tape: &mut Tape,
    layers: &[Var],
    projections: &[Var],
    width: usize,
) -> Result<Var> {
    let rows = layers
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let m = tape.mean_rows(z)?;
            let m = tape.pad_cols(m, width)?;
            let proj = projections[if projections.len() == 1 { 0 } else { i }];
            tape.matmul(m, proj)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_rows(&rows)
}

/// `𝟙ᵀ (A ⊙ D) 𝟙 / S_l`: sum over teacher rows of the mean over student columns.
pub fn abkd_loss(tape: &mut Tape, attention: Var, dissimilarity: Var) -> Result<Var> {
    let s_l = tape.value(attention).cols();
    let weighted = tape.mul(attention, dissimilarity)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / s_l as f64))
}

/// `CE + β·L_abkd`; `β = 0` returns the cross-entropy handle itself.
pub fn total_loss(tape: &mut Tape, supervised: Var, abkd: Var, beta: f64) -> Result<Var> {
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("beta must be >= 0, got {beta}")));
    }
    if beta == 0.0 {
        return Ok(supervised);
    }
    let scaled = tape.scale(abkd, beta);
    tape.add(supervised, scaled)
}

/// All-zero `t_l×s_l` matrix with a single 1 in the bottom-right corner.
pub fn modified_abkd_mask(t_l: usize, s_l: usize) -> Result<Tensor> {
    if t_l == 0 || s_l == 0 {
        return Err(Error::Parameter(
            "mask needs at least one row and column".into(),
        ));
    }
    let mut m = Tensor::zeros(t_l, s_l);
    m.set(t_l - 1, s_l - 1, 1.0);
    Ok(m)
}
