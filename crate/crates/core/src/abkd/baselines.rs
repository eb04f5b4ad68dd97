use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `CE(student, labels) + α·KL(softmax(teacher) ‖ softmax(student))` over the
/// masked nodes. `α = 0` returns the cross-entropy handle itself.
pub fn softkd_loss(
    tape: &mut Tape,
    student_logits: Var,
    teacher_logits: &Tensor,
    labels: &[usize],
    mask: &[bool],
    alpha: f64,
) -> Result<Var> {
    if !(alpha >= 0.0) {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let ce = tape.cross_entropy(student_logits, labels, mask)?;
    if alpha == 0.0 {
        return Ok(ce);
    }
    let soft = tape.soft_cross_entropy(student_logits, &teacher_logits.row_softmax(), mask)?;
    let soft = tape.scale(soft, alpha);
    tape.add(ce, soft)
}

/// Mean over nodes and dimensions of `(S_last·proj − T_last)²`.
pub fn fitnet_last_layer_mse(
    tape: &mut Tape,
    student_last: Var,
    teacher_last: Var,
    proj: Var,
) -> Result<Var> {
    let mapped = tape.matmul(student_last, proj)?;
    let diff = tape.sub(mapped, teacher_last)?;
    let (n, d) = tape.value(diff).shape();
    if n * d == 0 {
        return Err(Error::Structural("empty embeddings".into()));
    }
    let sq = tape.sum_squares(diff);
    Ok(tape.scale(sq, 1.0 / (n * d) as f64))
}
