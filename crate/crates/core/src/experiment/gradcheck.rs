//! Finite-difference audit of the full distillation objective on small random
//! problems.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abkd::{total_loss, AbkdHead, AttentionVariant, Distance, HeadConfig};
use crate::autodiff::{compare_gradients, finite_diff_grad, GradComparison, Tape, Var};
use crate::error::Result;
use crate::gnn::{supervised_loss, GcnModel};
use crate::graph::{normalize_adjacency, CsrMatrix};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSettings {
    pub trials: usize,
    pub seed: u64,
    pub max_nodes: usize,
    pub max_teacher_layers: usize,
    pub max_student_layers: usize,
    pub max_dim: usize,
    pub eps: f64,
    pub abs_floor: f64,
    pub beta: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            max_nodes: 16,
            max_teacher_layers: 4,
            max_student_layers: 3,
            max_dim: 8,
            eps: 1e-6,
            abs_floor: 1e-7,
            beta: 10.0,
        }
    }
}

/// One random objective: graph, labels, frozen teacher, student and head.
#[derive(Debug, Clone)]
pub struct GradProblem {
    pub a_hat: Arc<CsrMatrix>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub teacher_pre: Vec<Tensor>,
    pub student: GcnModel,
    pub head: AbkdHead,
    pub beta: f64,
    pub variant: AttentionVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckTrial {
    pub trial: usize,
    pub n_nodes: usize,
    pub teacher_dims: Vec<usize>,
    pub student_dims: Vec<usize>,
    pub head: HeadConfig,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Parameter with the largest relative error.
    pub worst_param: String,
}

impl GradProblem {
    pub fn random<R: Rng + ?Sized>(s: &GradcheckSettings, rng: &mut R) -> Result<Self> {
        let n = rng.random_range(3..=s.max_nodes.max(3));
        let f = rng.random_range(2..=s.max_dim.max(2));
        let c = rng.random_range(2..=s.max_dim.max(2));
        let dims = |layers: usize, rng: &mut R| {
            let mut d = vec![f];
            d.extend((1..layers).map(|_| rng.random_range(2..=s.max_dim.max(2))));
            d.push(c);
            d
        };
        let t_l = rng.random_range(1..=s.max_teacher_layers.max(1));
        let s_l = rng.random_range(1..=s.max_student_layers.max(1));
        let t_dims = dims(t_l, rng);
        let s_dims = dims(s_l, rng);

        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.35) {
                    edges.push((i, j));
                }
            }
        }
        let adj = CsrMatrix::from_undirected_edges(n, &edges)?;
        let a_hat = Arc::new(normalize_adjacency(&adj, true)?);
        let features = Tensor::uniform(n, f, -1.0, 1.0, rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        mask[0] = true;

        let teacher = GcnModel::glorot(&t_dims, rng)?;
        let teacher_pre = teacher.forward(&a_hat, &features, true)?.pre_activations;
        let student = GcnModel::glorot(&s_dims, rng)?;
        let head_cfg = HeadConfig {
            d_a: rng.random_range(1..=s.max_dim.max(1)),
            distance: if rng.random_bool(0.25) {
                Distance::Cosine
            } else {
                Distance::Euclidean
            },
            use_subspace: rng.random_bool(0.75),
            shared_att_proj: rng.random_bool(0.25),
            node_mean: rng.random_bool(0.75),
        };
        let head = AbkdHead::new(
            &teacher.layer_widths(),
            &student.layer_widths(),
            head_cfg,
            rng,
        )?;
        let variant = if rng.random_bool(0.2) {
            AttentionVariant::LastPairOnly
        } else {
            AttentionVariant::Learned
        };
        Ok(Self {
            a_hat,
            features,
            labels,
            mask,
            teacher_pre,
            student,
            head,
            beta: s.beta,
            variant,
        })
    }

    /// Student weights followed by head parameters.
    pub fn params(&self) -> Vec<Tensor> {
        self.student
            .weights()
            .iter()
            .cloned()
            .chain(self.head.params().into_iter().cloned())
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.student.n_layers())
            .map(|l| format!("student.w{l}"))
            .chain(self.head.param_names())
            .collect()
    }

    /// `CE + β·L_abkd` and its analytic gradient at `params`.
    pub fn evaluate(&self, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let ns = self.student.n_layers();
        let student = GcnModel::from_weights(params[..ns].to_vec())?;
        let mut head = self.head.clone();
        for (dst, src) in head.params_mut().into_iter().zip(&params[ns..]) {
            *dst = src.clone();
        }
        let mut tape = Tape::new();
        let x = tape.constant(self.features.clone());
        let fw = student.forward_on(&mut tape, &self.a_hat, x, true)?;
        let hv = head.attach(&mut tape, true);
        let tv: Vec<Var> = self
            .teacher_pre
            .iter()
            .map(|z| tape.constant(z.clone()))
            .collect();
        let ce = supervised_loss(&mut tape, fw.logits, &self.labels, &self.mask)?;
        let terms = head.terms(&mut tape, &hv, &tv, &fw.pre_activations, self.variant)?;
        let loss = total_loss(&mut tape, ce, terms.loss, self.beta)?;
        let grads = tape.backward(loss)?;
        let vars: Vec<Var> = fw.weights.iter().copied().chain(hv.all()).collect();
        let g = vars
            .iter()
            .zip(params)
            .map(|(&v, w)| grads.get_or_zeros(v, w))
            .collect();
        Ok((tape.scalar(loss), g))
    }

    /// Worst-case comparison over all parameters, with the worst one's index.
    pub fn check(&self, eps: f64, abs_floor: f64) -> Result<(GradComparison, usize)> {
        let params = self.params();
        let (_, analytic) = self.evaluate(&params)?;
        let mut worst = GradComparison::default();
        let mut worst_idx = 0;
        for k in 0..params.len() {
            let numeric = finite_diff_grad(
                |w| {
                    let mut ps = params.clone();
                    ps[k] = w.clone();
                    self.evaluate(&ps).map(|r| r.0)
                },
                &params[k],
                eps,
            )?;
            let cmp = compare_gradients(&analytic[k], &numeric, abs_floor);
            if cmp.max_rel_err > worst.max_rel_err {
                worst_idx = k;
            }
            worst = worst.merge(cmp);
        }
        Ok((worst, worst_idx))
    }
}

pub fn run_gradcheck(s: &GradcheckSettings) -> Result<Vec<GradcheckTrial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    (0..s.trials)
        .map(|trial| {
            let p = GradProblem::random(s, &mut rng)?;
            let (cmp, worst) = p.check(s.eps, s.abs_floor)?;
            Ok(GradcheckTrial {
                trial,
                n_nodes: p.features.rows(),
                teacher_dims: std::iter::once(p.features.cols())
                    .chain(p.teacher_pre.iter().map(|z| z.cols()))
                    .collect(),
                student_dims: p.student.dims(),
                head: p.head.config,
                max_rel_err: cmp.max_rel_err,
                max_abs_err: cmp.max_abs_err,
                worst_param: p.param_names()[worst].clone(),
            })
        })
        .collect()
}
