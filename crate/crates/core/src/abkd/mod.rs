//! Attention-weighted layer-pair distillation and the baseline distillers.
//!
//! The head compares every teacher layer `i` against every student layer `j`.
//! Node-mean embeddings of each layer are projected into a shared `d_a`-wide
//! space to form a row-softmax attention map `A`, and projected layer outputs
//! are compared node by node to form a dissimilarity map `D`. The loss is
//! `Σ A⊙D / S_l`.

mod baselines;
mod head;
mod theorem;

pub use baselines::{fitnet_last_layer_mse, softkd_loss};
pub use head::{
    abkd_loss, modified_abkd_mask, total_loss, AbkdHead, AbkdTerms, AttentionVariant, Distance,
    HeadConfig, HeadVars,
};
pub use theorem::{
    student_layer_gradient, verify_theorem1, CouplingPath, CouplingProbe, CouplingReport,
};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{compare_gradients, finite_diff_grad, Tape, Var};
    use crate::error::{Error, Result};
    use crate::gnn::{supervised_loss, GcnModel};
    use crate::graph::{normalize_adjacency, CsrMatrix};
    use crate::tensor::Tensor;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn cfg(d_a: usize) -> HeadConfig {
        HeadConfig {
            d_a,
            ..HeadConfig::default()
        }
    }

    fn rand_layers(rng: &mut ChaCha8Rng, n: usize, widths: &[usize]) -> Vec<Tensor> {
        widths
            .iter()
            .map(|&w| Tensor::uniform(n, w, -1.0, 1.0, rng))
            .collect()
    }

    /// Literal per-pair dissimilarity: `Δ = pad(T_i)P_t − pad(S_j)P_s`,
    /// optionally `Δ ← ΔP`, then the squared norm of the row means.
    fn literal_dissimilarity(head: &AbkdHead, teacher: &[Tensor], student: &[Tensor]) -> Tensor {
        let n = teacher[0].rows();
        let d_a = head.config.d_a;
        let mut out = Tensor::zeros(teacher.len(), student.len());
        for (i, ti) in teacher.iter().enumerate() {
            for (j, sj) in student.iter().enumerate() {
                let a = ti
                    .pad_cols(head.teacher_dim())
                    .unwrap()
                    .matmul(&head.diss_proj_teacher)
                    .unwrap();
                let b = sj
                    .pad_cols(head.student_dim())
                    .unwrap()
                    .matmul(&head.diss_proj_student)
                    .unwrap();
                let mut delta = a.sub(&b).unwrap();
                if head.config.use_subspace {
                    delta = delta.matmul(&head.subspace).unwrap();
                }
                let mut sq = 0.0;
                for r in 0..n {
                    let v: f64 = delta.row(r).iter().sum::<f64>() / d_a as f64;
                    sq += v * v;
                }
                if head.config.node_mean {
                    sq /= n as f64;
                }
                out.set(i, j, sq);
            }
        }
        out
    }

    fn double_loop_loss(a: &Tensor, d: &Tensor) -> f64 {
        let mut s = 0.0;
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                s += a.get(i, j) * d.get(i, j);
            }
        }
        s / a.cols() as f64
    }

    fn loss_of(a: &Tensor, d: &Tensor) -> f64 {
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let dv = tape.constant(d.clone());
        let l = abkd_loss(&mut tape, av, dv).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn zero_pre_activations_give_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = AbkdHead::new(&[4, 4, 3], &[2, 3], cfg(5), &mut rng).unwrap();
        let teacher = vec![
            Tensor::zeros(6, 4),
            Tensor::zeros(6, 4),
            Tensor::zeros(6, 3),
        ];
        let student = vec![Tensor::zeros(6, 2), Tensor::zeros(6, 3)];
        let (a, d) = head.maps(&teacher, &student).unwrap();
        assert!(a.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_student_layer_gives_ones_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = AbkdHead::new(&[3, 3], &[2], cfg(4), &mut rng).unwrap();
        let teacher = rand_layers(&mut rng, 5, &[3, 3]);
        let student = rand_layers(&mut rng, 5, &[2]);
        let (a, _) = head.maps(&teacher, &student).unwrap();
        assert_eq!(a.data(), &[1.0, 1.0]);
    }

    #[test]
    fn attention_matches_scalar_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = AbkdHead::new(&[1, 1], &[1, 1], cfg(1), &mut rng).unwrap();
        for w in head
            .att_proj_teacher
            .iter_mut()
            .chain(head.att_proj_student.iter_mut())
        {
            *w = Tensor::identity(1);
        }
        // Node means: teacher (1, 0), student (0, ln 3), so logits are
        // [[0, ln 3], [0, 0]].
        let teacher = vec![t(&[vec![0.5], vec![1.5]]), t(&[vec![0.0], vec![0.0]])];
        let ln3 = 3f64.ln();
        let student = vec![t(&[vec![0.0], vec![0.0]]), t(&[vec![ln3], vec![ln3]])];
        let (a, _) = head.maps(&teacher, &student).unwrap();
        assert!((a.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((a.get(0, 1) - 0.75).abs() < 1e-12);
        assert!((a.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_d_a_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            AbkdHead::new(&[2], &[2], cfg(0), &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn hand_computed_dissimilarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut head = AbkdHead::new(&[2], &[2], cfg(2), &mut rng).unwrap();
        head.diss_proj_teacher = Tensor::identity(2);
        head.diss_proj_student = Tensor::identity(2);
        head.subspace = Tensor::identity(2);
        let teacher = vec![t(&[vec![1.0, 1.0], vec![3.0, -1.0]])];
        let student = vec![Tensor::zeros(2, 2)];
        let (_, d) = head.maps(&teacher, &student).unwrap();
        assert!((d.get(0, 0) - 1.0).abs() < 1e-15);

        head.config.node_mean = false;
        let (_, d) = head.maps(&teacher, &student).unwrap();
        assert!((d.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn identical_projected_features_have_zero_dissimilarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = AbkdHead::new(&[3, 3], &[3, 3], cfg(4), &mut rng).unwrap();
        head.tie_student_to_teacher().unwrap();
        let layers = rand_layers(&mut rng, 6, &[3, 3]);
        let (_, d) = head.maps(&layers, &layers).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 1), 0.0);
        assert!(d.get(0, 1) > 0.0);
    }

    #[test]
    fn zero_subspace_annihilates_dissimilarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut head = AbkdHead::new(&[4, 2], &[3], cfg(3), &mut rng).unwrap();
        head.subspace = Tensor::zeros(3, 3);
        let (_, d) = head
            .maps(
                &rand_layers(&mut rng, 5, &[4, 2]),
                &rand_layers(&mut rng, 5, &[3]),
            )
            .unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn folded_dissimilarity_matches_literal_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let tw: Vec<usize> = (0..rng.random_range(1..5))
                .map(|_| rng.random_range(1..7))
                .collect();
            let sw: Vec<usize> = (0..rng.random_range(1..4))
                .map(|_| rng.random_range(1..5))
                .collect();
            let config = HeadConfig {
                d_a: rng.random_range(1..6),
                use_subspace: trial % 2 == 0,
                node_mean: trial % 3 != 0,
                ..HeadConfig::default()
            };
            let head = AbkdHead::new(&tw, &sw, config, &mut rng).unwrap();
            let n = rng.random_range(1..10);
            let teacher = rand_layers(&mut rng, n, &tw);
            let student = rand_layers(&mut rng, n, &sw);
            let (_, d) = head.maps(&teacher, &student).unwrap();
            let oracle = literal_dissimilarity(&head, &teacher, &student);
            assert!(d.max_abs_diff(&oracle) < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn cosine_mode_compares_mean_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut head = AbkdHead::new(&[2], &[2], cfg(2), &mut rng).unwrap();
        head.config.distance = Distance::Cosine;
        head.diss_proj_teacher = Tensor::identity(2);
        head.diss_proj_student = Tensor::identity(2);
        head.subspace = Tensor::identity(2);
        let teacher = vec![t(&[vec![1.0, 0.0], vec![1.0, 0.0]])];
        let orthogonal = vec![t(&[vec![0.0, 2.0], vec![0.0, 4.0]])];
        let parallel = vec![t(&[vec![5.0, 0.0], vec![3.0, 0.0]])];
        assert!((head.maps(&teacher, &orthogonal).unwrap().1.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(head.maps(&teacher, &parallel).unwrap().1.get(0, 0).abs() < 1e-15);
        let zero = vec![Tensor::zeros(2, 2)];
        assert!(matches!(
            head.maps(&teacher, &zero),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn layer_count_and_width_mismatch_are_structural() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = AbkdHead::new(&[3, 3], &[2], cfg(2), &mut rng).unwrap();
        let bad_count = head.maps(
            &rand_layers(&mut rng, 4, &[3]),
            &rand_layers(&mut rng, 4, &[2]),
        );
        assert!(matches!(bad_count, Err(Error::Structural(_))));
        let too_wide = head.maps(
            &rand_layers(&mut rng, 4, &[3, 5]),
            &rand_layers(&mut rng, 4, &[2]),
        );
        assert!(matches!(too_wide, Err(Error::Structural(_))));
        let bad_n = head.maps(
            &rand_layers(&mut rng, 4, &[3, 3]),
            &rand_layers(&mut rng, 5, &[2]),
        );
        assert!(matches!(bad_n, Err(Error::Structural(_))));
    }

    #[test]
    fn shared_projection_has_one_matrix_per_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let config = HeadConfig {
            shared_att_proj: true,
            ..cfg(3)
        };
        let head = AbkdHead::new(&[4, 4, 2], &[3, 2], config, &mut rng).unwrap();
        assert_eq!(head.att_proj_teacher.len(), 1);
        assert_eq!(head.att_proj_student.len(), 1);
        assert_eq!(head.params().len(), head.param_names().len());
        let (a, _) = head
            .maps(
                &rand_layers(&mut rng, 5, &[4, 4, 2]),
                &rand_layers(&mut rng, 5, &[3, 2]),
            )
            .unwrap();
        assert_eq!(a.shape(), (3, 2));
    }

    #[test]
    fn weighted_loss_examples() {
        let a = t(&[vec![0.25, 0.75], vec![0.5, 0.5]]);
        let d = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!((loss_of(&a, &d) - 2.625).abs() < 1e-15);
        assert_eq!(loss_of(&a, &Tensor::zeros(2, 2)), 0.0);
        assert!((loss_of(&a, &Tensor::filled(2, 2, 1.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn total_loss_combines_linearly() {
        let mut tape = Tape::new();
        let ce = tape.constant(Tensor::scalar(0.5));
        let kd = tape.constant(Tensor::scalar(2.625));
        let l = total_loss(&mut tape, ce, kd, 10.0).unwrap();
        assert!((tape.scalar(l) - 26.75).abs() < 1e-12);
        let l0 = total_loss(&mut tape, ce, kd, 0.0).unwrap();
        assert_eq!(l0, ce);
        assert!(matches!(
            total_loss(&mut tape, ce, kd, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn modified_mask_shapes() {
        assert_eq!(modified_abkd_mask(1, 1).unwrap().data(), &[1.0]);
        let m = modified_abkd_mask(3, 2).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(modified_abkd_mask(0, 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn modified_mask_selects_last_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = AbkdHead::new(&[4, 4, 3], &[3, 2], cfg(4), &mut rng).unwrap();
        let teacher = rand_layers(&mut rng, 7, &[4, 4, 3]);
        let student = rand_layers(&mut rng, 7, &[3, 2]);
        let mut tape = Tape::new();
        let hv = head.attach(&mut tape, true);
        let tv: Vec<Var> = teacher.iter().map(|x| tape.constant(x.clone())).collect();
        let sv: Vec<Var> = student.iter().map(|x| tape.constant(x.clone())).collect();
        let terms = head
            .terms(&mut tape, &hv, &tv, &sv, AttentionVariant::LastPairOnly)
            .unwrap();
        let d = tape.value(terms.dissimilarity);
        let expected = d.get(2, 1) / 2.0;
        assert!((tape.scalar(terms.loss) - expected).abs() < 1e-12);
    }

    fn ring(n: usize) -> Arc<CsrMatrix> {
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        edges.push((0, n / 2));
        Arc::new(
            normalize_adjacency(&CsrMatrix::from_undirected_edges(n, &edges).unwrap(), true)
                .unwrap(),
        )
    }

    struct Problem {
        a_hat: Arc<CsrMatrix>,
        x: Tensor,
        labels: Vec<usize>,
        mask: Vec<bool>,
        teacher: GcnModel,
        student: GcnModel,
        head: AbkdHead,
    }

    fn problem(seed: u64, config: HeadConfig, t_dims: &[usize], s_dims: &[usize]) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 7;
        let c = *t_dims.last().unwrap();
        let teacher = GcnModel::glorot(t_dims, &mut rng).unwrap();
        let student = GcnModel::glorot(s_dims, &mut rng).unwrap();
        let head = AbkdHead::new(
            &teacher.layer_widths(),
            &student.layer_widths(),
            config,
            &mut rng,
        )
        .unwrap();
        Problem {
            a_hat: ring(n),
            x: Tensor::uniform(n, t_dims[0], -1.0, 1.0, &mut rng),
            labels: (0..n).map(|_| rng.random_range(0..c)).collect(),
            mask: (0..n).map(|i| i % 3 != 1).collect(),
            teacher,
            student,
            head,
        }
    }

    /// Total loss as a function of every student weight and head parameter.
    fn objective(
        p: &Problem,
        params: &[Tensor],
        beta: f64,
        variant: AttentionVariant,
    ) -> Result<(f64, Vec<Tensor>)> {
        let ns = p.student.n_layers();
        let student = GcnModel::from_weights(params[..ns].to_vec())?;
        let mut head = p.head.clone();
        for (dst, src) in head.params_mut().into_iter().zip(&params[ns..]) {
            *dst = src.clone();
        }
        let teacher_pre = p.teacher.forward(&p.a_hat, &p.x, true)?.pre_activations;
        let mut tape = Tape::new();
        let x = tape.constant(p.x.clone());
        let fw = student.forward_on(&mut tape, &p.a_hat, x, true)?;
        let hv = head.attach(&mut tape, true);
        let tv: Vec<Var> = teacher_pre
            .iter()
            .map(|z| tape.constant(z.clone()))
            .collect();
        let ce = supervised_loss(&mut tape, fw.logits, &p.labels, &p.mask)?;
        let terms = head.terms(&mut tape, &hv, &tv, &fw.pre_activations, variant)?;
        let loss = total_loss(&mut tape, ce, terms.loss, beta)?;
        let grads = tape.backward(loss)?;
        let vars: Vec<Var> = fw.weights.iter().copied().chain(hv.all()).collect();
        let g = vars
            .iter()
            .zip(params)
            .map(|(&v, w)| grads.get_or_zeros(v, w))
            .collect();
        Ok((tape.scalar(loss), g))
    }

    fn all_params(p: &Problem) -> Vec<Tensor> {
        p.student
            .weights()
            .iter()
            .cloned()
            .chain(p.head.params().into_iter().cloned())
            .collect()
    }

    fn check_end_to_end(p: &Problem, beta: f64, variant: AttentionVariant) {
        let params = all_params(p);
        let (_, analytic) = objective(p, &params, beta, variant).unwrap();
        for k in 0..params.len() {
            let numeric = finite_diff_grad(
                |w| {
                    let mut ps = params.clone();
                    ps[k] = w.clone();
                    objective(p, &ps, beta, variant).map(|r| r.0)
                },
                &params[k],
                1e-6,
            )
            .unwrap();
            let cmp = compare_gradients(&analytic[k], &numeric, 1e-7);
            assert!(
                cmp.passes(1e-4),
                "param {k}: rel {} abs {}",
                cmp.max_rel_err,
                cmp.max_abs_err
            );
        }
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        for seed in 0..3 {
            let p = problem(seed, cfg(3), &[4, 5, 5, 3], &[4, 2, 3]);
            check_end_to_end(&p, 10.0, AttentionVariant::Learned);
            check_end_to_end(&p, 1.0, AttentionVariant::LastPairOnly);
        }
        let cosine = HeadConfig {
            distance: Distance::Cosine,
            shared_att_proj: true,
            ..cfg(3)
        };
        check_end_to_end(
            &problem(9, cosine, &[4, 5, 3], &[4, 3]),
            2.0,
            AttentionVariant::Learned,
        );
        let flat = HeadConfig {
            use_subspace: false,
            node_mean: false,
            ..cfg(2)
        };
        check_end_to_end(
            &problem(10, flat, &[4, 5, 3], &[4, 3, 3]),
            5.0,
            AttentionVariant::Learned,
        );
    }

    #[test]
    fn total_gradient_is_ce_plus_beta_abkd() {
        let p = problem(21, cfg(3), &[4, 5, 3], &[4, 2, 3]);
        let params = all_params(&p);
        let (_, g_ce) = objective(&p, &params, 0.0, AttentionVariant::Learned).unwrap();
        let (_, g_1) = objective(&p, &params, 1.0, AttentionVariant::Learned).unwrap();
        let (_, g_10) = objective(&p, &params, 10.0, AttentionVariant::Learned).unwrap();
        for k in 0..p.student.n_layers() {
            let g_kd = g_1[k].sub(&g_ce[k]).unwrap();
            let expected = g_ce[k].add(&g_kd.scale(10.0)).unwrap();
            assert!(g_10[k].max_abs_diff(&expected) < 1e-10);
        }
    }

    #[test]
    fn beta_zero_is_bitwise_supervised() {
        let p = problem(22, cfg(3), &[4, 5, 3], &[4, 2, 3]);
        let params = all_params(&p);
        let (l, g) = objective(&p, &params, 0.0, AttentionVariant::Learned).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(p.x.clone());
        let fw = p.student.forward_on(&mut tape, &p.a_hat, x, true).unwrap();
        let ce = supervised_loss(&mut tape, fw.logits, &p.labels, &p.mask).unwrap();
        let grads = tape.backward(ce).unwrap();
        assert_eq!(l.to_bits(), tape.scalar(ce).to_bits());
        for (k, &w) in fw.weights.iter().enumerate() {
            assert_eq!(&g[k], grads.get(w).unwrap());
        }
    }

    #[test]
    fn single_layer_clone_is_a_fixed_point() {
        let mut p = problem(23, cfg(3), &[4, 3], &[4, 3]);
        p.student = p.teacher.clone();
        p.head.tie_student_to_teacher().unwrap();
        let params = all_params(&p);
        let (_, g_ce) = objective(&p, &params, 0.0, AttentionVariant::Learned).unwrap();
        let (_, g) = objective(&p, &params, 1.0, AttentionVariant::Learned).unwrap();
        let teacher_pre = p
            .teacher
            .forward(&p.a_hat, &p.x, true)
            .unwrap()
            .pre_activations;
        let (_, d) = p.head.maps(&teacher_pre, &teacher_pre).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert!(g[0].max_abs_diff(&g_ce[0]) <= 1e-12);
    }

    #[test]
    fn coupling_vanishes_without_distillation() {
        let p = problem(30, cfg(3), &[4, 5, 5, 3], &[4, 2, 3]);
        for beta in [0.0, 10.0] {
            let probe = CouplingProbe {
                teacher: &p.teacher,
                student: &p.student,
                head: &p.head,
                a_hat: &p.a_hat,
                features: &p.x,
                labels: &p.labels,
                mask: &p.mask,
                beta,
            };
            let r = verify_theorem1(&probe, 2, 0, CouplingPath::Full, 1).unwrap();
            if beta == 0.0 {
                assert_eq!(r.coupling, 0.0);
            } else {
                assert!(r.coupling > 1e-10);
            }
        }
    }

    #[test]
    fn coupling_survives_last_pair_mask() {
        let p = problem(31, cfg(3), &[4, 5, 5, 3], &[4, 2, 3]);
        let probe = CouplingProbe {
            teacher: &p.teacher,
            student: &p.student,
            head: &p.head,
            a_hat: &p.a_hat,
            features: &p.x,
            labels: &p.labels,
            mask: &p.mask,
            beta: 10.0,
        };
        let masked = verify_theorem1(&probe, 1, 0, CouplingPath::LastPairMask, 2).unwrap();
        assert!(masked.coupling > 1e-10);
        assert!(matches!(
            verify_theorem1(&probe, 0, 0, CouplingPath::Full, 2),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            verify_theorem1(&probe, 3, 1, CouplingPath::Full, 2),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn softkd_aligned_and_uniform_cases() {
        let labels = [0usize, 1];
        let mask = [true, true];
        let sat = t(&[vec![50.0, 0.0], vec![0.0, 50.0]]);
        let mut tape = Tape::new();
        let s = tape.param(sat.clone());
        let ce = tape.cross_entropy(s, &labels, &mask).unwrap();
        let l = softkd_loss(&mut tape, s, &sat, &labels, &mask, 1.0).unwrap();
        assert!((tape.scalar(l) - tape.scalar(ce)).abs() < 1e-9);
        let l0 = softkd_loss(&mut tape, s, &sat, &labels, &mask, 0.0).unwrap();
        assert_eq!(tape.value(l0), tape.value(ce));

        // Uniform teacher and student over c classes: the KL term is zero and
        // adding back the teacher entropy recovers the cross-entropy ln c.
        let c = 4;
        let mut tape = Tape::new();
        let s = tape.param(Tensor::zeros(2, c));
        let kl = tape
            .soft_cross_entropy(s, &Tensor::zeros(2, c).row_softmax(), &mask)
            .unwrap();
        assert!(tape.scalar(kl).abs() < 1e-15);
        let entropy = (c as f64).ln();
        assert!((tape.scalar(kl) + entropy - (c as f64).ln()).abs() < 1e-15);
        assert!(matches!(
            softkd_loss(&mut tape, s, &Tensor::zeros(2, c), &labels, &mask, -0.5),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn fitnet_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut tape = Tape::new();
        let e = Tensor::uniform(4, 3, -1.0, 1.0, &mut rng);
        let s = tape.param(e.clone());
        let tt = tape.constant(e.clone());
        let id = tape.param(Tensor::identity(3));
        let l = fitnet_last_layer_mse(&mut tape, s, tt, id).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let z = tape.param(Tensor::zeros(4, 3));
        let ones = tape.constant(Tensor::filled(4, 2, 1.0));
        let proj = tape.param(Tensor::uniform(3, 2, -1.0, 1.0, &mut rng));
        let l = fitnet_last_layer_mse(&mut tape, z, ones, proj).unwrap();
        assert!((tape.scalar(l) - 1.0).abs() < 1e-15);

        let sv = Tensor::uniform(4, 3, -1.0, 1.0, &mut rng);
        let tv = Tensor::uniform(4, 3, -1.0, 1.0, &mut rng);
        let pv = Tensor::uniform(3, 3, -1.0, 1.0, &mut rng);
        let mut expected = 0.0;
        for r in 0..4 {
            for c in 0..3 {
                let m: f64 = (0..3).map(|k| sv.get(r, k) * pv.get(k, c)).sum();
                expected += (m - tv.get(r, c)).powi(2);
            }
        }
        expected /= 12.0;
        let (a, b, c) = (tape.param(sv), tape.constant(tv), tape.param(pv));
        let l = fitnet_last_layer_mse(&mut tape, a, b, c).unwrap();
        assert!((tape.scalar(l) - expected).abs() < 1e-14);

        let bad = tape.constant(Tensor::zeros(4, 5));
        assert!(matches!(
            fitnet_last_layer_mse(&mut tape, a, bad, c),
            Err(Error::Structural(_))
        ));
    }

    fn shape() -> impl Strategy<Value = (usize, usize)> {
        (1usize..=8, 1usize..=8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matrix_loss_equals_double_loop((r, c) in shape(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::uniform(r, c, -3.0, 3.0, &mut rng).row_softmax();
            let d = Tensor::uniform(r, c, 0.0, 5.0, &mut rng);
            prop_assert!((loss_of(&a, &d) - double_loop_loss(&a, &d)).abs() < 1e-12);
        }

        #[test]
        fn attention_rows_are_stochastic_and_dissimilarity_nonnegative(
            t_l in 1usize..5, s_l in 1usize..4, d_a in 1usize..6, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tw: Vec<usize> = (0..t_l).map(|_| rng.random_range(1..6)).collect();
            let sw: Vec<usize> = (0..s_l).map(|_| rng.random_range(1..5)).collect();
            let head = AbkdHead::new(&tw, &sw, cfg(d_a), &mut rng).unwrap();
            let (a, d) = head.maps(&rand_layers(&mut rng, 6, &tw), &rand_layers(&mut rng, 6, &sw)).unwrap();
            for i in 0..t_l {
                let s: f64 = a.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(a.row(i).iter().all(|&v| v > 0.0 && v < 1.0 || s_l == 1));
            }
            prop_assert!(d.data().iter().all(|&v| v >= 0.0));
        }
    }
}
