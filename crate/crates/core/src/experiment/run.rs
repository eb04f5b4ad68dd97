use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::maps::export_snapshot;
use crate::checkpoint::save_tensors;
use crate::error::{Error, Result};
use crate::gnn::GcnModel;
use crate::train::{
    distill_student, train_teacher, DistillOutcome, Distiller, TeacherConfig, TrainData,
    TrainReport,
};

/// Independent RNG stream `stream` for run seed `seed` (SplitMix64 finaliser).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const TEACHER_STREAM: u64 = 1;
pub(crate) const STUDENT_STREAM: u64 = 2;
pub(crate) const HEAD_STREAM: u64 = 3;
pub(crate) const CORE_STREAM: u64 = 4;

/// Dataset, frozen teacher and shared student initialisation for one seed.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub data: TrainData,
    pub teacher: GcnModel,
    pub teacher_report: Option<TrainReport>,
    pub student_init: GcnModel,
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let ds = cfg.dataset.load(seed)?;
    let data = TrainData::from_dataset(&ds, cfg.add_self_loops)?;
    let (f, c) = (data.n_features(), data.n_classes);
    let (teacher, teacher_report) = match &cfg.teacher_dir {
        Some(dir) => {
            let (m, _) = GcnModel::load(dir, &format!("teacher_{seed}"))?;
            if m.dims() != cfg.teacher.dims(f, c) {
                return Err(Error::Config(format!(
                    "pretrained teacher dims {:?} do not match {}",
                    m.dims(),
                    cfg.teacher
                )));
            }
            (m, None)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, TEACHER_STREAM));
            let init = GcnModel::glorot(&cfg.teacher.dims(f, c), &mut rng)?;
            let tc = TeacherConfig {
                epochs: cfg.teacher_epochs(),
                lr: cfg.lr,
                seed,
            };
            let (m, r) = train_teacher(init, &data, &tc)?;
            (m, Some(r))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STUDENT_STREAM));
    let student_init = GcnModel::glorot(&cfg.student.dims(f, c), &mut rng)?;
    Ok(SeedContext {
        seed,
        data,
        teacher,
        teacher_report,
        student_init,
    })
}

/// Distils a fresh copy of the shared student initialisation.
pub fn run_distiller(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    distiller: Distiller,
) -> Result<DistillOutcome> {
    let dc = cfg.distill_config(distiller, sub_seed(ctx.seed, HEAD_STREAM));
    distill_student(&ctx.teacher, ctx.student_init.clone(), None, &ctx.data, &dc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub distiller: Distiller,
    /// Test accuracy at the best-validation epoch, one entry per seed.
    pub test_accs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SummaryRow {
    pub fn new(distiller: Distiller, test_accs: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&test_accs);
        Self {
            distiller,
            test_accs,
            mean,
            std,
        }
    }

    /// `"mean ± std"` in percent with two decimals.
    pub fn formatted(&self) -> String {
        format_pct(self.mean, self.std)
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn format_pct(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    /// `reports[k][s]`: distiller `k` of the config, seed `s`.
    pub reports: Vec<Vec<TrainReport>>,
}

impl RunResult {
    pub fn row(&self, d: Distiller) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.distiller == d)
    }
}

pub fn summary_csv(rows: &[SummaryRow], seeds: &[u64]) -> String {
    let mut s = String::from("distiller,n_seeds,mean_test_acc,std_test_acc,test_acc");
    for seed in seeds {
        let _ = write!(s, ",seed_{seed}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{},{},{:.6},{:.6},{}",
            r.distiller,
            r.test_accs.len(),
            r.mean,
            r.std,
            r.formatted()
        );
        for a in &r.test_accs {
            let _ = write!(s, ",{a:.6}");
        }
        s.push('\n');
    }
    s
}

fn save_outcome(dir: &Path, seed: u64, out: &DistillOutcome) -> Result<()> {
    let seed_dir = dir.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&seed_dir)?;
    out.report.save(&dir.join(format!("report_{seed}.json")))?;
    out.student.save(&seed_dir, "student", seed)?;
    if let Some(h) = &out.head {
        let params: Vec<_> = h.params().into_iter().cloned().collect();
        save_tensors(&seed_dir.join("head.bin"), &params)?;
        std::fs::write(seed_dir.join("head.json"), serde_json::to_string_pretty(h)?)?;
    }
    for snap in &out.report.snapshots {
        export_snapshot(&seed_dir, snap, 16)?;
    }
    Ok(())
}

/// Writes the resolved config and runs every distiller for every seed.
/// Seeds run in parallel; all files are per seed except `summary.csv`, which
/// is assembled afterwards in config order.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json()?)?;

    let per_seed: Vec<Vec<TrainReport>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<TrainReport>> {
            let ctx = prepare_seed(cfg, seed)?;
            let seed_dir = dir.join(format!("seed_{seed}"));
            std::fs::create_dir_all(&seed_dir)?;
            ctx.teacher.save(&seed_dir, "teacher", seed)?;
            ctx.student_init.save(&seed_dir, "student_init", seed)?;
            if let Some(r) = &ctx.teacher_report {
                r.save(&seed_dir.join("teacher_report.json"))?;
            }
            cfg.distillers
                .iter()
                .map(|&d| {
                    let out = run_distiller(cfg, &ctx, d)?;
                    save_outcome(&dir.join(d.name()), seed, &out)?;
                    Ok(out.report)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let reports: Vec<Vec<TrainReport>> = (0..cfg.distillers.len())
        .map(|k| per_seed.iter().map(|r| r[k].clone()).collect())
        .collect();
    let rows: Vec<SummaryRow> = cfg
        .distillers
        .iter()
        .zip(&reports)
        .map(|(&d, rs)| SummaryRow::new(d, rs.iter().map(|r| r.test_acc_at_best).collect()))
        .collect();
    std::fs::write(dir.join("summary.csv"), summary_csv(&rows, &cfg.seeds))?;
    for r in &rows {
        log::info!("{:>14}: {}", r.distiller.name(), r.formatted());
    }
    Ok(RunResult { dir, rows, reports })
}
