use std::path::PathBuf;
use std::process::ExitCode;

use abkd_core::abkd::Distance;
use abkd_core::experiment::{
    cmd_ablate, cmd_export_maps, cmd_gen_sbm, cmd_run, cmd_weight_init, run_gradcheck,
    ExperimentConfig, GradcheckSettings, SweepKey,
};
use abkd_core::graph::SbmParams;
use abkd_core::train::Distiller;
use abkd_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "abkd",
    version,
    about = "GCN training and attention-based layer-pair distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain teachers and distil students for every seed and distiller.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Repeat a run across values of one hyperparameter.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// beta | d_a | distance | subspace | shared_proj
        #[arg(long)]
        sweep: String,
        /// Comma-separated values; defaults to the standard grid for the key.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Build single-layer networks from the attention-selected student layer.
    WeightInit {
        /// Results directory of a run that included the abkd distiller.
        #[arg(long)]
        run: PathBuf,
        /// Config to use instead of `<run>/config.json`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write attention and dissimilarity maps of one epoch as CSV and PGM.
    ExportMaps {
        /// Path to a `report_<seed>.json`.
        #[arg(long)]
        report: PathBuf,
        /// Snapshot epoch; the last snapshot when omitted.
        #[arg(long)]
        epoch: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per map cell in the PGM output.
        #[arg(long, default_value_t = 16)]
        cell: usize,
    },
    /// Write a stochastic block model graph in citation format.
    GenSbm {
        #[arg(long, default_value_t = 100)]
        n_per_block: usize,
        #[arg(long, default_value_t = 4)]
        n_blocks: usize,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        features: usize,
        #[arg(long, default_value_t = 0.8)]
        signal: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "sbm")]
        prefix: String,
    },
    /// Compare analytic and finite-difference gradients on random problems.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        beta: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

/// Config file plus per-field command-line overrides.
#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Prefix for a relative output directory.
    #[arg(long, env = "ABKD_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    distillers: Option<Vec<String>>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    d_a: Option<usize>,
    #[arg(long)]
    distance: Option<String>,
    #[arg(long)]
    use_subspace: Option<bool>,
    #[arg(long)]
    shared_att_proj: Option<bool>,
    /// Use the plain sum over nodes in the dissimilarity.
    #[arg(long)]
    no_node_mean: bool,
    #[arg(long)]
    no_self_loops: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    teacher_epochs: Option<usize>,
    #[arg(long)]
    weight_init_epochs: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    subspace_weight_decay: Option<f64>,
    #[arg(long)]
    teacher_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut c = ExperimentConfig::from_json_file(&self.config)?;
        if let Some(v) = &self.output {
            c.output_dir = v.clone();
        }
        if let Some(root) = &self.output_root {
            if c.output_dir.is_relative() {
                c.output_dir = root.join(&c.output_dir);
            }
        }
        if let Some(v) = &self.seeds {
            c.seeds = v.clone();
        }
        if let Some(v) = &self.distillers {
            c.distillers = v
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<Distiller>, _>>()?;
        }
        if let Some(v) = &self.distance {
            c.distance = v.parse::<Distance>()?;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(
            beta,
            alpha,
            d_a,
            use_subspace,
            shared_att_proj,
            lr,
            epochs,
            weight_init_epochs,
            snapshot_every
        );
        set!(subspace_weight_decay);
        if self.teacher_epochs.is_some() {
            c.teacher_epochs = self.teacher_epochs;
        }
        if self.teacher_dir.is_some() {
            c.teacher_dir = self.teacher_dir.clone();
        }
        if self.no_node_mean {
            c.node_mean = false;
        }
        if self.no_self_loops {
            c.add_self_loops = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run { cfg } => {
            let cfg = cfg.resolve()?;
            let res = cmd_run(&cfg)?;
            for r in &res.rows {
                println!("{:<14} {}", r.distiller.name(), r.formatted());
            }
            println!("results in {}", res.dir.display());
        }
        Command::Ablate { cfg, sweep, values } => {
            let cfg = cfg.resolve()?;
            let key: SweepKey = sweep.parse()?;
            let values = if values.is_empty() {
                key.default_values()
            } else {
                values
            };
            let res = cmd_ablate(&cfg, key, &values)?;
            for cell in &res.cells {
                for r in &cell.rows {
                    println!(
                        "{}={:<10} {:<14} {}",
                        key.name(),
                        cell.value,
                        r.distiller.name(),
                        r.formatted()
                    );
                }
            }
            println!("sweep table in {}", res.csv_path.display());
        }
        Command::WeightInit {
            run,
            config,
            epochs,
        } => {
            let path = config.unwrap_or_else(|| run.join("config.json"));
            let mut cfg = ExperimentConfig::from_json_file(&path)?;
            if let Some(e) = epochs {
                cfg.weight_init_epochs = e;
            }
            let res = cmd_weight_init(&cfg, &run)?;
            println!("seed layer initialized random untrained");
            for s in &res.per_seed {
                println!(
                    "{:<4} {:<5} {:.4} {:.4} {:.4}",
                    s.seed,
                    s.selected_layer,
                    s.initialized_trained,
                    s.random_trained,
                    s.initialized_untrained
                );
            }
            let [a, b, c] = res.means;
            println!("mean       {a:.4} {b:.4} {c:.4}");
            println!("table in {}", res.csv_path.display());
        }
        Command::ExportMaps {
            report,
            epoch,
            out,
            cell,
        } => {
            for p in cmd_export_maps(&report, epoch, &out, cell)? {
                println!("{}", p.display());
            }
        }
        Command::GenSbm {
            n_per_block,
            n_blocks,
            p_in,
            p_out,
            features,
            signal,
            seed,
            out,
            prefix,
        } => {
            let params = SbmParams {
                n_per_block,
                n_blocks,
                p_in,
                p_out,
                features,
                signal,
                seed,
            };
            let files = cmd_gen_sbm(&params, &out, &prefix).map_err(as_config)?;
            for p in [&files.content, &files.cites, &files.split] {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck {
            trials,
            seed,
            beta,
            tol,
        } => return gradcheck(trials, seed, beta, tol),
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(trials: usize, seed: u64, beta: f64, tol: f64) -> Result<ExitCode, Error> {
    let settings = GradcheckSettings {
        trials,
        seed,
        beta,
        ..GradcheckSettings::default()
    };
    let results = run_gradcheck(&settings)?;
    let mut worst: f64 = 0.0;
    for t in &results {
        worst = worst.max(t.max_rel_err);
        println!(
            "trial {:>3} n={:<2} teacher {:?} student {:?} d_a={} {}: rel {:.3e} abs {:.3e} ({})",
            t.trial,
            t.n_nodes,
            t.teacher_dims,
            t.student_dims,
            t.head.d_a,
            t.head.distance,
            t.max_rel_err,
            t.max_abs_err,
            t.worst_param
        );
    }
    let ok = worst < tol;
    println!(
        "max relative error {worst:.3e} (tolerance {tol:.1e}): {}",
        if ok { "ok" } else { "FAILED" }
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

/// Parameter problems in directly supplied flags are input errors.
fn as_config(e: Error) -> Error {
    match e {
        Error::Parameter(m) => Error::Config(m),
        other => other,
    }
}
