//! Experiment drivers behind the command-line front end: seeded multi-seed
//! comparisons, ablation sweeps, the weight-initialisation study, map export
//! and gradient audits.

mod ablate;
mod config;
mod gradcheck;
mod maps;
mod run;
mod weight_init;

use std::path::Path;

pub use ablate::{cmd_ablate, AblationCell, AblationResult, SweepKey};
pub use config::{DatasetSpec, ExperimentConfig};
pub use gradcheck::{run_gradcheck, GradProblem, GradcheckSettings, GradcheckTrial};
pub use maps::{
    cmd_export_maps, export_snapshot, map_to_gray, read_map_csv, read_pgm, write_map_csv,
    write_map_pgm,
};
pub use run::{
    cmd_run, format_pct, mean_std, prepare_seed, run_distiller, sub_seed, summary_csv, RunResult,
    SeedContext, SummaryRow,
};
pub use weight_init::{
    cmd_weight_init, select_layer, FactorizedGcn, WeightInitResult, WeightInitSeed,
};

use crate::error::Result;
use crate::graph::{generate_sbm, write_citation_dataset, CitationFiles, SbmParams};

/// Draws an SBM graph and writes it as `<prefix>.content`, `.cites` and `.split`.
pub fn cmd_gen_sbm(params: &SbmParams, dir: &Path, prefix: &str) -> Result<CitationFiles> {
    let ds = generate_sbm(params)?;
    std::fs::create_dir_all(dir)?;
    let files = CitationFiles::with_prefix(dir, prefix);
    write_citation_dataset(&ds, &files)?;
    Ok(files)
}
