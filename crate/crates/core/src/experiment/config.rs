use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abkd::{Distance, HeadConfig};
use crate::error::{Error, Result};
use crate::gnn::GcnArch;
use crate::graph::{generate_sbm, load_citation_dataset, CitationOptions, GraphDataset, SbmParams};
use crate::train::{DistillConfig, Distiller};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Sbm {
        n_per_block: usize,
        n_blocks: usize,
        p_in: f64,
        p_out: f64,
        features: usize,
        signal: f64,
        /// Fixed graph seed; each run seed draws its own graph when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    Citation {
        content: PathBuf,
        cites: PathBuf,
        #[serde(default)]
        split: Option<PathBuf>,
        #[serde(default = "yes")]
        normalize_features: bool,
        #[serde(default)]
        split_seed: u64,
    },
}

fn yes() -> bool {
    true
}

impl DatasetSpec {
    pub fn sbm_params(&self, run_seed: u64) -> Option<SbmParams> {
        match self {
            DatasetSpec::Sbm {
                n_per_block,
                n_blocks,
                p_in,
                p_out,
                features,
                signal,
                seed,
            } => Some(SbmParams {
                n_per_block: *n_per_block,
                n_blocks: *n_blocks,
                p_in: *p_in,
                p_out: *p_out,
                features: *features,
                signal: *signal,
                seed: seed.unwrap_or(run_seed),
            }),
            DatasetSpec::Citation { .. } => None,
        }
    }

    /// Materialises the dataset used by run `run_seed`.
    pub fn load(&self, run_seed: u64) -> Result<GraphDataset> {
        match self {
            DatasetSpec::Sbm { .. } => generate_sbm(&self.sbm_params(run_seed).expect("sbm")),
            DatasetSpec::Citation {
                content,
                cites,
                split,
                normalize_features,
                split_seed,
            } => {
                for p in [content, cites].into_iter().chain(split.iter()) {
                    if !p.exists() {
                        return Err(Error::MissingArtifact(p.clone()));
                    }
                }
                let opts = CitationOptions {
                    normalize_features: *normalize_features,
                    split_path: split.clone(),
                    split_seed: *split_seed,
                };
                let (ds, stats) = load_citation_dataset(content, cites, &opts)?;
                log::info!(
                    "loaded {} nodes, {} undirected edges ({} unknown ids skipped)",
                    ds.n_nodes(),
                    stats.undirected_edges,
                    stats.unknown_ids
                );
                Ok(ds)
            }
        }
    }

    /// Whether every run seed sees the same graph.
    pub fn is_seed_independent(&self) -> bool {
        !matches!(self, DatasetSpec::Sbm { seed: None, .. })
    }
}

/// A complete experiment description. Stored verbatim as `config.json` in
/// every results directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub teacher: GcnArch,
    pub student: GcnArch,
    /// Comparison set; all members share one student initialisation per seed.
    pub distillers: Vec<Distiller>,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::d_a")]
    pub d_a: usize,
    #[serde(default = "defaults::distance")]
    pub distance: Distance,
    #[serde(default = "yes")]
    pub use_subspace: bool,
    #[serde(default)]
    pub shared_att_proj: bool,
    #[serde(default = "yes")]
    pub node_mean: bool,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    /// Teacher pretraining epochs; defaults to `epochs`.
    #[serde(default)]
    pub teacher_epochs: Option<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub add_self_loops: bool,
    #[serde(default = "defaults::snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub subspace_weight_decay: f64,
    /// Directory holding pretrained `teacher_<seed>` checkpoints to reuse.
    #[serde(default)]
    pub teacher_dir: Option<PathBuf>,
    /// Epochs for the single-layer networks of the weight-initialisation study.
    #[serde(default = "defaults::epochs")]
    pub weight_init_epochs: usize,
}

mod defaults {
    use crate::abkd::Distance;

    pub fn beta() -> f64 {
        10.0
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn d_a() -> usize {
        256
    }
    pub fn distance() -> Distance {
        Distance::Euclidean
    }
    pub fn lr() -> f64 {
        1e-2
    }
    pub fn epochs() -> usize {
        1200
    }
    pub fn snapshot_every() -> usize {
        100
    }
}

impl ExperimentConfig {
    /// Defaults around a dataset, the given architectures and output directory.
    pub fn new(
        dataset: DatasetSpec,
        teacher: GcnArch,
        student: GcnArch,
        output_dir: PathBuf,
    ) -> Self {
        Self {
            dataset,
            teacher,
            student,
            distillers: vec![Distiller::None, Distiller::Abkd],
            beta: defaults::beta(),
            alpha: defaults::alpha(),
            d_a: defaults::d_a(),
            distance: defaults::distance(),
            use_subspace: true,
            shared_att_proj: false,
            node_mean: true,
            lr: defaults::lr(),
            epochs: defaults::epochs(),
            teacher_epochs: None,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir,
            add_self_loops: true,
            snapshot_every: defaults::snapshot_every(),
            subspace_weight_decay: 0.0,
            teacher_dir: None,
            weight_init_epochs: defaults::epochs(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            d_a: self.d_a,
            distance: self.distance,
            use_subspace: self.use_subspace,
            shared_att_proj: self.shared_att_proj,
            node_mean: self.node_mean,
        }
    }

    pub fn distill_config(&self, distiller: Distiller, seed: u64) -> DistillConfig {
        DistillConfig {
            distiller,
            beta: self.beta,
            alpha: self.alpha,
            head: self.head_config(),
            epochs: self.epochs,
            lr: self.lr,
            snapshot_every: self.snapshot_every,
            subspace_weight_decay: self.subspace_weight_decay,
            seed,
        }
    }

    pub fn teacher_epochs(&self) -> usize {
        self.teacher_epochs.unwrap_or(self.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if let Some(p) = self.dataset.sbm_params(0) {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        for (name, arch) in [("teacher", self.teacher), ("student", self.student)] {
            if arch.layers == 0 {
                return fail(format!("{name} needs at least one layer"));
            }
            if arch.layers > 1 && arch.hidden == 0 {
                return fail(format!("{name} hidden width must be positive"));
            }
        }
        if self.distillers.is_empty() {
            return fail("distillers list is empty".into());
        }
        if self.distillers.iter().collect::<BTreeSet<_>>().len() != self.distillers.len() {
            return fail("distillers list has duplicates".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds list is empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return fail("seeds list has duplicates".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.d_a == 0 {
            return fail("d_a must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.teacher_epochs() == 0 || self.weight_init_epochs == 0 {
            return fail("epoch counts must be >= 1".into());
        }
        if !(self.subspace_weight_decay >= 0.0) {
            return fail("subspace_weight_decay must be >= 0".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return fail("output_dir is empty".into());
        }
        Ok(())
    }
}
