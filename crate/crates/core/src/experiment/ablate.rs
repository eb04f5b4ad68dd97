use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{prepare_seed, run_distiller, summary_csv, SummaryRow};
use crate::abkd::Distance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    Beta,
    DA,
    Distance,
    Subspace,
    SharedProj,
}

impl SweepKey {
    pub fn name(self) -> &'static str {
        match self {
            SweepKey::Beta => "beta",
            SweepKey::DA => "d_a",
            SweepKey::Distance => "distance",
            SweepKey::Subspace => "subspace",
            SweepKey::SharedProj => "shared_proj",
        }
    }

    /// Grid used when no values are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepKey::Beta => &["1", "10", "20", "50"],
            SweepKey::DA => &["64", "128", "256", "512"],
            SweepKey::Distance => &["euclidean", "cosine"],
            SweepKey::Subspace | SweepKey::SharedProj => &["true", "false"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Copy of `base` with this key set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = |e: &dyn std::fmt::Display| {
            Error::Config(format!("bad {} value {value:?}: {e}", self.name()))
        };
        let mut cfg = base.clone();
        match self {
            SweepKey::Beta => cfg.beta = value.parse().map_err(|e| bad(&e))?,
            SweepKey::DA => cfg.d_a = value.parse().map_err(|e| bad(&e))?,
            SweepKey::Distance => cfg.distance = value.parse::<Distance>().map_err(|e| bad(&e))?,
            SweepKey::Subspace => cfg.use_subspace = value.parse().map_err(|e| bad(&e))?,
            SweepKey::SharedProj => cfg.shared_att_proj = value.parse().map_err(|e| bad(&e))?,
        }
        cfg.output_dir = base.output_dir.join(format!("{}_{value}", self.name()));
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepKey::Beta,
            SweepKey::DA,
            SweepKey::Distance,
            SweepKey::Subspace,
            SweepKey::SharedProj,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown sweep key {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub value: String,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub key: SweepKey,
    pub cells: Vec<AblationCell>,
    pub csv_path: PathBuf,
}

/// Runs the configured comparison set once per sweep value. Teachers and the
/// student initialisation are prepared once per seed and shared by every
/// value. Writes `<output_dir>/ablation_<key>.csv` plus one summary per value.
pub fn cmd_ablate(
    base: &ExperimentConfig,
    key: SweepKey,
    values: &[String],
) -> Result<AblationResult> {
    base.validate()?;
    if values.is_empty() {
        return Err(Error::Config("sweep values list is empty".into()));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| key.apply(base, v))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&base.output_dir)?;
    std::fs::write(base.output_dir.join("config.json"), base.to_json()?)?;

    // accs[seed][value][distiller]
    let accs: Vec<Vec<Vec<f64>>> = base
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<Vec<f64>>> {
            let ctx = prepare_seed(base, seed)?;
            configs
                .iter()
                .map(|cfg| {
                    cfg.distillers
                        .iter()
                        .map(|&d| {
                            let out = run_distiller(cfg, &ctx, d)?;
                            let dir = cfg.output_dir.join(d.name());
                            std::fs::create_dir_all(&dir)?;
                            out.report.save(&dir.join(format!("report_{seed}.json")))?;
                            Ok(out.report.test_acc_at_best)
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(configs.len());
    let mut csv = String::from("key,value,distiller,n_seeds,mean_test_acc,std_test_acc,test_acc\n");
    for (v, cfg) in configs.iter().enumerate() {
        let rows: Vec<SummaryRow> = cfg
            .distillers
            .iter()
            .enumerate()
            .map(|(k, &d)| SummaryRow::new(d, accs.iter().map(|per| per[v][k]).collect()))
            .collect();
        std::fs::create_dir_all(&cfg.output_dir)?;
        std::fs::write(cfg.output_dir.join("config.json"), cfg.to_json()?)?;
        std::fs::write(
            cfg.output_dir.join("summary.csv"),
            summary_csv(&rows, &cfg.seeds),
        )?;
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{:.6},{:.6},{}",
                key.name(),
                values[v],
                r.distiller,
                r.test_accs.len(),
                r.mean,
                r.std,
                r.formatted()
            );
        }
        cells.push(AblationCell {
            value: values[v].clone(),
            rows,
        });
    }
    let csv_path = base.output_dir.join(format!("ablation_{}.csv", key.name()));
    std::fs::write(&csv_path, csv)?;
    Ok(AblationResult {
        key,
        cells,
        csv_path,
    })
}
