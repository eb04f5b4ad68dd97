//! Reader and writer for Cora-style `.content` / `.cites` files.
//!
//! Content lines are `<id>\t<feature>...\t<label>`; cites lines are
//! `<cited>\t<citing>`. An optional split file assigns `<id>\t<train|val|test>`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;

use super::csr::CsrMatrix;
use super::dataset::{stratified_split, GraphDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CitationOptions {
    /// Scale each feature row to unit L1 norm. All-zero rows are left alone.
    pub normalize_features: bool,
    /// Explicit split assignment; when absent a stratified 60/20/20 split is drawn.
    pub split_path: Option<PathBuf>,
    pub split_seed: u64,
}

impl Default for CitationOptions {
    fn default() -> Self {
        Self {
            normalize_features: true,
            split_path: None,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Cites lines naming an id absent from the content file.
    pub unknown_ids: usize,
    pub self_citations: usize,
    /// Undirected edges after symmetrisation and deduplication.
    pub undirected_edges: usize,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path)?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_citation_dataset(
    content_path: &Path,
    cites_path: &Path,
    opts: &CitationOptions,
) -> Result<(GraphDataset, LoadStats)> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut feature_data = Vec::new();
    let mut n_features: Option<usize> = None;

    for (lineno, line) in open_lines(content_path)? {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(parse_err(
                content_path,
                lineno,
                "expected <id>\\t<features>...\\t<label>",
            ));
        }
        let id = fields[0].trim();
        let label = fields[fields.len() - 1].trim();
        let feats = &fields[1..fields.len() - 1];
        match n_features {
            None => n_features = Some(feats.len()),
            Some(f) if f != feats.len() => {
                return Err(parse_err(
                    content_path,
                    lineno,
                    format!("expected {f} features, found {}", feats.len()),
                ))
            }
            _ => {}
        }
        let node = labels.len();
        if ids.insert(id.to_string(), node).is_some() {
            return Err(parse_err(
                content_path,
                lineno,
                format!("duplicate node id {id:?}"),
            ));
        }
        for tok in feats {
            let v: f64 = tok.trim().parse().map_err(|_| {
                parse_err(content_path, lineno, format!("bad feature value {tok:?}"))
            })?;
            feature_data.push(v);
        }
        let next_class = class_ids.len();
        labels.push(*class_ids.entry(label.to_string()).or_insert(next_class));
    }

    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let f = n_features.unwrap_or(0);
    let mut features = Tensor::from_vec(n, f, feature_data)?;
    if opts.normalize_features {
        l1_normalize_rows(&mut features);
    }

    let mut stats = LoadStats::default();
    let mut edges = Vec::new();
    for (lineno, line) in open_lines(cites_path)? {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(cites_path, lineno, "expected <cited>\\t<citing>"));
        }
        match (ids.get(fields[0]), ids.get(fields[1])) {
            (Some(&a), Some(&b)) if a == b => stats.self_citations += 1,
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => stats.unknown_ids += 1,
        }
    }
    if stats.unknown_ids > 0 {
        warn!(
            "{}: skipped {} citations naming unknown ids",
            cites_path.display(),
            stats.unknown_ids
        );
    }
    let adjacency = CsrMatrix::from_undirected_edges(n, &edges)?;
    stats.undirected_edges = adjacency.nnz() / 2;

    let n_classes = class_ids.len();
    let splits = match &opts.split_path {
        Some(path) => read_split_file(path, &ids, n)?,
        None => stratified_split(&labels, n_classes, opts.split_seed),
    };
    let mut ds = GraphDataset {
        adjacency,
        features,
        labels,
        n_classes,
        train_mask: vec![],
        val_mask: vec![],
        test_mask: vec![],
    };
    ds.set_splits(&splits);
    ds.validate()?;
    Ok((ds, stats))
}

fn l1_normalize_rows(features: &mut Tensor) {
    let cols = features.cols();
    for row in features.data_mut().chunks_mut(cols.max(1)) {
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

fn read_split_file(
    path: &Path,
    ids: &HashMap<String, usize>,
    n: usize,
) -> Result<Vec<Option<Split>>> {
    let mut out = vec![None; n];
    for (lineno, line) in open_lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(path, lineno, "expected <id>\\t<train|val|test>"));
        }
        let node = *ids
            .get(fields[0])
            .ok_or_else(|| parse_err(path, lineno, format!("unknown node id {:?}", fields[0])))?;
        out[node] = Some(match fields[1] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(parse_err(path, lineno, format!("unknown split {other:?}"))),
        });
    }
    Ok(out)
}

/// Paths written by [`write_citation_dataset`].
#[derive(Debug, Clone)]
pub struct CitationFiles {
    pub content: PathBuf,
    pub cites: PathBuf,
    pub split: PathBuf,
}

impl CitationFiles {
    pub fn with_prefix(dir: &Path, prefix: &str) -> Self {
        Self {
            content: dir.join(format!("{prefix}.content")),
            cites: dir.join(format!("{prefix}.cites")),
            split: dir.join(format!("{prefix}.split")),
        }
    }
}

/// Writes a dataset in citation format. Node ids are the node indices and
/// class names are `class_<k>`. Feature values use the shortest exact decimal
/// form so a reload without normalisation reproduces them bit-for-bit.
pub fn write_citation_dataset(ds: &GraphDataset, files: &CitationFiles) -> Result<()> {
    let mut content = BufWriter::new(File::create(&files.content)?);
    for i in 0..ds.n_nodes() {
        write!(content, "{i}")?;
        for v in ds.features.row(i) {
            write!(content, "\t{v}")?;
        }
        writeln!(content, "\tclass_{}", ds.labels[i])?;
    }
    content.flush()?;

    let mut cites = BufWriter::new(File::create(&files.cites)?);
    for (a, b) in ds.adjacency.upper_edges() {
        writeln!(cites, "{a}\t{b}")?;
    }
    cites.flush()?;

    let mut split = BufWriter::new(File::create(&files.split)?);
    for (i, s) in ds.splits().iter().enumerate() {
        let name = match s {
            Some(Split::Train) => "train",
            Some(Split::Val) => "val",
            Some(Split::Test) => "test",
            None => continue,
        };
        writeln!(split, "{i}\t{name}")?;
    }
    split.flush()?;
    Ok(())
}
