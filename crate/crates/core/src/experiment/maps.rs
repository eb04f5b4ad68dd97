//! Map export: unscaled CSV and min-max normalised 8-bit PGM heatmaps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{MapSnapshot, TrainReport};

/// Row-major CSV without a header; values in shortest round-trip form.
pub fn write_map_csv(path: &Path, map: &Tensor) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for r in 0..map.rows() {
        w.write_record(map.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_map_csv(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

/// Grey levels for a map: min maps to 0, max to 255; a constant map is 128.
pub fn map_to_gray(map: &Tensor) -> Vec<u8> {
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if map.is_empty() || hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return vec![128; map.len()];
    }
    map.data()
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)) * 255.0).round() as u8)
        .collect()
}

/// Binary (P5) PGM with each cell drawn as a `cell`×`cell` block.
pub fn write_map_pgm(path: &Path, map: &Tensor, cell: usize) -> Result<()> {
    if cell == 0 {
        return Err(Error::Parameter("pgm cell size must be positive".into()));
    }
    let gray = map_to_gray(map);
    let (rows, cols) = map.shape();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", cols * cell, rows * cell)?;
    for r in 0..rows {
        let line: Vec<u8> = (0..cols)
            .flat_map(|c| std::iter::repeat_n(gray[r * cols + c], cell))
            .collect();
        for _ in 0..cell {
            w.write_all(&line)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a P5 PGM written by [`write_map_pgm`]: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let bad = || Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "not a P5 pgm".into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(pos + 1..).ok_or_else(bad)?.to_vec();
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, pixels))
}

/// Writes `attention_<epoch>` and `dissimilarity_<epoch>` as CSV and PGM into
/// `dir`, returning the four paths.
pub fn export_snapshot(dir: &Path, snap: &MapSnapshot, cell: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (name, map) in [
        ("attention", &snap.attention),
        ("dissimilarity", &snap.dissimilarity),
    ] {
        let csv = dir.join(format!("{name}_{}.csv", snap.epoch));
        let pgm = dir.join(format!("{name}_{}.pgm", snap.epoch));
        write_map_csv(&csv, map)?;
        write_map_pgm(&pgm, map, cell)?;
        out.push(csv);
        out.push(pgm);
    }
    Ok(out)
}

/// Exports one epoch's maps from a saved report. `epoch = None` picks the
/// last snapshot.
pub fn cmd_export_maps(
    report_path: &Path,
    epoch: Option<usize>,
    out_dir: &Path,
    cell: usize,
) -> Result<Vec<PathBuf>> {
    let report = TrainReport::load(report_path)?;
    let snap = match epoch {
        Some(e) => report.snapshot(e).ok_or_else(|| {
            let have: Vec<usize> = report.snapshots.iter().map(|s| s.epoch).collect();
            Error::Config(format!("no snapshot for epoch {e}; available: {have:?}"))
        })?,
        None => report
            .snapshots
            .last()
            .ok_or_else(|| Error::Config("report has no map snapshots".into()))?,
    };
    export_snapshot(out_dir, snap, cell)
}
