//! CSV persistence of trajectories, the generation manifest and normalisation sidecars.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file parses back to bit-identical values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{DataError, Frame, NormStats, Trajectory};

pub const TRAJECTORY_HEADER: [&str; 8] = ["traj_id", "class_id", "frame", "x", "y", "z", "u", "v"];
pub const NORM_HEADER: [&str; 3] = ["feature", "mean", "std"];
pub const MANIFEST_HEADER: [&str; 5] = ["traj_id", "class_id", "frames", "seed", "file"];

fn csv_err(path: Option<&Path>, e: impl std::fmt::Display) -> DataError {
    DataError::Csv { path: path.map(|p| p.display().to_string()).unwrap_or_default(), message: e.to_string() }
}

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn write_trajectories<W: Write>(out: W, trajs: &[&Trajectory]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER).map_err(|e| csv_err(None, e))?;
    for t in trajs {
        for (n, f) in t.frames.iter().enumerate() {
            let row = [
                t.id.to_string(),
                t.class_id.to_string(),
                n.to_string(),
                f.xyz[0].to_string(),
                f.xyz[1].to_string(),
                f.xyz[2].to_string(),
                f.uv[0].to_string(),
                f.uv[1].to_string(),
            ];
            w.write_record(&row).map_err(|e| csv_err(None, e))?;
        }
    }
    w.flush().map_err(|e| csv_err(None, e))
}

/// Reads rows in any order and groups them by `traj_id` (ascending).
pub fn read_trajectories<R: Read>(input: R) -> Result<Vec<Trajectory>, DataError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| csv_err(None, e))?.clone();
    if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(DataError::Schema(format!("expected header {}", TRAJECTORY_HEADER.join(","))));
    }
    let mut grouped: BTreeMap<usize, (usize, Vec<(usize, Frame)>)> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(None, e))?;
        let field = |i: usize| -> Result<&str, DataError> {
            rec.get(i).ok_or_else(|| DataError::Schema(format!("row {}: missing column {}", line + 2, TRAJECTORY_HEADER[i])))
        };
        let int = |i: usize| -> Result<usize, DataError> {
            field(i)?.parse().map_err(|_| DataError::Schema(format!("row {}: bad {}", line + 2, TRAJECTORY_HEADER[i])))
        };
        let float = |i: usize| -> Result<f64, DataError> {
            field(i)?.parse().map_err(|_| DataError::Schema(format!("row {}: bad {}", line + 2, TRAJECTORY_HEADER[i])))
        };
        let (id, class_id, frame) = (int(0)?, int(1)?, int(2)?);
        let f = Frame { xyz: [float(3)?, float(4)?, float(5)?], uv: [float(6)?, float(7)?] };
        let entry = grouped.entry(id).or_insert((class_id, Vec::new()));
        if entry.0 != class_id {
            return Err(DataError::Schema(format!("trajectory {id} has rows with different classes")));
        }
        entry.1.push((frame, f));
    }
    grouped
        .into_iter()
        .map(|(id, (class_id, mut frames))| {
            frames.sort_by_key(|(n, _)| *n);
            if frames.iter().enumerate().any(|(i, (n, _))| i != *n) {
                return Err(DataError::Schema(format!("trajectory {id} has missing or duplicate frames")));
            }
            Ok(Trajectory { id, class_id, frames: frames.into_iter().map(|(_, f)| f).collect() })
        })
        .collect()
}

pub fn class_file_name(class_id: usize) -> String {
    format!("class_{class_id}.csv")
}

/// Writes `class_<k>.csv` for every class plus `manifest.csv`; returns the paths written.
pub fn write_dataset(dir: &Path, trajs: &[Trajectory], seed: u64) -> Result<Vec<PathBuf>, DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut by_class: BTreeMap<usize, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajs {
        by_class.entry(t.class_id).or_default().push(t);
    }
    let mut written = Vec::new();
    for (class_id, members) in &by_class {
        let path = dir.join(class_file_name(*class_id));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_trajectories(std::io::BufWriter::new(file), members)?;
        written.push(path);
    }
    let path = dir.join("manifest.csv");
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(Some(&path), e))?;
    for t in trajs {
        w.write_record([
            t.id.to_string(),
            t.class_id.to_string(),
            t.len().to_string(),
            seed.to_string(),
            class_file_name(t.class_id),
        ])
        .map_err(|e| csv_err(Some(&path), e))?;
    }
    w.flush().map_err(|e| csv_err(Some(&path), e))?;
    written.push(path);
    Ok(written)
}

/// Loads every trajectory listed in `dir/manifest.csv`, ordered by id.
pub fn read_dataset(dir: &Path) -> Result<Vec<Trajectory>, DataError> {
    let manifest = dir.join("manifest.csv");
    let file = fs::File::open(&manifest).map_err(|e| io_err(&manifest, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut files = std::collections::BTreeSet::new();
    let mut expected = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(Some(&manifest), e))?;
        let id: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| DataError::Schema("manifest: bad traj_id".into()))?;
        let frames: usize = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| DataError::Schema("manifest: bad frames".into()))?;
        expected.insert(id, frames);
        files.insert(rec.get(4).unwrap_or_default().to_string());
    }
    let mut trajs = Vec::new();
    for name in files {
        let path = dir.join(&name);
        let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
        trajs.extend(read_trajectories(std::io::BufReader::new(file))?);
    }
    trajs.sort_by_key(|t| t.id);
    let found: BTreeMap<usize, usize> = trajs.iter().map(|t| (t.id, t.len())).collect();
    if found != expected {
        return Err(DataError::Schema("trajectory files disagree with manifest".into()));
    }
    Ok(trajs)
}

/// Generation seed recorded in `dir/manifest.csv`.
pub fn manifest_seed(dir: &Path) -> Result<u64, DataError> {
    let manifest = dir.join("manifest.csv");
    let file = fs::File::open(&manifest).map_err(|e| io_err(&manifest, e))?;
    let mut r = csv::Reader::from_reader(file);
    let rec = r
        .records()
        .next()
        .ok_or_else(|| DataError::Schema("manifest: no trajectories".into()))?
        .map_err(|e| csv_err(Some(&manifest), e))?;
    rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| DataError::Schema("manifest: bad seed".into()))
}

pub fn write_norm_stats<W: Write>(out: W, stats: &NormStats) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NORM_HEADER).map_err(|e| csv_err(None, e))?;
    for ((name, m), s) in stats.names.iter().zip(&stats.mean).zip(&stats.std) {
        w.write_record([name.clone(), m.to_string(), s.to_string()]).map_err(|e| csv_err(None, e))?;
    }
    w.flush().map_err(|e| csv_err(None, e))
}

/// `n_present` splits the rows into present and history features.
pub fn read_norm_stats<R: Read>(input: R, n_present: usize) -> Result<NormStats, DataError> {
    let mut r = csv::Reader::from_reader(input);
    let (mut names, mut mean, mut std) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(None, e))?;
        let parse = |i: usize| -> Result<f64, DataError> {
            rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| DataError::Schema(format!("norm stats: bad {}", NORM_HEADER[i])))
        };
        names.push(rec.get(0).unwrap_or_default().to_string());
        mean.push(parse(1)?);
        std.push(parse(2)?);
    }
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(DataError::Schema("norm stats: std must be positive".into()));
    }
    Ok(NormStats { names, mean, std, degenerate: Vec::new(), n_present })
}
