//! File formats: long-format visit CSV, latent-clock CSV, model JSON and
//! output manifests.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use grsf_dtr_core::dtr::{group_trajectories, DtrEstimate, Trajectory, VisitRecord};
use grsf_dtr_core::sim::LatentVisit;
use grsf_dtr_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Columns that cannot be used as feature names.
pub const RESERVED: [&str; 7] = ["patient_id", "k", "A", "X", "delta", "gamma", "B"];

/// A loaded visit file. The history of every visit is the feature columns
/// followed by `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitData {
    pub features: Vec<String>,
    pub trajectories: Vec<Trajectory>,
    pub k_max: usize,
}

impl VisitData {
    pub fn history_names(&self) -> Vec<String> {
        history_names(&self.features)
    }
}

pub fn history_names(features: &[String]) -> Vec<String> {
    let mut h = features.to_vec();
    h.push("B".into());
    h
}

/// Feature columns of a history layout, which must end in `B`.
pub fn feature_names(history: &[String]) -> Result<Vec<String>> {
    match history.split_last() {
        Some((last, rest)) if last == "B" => Ok(rest.to_vec()),
        _ => Err(CliError::Validation("history layouts must end with the column `B`".into())),
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let row = e.position().map(|p| p.line());
    match (e.kind(), row) {
        (csv::ErrorKind::Io(_), _) => CliError::Runtime(format!("{}: {e}", path.display())),
        (_, Some(row)) => CliError::Row {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        },
        _ => CliError::Validation(format!("{}: {e}", path.display())),
    }
}

/// Writes rows of already formatted cells under `header`.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.into()
}

/// One row per visit: `patient_id, k, <features>, A, X, delta, gamma, B`.
/// Floats use the shortest representation that parses back exactly.
pub fn write_visits(path: &Path, features: &[String], trajectories: &[Trajectory]) -> Result<()> {
    let mut header: Vec<&str> = vec!["patient_id", "k"];
    header.extend(features.iter().map(String::as_str));
    header.extend(["A", "X", "delta", "gamma", "B"]);
    let rows = trajectories.iter().flat_map(|t| {
        t.visits.iter().map(|v| {
            let mut r = vec![v.patient.to_string(), v.k.to_string()];
            r.extend(v.history[..features.len()].iter().map(|x| x.to_string()));
            r.extend([v.action.to_string(), v.x.to_string(), flag(v.delta), flag(v.gamma), v.b.to_string()]);
            r
        })
    });
    write_csv(path, &header, rows)
}

pub fn write_latent(path: &Path, latent: &[LatentVisit]) -> Result<()> {
    let rows = latent
        .iter()
        .map(|l| vec![l.patient.to_string(), l.k.to_string(), l.t.to_string(), l.u.to_string(), l.c.to_string()]);
    write_csv(path, &["patient_id", "k", "T", "U", "C"], rows)
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: u64, column: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| CliError::Row {
        path: path.to_path_buf(),
        row,
        message: format!("column `{column}`: cannot parse `{raw}`"),
    })
}

fn parse_flag(path: &Path, row: u64, column: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(CliError::Row {
            path: path.to_path_buf(),
            row,
            message: format!("column `{column}` must be 0 or 1, got `{raw}`"),
        }),
    }
}

/// Loads and validates a visit file. Errors name the offending row
/// (1-based line number, header included).
pub fn read_visits(path: &Path, tau: f64, k_max: Option<usize>) -> Result<VisitData> {
    crate::config::require_file(path)?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let bad_header = |msg: String| CliError::Validation(format!("{}: header: {msg}", path.display()));
    if names.len() < 7 || names[0] != "patient_id" || names[1] != "k" || names[names.len() - 5..] != ["A", "X", "delta", "gamma", "B"] {
        return Err(bad_header(
            "expected `patient_id,k,<features...>,A,X,delta,gamma,B`".into(),
        ));
    }
    let features: Vec<String> = names[2..names.len() - 5].iter().map(|s| s.to_string()).collect();
    for (i, f) in features.iter().enumerate() {
        if RESERVED.contains(&f.as_str()) {
            return Err(bad_header(format!("feature column `{f}` uses a reserved name")));
        }
        if features[..i].contains(f) {
            return Err(bad_header(format!("duplicate feature column `{f}`")));
        }
    }
    let d = features.len();
    let mut rows_of: HashMap<(u64, usize), u64> = HashMap::new();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        let patient: u64 = parse_field(path, row, "patient_id", &rec[0])?;
        let k: usize = parse_field(path, row, "k", &rec[1])?;
        let mut history = Vec::with_capacity(d + 1);
        for (j, name) in features.iter().enumerate() {
            history.push(parse_field::<f64>(path, row, name, &rec[2 + j])?);
        }
        let action: usize = parse_field(path, row, "A", &rec[2 + d])?;
        let x: f64 = parse_field(path, row, "X", &rec[3 + d])?;
        let delta = parse_flag(path, row, "delta", &rec[4 + d])?;
        let gamma = parse_flag(path, row, "gamma", &rec[5 + d])?;
        let b: f64 = parse_field(path, row, "B", &rec[6 + d])?;
        history.push(b);
        if rows_of.insert((patient, k), row).is_some() {
            return Err(CliError::Row {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate record for patient {patient}, visit {k}"),
            });
        }
        records.push(VisitRecord {
            patient,
            k,
            history,
            action,
            x,
            delta,
            gamma,
            b,
        });
    }
    if records.is_empty() {
        return Err(CliError::Validation(format!("{}: no visit records", path.display())));
    }
    let k_max = k_max.unwrap_or_else(|| records.iter().map(|r| r.k).max().unwrap_or(1));
    let trajectories = group_trajectories(records, tau, k_max).map_err(|e| match e {
        CoreError::InvalidRecord { patient, k, reason } => CliError::Row {
            path: path.to_path_buf(),
            row: rows_of
                .get(&(patient, k))
                .or_else(|| rows_of.get(&(patient, 1)))
                .copied()
                .unwrap_or(0),
            message: format!("patient {patient}, visit {k}: {reason}"),
        },
        other => other.into(),
    })?;
    Ok(VisitData {
        features,
        trajectories,
        k_max,
    })
}

pub const MODEL_FORMAT: &str = "grsf-dtr-model";

/// Serialized fit: the estimate plus what is needed to check incoming data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub k_max: usize,
    pub estimate: DtrEstimate,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let mut w = create(path)?;
    let res = if pretty {
        serde_json::to_writer_pretty(&mut w, value)
    } else {
        serde_json::to_writer(&mut w, value)
    };
    res.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    crate::config::require_file(path)?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let model: ModelFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Validation(format!("{}: not a model file: {e}", path.display())))?;
    if model.format != MODEL_FORMAT {
        return Err(CliError::Validation(format!("{}: unknown model format `{}`", path.display(), model.format)));
    }
    if model.estimate.version != grsf_dtr_core::dtr::ESTIMATE_VERSION {
        return Err(CliError::Validation(format!(
            "{}: model version {} is not supported",
            path.display(),
            model.estimate.version
        )));
    }
    Ok(model)
}

/// Fails when the data's history columns differ from the model's.
pub fn check_schema(model: &ModelFile, data: &VisitData) -> Result<()> {
    let expected = &model.estimate.registry.history;
    let actual = data.history_names();
    if *expected != actual {
        return Err(CliError::Validation(format!(
            "data columns {actual:?} do not match the model's history {expected:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let mut f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((total, hex))
}

/// Checksums of `files` (given relative to `out`), sorted by path.
pub fn checksums(out: &Path, files: &[PathBuf]) -> Result<Vec<FileEntry>> {
    let mut entries = files
        .iter()
        .map(|rel| {
            let (bytes, sha256) = sha256_file(&out.join(rel))?;
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(FileEntry { path, bytes, sha256 })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
    pub files: Vec<FileEntry>,
}

/// Writes `manifest.json` covering every listed output file.
pub fn write_manifest(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    config: serde_json::Value,
    summary: serde_json::Value,
    files: &[PathBuf],
) -> Result<PathBuf> {
    let manifest = Manifest {
        tool: "grsf-dtr".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        config,
        summary,
        files: checksums(out, files)?,
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest, true)?;
    Ok(path)
}
