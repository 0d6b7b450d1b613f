//! Posterior files (JSON) and numeric tables (CSV).

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::CopulaVariationalDist;
use crate::error::{Error, Result};
use crate::marginal::MarginalSet;
use crate::vine::Vine;

pub const POSTERIOR_VERSION: &str = "cvi-posterior/1";

/// Summary of the fit that produced a posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetadata {
    pub final_elbo: f64,
    pub final_elbo_std_err: f64,
    pub phases: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// A fitted (or hand-written) variational posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorFile {
    pub version: String,
    pub marginals: MarginalSet,
    pub vine: Vine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitMetadata>,
}

impl PosteriorFile {
    pub fn new(dist: &CopulaVariationalDist, fit: Option<FitMetadata>) -> Self {
        PosteriorFile {
            version: POSTERIOR_VERSION.to_string(),
            marginals: dist.marginals.clone(),
            vine: dist.vine.clone(),
            fit,
        }
    }

    pub fn dist(&self) -> Result<CopulaVariationalDist> {
        CopulaVariationalDist::new(self.marginals.clone(), self.vine.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PosteriorFile = serde_json::from_str(text)?;
        if file.version != POSTERIOR_VERSION {
            return Err(Error::Config(format!(
                "unsupported posterior version {:?} (expected {POSTERIOR_VERSION:?})",
                file.version
            )));
        }
        if file.marginals.dim() != file.vine.dim() {
            return Err(Error::Structure(format!(
                "{} marginals but a {}-dimensional vine",
                file.marginals.dim(),
                file.vine.dim()
            )));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn csv_error(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {err}", path.display()))
}

/// Read a numeric table; a first row that does not parse is taken as a header.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| csv_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(csv_error(path, format!("line {}: {e}", line + 1))),
        }
    }
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().position(|r| r.len() != first.len()) {
            return Err(csv_error(path, format!("row {} has {} columns, expected {}", bad + 1, rows[bad].len(), first.len())));
        }
    }
    Ok(rows)
}

/// Write rows of numbers under a header line.
pub fn write_matrix_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer
            .write_record(row.iter().map(f64::to_string))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Column names `z0, z1, …`.
pub fn default_header(d: usize, prefix: &str) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}{i}")).collect()
}

/// Columns of a row-major table.
pub fn columns(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// Pseudo-observations `rank / (n + 1)` per column; ties get their average rank.
pub fn pseudo_observations(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    columns(rows)
        .into_iter()
        .map(|col| {
            let n = col.len();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut ranks = vec![0.0; n];
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j + 1 < n && col[idx[j + 1]] == col[idx[i]] {
                    j += 1;
                }
                let r = (i + j) as f64 / 2.0 + 1.0;
                for &k in &idx[i..=j] {
                    ranks[k] = r / (n as f64 + 1.0);
                }
                i = j + 1;
            }
            ranks
        })
        .collect()
}
