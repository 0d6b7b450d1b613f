//! Reading and writing the JSON and CSV files the commands exchange.

use std::fs;
use std::path::Path;

use cvi_core::cvi::CviConfig;
use cvi_core::grad::TargetModel;
use cvi_core::io::PosteriorFile;
use cvi_core::models::{GaussianTarget, ModelSpec};
use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

/// Correlation of the built-in `figure1` target.
pub const FIGURE1_RHO: f64 = 0.8;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Parse JSON, naming the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> CliResult<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let field = if field == "." { "top level".to_string() } else { format!("field `{field}`") };
        CliError::Usage(format!("{}: {field}: {}", path.display(), e.inner()))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_json(&read_text(path)?, path)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(cvi_core::Error::from)?;
    write_text(path, &(text + "\n"))
}

pub fn load_config(path: Option<&Path>) -> CliResult<CviConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => CviConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_posterior(path: &Path) -> CliResult<PosteriorFile> {
    let text = read_text(path)?;
    // first pass for the field path, second for the version and dimension checks
    parse_json::<PosteriorFile>(&text, path)?;
    PosteriorFile::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// A built-in model name or the path of a model spec.
pub fn load_model(name: &str) -> CliResult<Box<dyn TargetModel>> {
    if name == "figure1" {
        return Ok(Box::new(GaussianTarget::correlated_pair(FIGURE1_RHO)?));
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(CliError::Usage(format!("unknown model {name:?}: not a built-in name or an existing file")));
    }
    let spec: ModelSpec = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    spec.build(base)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}
