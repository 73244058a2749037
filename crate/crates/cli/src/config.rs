//! Config loading, error classification and run provenance files.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use tdcrop::dataset::DatasetError;
use tdcrop::eval::EvalError;
use tdcrop::neuralops::ModelError;
use tdcrop::training::TrainError;

/// A usage or configuration problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for a failed command: 2 for usage and configuration errors, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        let config = cause.is::<UsageError>()
            || matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::Config(_)))
            || matches!(cause.downcast_ref::<EvalError>(), Some(EvalError::Config(_)))
            || matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Config(_)))
            || matches!(
                cause.downcast_ref::<DatasetError>(),
                Some(DatasetError::InvalidArgument(_))
            );
        if config {
            return 2;
        }
    }
    1
}

/// Turns a serde path into an RFC 6901 JSON pointer.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for segment in path.iter() {
        out.push('/');
        let token = match segment {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.clone(),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => "?".into(),
        };
        out.push_str(&token.replace('~', "~0").replace('/', "~1"));
    }
    out
}

/// Parses a JSON config; schema violations name the offending JSON pointer.
pub fn parse_config<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        let pointer = if pointer.is_empty() { "/".to_string() } else { pointer };
        usage(format!("{origin}: at {pointer}: {}", e.inner()))
    })
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// Reads `path` if given, else the type's defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_config)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the effective config (`config.json`) and the run manifest
/// (`manifest.json`) into `out`.
pub fn write_provenance<T: Serialize>(out: &Path, command: &str, config: &T, seeds: &[u64]) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let value = serde_json::to_value(config)?;
    let canonical = serde_json::to_vec(&value)?;
    let hash: String = Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect();
    write_json(&out.join("config.json"), &value)?;
    let manifest = json!({
        "command": command,
        "config_sha256": hash,
        "seeds": seeds,
        "versions": {
            "tdcrop": env!("CARGO_PKG_VERSION"),
            "format": {
                "checkpoint": tdcrop::training::CHECKPOINT_VERSION,
                "dataset": tdcrop::dataset::DATASET_VERSION,
            },
        },
        "threads": rayon::current_num_threads(),
    });
    write_json(&out.join("manifest.json"), &manifest)
}

/// `flag` if given, else the config value, else `fallback`.
pub fn pick_dir(flag: Option<&Path>, from_config: Option<&Path>, fallback: &str) -> PathBuf {
    flag.or(from_config)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(fallback))
}
