use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, DatasetManifest, Split};
use crate::format::{self, CrcScope, FormatError, PayloadReader, PayloadWriter};
use crate::rodmodel::DesignVector;
use crate::{DESIGN_DIM, TENDON_CHANNELS};

pub const DATASET_MAGIC: &[u8; 8] = b"TDCRDS1\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    manifest: DatasetManifest,
    split: Split,
}

pub(crate) fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>, DatasetError> {
    let header = Header {
        version: DATASET_VERSION,
        manifest: ds.manifest.clone(),
        split: ds.split.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    let mut payload =
        PayloadWriter::with_capacity(8 * (ds.len() * DESIGN_DIM + ds.arclengths.len() + ds.targets.len()));
    for d in &ds.designs {
        payload.put_f64s(&d.to_array());
    }
    payload.put_f64s(&ds.arclengths);
    payload.put_f64s(&ds.targets);
    Ok(format::encode(
        DATASET_MAGIC,
        &header,
        &payload.into_bytes(),
        CrcScope::Payload,
    ))
}

pub(crate) fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    let (header, payload) = format::decode(bytes, DATASET_MAGIC, CrcScope::Payload)?;
    let header: Header = serde_json::from_slice(header).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.version != DATASET_VERSION {
        return Err(FormatError::Version {
            expected: DATASET_VERSION,
            found: header.version,
        }
        .into());
    }
    let m = header.manifest;
    if m.num_tendons != crate::NUM_TENDONS || m.num_nodes == 0 {
        return Err(FormatError::Inconsistent(format!(
            "unsupported shape: {} tendons, {} nodes",
            m.num_tendons, m.num_nodes
        ))
        .into());
    }
    let n = m.num_samples;
    let mut reader = PayloadReader::new(payload);
    let raw = reader.f64s(n * DESIGN_DIM, "designs")?;
    let arclengths = reader.f64s(n * m.num_nodes, "arclengths")?;
    let targets = reader.f64s(n * m.num_nodes * TENDON_CHANNELS, "targets")?;
    reader.finish()?;

    let mut seen = vec![false; n];
    for &i in header.split.train.iter().chain(&header.split.test) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(FormatError::Inconsistent(format!("split index {i} out of range or repeated")).into());
        }
    }
    let designs: Vec<DesignVector> = raw
        .chunks_exact(DESIGN_DIM)
        .map(|c| DesignVector::from_array(c.try_into().unwrap()))
        .collect();
    let normalized = designs.iter().map(|d| m.normalization.normalize(d)).collect();
    Ok(Dataset {
        designs,
        normalized,
        arclengths,
        targets,
        split: header.split,
        manifest: m,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let bytes = encode_dataset(ds)?;
    format::atomic_write(path, &bytes)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let bytes = std::fs::read(path).map_err(FormatError::from)?;
    decode_dataset(&bytes)
}
