//! Binary model files.
//!
//! Layout (little endian):
//!
//! ```text
//! b"SELFCERT" | u32 version | u32 header_len | JSON header | u64 P | P x f64 ...
//! ```
//!
//! A deterministic network stores one block of `P` values, a Gaussian stores
//! `mu` then `rho`. Values are written as raw IEEE bits, so a round trip is
//! exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{FcnArchitecture, WeightSet};
use crate::pnn::GaussianWeightDist;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SELFCERT";
pub const FORMAT_VERSION: u32 = 1;
/// Refuse absurd headers instead of allocating them.
const MAX_HEADER_LEN: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Deterministic,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Prior scale the distribution was built from, if any.
    pub sigma_0: Option<f64>,
    pub p_min: f64,
    pub seeds: BTreeMap<String, u64>,
    /// Free-form provenance (dataset hash, mode, partition indices...).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    layer_sizes: Vec<usize>,
    #[serde(flatten)]
    meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Deterministic(WeightSet),
    Gaussian(GaussianWeightDist),
}

impl Model {
    pub fn arch(&self) -> &FcnArchitecture {
        match self {
            Model::Deterministic(w) => w.arch(),
            Model::Gaussian(q) => q.arch(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Deterministic(_) => ModelKind::Deterministic,
            Model::Gaussian(_) => ModelKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub meta: ModelMeta,
}

fn write_block<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_block<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..len)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

pub fn write_model<W: Write>(mut w: W, file: &ModelFile) -> Result<()> {
    let header = Header {
        kind: file.model.kind(),
        layer_sizes: file.model.arch().layer_sizes().to_vec(),
        meta: file.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(file.model.arch().num_params() as u64).to_le_bytes())?;
    match &file.model {
        Model::Deterministic(ws) => write_block(&mut w, ws.params())?,
        Model::Gaussian(q) => {
            write_block(&mut w, q.mu())?;
            write_block(&mut w, q.rho())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelFile> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::ModelFormat("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("not a model file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let header_len = read_u32(&mut r)?;
    if header_len > MAX_HEADER_LEN {
        return Err(Error::ModelFormat("header too large".into()));
    }
    let mut json = vec![0u8; header_len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let arch = FcnArchitecture::new(header.layer_sizes)?;
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let p = u64::from_le_bytes(b) as usize;
    if p != arch.num_params() {
        return Err(Error::ModelFormat(format!(
            "parameter count {p} does not match architecture ({})",
            arch.num_params()
        )));
    }
    let model = match header.kind {
        ModelKind::Deterministic => Model::Deterministic(WeightSet::from_params(&arch, read_block(&mut r, p)?)?),
        ModelKind::Gaussian => {
            let mu = read_block(&mut r, p)?;
            let rho = read_block(&mut r, p)?;
            Model::Gaussian(GaussianWeightDist::new(&arch, mu, rho)?)
        }
    };
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::ModelFormat("trailing bytes".into()));
    }
    Ok(ModelFile {
        model,
        meta: header.meta,
    })
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), file)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    read_model(BufReader::new(File::open(path)?))
}
