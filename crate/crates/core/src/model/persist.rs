//! Binary model container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! (format version, config, codebook ids), then `W` and `C` as row-major
//! little-endian `f64`. Codebook vectors are regenerated from the seed.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::codebook::Codebooks;
use super::lam::{Covariance, LamModel, ModelConfig};
use crate::error::{Error, Result};
use crate::temporal_kb::YearRange;

const MAGIC: &[u8; 8] = b"TKEMODEL";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 30;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    d: usize,
    seed: u64,
    lambda: f64,
    alpha: f64,
    horizon_range: YearRange,
    entities: Vec<String>,
    relations: Vec<String>,
}

fn write_matrix<W: Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_matrix<R: Read>(input: &mut R, d: usize, what: &str) -> Result<DMatrix<f64>> {
    let mut buf = vec![0u8; 8 * d * d];
    input
        .read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("truncated {what} matrix")))?;
    let mut m = DMatrix::zeros(d, d);
    for (idx, chunk) in buf.chunks_exact(8).enumerate() {
        let value = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        m[(idx / d, idx % d)] = value;
    }
    Ok(m)
}

pub fn save<W: Write>(model: &LamModel, mut out: W) -> Result<()> {
    let cfg = model.config();
    let books = model.codebooks();
    let header = Header {
        format_version: FORMAT_VERSION,
        d: cfg.d,
        seed: cfg.seed,
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        horizon_range: cfg.horizon_range,
        entities: books.entities.ids().to_vec(),
        relations: books.relations.ids().to_vec(),
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    write_matrix(&mut out, model.weights())?;
    write_matrix(&mut out, &model.covariance().to_dense())?;
    out.flush()?;
    Ok(())
}

pub fn load<R: Read>(mut input: R) -> Result<LamModel> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| Error::Format("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|_| Error::Format("truncated header".into()))?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::Format(format!("header length {len} is implausible")));
    }
    let mut raw = vec![0u8; len as usize];
    input.read_exact(&mut raw).map_err(|_| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", header.format_version)));
    }
    let config = ModelConfig {
        d: header.d,
        seed: header.seed,
        lambda: header.lambda,
        alpha: header.alpha,
        horizon_range: header.horizon_range,
    };
    if config.d < super::lam::MIN_DIM || config.d > 1 << 14 {
        return Err(Error::Format(format!("dimension {} out of range", config.d)));
    }
    let w = read_matrix(&mut input, config.d, "W")?;
    let c = read_matrix(&mut input, config.d, "C")?;
    let books = Codebooks::new(config.seed, config.d, header.entities, header.relations, config.horizon_range);
    let cov = Covariance::from_dense(c, config.lambda);
    Ok(LamModel::from_parts(config, Arc::new(books), w, cov))
}

pub fn save_file(model: &LamModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    save(model, std::io::BufWriter::new(file))
}

pub fn load_file(path: &Path) -> Result<LamModel> {
    let file = std::fs::File::open(path)?;
    load(std::io::BufReader::new(file))
}
