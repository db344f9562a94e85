//! Dual-encoder checkpoint format.
//!
//! Single binary file: an 8-byte magic, a versioned header describing the
//! featurizer and dimensions, then row-major little-endian f32 weight
//! blocks (token embedding, projection). A JSON sidecar at `<path>.json`
//! records the training config that produced the weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

use super::{DualEncoderModel, EncoderError, Featurizer, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QFDENC01";
const CHECKPOINT_VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> EncoderError {
    EncoderError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: &str) -> EncoderError {
    EncoderError::BadCheckpoint {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn write_to<S: Scalar, W: Write>(model: &DualEncoderModel<S>, w: &mut W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(model.featurizer().hash_space)?;
    let orders = &model.featurizer().orders;
    w.write_u32::<LittleEndian>(orders.len() as u32)?;
    for order in orders {
        w.write_u8(*order)?;
    }
    w.write_u32::<LittleEndian>(model.hidden_dim() as u32)?;
    w.write_u32::<LittleEndian>(model.output_dim() as u32)?;
    w.write_u8(u8::from(model.normalizes()))?;
    for v in model.token_embedding().as_slice() {
        w.write_f32::<LittleEndian>(v.to_f32_lossy())?;
    }
    for v in model.projection().as_slice() {
        w.write_f32::<LittleEndian>(v.to_f32_lossy())?;
    }
    Ok(())
}

/// Serialized checkpoint bytes; also the basis of the model fingerprint.
pub(super) fn to_bytes<S: Scalar>(model: &DualEncoderModel<S>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_to(model, &mut buf).expect("in-memory write cannot fail");
    buf
}

/// Writes the checkpoint and, when a config is given, a `<path>.json`
/// sidecar with the training config.
pub fn save_checkpoint<S: Scalar>(
    model: &DualEncoderModel<S>,
    path: &Path,
    config: Option<&TrainConfig>,
) -> Result<(), EncoderError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(model, &mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))?;
    if let Some(config) = config {
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(config).expect("config serializes");
        std::fs::write(&sidecar, json).map_err(|e| io_err(&sidecar, e))?;
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Loads a checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<DualEncoderModel<S>, EncoderError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(path, "bad magic; not a dual-encoder checkpoint"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(path, &format!("unsupported version {version}")));
    }
    let hash_space = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    let n_orders = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if n_orders == 0 || n_orders > 8 {
        return Err(bad(path, "implausible n-gram order count"));
    }
    let mut orders = Vec::with_capacity(n_orders as usize);
    for _ in 0..n_orders {
        orders.push(r.read_u8().map_err(|e| io_err(path, e))?);
    }
    let hidden = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let output = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let normalize = r.read_u8().map_err(|e| io_err(path, e))? != 0;

    let featurizer = Featurizer::new(hash_space, &orders);
    let mut token = DenseMatrix::zeros(hash_space as usize, hidden);
    for v in token.as_mut_slice() {
        *v = S::from_f32_exact(r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?);
    }
    let mut projection = DenseMatrix::zeros(hidden, output);
    for v in projection.as_mut_slice() {
        *v = S::from_f32_exact(r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| io_err(path, e))? != 0 {
        return Err(bad(path, "trailing bytes after weight blocks"));
    }
    Ok(DualEncoderModel::from_parts(featurizer, token, projection, normalize))
}
