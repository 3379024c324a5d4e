//! Binary model checkpoints. Floats are stored as raw bits, so a saved and
//! reloaded model continues bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use snncl_core::network::NetworkModel;

use crate::error::AppError;

const MAGIC: &[u8; 8] = b"SNNCLCK1";

/// Writes `model` to `path` through a temporary file, so an interrupted
/// write never leaves a truncated checkpoint behind.
pub fn save(model: &NetworkModel, path: &Path) -> Result<(), AppError> {
    let err = |e: &dyn std::fmt::Display| AppError::Runtime(format!("{}: {e}", path.display()));
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(|e| err(&e))?);
        w.write_all(MAGIC).map_err(|e| err(&e))?;
        bincode::serialize_into(&mut w, model).map_err(|e| err(&e))?;
        w.flush().map_err(|e| err(&e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| err(&e))
}

/// Reads a checkpoint written by [`save`].
pub fn load(path: &Path) -> Result<NetworkModel, AppError> {
    let err = |e: &dyn std::fmt::Display| AppError::Data(format!("{}: {e}", path.display()));
    let mut r = BufReader::new(File::open(path).map_err(|e| err(&e))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| err(&e))?;
    if &magic != MAGIC {
        return Err(err(&"not a model checkpoint"));
    }
    bincode::deserialize_from(r).map_err(|e| err(&e))
}
