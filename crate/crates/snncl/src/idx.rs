//! IDX image/label files, optionally gzip-compressed.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use snncl_core::dataset::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Failure while reading IDX files.
#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    /// File could not be opened or read.
    #[error("{path}: {source}")]
    Io {
        /// Offending file.
        path: PathBuf,
        /// Underlying error.
        source: io::Error,
    },
    /// Header magic does not match the expected kind.
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        /// Offending file.
        path: PathBuf,
        /// Magic read from the file.
        found: u32,
        /// Magic for this kind of file.
        expected: u32,
    },
    /// Fewer bytes than the header declares.
    #[error("{path}: truncated, header declares {expected} payload bytes but {actual} present")]
    Truncated {
        /// Offending file.
        path: PathBuf,
        /// Declared payload size.
        expected: usize,
        /// Bytes actually present.
        actual: usize,
    },
    /// Image and label files disagree on the number of items.
    #[error("{images} images but {labels} labels")]
    CountMismatch {
        /// Items in the image file.
        images: usize,
        /// Items in the label file.
        labels: usize,
    },
}

fn read_all(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io_err = |source| IdxError::Io { path: path.to_path_buf(), source };
    let mut raw = Vec::new();
    BufReader::new(File::open(path).map_err(io_err)?).read_to_end(&mut raw).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses header dims and returns (dims, payload).
fn parse(path: &Path, bytes: &[u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, Vec<u8>), IdxError> {
    let header = 4 + 4 * ndims;
    let truncated = |expected, actual| IdxError::Truncated { path: path.to_path_buf(), expected, actual };
    let found = be_u32(bytes, 0).ok_or_else(|| truncated(header, bytes.len()))?;
    if found != magic {
        return Err(IdxError::BadMagic { path: path.to_path_buf(), found, expected: magic });
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| truncated(header, bytes.len()))?;
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual < expected {
        return Err(truncated(expected, actual));
    }
    Ok((dims, bytes[header..header + expected].to_vec()))
}

/// Loads an image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, IdxError> {
    let (idims, pixels) = parse(images, &read_all(images)?, IMAGE_MAGIC, 3)?;
    let (ldims, labs) = parse(labels, &read_all(labels)?, LABEL_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(IdxError::CountMismatch { images: idims[0], labels: ldims[0] });
    }
    Ok(Dataset::new(idims[1], idims[2], pixels, labs).expect("dimensions checked against payload"))
}

/// Writes `ds` as an uncompressed image/label file pair.
pub fn write_idx(ds: &Dataset, images: &Path, labels: &Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(images)?);
    f.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for d in [ds.len(), ds.rows(), ds.cols()] {
        f.write_all(&(d as u32).to_be_bytes())?;
    }
    for i in 0..ds.len() {
        f.write_all(ds.raw_image(i))?;
    }
    f.flush()?;
    let mut f = io::BufWriter::new(File::create(labels)?);
    f.write_all(&LABEL_MAGIC.to_be_bytes())?;
    f.write_all(&(ds.len() as u32).to_be_bytes())?;
    f.write_all(ds.labels())?;
    f.flush()
}

/// Standard MNIST-style file names under `root`, for `train` or test split.
/// A `.gz` variant is used when the plain file is missing.
pub fn split_paths(root: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    let pick = |name: String| {
        let plain = root.join(&name);
        let gz = root.join(format!("{name}.gz"));
        if !plain.exists() && gz.exists() {
            gz
        } else {
            plain
        }
    };
    (pick(format!("{prefix}-images-idx3-ubyte")), pick(format!("{prefix}-labels-idx1-ubyte")))
}
