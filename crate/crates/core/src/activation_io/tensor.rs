//! RACT tensor files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `b"RACT"`                |
//! | 4      | 4    | version, `u32` = 1             |
//! | 8      | 4    | dtype code, `u32`: 1 f32, 2 f64|
//! | 12     | 8    | rows, `u64`                    |
//! | 20     | 8    | cols, `u64`                    |
//! | 28     | ...  | row-major payload              |
//!
//! The payload length must equal `rows * cols * dtype_size` exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: [u8; 4] = *b"RACT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub rows: u64,
    pub cols: u64,
}

impl TensorHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&VERSION.to_le_bytes());
        out[8..12].copy_from_slice(&self.dtype.code().to_le_bytes());
        out[12..20].copy_from_slice(&self.rows.to_le_bytes());
        out[20..28].copy_from_slice(&self.cols.to_le_bytes());
        out
    }
}

/// Serializes a matrix into RACT bytes.
pub fn encode_tensor(matrix: &DenseMatrix, dtype: DType) -> Result<Vec<u8>> {
    let header = TensorHeader {
        dtype,
        rows: matrix.rows() as u64,
        cols: matrix.cols() as u64,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.data().len() * dtype.size());
    out.extend_from_slice(&header.to_bytes());
    match dtype {
        DType::F64 => {
            for v in matrix.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        DType::F32 => {
            for &v in matrix.data() {
                let narrow = v as f32;
                if !narrow.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "value {v} does not fit in float32"
                    )));
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<TensorHeader> {
    if bytes.len() < 4 {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("{} bytes is shorter than the magic", bytes.len()),
        });
    }
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes[0..4] != MAGIC {
        return Err(format(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("truncated header ({} bytes)", bytes.len()),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

    let version = u32_at(4);
    if version != VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let code = u32_at(8);
    let dtype = DType::from_code(code).ok_or_else(|| format(format!("unknown dtype code {code}")))?;
    Ok(TensorHeader {
        dtype,
        rows: u64_at(12),
        cols: u64_at(20),
    })
}

fn check_payload_len(header: &TensorHeader, payload_len: u64, path: &Path) -> Result<()> {
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|c| c.checked_mul(header.dtype.size() as u64));
    if expected != Some(payload_len) {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!(
                "header declares {}x{} {:?} but payload has {payload_len} bytes",
                header.rows, header.cols, header.dtype
            ),
        });
    }
    if header.rows == 0 || header.cols == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("empty {}x{} tensor", header.rows, header.cols),
        });
    }
    Ok(())
}

/// Parses RACT bytes; `path` is only used for error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<DenseMatrix> {
    let header = parse_header(bytes, path)?;
    let payload = &bytes[HEADER_LEN..];
    check_payload_len(&header, payload.len() as u64, path)?;

    let (rows, cols) = (header.rows as usize, header.cols as usize);
    let data: Vec<f64> = match header.dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    };
    DenseMatrix::from_vec(rows, cols, data).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_tensor(path: impl AsRef<Path>, matrix: &DenseMatrix, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(matrix, dtype)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a RACT file and promotes its payload to `f64`.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Reads and validates only the header, checking the file length against it.
pub fn read_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    use std::io::Read;

    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = Vec::with_capacity(HEADER_LEN);
    (&mut f)
        .take(HEADER_LEN as u64)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_header(&head, path)?;
    check_payload_len(&header, len - HEADER_LEN as u64, path)?;
    Ok(header)
}
