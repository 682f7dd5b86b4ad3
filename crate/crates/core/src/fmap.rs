//! `FMAP1` feature-map file format.
//!
//! Layout: 16-byte header (magic `FMAP`, then u32 little-endian channels,
//! height, width) followed by `C*H*W` little-endian IEEE-754 f32 values,
//! row-major within each channel, channels consecutive.

use crate::tensor::{Tensor3, TensorError};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"FMAP";

/// Errors reading or writing `FMAP1` files.
#[derive(Debug)]
pub enum FmapError {
    Io(std::io::Error),
    BadMagic([u8; 4]),
    /// Declared shape does not match the remaining payload size.
    Truncated { expected_values: usize, actual_bytes: usize },
    Invalid(TensorError),
}

impl std::fmt::Display for FmapError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FmapError::Io(e) => write!(f, "fmap io error: {e}"),
            FmapError::BadMagic(m) => write!(f, "bad FMAP1 magic {m:?}"),
            FmapError::Truncated { expected_values, actual_bytes } => write!(
                f,
                "truncated FMAP1 payload: expected {expected_values} f32 values, got {actual_bytes} bytes"
            ),
            FmapError::Invalid(e) => write!(f, "invalid FMAP1 contents: {e}"),
        }
    }
}

impl std::error::Error for FmapError {}

impl From<std::io::Error> for FmapError {
    fn from(e: std::io::Error) -> Self {
        FmapError::Io(e)
    }
}

/// Serialize a tensor into an `FMAP1` byte stream.
pub fn write<W: Write>(t: &Tensor3, mut out: W) -> Result<(), FmapError> {
    out.write_all(&MAGIC)?;
    out.write_all(&(t.channels() as u32).to_le_bytes())?;
    out.write_all(&(t.height() as u32).to_le_bytes())?;
    out.write_all(&(t.width() as u32).to_le_bytes())?;
    let mut bytes = Vec::with_capacity(t.data().len() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Parse a tensor from an `FMAP1` byte stream.
pub fn read<R: Read>(mut input: R) -> Result<Tensor3, FmapError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FmapError::BadMagic(magic));
    }
    let c = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let expected = c * h * w;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != expected * 4 {
        return Err(FmapError::Truncated { expected_values: expected, actual_bytes: payload.len() });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor3::new(c, h, w, data).map_err(FmapError::Invalid)
}

/// Write a tensor to a file.
pub fn save(t: &Tensor3, path: &Path) -> Result<(), FmapError> {
    let file = std::fs::File::create(path)?;
    write(t, std::io::BufWriter::new(file))
}

/// Read a tensor from a file.
pub fn load(path: &Path) -> Result<Tensor3, FmapError> {
    let file = std::fs::File::open(path)?;
    read(std::io::BufReader::new(file))
}
