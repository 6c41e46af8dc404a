use std::path::Path;

use super::idx::{Image, SIDE};
use crate::error::{Error, Result};

/// Binary PGM (P5) bytes for one image.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{SIDE} {SIDE}\n255\n").into_bytes();
    out.extend_from_slice(image);
    out
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}
