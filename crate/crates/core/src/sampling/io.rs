//! Binary mask files.
//!
//! Layout (little endian): `b"RIMK"`, version `u8`, height `u32`, width
//! `u32`, acceleration `f64`, seed `u64`, then the row-major pattern packed
//! eight samples per byte, least significant bit first. Unused bits of the
//! last byte are zero. The density and calibration fractions are not stored;
//! a decoded mask carries the default values.

use std::fs;
use std::path::Path;

use super::SamplingMask;
use crate::error::{Result, RimError};

const MAGIC: &[u8; 4] = b"RIMK";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 8 + 8;

pub fn encode_mask(mask: &SamplingMask) -> Vec<u8> {
    let n = mask.height() * mask.width();
    let mut out = Vec::with_capacity(HEADER_LEN + n.div_ceil(8));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(mask.height() as u32).to_le_bytes());
    out.extend_from_slice(&(mask.width() as u32).to_le_bytes());
    out.extend_from_slice(&mask.acceleration.to_le_bytes());
    out.extend_from_slice(&mask.seed.to_le_bytes());
    for chunk in mask.pattern().chunks(8) {
        let byte = chunk
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i));
        out.push(byte);
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes
        .get(at..at + len)
        .ok_or_else(|| RimError::parse(bytes.len(), format!("file ends before {what}")))
}

pub fn decode_mask(bytes: &[u8]) -> Result<SamplingMask> {
    if take(bytes, 0, 4, "magic")? != MAGIC {
        return Err(RimError::parse(0, "not a mask file (bad magic)"));
    }
    let version = take(bytes, 4, 1, "version")?[0];
    if version != VERSION {
        return Err(RimError::parse(4, format!("unsupported mask version {version}")));
    }
    let u32_at = |at: usize, what: &str| -> Result<usize> {
        Ok(u32::from_le_bytes(take(bytes, at, 4, what)?.try_into().unwrap()) as usize)
    };
    let height = u32_at(5, "height")?;
    let width = u32_at(9, "width")?;
    let acceleration = f64::from_le_bytes(take(bytes, 13, 8, "acceleration")?.try_into().unwrap());
    let seed = u64::from_le_bytes(take(bytes, 21, 8, "seed")?.try_into().unwrap());
    let n = height
        .checked_mul(width)
        .ok_or_else(|| RimError::parse(5, "grid size overflows"))?;
    let packed = take(bytes, HEADER_LEN, n.div_ceil(8), "end of pattern")?;
    if bytes.len() != HEADER_LEN + packed.len() {
        return Err(RimError::parse(
            HEADER_LEN + packed.len(),
            format!("{} trailing bytes", bytes.len() - HEADER_LEN - packed.len()),
        ));
    }
    let mut pattern = Vec::with_capacity(n);
    for (bi, &byte) in packed.iter().enumerate() {
        for bit in 0..8 {
            let i = bi * 8 + bit;
            let set = byte >> bit & 1 == 1;
            if i < n {
                pattern.push(set);
            } else if set {
                return Err(RimError::parse(HEADER_LEN + bi, "padding bits must be zero"));
            }
        }
    }
    SamplingMask::from_pattern(height, width, pattern, acceleration, seed)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    fs::write(path, encode_mask(mask))?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    decode_mask(&fs::read(path)?)
}
