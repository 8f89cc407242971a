//! Volume files and slice ingestion.
//!
//! Layout (little endian): `b"RIMV"`, version `u8`, domain `u8` (0 image,
//! 1 k-space), frequency-encode axis `u8`, coil count `u32`, three spatial
//! dimensions `u32`, then `coils * d0 * d1 * d2` complex samples as
//! interleaved `f32` (re, im) pairs, coil-major then row-major. A TOML
//! sidecar (`<file>.toml`) records the modality tag, the normalization
//! constant and free-form provenance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RimError};
use crate::numcore::fft::fft1_centered;
use crate::numcore::ComplexImage;
use crate::rim::checkpoint::sidecar_path;

const MAGIC: &[u8; 4] = b"RIMV";
const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 + 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    Kspace,
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub modality: String,
    /// Factor the stored samples were divided by; always positive.
    pub normalization: f64,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Default for VolumeInfo {
    fn default() -> Self {
        Self {
            modality: "unknown".into(),
            normalization: 1.0,
            provenance: BTreeMap::new(),
        }
    }
}

/// Multi-coil 3-D grid of complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub coils: usize,
    pub domain: Domain,
    pub frequency_axis: usize,
    pub data: Vec<Complex32>,
    pub info: VolumeInfo,
}

impl Volume {
    pub fn new(dims: [usize; 3], coils: usize, domain: Domain, frequency_axis: usize, data: Vec<Complex32>) -> Result<Self> {
        if frequency_axis > 2 {
            return Err(RimError::Config(format!("frequency axis {frequency_axis} is not 0, 1 or 2")));
        }
        let n = coils * dims.iter().product::<usize>();
        if data.len() != n || n == 0 {
            return Err(RimError::shape(format!(
                "{} samples for {coils} coils of {dims:?}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            coils,
            domain,
            frequency_axis,
            data,
            info: VolumeInfo::default(),
        })
    }

    /// Single-coil, single-slice image volume (`dims = [1, h, w]`).
    pub fn from_image(img: &ComplexImage) -> Self {
        Self::from_images(std::slice::from_ref(img)).expect("one image is consistent")
    }

    /// One image per coil as a single-slice volume.
    pub fn from_images(images: &[ComplexImage]) -> Result<Self> {
        let first = images.first().ok_or_else(|| RimError::shape("no images"))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            img.ensure_shape(h, w)?;
            data.extend(img.data().iter().map(|c| Complex32::new(c.re as f32, c.im as f32)));
        }
        Self::new([1, h, w], images.len(), Domain::Image, 0, data)
    }

    fn index(&self, coil: usize, i: [usize; 3]) -> usize {
        ((coil * self.dims[0] + i[0]) * self.dims[1] + i[1]) * self.dims[2] + i[2]
    }

    pub fn get(&self, coil: usize, i: [usize; 3]) -> Complex64 {
        let v = self.data[self.index(coil, i)];
        Complex64::new(v.re as f64, v.im as f64)
    }

    /// Coil images of a single-slice volume.
    pub fn images(&self) -> Result<Vec<ComplexImage>> {
        if self.dims[0] != 1 {
            return Err(RimError::shape(format!("expected one slice, volume is {:?}", self.dims)));
        }
        let (h, w) = (self.dims[1], self.dims[2]);
        Ok((0..self.coils)
            .map(|c| ComplexImage::from_fn(h, w, |y, x| self.get(c, [0, y, x])))
            .collect())
    }
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + v.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match v.domain {
        Domain::Image => 0,
        Domain::Kspace => 1,
    });
    out.push(v.frequency_axis as u8);
    out.extend_from_slice(&(v.coils as u32).to_le_bytes());
    for d in v.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for c in &v.data {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(RimError::parse(bytes.len(), "file ends inside the header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(RimError::parse(0, "not a volume file (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(RimError::parse(4, format!("unsupported volume version {}", bytes[4])));
    }
    let domain = match bytes[5] {
        0 => Domain::Image,
        1 => Domain::Kspace,
        d => return Err(RimError::parse(5, format!("unknown domain flag {d}"))),
    };
    let axis = bytes[6] as usize;
    if axis > 2 {
        return Err(RimError::parse(6, format!("frequency axis {axis} out of range")));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let coils = u32_at(7);
    let dims = [u32_at(11), u32_at(15), u32_at(19)];
    let n = dims
        .iter()
        .try_fold(coils, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| RimError::parse(7, "empty or overflowing dimensions"))?;
    let expected = n
        .checked_mul(8)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| RimError::parse(7, "payload size overflows"))?;
    if bytes.len() != expected {
        return Err(RimError::parse(
            bytes.len().min(expected),
            format!("payload holds {} bytes, header implies {}", bytes.len() - HEADER_LEN, expected - HEADER_LEN),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes(c[..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect();
    Volume::new(dims, coils, domain, axis, data)
}

/// Writes the volume and its sidecar.
pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    if !(v.info.normalization > 0.0) {
        return Err(RimError::Config(format!(
            "normalization constant {} must be positive",
            v.info.normalization
        )));
    }
    let path = path.as_ref();
    fs::write(path, encode_volume(v))?;
    let text = toml::to_string(&v.info).map_err(|e| RimError::Config(e.to_string()))?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

/// Reads a volume; a missing sidecar yields default info.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut v = decode_volume(&fs::read(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        let info: VolumeInfo = toml::from_str(&fs::read_to_string(&side)?)
            .map_err(|e| RimError::Config(format!("{}: {e}", side.display())))?;
        if !(info.normalization > 0.0) {
            return Err(RimError::Config(format!(
                "{}: normalization must be positive",
                side.display()
            )));
        }
        v.info = info;
    }
    Ok(v)
}

/// One 2-D slice across all coils.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub index: usize,
    pub domain: Domain,
    pub coils: Vec<ComplexImage>,
}

/// Splits a volume into 2-D slices along its frequency-encode axis. K-space
/// volumes are first inverse transformed (centered, orthonormal) along that
/// axis, leaving each slice in 2-D k-space over the phase-encode axes.
pub fn slice_ingest(v: &Volume) -> Result<Vec<Slice>> {
    let axis = v.frequency_axis;
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (n, h, w) = (v.dims[axis], v.dims[others[0]], v.dims[others[1]]);
    let at = |s: usize, y: usize, x: usize| {
        let mut i = [0usize; 3];
        i[axis] = s;
        i[others[0]] = y;
        i[others[1]] = x;
        i
    };
    let mut hybrid: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n * h * w]; v.coils];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for (c, plane) in hybrid.iter_mut().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for (s, l) in line.iter_mut().enumerate() {
                    *l = v.get(c, at(s, y, x));
                }
                if v.domain == Domain::Kspace {
                    fft1_centered(&mut line, true);
                }
                for (s, l) in line.iter().enumerate() {
                    plane[(s * h + y) * w + x] = *l;
                }
            }
        }
    }
    (0..n)
        .map(|s| {
            let coils = hybrid
                .iter()
                .map(|plane| ComplexImage::from_vec(h, w, plane[s * h * w..(s + 1) * h * w].to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Slice {
                index: s,
                domain: v.domain,
                coils,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(a: &[f32], b: &[f32], c: &[f32], axis: usize) -> Volume {
        let mut dims = [0; 3];
        let lens = [a.len(), b.len(), c.len()];
        // `a` runs along the frequency axis, b and c along the others in order
        let others: Vec<usize> = (0..3).filter(|&d| d != axis).collect();
        dims[axis] = lens[0];
        dims[others[0]] = lens[1];
        dims[others[1]] = lens[2];
        let mut data = vec![Complex32::new(0.0, 0.0); lens.iter().product()];
        for i0 in 0..dims[0] {
            for i1 in 0..dims[1] {
                for i2 in 0..dims[2] {
                    let i = [i0, i1, i2];
                    let v = a[i[axis]] * b[i[others[0]]] * c[i[others[1]]];
                    data[(i0 * dims[1] + i1) * dims[2] + i2] = Complex32::new(v, 0.0);
                }
            }
        }
        Volume::new(dims, 1, Domain::Kspace, axis, data).unwrap()
    }

    #[test]
    fn separable_volume_slices_are_known_sections() {
        // a constant line transforms to sqrt(n) at the center sample; an
        // alternating line to sqrt(n) at sample 0
        let b = [1.0, -2.0, 3.0, 0.5, 4.0];
        let c = [2.0, 1.0, -1.0, 0.25];
        for axis in 0..3 {
            for (a, peak) in [(vec![1.0f32; 8], 4usize), ((0..8).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect(), 0)] {
                let slices = slice_ingest(&separable(&a, &b, &c, axis)).unwrap();
                assert_eq!(slices.len(), 8);
                for s in &slices {
                    let scale = if s.index == peak { 8f64.sqrt() } else { 0.0 };
                    for y in 0..b.len() {
                        for x in 0..c.len() {
                            let expect = scale * b[y] as f64 * c[x] as f64;
                            assert!((s.coils[0].get(y, x) - Complex64::new(expect, 0.0)).norm() < 1e-8);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn image_volumes_slice_without_transform() {
        let img = ComplexImage::from_fn(3, 4, |y, x| Complex64::new(y as f64, x as f64));
        let v = Volume::from_images(&[img.clone(), img.scale(2.0)]).unwrap();
        let slices = slice_ingest(&v).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].coils[1], img.scale(2.0));
        assert_eq!(v.images().unwrap()[0], img);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<Complex32> = (0..2 * 3 * 4 * 5).map(|i| Complex32::new(i as f32 * 0.1, -(i as f32).sqrt())).collect();
        let mut v = Volume::new([3, 4, 5], 2, Domain::Kspace, 1, data).unwrap();
        v.info.modality = "t1".into();
        v.info.normalization = 3.5;
        v.info.provenance.insert("source".into(), "test".into());
        let path = dir.path().join("v.rimv");
        write_volume(&path, &v).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(encode_volume(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn corrupt_files_are_parse_errors() {
        let v = Volume::from_image(&ComplexImage::zeros(2, 2));
        let bytes = encode_volume(&v);
        let offset = |b: &[u8]| match decode_volume(b) {
            Err(RimError::Parse { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        assert_eq!(offset(&bytes[..10]), 10);
        assert_eq!(offset(&bytes[..bytes.len() - 3]), bytes.len() - 3);
        let mut bad = bytes.clone();
        bad[5] = 7;
        assert_eq!(offset(&bad), 5);
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_volume(&long).is_err());
    }

    #[test]
    fn non_positive_normalization_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Volume::from_image(&ComplexImage::zeros(2, 2));
        v.info.normalization = 0.0;
        assert!(matches!(write_volume(dir.path().join("v"), &v), Err(RimError::Config(_))));
    }
}
