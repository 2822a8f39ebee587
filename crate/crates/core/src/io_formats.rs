//! Binary matrix/vector files, CSV interchange, and grayscale slice export.
//!
//! `SMX1` and `VEC1` files are a 4-byte magic, little-endian `u32`
//! dimensions, then IEEE-754 binary64 values in little-endian byte order
//! (row-major for matrices). The byte order is fixed regardless of host.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MATRIX_MAGIC: [u8; 4] = *b"SMX1";
pub const VECTOR_MAGIC: [u8; 4] = *b"VEC1";

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::DimensionOverflow(d))
}

pub fn encode_matrix(a: &Matrix) -> Result<Vec<u8>> {
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return Err(Error::invalid("matrix files require n >= 1 and m >= 1"));
    }
    let (n32, m32) = (dim_u32(n)?, dim_u32(m)?);
    let mut buf = Vec::with_capacity(12 + 8 * n * m);
    buf.extend_from_slice(&MATRIX_MAGIC);
    buf.extend_from_slice(&n32.to_le_bytes());
    buf.extend_from_slice(&m32.to_le_bytes());
    for v in a.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let header = bytes.get(..12).ok_or(Error::TruncatedHeader)?;
    check_magic(&header[..4], MATRIX_MAGIC)?;
    let n = read_u32(&header[4..8]) as usize;
    let m = read_u32(&header[8..12]) as usize;
    if n == 0 || m == 0 {
        return Err(Error::invalid("matrix file declares a zero dimension"));
    }
    let values = decode_payload(&bytes[12..], n * m)?;
    Matrix::new(n, m, values)
}

pub fn encode_vector(v: &[f64]) -> Result<Vec<u8>> {
    let n32 = dim_u32(v.len())?;
    let mut buf = Vec::with_capacity(8 + 8 * v.len());
    buf.extend_from_slice(&VECTOR_MAGIC);
    buf.extend_from_slice(&n32.to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_vector(bytes: &[u8]) -> Result<Vec<f64>> {
    let header = bytes.get(..8).ok_or(Error::TruncatedHeader)?;
    check_magic(&header[..4], VECTOR_MAGIC)?;
    let n = read_u32(&header[4..8]) as usize;
    decode_payload(&bytes[8..], n)
}

fn check_magic(found: &[u8], expected: [u8; 4]) -> Result<()> {
    if found != expected {
        let mut f = [0u8; 4];
        f.copy_from_slice(found);
        return Err(Error::BadMagic { expected, found: f });
    }
    Ok(())
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn decode_payload(payload: &[u8], count: usize) -> Result<Vec<f64>> {
    let expected = count * 8;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_matrix(path: impl AsRef<Path>, a: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(a)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}

pub fn write_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_vector(v)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vector(&bytes)
}

/// CSV text for a matrix: one row per line, `,` separated, 17 significant digits.
pub fn matrix_to_csv(a: &Matrix) -> String {
    let mut out = String::new();
    for r in a.iter_rows() {
        let line: Vec<String> = r.iter().map(|v| format_csv_value(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

/// One value per line.
pub fn vector_to_csv(v: &[f64]) -> String {
    let mut out = String::with_capacity(v.len() * 24);
    for x in v {
        out.push_str(&format_csv_value(*x));
        out.push('\n');
    }
    out
}

pub fn vector_from_csv(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

fn format_csv_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Regular voxel grid; voxel `(ix, iy, iz)` has linear index
/// `ix + nx * (iy + ny * iz)` and its center at
/// `origin + (i + 0.5) * spacing` per axis, in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[serde(alias = "X")]
    X,
    #[serde(alias = "Y")]
    Y,
    #[serde(alias = "Z")]
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("grid spacings must be strictly positive"));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let idx = [ix, iy, iz];
        std::array::from_fn(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.spacing[a])
    }

    /// Voxel volume in cubic millimetres (equal to microlitres).
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Physical extent along each axis.
    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a])
    }
}

/// Grayscale image of one slice, one byte per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl SliceImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn pixel(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Renders slice `index` along `axis`.
///
/// Intensity is `round(255 · x_v / max(x))` with the maximum taken over the
/// whole volume, so slices of one reconstruction share a gray scale.
/// Negative values render as black. For an `X` slice the image columns run
/// along y and rows along z; for `Y`, columns x and rows z; for `Z`,
/// columns x and rows y.
pub fn render_slice(x: &[f64], grid: &VoxelGrid, axis: Axis, index: usize) -> Result<SliceImage> {
    if x.len() != grid.len() {
        return Err(Error::dims(format!(
            "vector of length {} for a grid of {} voxels",
            x.len(),
            grid.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("slice export requires finite values"));
    }
    let a = axis.index();
    if index >= grid.dims[a] {
        return Err(Error::SliceOutOfRange {
            index,
            len: grid.dims[a],
        });
    }
    let (ca, ra) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let max = x.iter().cloned().fold(0.0f64, f64::max);
    let (width, height) = (grid.dims[ca], grid.dims[ra]);
    let mut pixels = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let mut idx = [0usize; 3];
            idx[a] = index;
            idx[ca] = c;
            idx[ra] = r;
            let v = x[grid.linear_index(idx[0], idx[1], idx[2])];
            let p = if max > 0.0 && v > 0.0 {
                (255.0 * v / max).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            pixels.push(p);
        }
    }
    Ok(SliceImage { width, height, pixels })
}

pub fn export_slice_image(x: &[f64], grid: &VoxelGrid, axis: Axis, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let img = render_slice(x, grid, axis, index)?;
    let path = path.as_ref();
    fs::write(path, img.to_pgm()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_zero_is_twenty_bytes() {
        let bytes = encode_matrix(&Matrix::zeros(1, 1)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"SMX1");
        assert!(bytes[12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn identity_payload_is_row_major() {
        let bytes = encode_matrix(&Matrix::identity(2)).unwrap();
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = encode_matrix(&Matrix::identity(2)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_matrix(&bytes).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_and_oversized_payloads_are_distinct() {
        let bytes = encode_matrix(&Matrix::identity(2)).unwrap();
        let err = decode_matrix(&bytes[..12 + 24]).unwrap_err();
        assert!(matches!(
            err,
            Error::TruncatedPayload {
                expected: 32,
                found: 24
            }
        ));
        assert!(err.to_string().contains("truncated payload"));

        let mut long = bytes.clone();
        long.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode_matrix(&long).unwrap_err(), Error::SizeMismatch { .. }));
        assert!(matches!(
            decode_matrix(&bytes[..7]).unwrap_err(),
            Error::TruncatedHeader
        ));
    }

    #[test]
    fn vector_roundtrip_keeps_special_values() {
        let v = vec![0.0, -0.0, f64::MIN_POSITIVE, f64::MAX, f64::INFINITY, 1.0 / 3.0];
        let back = decode_vector(&encode_vector(&v).unwrap()).unwrap();
        let bits = |w: &[f64]| w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&v));
        assert!(matches!(
            decode_vector(b"SMX1\0\0\0\0").unwrap_err(),
            Error::BadMagic { .. }
        ));
    }

    #[test]
    fn csv_is_lossless_at_seventeen_digits() {
        let a = Matrix::from_fn(3, 2, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0));
        let back = matrix_from_csv(&matrix_to_csv(&a)).unwrap();
        assert_eq!(back, a);
        let v = vec![0.1, 2.0 / 3.0, -1e-300];
        assert_eq!(vector_from_csv(&vector_to_csv(&v)).unwrap(), v);
    }

    fn grid3() -> VoxelGrid {
        VoxelGrid::new([4, 3, 2], [1.0, 1.0, 1.0], [0.0; 3]).unwrap()
    }

    #[test]
    fn zero_volume_renders_black() {
        let g = grid3();
        let img = render_slice(&vec![0.0; g.len()], &g, Axis::Z, 1).unwrap();
        assert_eq!((img.width, img.height), (4, 3));
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn single_voxel_renders_single_white_pixel() {
        let g = grid3();
        let mut x = vec![0.0; g.len()];
        x[g.linear_index(2, 1, 1)] = 1.0;
        let img = render_slice(&x, &g, Axis::Z, 1).unwrap();
        assert_eq!(img.pixel(2, 1), 255);
        assert_eq!(img.pixels.iter().filter(|&&p| p != 0).count(), 1);
        let other = render_slice(&x, &g, Axis::Z, 0).unwrap();
        assert!(other.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn slice_out_of_range_errors() {
        let g = grid3();
        let err = render_slice(&vec![0.0; g.len()], &g, Axis::Z, 2).unwrap_err();
        assert!(matches!(err, Error::SliceOutOfRange { index: 2, len: 2 }));
    }

    #[test]
    fn pgm_header() {
        let img = SliceImage {
            width: 2,
            height: 1,
            pixels: vec![0, 255],
        };
        assert_eq!(img.to_pgm(), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }
}
