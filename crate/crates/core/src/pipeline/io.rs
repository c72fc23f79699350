//! File formats.
//!
//! Complex arrays use a one-line text header followed by raw little-endian
//! interleaved (re, im) samples:
//!
//! ```text
//! DECN1 <height> <width> <f32|f64>\n
//! ```
//!
//! k-space files hold natural (DC at the origin) order. Masks are stored in
//! their centred layout with `re` in {0, 1} and `im = 0`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{ComplexImage, KSpaceGrid};
use crate::metrics::RealMap;
use crate::sampling::{MaskPattern, SamplingMask};

pub const HEADER_TAG: &str = "DECN1";

/// Sample precision on disk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype `{other}`"))),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path)?))
}

pub fn write_array(w: &mut impl Write, height: usize, width: usize, data: &[Complex64], dtype: Dtype) -> Result<()> {
    writeln!(w, "{HEADER_TAG} {height} {width} {}", dtype.name())?;
    let mut buf = Vec::with_capacity(data.len() * 16);
    for z in data {
        match dtype {
            Dtype::F32 => {
                buf.extend_from_slice(&(z.re as f32).to_le_bytes());
                buf.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
            Dtype::F64 => {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_array(r: &mut impl BufRead) -> Result<(usize, usize, Vec<Complex64>)> {
    let mut header = Vec::new();
    r.take(128).read_until(b'\n', &mut header)?;
    if header.last() != Some(&b'\n') {
        return Err(Error::Format("missing or overlong header line".into()));
    }
    let header = std::str::from_utf8(&header).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [tag, h, w, dtype] = fields.as_slice() else {
        return Err(Error::Format(format!("bad header `{}`", header.trim_end())));
    };
    if *tag != HEADER_TAG {
        return Err(Error::Format(format!("expected {HEADER_TAG} header, found `{tag}`")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad dimension `{s}`")));
    let (height, width) = (parse(h)?, parse(w)?);
    let dtype: Dtype = dtype.parse()?;
    let n = height
        .checked_mul(width)
        .filter(|&n| n > 0 && n <= 1 << 28)
        .ok_or_else(|| Error::Format(format!("implausible size {height}x{width}")))?;
    let width_bytes = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let mut raw = vec![0u8; n * 2 * width_bytes];
    r.read_exact(&mut raw).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("payload is truncated".into()),
        _ => Error::Io(e),
    })?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let value = |chunk: &[u8]| match dtype {
        Dtype::F32 => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
        Dtype::F64 => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
    };
    let data = raw
        .chunks_exact(2 * width_bytes)
        .map(|c| Complex64::new(value(&c[..width_bytes]), value(&c[width_bytes..])))
        .collect();
    Ok((height, width, data))
}

pub fn save_image(path: &Path, img: &ComplexImage, dtype: Dtype) -> Result<()> {
    let mut w = create(path)?;
    write_array(&mut w, img.height(), img.width(), img.data(), dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<ComplexImage> {
    let (h, w, data) = read_array(&mut open(path)?)?;
    ComplexImage::new(h, w, data)
}

/// Writes k-space in natural order.
pub fn save_kspace(path: &Path, k: &KSpaceGrid, dtype: Dtype) -> Result<()> {
    let natural;
    let k = if k.dc_centered() {
        natural = crate::fourier::ifftshift2(k);
        &natural
    } else {
        k
    };
    let mut w = create(path)?;
    write_array(&mut w, k.height(), k.width(), k.data(), dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_kspace(path: &Path) -> Result<KSpaceGrid> {
    let (h, w, data) = read_array(&mut open(path)?)?;
    KSpaceGrid::new(h, w, data, false)
}

pub fn save_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    let data: Vec<Complex64> = mask
        .centered()
        .iter()
        .map(|&k| Complex64::new(if k { 1.0 } else { 0.0 }, 0.0))
        .collect();
    let mut w = create(path)?;
    write_array(&mut w, mask.height(), mask.width(), &data, Dtype::F32)?;
    w.flush()?;
    Ok(())
}

/// Reads a mask; the pattern is inferred (whole rows kept means Cartesian).
pub fn load_mask(path: &Path) -> Result<SamplingMask> {
    let (h, w, data) = read_array(&mut open(path)?)?;
    let mut kept = Vec::with_capacity(data.len());
    for z in &data {
        kept.push(match (z.re, z.im) {
            (v, i) if v == 1.0 && i == 0.0 => true,
            (v, i) if v == 0.0 && i == 0.0 => false,
            _ => return Err(Error::Format("mask entries must be 0 or 1".into())),
        });
    }
    let cartesian = kept.chunks(w).all(|row| row.iter().all(|&k| k) || row.iter().all(|&k| !k));
    let pattern = if cartesian {
        MaskPattern::Cartesian1D
    } else {
        MaskPattern::Random2D
    };
    SamplingMask::from_centered(h, w, kept, pattern, 0)
}

/// Binary 8-bit PGM with `lo..hi` mapped linearly onto 0..255 (clamped).
pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Dimension("pixel count does not match the image size".into()));
    }
    if !(hi > lo) {
        return Err(Error::Parameter(format!("empty display window [{lo}, {hi}]")));
    }
    let mut w = create(path)?;
    write!(w, "P5\n{width} {height}\n255\n")?;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&pixels)?;
    w.flush()?;
    Ok(())
}

/// Magnitude image on the full `0..1` window.
pub fn save_magnitude_pgm(path: &Path, img: &ComplexImage) -> Result<()> {
    write_pgm(path, img.height(), img.width(), &img.magnitude(), 0.0, 1.0)
}

/// Error display window.
pub const ERROR_WINDOW: (f64, f64) = (0.0, 0.2);

/// `|reference - test|` on the error window.
pub fn save_error_pgm(path: &Path, reference: &ComplexImage, test: &ComplexImage) -> Result<()> {
    reference.same_dims(test)?;
    let err: Vec<f64> = reference.data().iter().zip(test.data()).map(|(a, b)| (a - b).norm()).collect();
    write_pgm(path, reference.height(), reference.width(), &err, ERROR_WINDOW.0, ERROR_WINDOW.1)
}

pub fn save_real_map_pgm(path: &Path, map: &RealMap) -> Result<()> {
    write_pgm(path, map.height, map.width, &map.data, ERROR_WINDOW.0, ERROR_WINDOW.1)
}
