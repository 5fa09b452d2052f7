//! Integer image grids, raster I/O, PSNR and bit-depth utilities.
//!
//! Every stage of the chain passes [`Image`] values around: the 8-bit scene,
//! the 9/12-bit sampled measurement, truncated variants and decoded codec
//! output. Samples are stored row-major as `u16`, so depths up to 16 bits
//! are representable.
//!
//! Supported on-disk formats:
//! * binary PGM (`P5`), one byte per sample when `maxval < 256`, otherwise two
//!   big-endian bytes;
//! * raw little-endian `u16` samples plus a `key=value` text sidecar holding
//!   `width`, `height` and `bit_depth` (needed for 9..15-bit data);
//! * binary PPM (`P6`, 8-bit) for RGB inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Peak value used by [`psnr`]; quality is always judged at the 8-bit level.
pub const PSNR_PEAK: f64 = 255.0;

/// A 2-D grid of unsigned samples with an explicit bit depth.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    bit_depth: u8,
    samples: Vec<u16>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("bit_depth", &self.bit_depth)
            .finish_non_exhaustive()
    }
}

fn check_depth(bit_depth: u8) -> Result<()> {
    if (1..=16).contains(&bit_depth) {
        Ok(())
    } else {
        Err(Error::invalid(format!("bit depth {bit_depth} outside [1, 16]")))
    }
}

/// Largest sample representable at `bit_depth`.
pub fn max_sample(bit_depth: u8) -> u32 {
    (1u32 << bit_depth) - 1
}

/// Number of bits needed to represent every value in `0..=max_value`.
pub fn bits_for(max_value: u64) -> u8 {
    (64 - max_value.leading_zeros()).max(1) as u8
}

impl Image {
    pub fn new(width: usize, height: usize, bit_depth: u8, samples: Vec<u16>) -> Result<Self> {
        check_depth(bit_depth)?;
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if samples.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                samples.len()
            )));
        }
        let max = max_sample(bit_depth);
        if let Some(&bad) = samples.iter().find(|&&s| u32::from(s) > max) {
            return Err(Error::SampleOutOfRange {
                value: u32::from(bad),
                bit_depth,
            });
        }
        Ok(Image {
            width,
            height,
            bit_depth,
            samples,
        })
    }

    /// Builds an image by evaluating `f(row, col)`; values above the depth range are rejected.
    pub fn from_fn(width: usize, height: usize, bit_depth: u8, mut f: impl FnMut(usize, usize) -> u16) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                samples.push(f(r, c));
            }
        }
        Image::new(width, height, bit_depth, samples)
    }

    pub fn filled(width: usize, height: usize, bit_depth: u8, value: u16) -> Result<Self> {
        Image::new(width, height, bit_depth, vec![value; width * height])
    }

    /// Rounds a real grid to the nearest integer and clamps into the depth range.
    pub fn from_real(grid: &Array2<f64>, bit_depth: u8) -> Result<Self> {
        check_depth(bit_depth)?;
        let (height, width) = grid.dim();
        let max = f64::from(max_sample(bit_depth));
        let samples = grid
            .iter()
            .map(|&v| {
                let v = if v.is_nan() { 0.0 } else { v.round() };
                v.clamp(0.0, max) as u16
            })
            .collect();
        Image::new(width, height, bit_depth, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u16> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.samples[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[u16] {
        &self.samples[row * self.width..(row + 1) * self.width]
    }

    pub fn max_value(&self) -> u16 {
        self.samples.iter().copied().max().unwrap_or(0)
    }

    /// Same samples, relabelled with a wider bit depth.
    pub fn with_bit_depth(&self, bit_depth: u8) -> Result<Self> {
        Image::new(self.width, self.height, bit_depth, self.samples.clone())
    }

    /// Copies the samples into a `height x width` real array.
    pub fn to_real(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(r, c)| f64::from(self.get(r, c)))
    }
}

/// Color image made of three equally sized, equally deep planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    red: Image,
    green: Image,
    blue: Image,
}

impl RgbImage {
    pub fn new(red: Image, green: Image, blue: Image) -> Result<Self> {
        let same = |a: &Image, b: &Image| a.width == b.width && a.height == b.height && a.bit_depth == b.bit_depth;
        if !same(&red, &green) || !same(&red, &blue) {
            return Err(Error::DimensionMismatch("RGB planes differ in size or depth".into()));
        }
        Ok(RgbImage { red, green, blue })
    }

    pub fn red(&self) -> &Image {
        &self.red
    }

    pub fn green(&self) -> &Image {
        &self.green
    }

    pub fn blue(&self) -> &Image {
        &self.blue
    }
}

/// Splits an RGB image into independent `[red, green, blue]` planes.
pub fn split_planes(rgb: &RgbImage) -> [Image; 3] {
    [rgb.red.clone(), rgb.green.clone(), rgb.blue.clone()]
}

/// Inverse of [`split_planes`].
pub fn merge_planes(planes: [Image; 3]) -> Result<RgbImage> {
    let [r, g, b] = planes;
    RgbImage::new(r, g, b)
}

/// Discards the `k` least significant bits of every sample.
pub fn truncate_lsbs(img: &Image, k: u8) -> Result<Image> {
    if k >= img.bit_depth {
        return Err(Error::invalid(format!(
            "cannot truncate {k} bits from a {}-bit image",
            img.bit_depth
        )));
    }
    let samples = img.samples.iter().map(|&s| s >> k).collect();
    Image::new(img.width, img.height, img.bit_depth - k, samples)
}

/// Peak signal-to-noise ratio. Identical images have no finite value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared error between two equally sized images.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a, b)?;
    let sum: f64 = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(255^2 / MSE)` between two 8-bit images.
pub fn psnr(reference: &Image, candidate: &Image) -> Result<Psnr> {
    check_same_dims(reference, candidate)?;
    if reference.bit_depth != 8 || candidate.bit_depth != 8 {
        return Err(Error::invalid("PSNR is defined on 8-bit images"));
    }
    let err = mse(reference, candidate)?;
    if err == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (PSNR_PEAK * PSNR_PEAK / err).log10()))
}

/// On-disk layouts understood by [`load_image`] / [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Pgm8,
    Pgm16,
    /// Little-endian `u16` samples with a text sidecar.
    Raw,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Pgm8 => "pgm8",
            Format::Pgm16 => "pgm16",
            Format::Raw => "raw",
        }
    }

    /// Guesses a format from the file extension (`.pgm` is treated as 16-bit capable).
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Format::Pgm16),
            "raw" => Some(Format::Raw),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm8" => Ok(Format::Pgm8),
            "pgm16" => Ok(Format::Pgm16),
            "raw" => Ok(Format::Raw),
            other => Err(Error::invalid(format!("unknown image format {other:?}"))),
        }
    }
}

/// Path of the text sidecar that accompanies a raw sample file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

pub fn load_image(path: &Path, format: Format) -> Result<Image> {
    match format {
        Format::Pgm8 | Format::Pgm16 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let img = decode_pnm(&bytes, b"P5", 1)?.remove(0);
            if format == Format::Pgm8 && img.bit_depth > 8 {
                return Err(Error::DepthFormatMismatch {
                    bit_depth: img.bit_depth,
                    format: "pgm8",
                });
            }
            Ok(img)
        }
        Format::Raw => load_raw(path).map(|(img, _)| img),
    }
}

pub fn save_image(img: &Image, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Pgm8 | Format::Pgm16 => {
            if format == Format::Pgm8 && img.bit_depth > 8 {
                return Err(Error::DepthFormatMismatch {
                    bit_depth: img.bit_depth,
                    format: format.name(),
                });
            }
            let bytes = encode_pnm(b"P5", &[img]);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        Format::Raw => save_raw(img, path, &BTreeMap::new()),
    }
}

/// Writes raw samples plus a sidecar; `extra` keys are appended to the sidecar.
pub fn save_raw(img: &Image, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.len() * 2);
    for &s in &img.samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut meta = format!(
        "width={}\nheight={}\nbit_depth={}\n",
        img.width, img.height, img.bit_depth
    );
    for (k, v) in extra {
        meta.push_str(&format!("{k}={v}\n"));
    }
    let side = sidecar_path(path);
    fs::write(&side, meta).map_err(|e| Error::io(side, e))
}

/// Reads raw samples and returns the sidecar keys other than the geometry.
pub fn load_raw(path: &Path) -> Result<(Image, BTreeMap<String, String>)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut meta = BTreeMap::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("sidecar line {line:?}")))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut take = |key: &str| -> Result<usize> {
        meta.remove(key)
            .ok_or_else(|| Error::MalformedHeader(format!("sidecar missing {key}")))?
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("sidecar {key} is not an integer")))
    };
    let width = take("width")?;
    let height = take("height")?;
    let bit_depth = take("bit_depth")?;
    if !(1..=16).contains(&bit_depth) || width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "sidecar geometry {width}x{height}@{bit_depth}"
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = width * height * 2;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    let samples = bytes[..expected]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    Ok((Image::new(width, height, bit_depth as u8, samples)?, meta))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let planes = decode_pnm(&bytes, b"P6", 3)?;
    let [r, g, b]: [Image; 3] = planes
        .try_into()
        .map_err(|_| Error::MalformedHeader("PPM plane count".into()))?;
    RgbImage::new(r, g, b)
}

pub fn save_rgb(rgb: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_pnm(b"P6", &[&rgb.red, &rgb.green, &rgb.blue]);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_pnm(magic: &[u8], planes: &[&Image]) -> Vec<u8> {
    let first = planes[0];
    let maxval = max_sample(first.bit_depth);
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{} {}\n{}\n", first.width, first.height, maxval).as_bytes());
    for i in 0..first.len() {
        for p in planes {
            let s = p.samples[i];
            if maxval < 256 {
                out.push(s as u8);
            } else {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
    }
    out
}

/// Parses the whitespace/comment separated header tokens of a binary PNM.
fn pnm_header(bytes: &[u8]) -> Result<([usize; 3], usize)> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::MalformedHeader("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("expected a number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader("number too large".into()))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedHeader("missing separator after maxval".into()));
    }
    Ok((fields, pos + 1))
}

fn decode_pnm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<Vec<Image>> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::MalformedHeader(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let ([width, height, maxval], start) = pnm_header(bytes)?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("maxval {maxval}")));
    }
    let bit_depth = bits_for(maxval as u64);
    let wide = maxval > 255;
    let bytes_per = if wide { 2 } else { 1 };
    let expected = width * height * channels * bytes_per;
    let data = &bytes[start..];
    if data.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: data.len(),
        });
    }
    let mut planes = vec![Vec::with_capacity(width * height); channels];
    for (i, chunk) in data[..expected].chunks_exact(bytes_per).enumerate() {
        let v = if wide {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            u16::from(chunk[0])
        };
        if usize::from(v) > maxval {
            return Err(Error::SampleOutOfRange {
                value: u32::from(v),
                bit_depth,
            });
        }
        planes[i % channels].push(v);
    }
    planes
        .into_iter()
        .map(|s| Image::new(width, height, bit_depth, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn loads_small_pgm8() {
        let dir = tmp();
        let p = dir.path().join("a.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p, Format::Pgm8).unwrap();
        assert_eq!((img.width(), img.height(), img.bit_depth()), (2, 2, 8));
        assert_eq!(img.samples(), &[0, 255, 128, 64]);
    }

    #[test]
    fn pgm_with_comment_in_header() {
        let dir = tmp();
        let p = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n1 1\n255\n".to_vec();
        bytes.push(7);
        fs::write(&p, bytes).unwrap();
        assert_eq!(load_image(&p, Format::Pgm8).unwrap().samples(), &[7]);
    }

    #[test]
    fn pgm16_is_big_endian() {
        let dir = tmp();
        let p = dir.path().join("b.pgm");
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02, 0xff, 0xfe]);
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p, Format::Pgm16).unwrap();
        assert_eq!(img.bit_depth(), 16);
        assert_eq!(img.samples(), &[0x0102, 0xfffe]);
        assert!(matches!(
            load_image(&p, Format::Pgm8),
            Err(Error::DepthFormatMismatch { .. })
        ));
    }

    #[test]
    fn raw_sample_out_of_range() {
        let dir = tmp();
        let p = dir.path().join("x.raw");
        fs::write(&p, 4096u16.to_le_bytes()).unwrap();
        fs::write(sidecar_path(&p), "width=1\nheight=1\nbit_depth=12\n").unwrap();
        let err = load_image(&p, Format::Raw).unwrap_err();
        assert!(matches!(
            err,
            Error::SampleOutOfRange {
                value: 4096,
                bit_depth: 12
            }
        ));
        assert!(err.to_string().contains("sample out of range"));
    }

    #[test]
    fn distinct_diagnostics() {
        let dir = tmp();
        let p = dir.path().join("t.pgm");
        fs::write(&p, b"P5\n4 4\n255\n\x01\x02").unwrap();
        assert!(matches!(
            load_image(&p, Format::Pgm8),
            Err(Error::TruncatedFile { expected: 16, found: 2 })
        ));
        fs::write(&p, b"P2\n1 1\n255\n1").unwrap();
        assert!(matches!(load_image(&p, Format::Pgm8), Err(Error::MalformedHeader(_))));
        assert!(matches!(
            load_image(&dir.path().join("missing.pgm"), Format::Pgm8),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn pgm8_rejects_twelve_bit() {
        let dir = tmp();
        let img = Image::filled(3, 3, 12, 4000).unwrap();
        let err = save_image(&img, &dir.path().join("a.pgm"), Format::Pgm8).unwrap_err();
        assert!(matches!(err, Error::DepthFormatMismatch { bit_depth: 12, .. }));
    }

    #[test]
    fn raw_sidecar_records_geometry() {
        let dir = tmp();
        let p = dir.path().join("s.raw");
        let img = Image::from_fn(3, 2, 8, |r, c| (r * 3 + c) as u16).unwrap();
        save_image(&img, &p, Format::Raw).unwrap();
        let meta = fs::read_to_string(sidecar_path(&p)).unwrap();
        assert!(meta.contains("width=3"));
        assert!(meta.contains("height=2"));
        assert!(meta.contains("bit_depth=8"));
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = Image::filled(4, 4, 8, 9).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Infinite);
        assert_eq!(Psnr::Infinite.to_string(), "inf");
    }

    #[test]
    fn psnr_one_pixel_off_by_full_scale() {
        let a = Image::filled(512, 512, 8, 0).unwrap();
        let mut s = a.samples().to_vec();
        s[1000] = 255;
        let b = Image::new(512, 512, 8, s).unwrap();
        // 10 log10(512 * 512)
        let expected = 10.0 * 262_144f64.log10();
        let got = psnr(&a, &b).unwrap().db().unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 54.19).abs() < 0.01);
    }

    #[test]
    fn psnr_errors() {
        let a = Image::filled(4, 4, 8, 0).unwrap();
        let b = Image::filled(4, 2, 8, 0).unwrap();
        assert!(matches!(psnr(&a, &b), Err(Error::DimensionMismatch(_))));
        let c = Image::filled(4, 4, 9, 0).unwrap();
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn truncation_examples() {
        let a = Image::filled(1, 1, 9, 510).unwrap();
        let t = truncate_lsbs(&a, 1).unwrap();
        assert_eq!((t.samples()[0], t.bit_depth()), (255, 8));
        let b = Image::filled(1, 1, 12, 4080).unwrap();
        let t = truncate_lsbs(&b, 3).unwrap();
        assert_eq!((t.samples()[0], t.bit_depth()), (510, 9));
        assert_eq!(truncate_lsbs(&b, 0).unwrap(), b);
        assert!(truncate_lsbs(&b, 12).is_err());
    }

    #[test]
    fn gray_rgb_splits_into_identical_planes() {
        let g = Image::filled(5, 3, 8, 77).unwrap();
        let rgb = RgbImage::new(g.clone(), g.clone(), g.clone()).unwrap();
        let planes = split_planes(&rgb);
        assert!(planes.iter().all(|p| *p == g));
        assert_eq!(merge_planes(planes).unwrap(), rgb);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tmp();
        let p = dir.path().join("c.ppm");
        let mk = |k: u16| Image::from_fn(4, 3, 8, |r, c| (r * 40 + c * 7 + k as usize) as u16).unwrap();
        let rgb = RgbImage::new(mk(0), mk(1), mk(2)).unwrap();
        save_rgb(&rgb, &p).unwrap();
        assert_eq!(load_rgb(&p).unwrap(), rgb);
    }

    #[test]
    fn rejects_invalid_images() {
        assert!(Image::new(2, 2, 8, vec![0; 3]).is_err());
        assert!(Image::new(1, 1, 8, vec![256]).is_err());
        assert!(Image::new(1, 1, 17, vec![0]).is_err());
        assert!(Image::new(0, 1, 8, vec![]).is_err());
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..9, 1usize..9, 1u8..=16).prop_flat_map(|(w, h, d)| {
            proptest::collection::vec(0..=max_sample(d) as u16, w * h)
                .prop_map(move |s| Image::new(w, h, d, s).unwrap())
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(img in arb_image()) {
            let dir = tmp();
            for format in [Format::Pgm8, Format::Pgm16, Format::Raw] {
                if format == Format::Pgm8 && img.bit_depth() > 8 {
                    continue;
                }
                let p = dir.path().join("rt");
                save_image(&img, &p, format).unwrap();
                prop_assert_eq!(load_image(&p, format).unwrap(), img.clone());
            }
        }

        #[test]
        fn truncation_composes(
            (img, a, b) in arb_image().prop_flat_map(|img| {
                let d = img.bit_depth();
                (Just(img), 0..d).prop_flat_map(move |(img, a)| (Just(img), Just(a), 0..d - a))
            }),
        ) {
            let two_step = truncate_lsbs(&truncate_lsbs(&img, a).unwrap(), b).unwrap();
            prop_assert_eq!(two_step, truncate_lsbs(&img, a + b).unwrap());
        }

        #[test]
        fn mse_is_symmetric(
            a in proptest::collection::vec(0u16..256, 16),
            b in proptest::collection::vec(0u16..256, 16),
        ) {
            let a = Image::new(4, 4, 8, a).unwrap();
            let b = Image::new(4, 4, 8, b).unwrap();
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        }
    }
}
