//! Baseline-JPEG-style still-image codec for 1..=16-bit grayscale planes.
//!
//! The lossy path is level shift, 8x8 DCT, quantization, zigzag, DC
//! prediction and run/size Huffman coding. The lossless path is left-neighbour
//! DPCM with Huffman-coded magnitude categories. Entropy tables are built per
//! image and stored in the container as canonical code lengths.
//!
//! Container layout (multi-byte fields little-endian):
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `OSCJ` |
//! | 4 | 1 | version (1) |
//! | 5 | 1 | mode: 0 lossy (fixed quantizer), 1 lossless, 2 lossy (depth-proportional quantizer) |
//! | 6 | 1 | quality (0 when lossless) |
//! | 7 | 1 | bit depth |
//! | 8 | 4 | width |
//! | 12 | 4 | height |
//! | 16 | 4 | padded width |
//! | 20 | 4 | padded height |
//! | 24 | 1 | table count `T` |
//! | 25 | .. | `T` tables: entry count u16, then (symbol u16, code length u8) per entry |
//! | .. | 4 | payload length |
//! | .. | .. | payload: MSB-first bitstream, zero padded to a byte |

mod bits;
mod dct;
mod huffman;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{self, Image};
use bits::{category, extend, magnitude_bits, BitReader, BitWriter};
pub use huffman::HuffmanTable;

pub const MAGIC: [u8; 4] = *b"OSCJ";
pub const VERSION: u8 = 1;
const FIXED_HEADER_LEN: usize = 25;

const BASE_LUMINANCE: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Zigzag scan position -> natural (row-major) index.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54,
    47, 55, 62, 63,
];

const EOB: u16 = 0;
const ZRL: u16 = 15 << 5;

/// Quantizer step sizes in natural (row-major) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable(pub [u32; 64]);

impl QuantTable {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.0[row * 8 + col]
    }
}

/// How the 8-bit quantizer is adapted to other sample depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantScaling {
    /// The 8-bit table is used unchanged at every depth, as extended-precision
    /// baseline JPEG encoders do. Extra sample bits then cost extra bytes.
    #[default]
    Fixed,
    /// Steps are multiplied by `2^(bit_depth - 8)`, keeping the quantization
    /// error relative to full scale independent of depth.
    Proportional,
}

/// Standard luminance table scaled for `quality` and `bit_depth`.
///
/// Quality scale is `5000/q` percent below 50 and `200 - 2q` percent from 50
/// up; the result is then scaled by `2^(bit_depth - 8)` and clamped to >= 1.
pub fn quant_table(quality: u8, bit_depth: u8) -> Result<QuantTable> {
    quant_table_with(quality, bit_depth, QuantScaling::Proportional)
}

/// [`quant_table`] with an explicit depth policy.
pub fn quant_table_with(quality: u8, bit_depth: u8, scaling: QuantScaling) -> Result<QuantTable> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("quality {quality} outside 1..=100")));
    }
    check_depth(bit_depth)?;
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0u32; 64];
    for (dst, &base) in t.iter_mut().zip(&BASE_LUMINANCE) {
        let v = (base * scale + 50) / 100;
        let v = if scaling == QuantScaling::Fixed {
            v
        } else if bit_depth >= 8 {
            v << (bit_depth - 8)
        } else {
            let sh = 8 - bit_depth;
            (v + (1 << (sh - 1))) >> sh
        };
        *dst = v.max(1);
    }
    Ok(QuantTable(t))
}

fn check_depth(bit_depth: u8) -> Result<()> {
    if (1..=16).contains(&bit_depth) {
        Ok(())
    } else {
        Err(Error::invalid(format!("unsupported bit depth {bit_depth}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodecMode {
    Quality(u8),
    Lossless,
}

impl fmt::Display for CodecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecMode::Quality(q) => write!(f, "{q}"),
            CodecMode::Lossless => f.write_str("lossless"),
        }
    }
}

impl FromStr for CodecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("lossless") {
            return Ok(CodecMode::Lossless);
        }
        let q: u8 = s
            .parse()
            .map_err(|_| Error::invalid(format!("codec mode {s:?} is neither a quality nor \"lossless\"")))?;
        if !(1..=100).contains(&q) {
            return Err(Error::invalid(format!("quality {q} outside 1..=100")));
        }
        Ok(CodecMode::Quality(q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecHeader {
    pub mode: CodecMode,
    /// Always `Fixed` for lossless streams.
    pub quant_scaling: QuantScaling,
    pub bit_depth: u8,
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
}

/// An encoded image as stored in the container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedImage {
    header: CodecHeader,
    tables: Vec<HuffmanTable>,
    payload: Vec<u8>,
}

impl CodedImage {
    pub fn header(&self) -> &CodecHeader {
        &self.header
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn tables(&self) -> &[HuffmanTable] {
        &self.tables
    }

    /// Length of [`CodedImage::to_bytes`].
    pub fn size_bytes(&self) -> usize {
        FIXED_HEADER_LEN + self.tables.iter().map(|t| 2 + 3 * t.entries().len()).sum::<usize>() + 4 + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.size_bytes());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        let (mode, quality) = match (h.mode, h.quant_scaling) {
            (CodecMode::Quality(q), QuantScaling::Fixed) => (0, q),
            (CodecMode::Quality(q), QuantScaling::Proportional) => (2, q),
            (CodecMode::Lossless, _) => (1, 0),
        };
        out.extend_from_slice(&[mode, quality, h.bit_depth]);
        for v in [h.width, h.height, h.padded_width, h.padded_height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.tables.len() as u8);
        for t in &self.tables {
            out.extend_from_slice(&(t.entries().len() as u16).to_le_bytes());
            for &(sym, len) in t.entries() {
                out.extend_from_slice(&sym.to_le_bytes());
                out.push(len);
            }
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::CorruptStream("bad magic".into()));
        }
        let version = cur.u8()?;
        if version != VERSION {
            return Err(Error::CorruptStream(format!("unsupported version {version}")));
        }
        let mode = cur.u8()?;
        let quality = cur.u8()?;
        let bit_depth = cur.u8()?;
        let (mode, quant_scaling) = match (mode, quality) {
            (0, 1..=100) => (CodecMode::Quality(quality), QuantScaling::Fixed),
            (2, 1..=100) => (CodecMode::Quality(quality), QuantScaling::Proportional),
            (1, 0) => (CodecMode::Lossless, QuantScaling::Fixed),
            _ => return Err(Error::CorruptStream(format!("bad mode {mode} / quality {quality}"))),
        };
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::CorruptStream(format!("bad bit depth {bit_depth}")));
        }
        let header = CodecHeader {
            mode,
            quant_scaling,
            bit_depth,
            width: cur.u32()?,
            height: cur.u32()?,
            padded_width: cur.u32()?,
            padded_height: cur.u32()?,
        };
        check_geometry(&header)?;
        let n_tables = cur.u8()?;
        let expected_tables = if mode == CodecMode::Lossless { 1 } else { 2 };
        if usize::from(n_tables) != expected_tables {
            return Err(Error::CorruptStream(format!(
                "expected {expected_tables} tables, found {n_tables}"
            )));
        }
        let mut tables = Vec::with_capacity(expected_tables);
        for _ in 0..n_tables {
            let n = cur.u16()?;
            let mut entries = Vec::with_capacity(usize::from(n));
            for _ in 0..n {
                entries.push((cur.u16()?, cur.u8()?));
            }
            tables.push(HuffmanTable::from_entries(entries)?);
        }
        let len = cur.u32()? as usize;
        let payload = cur.take(len)?.to_vec();
        if cur.pos != bytes.len() {
            return Err(Error::CorruptStream("trailing bytes after payload".into()));
        }
        Ok(CodedImage {
            header,
            tables,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptStream("container truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn check_geometry(h: &CodecHeader) -> Result<()> {
    let ok_dims = h.width > 0 && h.height > 0 && h.padded_width >= h.width && h.padded_height >= h.height;
    let ok_pad = match h.mode {
        CodecMode::Lossless => h.padded_width == h.width && h.padded_height == h.height,
        CodecMode::Quality(_) => {
            h.padded_width % 8 == 0
                && h.padded_height % 8 == 0
                && h.padded_width.saturating_sub(h.width) < 8
                && h.padded_height.saturating_sub(h.height) < 8
        }
    };
    let ok_size = u64::from(h.padded_width) * u64::from(h.padded_height) <= 1 << 32;
    if ok_dims && ok_pad && ok_size {
        Ok(())
    } else {
        Err(Error::CorruptStream(format!(
            "inconsistent geometry {}x{} padded to {}x{}",
            h.width, h.height, h.padded_width, h.padded_height
        )))
    }
}

/// Symbol plus the raw magnitude bits that follow it.
struct Coded {
    table: usize,
    symbol: u16,
    extra: u32,
    extra_len: u32,
}

fn build_stream(symbols: &[Coded], n_tables: usize) -> (Vec<HuffmanTable>, Vec<u8>) {
    let mut freqs = vec![BTreeMap::new(); n_tables];
    for s in symbols {
        *freqs[s.table].entry(s.symbol).or_insert(0u64) += 1;
    }
    let tables: Vec<HuffmanTable> = freqs.iter().map(HuffmanTable::from_frequencies).collect();
    let encoders: Vec<_> = tables.iter().map(HuffmanTable::encoder).collect();
    let mut w = BitWriter::default();
    for s in symbols {
        encoders[s.table].put(&mut w, s.symbol);
        w.put(s.extra, s.extra_len);
    }
    (tables, w.finish())
}

fn push_value(out: &mut Vec<Coded>, table: usize, run: u16, v: i32) {
    let size = category(v);
    out.push(Coded {
        table,
        symbol: (run << 5) | size as u16,
        extra: magnitude_bits(v, size),
        extra_len: size,
    });
}

/// Replicate-edge padding to multiples of 8.
fn padded_block(img: &Image, by: usize, bx: usize) -> [f64; 64] {
    let shift = f64::from(1u32 << (img.bit_depth() - 1));
    std::array::from_fn(|i| {
        let r = (by * 8 + i / 8).min(img.height() - 1);
        let c = (bx * 8 + i % 8).min(img.width() - 1);
        f64::from(img.get(r, c)) - shift
    })
}

fn encode_lossy(img: &Image, quality: u8, scaling: QuantScaling) -> Result<CodedImage> {
    let q = quant_table_with(quality, img.bit_depth(), scaling)?;
    let (bw, bh) = (img.width().div_ceil(8), img.height().div_ceil(8));
    let blocks: Vec<[i32; 64]> = (0..bw * bh)
        .into_par_iter()
        .map(|k| {
            let coeffs = dct::forward(&padded_block(img, k / bw, k % bw));
            std::array::from_fn(|z| {
                let n = ZIGZAG[z];
                (coeffs[n] / f64::from(q.0[n])).round() as i32
            })
        })
        .collect();
    let mut symbols = Vec::with_capacity(blocks.len() * 8);
    let mut prev_dc = 0;
    for b in &blocks {
        push_value(&mut symbols, 0, 0, b[0] - prev_dc);
        prev_dc = b[0];
        let mut run = 0u16;
        for &v in &b[1..] {
            if v == 0 {
                run += 1;
                continue;
            }
            while run > 15 {
                symbols.push(Coded {
                    table: 1,
                    symbol: ZRL,
                    extra: 0,
                    extra_len: 0,
                });
                run -= 16;
            }
            push_value(&mut symbols, 1, run, v);
            run = 0;
        }
        if run > 0 {
            symbols.push(Coded {
                table: 1,
                symbol: EOB,
                extra: 0,
                extra_len: 0,
            });
        }
    }
    let (tables, payload) = build_stream(&symbols, 2);
    Ok(CodedImage {
        header: CodecHeader {
            mode: CodecMode::Quality(quality),
            quant_scaling: scaling,
            bit_depth: img.bit_depth(),
            width: img.width() as u32,
            height: img.height() as u32,
            padded_width: (bw * 8) as u32,
            padded_height: (bh * 8) as u32,
        },
        tables,
        payload,
    })
}

fn lossless_prediction(samples: &[u16], width: usize, idx: usize, bit_depth: u8) -> i32 {
    if idx == 0 {
        1 << (bit_depth - 1)
    } else if idx % width == 0 {
        i32::from(samples[idx - width])
    } else {
        i32::from(samples[idx - 1])
    }
}

fn encode_lossless(img: &Image) -> CodedImage {
    let s = img.samples();
    let symbols: Vec<Coded> = (0..s.len())
        .map(|i| {
            let v = i32::from(s[i]) - lossless_prediction(s, img.width(), i, img.bit_depth());
            let size = category(v);
            Coded {
                table: 0,
                symbol: size as u16,
                extra: magnitude_bits(v, size),
                extra_len: size,
            }
        })
        .collect();
    let (tables, payload) = build_stream(&symbols, 1);
    CodedImage {
        header: CodecHeader {
            mode: CodecMode::Lossless,
            quant_scaling: QuantScaling::Fixed,
            bit_depth: img.bit_depth(),
            width: img.width() as u32,
            height: img.height() as u32,
            padded_width: img.width() as u32,
            padded_height: img.height() as u32,
        },
        tables,
        payload,
    }
}

/// Encodes with the default [`QuantScaling::Fixed`] quantizer.
pub fn encode(img: &Image, mode: CodecMode) -> Result<CodedImage> {
    encode_with(img, mode, QuantScaling::default())
}

pub fn encode_with(img: &Image, mode: CodecMode, scaling: QuantScaling) -> Result<CodedImage> {
    check_depth(img.bit_depth())?;
    match mode {
        CodecMode::Quality(q) => encode_lossy(img, q, scaling),
        CodecMode::Lossless => Ok(encode_lossless(img)),
    }
}

fn read_value(r: &mut BitReader, size: u32) -> Result<i32> {
    if size > 24 {
        return Err(Error::CorruptStream(format!("magnitude category {size} too large")));
    }
    Ok(extend(r.bits(size)?, size))
}

fn decode_lossy(coded: &CodedImage, quality: u8) -> Result<Image> {
    let h = coded.header;
    let q = quant_table_with(quality, h.bit_depth, h.quant_scaling)?;
    let (bw, bh) = (h.padded_width as usize / 8, h.padded_height as usize / 8);
    let dc = coded.tables[0].decoder();
    let ac = coded.tables[1].decoder();
    let mut r = BitReader::new(&coded.payload);
    let mut blocks = Vec::with_capacity(bw * bh);
    let mut prev_dc = 0i32;
    for _ in 0..bw * bh {
        let mut zz = [0i32; 64];
        let size = u32::from(dc.get(&mut r)?);
        prev_dc = prev_dc
            .checked_add(read_value(&mut r, size)?)
            .ok_or_else(|| Error::CorruptStream("DC overflow".into()))?;
        zz[0] = prev_dc;
        let mut k = 1;
        while k < 64 {
            let sym = ac.get(&mut r)?;
            if sym == EOB {
                break;
            }
            let (run, size) = (usize::from(sym >> 5), u32::from(sym & 31));
            if size == 0 {
                if sym != ZRL {
                    return Err(Error::CorruptStream(format!("bad AC symbol {sym}")));
                }
                k += 16;
                continue;
            }
            k += run;
            if k >= 64 {
                return Err(Error::CorruptStream("AC run past end of block".into()));
            }
            zz[k] = read_value(&mut r, size)?;
            k += 1;
        }
        if k > 64 {
            return Err(Error::CorruptStream("AC run past end of block".into()));
        }
        blocks.push(zz);
    }
    let max = f64::from(image::max_sample(h.bit_depth));
    let shift = f64::from(1u32 << (h.bit_depth - 1));
    let pixels: Vec<[u16; 64]> = blocks
        .par_iter()
        .map(|zz| {
            let mut coeffs = [0.0; 64];
            for (z, &v) in zz.iter().enumerate() {
                let n = ZIGZAG[z];
                coeffs[n] = f64::from(v) * f64::from(q.0[n]);
            }
            let x = dct::inverse(&coeffs);
            std::array::from_fn(|i| (x[i] + shift).round().clamp(0.0, max) as u16)
        })
        .collect();
    let (w, ht) = (h.width as usize, h.height as usize);
    Image::from_fn(w, ht, h.bit_depth, |row, col| {
        pixels[(row / 8) * bw + col / 8][(row % 8) * 8 + col % 8]
    })
}

fn decode_lossless(coded: &CodedImage) -> Result<Image> {
    let h = coded.header;
    let (w, ht) = (h.width as usize, h.height as usize);
    let dec = coded.tables[0].decoder();
    let mut r = BitReader::new(&coded.payload);
    let max = image::max_sample(h.bit_depth) as i32;
    let mut samples = vec![0u16; w * ht];
    for i in 0..samples.len() {
        let size = u32::from(dec.get(&mut r)?);
        let v = lossless_prediction(&samples, w, i, h.bit_depth) + read_value(&mut r, size)?;
        if !(0..=max).contains(&v) {
            return Err(Error::CorruptStream(format!("decoded sample {v} out of range")));
        }
        samples[i] = v as u16;
    }
    Image::new(w, ht, h.bit_depth, samples)
}

pub fn decode(coded: &CodedImage) -> Result<Image> {
    check_geometry(&coded.header)?;
    match coded.header.mode {
        CodecMode::Quality(q) if coded.tables.len() == 2 => decode_lossy(coded, q),
        CodecMode::Lossless if coded.tables.len() == 1 => decode_lossless(coded),
        _ => Err(Error::CorruptStream("table count does not match mode".into())),
    }
}

/// `100 · candidate / baseline` for byte counts.
pub fn normalized_percent(candidate_bytes: usize, baseline_bytes: usize) -> Result<f64> {
    if baseline_bytes == 0 {
        return Err(Error::invalid("baseline size is zero"));
    }
    Ok(100.0 * candidate_bytes as f64 / baseline_bytes as f64)
}

/// Size of `candidate` as a percentage of `baseline`.
pub fn normalized_size(candidate: &CodedImage, baseline: &CodedImage) -> Result<f64> {
    normalized_percent(candidate.size_bytes(), baseline.size_bytes())
}
