//! Flat `key = value` run configuration.
//!
//! Recognised keys (all optional except `inputs`):
//!
//! | key | value | default |
//! |---|---|---|
//! | `inputs` | comma-separated image paths (`.pgm`, `.ppm`, `.raw`) | |
//! | `kind` | `binary` or `non_binary` | `non_binary` |
//! | `truncated_bits` | LSBs dropped after sampling | `0` |
//! | `codec` | `lossless` or a quality 1..=100 | `lossless` |
//! | `lambda` | SPL threshold multiplier | `6` |
//! | `max_iters` | SPL iteration cap | `200` |
//! | `epsilon` | SPL stopping tolerance on D | `1e-4` |
//! | `patience` | consecutive iterations that must meet `epsilon` | `3` |
//! | `basis` | `ddwt` or `dwt` | `ddwt` |
//! | `levels` | decomposition depth or `auto` | `auto` |
//! | `fpn_column_offset_sigma` | DN | `0` |
//! | `fpn_pixel_gain_sigma` | relative | `0` |
//! | `fpn_seed` | integer | `0` |
//! | `fpn_calibrate` | `true` or `false` | `false` |
//! | `output_dir` | directory for artifacts | none |
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. Relative paths in a file are resolved against the file's
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::codec::CodecMode;
use crate::error::{Error, Result};
use crate::pixel::FpnConfig;
use crate::reconstruct::SplConfig;
use crate::sampler::{SamplingKind, SamplingSpec};

const KEYS: [&str; 15] = [
    "inputs",
    "kind",
    "truncated_bits",
    "codec",
    "lambda",
    "max_iters",
    "epsilon",
    "patience",
    "basis",
    "levels",
    "fpn_column_offset_sigma",
    "fpn_pixel_gain_sigma",
    "fpn_seed",
    "fpn_calibrate",
    "output_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub kind: SamplingKind,
    pub truncated_bits: u8,
    pub codec: CodecMode,
    pub spl: SplConfig,
    pub fpn: FpnConfig,
    /// Reconstruct with the FPN gain map folded into the sampling matrix.
    pub fpn_calibrate: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            kind: SamplingKind::NonBinary,
            truncated_bits: 0,
            codec: CodecMode::Lossless,
            spl: SplConfig::default(),
            fpn: FpnConfig::default(),
            fpn_calibrate: false,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn spec(&self) -> Result<SamplingSpec> {
        SamplingSpec::of_kind(self.kind)
    }

    /// Depth of the stored measurement after truncation.
    pub fn bit_depth(&self) -> Result<u8> {
        let native = self.spec()?.native_bit_depth(8);
        if self.truncated_bits >= native {
            return Err(Error::Config(format!(
                "truncated_bits {} must be below the {native}-bit {} measurement depth",
                self.truncated_bits, self.kind
            )));
        }
        Ok(native - self.truncated_bits)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("no inputs".into()));
        }
        if self.kind == SamplingKind::Custom {
            return Err(Error::Config("custom sampling blocks are not configurable here".into()));
        }
        self.bit_depth()?;
        self.spl.validate().map_err(|e| Error::Config(e.to_string()))?;
        let f = &self.fpn;
        if !(f.column_offset_sigma >= 0.0 && f.pixel_gain_sigma >= 0.0) {
            return Err(Error::Config("FPN sigmas must be non-negative".into()));
        }
        Ok(())
    }

    /// Parses a config; relative paths are joined onto `base_dir`.
    pub fn from_kv_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            if kv.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        let mut cfg = PipelineConfig::default();
        for (k, v) in &kv {
            cfg.set(k, v, base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        PipelineConfig::from_kv_str(&text, base).map_err(|e| e.context(path.display().to_string()))
    }

    /// Overrides a single field by key name.
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("{key}: {value:?} is not {what}"));
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        match key {
            "inputs" => {
                self.inputs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(resolve)
                    .collect()
            }
            "kind" => self.kind = value.parse().map_err(|_| bad("a sampling kind"))?,
            "truncated_bits" => self.truncated_bits = value.parse().map_err(|_| bad("a bit count"))?,
            "codec" => self.codec = value.parse().map_err(|_| bad("lossless or a quality 1..=100"))?,
            "lambda" => self.spl.lambda = value.parse().map_err(|_| bad("a number"))?,
            "max_iters" => self.spl.max_iters = value.parse().map_err(|_| bad("an integer"))?,
            "epsilon" => self.spl.epsilon = value.parse().map_err(|_| bad("a number"))?,
            "patience" => self.spl.patience = value.parse().map_err(|_| bad("a positive integer"))?,
            "basis" => self.spl.basis = value.parse().map_err(|_| bad("ddwt or dwt"))?,
            "levels" => {
                self.spl.levels = match value {
                    "auto" => None,
                    v => Some(v.parse().map_err(|_| bad("an integer or auto"))?),
                }
            }
            "fpn_column_offset_sigma" => self.fpn.column_offset_sigma = value.parse().map_err(|_| bad("a number"))?,
            "fpn_pixel_gain_sigma" => self.fpn.pixel_gain_sigma = value.parse().map_err(|_| bad("a number"))?,
            "fpn_seed" => self.fpn.seed = value.parse().map_err(|_| bad("an integer"))?,
            "fpn_calibrate" => self.fpn_calibrate = value.parse().map_err(|_| bad("true or false"))?,
            "output_dir" => self.output_dir = Some(resolve(value)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Serialises every field; `from_kv_str` of the result gives back `self`.
    pub fn to_kv_string(&self) -> String {
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "inputs = {}", inputs.join(", "));
        let _ = writeln!(s, "kind = {}", self.kind);
        let _ = writeln!(s, "truncated_bits = {}", self.truncated_bits);
        let _ = writeln!(s, "codec = {}", self.codec);
        let _ = writeln!(s, "lambda = {}", self.spl.lambda);
        let _ = writeln!(s, "max_iters = {}", self.spl.max_iters);
        let _ = writeln!(s, "epsilon = {:e}", self.spl.epsilon);
        let _ = writeln!(s, "patience = {}", self.spl.patience);
        let _ = writeln!(s, "basis = {}", self.spl.basis);
        match self.spl.levels {
            Some(l) => writeln!(s, "levels = {l}"),
            None => writeln!(s, "levels = auto"),
        }
        .ok();
        let _ = writeln!(s, "fpn_column_offset_sigma = {}", self.fpn.column_offset_sigma);
        let _ = writeln!(s, "fpn_pixel_gain_sigma = {}", self.fpn.pixel_gain_sigma);
        let _ = writeln!(s, "fpn_seed = {}", self.fpn.seed);
        let _ = writeln!(s, "fpn_calibrate = {}", self.fpn_calibrate);
        if let Some(dir) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", dir.display());
        }
        s
    }
}
