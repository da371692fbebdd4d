//! Chromosomes: ordered lists of distortion genes with activation bits.
//!
//! # Binary encoding (version 1)
//!
//! All integers little-endian, floats IEEE-754 binary64.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SRMT" (53 52 4D 54)
//! 4       1     version (0x01)
//! 5       2     gene count (u16)
//! 7       ...   genes, back to back
//!
//! gene:
//!   1  active (0x00 | 0x01)
//!   1  kind tag (0 RegionDropout, 1 LineColumnDropout, 2 LineStripping,
//!              3 SaltPepper, 4 SpatialGaussian, 5 ChannelDropout,
//!              6 ChannelGaussian)
//!   8  seed (u64)
//!   .. kind fields:
//!        RegionDropout      p_min f64, p_max f64
//!        LineColumnDropout  orientation u8 (0 row, 1 column), index u32, fill u8 (0 min, 1 max)
//!        LineStripping      stride u32, orientation u8, fill u8
//!        SaltPepper         p_salt f64, p_pepper f64
//!        SpatialGaussian    mu f64, sigma f64
//!        ChannelDropout     channel u8, fill u8
//!        ChannelGaussian    channel u8, mu f64, sigma f64
//!   1  affected flag (0x00 absent, 0x01 present)
//!   if present: count u32, then count x u32 pixel indices
//! ```
//!
//! Trailing bytes after the last gene are rejected.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Shape;
use crate::rng;
use crate::transforms::{
    Distortion, DistortionKind, DistortionParams, Fill, Interval, Orientation, Param, ParameterBounds,
};

pub const MAGIC: &[u8; 4] = b"SRMT";
pub const VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenomeError {
    #[error("invalid genome config: {0}")]
    InvalidConfig(String),
    #[error("malformed chromosome payload at byte {offset}: {message}")]
    MalformedPayload { offset: usize, message: String },
}

/// One distortion gene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTransform {
    pub active: bool,
    pub params: DistortionParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Vec<SubTransform>,
}

impl Chromosome {
    pub fn new(genes: Vec<SubTransform>) -> Self {
        Self { genes }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    /// The active genes, in order, as `(params, seed)` pairs.
    pub fn to_transform_sequence(&self) -> Vec<(DistortionParams, u64)> {
        self.genes
            .iter()
            .filter(|g| g.active)
            .map(|g| (g.params.clone(), g.seed))
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GenomeError> {
        decode(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }

    pub fn from_hex(s: &str) -> Result<Self, GenomeError> {
        let bytes = hex::decode(s).map_err(|e| GenomeError::MalformedPayload {
            offset: 0,
            message: format!("invalid hex: {e}"),
        })?;
        decode(&bytes)
    }
}

/// Settings for drawing and validating chromosomes for one image shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeConfig {
    pub min_genes: usize,
    pub max_genes: usize,
    pub bounds: ParameterBounds,
    /// Sampling weight per kind, indexed like [`DistortionKind::ALL`].
    pub kind_weights: [f64; 7],
    /// Probability that a freshly drawn gene is active.
    pub activation_probability: f64,
    pub shape: Shape,
}

impl GenomeConfig {
    pub fn new(shape: Shape) -> Self {
        Self {
            min_genes: 1,
            max_genes: 6,
            bounds: ParameterBounds::default(),
            kind_weights: [1.0; 7],
            activation_probability: 0.5,
            shape,
        }
    }

    /// Weight of `kind` after excluding kinds the image cannot take.
    pub fn effective_weight(&self, kind: DistortionKind) -> f64 {
        if kind.needs_color() && self.shape.channels != 3 {
            0.0
        } else {
            self.kind_weights[kind.index()]
        }
    }

    pub fn check(&self) -> Result<(), GenomeError> {
        let bad = |m: String| Err(GenomeError::InvalidConfig(m));
        if self.min_genes < 1 || self.min_genes > self.max_genes {
            return bad(format!(
                "gene count range [{}, {}] must satisfy 1 <= min <= max",
                self.min_genes, self.max_genes
            ));
        }
        if self.max_genes > u16::MAX as usize {
            return bad("max_genes exceeds 65535".into());
        }
        if self.kind_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("kind weights must be finite and non-negative".into());
        }
        if DistortionKind::ALL.iter().all(|&k| self.effective_weight(k) == 0.0) {
            return bad("no distortion kind has a positive weight for this image".into());
        }
        if !(0.0..=1.0).contains(&self.activation_probability) {
            return bad("activation probability must lie in [0,1]".into());
        }
        if self.shape.pixels() == 0 {
            return bad("image shape is empty".into());
        }
        self.bounds.validate().map_err(|e| GenomeError::InvalidConfig(e.to_string()))?;
        for (a, b) in [(Param::RegionPMin, Param::RegionPMax), (Param::Salt, Param::Pepper)] {
            if self.bounds.get(a).lo + self.bounds.get(b).lo > 1.0 {
                return bad(format!("lower bounds of {a} and {b} sum above 1"));
            }
        }
        Ok(())
    }

    /// Largest admissible `affected` list for this shape.
    pub fn max_affected(&self) -> usize {
        (self.bounds.max_affected_fraction * self.shape.pixels() as f64).floor() as usize
    }
}

/// One rule broken by a chromosome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Length { len: usize, min: usize, max: usize },
    OutOfBounds { gene: usize, param: Param, value: f64, lo: f64, hi: f64 },
    Structure { gene: usize, message: String },
    TooManyAffected { gene: usize, count: usize, limit: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { len, min, max } => {
                write!(f, "length: {len} genes outside [{min}, {max}]")
            }
            Violation::OutOfBounds { gene, param, value, lo, hi } => {
                write!(f, "gene {gene}: {param} = {value} outside [{lo}, {hi}]")
            }
            Violation::Structure { gene, message } => write!(f, "gene {gene}: {message}"),
            Violation::TooManyAffected { gene, count, limit } => {
                write!(f, "gene {gene}: {count} affected pixels exceeds limit {limit}")
            }
        }
    }
}

/// Every rule the chromosome breaks against `cfg` and `shape`; empty means valid.
pub fn validate(ch: &Chromosome, cfg: &GenomeConfig, shape: Shape) -> Vec<Violation> {
    let mut out = Vec::new();
    if ch.len() < cfg.min_genes || ch.len() > cfg.max_genes {
        out.push(Violation::Length {
            len: ch.len(),
            min: cfg.min_genes,
            max: cfg.max_genes,
        });
    }
    let limit = (cfg.bounds.max_affected_fraction * shape.pixels() as f64).floor() as usize;
    for (gene, g) in ch.genes.iter().enumerate() {
        if let Err(e) = g.params.check(shape) {
            out.push(Violation::Structure {
                gene,
                message: e.to_string(),
            });
        }
        for (param, value, iv) in cfg.bounds.violations(&g.params.distortion) {
            out.push(Violation::OutOfBounds {
                gene,
                param,
                value,
                lo: iv.lo,
                hi: iv.hi,
            });
        }
        if let Some(list) = &g.params.affected {
            if list.len() > limit {
                out.push(Violation::TooManyAffected {
                    gene,
                    count: list.len(),
                    limit,
                });
            }
        }
    }
    out
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, iv: Interval) -> f64 {
    if iv.lo == iv.hi {
        iv.lo
    } else {
        rng.random_range(iv.lo..=iv.hi)
    }
}

fn probability_pair<R: Rng + ?Sized>(rng: &mut R, a: Interval, b: Interval) -> (f64, f64) {
    let first = uniform(rng, Interval::new(a.lo, a.hi.min(1.0 - b.lo)));
    let second = uniform(rng, Interval::new(b.lo, b.hi.min(1.0 - first)));
    (first, second)
}

fn orientation<R: Rng + ?Sized>(rng: &mut R) -> Orientation {
    if rng.random_bool(0.5) {
        Orientation::Row
    } else {
        Orientation::Column
    }
}

fn fill<R: Rng + ?Sized>(rng: &mut R) -> Fill {
    if rng.random_bool(0.5) {
        Fill::Min
    } else {
        Fill::Max
    }
}

/// Integer stride drawn uniformly from the integers inside the interval.
fn stride<R: Rng + ?Sized>(rng: &mut R, iv: Interval) -> u32 {
    let lo = iv.lo.ceil().max(1.0) as u32;
    let hi = iv.hi.floor() as u32;
    rng.random_range(lo..=hi.max(lo))
}

/// Fresh parameters for `kind`, uniform within the bounds.
pub fn random_distortion<R: Rng + ?Sized>(kind: DistortionKind, cfg: &GenomeConfig, rng: &mut R) -> Distortion {
    let b = &cfg.bounds;
    match kind {
        DistortionKind::RegionDropout => {
            let (p_min, p_max) = probability_pair(rng, b.get(Param::RegionPMin), b.get(Param::RegionPMax));
            Distortion::RegionDropout { p_min, p_max }
        }
        DistortionKind::LineColumnDropout => {
            let o = orientation(rng);
            let limit = match o {
                Orientation::Row => cfg.shape.height,
                Orientation::Column => cfg.shape.width,
            };
            Distortion::LineColumnDropout {
                orientation: o,
                index: rng.random_range(0..limit) as u32,
                fill: fill(rng),
            }
        }
        DistortionKind::LineStripping => Distortion::LineStripping {
            stride: stride(rng, b.get(Param::Stride)),
            orientation: orientation(rng),
            fill: fill(rng),
        },
        DistortionKind::SaltPepper => {
            let (p_salt, p_pepper) = probability_pair(rng, b.get(Param::Salt), b.get(Param::Pepper));
            Distortion::SaltPepper { p_salt, p_pepper }
        }
        DistortionKind::SpatialGaussian => Distortion::SpatialGaussian {
            mu: uniform(rng, b.get(Param::SpatialMu)),
            sigma: uniform(rng, b.get(Param::SpatialSigma)),
        },
        DistortionKind::ChannelDropout => Distortion::ChannelDropout {
            channel: rng.random_range(0..3),
            fill: fill(rng),
        },
        DistortionKind::ChannelGaussian => Distortion::ChannelGaussian {
            channel: rng.random_range(0..3),
            mu: uniform(rng, b.get(Param::ChannelMu)),
            sigma: uniform(rng, b.get(Param::ChannelSigma)),
        },
    }
}

/// Kind drawn by the effective weights, optionally excluding one kind.
/// Returns `None` when nothing is left to draw.
pub fn random_kind<R: Rng + ?Sized>(
    cfg: &GenomeConfig,
    exclude: Option<DistortionKind>,
    rng: &mut R,
) -> Option<DistortionKind> {
    let weights: Vec<f64> = DistortionKind::ALL
        .iter()
        .map(|&k| if Some(k) == exclude { 0.0 } else { cfg.effective_weight(k) })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random_range(0.0..total);
    for (k, w) in DistortionKind::ALL.iter().zip(&weights) {
        if u < *w {
            return Some(*k);
        }
        u -= w;
    }
    DistortionKind::ALL
        .iter()
        .zip(&weights)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .map(|(k, _)| *k)
}

/// A new gene covering the whole image.
pub fn random_gene<R: Rng + ?Sized>(cfg: &GenomeConfig, rng: &mut R) -> SubTransform {
    let kind = random_kind(cfg, None, rng).expect("config checked to have a positive weight");
    SubTransform {
        active: rng.random_bool(cfg.activation_probability),
        params: DistortionParams::new(random_distortion(kind, cfg, rng)),
        seed: rng.random(),
    }
}

/// Draws a chromosome passing [`validate`]; deterministic per seed.
pub fn random_chromosome(cfg: &GenomeConfig, seed: u64) -> Result<Chromosome, GenomeError> {
    cfg.check()?;
    let mut stream = rng::seeded(seed);
    Ok(random_chromosome_with(cfg, &mut stream))
}

pub(crate) fn random_chromosome_with<R: Rng + ?Sized>(cfg: &GenomeConfig, rng: &mut R) -> Chromosome {
    let len = rng.random_range(cfg.min_genes..=cfg.max_genes);
    Chromosome::new((0..len).map(|_| random_gene(cfg, rng)).collect())
}

// ---- codec ----

fn orientation_tag(o: Orientation) -> u8 {
    match o {
        Orientation::Row => 0,
        Orientation::Column => 1,
    }
}

fn fill_tag(f: Fill) -> u8 {
    match f {
        Fill::Min => 0,
        Fill::Max => 1,
    }
}

pub fn encode(ch: &Chromosome) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + ch.len() * 32);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(ch.len() as u16).to_le_bytes());
    for g in &ch.genes {
        out.push(g.active as u8);
        out.push(g.params.kind().index() as u8);
        out.extend_from_slice(&g.seed.to_le_bytes());
        match g.params.distortion {
            Distortion::RegionDropout { p_min: a, p_max: b }
            | Distortion::SaltPepper { p_salt: a, p_pepper: b }
            | Distortion::SpatialGaussian { mu: a, sigma: b } => {
                out.extend_from_slice(&a.to_le_bytes());
                out.extend_from_slice(&b.to_le_bytes());
            }
            Distortion::LineColumnDropout { orientation, index, fill } => {
                out.push(orientation_tag(orientation));
                out.extend_from_slice(&index.to_le_bytes());
                out.push(fill_tag(fill));
            }
            Distortion::LineStripping { stride, orientation, fill } => {
                out.extend_from_slice(&stride.to_le_bytes());
                out.push(orientation_tag(orientation));
                out.push(fill_tag(fill));
            }
            Distortion::ChannelDropout { channel, fill } => {
                out.push(channel);
                out.push(fill_tag(fill));
            }
            Distortion::ChannelGaussian { channel, mu, sigma } => {
                out.push(channel);
                out.extend_from_slice(&mu.to_le_bytes());
                out.extend_from_slice(&sigma.to_le_bytes());
            }
        }
        match &g.params.affected {
            None => out.push(0),
            Some(list) => {
                out.push(1);
                out.extend_from_slice(&(list.len() as u32).to_le_bytes());
                for i in list {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, GenomeError> {
        Err(GenomeError::MalformedPayload {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], GenomeError> {
        if self.bytes.len() - self.pos < n {
            return self.err(format!(
                "truncated reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, GenomeError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, GenomeError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, GenomeError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, GenomeError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, GenomeError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn orientation(&mut self) -> Result<Orientation, GenomeError> {
        match self.u8("orientation")? {
            0 => Ok(Orientation::Row),
            1 => Ok(Orientation::Column),
            t => {
                self.pos -= 1;
                self.err(format!("unknown orientation tag {t}"))
            }
        }
    }

    fn fill(&mut self) -> Result<Fill, GenomeError> {
        match self.u8("fill")? {
            0 => Ok(Fill::Min),
            1 => Ok(Fill::Max),
            t => {
                self.pos -= 1;
                self.err(format!("unknown fill tag {t}"))
            }
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Chromosome, GenomeError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return r.err("bad magic, expected \"SRMT\"");
    }
    let version = r.u8("version")?;
    if version != VERSION {
        r.pos -= 1;
        return r.err(format!("unknown version {version}"));
    }
    let count = r.u16("gene count")? as usize;
    let mut genes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let active = match r.u8("active flag")? {
            0 => false,
            1 => true,
            t => {
                r.pos -= 1;
                return r.err(format!("active flag must be 0 or 1, got {t}"));
            }
        };
        let tag = r.u8("kind tag")?;
        let Some(kind) = DistortionKind::from_index(tag as usize) else {
            r.pos -= 1;
            return r.err(format!("unknown kind tag {tag}"));
        };
        let seed = r.u64("seed")?;
        let distortion = match kind {
            DistortionKind::RegionDropout => Distortion::RegionDropout {
                p_min: r.f64("p_min")?,
                p_max: r.f64("p_max")?,
            },
            DistortionKind::LineColumnDropout => Distortion::LineColumnDropout {
                orientation: r.orientation()?,
                index: r.u32("index")?,
                fill: r.fill()?,
            },
            DistortionKind::LineStripping => Distortion::LineStripping {
                stride: r.u32("stride")?,
                orientation: r.orientation()?,
                fill: r.fill()?,
            },
            DistortionKind::SaltPepper => Distortion::SaltPepper {
                p_salt: r.f64("p_salt")?,
                p_pepper: r.f64("p_pepper")?,
            },
            DistortionKind::SpatialGaussian => Distortion::SpatialGaussian {
                mu: r.f64("mu")?,
                sigma: r.f64("sigma")?,
            },
            DistortionKind::ChannelDropout => Distortion::ChannelDropout {
                channel: r.u8("channel")?,
                fill: r.fill()?,
            },
            DistortionKind::ChannelGaussian => Distortion::ChannelGaussian {
                channel: r.u8("channel")?,
                mu: r.f64("mu")?,
                sigma: r.f64("sigma")?,
            },
        };
        let affected = match r.u8("affected flag")? {
            0 => None,
            1 => {
                let n = r.u32("affected count")? as usize;
                if (r.bytes.len() - r.pos) / 4 < n {
                    return r.err(format!("truncated affected list: {n} indices declared"));
                }
                let mut list = Vec::with_capacity(n);
                for _ in 0..n {
                    list.push(r.u32("affected index")?);
                }
                Some(list)
            }
            t => {
                r.pos -= 1;
                return r.err(format!("affected flag must be 0 or 1, got {t}"));
            }
        };
        genes.push(SubTransform {
            active,
            params: DistortionParams { distortion, affected },
            seed,
        });
    }
    if r.pos != bytes.len() {
        return r.err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Chromosome { genes })
}
