//! Parameterized spatial and spectral distortions.
//!
//! All operators are pure: output depends only on the input image, the
//! parameters and (for the stochastic ones) an explicit seed. `MIN_I` and
//! `MAX_I` are taken over every sample of the input image, not per channel.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{Image, Shape};
use crate::kv::{KvDocument, KvError};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{orientation} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        orientation: Orientation,
        index: u32,
        limit: usize,
    },
    #[error("channel {channel} requested on a {channels}-channel image")]
    ChannelMismatch { channel: u8, channels: usize },
    #[error("affected index {index} outside image of {pixels} pixels")]
    AffectedOutOfRange { index: u32, pixels: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("gene {position}: {source}")]
pub struct SequenceError {
    pub position: usize,
    #[source]
    pub source: TransformError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistortionKind {
    RegionDropout,
    LineColumnDropout,
    LineStripping,
    SaltPepper,
    SpatialGaussian,
    ChannelDropout,
    ChannelGaussian,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 7] = [
        DistortionKind::RegionDropout,
        DistortionKind::LineColumnDropout,
        DistortionKind::LineStripping,
        DistortionKind::SaltPepper,
        DistortionKind::SpatialGaussian,
        DistortionKind::ChannelDropout,
        DistortionKind::ChannelGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::RegionDropout => "RegionDropout",
            DistortionKind::LineColumnDropout => "LineColumnDropout",
            DistortionKind::LineStripping => "LineStripping",
            DistortionKind::SaltPepper => "SaltPepper",
            DistortionKind::SpatialGaussian => "SpatialGaussian",
            DistortionKind::ChannelDropout => "ChannelDropout",
            DistortionKind::ChannelGaussian => "ChannelGaussian",
        }
    }

    /// Position in [`DistortionKind::ALL`]; also the codec tag.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Spectral kinds need a three-channel image.
    pub fn needs_color(self) -> bool {
        matches!(self, DistortionKind::ChannelDropout | DistortionKind::ChannelGaussian)
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown distortion kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Row,
    Column,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Row => "row",
            Orientation::Column => "column",
        })
    }
}

/// Which image extreme a dropout writes (`CONST_I`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fill {
    Min,
    Max,
}

impl Fill {
    fn value(self, img: &Image) -> u8 {
        match self {
            Fill::Min => img.min_sample(),
            Fill::Max => img.max_sample(),
        }
    }
}

/// One distortion with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distortion {
    RegionDropout { p_min: f64, p_max: f64 },
    LineColumnDropout { orientation: Orientation, index: u32, fill: Fill },
    LineStripping { stride: u32, orientation: Orientation, fill: Fill },
    SaltPepper { p_salt: f64, p_pepper: f64 },
    SpatialGaussian { mu: f64, sigma: f64 },
    ChannelDropout { channel: u8, fill: Fill },
    ChannelGaussian { channel: u8, mu: f64, sigma: f64 },
}

impl Distortion {
    pub fn kind(&self) -> DistortionKind {
        match self {
            Distortion::RegionDropout { .. } => DistortionKind::RegionDropout,
            Distortion::LineColumnDropout { .. } => DistortionKind::LineColumnDropout,
            Distortion::LineStripping { .. } => DistortionKind::LineStripping,
            Distortion::SaltPepper { .. } => DistortionKind::SaltPepper,
            Distortion::SpatialGaussian { .. } => DistortionKind::SpatialGaussian,
            Distortion::ChannelDropout { .. } => DistortionKind::ChannelDropout,
            Distortion::ChannelGaussian { .. } => DistortionKind::ChannelGaussian,
        }
    }
}

/// A distortion plus an optional pixel-index restriction.
///
/// `affected`, when present, lists flat pixel indices (`row * width + col`)
/// in strictly increasing order; only those pixels may change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    pub distortion: Distortion,
    pub affected: Option<Vec<u32>>,
}

impl DistortionParams {
    pub fn new(distortion: Distortion) -> Self {
        Self {
            distortion,
            affected: None,
        }
    }

    pub fn with_affected(mut self, affected: Vec<u32>) -> Self {
        self.affected = Some(affected);
        self
    }

    pub fn kind(&self) -> DistortionKind {
        self.distortion.kind()
    }

    /// Structural validity against an image shape (bounds are checked by the genome).
    pub fn check(&self, shape: Shape) -> Result<(), TransformError> {
        check_distortion(&self.distortion, shape)?;
        if let Some(list) = &self.affected {
            let pixels = shape.pixels();
            if let Some(&bad) = list.iter().find(|&&i| i as usize >= pixels) {
                return Err(TransformError::AffectedOutOfRange { index: bad, pixels });
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(TransformError::InvalidParams(
                    "affected indices must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

fn check_probability_pair(a: f64, b: f64, what: &str) -> Result<(), TransformError> {
    let ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
    if !ok(a) || !ok(b) {
        return Err(TransformError::InvalidParams(format!(
            "{what} probabilities must lie in [0,1], got {a} and {b}"
        )));
    }
    if a + b > 1.0 {
        return Err(TransformError::InvalidParams(format!(
            "{what} probabilities sum to {} > 1",
            a + b
        )));
    }
    Ok(())
}

fn check_gaussian(mu: f64, sigma: f64) -> Result<(), TransformError> {
    if !mu.is_finite() {
        return Err(TransformError::InvalidParams(format!("mu must be finite, got {mu}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(TransformError::InvalidParams(format!(
            "sigma must be finite and non-negative, got {sigma}"
        )));
    }
    Ok(())
}

fn check_channel(channel: u8, shape: Shape) -> Result<(), TransformError> {
    if shape.channels != 3 || channel as usize >= shape.channels {
        return Err(TransformError::ChannelMismatch {
            channel,
            channels: shape.channels,
        });
    }
    Ok(())
}

fn check_distortion(d: &Distortion, shape: Shape) -> Result<(), TransformError> {
    match *d {
        Distortion::RegionDropout { p_min, p_max } => check_probability_pair(p_min, p_max, "region dropout"),
        Distortion::SaltPepper { p_salt, p_pepper } => check_probability_pair(p_salt, p_pepper, "salt-and-pepper"),
        Distortion::LineColumnDropout { orientation, index, .. } => {
            let limit = match orientation {
                Orientation::Row => shape.height,
                Orientation::Column => shape.width,
            };
            if index as usize >= limit {
                return Err(TransformError::IndexOutOfRange {
                    orientation,
                    index,
                    limit,
                });
            }
            Ok(())
        }
        Distortion::LineStripping { stride, .. } => {
            if stride == 0 {
                return Err(TransformError::InvalidParams("stride must be at least 1".into()));
            }
            Ok(())
        }
        Distortion::SpatialGaussian { mu, sigma } => check_gaussian(mu, sigma),
        Distortion::ChannelDropout { channel, .. } => check_channel(channel, shape),
        Distortion::ChannelGaussian { channel, mu, sigma } => {
            check_channel(channel, shape)?;
            check_gaussian(mu, sigma)
        }
    }
}

/// Per-pixel three-way draw shared by region dropout and salt-and-pepper:
/// `MIN_I` with probability `p_low`, `MAX_I` with probability `p_high`.
fn impulse(img: &Image, p_low: f64, p_high: f64, seed: u64) -> Image {
    let (lo, hi) = (img.min_sample(), img.max_sample());
    let c = img.channels();
    let mut out = img.clone();
    let mut stream = rng::seeded(seed);
    for px in out.samples_mut().chunks_exact_mut(c) {
        let u: f64 = stream.random();
        if u < p_low {
            px.fill(lo);
        } else if u < p_low + p_high {
            px.fill(hi);
        }
    }
    out
}

pub fn region_dropout(img: &Image, p_min: f64, p_max: f64, seed: u64) -> Result<Image, TransformError> {
    check_probability_pair(p_min, p_max, "region dropout")?;
    Ok(impulse(img, p_min, p_max, seed))
}

pub fn salt_pepper(img: &Image, p_salt: f64, p_pepper: f64, seed: u64) -> Result<Image, TransformError> {
    check_probability_pair(p_salt, p_pepper, "salt-and-pepper")?;
    Ok(impulse(img, p_salt, p_pepper, seed))
}

fn fill_line(out: &mut Image, orientation: Orientation, line: usize, value: u8) {
    let (w, c) = (out.width(), out.channels());
    let h = out.height();
    let samples = out.samples_mut();
    match orientation {
        Orientation::Row => samples[line * w * c..(line + 1) * w * c].fill(value),
        Orientation::Column => {
            for row in 0..h {
                let start = (row * w + line) * c;
                samples[start..start + c].fill(value);
            }
        }
    }
}

pub fn line_column_dropout(
    img: &Image,
    orientation: Orientation,
    index: u32,
    fill: Fill,
) -> Result<Image, TransformError> {
    check_distortion(&Distortion::LineColumnDropout { orientation, index, fill }, img.shape())?;
    let value = fill.value(img);
    let mut out = img.clone();
    fill_line(&mut out, orientation, index as usize, value);
    Ok(out)
}

/// Sets every row (or column) whose index is a multiple of `stride`.
pub fn line_stripping(
    img: &Image,
    stride: u32,
    orientation: Orientation,
    fill: Fill,
) -> Result<Image, TransformError> {
    if stride == 0 {
        return Err(TransformError::InvalidParams("stride must be at least 1".into()));
    }
    let value = fill.value(img);
    let lines = match orientation {
        Orientation::Row => img.height(),
        Orientation::Column => img.width(),
    };
    let mut out = img.clone();
    for line in (0..lines).step_by(stride as usize) {
        fill_line(&mut out, orientation, line, value);
    }
    Ok(out)
}

fn add_noise(sample: u8, eta: f64) -> u8 {
    (sample as f64 + eta).round().clamp(0.0, 255.0) as u8
}

fn normal(mu: f64, sigma: f64) -> Result<Normal<f64>, TransformError> {
    check_gaussian(mu, sigma)?;
    Normal::new(mu, sigma).map_err(|e| TransformError::InvalidParams(e.to_string()))
}

/// Adds `N(mu, sigma^2)` noise to every sample, rounding half away from zero
/// and clamping to `[0, 255]`.
pub fn spatial_gaussian(img: &Image, mu: f64, sigma: f64, seed: u64) -> Result<Image, TransformError> {
    let dist = normal(mu, sigma)?;
    let mut stream = rng::seeded(seed);
    let mut out = img.clone();
    for s in out.samples_mut() {
        *s = add_noise(*s, dist.sample(&mut stream));
    }
    Ok(out)
}

pub fn channel_dropout(img: &Image, channel: u8, fill: Fill) -> Result<Image, TransformError> {
    check_channel(channel, img.shape())?;
    let value = fill.value(img);
    let mut out = img.clone();
    for px in out.samples_mut().chunks_exact_mut(3) {
        px[channel as usize] = value;
    }
    Ok(out)
}

/// Same as [`spatial_gaussian`] restricted to one channel.
pub fn channel_gaussian(img: &Image, channel: u8, mu: f64, sigma: f64, seed: u64) -> Result<Image, TransformError> {
    check_channel(channel, img.shape())?;
    let dist = normal(mu, sigma)?;
    let mut stream = rng::seeded(seed);
    let mut out = img.clone();
    for px in out.samples_mut().chunks_exact_mut(3) {
        let s = &mut px[channel as usize];
        *s = add_noise(*s, dist.sample(&mut stream));
    }
    Ok(out)
}

fn apply_whole(img: &Image, d: &Distortion, seed: u64) -> Result<Image, TransformError> {
    match *d {
        Distortion::RegionDropout { p_min, p_max } => region_dropout(img, p_min, p_max, seed),
        Distortion::LineColumnDropout { orientation, index, fill } => line_column_dropout(img, orientation, index, fill),
        Distortion::LineStripping { stride, orientation, fill } => line_stripping(img, stride, orientation, fill),
        Distortion::SaltPepper { p_salt, p_pepper } => salt_pepper(img, p_salt, p_pepper, seed),
        Distortion::SpatialGaussian { mu, sigma } => spatial_gaussian(img, mu, sigma, seed),
        Distortion::ChannelDropout { channel, fill } => channel_dropout(img, channel, fill),
        Distortion::ChannelGaussian { channel, mu, sigma } => channel_gaussian(img, channel, mu, sigma, seed),
    }
}

/// Applies one distortion, honoring the `affected` restriction.
///
/// A restricted distortion is computed over the whole image (so `MIN_I`,
/// `MAX_I` and the random stream are unchanged) and then only the listed
/// pixels are taken from the result.
pub fn apply(img: &Image, params: &DistortionParams, seed: u64) -> Result<Image, TransformError> {
    params.check(img.shape())?;
    let full = apply_whole(img, &params.distortion, seed)?;
    let Some(list) = &params.affected else {
        return Ok(full);
    };
    let c = img.channels();
    let mut out = img.clone();
    let dst = out.samples_mut();
    let src = full.samples();
    for &i in list {
        let start = i as usize * c;
        dst[start..start + c].copy_from_slice(&src[start..start + c]);
    }
    Ok(out)
}

/// Left fold of the distortions over the image.
pub fn apply_sequence(img: &Image, genes: &[(DistortionParams, u64)]) -> Result<Image, SequenceError> {
    let mut current = img.clone();
    for (position, (params, seed)) in genes.iter().enumerate() {
        current = apply(&current, params, *seed).map_err(|source| SequenceError { position, source })?;
    }
    Ok(current)
}

/// Closed interval of admissible parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Bounded numeric parameters, one per `(kind, parameter)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    RegionPMin,
    RegionPMax,
    Stride,
    Salt,
    Pepper,
    SpatialMu,
    SpatialSigma,
    ChannelMu,
    ChannelSigma,
}

impl Param {
    pub const ALL: [Param; 9] = [
        Param::RegionPMin,
        Param::RegionPMax,
        Param::Stride,
        Param::Salt,
        Param::Pepper,
        Param::SpatialMu,
        Param::SpatialSigma,
        Param::ChannelMu,
        Param::ChannelSigma,
    ];

    pub fn kind(self) -> DistortionKind {
        match self {
            Param::RegionPMin | Param::RegionPMax => DistortionKind::RegionDropout,
            Param::Stride => DistortionKind::LineStripping,
            Param::Salt | Param::Pepper => DistortionKind::SaltPepper,
            Param::SpatialMu | Param::SpatialSigma => DistortionKind::SpatialGaussian,
            Param::ChannelMu | Param::ChannelSigma => DistortionKind::ChannelGaussian,
        }
    }

    pub fn field(self) -> &'static str {
        match self {
            Param::RegionPMin => "p_min",
            Param::RegionPMax => "p_max",
            Param::Stride => "stride",
            Param::Salt => "p_salt",
            Param::Pepper => "p_pepper",
            Param::SpatialMu | Param::ChannelMu => "mu",
            Param::SpatialSigma | Param::ChannelSigma => "sigma",
        }
    }

    /// `Kind.field`, the prefix of the bounds-file keys.
    pub fn key(self) -> String {
        format!("{}.{}", self.kind().name(), self.field())
    }

    fn is_probability(self) -> bool {
        matches!(self, Param::RegionPMin | Param::RegionPMax | Param::Salt | Param::Pepper)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Bounded parameter values carried by a distortion.
pub fn bounded_values(d: &Distortion) -> Vec<(Param, f64)> {
    match *d {
        Distortion::RegionDropout { p_min, p_max } => vec![(Param::RegionPMin, p_min), (Param::RegionPMax, p_max)],
        Distortion::LineStripping { stride, .. } => vec![(Param::Stride, stride as f64)],
        Distortion::SaltPepper { p_salt, p_pepper } => vec![(Param::Salt, p_salt), (Param::Pepper, p_pepper)],
        Distortion::SpatialGaussian { mu, sigma } => vec![(Param::SpatialMu, mu), (Param::SpatialSigma, sigma)],
        Distortion::ChannelGaussian { mu, sigma, .. } => vec![(Param::ChannelMu, mu), (Param::ChannelSigma, sigma)],
        Distortion::LineColumnDropout { .. } | Distortion::ChannelDropout { .. } => Vec::new(),
    }
}

pub const MAX_AFFECTED_KEY: &str = "max_affected_fraction";

/// The permissible parameter ranges, loadable from a flat key-value file.
///
/// File keys are `<Kind>.<param>.lo` / `<Kind>.<param>.hi` plus
/// `max_affected_fraction`; omitted keys keep their default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    intervals: [Interval; 9],
    pub max_affected_fraction: f64,
}

impl Default for ParameterBounds {
    fn default() -> Self {
        let prob = Interval::new(0.0, 0.15);
        let mu = Interval::new(-20.0, 20.0);
        let sigma = Interval::new(0.0, 25.0);
        Self {
            intervals: [prob, prob, Interval::new(2.0, 32.0), prob, prob, mu, sigma, mu, sigma],
            max_affected_fraction: 0.5,
        }
    }
}

impl ParameterBounds {
    pub fn get(&self, p: Param) -> Interval {
        self.intervals[p as usize]
    }

    pub fn set(&mut self, p: Param, iv: Interval) {
        self.intervals[p as usize] = iv;
    }

    /// Parameters of `d` lying outside their interval.
    pub fn violations(&self, d: &Distortion) -> Vec<(Param, f64, Interval)> {
        bounded_values(d)
            .into_iter()
            .filter_map(|(p, v)| {
                let iv = self.get(p);
                (!iv.contains(v)).then_some((p, v, iv))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), KvError> {
        for p in Param::ALL {
            let iv = self.get(p);
            let invalid = |message: String| KvError::Invalid {
                key: p.key(),
                message,
            };
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                return Err(invalid(format!("interval [{}, {}] is empty or not finite", iv.lo, iv.hi)));
            }
            if p.is_probability() && (iv.lo < 0.0 || iv.hi > 1.0) {
                return Err(invalid("probability bounds must lie in [0,1]".into()));
            }
            if matches!(p, Param::SpatialSigma | Param::ChannelSigma) && iv.lo < 0.0 {
                return Err(invalid("sigma must be non-negative".into()));
            }
            if p == Param::Stride && (iv.lo < 1.0 || iv.lo.ceil() > iv.hi.floor()) {
                return Err(invalid("stride interval must contain an integer >= 1".into()));
            }
        }
        let f = self.max_affected_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(KvError::Invalid {
                key: MAX_AFFECTED_KEY.into(),
                message: format!("must lie in (0,1], got {f}"),
            });
        }
        Ok(())
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self, KvError> {
        let mut known: Vec<String> = vec![MAX_AFFECTED_KEY.to_string()];
        for p in Param::ALL {
            known.push(format!("{}.lo", p.key()));
            known.push(format!("{}.hi", p.key()));
        }
        let known_refs: Vec<&str> = known.iter().map(String::as_str).collect();
        doc.reject_unknown(&known_refs)?;

        let mut bounds = Self::default();
        for p in Param::ALL {
            let mut iv = bounds.get(p);
            if let Some(lo) = doc.parse_value::<f64>(&format!("{}.lo", p.key()))? {
                iv.lo = lo;
            }
            if let Some(hi) = doc.parse_value::<f64>(&format!("{}.hi", p.key()))? {
                iv.hi = hi;
            }
            bounds.set(p, iv);
        }
        if let Some(f) = doc.parse_value::<f64>(MAX_AFFECTED_KEY)? {
            bounds.max_affected_fraction = f;
        }
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        Self::from_kv(&KvDocument::parse(text)?)
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::default();
        for p in Param::ALL {
            let iv = self.get(p);
            doc.insert(format!("{}.lo", p.key()), iv.lo.to_string());
            doc.insert(format!("{}.hi", p.key()), iv.hi.to_string());
        }
        doc.insert(MAX_AFFECTED_KEY, self.max_affected_fraction.to_string());
        doc
    }
}
