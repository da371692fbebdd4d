//! Raster types plus the two metrics everything else is scored with:
//! PSNR for image fidelity and IoU for segmentation agreement.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Peak sample value for 8-bit imagery.
pub const PEAK: f64 = 255.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: Shape, right: Shape },
    #[error("sample buffer holds {actual} values, shape {shape} needs {expected}")]
    BufferLength {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("image dimensions must be at least 1x1")]
    Empty,
    #[error("empty set")]
    EmptySet,
}

/// Height, width and channel count of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn samples(&self) -> usize {
        self.pixels() * self.channels
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Dense row-major `H x W x C` raster of 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    shape: Shape,
    samples: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, samples: Vec<u8>) -> Result<Self, ImagingError> {
        if height == 0 || width == 0 {
            return Err(ImagingError::Empty);
        }
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Channels(channels));
        }
        let shape = Shape::new(height, width, channels);
        if samples.len() != shape.samples() {
            return Err(ImagingError::BufferLength {
                shape,
                expected: shape.samples(),
                actual: samples.len(),
            });
        }
        Ok(Self { shape, samples })
    }

    /// Image with every sample set to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self, ImagingError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    /// Samples of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let c = self.shape.channels;
        let start = (row * self.shape.width + col) * c;
        &self.samples[start..start + c]
    }

    /// Smallest sample over all pixels and channels.
    pub fn min_sample(&self) -> u8 {
        self.samples.iter().copied().min().unwrap_or(0)
    }

    /// Largest sample over all pixels and channels.
    pub fn max_sample(&self) -> u8 {
        self.samples.iter().copied().max().unwrap_or(0)
    }
}

/// Dense row-major `H x W` raster of class indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self, ImagingError> {
        if height == 0 || width == 0 {
            return Err(ImagingError::Empty);
        }
        if labels.len() != height * width {
            return Err(ImagingError::BufferLength {
                shape: Shape::new(height, width, 1),
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, class: u16) -> Result<Self, ImagingError> {
        Self::new(height, width, vec![class; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, 1)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u16> {
        self.labels
    }
}

/// Per-class IoU plus their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class: BTreeMap<u16, f64>,
    pub mean_iou: f64,
}

fn check_same(a: Shape, b: Shape) -> Result<(), ImagingError> {
    if a != b {
        return Err(ImagingError::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

/// Mean squared error over all samples.
pub fn mse(a: &Image, b: &Image) -> Result<f64, ImagingError> {
    check_same(a.shape(), b.shape())?;
    let sum: u64 = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / a.samples.len() as f64)
}

/// Peak signal-to-noise ratio in dB with a peak of 255.
///
/// Identical images yield `f64::INFINITY`.
pub fn psnr(original: &Image, distorted: &Image) -> Result<f64, ImagingError> {
    let err = mse(original, distorted)?;
    Ok(psnr_from_mse(err))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

/// Per-class intersection over union for classes present in either map.
pub fn iou(prediction: &LabelMap, truth: &LabelMap) -> Result<IoUReport, ImagingError> {
    check_same(prediction.shape(), truth.shape())?;
    // class -> (intersection, union)
    let mut counts: BTreeMap<u16, (u64, u64)> = BTreeMap::new();
    for (&p, &t) in prediction.labels.iter().zip(&truth.labels) {
        if p == t {
            let e = counts.entry(p).or_default();
            e.0 += 1;
            e.1 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(t).or_default().1 += 1;
        }
    }
    let per_class: BTreeMap<u16, f64> = counts
        .into_iter()
        .map(|(c, (i, u))| (c, i as f64 / u as f64))
        .collect();
    let mean_iou = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(IoUReport {
        per_class,
        mean_iou,
    })
}

/// Mean of per-pair mean IoU values (mean-of-image-means).
pub fn mean_iou_over_set<'a, I>(pairs: I) -> Result<f64, ImagingError>
where
    I: IntoIterator<Item = (&'a LabelMap, &'a LabelMap)>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (pred, truth) in pairs {
        total += iou(pred, truth)?.mean_iou;
        n += 1;
    }
    if n == 0 {
        return Err(ImagingError::EmptySet);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, s: &[u8]) -> Image {
        Image::new(h, w, 1, s.to_vec()).unwrap()
    }

    fn labels(h: usize, w: usize, l: &[u16]) -> LabelMap {
        LabelMap::new(h, w, l.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = gray(2, 2, &[100, 100, 100, 100]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&gray(1, 1, &[255]), &gray(1, 1, &[0])).unwrap(), 65025.0);
        let b = gray(2, 2, &[110, 100, 100, 100]);
        assert_eq!(mse(&a, &b).unwrap(), 25.0);
    }

    #[test]
    fn psnr_examples() {
        let a = gray(2, 2, &[100, 100, 100, 100]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&gray(1, 1, &[255]), &gray(1, 1, &[0])).unwrap(), 0.0);
        let b = gray(2, 2, &[110, 100, 100, 100]);
        assert!((psnr(&a, &b).unwrap() - 34.15).abs() < 0.01);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = gray(2, 2, &[0; 4]);
        let b = gray(1, 4, &[0; 4]);
        assert!(matches!(mse(&a, &b), Err(ImagingError::DimensionMismatch { .. })));
        assert!(matches!(psnr(&a, &b), Err(ImagingError::DimensionMismatch { .. })));
        let rgb = Image::filled(2, 2, 3, 0).unwrap();
        assert!(mse(&a, &rgb).is_err());
        assert!(iou(&labels(2, 2, &[0; 4]), &labels(1, 4, &[0; 4])).is_err());
    }

    #[test]
    fn constructor_validates() {
        assert!(matches!(Image::new(2, 2, 1, vec![0; 3]), Err(ImagingError::BufferLength { .. })));
        assert!(matches!(Image::new(2, 2, 2, vec![0; 8]), Err(ImagingError::Channels(2))));
        assert!(matches!(Image::new(0, 2, 1, vec![]), Err(ImagingError::Empty)));
        assert!(LabelMap::new(2, 2, vec![0; 5]).is_err());
    }

    #[test]
    fn iou_examples() {
        let x = labels(2, 2, &[0, 1, 1, 2]);
        let r = iou(&x, &x).unwrap();
        assert!(r.per_class.values().all(|&v| v == 1.0));
        assert_eq!(r.mean_iou, 1.0);

        let r = iou(&labels(2, 2, &[0; 4]), &labels(2, 2, &[1; 4])).unwrap();
        assert_eq!(r.per_class, BTreeMap::from([(0, 0.0), (1, 0.0)]));
        assert_eq!(r.mean_iou, 0.0);

        let r = iou(&labels(2, 2, &[0, 0, 1, 1]), &labels(2, 2, &[0, 0, 0, 1])).unwrap();
        assert_eq!(r.per_class, BTreeMap::from([(0, 2.0 / 3.0), (1, 0.5)]));
        assert!((r.mean_iou - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn mean_iou_over_set_examples() {
        let same = labels(2, 2, &[0, 0, 0, 1]);
        assert_eq!(mean_iou_over_set([(&same, &same)]).unwrap(), 1.0);

        let zeros = labels(2, 2, &[0; 4]);
        let ones = labels(2, 2, &[1; 4]);
        assert_eq!(mean_iou_over_set([(&same, &same), (&zeros, &ones)]).unwrap(), 0.5);

        let pred = labels(2, 2, &[0, 0, 1, 1]);
        let m = mean_iou_over_set([(&pred, &same), (&same, &same), (&zeros, &ones)]).unwrap();
        assert!((m - (7.0 / 12.0 + 1.0) / 3.0).abs() < 1e-9);
        assert!((m - 0.527_777_777_8).abs() < 1e-9);

        let empty: Vec<(&LabelMap, &LabelMap)> = Vec::new();
        assert_eq!(mean_iou_over_set(empty), Err(ImagingError::EmptySet));
    }

    #[test]
    fn psnr_strictly_decreasing_in_mse() {
        let mut prev = f64::INFINITY;
        for m in [0.5, 1.0, 10.0, 100.0, 1000.0, 65025.0] {
            let p = psnr_from_mse(m);
            assert!(p < prev);
            assert!(p >= 0.0);
            prev = p;
        }
    }
}
