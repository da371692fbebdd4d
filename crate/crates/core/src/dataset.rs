//! Corpus loading, synthetic scenes, adversarial export and run manifests.
//!
//! All rasters are PNG. Images load as 8-bit gray or RGB (alpha is dropped),
//! labels as 8- or 16-bit single channel and are always written as 16-bit.
//!
//! A run manifest is a JSON-lines file: one `header` record, one `entry`
//! record per dataset id, and a closing `footer`. Each line is written and
//! flushed whole, so a crashed run leaves a readable prefix.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evolution::{psnr_serde, FitnessRecord, GaConfig, Termination};
use crate::genome::Chromosome;
use crate::imaging::{Image, LabelMap};
use crate::kv::{KvDocument, KvError};
use crate::oracle::PaletteSegmenter;
use crate::rng;
use crate::transforms::{Orientation, ParameterBounds};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset root {0} is not a directory")]
    MissingRoot(PathBuf),
    #[error("no label file for `{id}` (expected {expected})")]
    MissingLabel { id: String, expected: PathBuf },
    #[error("cannot decode {path}: {message}")]
    DecodeError { path: PathBuf, message: String },
    #[error("`{id}`: image is {image_h}x{image_w} but label is {label_h}x{label_w}")]
    ShapeMismatch {
        id: String,
        image_h: usize,
        image_w: usize,
        label_h: usize,
        label_w: usize,
    },
    #[error("psnr {psnr} does not exceed the export threshold {threshold}")]
    GateViolation { psnr: f64, threshold: f64 },
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("invalid layout: {0}")]
    Layout(#[from] KvError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---- raster IO ----

pub fn read_image(path: &Path) -> Result<Image, DatasetError> {
    let decode = |message: String| DatasetError::DecodeError {
        path: path.to_path_buf(),
        message,
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let out = match img {
        DynamicImage::ImageLuma8(g) => Image::new(h, w, 1, g.into_raw()),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            Image::new(h, w, 3, img.to_rgb8().into_raw())
        }
        other => return Err(decode(format!("unsupported color type {:?}", other.color()))),
    };
    out.map_err(|e| decode(e.to_string()))
}

fn write_atomically(path: &Path, write: impl FnOnce(&Path) -> Result<(), String>) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("png.part");
    write(&tmp).map_err(|m| DatasetError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(m),
    })?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), DatasetError> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw = img.samples().to_vec();
    write_atomically(path, |tmp| {
        let r = if img.channels() == 1 {
            GrayImage::from_raw(w, h, raw).expect("buffer sized").save_with_format(tmp, ImageFormat::Png)
        } else {
            RgbImage::from_raw(w, h, raw).expect("buffer sized").save_with_format(tmp, ImageFormat::Png)
        };
        r.map_err(|e| e.to_string())
    })
}

pub fn read_labels(path: &Path) -> Result<LabelMap, DatasetError> {
    let decode = |message: String| DatasetError::DecodeError {
        path: path.to_path_buf(),
        message,
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u16> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw(),
        other => return Err(decode(format!("labels must be single-channel, got {:?}", other.color()))),
    };
    LabelMap::new(h, w, labels).map_err(|e| decode(e.to_string()))
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<(), DatasetError> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, labels.labels().to_vec())
            .expect("buffer sized");
    write_atomically(path, |tmp| buf.save_with_format(tmp, ImageFormat::Png).map_err(|e| e.to_string()))
}

pub fn sha256_file(path: &Path) -> Result<String, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

// ---- dataset index ----

/// Where images and labels live under a dataset root.
///
/// The label for image `<image_dir>/<id>.<image_ext>` is
/// `<label_dir>/<id><label_suffix>.<label_ext>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub image_dir: String,
    pub label_dir: String,
    pub image_ext: String,
    pub label_ext: String,
    pub label_suffix: String,
    /// When absent, taken as one more than the largest label seen.
    pub class_count: Option<usize>,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self {
            image_dir: "images".into(),
            label_dir: "labels".into(),
            image_ext: "png".into(),
            label_ext: "png".into(),
            label_suffix: String::new(),
            class_count: None,
        }
    }
}

const LAYOUT_KEYS: &[&str] = &["image_dir", "label_dir", "image_ext", "label_ext", "label_suffix", "class_count"];

impl DatasetLayout {
    pub fn from_kv(doc: &KvDocument) -> Result<Self, KvError> {
        doc.reject_unknown(LAYOUT_KEYS)?;
        let mut l = Self::default();
        for (key, slot) in [
            ("image_dir", &mut l.image_dir),
            ("label_dir", &mut l.label_dir),
            ("image_ext", &mut l.image_ext),
            ("label_ext", &mut l.label_ext),
            ("label_suffix", &mut l.label_suffix),
        ] {
            if let Some(v) = doc.get(key) {
                *slot = v.to_string();
            }
        }
        l.class_count = doc.parse_value("class_count")?;
        Ok(l)
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        Self::from_kv(&KvDocument::parse(text)?)
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut d = KvDocument::default();
        d.insert("image_dir", self.image_dir.clone());
        d.insert("label_dir", self.label_dir.clone());
        d.insert("image_ext", self.image_ext.clone());
        d.insert("label_ext", self.label_ext.clone());
        d.insert("label_suffix", self.label_suffix.clone());
        if let Some(c) = self.class_count {
            d.insert("class_count", c.to_string());
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Path below the image directory, `/`-separated, without extension.
    pub id: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
}

impl DatasetEntry {
    pub fn load(&self) -> Result<(Image, LabelMap), DatasetError> {
        let img = read_image(&self.image_path)?;
        let labels = read_labels(&self.label_path)?;
        if img.height() != labels.height() || img.width() != labels.width() {
            return Err(DatasetError::ShapeMismatch {
                id: self.id.clone(),
                image_h: img.height(),
                image_w: img.width(),
                label_h: labels.height(),
                label_w: labels.width(),
            });
        }
        Ok((img, labels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
    pub class_count: usize,
}

impl DatasetIndex {
    pub fn get(&self, id: &str) -> Option<&DatasetEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }
}

fn collect_files(dir: &Path, ext: &str, prefix: &str, out: &mut Vec<(String, PathBuf)>) -> Result<(), DatasetError> {
    let mut items: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    items.sort_by_key(|e| e.file_name());
    for item in items {
        let path = item.path();
        let name = item.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            collect_files(&path, ext, &format!("{prefix}{name}/"), out)?;
        } else if let Some(stem) = name.strip_suffix(&format!(".{ext}")) {
            if !stem.is_empty() {
                out.push((format!("{prefix}{stem}"), path));
            }
        }
    }
    Ok(())
}

/// Indexes every image under the layout's image directory and checks that
/// each one has a decodable label raster of the same size.
pub fn load_dataset(root: &Path, layout: &DatasetLayout) -> Result<DatasetIndex, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let image_dir = root.join(&layout.image_dir);
    let mut files = Vec::new();
    if image_dir.is_dir() {
        collect_files(&image_dir, &layout.image_ext, "", &mut files)?;
    }
    files.sort();
    let label_dir = root.join(&layout.label_dir);
    let entries: Vec<DatasetEntry> = files
        .into_iter()
        .map(|(id, image_path)| {
            let label_path = label_dir.join(format!("{id}{}.{}", layout.label_suffix, layout.label_ext));
            if !label_path.is_file() {
                return Err(DatasetError::MissingLabel {
                    id,
                    expected: label_path,
                });
            }
            Ok(DatasetEntry {
                id,
                image_path,
                label_path,
            })
        })
        .collect::<Result<_, _>>()?;

    let max_labels: Vec<u16> = entries
        .par_iter()
        .map(|e| e.load().map(|(_, l)| l.labels().iter().copied().max().unwrap_or(0)))
        .collect::<Result<_, _>>()?;
    let class_count = layout
        .class_count
        .unwrap_or_else(|| max_labels.iter().max().map_or(0, |&m| m as usize + 1));
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        class_count,
    })
}

/// Writes an image/label pair under `root` using `layout`.
pub fn write_pair(root: &Path, layout: &DatasetLayout, id: &str, img: &Image, labels: &LabelMap) -> Result<(), DatasetError> {
    write_image(&root.join(&layout.image_dir).join(format!("{id}.{}", layout.image_ext)), img)?;
    write_labels(
        &root
            .join(&layout.label_dir)
            .join(format!("{id}{}.{}", layout.label_suffix, layout.label_ext)),
        labels,
    )
}

// ---- synthetic scenes ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegionShape {
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    /// Lines of `thickness` repeating every `period`, starting at `offset`.
    Stripes {
        orientation: Orientation,
        period: usize,
        thickness: usize,
        offset: usize,
    },
}

impl RegionShape {
    fn covers(&self, row: usize, col: usize) -> bool {
        match *self {
            RegionShape::Rect {
                top,
                left,
                height,
                width,
            } => row >= top && row < top + height && col >= left && col < left + width,
            RegionShape::Stripes {
                orientation,
                period,
                thickness,
                offset,
            } => {
                let pos = match orientation {
                    Orientation::Row => row,
                    Orientation::Column => col,
                };
                pos >= offset && (pos - offset) % period < thickness
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRegion {
    pub shape: RegionShape,
    pub class: u16,
    /// Higher wins where regions overlap. Overlapping regions of different
    /// classes need distinct priorities.
    pub priority: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: u16,
    pub regions: Vec<SceneRegion>,
    /// Per-sample uniform color noise in `[-jitter, jitter]`, drawn from the
    /// seed. Must stay small enough that no pixel changes class.
    pub jitter: u8,
}

fn min_centroid_distance(palette: &PaletteSegmenter) -> f64 {
    let c = palette.centroids();
    let mut best = f64::INFINITY;
    for (i, a) in c.iter().enumerate() {
        for b in &c[i + 1..] {
            let d: f64 = a.1.iter().zip(b.1).map(|(&x, y)| (x as f64 - y as f64).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// Renders `spec` with palette colors; labels are exact by construction.
pub fn synth_scene(spec: &SceneSpec, palette: &PaletteSegmenter, seed: u64) -> Result<(Image, LabelMap), DatasetError> {
    let bad = |m: String| Err(DatasetError::InvalidSpec(m));
    if spec.height == 0 || spec.width == 0 {
        return bad("scene must be at least 1x1".into());
    }
    if palette.color_of(spec.background).is_none() {
        return bad(format!("background class {} is not in the palette", spec.background));
    }
    for (i, r) in spec.regions.iter().enumerate() {
        if palette.color_of(r.class).is_none() {
            return bad(format!("region {i}: class {} is not in the palette", r.class));
        }
        if let RegionShape::Stripes { period, thickness, .. } = r.shape {
            if period == 0 || thickness == 0 || thickness > period {
                return bad(format!("region {i}: stripes need 0 < thickness <= period"));
            }
        }
    }
    if spec.jitter as f64 * 3f64.sqrt() * 2.0 >= min_centroid_distance(palette) {
        return bad(format!("jitter {} could move pixels across class boundaries", spec.jitter));
    }

    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![spec.background; h * w];
    for row in 0..h {
        for col in 0..w {
            let mut winner: Option<(usize, Option<u32>)> = None;
            for (i, r) in spec.regions.iter().enumerate() {
                if !r.shape.covers(row, col) {
                    continue;
                }
                winner = match winner {
                    None => Some((i, r.priority)),
                    Some((j, pj)) => {
                        let other = &spec.regions[j];
                        match (r.priority, pj) {
                            (Some(a), Some(b)) if a != b => Some(if a > b { (i, r.priority) } else { (j, pj) }),
                            _ if other.class == r.class => Some((j, pj)),
                            _ => {
                                return bad(format!(
                                    "regions {j} and {i} overlap at ({row},{col}) without distinct priorities"
                                ))
                            }
                        }
                    }
                };
            }
            if let Some((i, _)) = winner {
                labels[row * w + col] = spec.regions[i].class;
            }
        }
    }

    let mut stream = rng::seeded(seed);
    let j = spec.jitter as i16;
    let mut samples = Vec::with_capacity(h * w * 3);
    for &class in &labels {
        let color = palette.color_of(class).expect("checked above");
        for c in color {
            let noise = if j > 0 { stream.random_range(-j..=j) } else { 0 };
            samples.push((c as i16 + noise).clamp(0, 255) as u8);
        }
    }
    let img = Image::new(h, w, 3, samples).expect("sized");
    Ok((img, LabelMap::new(h, w, labels).expect("sized")))
}

/// A random scene: a background plus 2-4 rectangles and sometimes a stripe
/// band, over 2-4 distinct palette classes.
pub fn random_scene_spec(height: usize, width: usize, palette: &PaletteSegmenter, seed: u64) -> SceneSpec {
    let mut stream = rng::seeded(seed);
    let classes: Vec<u16> = palette.centroids().iter().map(|c| c.0).collect();
    let count = stream.random_range(2..=classes.len().min(4));
    let picked: Vec<u16> = rand::seq::index::sample(&mut stream, classes.len(), count)
        .into_iter()
        .map(|i| classes[i])
        .collect();
    let background = picked[0];
    let mut regions = Vec::new();
    let rects = stream.random_range(2..=4);
    for k in 0..rects {
        let rh = stream.random_range(height / 4..=height * 3 / 4).max(1);
        let rw = stream.random_range(width / 4..=width * 3 / 4).max(1);
        regions.push(SceneRegion {
            shape: RegionShape::Rect {
                top: stream.random_range(0..=height - rh),
                left: stream.random_range(0..=width - rw),
                height: rh,
                width: rw,
            },
            class: picked[1 + k % (picked.len() - 1)],
            priority: Some(k as u32 + 1),
        });
    }
    if stream.random_bool(0.3) {
        let period = stream.random_range(4..=12).min(height.max(2));
        regions.push(SceneRegion {
            shape: RegionShape::Stripes {
                orientation: if stream.random_bool(0.5) { Orientation::Row } else { Orientation::Column },
                period,
                thickness: (period / 2).max(1),
                offset: 0,
            },
            class: picked[stream.random_range(0..picked.len())],
            priority: Some(0),
        });
    }
    SceneSpec {
        height,
        width,
        background,
        regions,
        jitter: 0,
    }
}

/// Writes `count` random scenes as `scene_000`, `scene_001`, ...
pub fn write_synthetic_corpus(
    root: &Path,
    layout: &DatasetLayout,
    palette: &PaletteSegmenter,
    count: usize,
    size: (usize, usize),
    seed: u64,
) -> Result<Vec<String>, DatasetError> {
    fs::create_dir_all(root.join(&layout.image_dir)).map_err(io_err(root))?;
    fs::create_dir_all(root.join(&layout.label_dir)).map_err(io_err(root))?;
    (0..count)
        .map(|i| {
            let id = format!("scene_{i:03}");
            let s = rng::derive_seed(seed, &id);
            let spec = random_scene_spec(size.0, size.1, palette, s);
            let (img, labels) = synth_scene(&spec, palette, s)?;
            write_pair(root, layout, &id, &img, &labels)?;
            Ok(id)
        })
        .collect()
}

// ---- export and manifests ----

/// How the mean IoU over a set is aggregated; recorded in manifests.
pub const MIOU_MODE: &str = "mean_of_image_means";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub tool_version: String,
    pub master_seed: u64,
    pub rng_algorithm: String,
    pub ga: GaConfig,
    pub bounds: ParameterBounds,
    pub oracle: String,
    pub miou_mode: String,
    pub export_threshold: f64,
    pub layout: DatasetLayout,
    pub repeat_index: usize,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Exported,
    /// The best program did not clear the export threshold.
    Rejected,
    Failed,
}

/// Result of evolving one dataset entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub status: EntryStatus,
    pub clean_iou: Option<f64>,
    /// Hex chromosome encoding of the best program.
    pub chromosome: Option<String>,
    pub fitness: Option<f64>,
    pub iou: Option<f64>,
    #[serde(default, with = "opt_psnr")]
    pub psnr: Option<f64>,
    pub generations: Option<usize>,
    pub termination: Option<Termination>,
    pub oracle_calls: Option<usize>,
    /// Relative to the output root.
    pub image_path: Option<String>,
    pub image_sha256: Option<String>,
    pub trace_path: Option<String>,
    pub error: Option<String>,
}

mod opt_psnr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::psnr_serde")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFooter {
    pub entries: usize,
    pub exported: usize,
    pub failed: usize,
    pub clean_miou: Option<f64>,
    pub adversarial_miou: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ManifestRecord {
    Header(ManifestHeader),
    Entry(ManifestEntry),
    Footer(ManifestFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    pub footer: Option<ManifestFooter>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut header = None;
        let mut entries = Vec::new();
        let mut footer = None;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| DatasetError::Manifest { line: n + 1, message };
            let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            match record {
                ManifestRecord::Header(h) if header.is_none() && n == 0 => header = Some(h),
                ManifestRecord::Entry(e) if header.is_some() && footer.is_none() => entries.push(e),
                ManifestRecord::Footer(f) if header.is_some() && footer.is_none() => footer = Some(f),
                _ => return Err(bad("record out of order".into())),
            }
        }
        let header = header.ok_or(DatasetError::Manifest {
            line: 1,
            message: "missing header".into(),
        })?;
        Ok(Self {
            header,
            entries,
            footer,
        })
    }

    /// Copy with wall-clock fields blanked, for run-to-run comparison.
    pub fn without_timestamps(&self) -> Self {
        let mut m = self.clone();
        m.header.created_at.clear();
        if let Some(f) = &mut m.footer {
            f.finished_at.clear();
        }
        m
    }
}

/// Append-only manifest file; each record is one flushed line.
pub struct ManifestWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl ManifestWriter {
    pub fn create(path: &Path, header: &ManifestHeader) -> Result<Self, DatasetError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.write(&ManifestRecord::Header(header.clone()))?;
        Ok(w)
    }

    fn write(&mut self, record: &ManifestRecord) -> Result<(), DatasetError> {
        let mut line = serde_json::to_string(record).expect("manifest records serialize");
        line.push('\n');
        let path = self.path.clone();
        self.out.write_all(line.as_bytes()).map_err(io_err(&path))?;
        self.out.flush().map_err(io_err(&path))
    }

    pub fn append(&mut self, entry: &ManifestEntry) -> Result<(), DatasetError> {
        self.write(&ManifestRecord::Entry(entry.clone()))
    }

    pub fn finish(mut self, footer: &ManifestFooter) -> Result<(), DatasetError> {
        self.write(&ManifestRecord::Footer(footer.clone()))
    }
}

/// Relative output path of an exported image.
pub fn export_relative_path(id: &str) -> String {
    format!("images/{id}.png")
}

/// What [`export_adversarial`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedImage {
    pub relative_path: String,
    pub path: PathBuf,
    pub sha256: String,
    pub chromosome: String,
}

/// Writes `distorted` under `out_root` if its PSNR strictly exceeds
/// `threshold`. The caller appends the manifest entry, so a failed write
/// leaves the manifest untouched.
pub fn export_adversarial(
    entry: &DatasetEntry,
    distorted: &Image,
    record: &FitnessRecord,
    ch: &Chromosome,
    out_root: &Path,
    threshold: f64,
) -> Result<ExportedImage, DatasetError> {
    if !(record.psnr > threshold) {
        return Err(DatasetError::GateViolation {
            psnr: record.psnr,
            threshold,
        });
    }
    let relative_path = export_relative_path(&entry.id);
    let path = out_root.join(&relative_path);
    write_image(&path, distorted)?;
    let sha256 = sha256_file(&path)?;
    Ok(ExportedImage {
        relative_path,
        path,
        sha256,
        chromosome: ch.to_hex(),
    })
}
