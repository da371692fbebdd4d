//! `replay`: re-applies every recorded chromosome and checks the exports.

use std::fmt;
use std::path::Path;

use metamorph_core::dataset::{load_dataset, read_image, sha256_file, EntryStatus, ManifestEntry, RunManifest};
use metamorph_core::genome::Chromosome;
use metamorph_core::imaging;
use metamorph_core::oracle::SegmentationOracle;
use metamorph_core::transforms;
use rayon::prelude::*;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayStatus {
    Verified,
    /// Not exported, nothing to verify.
    Skipped,
    Drift(String),
    MalformedPayload(String),
}

impl ReplayStatus {
    pub fn is_problem(&self) -> bool {
        matches!(self, ReplayStatus::Drift(_) | ReplayStatus::MalformedPayload(_))
    }
}

impl fmt::Display for ReplayStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayStatus::Verified => f.write_str("ok"),
            ReplayStatus::Skipped => f.write_str("skipped"),
            ReplayStatus::Drift(m) => write!(f, "drift: {m}"),
            ReplayStatus::MalformedPayload(m) => write!(f, "malformed payload: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub rows: Vec<(String, ReplayStatus)>,
}

impl ReplayReport {
    pub fn problems(&self) -> usize {
        self.rows.iter().filter(|(_, s)| s.is_problem()).count()
    }
}

/// Checks a manifest against its clean dataset. Exported files are looked
/// up next to the manifest. With an oracle, recorded IoUs are re-checked too.
pub fn replay(
    manifest_path: &Path,
    dataset_root: &Path,
    oracle: Option<&dyn SegmentationOracle>,
) -> Result<ReplayReport, CliError> {
    let manifest = RunManifest::read(manifest_path)?;
    let out_root = manifest_path.parent().unwrap_or(Path::new("."));
    let index = load_dataset(dataset_root, &manifest.header.layout)?;
    let threshold = manifest.header.export_threshold;
    let rows = manifest
        .entries
        .par_iter()
        .map(|e| {
            let status = if e.status == EntryStatus::Exported {
                check_entry(e, &index, out_root, threshold, oracle)
            } else {
                ReplayStatus::Skipped
            };
            (e.id.clone(), status)
        })
        .collect();
    Ok(ReplayReport { rows })
}

fn check_entry(
    e: &ManifestEntry,
    index: &metamorph_core::dataset::DatasetIndex,
    out_root: &Path,
    threshold: f64,
    oracle: Option<&dyn SegmentationOracle>,
) -> ReplayStatus {
    let drift = |m: String| ReplayStatus::Drift(m);
    let ch = match e.chromosome.as_deref().map(Chromosome::from_hex) {
        None => return ReplayStatus::MalformedPayload("no chromosome recorded".into()),
        Some(Err(err)) => return ReplayStatus::MalformedPayload(err.to_string()),
        Some(Ok(ch)) => ch,
    };
    let Some(source) = index.get(&e.id) else {
        return drift("source image is missing from the dataset".into());
    };
    let (img, labels) = match source.load() {
        Ok(p) => p,
        Err(err) => return drift(format!("cannot load source: {err}")),
    };
    let distorted = match transforms::apply_sequence(&img, &ch.to_transform_sequence()) {
        Ok(d) => d,
        Err(err) => return drift(format!("chromosome no longer applies: {err}")),
    };
    let Some(rel) = &e.image_path else {
        return drift("no image path recorded".into());
    };
    let path = out_root.join(rel);
    match (sha256_file(&path), &e.image_sha256) {
        (Ok(h), Some(recorded)) if &h != recorded => return drift("exported file hash changed".into()),
        (Err(err), _) => return drift(format!("cannot read export: {err}")),
        _ => {}
    }
    match read_image(&path) {
        Ok(exported) if exported == distorted => {}
        Ok(_) => return drift("exported pixels differ from the re-applied chromosome".into()),
        Err(err) => return drift(format!("cannot decode export: {err}")),
    }
    let psnr = imaging::psnr(&img, &distorted).unwrap_or(f64::NAN);
    if Some(psnr) != e.psnr {
        return drift(format!("psnr {psnr} differs from recorded {:?}", e.psnr));
    }
    if !(psnr > threshold) {
        return drift(format!("psnr {psnr} is not above the export threshold {threshold}"));
    }
    if let Some(oracle) = oracle {
        let iou = oracle
            .segment(&distorted)
            .ok()
            .and_then(|p| imaging::iou(&p, &labels).ok())
            .map(|r| r.mean_iou);
        if iou != e.iou {
            return drift(format!("iou {iou:?} differs from recorded {:?}", e.iou));
        }
    }
    ReplayStatus::Verified
}
