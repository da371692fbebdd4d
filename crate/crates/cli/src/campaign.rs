//! The `attack` campaign: one GA run per dataset entry.
//!
//! Output layout under the run directory:
//!
//! ```text
//! manifest.jsonl       header, one entry per id (id order), footer
//! images/<id>.png      exported adversarial images
//! labels/<id>.png      matching ground truth, 16-bit
//! traces/<id>.json     per-entry evolution trace
//! ```
//!
//! With `repeat > 1` each repetition gets its own `run_<k>` directory and
//! master seed `seed + k * seed_stride`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use metamorph_core::dataset::{
    self, export_adversarial, load_dataset, DatasetEntry, EntryStatus, ManifestEntry, ManifestFooter,
    ManifestHeader, ManifestWriter, MIOU_MODE,
};
use metamorph_core::evolution::{evolve, EvolutionTrace, GaConfig};
use metamorph_core::imaging;
use metamorph_core::oracle::SegmentationOracle;
use metamorph_core::rng;
use metamorph_core::transforms;
use rayon::prelude::*;

use crate::config::CampaignConfig;
use crate::{io_err, CliError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub master_seed: u64,
    pub entries: usize,
    pub exported: usize,
    pub failures: Vec<(String, String)>,
    pub clean_miou: Option<f64>,
    pub adversarial_miou: Option<f64>,
    pub mean_psnr: Option<f64>,
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every repetition of the campaign.
pub fn run_attack(cfg: &CampaignConfig, oracle: &dyn SegmentationOracle) -> Result<Vec<RunSummary>, CliError> {
    let index = load_dataset(&cfg.dataset_root, &cfg.layout)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    (0..cfg.repeat)
        .map(|k| {
            let seed = cfg.ga.master_seed.wrapping_add(k as u64 * cfg.seed_stride);
            let out_dir = if cfg.repeat == 1 {
                cfg.out_root.clone()
            } else {
                cfg.out_root.join(format!("run_{k}"))
            };
            run_once(cfg, &index.entries, oracle, &pool, k, seed, &out_dir)
        })
        .collect()
}

fn run_once(
    cfg: &CampaignConfig,
    entries: &[DatasetEntry],
    oracle: &dyn SegmentationOracle,
    pool: &rayon::ThreadPool,
    repeat_index: usize,
    master_seed: u64,
    out_dir: &Path,
) -> Result<RunSummary, CliError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let header = ManifestHeader {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        master_seed,
        rng_algorithm: rng::ALGORITHM.into(),
        ga: GaConfig {
            master_seed,
            ..cfg.ga.clone()
        },
        bounds: cfg.bounds.clone(),
        oracle: oracle.descriptor(),
        miou_mode: MIOU_MODE.into(),
        export_threshold: cfg.export_threshold,
        layout: cfg.layout.clone(),
        repeat_index,
        created_at: timestamp(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut writer = ManifestWriter::create(&manifest_path, &header)?;

    // Workers finish in any order; entries are committed in id order.
    let (tx, rx) = mpsc::channel::<(usize, ManifestEntry)>();
    let mut written = Vec::with_capacity(entries.len());
    let mut write_error = None;
    thread::scope(|s| {
        s.spawn(|| {
            pool.install(|| {
                entries.par_iter().enumerate().for_each_with(tx, |tx, (i, e)| {
                    let record = attack_entry(cfg, e, oracle, master_seed, out_dir);
                    let _ = tx.send((i, record));
                })
            })
        });
        let mut pending = BTreeMap::new();
        for (i, record) in rx {
            pending.insert(i, record);
            while let Some(r) = pending.remove(&written.len()) {
                if write_error.is_none() {
                    if let Err(e) = writer.append(&r) {
                        write_error = Some(e);
                    }
                }
                written.push(r);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e.into());
    }

    let ok: Vec<&ManifestEntry> = written.iter().filter(|e| e.status != EntryStatus::Failed).collect();
    let clean: Vec<f64> = ok.iter().filter_map(|e| e.clean_iou).collect();
    // rejected entries keep their clean image in the adversarial set
    let adversarial: Vec<f64> = ok
        .iter()
        .filter_map(|e| match e.status {
            EntryStatus::Exported => e.iou,
            _ => e.clean_iou,
        })
        .collect();
    let psnrs: Vec<f64> = written
        .iter()
        .filter(|e| e.status == EntryStatus::Exported)
        .filter_map(|e| e.psnr)
        .collect();
    let failures: Vec<(String, String)> = written
        .iter()
        .filter(|e| e.status == EntryStatus::Failed)
        .map(|e| (e.id.clone(), e.error.clone().unwrap_or_default()))
        .collect();
    let footer = ManifestFooter {
        entries: written.len(),
        exported: psnrs.len(),
        failed: failures.len(),
        clean_miou: mean(&clean),
        adversarial_miou: mean(&adversarial),
        mean_psnr: mean(&psnrs).filter(|p| p.is_finite()),
        finished_at: timestamp(),
    };
    writer.finish(&footer)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        manifest_path,
        master_seed,
        entries: footer.entries,
        exported: footer.exported,
        failures,
        clean_miou: footer.clean_miou,
        adversarial_miou: footer.adversarial_miou,
        mean_psnr: footer.mean_psnr,
    })
}

pub fn trace_relative_path(id: &str) -> String {
    format!("traces/{id}.json")
}

fn write_trace(out_dir: &Path, id: &str, trace: &EvolutionTrace) -> Result<String, CliError> {
    let rel = trace_relative_path(id);
    let path = out_dir.join(&rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let json = serde_json::to_string_pretty(trace).expect("traces serialize");
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(rel)
}

/// Attacks one entry; failures are recorded, never propagated.
pub fn attack_entry(
    cfg: &CampaignConfig,
    entry: &DatasetEntry,
    oracle: &dyn SegmentationOracle,
    master_seed: u64,
    out_dir: &Path,
) -> ManifestEntry {
    let seed = rng::derive_seed(master_seed, &entry.id);
    let mut record = ManifestEntry {
        id: entry.id.clone(),
        seed,
        status: EntryStatus::Failed,
        clean_iou: None,
        chromosome: None,
        fitness: None,
        iou: None,
        psnr: None,
        generations: None,
        termination: None,
        oracle_calls: None,
        image_path: None,
        image_sha256: None,
        trace_path: None,
        error: None,
    };
    if let Err(e) = attack_into(cfg, entry, oracle, seed, out_dir, &mut record) {
        record.status = EntryStatus::Failed;
        record.error = Some(e.to_string());
    }
    record
}

fn attack_into(
    cfg: &CampaignConfig,
    entry: &DatasetEntry,
    oracle: &dyn SegmentationOracle,
    seed: u64,
    out_dir: &Path,
    record: &mut ManifestEntry,
) -> Result<(), CliError> {
    let (img, labels) = entry.load()?;
    let clean = oracle.segment(&img)?;
    record.clean_iou = Some(imaging::iou(&clean, &labels).map_err(|e| CliError::Failed(e.to_string()))?.mean_iou);

    let ga = GaConfig {
        master_seed: seed,
        ..cfg.ga.clone()
    };
    let outcome = match evolve(&img, &labels, oracle, &ga, &cfg.bounds) {
        Ok(o) => o,
        Err(failure) => {
            record.trace_path = write_trace(out_dir, &entry.id, &failure.trace).ok();
            return Err(CliError::Failed(failure.error.to_string()));
        }
    };
    record.trace_path = Some(write_trace(out_dir, &entry.id, &outcome.trace)?);
    record.chromosome = Some(outcome.best.to_hex());
    record.fitness = Some(outcome.best_record.fitness);
    record.iou = outcome.best_record.iou;
    record.psnr = Some(outcome.best_record.psnr);
    record.generations = Some(outcome.trace.generations.len());
    record.termination = outcome.trace.termination;
    record.oracle_calls = Some(outcome.trace.oracle_calls);

    if !(outcome.best_record.psnr > cfg.export_threshold) || outcome.best_record.iou.is_none() {
        record.status = EntryStatus::Rejected;
        return Ok(());
    }
    let distorted = transforms::apply_sequence(&img, &outcome.best.to_transform_sequence())
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let exported = export_adversarial(entry, &distorted, &outcome.best_record, &outcome.best, out_dir, cfg.export_threshold)?;
    dataset::write_labels(&out_dir.join(format!("labels/{}.png", entry.id)), &labels)?;
    record.image_path = Some(exported.relative_path);
    record.image_sha256 = Some(exported.sha256);
    record.status = EntryStatus::Exported;
    Ok(())
}
