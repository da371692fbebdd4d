#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metamorph_cli::config::{CampaignConfig, Settings};
use metamorph_core::dataset::{write_synthetic_corpus, DatasetLayout};
use metamorph_core::evolution::GaConfig;
use metamorph_core::oracle::PaletteSegmenter;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_metamorph"));
    for (k, _) in std::env::vars() {
        if k.starts_with("METAMORPH_") {
            c.env_remove(k);
        }
    }
    c
}

pub fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if std::env::var_os("METAMORPH_TEST_VERBOSE").is_some() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

pub fn corpus(root: &Path, count: usize, side: usize, seed: u64) -> Vec<String> {
    write_synthetic_corpus(root, &DatasetLayout::default(), &PaletteSegmenter::reference(), count, (side, side), seed)
        .unwrap()
}

/// A cheap GA for tests that only exercise plumbing.
pub fn quick_ga() -> GaConfig {
    GaConfig {
        population_size: 10,
        max_generations: 6,
        ..GaConfig::default()
    }
}

pub fn write_ga(dir: &Path, ga: &GaConfig) -> PathBuf {
    let p = dir.join("ga.conf");
    fs::write(&p, ga.to_kv().render()).unwrap();
    p
}

pub fn campaign(dataset: &Path, out: &Path, seed: u64, workers: usize, ga: GaConfig) -> CampaignConfig {
    let mut cfg = Settings {
        dataset: Some(dataset.to_path_buf()),
        out: Some(out.to_path_buf()),
        seed: Some(seed),
        workers: Some(workers),
        ..Settings::default()
    }
    .resolve()
    .unwrap();
    cfg.ga = GaConfig {
        master_seed: seed,
        ..ga
    };
    cfg
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
