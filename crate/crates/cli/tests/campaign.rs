mod common;

use std::fs;

use common::{campaign, corpus, quick_ga, tree};
use metamorph_cli::campaign::{run_attack, MANIFEST_FILE};
use metamorph_cli::replay::{replay, ReplayStatus};
use metamorph_core::dataset::{read_image, read_labels, EntryStatus, RunManifest};
use metamorph_core::evolution::{EvolutionTrace, GaConfig};
use metamorph_core::oracle::PaletteSegmenter;

#[test]
fn five_scene_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ids = corpus(&data, 5, 48, 42);
    let out = dir.path().join("out");
    let cfg = campaign(&data, &out, 42, 2, GaConfig::default());
    let runs = run_attack(&cfg, &PaletteSegmenter::reference()).unwrap();
    assert_eq!(runs.len(), 1);

    let m = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.entries.len(), 5);
    assert_eq!(m.entries.iter().map(|e| e.id.clone()).collect::<Vec<_>>(), ids);
    for e in &m.entries {
        assert_eq!(e.status, EntryStatus::Exported, "{e:?}");
        assert!(e.psnr.unwrap() > 20.0);
        assert!(e.iou.unwrap() < e.clean_iou.unwrap(), "{}: {:?} vs {:?}", e.id, e.iou, e.clean_iou);
        let img = read_image(&out.join(e.image_path.as_ref().unwrap())).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (48, 48, 3));
        let labels = read_labels(&out.join(format!("labels/{}.png", e.id))).unwrap();
        assert_eq!((labels.height(), labels.width()), (48, 48));
        let trace: EvolutionTrace =
            serde_json::from_str(&fs::read_to_string(out.join(e.trace_path.as_ref().unwrap())).unwrap()).unwrap();
        assert_eq!(trace.generations.len(), e.generations.unwrap());
        assert_eq!(trace.best.unwrap().to_hex(), *e.chromosome.as_ref().unwrap());
    }
    let footer = m.footer.unwrap();
    assert_eq!((footer.entries, footer.exported, footer.failed), (5, 5, 0));
    assert!(footer.adversarial_miou.unwrap() < footer.clean_miou.unwrap());
    assert_eq!(runs[0].adversarial_miou, footer.adversarial_miou);
}

#[test]
fn empty_dataset_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 0, 16, 0);
    let out = dir.path().join("out");
    let runs = run_attack(&campaign(&data, &out, 1, 1, quick_ga()), &PaletteSegmenter::reference()).unwrap();
    assert_eq!(runs[0].entries, 0);
    let m = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert!(m.entries.is_empty());
    let f = m.footer.unwrap();
    assert_eq!((f.entries, f.clean_miou, f.adversarial_miou), (0, None, None));
}

#[test]
fn worker_count_and_reruns_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 4, 24, 7);
    let palette = PaletteSegmenter::reference();
    let mut outputs = Vec::new();
    for (name, workers) in [("a", 1), ("b", 4), ("c", 4)] {
        let out = dir.path().join(name);
        run_attack(&campaign(&data, &out, 9, workers, quick_ga()), &palette).unwrap();
        let m = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap().without_timestamps();
        let files: Vec<_> = tree(&out).into_iter().filter(|(p, _)| p != MANIFEST_FILE).collect();
        outputs.push((m, files));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn repeats_use_strided_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 2, 16, 3);
    let out = dir.path().join("out");
    let mut cfg = campaign(&data, &out, 100, 1, quick_ga());
    cfg.repeat = 3;
    cfg.seed_stride = 10;
    let runs = run_attack(&cfg, &PaletteSegmenter::reference()).unwrap();
    assert_eq!(runs.iter().map(|r| r.master_seed).collect::<Vec<_>>(), [100, 110, 120]);
    for (k, r) in runs.iter().enumerate() {
        assert_eq!(r.out_dir, out.join(format!("run_{k}")));
        let m = RunManifest::read(&r.manifest_path).unwrap();
        assert_eq!((m.header.master_seed, m.header.repeat_index), (r.master_seed, k));
        assert_eq!(m.header.ga.master_seed, r.master_seed);
    }
}

#[test]
fn replay_detects_drift_and_bad_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 3, 24, 11);
    let out = dir.path().join("out");
    let palette = PaletteSegmenter::reference();
    run_attack(&campaign(&data, &out, 5, 2, quick_ga()), &palette).unwrap();
    let manifest = out.join(MANIFEST_FILE);

    let clean = replay(&manifest, &data, Some(&palette)).unwrap();
    assert_eq!(clean.problems(), 0);
    let exported: Vec<&String> = clean
        .rows
        .iter()
        .filter(|(_, s)| *s == ReplayStatus::Verified)
        .map(|(id, _)| id)
        .collect();
    assert!(exported.len() >= 2, "{:?}", clean.rows);

    // flip one byte inside an exported file
    let first = RunManifest::read(&manifest).unwrap().entries.into_iter().find(|e| e.status == EntryStatus::Exported).unwrap();
    let img_path = out.join(first.image_path.unwrap());
    let original = fs::read(&img_path).unwrap();
    let mut bytes = original.clone();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&img_path, &bytes).unwrap();
    let tampered = replay(&manifest, &data, None).unwrap();
    assert_eq!(tampered.problems(), 1);
    let row = tampered.rows.iter().find(|(id, _)| *id == first.id).unwrap();
    assert!(matches!(row.1, ReplayStatus::Drift(_)), "{:?}", row.1);
    fs::write(&img_path, &original).unwrap();

    // break the recorded chromosome of the same entry
    let text = fs::read_to_string(&manifest).unwrap();
    let hex = first.chromosome.unwrap();
    fs::write(&manifest, text.replacen(&hex, &hex[..hex.len() - 2], 1)).unwrap();
    let broken = replay(&manifest, &data, None).unwrap();
    let row = broken.rows.iter().find(|(id, _)| *id == first.id).unwrap();
    assert!(matches!(row.1, ReplayStatus::MalformedPayload(_)), "{:?}", row.1);
    assert_eq!(broken.problems(), 1);
}

#[test]
fn grayscale_entries_fail_without_stopping_the_run() {
    use metamorph_core::dataset::{write_pair, DatasetLayout};
    use metamorph_core::imaging::{Image, LabelMap};

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 2, 16, 1);
    let gray = Image::filled(16, 16, 1, 90).unwrap();
    write_pair(&data, &DatasetLayout::default(), "gray", &gray, &LabelMap::filled(16, 16, 0).unwrap()).unwrap();
    let out = dir.path().join("out");
    let runs = run_attack(&campaign(&data, &out, 2, 2, quick_ga()), &PaletteSegmenter::reference()).unwrap();
    assert_eq!(runs[0].failures.len(), 1);
    assert_eq!(runs[0].failures[0].0, "gray");
    let m = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.entries.len(), 3);
    let g = m.entries.iter().find(|e| e.id == "gray").unwrap();
    assert_eq!(g.status, EntryStatus::Failed);
    assert!(g.error.as_ref().unwrap().contains("3-channel"));
    assert_eq!(m.footer.unwrap().failed, 1);
}
