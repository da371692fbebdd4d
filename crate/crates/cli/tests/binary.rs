mod common;

use std::fs;

use common::{bin, corpus, quick_ga, run, write_ga};
use metamorph_core::dataset::{write_pair, DatasetLayout, EntryStatus, RunManifest};
use metamorph_core::evolution::GaConfig;
use metamorph_core::imaging::{Image, LabelMap};
use metamorph_core::kv::KvDocument;
use metamorph_core::transforms::ParameterBounds;

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(bin().arg("no-such-command")).status.code(), Some(1));
    assert_eq!(run(bin().args(["attack", "--workers", "many"])).status.code(), Some(1));
    // no dataset anywhere
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["attack", "--out"]).arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset"));
    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
}

#[test]
fn attack_evaluate_stats_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(bin().args(["synth", "--count", "4", "--size", "24", "--seed", "5", "--out"]).arg(&data))
        .status
        .success());
    let ga = write_ga(dir.path(), &quick_ga());
    let out = dir.path().join("out");
    let o = run(bin()
        .args(["attack", "--seed", "3", "--workers", "2", "--dataset"])
        .arg(&data)
        .arg("--ga")
        .arg(&ga)
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4 entries"));

    let manifest = out.join("manifest.jsonl");
    let o = run(bin().arg("replay").arg("--manifest").arg(&manifest).arg("--dataset").arg(&data));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 with drift"));

    // clean images are segmented perfectly by the palette they were drawn with
    let clean_csv = dir.path().join("clean.csv");
    let o = run(bin().arg("evaluate").arg("--dataset").arg(&data).arg("--out").arg(&clean_csv));
    assert!(o.status.success());
    let text = fs::read_to_string(&clean_csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("1")), "{text}");

    // the exported images form a dataset of their own
    let adv_csv = dir.path().join("adv.csv");
    let o = run(bin().arg("evaluate").arg("--dataset").arg(&out).arg("--out").arg(&adv_csv));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::read(&manifest).unwrap();
    let exported = m.entries.iter().filter(|e| e.status == EntryStatus::Exported).count();
    assert_eq!(fs::read_to_string(&adv_csv).unwrap().lines().count(), exported + 1);

    assert_eq!(exported, 4);
    let stats = dir.path().join("stats");
    let o = run(bin()
        .arg("stats")
        .arg(format!("--a=clean={}", clean_csv.display()))
        .arg(format!("--b=adv={}", adv_csv.display()))
        .arg("--out")
        .arg(&stats));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("clean vs adv"));
    for f in ["stats.csv", "violin.csv", "report.json"] {
        assert!(stats.join(f).is_file(), "{f}");
    }
    let violin = fs::read_to_string(stats.join("violin.csv")).unwrap();
    assert_eq!(violin.lines().count(), 1 + 8);
}

#[test]
fn subprocess_oracle_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 2, 20, 8);
    let ga = write_ga(dir.path(), &quick_ga());
    let mut manifests = Vec::new();
    for (name, oracle) in [
        ("local", "builtin-palette".to_string()),
        ("remote", format!("exec:{} serve-oracle", env!("CARGO_BIN_EXE_metamorph"))),
    ] {
        let out = dir.path().join(name);
        let o = run(bin()
            .args(["attack", "--seed", "4", "--workers", "2", "--dataset"])
            .arg(&data)
            .arg("--ga")
            .arg(&ga)
            .arg("--out")
            .arg(&out)
            .arg("--oracle")
            .arg(&oracle));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        manifests.push(RunManifest::read(&out.join("manifest.jsonl")).unwrap());
    }
    assert!(manifests[1].header.oracle.starts_with("remote[exec:"));
    assert_eq!(manifests[0].entries, manifests[1].entries);
}

#[test]
fn failed_entries_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 1, 16, 8);
    let gray = Image::filled(16, 16, 1, 10).unwrap();
    write_pair(&data, &DatasetLayout::default(), "gray", &gray, &LabelMap::filled(16, 16, 0).unwrap()).unwrap();
    let ga = write_ga(dir.path(), &quick_ga());
    let out = dir.path().join("out");
    let o = run(bin()
        .args(["attack", "--dataset"])
        .arg(&data)
        .arg("--ga")
        .arg(&ga)
        .arg("--out")
        .arg(&out)
        .arg("--oracle")
        .arg(format!("exec:{} serve-oracle", env!("CARGO_BIN_EXE_metamorph"))));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed gray"));
    let m = RunManifest::read(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(m.entries.len(), 2);
}

#[test]
fn empty_dataset_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 0, 8, 0);
    let out = dir.path().join("out");
    let o = run(bin().args(["attack", "--dataset"]).arg(&data).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(0));
    let m = RunManifest::read(&out.join("manifest.jsonl")).unwrap();
    assert!(m.entries.is_empty());
    assert_eq!(m.footer.unwrap().entries, 0);
}

#[test]
fn gen_config_files_parse_and_drive_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["gen-config", "--out"]).arg(dir.path()));
    assert!(o.status.success());
    let ga = GaConfig::parse(&fs::read_to_string(dir.path().join("ga.conf")).unwrap()).unwrap();
    assert_eq!(ga, GaConfig::default());
    let bounds = ParameterBounds::parse(&fs::read_to_string(dir.path().join("bounds.conf")).unwrap()).unwrap();
    assert_eq!(bounds, ParameterBounds::default());
    DatasetLayout::parse(&fs::read_to_string(dir.path().join("layout.conf")).unwrap()).unwrap();

    // shrink the generated GA so the run stays quick
    fs::write(dir.path().join("ga.conf"), quick_ga().to_kv().render()).unwrap();
    corpus(&dir.path().join("data"), 1, 16, 2);
    let o = run(bin().args(["attack", "--config"]).arg(dir.path().join("campaign.conf")));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::read(&dir.path().join("out/manifest.jsonl")).unwrap();
    assert_eq!(m.entries.len(), 1);
    assert_eq!(m.header.ga.population_size, quick_ga().population_size);
}

#[test]
fn environment_beats_config_file_beats_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 1, 12, 0);
    let ga = write_ga(dir.path(), &quick_ga());
    let conf = dir.path().join("campaign.conf");
    let mut doc = KvDocument::default();
    doc.insert("seed", "200");
    doc.insert("export_threshold", "21");
    fs::write(&conf, doc.render()).unwrap();

    let header = |extra_env: Option<(&str, &str)>, out: &str| {
        let out = dir.path().join(out);
        let mut cmd = bin();
        cmd.args(["attack", "--seed", "100", "--export-threshold", "25", "--repeat", "1", "--dataset"])
            .arg(&data)
            .arg("--ga")
            .arg(&ga)
            .arg("--out")
            .arg(&out)
            .arg("--config")
            .arg(&conf);
        if let Some((k, v)) = extra_env {
            cmd.env(k, v);
        }
        let o = run(&mut cmd);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        RunManifest::read(&out.join("manifest.jsonl")).unwrap().header
    };
    let h = header(None, "file");
    assert_eq!((h.master_seed, h.export_threshold), (200, 21.0));
    let h = header(Some(("METAMORPH_SEED", "300")), "env");
    assert_eq!((h.master_seed, h.export_threshold), (300, 21.0));

    // without the config file the flags apply
    let out = dir.path().join("flags");
    let o = run(bin()
        .args(["attack", "--seed", "100", "--dataset"])
        .arg(&data)
        .arg("--ga")
        .arg(&ga)
        .arg("--out")
        .arg(&out));
    assert!(o.status.success());
    assert_eq!(RunManifest::read(&out.join("manifest.jsonl")).unwrap().header.master_seed, 100);

    let o = run(bin()
        .args(["attack", "--dataset"])
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("bad"))
        .env("METAMORPH_WORKERS", "lots"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serve_oracle_over_stdio() {
    use metamorph_core::oracle::wire::{read_frame, Frame};
    use std::io::Write;
    use std::process::Stdio;

    let mut child = bin()
        .arg("serve-oracle")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let img = Image::new(1, 2, 3, vec![40, 40, 40, 225, 225, 225]).unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        stdin.write_all(&Frame::Request(img).encode()).unwrap();
    }
    let mut stdout = child.stdout.take().unwrap();
    let reply = read_frame(&mut stdout).unwrap().unwrap();
    assert_eq!(reply, Frame::Response(LabelMap::new(1, 2, vec![0, 7]).unwrap()));
    assert!(child.wait().unwrap().success());
}
