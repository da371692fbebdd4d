//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metamorph_core::dataset::{write_synthetic_corpus, DatasetLayout, RunManifest};
use metamorph_core::evolution::GaConfig;
use metamorph_core::oracle::{serve_connection, PaletteSegmenter, SegmentationOracle};
use metamorph_core::stats::WilcoxonMode;
use metamorph_core::transforms::ParameterBounds;

use crate::campaign::run_attack;
use crate::config::{OracleSpec, Settings};
use crate::evaluate::{compare, evaluate_dataset, read_iou_table, write_eval_csv, write_stats, Method};
use crate::replay::replay;
use crate::{io_err, CliError, EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL};

#[derive(Debug, Parser)]
#[command(name = "metamorph", version, about = "Evolve metamorphic distortions against segmentation models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve and export an adversarial dataset.
    Attack(CampaignArgs),
    /// Per-image IoU of an oracle on a dataset.
    Evaluate(EvaluateArgs),
    /// Wilcoxon and Cohen's d over per-image IoU tables.
    Stats(StatsArgs),
    /// Re-apply a manifest and report drift.
    Replay(ReplayArgs),
    /// Write default config files.
    GenConfig(GenConfigArgs),
    /// Write a synthetic corpus colored with the built-in palette.
    Synth(SynthArgs),
    /// Serve the built-in palette model over the wire protocol.
    ServeOracle(ServeArgs),
}

/// Campaign flags. A config file, when given, overrides these, and
/// `METAMORPH_<KEY>` environment variables override both.
#[derive(Debug, Args, Default)]
pub struct CampaignArgs {
    /// Campaign config file (flat key = value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// `builtin-palette`, `tcp://host:port` or `exec:program args`.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub oracle_timeout: Option<f64>,
    #[arg(long)]
    pub ga: Option<PathBuf>,
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Wall-clock budget per image, in seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    #[arg(long)]
    pub export_threshold: Option<f64>,
    #[arg(long)]
    pub repeat: Option<usize>,
    #[arg(long)]
    pub seed_stride: Option<u64>,
}

impl CampaignArgs {
    pub fn settings(&self) -> Result<Settings, CliError> {
        let flags = Settings {
            dataset: self.dataset.clone(),
            layout: self.layout.clone(),
            oracle: self.oracle.clone(),
            oracle_timeout_secs: self.oracle_timeout,
            ga: self.ga.clone(),
            bounds: self.bounds.clone(),
            out: self.out.clone(),
            workers: self.workers,
            seed: self.seed,
            time_budget_secs: self.time_budget,
            export_threshold: self.export_threshold,
            repeat: self.repeat,
            seed_stride: self.seed_stride,
        };
        let config = self.config.clone().or_else(|| std::env::var_os("METAMORPH_CONFIG").map(PathBuf::from));
        let file = match &config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let env = Settings::from_env_with(|k| std::env::var(k).ok())?;
        Ok(env.over(file.over(flags)))
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value = "builtin-palette")]
    pub oracle: String,
    #[arg(long, default_value_t = 30.0)]
    pub oracle_timeout: f64,
}

impl OracleArgs {
    fn build(&self) -> Result<std::sync::Arc<dyn SegmentationOracle>, CliError> {
        let spec: OracleSpec = self.oracle.parse().map_err(CliError::Config)?;
        if !(self.oracle_timeout > 0.0 && self.oracle_timeout.is_finite()) {
            return Err(CliError::Config("oracle timeout must be positive".into()));
        }
        spec.build(Duration::from_secs_f64(self.oracle_timeout))
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Auto,
    Exact,
    Normal,
}

impl From<ModeArg> for WilcoxonMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => WilcoxonMode::Auto,
            ModeArg::Exact => WilcoxonMode::Exact,
            ModeArg::Normal => WilcoxonMode::NormalApproximation,
        }
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// `name=table.csv` for the reference method.
    #[arg(long)]
    pub a: String,
    /// `name=table.csv`; repeat for several methods.
    #[arg(long, required = true)]
    pub b: Vec<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// The clean dataset the manifest was produced from.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Re-check recorded IoUs with this oracle. Defaults to the built-in
    /// palette when the manifest was produced with it.
    #[arg(long)]
    pub oracle: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenConfigArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen on this TCP address instead of stdin/stdout.
    #[arg(long)]
    pub listen: Option<String>,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Attack(a) => cmd_attack(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Replay(a) => cmd_replay(&a),
        Command::GenConfig(a) => cmd_gen_config(&a.out).map(|_| EXIT_OK),
        Command::Synth(a) => {
            let ids = write_synthetic_corpus(
                &a.out,
                &DatasetLayout::default(),
                &PaletteSegmenter::reference(),
                a.count,
                (a.size, a.size),
                a.seed,
            )?;
            println!("wrote {} scenes to {}", ids.len(), a.out.display());
            Ok(EXIT_OK)
        }
        Command::ServeOracle(a) => cmd_serve(a.listen.as_deref()).map(|_| EXIT_OK),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn cmd_attack(args: &CampaignArgs) -> Result<i32, CliError> {
    let cfg = args.settings()?.resolve()?;
    let oracle = cfg.oracle.build(cfg.oracle_timeout)?;
    let runs = run_attack(&cfg, oracle.as_ref())?;
    let mut code = EXIT_OK;
    for r in &runs {
        println!(
            "{}: {} entries, {} exported, clean mIoU {}, adversarial mIoU {}, mean PSNR {}",
            r.manifest_path.display(),
            r.entries,
            r.exported,
            fmt_opt(r.clean_miou),
            fmt_opt(r.adversarial_miou),
            fmt_opt(r.mean_psnr)
        );
        for (id, err) in &r.failures {
            eprintln!("failed {id}: {err}");
            code = EXIT_PARTIAL;
        }
    }
    Ok(code)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<i32, CliError> {
    let layout = match &args.layout {
        Some(p) => DatasetLayout::parse(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => DatasetLayout::default(),
    };
    let oracle = args.oracle.build()?;
    let table = evaluate_dataset(&args.dataset, &layout, oracle.as_ref())?;
    match &args.out {
        Some(p) => write_eval_csv(&table, fs::File::create(p).map_err(io_err(p))?)?,
        None => write_eval_csv(&table, io::stdout().lock())?,
    }
    eprintln!("mIoU {} over {} images", fmt_opt(table.miou), table.rows.len());
    Ok(EXIT_OK)
}

fn parse_method(spec: &str) -> Result<Method, CliError> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected name=path, got `{spec}`")))?;
    Ok((name.to_string(), read_iou_table(Path::new(path))?))
}

fn cmd_stats(args: &StatsArgs) -> Result<i32, CliError> {
    let a = parse_method(&args.a)?;
    let bs: Vec<Method> = args.b.iter().map(|s| parse_method(s)).collect::<Result<_, _>>()?;
    let report = compare(&a, &bs, args.mode.into())?;
    let all: Vec<&Method> = std::iter::once(&a).chain(&bs).collect();
    write_stats(&args.out, &report, &all)?;
    for p in &report.pairs {
        println!(
            "{} vs {}: W={} p={:.6e} ({}, n={})",
            p.method_a,
            p.method_b,
            p.wilcoxon.statistic,
            p.wilcoxon.p_value,
            p.wilcoxon.mode.as_str(),
            p.wilcoxon.n_effective
        );
    }
    if let Some(d) = &report.cohens_d {
        println!("cohen's d = {:.4}", d.d);
    }
    Ok(EXIT_OK)
}

fn cmd_replay(args: &ReplayArgs) -> Result<i32, CliError> {
    let oracle: Option<std::sync::Arc<dyn SegmentationOracle>> = match &args.oracle {
        Some(spec) => Some(
            spec.parse::<OracleSpec>()
                .map_err(CliError::Config)?
                .build(Duration::from_secs(30))?,
        ),
        None => {
            let header = RunManifest::read(&args.manifest)?.header;
            let builtin = PaletteSegmenter::reference();
            (header.oracle == builtin.descriptor())
                .then(|| std::sync::Arc::new(builtin) as std::sync::Arc<dyn SegmentationOracle>)
        }
    };
    let report = replay(&args.manifest, &args.dataset, oracle.as_deref())?;
    for (id, status) in &report.rows {
        println!("{id}: {status}");
    }
    let problems = report.problems();
    println!("{} entries, {} with drift or malformed payloads", report.rows.len(), problems);
    Ok(if problems == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

fn cmd_gen_config(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = [
        ("ga.conf", GaConfig::default().to_kv().render()),
        ("bounds.conf", ParameterBounds::default().to_kv().render()),
        ("layout.conf", DatasetLayout::default().to_kv().render()),
        (
            "campaign.conf",
            "dataset = data\nlayout = layout.conf\nga = ga.conf\nbounds = bounds.conf\nout = out\n\
             oracle = builtin-palette\nexport_threshold = 20\nrepeat = 1\nseed_stride = 1\n"
                .to_string(),
        ),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(io_err(&p))?;
    }
    Ok(())
}

fn cmd_serve(listen: Option<&str>) -> Result<(), CliError> {
    let oracle = PaletteSegmenter::reference();
    let Some(addr) = listen else {
        let stdin = io::stdin();
        let stdout = io::stdout();
        let mut input = BufReader::new(stdin.lock());
        let mut output = BufWriter::new(stdout.lock());
        return serve_connection(&mut input, &mut output, &oracle).map_err(io_err(Path::new("<stdio>")));
    };
    let listener = TcpListener::bind(addr).map_err(io_err(Path::new(addr)))?;
    eprintln!("serving on {}", listener.local_addr().map_err(io_err(Path::new(addr)))?);
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let oracle = oracle.clone();
        thread::spawn(move || {
            let Ok(read_half) = stream.try_clone() else { return };
            let mut input = BufReader::new(read_half);
            let mut output = BufWriter::new(stream);
            let _ = serve_connection(&mut input, &mut output, &oracle);
        });
    }
    Ok(())
}
