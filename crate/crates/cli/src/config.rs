//! Campaign settings, layered lowest to highest as defaults, command-line
//! flags, config file, then `METAMORPH_<KEY>` environment overrides.
//!
//! The config file is flat `key = value`. Path values (`dataset`, `layout`,
//! `ga`, `bounds`, `out`) are relative to the file's directory. Environment
//! keys are the file keys upper-cased, e.g. `METAMORPH_SEED`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use metamorph_core::dataset::DatasetLayout;
use metamorph_core::evolution::GaConfig;
use metamorph_core::kv::KvDocument;
use metamorph_core::oracle::{Endpoint, PaletteSegmenter, RemoteOracle, SegmentationOracle};
use metamorph_core::transforms::ParameterBounds;

use crate::{io_err, CliError};

pub const BUILTIN_ORACLE: &str = "builtin-palette";

#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    Builtin,
    Remote(Endpoint),
}

impl FromStr for OracleSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == BUILTIN_ORACLE {
            Ok(OracleSpec::Builtin)
        } else {
            s.parse().map(OracleSpec::Remote)
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Builtin => f.write_str(BUILTIN_ORACLE),
            OracleSpec::Remote(e) => write!(f, "{e}"),
        }
    }
}

impl OracleSpec {
    /// Builds the oracle; remote endpoints are connected once up front.
    pub fn build(&self, timeout: Duration) -> Result<Arc<dyn SegmentationOracle>, CliError> {
        Ok(match self {
            OracleSpec::Builtin => Arc::new(PaletteSegmenter::reference()),
            OracleSpec::Remote(e) => {
                let remote = RemoteOracle::with_timeout(e.clone(), timeout);
                remote.connect()?;
                Arc::new(remote)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub dataset_root: PathBuf,
    pub layout: DatasetLayout,
    pub oracle: OracleSpec,
    pub oracle_timeout: Duration,
    pub ga: GaConfig,
    pub bounds: ParameterBounds,
    pub out_root: PathBuf,
    pub workers: usize,
    /// Exported images need PSNR strictly above this.
    pub export_threshold: f64,
    pub repeat: usize,
    pub seed_stride: u64,
}

/// Raw settings from one layer; `None` defers to the next layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub dataset: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub oracle: Option<String>,
    pub oracle_timeout_secs: Option<f64>,
    pub ga: Option<PathBuf>,
    pub bounds: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub time_budget_secs: Option<f64>,
    pub export_threshold: Option<f64>,
    pub repeat: Option<usize>,
    pub seed_stride: Option<u64>,
}

const FILE_KEYS: &[&str] = &[
    "dataset",
    "layout",
    "oracle",
    "oracle_timeout_secs",
    "ga",
    "bounds",
    "out",
    "workers",
    "seed",
    "time_budget_secs",
    "export_threshold",
    "repeat",
    "seed_stride",
];

impl Settings {
    pub fn from_kv(doc: &KvDocument, base: &Path) -> Result<Self, CliError> {
        doc.reject_unknown(FILE_KEYS)?;
        let path = |k: &str| doc.get(k).map(|v| base.join(v));
        Ok(Self {
            dataset: path("dataset"),
            layout: path("layout"),
            oracle: doc.get("oracle").map(str::to_string),
            oracle_timeout_secs: doc.parse_value("oracle_timeout_secs")?,
            ga: path("ga"),
            bounds: path("bounds"),
            out: path("out"),
            workers: doc.parse_value("workers")?,
            seed: doc.parse_value("seed")?,
            time_budget_secs: doc.parse_value("time_budget_secs")?,
            export_threshold: doc.parse_value("export_threshold")?,
            repeat: doc.parse_value("repeat")?,
            seed_stride: doc.parse_value("seed_stride")?,
        })
    }

    /// Reads `METAMORPH_<KEY>` values through `lookup`.
    pub fn from_env_with(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let mut doc = KvDocument::default();
        for key in FILE_KEYS {
            if let Some(v) = lookup(&format!("METAMORPH_{}", key.to_uppercase())) {
                doc.insert(*key, v);
            }
        }
        Self::from_kv(&doc, Path::new(""))
            .map_err(|e| CliError::Config(format!("environment override: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let doc = KvDocument::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_kv(&doc, path.parent().unwrap_or(Path::new(".")))
    }

    /// Fields set here win over `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        Settings {
            dataset: self.dataset.or(lower.dataset),
            layout: self.layout.or(lower.layout),
            oracle: self.oracle.or(lower.oracle),
            oracle_timeout_secs: self.oracle_timeout_secs.or(lower.oracle_timeout_secs),
            ga: self.ga.or(lower.ga),
            bounds: self.bounds.or(lower.bounds),
            out: self.out.or(lower.out),
            workers: self.workers.or(lower.workers),
            seed: self.seed.or(lower.seed),
            time_budget_secs: self.time_budget_secs.or(lower.time_budget_secs),
            export_threshold: self.export_threshold.or(lower.export_threshold),
            repeat: self.repeat.or(lower.repeat),
            seed_stride: self.seed_stride.or(lower.seed_stride),
        }
    }

    pub fn resolve(self) -> Result<CampaignConfig, CliError> {
        let missing = |what: &str| CliError::Config(format!("no {what} given (flag, env or config file)"));
        let read = |p: &Path| fs::read_to_string(p).map_err(io_err(p));
        let layout = match &self.layout {
            Some(p) => DatasetLayout::parse(&read(p)?)?,
            None => DatasetLayout::default(),
        };
        let mut ga = match &self.ga {
            Some(p) => GaConfig::parse(&read(p)?)?,
            None => GaConfig::default(),
        };
        if let Some(s) = self.seed {
            ga.master_seed = s;
        }
        if let Some(t) = self.time_budget_secs {
            ga.time_budget_secs = Some(t);
        }
        ga.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let bounds = match &self.bounds {
            Some(p) => ParameterBounds::parse(&read(p)?)?,
            None => ParameterBounds::default(),
        };
        let oracle = self
            .oracle
            .as_deref()
            .unwrap_or(BUILTIN_ORACLE)
            .parse()
            .map_err(CliError::Config)?;
        let timeout = self.oracle_timeout_secs.unwrap_or(30.0);
        if !(timeout > 0.0 && timeout.is_finite()) {
            return Err(CliError::Config("oracle timeout must be positive".into()));
        }
        let workers = self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        let repeat = self.repeat.unwrap_or(1);
        if repeat == 0 {
            return Err(CliError::Config("repeat must be at least 1".into()));
        }
        Ok(CampaignConfig {
            dataset_root: self.dataset.ok_or_else(|| missing("dataset"))?,
            layout,
            oracle,
            oracle_timeout: Duration::from_secs_f64(timeout),
            ga,
            bounds,
            out_root: self.out.ok_or_else(|| missing("output directory"))?,
            workers,
            export_threshold: self.export_threshold.unwrap_or(20.0),
            repeat,
            seed_stride: self.seed_stride.unwrap_or(1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_and_paths() {
        let doc = KvDocument::parse("dataset = data\nout = run\nseed = 5\nworkers = 2").unwrap();
        let file = Settings::from_kv(&doc, Path::new("/cfg")).unwrap();
        assert_eq!(file.dataset, Some(PathBuf::from("/cfg/data")));
        let flags = Settings {
            seed: Some(9),
            ..Settings::default()
        };
        let cfg = flags.over(file).resolve().unwrap();
        assert_eq!((cfg.ga.master_seed, cfg.workers), (9, 2));
        assert_eq!(cfg.oracle, OracleSpec::Builtin);
        assert_eq!(cfg.export_threshold, 20.0);
    }

    #[test]
    fn environment_overrides_file_over_flags() {
        let flags = Settings {
            seed: Some(1),
            workers: Some(1),
            repeat: Some(1),
            ..Settings::default()
        };
        let file = Settings {
            seed: Some(2),
            workers: Some(2),
            ..Settings::default()
        };
        let env = Settings::from_env_with(|k| (k == "METAMORPH_SEED").then(|| "3".to_string())).unwrap();
        let merged = env.over(file.over(flags));
        assert_eq!((merged.seed, merged.workers, merged.repeat), (Some(3), Some(2), Some(1)));
        assert!(Settings::from_env_with(|k| (k == "METAMORPH_WORKERS").then(|| "x".to_string())).is_err());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(Settings::default().resolve(), Err(CliError::Config(_))));
        let doc = KvDocument::parse("nonsense = 1").unwrap();
        assert!(matches!(Settings::from_kv(&doc, Path::new(".")), Err(CliError::Config(_))));
        let bad_oracle = Settings {
            dataset: Some("d".into()),
            out: Some("o".into()),
            oracle: Some("http://x".into()),
            ..Settings::default()
        };
        assert!(matches!(bad_oracle.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn oracle_spec_parsing() {
        assert_eq!("builtin-palette".parse(), Ok(OracleSpec::Builtin));
        assert!(matches!("tcp://h:1".parse::<OracleSpec>(), Ok(OracleSpec::Remote(_))));
        assert_eq!("exec:a b".parse::<OracleSpec>().unwrap().to_string(), "exec:a b");
    }
}
