//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureId;
use crate::fpca::{DEFAULT_GRID_SIZE, DEFAULT_HORIZON_NS, DEFAULT_VARIANCE_THRESHOLD};
use crate::ingest::{QuoteFormat, NANOS_PER_SECOND};
use crate::learners::{EnetGrid, EnetParams, LearnerSpec, ModelKind, SvmParams};
use crate::synth::SynthConfig;
use crate::windowing::{LabelingParams, DEFAULT_ALPHA, DEFAULT_K};

/// Feature set and aggregation of one model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    /// V1–V22 plus FPC scores.
    Baseline,
    /// Baseline features, sampling ensemble.
    Ensemble,
    /// V1–V22.
    WithinWindow,
    /// V11–V22 plus FPC scores.
    Fpca,
    /// V11–V22.
    WindowLevel,
}

impl Setup {
    pub const ALL: [Setup; 5] = [
        Setup::Baseline,
        Setup::Ensemble,
        Setup::WithinWindow,
        Setup::Fpca,
        Setup::WindowLevel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setup::Baseline => "baseline",
            Setup::Ensemble => "ensemble",
            Setup::WithinWindow => "within_window",
            Setup::Fpca => "fpca",
            Setup::WindowLevel => "window_level",
        }
    }

    pub fn uses_fpc(self) -> bool {
        matches!(self, Setup::Baseline | Setup::Ensemble | Setup::Fpca)
    }

    pub fn features(self, n_fpc: usize) -> Vec<FeatureId> {
        let mut ids = match self {
            Setup::Baseline | Setup::Ensemble | Setup::WithinWindow => FeatureId::all_vars(),
            Setup::Fpca | Setup::WindowLevel => FeatureId::window_level(),
        };
        if self.uses_fpc() {
            ids.extend(FeatureId::fpc(n_fpc));
        }
        ids
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setup::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown setup {s:?}")))
    }
}

/// A paired comparison: per-repeat F1 of `minuend` minus F1 of `subtrahend`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    pub name: &'static str,
    pub minuend: Setup,
    pub subtrahend: Setup,
}

pub const STRATEGIES: [Strategy; 4] = [
    Strategy {
        name: "I",
        minuend: Setup::Baseline,
        subtrahend: Setup::Fpca,
    },
    Strategy {
        name: "II",
        minuend: Setup::Ensemble,
        subtrahend: Setup::Baseline,
    },
    Strategy {
        name: "III",
        minuend: Setup::Baseline,
        subtrahend: Setup::WithinWindow,
    },
    Strategy {
        name: "I_without_fpca",
        minuend: Setup::WithinWindow,
        subtrahend: Setup::WindowLevel,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpcaConfig {
    pub horizon_seconds: f64,
    pub grid_size: usize,
    pub variance_threshold: f64,
}

impl Default for FpcaConfig {
    fn default() -> Self {
        FpcaConfig {
            horizon_seconds: (DEFAULT_HORIZON_NS / NANOS_PER_SECOND) as f64,
            grid_size: DEFAULT_GRID_SIZE,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
        }
    }
}

impl FpcaConfig {
    pub fn horizon_ns(&self) -> i64 {
        (self.horizon_seconds * NANOS_PER_SECOND as f64).round() as i64
    }
}

/// Elastic-net cross-validation grid and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnetConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_lambdas: usize,
    pub alphas: Vec<f64>,
    pub folds: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EnetConfig {
    fn default() -> Self {
        let grid = EnetGrid::default();
        let p = EnetParams::default();
        EnetConfig {
            lambda_min: 1e-8,
            lambda_max: 5.0,
            n_lambdas: grid.lambdas.len(),
            alphas: grid.alphas,
            folds: 5,
            max_iters: p.max_iters,
            tol: p.tol,
        }
    }
}

/// Where one symbol's quotes come from: a file or the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StockSource {
    pub symbol: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: QuoteFormat,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

/// How ensemble members pick elastic-net hyperparameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberTuning {
    /// Every member cross-validates on its own subset.
    #[default]
    PerMember,
    /// Cross-validate once on the repeat's training sample; every member
    /// fits at the winning grid point.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub k: usize,
    pub alpha: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub n_repeats: usize,
    pub n_members: usize,
    pub learner: ModelKind,
    pub setups: Vec<Setup>,
    pub member_tuning: MemberTuning,
    /// Repeats allowed to fail before the run counts as failed.
    pub max_failed_repeats: usize,
    pub fpca: FpcaConfig,
    pub enet: EnetConfig,
    pub svm: SvmParams,
    pub stocks: Vec<StockSource>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            train_size: 8000,
            test_size: 2000,
            n_repeats: 100,
            n_members: 100,
            learner: ModelKind::Svm,
            setups: vec![Setup::Baseline, Setup::Ensemble, Setup::WithinWindow, Setup::Fpca],
            member_tuning: MemberTuning::PerMember,
            max_failed_repeats: 0,
            fpca: FpcaConfig::default(),
            enet: EnetConfig::default(),
            svm: SvmParams::default(),
            stocks: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a TOML file; relative input paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = ExperimentConfig::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            for s in &mut c.stocks {
                if let Some(p) = &s.path {
                    if p.is_relative() {
                        s.path = Some(dir.join(p));
                    }
                }
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks only the settings that feature construction reads.
    pub fn validate_features(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.labeling().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.fpca.grid_size < 2 || !(self.fpca.horizon_seconds > 0.0) {
            return bad("fpca needs grid_size >= 2 and a positive horizon".into());
        }
        if !(self.fpca.variance_threshold > 0.0 && self.fpca.variance_threshold <= 1.0) {
            return bad("fpca.variance_threshold must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.validate_features()?;
        if self.train_size == 0 || self.test_size == 0 {
            return bad("train_size and test_size must be positive".into());
        }
        if self.n_repeats == 0 {
            return bad("n_repeats must be positive".into());
        }
        if self.setups.is_empty() {
            return bad("at least one setup is required".into());
        }
        for (i, s) in self.setups.iter().enumerate() {
            if self.setups[..i].contains(s) {
                return bad(format!("setup {s} listed twice"));
            }
        }
        if self.setups.contains(&Setup::Ensemble) && self.n_members == 0 {
            return bad("n_members must be positive for the ensemble setup".into());
        }
        if self.stocks.is_empty() {
            return bad("no stocks configured".into());
        }
        for (i, s) in self.stocks.iter().enumerate() {
            if s.symbol.is_empty() {
                return bad(format!("stock {i} has an empty symbol"));
            }
            if self.stocks[..i].iter().any(|o| o.symbol == s.symbol) {
                return bad(format!("symbol {} listed twice", s.symbol));
            }
            match (&s.path, &s.synth) {
                (Some(_), None) => {}
                (None, Some(sc)) => sc.validate().map_err(|e| Error::Config(format!("{}: {e}", s.symbol)))?,
                _ => return bad(format!("{}: give exactly one of `path` or `synth`", s.symbol)),
            }
        }
        self.learner_spec().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn labeling(&self) -> LabelingParams {
        LabelingParams {
            alpha: self.alpha,
            k: self.k,
        }
    }

    pub fn needs_fpc(&self) -> bool {
        self.setups.iter().any(|s| s.uses_fpc())
    }

    pub fn learner_spec(&self) -> LearnerSpec {
        match self.learner {
            ModelKind::Enet => LearnerSpec::Enet {
                grid: EnetGrid::log_spaced(
                    self.enet.lambda_min,
                    self.enet.lambda_max,
                    self.enet.n_lambdas,
                    self.enet.alphas.clone(),
                ),
                folds: self.enet.folds,
                params: EnetParams {
                    max_iters: self.enet.max_iters,
                    tol: self.enet.tol,
                    ..EnetParams::default()
                },
            },
            ModelKind::Svm => LearnerSpec::Svm(self.svm),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
