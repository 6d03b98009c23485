//! Report files written by an experiment run.
//!
//! | file | contents |
//! |------|----------|
//! | `metrics.csv` | median precision/recall/F1 per stock and setup |
//! | `metrics_by_repeat.csv` | every fit's scores |
//! | `f1_deltas.csv` | per-repeat F1 differences per strategy (long format) |
//! | `significance.csv` | Wilcoxon W, raw and adjusted p per stock and strategy |
//! | `importance.csv` | selection fractions per stock, feature and class |
//! | `importance_histogram.csv` | stocks in which each feature is high-impact |
//! | `timings.csv` | wall-clock seconds per fit (not reproducible) |
//! | `report.json` | the full report, for `lobbench report` |
//! | `manifest.json` | config, config hash, code version, per-repeat seeds |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchmarkReport, ExperimentConfig, Setup};
use crate::error::{Error, Result};
use crate::stats;
use crate::windowing::Label;

const MANIFEST_FORMAT: &str = "lobbench-manifest";
const MANIFEST_VERSION: u32 = 1;

/// Files whose content depends only on the config (everything but timings).
pub const REPRODUCIBLE_FILES: [&str; 8] = [
    "metrics.csv",
    "metrics_by_repeat.csv",
    "f1_deltas.csv",
    "significance.csv",
    "importance.csv",
    "importance_histogram.csv",
    "report.json",
    "manifest.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSeed {
    pub symbol: String,
    pub repeat: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<RepeatSeed>,
    pub timings_file: String,
}

impl RunManifest {
    pub fn from_report(report: &BenchmarkReport) -> RunManifest {
        let seeds = report
            .stocks
            .iter()
            .flat_map(|s| {
                s.repeats.iter().map(|r| RepeatSeed {
                    symbol: s.symbol.clone(),
                    repeat: r.repeat,
                    seed: r.seed,
                })
            })
            .collect();
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            code_version: report.code_version.clone(),
            config_hash: report.config_hash.clone(),
            config: report.config.clone(),
            seeds,
            timings_file: "timings.csv".to_string(),
        }
    }

    /// Reads a manifest and checks that its config still hashes to the
    /// recorded value.
    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("{} is not a run manifest", path.display())));
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        if m.config.hash() != m.config_hash {
            return Err(Error::Config("manifest config does not match its hash".into()));
        }
        Ok(m)
    }
}

pub fn load_report(path: impl AsRef<Path>) -> Result<BenchmarkReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_writer(dir: &Path, name: &str) -> Result<(csv::Writer<BufWriter<File>>, PathBuf)> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((csv::Writer::from_writer(BufWriter::new(file)), path))
}

fn finish(w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes every report file into `outdir` (created if missing) and returns
/// the paths written. `timings.csv` is only written when the report carries
/// timing data.
pub fn emit_reports(report: &BenchmarkReport, outdir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = outdir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let learner = match report.config.learner {
        crate::learners::ModelKind::Enet => "enet",
        crate::learners::ModelKind::Svm => "svm",
    };

    let (mut w, path) = csv_writer(dir, "metrics.csv")?;
    w.write_record([
        "symbol", "setup", "learner", "repeats", "precision", "recall", "f1", "f1_mean",
    ])?;
    for s in &report.stocks {
        for &setup in &report.config.setups {
            let runs: Vec<_> = s.repeats.iter().filter_map(|r| r.run(setup)).collect();
            let col = |f: fn(&stats::MetricsReport) -> f64| {
                opt(stats::median(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>()))
            };
            let f1s: Vec<f64> = runs.iter().map(|r| r.metrics.macro_f1).collect();
            let mean = (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64);
            w.write_record([
                s.symbol.clone(),
                setup.to_string(),
                learner.to_string(),
                runs.len().to_string(),
                col(|m| m.macro_precision),
                col(|m| m.macro_recall),
                col(|m| m.macro_f1),
                opt(mean),
            ])?;
        }
    }
    finish(w, &path)?;
    written.push(path);

    let (mut w, path) = csv_writer(dir, "metrics_by_repeat.csv")?;
    let mut header = vec![
        "symbol".to_string(),
        "repeat".into(),
        "setup".into(),
        "precision".into(),
        "recall".into(),
        "f1".into(),
    ];
    for l in Label::ALL {
        header.push(format!("f1_{l}"));
    }
    header.extend(["converged".into(), "failed_members".into(), "unconverged_members".into()]);
    w.write_record(&header)?;
    for s in &report.stocks {
        for r in &s.repeats {
            for run in &r.runs {
                let m = &run.metrics;
                let mut rec = vec![
                    s.symbol.clone(),
                    r.repeat.to_string(),
                    run.setup.to_string(),
                    m.macro_precision.to_string(),
                    m.macro_recall.to_string(),
                    m.macro_f1.to_string(),
                ];
                rec.extend(m.per_class.iter().map(|c| c.f1.to_string()));
                rec.extend([
                    run.converged.to_string(),
                    run.failed_members.to_string(),
                    run.unconverged_members.to_string(),
                ]);
                w.write_record(&rec)?;
            }
        }
    }
    finish(w, &path)?;
    written.push(path);

    let strategies = report.strategies();
    let (mut w, path) = csv_writer(dir, "f1_deltas.csv")?;
    w.write_record(["symbol", "strategy", "repeat", "f1_delta"])?;
    for st in &strategies {
        for s in &report.stocks {
            for (repeat, d) in s.deltas(st) {
                w.write_record([s.symbol.clone(), st.name.to_string(), repeat.to_string(), d.to_string()])?;
            }
        }
    }
    finish(w, &path)?;
    written.push(path);

    let (mut w, path) = csv_writer(dir, "significance.csv")?;
    w.write_record(["symbol", "strategy", "pairs", "n", "w", "p_raw", "p_adjusted"])?;
    for r in &report.significance {
        w.write_record([
            r.symbol.clone(),
            r.strategy.clone(),
            r.pairs.to_string(),
            r.n.to_string(),
            r.w.to_string(),
            r.p_raw.to_string(),
            r.p_adjusted.to_string(),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    let (mut w, path) = csv_writer(dir, "importance.csv")?;
    w.write_record(["symbol", "feature", "class", "selected", "models", "fraction", "high_impact"])?;
    let mut histogram: Vec<(String, Label, usize)> = Vec::new();
    for s in &report.stocks {
        let Some(imp) = &s.importance else { continue };
        for e in &imp.entries {
            w.write_record([
                s.symbol.clone(),
                e.feature.to_string(),
                e.class.to_string(),
                e.selected.to_string(),
                imp.n_models.to_string(),
                e.fraction.to_string(),
                e.high_impact.to_string(),
            ])?;
            let key = e.feature.to_string();
            match histogram.iter_mut().find(|h| h.0 == key && h.1 == e.class) {
                Some(h) => h.2 += usize::from(e.high_impact),
                None => histogram.push((key, e.class, usize::from(e.high_impact))),
            }
        }
    }
    finish(w, &path)?;
    written.push(path);

    let (mut w, path) = csv_writer(dir, "importance_histogram.csv")?;
    w.write_record(["feature", "class", "stocks_high_impact", "stocks"])?;
    let n_with = report.stocks.iter().filter(|s| s.importance.is_some()).count();
    for (feature, class, count) in &histogram {
        w.write_record([feature.clone(), class.to_string(), count.to_string(), n_with.to_string()])?;
    }
    finish(w, &path)?;
    written.push(path);

    if !report.timings.is_empty() {
        let (mut w, path) = csv_writer(dir, "timings.csv")?;
        w.write_record(["symbol", "repeat", "setup", "seconds", "members", "member_median_seconds"])?;
        for t in &report.timings {
            w.write_record([
                t.symbol.clone(),
                t.repeat.to_string(),
                t.setup.to_string(),
                t.seconds.to_string(),
                t.members.to_string(),
                opt(t.member_median_seconds),
            ])?;
        }
        finish(w, &path)?;
        written.push(path);
    }

    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("manifest.json");
    let manifest = RunManifest::from_report(report);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Median macro-F1 per setup for one stock, in config order.
pub fn median_f1(report: &BenchmarkReport, symbol: &str) -> Vec<(Setup, Option<f64>)> {
    let Some(s) = report.stock(symbol) else {
        return Vec::new();
    };
    report
        .config
        .setups
        .iter()
        .map(|&setup| (setup, stats::median(&s.f1_series(setup))))
        .collect()
}
