//! Benchmark orchestration: per stock, repeated paired train/test draws,
//! every configured setup fit and scored on the same draw, then paired
//! F1 comparisons across repeats.

pub mod config;
pub mod report;

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{EnetConfig, ExperimentConfig, FpcaConfig, MemberTuning, Setup, StockSource, Strategy, STRATEGIES};
pub use report::{emit_reports, RunManifest};

use crate::ensemble::{ensemble_fit, ensemble_predict};
use crate::error::{Error, Result};
use crate::features::{build_feature_rows, FeatureId, FeatureMatrix};
use crate::fpca;
use crate::ingest::{self, CleaningReport, QuoteEvent};
use crate::learners::{predict, EnetModel, LearnerSpec, ModelBody};
use crate::preprocess::{derive_seed, fit_stats, stratified_sample, transform, SamplingPlan, Split};
use crate::stats::{self, ImportanceReport, MetricsReport, DEFAULT_IMPORTANCE_THRESHOLD};
use crate::synth;
use crate::windowing::{frame_by_day, Label};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One symbol's full feature matrix (V1–V22, then any FPC scores).
#[derive(Debug, Clone)]
pub struct StockData {
    pub symbol: String,
    pub cleaning: Option<CleaningReport>,
    pub n_events: usize,
    pub matrix: FeatureMatrix,
    pub n_fpc: usize,
    pub fpc_explained: Option<f64>,
    /// Rows dropped because no earlier trading day supplied FPC scores.
    pub rows_without_history: usize,
}

/// Events from a file (parsed and cleaned) or from the generator.
pub fn load_events(source: &StockSource) -> Result<(Vec<QuoteEvent>, Option<CleaningReport>)> {
    if let Some(sc) = &source.synth {
        return Ok((synth::generate(sc)?, None));
    }
    let path = source
        .path
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{}: no input", source.symbol)))?;
    let parsed = ingest::parse_quote_file(path, &source.format)?;
    for d in &parsed.diagnostics {
        log::warn!("{}:{}: {}", path.display(), d.line, d.message);
    }
    let (events, report) = ingest::clean(&parsed.records)?;
    Ok((events, Some(report)))
}

/// Builds the feature matrix for one event stream. With `fpca` set, each
/// row gains the FPC scores of the previous trading day's trajectory;
/// rows from the first day have no such history and are dropped.
pub fn featurize(
    events: &[QuoteEvent],
    config: &ExperimentConfig,
    with_fpc: bool,
) -> Result<(FeatureMatrix, usize, Option<f64>, usize)> {
    let days = frame_by_day(events, config.k)?;
    let mut m = build_feature_rows(&days, &config.labeling())?;
    if !with_fpc {
        return Ok((m, 0, None, 0));
    }
    let (trajectories, _) = fpca::build_trajectories(events, config.fpca.horizon_ns(), config.fpca.grid_size)?;
    if trajectories.len() < 2 {
        return Err(Error::Param(format!(
            "FPCA setups need at least 2 trading days, found {}",
            trajectories.len()
        )));
    }
    let basis = fpca::fit(&trajectories, config.fpca.variance_threshold)?;
    let j = basis.n_components();
    let mut prev_scores: HashMap<u32, Vec<f64>> = HashMap::new();
    for pair in trajectories.windows(2) {
        prev_scores.insert(pair[1].day, fpca::project(&pair[0], &basis)?.scores);
    }
    let before = m.rows.len();
    m.rows.retain(|r| prev_scores.contains_key(&r.day));
    for r in &mut m.rows {
        r.values.extend_from_slice(&prev_scores[&r.day]);
    }
    m.feature_ids.extend(FeatureId::fpc(j));
    let dropped = before - m.rows.len();
    Ok((m, j, Some(basis.explained_fraction()), dropped))
}

pub fn prepare_stock(source: &StockSource, config: &ExperimentConfig) -> Result<StockData> {
    let (events, cleaning) = load_events(source)?;
    let (matrix, n_fpc, fpc_explained, rows_without_history) = featurize(&events, config, config.needs_fpc())?;
    Ok(StockData {
        symbol: source.symbol.clone(),
        cleaning,
        n_events: events.len(),
        matrix,
        n_fpc,
        fpc_explained,
        rows_without_history,
    })
}

/// SHA-256 (hex) of an index set.
pub fn index_digest(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for &i in indices {
        h.update((i as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Seed of repeat `repeat` for stock number `stock`.
pub fn repeat_seed(master: u64, stock: usize, repeat: usize) -> u64 {
    derive_seed(master, ((stock as u64) << 32) | repeat as u64)
}

/// Rows of a repeat's draw: the single-model training sample, the test set
/// and the pool (every non-test row) that ensemble members draw from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepeatDraw {
    pub split: Split,
    pub pool: Vec<usize>,
}

pub fn draw_repeat(labels: &[Label], config: &ExperimentConfig, seed: u64) -> Result<RepeatDraw> {
    let plan = SamplingPlan::balanced(config.train_size, config.test_size, seed);
    let split = stratified_sample(labels, &plan)?;
    let mut in_test = vec![false; labels.len()];
    for &i in &split.test {
        in_test[i] = true;
    }
    let pool = (0..labels.len()).filter(|&i| !in_test[i]).collect();
    Ok(RepeatDraw { split, pool })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupRun {
    pub setup: Setup,
    pub metrics: MetricsReport,
    pub converged: bool,
    pub failed_members: usize,
    pub unconverged_members: usize,
    /// Digests of the rows the setup was fit on and scored on.
    pub fit_digest: String,
    pub test_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRun {
    pub repeat: usize,
    pub seed: u64,
    pub train_digest: String,
    pub test_digest: String,
    pub pool_digest: String,
    pub runs: Vec<SetupRun>,
    pub error: Option<String>,
}

impl RepeatRun {
    pub fn run(&self, setup: Setup) -> Option<&SetupRun> {
        self.runs.iter().find(|r| r.setup == setup)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub symbol: String,
    pub repeat: usize,
    pub setup: Setup,
    pub seconds: f64,
    pub members: usize,
    pub member_median_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockReport {
    pub symbol: String,
    pub cleaning: Option<CleaningReport>,
    pub n_events: usize,
    pub n_rows: usize,
    pub label_counts: [usize; 3],
    pub n_fpc: usize,
    pub fpc_explained: Option<f64>,
    pub rows_without_history: usize,
    pub repeats: Vec<RepeatRun>,
    pub importance: Option<ImportanceReport>,
    pub error: Option<String>,
}

impl StockReport {
    /// Per-repeat macro-F1 of `setup`, skipping repeats where it is missing.
    pub fn f1_series(&self, setup: Setup) -> Vec<f64> {
        self.repeats
            .iter()
            .filter_map(|r| r.run(setup))
            .map(|r| r.metrics.macro_f1)
            .collect()
    }

    /// `(repeat, F1(minuend) - F1(subtrahend))` over repeats with both.
    pub fn deltas(&self, strategy: &Strategy) -> Vec<(usize, f64)> {
        self.repeats
            .iter()
            .filter_map(|r| {
                let a = r.run(strategy.minuend)?;
                let b = r.run(strategy.subtrahend)?;
                Some((r.repeat, a.metrics.macro_f1 - b.metrics.macro_f1))
            })
            .collect()
    }

    pub fn failed_repeats(&self) -> usize {
        if self.error.is_some() {
            return self.repeats.len().max(1);
        }
        self.repeats.iter().filter(|r| r.error.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub symbol: String,
    pub strategy: String,
    pub pairs: usize,
    pub n: usize,
    pub w: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub code_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub stocks: Vec<StockReport>,
    pub significance: Vec<SignificanceRow>,
    /// Wall-clock data; not part of the reproducible report.
    #[serde(skip)]
    pub timings: Vec<TimingRow>,
}

impl BenchmarkReport {
    pub fn failed_repeats(&self) -> usize {
        self.stocks.iter().map(StockReport::failed_repeats).sum()
    }

    pub fn within_failure_budget(&self) -> bool {
        self.failed_repeats() <= self.config.max_failed_repeats
    }

    pub fn stock(&self, symbol: &str) -> Option<&StockReport> {
        self.stocks.iter().find(|s| s.symbol == symbol)
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        STRATEGIES
            .into_iter()
            .filter(|s| self.config.setups.contains(&s.minuend) && self.config.setups.contains(&s.subtrahend))
            .collect()
    }
}

struct RepeatOutput {
    run: RepeatRun,
    timings: Vec<TimingRow>,
    importance_model: Option<(Vec<FeatureId>, EnetModel)>,
}

/// Setup whose single models feed the selection-frequency report.
fn importance_setup(config: &ExperimentConfig) -> Option<Setup> {
    [Setup::Baseline, Setup::WithinWindow, Setup::Fpca, Setup::WindowLevel]
        .into_iter()
        .find(|s| config.setups.contains(s))
}

fn run_setup(
    stock: &StockData,
    setup: Setup,
    draw: &RepeatDraw,
    config: &ExperimentConfig,
    spec: &LearnerSpec,
    seed: u64,
) -> Result<(SetupRun, TimingRow, Option<EnetModel>)> {
    let ids = setup.features(stock.n_fpc);
    let m = &stock.matrix;
    let test_digest = index_digest(&draw.split.test);
    let start = Instant::now();
    if setup == Setup::Ensemble {
        let pool = m.subset(&draw.pool);
        let stats = fit_stats(&pool)?;
        let pool_t = transform(&pool, &stats)?.select(&ids)?;
        let test_t = transform(&m.subset(&draw.split.test), &stats)?.select(&ids)?;
        let plan = SamplingPlan::balanced(config.train_size, 0, derive_seed(seed, 2));
        let member_spec = match config.member_tuning {
            MemberTuning::Shared => {
                let train_t = transform(&m.subset(&draw.split.train), &stats)?.select(&ids)?;
                spec.tuned(&train_t, derive_seed(seed, 1))?
            }
            MemberTuning::PerMember => spec.clone(),
        };
        let (ens, member_secs) = ensemble_fit(&pool_t, config.n_members, &plan, &member_spec)?;
        let pred = ensemble_predict(&ens, &test_t)?;
        let metrics = stats::score(&pred, &test_t.labels())?;
        let seconds = start.elapsed().as_secs_f64();
        let run = SetupRun {
            setup,
            metrics,
            converged: ens.n_unconverged() == 0,
            failed_members: ens.n_failed(),
            unconverged_members: ens.n_unconverged(),
            fit_digest: index_digest(&draw.pool),
            test_digest,
        };
        let timing = TimingRow {
            symbol: stock.symbol.clone(),
            repeat: 0,
            setup,
            seconds,
            members: member_secs.len(),
            member_median_seconds: stats::median(&member_secs),
        };
        return Ok((run, timing, None));
    }
    let train = m.subset(&draw.split.train);
    let stats = fit_stats(&train)?;
    let train_t = transform(&train, &stats)?.select(&ids)?;
    let test_t = transform(&m.subset(&draw.split.test), &stats)?.select(&ids)?;
    let model = spec.fit(&train_t, derive_seed(seed, 1))?;
    let pred = predict(&model, &test_t)?;
    let metrics = stats::score(&pred, &test_t.labels())?;
    let seconds = start.elapsed().as_secs_f64();
    let run = SetupRun {
        setup,
        metrics,
        converged: model.converged,
        failed_members: 0,
        unconverged_members: 0,
        fit_digest: index_digest(&draw.split.train),
        test_digest,
    };
    let timing = TimingRow {
        symbol: stock.symbol.clone(),
        repeat: 0,
        setup,
        seconds,
        members: 1,
        member_median_seconds: None,
    };
    let enet = match model.body {
        ModelBody::Enet(e) => Some(e),
        ModelBody::Svm(_) => None,
    };
    Ok((run, timing, enet))
}

fn run_repeat(
    stock: &StockData,
    stock_idx: usize,
    repeat: usize,
    config: &ExperimentConfig,
    spec: &LearnerSpec,
) -> RepeatOutput {
    let seed = repeat_seed(config.seed, stock_idx, repeat);
    let failed = |e: Error, digests: Option<&RepeatDraw>| {
        log::error!("{} repeat {repeat}: {e}", stock.symbol);
        RepeatOutput {
            run: RepeatRun {
                repeat,
                seed,
                train_digest: digests.map(|d| index_digest(&d.split.train)).unwrap_or_default(),
                test_digest: digests.map(|d| index_digest(&d.split.test)).unwrap_or_default(),
                pool_digest: digests.map(|d| index_digest(&d.pool)).unwrap_or_default(),
                runs: Vec::new(),
                error: Some(e.to_string()),
            },
            timings: Vec::new(),
            importance_model: None,
        }
    };
    let draw = match draw_repeat(&stock.matrix.labels(), config, seed) {
        Ok(d) => d,
        Err(e) => return failed(e, None),
    };
    let results: Vec<Result<(SetupRun, TimingRow, Option<EnetModel>)>> = config
        .setups
        .par_iter()
        .map(|&s| run_setup(stock, s, &draw, config, spec, seed))
        .collect();
    let keep = importance_setup(config);
    let mut runs = Vec::new();
    let mut timings = Vec::new();
    let mut importance_model = None;
    for r in results {
        match r {
            Ok((run, mut timing, enet)) => {
                timing.repeat = repeat;
                if Some(run.setup) == keep {
                    importance_model = enet.map(|e| (run.setup.features(stock.n_fpc), e));
                }
                runs.push(run);
                timings.push(timing);
            }
            Err(e) => return failed(e, Some(&draw)),
        }
    }
    RepeatOutput {
        run: RepeatRun {
            repeat,
            seed,
            train_digest: index_digest(&draw.split.train),
            test_digest: index_digest(&draw.split.test),
            pool_digest: index_digest(&draw.pool),
            runs,
            error: None,
        },
        timings,
        importance_model,
    }
}

fn run_stock(
    stock_idx: usize,
    source: &StockSource,
    config: &ExperimentConfig,
    spec: &LearnerSpec,
) -> (StockReport, Vec<TimingRow>) {
    let data = match prepare_stock(source, config) {
        Ok(d) => d,
        Err(e) => {
            log::error!("{}: {e}", source.symbol);
            let report = StockReport {
                symbol: source.symbol.clone(),
                cleaning: None,
                n_events: 0,
                n_rows: 0,
                label_counts: [0; 3],
                n_fpc: 0,
                fpc_explained: None,
                rows_without_history: 0,
                repeats: Vec::new(),
                importance: None,
                error: Some(e.to_string()),
            };
            return (report, Vec::new());
        }
    };
    let mut label_counts = [0usize; 3];
    for r in &data.matrix.rows {
        label_counts[r.label.index()] += 1;
    }
    log::info!(
        "{}: {} events, {} rows {:?}, {} FPC",
        data.symbol,
        data.n_events,
        data.matrix.len(),
        label_counts,
        data.n_fpc
    );
    let outputs: Vec<RepeatOutput> = (0..config.n_repeats)
        .into_par_iter()
        .map(|r| run_repeat(&data, stock_idx, r, config, spec))
        .collect();

    let mut repeats = Vec::with_capacity(outputs.len());
    let mut timings = Vec::new();
    let mut models = Vec::new();
    for o in outputs {
        repeats.push(o.run);
        timings.extend(o.timings);
        models.extend(o.importance_model);
    }
    let importance = models.first().map(|(ids, _)| ids.clone()).and_then(|ids| {
        let refs: Vec<&EnetModel> = models.iter().map(|(_, m)| m).collect();
        stats::importance(&ids, &refs, DEFAULT_IMPORTANCE_THRESHOLD).ok()
    });
    let report = StockReport {
        symbol: data.symbol.clone(),
        cleaning: data.cleaning,
        n_events: data.n_events,
        n_rows: data.matrix.len(),
        label_counts,
        n_fpc: data.n_fpc,
        fpc_explained: data.fpc_explained,
        rows_without_history: data.rows_without_history,
        repeats,
        importance,
        error: None,
    };
    (report, timings)
}

/// One-sided Wilcoxon tests of every applicable strategy for every stock,
/// Benjamini-Hochberg adjusted across stocks within each strategy.
pub fn significance(stocks: &[StockReport], strategies: &[Strategy]) -> Result<Vec<SignificanceRow>> {
    let mut rows = Vec::new();
    for strategy in strategies {
        let mut block = Vec::with_capacity(stocks.len());
        for s in stocks {
            let diffs: Vec<f64> = s.deltas(strategy).into_iter().map(|(_, d)| d).collect();
            let w = stats::wilcoxon_signed_rank(&diffs)?;
            block.push(SignificanceRow {
                symbol: s.symbol.clone(),
                strategy: strategy.name.to_string(),
                pairs: diffs.len(),
                n: w.n,
                w: w.w,
                p_raw: w.p,
                p_adjusted: f64::NAN,
            });
        }
        let raw: Vec<f64> = block.iter().map(|r| r.p_raw).collect();
        for (r, p) in block.iter_mut().zip(stats::fdr_adjust(&raw)?) {
            r.p_adjusted = p;
        }
        rows.extend(block);
    }
    Ok(rows)
}

/// Runs the whole benchmark on a pool of `jobs` threads (0 = all cores).
/// Failed repeats are recorded in the report rather than returned as errors.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<BenchmarkReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let spec = config.learner_spec();
    let results: Vec<(StockReport, Vec<TimingRow>)> = pool.install(|| {
        config
            .stocks
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_stock(i, s, config, &spec))
            .collect()
    });
    let mut stocks = Vec::with_capacity(results.len());
    let mut timings = Vec::new();
    for (s, t) in results {
        stocks.push(s);
        timings.extend(t);
    }
    let mut report = BenchmarkReport {
        code_version: CODE_VERSION.to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        stocks,
        significance: Vec::new(),
        timings,
    };
    if config.n_repeats > 1 {
        report.significance = significance(&report.stocks, &report.strategies())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ModelKind;
    use crate::synth::SynthConfig;

    fn tiny(setups: Vec<Setup>, repeats: usize) -> ExperimentConfig {
        ExperimentConfig {
            seed: 5,
            train_size: 150,
            test_size: 60,
            n_repeats: repeats,
            n_members: 3,
            learner: ModelKind::Enet,
            setups,
            enet: EnetConfig {
                n_lambdas: 1,
                lambda_max: 1e-2,
                alphas: vec![0.5],
                ..Default::default()
            },
            stocks: vec![StockSource {
                symbol: "SYN".into(),
                path: None,
                format: Default::default(),
                synth: Some(SynthConfig {
                    n_events: 6000,
                    n_days: 3,
                    seed: 1,
                    trend_signal_strength: 0.5,
                    ..Default::default()
                }),
            }],
            ..Default::default()
        }
    }

    #[test]
    fn minimal_run_has_one_fit_and_no_significance() {
        let report = run_experiment(&tiny(vec![Setup::Baseline], 1), 1).unwrap();
        let s = &report.stocks[0];
        assert_eq!(s.repeats.len(), 1);
        assert_eq!(s.repeats[0].runs.len(), 1);
        assert_eq!(report.timings.len(), 1);
        assert!(report.significance.is_empty());
        assert!(report.within_failure_budget());
        assert!(s.n_fpc > 0);
    }

    #[test]
    fn setups_share_draws_within_a_repeat() {
        let setups = vec![Setup::Baseline, Setup::WithinWindow, Setup::Fpca, Setup::Ensemble];
        let report = run_experiment(&tiny(setups, 2), 1).unwrap();
        for r in &report.stocks[0].repeats {
            assert!(r.error.is_none(), "{:?}", r.error);
            for run in &r.runs {
                assert_eq!(run.test_digest, r.test_digest);
                let expect = if run.setup == Setup::Ensemble {
                    &r.pool_digest
                } else {
                    &r.train_digest
                };
                assert_eq!(&run.fit_digest, expect);
            }
        }
        let reps = &report.stocks[0].repeats;
        assert_ne!(reps[0].test_digest, reps[1].test_digest);
        // I, II and III apply; the V11-V22-only comparison does not.
        assert_eq!(report.significance.len(), 3);
    }

    #[test]
    fn oversized_draw_is_recorded_as_failure() {
        let mut c = tiny(vec![Setup::WithinWindow], 1);
        c.train_size = 100_000;
        let report = run_experiment(&c, 1).unwrap();
        assert_eq!(report.failed_repeats(), 1);
        assert!(!report.within_failure_budget());
    }

    #[test]
    fn fpca_requires_two_days() {
        let mut c = tiny(vec![Setup::Fpca], 1);
        c.stocks[0].synth.as_mut().unwrap().n_days = 1;
        let report = run_experiment(&c, 1).unwrap();
        assert!(report.stocks[0].error.as_deref().unwrap().contains("2 trading days"));
    }
}
