//! Training-set winsorization and standardization, and label-stratified
//! train/test draws.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};
use crate::windowing::Label;

/// Box-plot bounds and post-winsorization moments of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStat {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
    pub stddev: f64,
}

impl ColumnStat {
    pub fn constant(&self) -> bool {
        self.stddev == 0.0
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.constant() {
            0.0
        } else {
            (x.clamp(self.lower, self.upper) - self.mean) / self.stddev
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub feature_ids: Vec<FeatureId>,
    pub columns: Vec<ColumnStat>,
}

impl ColumnStats {
    pub fn get(&self, id: FeatureId) -> Option<&ColumnStat> {
        self.feature_ids
            .iter()
            .position(|&f| f == id)
            .map(|i| &self.columns[i])
    }
}

/// Linear interpolation between order statistics ("type 7"). `sorted` must
/// be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn column_stat(values: &[f64]) -> ColumnStat {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lower, upper) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let n = values.len() as f64;
    let clamped: Vec<f64> = values.iter().map(|x| x.clamp(lower, upper)).collect();
    let mean = clamped.iter().sum::<f64>() / n;
    let var = clamped.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // A column whose winsorized values all coincide is treated as constant.
    let constant = clamped.iter().all(|&x| x == clamped[0]);
    ColumnStat {
        q1,
        q3,
        iqr,
        lower,
        upper,
        mean: if constant { clamped[0] } else { mean },
        stddev: if constant { 0.0 } else { var.sqrt() },
    }
}

pub fn fit_stats(train: &FeatureMatrix) -> Result<ColumnStats> {
    if train.standardized {
        return Err(Error::Param("column statistics must be fitted on raw features".into()));
    }
    if train.len() < 2 {
        return Err(Error::Param(format!(
            "column statistics need at least 2 rows, got {}",
            train.len()
        )));
    }
    train.check_finite()?;
    let columns = (0..train.n_features())
        .map(|c| {
            let col: Vec<f64> = train.rows.iter().map(|r| r.values[c]).collect();
            column_stat(&col)
        })
        .collect();
    Ok(ColumnStats {
        feature_ids: train.feature_ids.clone(),
        columns,
    })
}

/// Clamps to the training bounds and z-scores with training moments.
/// Applying this twice is a pipeline error.
pub fn transform(rows: &FeatureMatrix, stats: &ColumnStats) -> Result<FeatureMatrix> {
    if rows.standardized {
        return Err(Error::Param("feature matrix is already standardized".into()));
    }
    let per_col: Vec<&ColumnStat> = rows
        .feature_ids
        .iter()
        .map(|&id| {
            stats
                .get(id)
                .ok_or_else(|| Error::Param(format!("no column statistics for feature {id}")))
        })
        .collect::<Result<_>>()?;
    let mut out = rows.clone();
    for r in &mut out.rows {
        for (v, s) in r.values.iter_mut().zip(&per_col) {
            *v = s.apply(*v);
        }
    }
    out.standardized = true;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub train_size: usize,
    pub test_size: usize,
    /// Label proportions in `Label::ALL` order.
    pub ratio: [f64; 3],
    pub seed: u64,
}

impl SamplingPlan {
    pub fn balanced(train_size: usize, test_size: usize, seed: u64) -> Self {
        SamplingPlan {
            train_size,
            test_size,
            ratio: [1.0 / 3.0; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_size == 0 {
            return Err(Error::Param("train size must be positive".into()));
        }
        if self.ratio.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Param(format!("invalid label ratio {:?}", self.ratio)));
        }
        let sum: f64 = self.ratio.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!("label ratio sums to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Independent 64-bit seed for sub-stream `stream` of `master` (splitmix64).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-class counts by the largest-remainder method. Equal remainders go to
/// classes earlier in `Label::ALL`.
pub fn class_quotas(total: usize, ratio: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratio.iter().map(|r| r * total as f64).collect();
    let mut quotas = [0usize; 3];
    for (q, e) in quotas.iter_mut().zip(&exact) {
        *q = e.floor() as usize;
    }
    let assigned: usize = quotas.iter().sum();
    let mut order = [0usize, 1, 2];
    // Stable sort keeps class order among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        quotas[c] += 1;
    }
    quotas
}

/// Draws a label-stratified subset of `eligible` (indices into `labels`).
/// Output is sorted.
pub fn draw_stratified(
    labels: &[Label],
    eligible: &[usize],
    quotas: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; 3] = Default::default();
    for &i in eligible {
        by_class[labels[i].index()].push(i);
    }
    for (class, pool) in Label::ALL.iter().zip(&by_class) {
        if pool.len() < quotas[class.index()] {
            return Err(Error::Shortage {
                class: *class,
                available: pool.len(),
                required: quotas[class.index()],
            });
        }
    }
    let mut out = Vec::with_capacity(quotas.iter().sum());
    for (pool, &q) in by_class.iter().zip(&quotas) {
        out.extend(index::sample(rng, pool.len(), q).into_iter().map(|j| pool[j]));
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified training draw, then a uniform test draw from the rows left.
pub fn stratified_sample(labels: &[Label], plan: &SamplingPlan) -> Result<Split> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let all: Vec<usize> = (0..labels.len()).collect();
    let train = draw_stratified(labels, &all, class_quotas(plan.train_size, &plan.ratio), &mut rng)?;
    let mut in_train = vec![false; labels.len()];
    for &i in &train {
        in_train[i] = true;
    }
    let rest: Vec<usize> = all.into_iter().filter(|&i| !in_train[i]).collect();
    if rest.len() < plan.test_size {
        return Err(Error::Param(format!(
            "only {} rows remain for a test set of {}",
            rest.len(),
            plan.test_size
        )));
    }
    let mut test: Vec<usize> = index::sample(&mut rng, rest.len(), plan.test_size)
        .into_iter()
        .map(|j| rest[j])
        .collect();
    test.sort_unstable();
    Ok(Split { train, test })
}
