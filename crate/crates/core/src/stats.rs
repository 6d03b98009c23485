//! Classification metrics, the one-sided Wilcoxon signed-rank test,
//! Benjamini-Hochberg adjustment and elastic-net selection frequencies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureId;
use crate::learners::EnetModel;
use crate::windowing::Label;

/// Largest sample size tested by exact enumeration.
pub const EXACT_CUTOFF: usize = 25;
pub const DEFAULT_IMPORTANCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// `table[actual][predicted]`.
    pub table: [[u64; 3]; 3],
}

impl ConfusionCounts {
    pub fn tally(predicted: &[Label], actual: &[Label]) -> Result<ConfusionCounts> {
        if predicted.len() != actual.len() {
            return Err(Error::Param(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut table = [[0u64; 3]; 3];
        for (p, a) in predicted.iter().zip(actual) {
            table[a.index()][p.index()] += 1;
        }
        Ok(ConfusionCounts { table })
    }

    pub fn total(&self) -> u64 {
        self.table.iter().flatten().sum()
    }

    pub fn tp(&self, c: Label) -> u64 {
        self.table[c.index()][c.index()]
    }

    pub fn fp(&self, c: Label) -> u64 {
        (0..3).map(|a| self.table[a][c.index()]).sum::<u64>() - self.tp(c)
    }

    pub fn fn_(&self, c: Label) -> u64 {
        self.table[c.index()].iter().sum::<u64>() - self.tp(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced a value to 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionCounts,
    /// Indexed by `Label::index()`.
    pub per_class: [ClassMetrics; 3],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn class_metrics(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let (precision, u1) = ratio(tp, tp + fp);
    let (recall, u2) = ratio(tp, tp + fn_);
    let (f1, u3) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        undefined: u1 || u2 || u3,
    }
}

pub fn score(predicted: &[Label], actual: &[Label]) -> Result<MetricsReport> {
    if actual.is_empty() {
        return Err(Error::Param("cannot score an empty prediction set".into()));
    }
    let confusion = ConfusionCounts::tally(predicted, actual)?;
    let per_class = Label::ALL.map(|c| class_metrics(confusion.tp(c), confusion.fp(c), confusion.fn_(c)));
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    Ok(MetricsReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        confusion,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    /// Sum of the ranks of positive differences.
    pub w: f64,
    /// One-sided p-value for a positive median difference.
    pub p: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Param("differences must be finite".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        log::debug!("wilcoxon: all differences are zero, p = 1");
        return Ok(WilcoxonResult {
            n: 0,
            w: 0.0,
            p: 1.0,
            exact: true,
        });
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= EXACT_CUTOFF {
        // Average ranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0u64; max + 1];
        counts[0] = 1;
        let mut reach = 0;
        for &d in &doubled {
            for s in (0..=reach).rev() {
                let c = counts[s];
                if c != 0 {
                    counts[s + d] += c;
                }
            }
            reach += d;
        }
        let target = (w * 2.0).round() as usize;
        let tail: u64 = counts[target..].iter().sum();
        let p = tail as f64 / (1u64 << n) as f64;
        return Ok(WilcoxonResult { n, w, p, exact: true });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (w - mean - 0.5) / var.sqrt();
        0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
    };
    Ok(WilcoxonResult {
        n,
        w,
        p: p.clamp(0.0, 1.0),
        exact: false,
    })
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn fdr_adjust(raw: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = raw.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Param(format!("p-value {p} outside [0, 1]")));
    }
    let m = raw.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for pos in (0..m).rev() {
        let i = order[pos];
        let v = (raw[i] * m as f64 / (pos + 1) as f64).min(1.0);
        running = running.min(v);
        // max() only guards against rounding in `raw * m / rank`.
        adjusted[i] = running.max(raw[i]);
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: FeatureId,
    pub class: Label,
    pub selected: usize,
    pub fraction: f64,
    pub high_impact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub n_models: usize,
    pub threshold: f64,
    /// Feature-major, classes in label order.
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn entry(&self, feature: FeatureId, class: Label) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.feature == feature && e.class == class)
    }
}

/// Fraction of models whose one-vs-rest machine for each class carries a
/// non-zero coefficient on each feature.
pub fn importance(feature_ids: &[FeatureId], models: &[&EnetModel], threshold: f64) -> Result<ImportanceReport> {
    if models.is_empty() {
        return Err(Error::Param("importance needs at least one model".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Param(format!("threshold {threshold} outside [0, 1]")));
    }
    let p = feature_ids.len();
    let mut counts = vec![[0usize; 3]; p];
    for m in models {
        for machine in &m.machines {
            if machine.coefs.len() != p {
                return Err(Error::Param("model width does not match the feature list".into()));
            }
            for (j, &b) in machine.coefs.iter().enumerate() {
                if b != 0.0 {
                    counts[j][machine.class.index()] += 1;
                }
            }
        }
    }
    let n = models.len();
    let mut entries = Vec::with_capacity(p * 3);
    for (j, &feature) in feature_ids.iter().enumerate() {
        for class in Label::ALL {
            let selected = counts[j][class.index()];
            let fraction = selected as f64 / n as f64;
            entries.push(ImportanceEntry {
                feature,
                class,
                selected,
                fraction,
                high_impact: fraction >= threshold,
            });
        }
    }
    Ok(ImportanceReport {
        n_models: n,
        threshold,
        entries,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::enet::BinaryEnet;
    use crate::learners::EnetParams;
    use proptest::prelude::*;
    use Label::*;

    fn enumerate_p(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
        let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let w: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
        let n = nz.len();
        let mut hits = 0u64;
        for mask in 0..(1u64 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s >= w {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn perfect_predictions() {
        let y = [Downwards, Stationary, Upwards, Upwards];
        let r = score(&y, &y).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert!(r.per_class.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && !m.undefined));
    }

    #[test]
    fn hand_computed_class_metrics() {
        let m = class_metrics(3, 1, 2);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
        let half = class_metrics(1, 1, 1);
        assert_eq!(half.f1, 0.5);
    }

    #[test]
    fn zero_denominators_flagged() {
        let r = score(&[Upwards, Upwards], &[Upwards, Downwards]).unwrap();
        let stat = r.per_class[Stationary.index()];
        assert!(stat.undefined);
        assert_eq!(stat.f1, 0.0);
        assert_eq!(r.confusion.total(), 2);
        assert!(score(&[Upwards], &[]).is_err());
        assert!(score(&[], &[]).is_err());
    }

    #[test]
    fn wilcoxon_examples() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.w, r.p), (6.0, 0.125));
        let r = wilcoxon_signed_rank(&[-1.0, -2.0, -3.0]).unwrap();
        assert_eq!((r.w, r.p), (0.0, 1.0));
        let r = wilcoxon_signed_rank(&[0.0, 0.0]).unwrap();
        assert_eq!((r.n, r.p), (0, 1.0));
    }

    #[test]
    fn wilcoxon_matches_enumeration_with_ties() {
        let d = [0.5, -0.5, 1.0, 1.0, -2.0, 3.0, 0.0, 0.5];
        assert_eq!(wilcoxon_signed_rank(&d).unwrap().p, enumerate_p(&d));
    }

    #[test]
    fn normal_approximation_near_exact_at_cutoff() {
        let d: Vec<f64> = (1..=26).map(|i| if i % 4 == 0 { -(i as f64) } else { i as f64 }).collect();
        let approx = wilcoxon_signed_rank(&d).unwrap();
        assert!(!approx.exact);
        let exact = wilcoxon_signed_rank(&d[1..]).unwrap();
        assert!(exact.exact);
        assert!((approx.p - exact.p).abs() < 0.02);
    }

    #[test]
    fn fdr_examples() {
        assert_eq!(fdr_adjust(&[0.01, 0.02, 0.03]).unwrap(), vec![0.03; 3]);
        assert_eq!(fdr_adjust(&[0.2]).unwrap(), vec![0.2]);
        assert_eq!(fdr_adjust(&[0.4; 4]).unwrap(), vec![0.4; 4]);
        let adj = fdr_adjust(&[0.01, 0.04, 0.03, 0.5]).unwrap();
        assert_eq!(adj, vec![0.04, 0.04 * 4.0 / 3.0, 0.04 * 4.0 / 3.0, 0.5]);
        assert!(fdr_adjust(&[1.5]).is_err());
        assert!(fdr_adjust(&[]).unwrap().is_empty());
    }

    #[test]
    fn importance_counts() {
        let machine = |class, coefs: Vec<f64>| BinaryEnet {
            class,
            intercept: 0.0,
            coefs,
            converged: true,
            sweeps: 1,
        };
        let models: Vec<EnetModel> = (0..10)
            .map(|i| EnetModel {
                params: EnetParams::default(),
                machines: vec![
                    machine(Downwards, vec![0.0, if i < 8 { 1.0 } else { 0.0 }]),
                    machine(Stationary, vec![0.0, 0.0]),
                    machine(Upwards, vec![1.0, if i < 7 { 1.0 } else { 0.0 }]),
                ],
            })
            .collect();
        let refs: Vec<&EnetModel> = models.iter().collect();
        let ids = [FeatureId::Var(1), FeatureId::Var(2)];
        let r = importance(&ids, &refs, 0.8).unwrap();
        let e = |f, c| r.entry(f, c).unwrap().clone();
        assert_eq!(e(ids[0], Downwards).fraction, 0.0);
        assert!(e(ids[1], Downwards).high_impact);
        assert_eq!(e(ids[1], Downwards).fraction, 0.8);
        assert!(!e(ids[1], Upwards).high_impact);
        assert!(e(ids[0], Upwards).high_impact);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn exact_p_matches_enumeration(d in prop::collection::vec(-4i32..=4, 1..11)) {
            let d: Vec<f64> = d.into_iter().map(|x| x as f64 / 2.0).collect();
            prop_assert_eq!(wilcoxon_signed_rank(&d).unwrap().p, enumerate_p(&d));
        }

        #[test]
        fn mirrored_p_values_sum_to_at_least_one(d in prop::collection::vec(-50i32..50, 1..15)) {
            let neg: Vec<f64> = d.iter().map(|&x| -(x as f64)).collect();
            let pos: Vec<f64> = d.iter().map(|&x| x as f64).collect();
            let a = wilcoxon_signed_rank(&pos).unwrap().p;
            let b = wilcoxon_signed_rank(&neg).unwrap().p;
            prop_assert!(a + b >= 1.0 - 1e-12);
        }

        #[test]
        fn fdr_monotone_and_bounded(p in prop::collection::vec(0.0f64..=1.0, 1..20), i in 0usize..20, bump in 0.0f64..0.5) {
            let adj = fdr_adjust(&p).unwrap();
            for (a, r) in adj.iter().zip(&p) {
                prop_assert!(*a >= *r && *a <= 1.0);
            }
            let mut q = p.clone();
            let k = i % q.len();
            q[k] = (q[k] + bump).min(1.0);
            let adj2 = fdr_adjust(&q).unwrap();
            for (a, b) in adj.iter().zip(&adj2) {
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn fdr_permutation_equivariant(p in prop::collection::vec(0.0f64..=1.0, 1..12), rot in 0usize..12) {
            let adj = fdr_adjust(&p).unwrap();
            let k = rot % p.len();
            let mut q = p.clone();
            q.rotate_left(k);
            let mut expect = adj.clone();
            expect.rotate_left(k);
            prop_assert_eq!(fdr_adjust(&q).unwrap(), expect);
        }

        #[test]
        fn macro_f1_invariant_under_class_relabeling(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60),
            perm in 0usize..6,
        ) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let map = perms[perm];
            let pred: Vec<Label> = pairs.iter().map(|p| Label::ALL[p.0]).collect();
            let act: Vec<Label> = pairs.iter().map(|p| Label::ALL[p.1]).collect();
            let pred2: Vec<Label> = pairs.iter().map(|p| Label::ALL[map[p.0]]).collect();
            let act2: Vec<Label> = pairs.iter().map(|p| Label::ALL[map[p.1]]).collect();
            let a = score(&pred, &act).unwrap().macro_f1;
            let b = score(&pred2, &act2).unwrap().macro_f1;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
