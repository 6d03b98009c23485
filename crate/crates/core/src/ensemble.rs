//! Sampling ensembles: base learners fit on stratified random subsets of a
//! training pool, combined by plurality vote.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};
use crate::learners::{LearnerSpec, TrainedModel};
use crate::preprocess::{class_quotas, derive_seed, draw_stratified, ColumnStats, SamplingPlan};
use crate::windowing::Label;

const ENSEMBLE_FORMAT: &str = "lobbench-ensemble";
const ENSEMBLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub seed: u64,
    /// Pool rows the member was fit on.
    pub rows: Vec<usize>,
    /// `None` when the fit failed; such members do not vote.
    pub model: Option<TrainedModel>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format: String,
    pub version: u32,
    pub feature_ids: Vec<FeatureId>,
    pub plan: SamplingPlan,
    pub members: Vec<Member>,
    pub column_stats: Option<ColumnStats>,
}

/// Per-member wall-clock fit times in seconds, kept apart from the model so
/// that fitted ensembles compare bit-identically across runs.
pub type MemberTimings = Vec<f64>;

impl EnsembleModel {
    pub fn n_failed(&self) -> usize {
        self.members.iter().filter(|m| m.model.is_none()).count()
    }

    pub fn n_unconverged(&self) -> usize {
        self.members
            .iter()
            .filter_map(|m| m.model.as_ref())
            .filter(|m| !m.converged)
            .count()
    }

    pub fn voters(&self) -> impl Iterator<Item = &TrainedModel> {
        self.members.iter().filter_map(|m| m.model.as_ref())
    }

    pub fn with_column_stats(mut self, stats: ColumnStats) -> Self {
        self.column_stats = Some(stats);
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EnsembleModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: EnsembleModel = serde_json::from_str(&text)?;
        if m.format != ENSEMBLE_FORMAT {
            return Err(Error::Param(format!("{} is not an ensemble file", path.display())));
        }
        if m.version != ENSEMBLE_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: ENSEMBLE_VERSION,
            });
        }
        Ok(m)
    }
}

/// Fits `n_members` learners, member `i` on a stratified draw of
/// `plan.train_size` pool rows seeded by `derive_seed(plan.seed, i)`.
pub fn ensemble_fit(
    pool: &FeatureMatrix,
    n_members: usize,
    plan: &SamplingPlan,
    learner: &LearnerSpec,
) -> Result<(EnsembleModel, MemberTimings)> {
    if n_members == 0 {
        return Err(Error::Param("an ensemble needs at least one member".into()));
    }
    plan.validate()?;
    let labels = pool.labels();
    let eligible: Vec<usize> = (0..pool.len()).collect();
    let quotas = class_quotas(plan.train_size, &plan.ratio);

    let draws: Vec<(u64, Vec<usize>)> = (0..n_members as u64)
        .map(|i| {
            let seed = derive_seed(plan.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            draw_stratified(&labels, &eligible, quotas, &mut rng).map(|rows| (seed, rows))
        })
        .collect::<Result<_>>()?;

    let fitted: Vec<(Member, f64)> = draws
        .into_par_iter()
        .map(|(seed, rows)| {
            let start = Instant::now();
            let result = learner.fit(&pool.subset(&rows), seed);
            let secs = start.elapsed().as_secs_f64();
            let member = match result {
                Ok(model) => Member {
                    seed,
                    rows,
                    model: Some(model),
                    failure: None,
                },
                Err(e) => Member {
                    seed,
                    rows,
                    model: None,
                    failure: Some(e.to_string()),
                },
            };
            (member, secs)
        })
        .collect();
    let (members, timings): (Vec<Member>, Vec<f64>) = fitted.into_iter().unzip();
    let failed = members.iter().filter(|m| m.model.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {n_members} ensemble members failed to fit");
    }
    Ok((
        EnsembleModel {
            format: ENSEMBLE_FORMAT.to_string(),
            version: ENSEMBLE_VERSION,
            feature_ids: pool.feature_ids.clone(),
            plan: plan.clone(),
            members,
            column_stats: None,
        },
        timings,
    ))
}

/// Plurality vote. Ties among the top-voted classes go to the larger summed
/// member score, then to the earlier class in `Label::ALL`.
pub fn vote(ballots: &[(Label, [f64; 3])]) -> Option<Label> {
    if ballots.is_empty() {
        return None;
    }
    let mut counts = [0usize; 3];
    let mut sums = [0.0f64; 3];
    for (label, scores) in ballots {
        counts[label.index()] += 1;
        for c in 0..3 {
            sums[c] += scores[c];
        }
    }
    let mut best = 0;
    for c in 1..3 {
        if counts[c] > counts[best] || (counts[c] == counts[best] && sums[c] > sums[best]) {
            best = c;
        }
    }
    Some(Label::ALL[best])
}

pub fn ensemble_predict(model: &EnsembleModel, rows: &FeatureMatrix) -> Result<Vec<Label>> {
    let voters: Vec<&TrainedModel> = model.voters().collect();
    if voters.is_empty() {
        return Err(Error::Fit("ensemble has no usable members".into()));
    }
    for v in &voters {
        v.check_features(rows)?;
    }
    Ok(rows
        .rows
        .par_iter()
        .map(|r| {
            let ballots: Vec<(Label, [f64; 3])> = voters.iter().map(|m| m.predict_one(&r.values)).collect();
            vote(&ballots).expect("non-empty ballots")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;
    use crate::learners::{predict, EnetGrid, EnetParams};
    use proptest::prelude::*;
    use Label::*;

    fn pool(n: usize) -> FeatureMatrix {
        let mut m = FeatureMatrix::new(vec![FeatureId::Var(1), FeatureId::Var(2)]);
        for i in 0..n {
            let label = Label::ALL[i % 3];
            let c = label.index() as f64 - 1.0;
            let noise = ((i * 37 % 17) as f64 - 8.0) / 10.0;
            m.rows.push(FeatureRow {
                day: 0,
                window_index: i,
                label,
                values: vec![c + noise, -c + 0.5 * noise],
            });
        }
        m.standardized = true;
        m
    }

    fn learner() -> LearnerSpec {
        LearnerSpec::Enet {
            grid: EnetGrid::single(1e-2, 0.5),
            folds: 5,
            params: EnetParams::default(),
        }
    }

    #[test]
    fn vote_examples() {
        let s = [0.0; 3];
        let mut b = vec![(Upwards, s); 60];
        b.extend(vec![(Downwards, s); 30]);
        b.extend(vec![(Stationary, s); 10]);
        assert_eq!(vote(&b), Some(Upwards));
        assert_eq!(vote(&[(Upwards, s), (Downwards, s)]), Some(Downwards));
        let tilted = [(Upwards, [0.0, 0.0, 1.0]), (Downwards, [0.2, 0.0, 0.0])];
        assert_eq!(vote(&tilted), Some(Upwards));
        assert_eq!(vote(&[]), None);
    }

    #[test]
    fn singleton_matches_member() {
        let p = pool(90);
        let plan = SamplingPlan::balanced(30, 0, 7);
        let (ens, timings) = ensemble_fit(&p, 1, &plan, &learner()).unwrap();
        assert_eq!(timings.len(), 1);
        let member = ens.members[0].model.as_ref().unwrap();
        assert_eq!(ensemble_predict(&ens, &p).unwrap(), predict(member, &p).unwrap());
    }

    #[test]
    fn master_seed_determines_everything() {
        let p = pool(120);
        let plan = SamplingPlan::balanced(45, 0, 11);
        let (a, _) = ensemble_fit(&p, 5, &plan, &learner()).unwrap();
        let (b, _) = ensemble_fit(&p, 5, &plan, &learner()).unwrap();
        assert_eq!(a, b);
        let (c, _) = ensemble_fit(&p, 5, &SamplingPlan { seed: 12, ..plan }, &learner()).unwrap();
        assert_ne!(a.members[0].rows, c.members[0].rows);
        for m in &a.members {
            let labels: Vec<Label> = m.rows.iter().map(|&i| p.rows[i].label).collect();
            for c in Label::ALL {
                assert_eq!(labels.iter().filter(|&&l| l == c).count(), 15);
            }
        }
    }

    #[test]
    fn shortage_names_class() {
        let p = pool(30);
        let plan = SamplingPlan::balanced(60, 0, 1);
        match ensemble_fit(&p, 2, &plan, &learner()) {
            Err(Error::Shortage { class, .. }) => assert_eq!(class, Downwards),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failed_members_do_not_vote() {
        let p = pool(90);
        let plan = SamplingPlan::balanced(30, 0, 3);
        let (mut ens, _) = ensemble_fit(&p, 3, &plan, &learner()).unwrap();
        let before = ensemble_predict(&ens, &p).unwrap();
        ens.members.push(Member {
            seed: 0,
            rows: vec![],
            model: None,
            failure: Some("forced".into()),
        });
        assert_eq!(ens.n_failed(), 1);
        assert_eq!(ensemble_predict(&ens, &p).unwrap(), before);
        ens.members.retain(|m| m.model.is_none());
        assert!(matches!(ensemble_predict(&ens, &p), Err(Error::Fit(_))));
    }

    #[test]
    fn duplicated_members_leave_predictions_unchanged() {
        let p = pool(90);
        let plan = SamplingPlan::balanced(30, 0, 5);
        let (mut ens, _) = ensemble_fit(&p, 3, &plan, &learner()).unwrap();
        let before = ensemble_predict(&ens, &p).unwrap();
        let copy = ens.members.clone();
        ens.members.extend(copy);
        assert_eq!(ensemble_predict(&ens, &p).unwrap(), before);
    }

    #[test]
    fn file_round_trip() {
        let p = pool(60);
        let (ens, _) = ensemble_fit(&p, 2, &SamplingPlan::balanced(30, 0, 2), &learner()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.json");
        ens.save(&path).unwrap();
        assert_eq!(EnsembleModel::load(&path).unwrap(), ens);
    }

    fn ballot() -> impl Strategy<Value = (Label, [f64; 3])> {
        (0usize..3, prop::array::uniform3(-2i32..3)).prop_map(|(l, s)| (Label::ALL[l], s.map(|v| v as f64)))
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(mut b in prop::collection::vec(ballot(), 1..12), k in 0usize..12) {
            let v = vote(&b);
            let k = k % b.len();
            b.rotate_left(k);
            b.reverse();
            prop_assert_eq!(vote(&b), v);
        }
    }
}
