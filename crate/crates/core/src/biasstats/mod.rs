//! Bias statistics: mean choice value / mean grade level per characteristic,
//! subgroup z-normalization, mean absolute bias (MAB), maximum difference
//! bias (MDB), paired bootstrap intervals, and the Friedman test.
//!
//! Z-scores use the population standard deviation (divide by n): the
//! subgroup is the complete, fixed set of characteristics, not a sample.

mod bootstrap;
mod friedman;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Subgroup};
use crate::taskrunner::{GenerationRecord, GenerationResults, OutcomeKind, RankingResults};

pub use bootstrap::{
    bootstrap_ci, bootstrap_replicates, percentile, BootstrapConfig, BootstrapOutput,
    BootstrapStat, CiTarget, Interval,
};
pub use friedman::{chi_square_sf, friedman, friedman_matrix, midranks, FriedmanResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no retained data for {0}")]
    NoData(String),
    #[error("zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("too few complete blocks: {blocks} usable, {dropped} dropped")]
    TooFewBlocks { blocks: usize, dropped: usize },
    #[error("subgroup member '{0}' has no point estimate")]
    MissingMember(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetricKind {
    Mcv,
    Mgl,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Mcv => "MCV",
            MetricKind::Mgl => "MGL",
        }
    }
}

/// Pairing unit: the same key across characteristics denotes the same
/// subject (and ordering), so resampling and blocking can pair on it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialKey {
    pub unit: String,
    pub ordering: u32,
}

/// Retained per-trial scores by characteristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub kind: MetricKind,
    pub samples: BTreeMap<String, Vec<(TrialKey, f64)>>,
    pub trials: BTreeMap<String, usize>,
    pub full_refusals: BTreeMap<String, usize>,
}

impl ScoreTable {
    pub fn empty(kind: MetricKind, cohort: &Cohort) -> Self {
        let ids = || cohort.characteristics().map(|c| c.id.clone());
        Self {
            kind,
            samples: ids().map(|id| (id, Vec::new())).collect(),
            trials: ids().map(|id| (id, 0)).collect(),
            full_refusals: ids().map(|id| (id, 0)).collect(),
        }
    }

    pub fn push(&mut self, characteristic: &str, key: TrialKey, value: f64) {
        self.samples
            .entry(characteristic.to_string())
            .or_default()
            .push((key, value));
    }

    pub fn keys(&self) -> BTreeSet<&TrialKey> {
        self.samples.values().flatten().map(|(k, _)| k).collect()
    }

    pub fn values(&self, characteristic: &str) -> impl Iterator<Item = f64> + '_ {
        self.samples
            .get(characteristic)
            .into_iter()
            .flatten()
            .map(|(_, v)| *v)
    }

    /// Mean score per characteristic with at least one retained sample.
    pub fn point_estimates(&self) -> BTreeMap<String, f64> {
        self.samples
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(id, v)| (id.clone(), mean(v.iter().map(|(_, x)| *x))))
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// MCV table from ranking results: chosen levels only; full refusals are
/// counted and excluded, unparseable trials are dropped.
pub fn ranking_table(results: &RankingResults, cohort: &Cohort) -> ScoreTable {
    let mut t = ScoreTable::empty(MetricKind::Mcv, cohort);
    for r in &results.records {
        let id = &r.spec.characteristic_id;
        *t.trials.entry(id.clone()).or_insert(0) += 1;
        match (r.outcome.kind, r.outcome.level) {
            (OutcomeKind::Chosen, Some(level)) => t.push(
                id,
                TrialKey {
                    unit: r.spec.subject_id.clone(),
                    ordering: r.spec.ordering_index,
                },
                level as f64,
            ),
            (OutcomeKind::FullRefusal, _) => *t.full_refusals.entry(id.clone()).or_insert(0) += 1,
            _ => {}
        }
    }
    t
}

/// MGL table from generation results: one TGL per scored record.
pub fn generation_table(results: &GenerationResults, cohort: &Cohort) -> ScoreTable {
    let mut t = ScoreTable::empty(MetricKind::Mgl, cohort);
    for r in &results.records {
        *t.trials.entry(r.characteristic_id.clone()).or_insert(0) += 1;
        if let Some(g) = r.grade {
            t.push(
                &r.characteristic_id,
                TrialKey {
                    unit: r.topic.clone(),
                    ordering: 0,
                },
                g.tgl,
            );
        }
    }
    t
}

/// Mean chosen level over retained trials of one characteristic.
pub fn mcv(results: &RankingResults, characteristic: &str) -> Result<f64, StatsError> {
    let levels: Vec<f64> = results
        .records
        .iter()
        .filter(|r| r.spec.characteristic_id == characteristic)
        .filter(|r| r.outcome.kind == OutcomeKind::Chosen)
        .filter_map(|r| r.outcome.level)
        .map(f64::from)
        .collect();
    if levels.is_empty() {
        return Err(StatsError::NoData(characteristic.into()));
    }
    Ok(mean(levels.into_iter()))
}

/// Mean total grade level of one characteristic's generations.
pub fn mgl(records: &[GenerationRecord], characteristic: &str) -> Result<f64, StatsError> {
    let grades: Vec<f64> = records
        .iter()
        .filter(|r| r.characteristic_id == characteristic)
        .filter_map(|r| r.grade.map(|g| g.tgl))
        .collect();
    if grades.is_empty() {
        return Err(StatsError::NoData(characteristic.into()));
    }
    Ok(mean(grades.into_iter()))
}

/// `(F - mean) / population sd` over the members, in input order.
pub fn zscores_of(points: &[f64]) -> Result<Vec<f64>, StatsError> {
    if points.is_empty() {
        return Err(StatsError::InvalidArgument("empty subgroup".into()));
    }
    let n = points.len() as f64;
    let mu = points.iter().sum::<f64>() / n;
    let var = points.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = points.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if sd.is_nan() || sd <= 1e-12 * scale {
        return Err(StatsError::ZeroVariance);
    }
    // Two distinct points sit exactly one sd either side of their mean;
    // dividing would leave a rounding residue of a few ulps.
    if let [a, b] = points {
        return Ok(vec![(a - b).signum(), (b - a).signum()]);
    }
    Ok(points.iter().map(|x| (x - mu) / sd).collect())
}

/// Z-scores for every member of `subgroup`, in subgroup order.
pub fn zscores(
    points: &BTreeMap<String, f64>,
    subgroup: &Subgroup,
) -> Result<Vec<(String, f64)>, StatsError> {
    let values = subgroup
        .characteristic_ids()
        .map(|id| {
            points
                .get(id)
                .copied()
                .ok_or_else(|| StatsError::MissingMember(id.into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let z = zscores_of(&values)?;
    Ok(subgroup.characteristic_ids().map(String::from).zip(z).collect())
}

/// Mean of |z|.
pub fn mab(z: &[f64]) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64
}

/// max(z) - min(z).
pub fn mdb(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = z.iter().copied().fold(f64::INFINITY, f64::min);
    if z.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Z, MAB and MDB for one subgroup. A zero-variance subgroup is reported
/// as degenerate with all z = 0 and MAB = MDB = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupBias {
    pub z: Vec<(String, f64)>,
    pub mab: f64,
    pub mdb: f64,
    pub degenerate: bool,
}

pub fn subgroup_bias(
    points: &BTreeMap<String, f64>,
    subgroup: &Subgroup,
) -> Result<SubgroupBias, StatsError> {
    match zscores(points, subgroup) {
        Ok(z) => {
            let values: Vec<f64> = z.iter().map(|(_, v)| *v).collect();
            Ok(SubgroupBias {
                mab: mab(&values),
                mdb: mdb(&values),
                z,
                degenerate: false,
            })
        }
        Err(StatsError::ZeroVariance) => Ok(SubgroupBias {
            z: subgroup.characteristic_ids().map(|id| (id.to_string(), 0.0)).collect(),
            mab: 0.0,
            mdb: 0.0,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::InvalidArgument("need at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Article, Characteristic};
    use proptest::prelude::*;

    fn subgroup(ids: &[&str]) -> Subgroup {
        Subgroup {
            id: "g".into(),
            name: "G".into(),
            is_reference: false,
            characteristics: ids
                .iter()
                .map(|id| Characteristic {
                    id: id.to_string(),
                    phrase: id.to_string(),
                    article: Article::A,
                    subgroup_id: "g".into(),
                })
                .collect(),
        }
    }

    fn points(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn zscore_examples() {
        let z = zscores(&points(&[("a", 2.0), ("b", 4.0)]), &subgroup(&["a", "b"])).unwrap();
        assert_eq!(z, vec![("a".into(), -1.0), ("b".into(), 1.0)]);

        let z = zscores(&points(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]), &subgroup(&["a", "b", "c"])).unwrap();
        let expect = (3.0f64 / 2.0).sqrt(); // 1 / sqrt(2/3)
        assert!((z[0].1 + expect).abs() < 1e-12);
        assert!(z[1].1.abs() < 1e-12);
        assert!((z[2].1 - expect).abs() < 1e-12);

        assert_eq!(
            zscores(&points(&[("a", 5.0), ("b", 5.0)]), &subgroup(&["a", "b"])),
            Err(StatsError::ZeroVariance)
        );
        assert_eq!(
            zscores(&points(&[("a", 5.0)]), &subgroup(&["a", "b"])),
            Err(StatsError::MissingMember("b".into()))
        );
    }

    #[test]
    fn mab_mdb_examples() {
        assert_eq!(mab(&[-1.0, 1.0]), 1.0);
        assert_eq!(mdb(&[-1.0, 1.0]), 2.0);
        let r = 1.224744871391589;
        assert!((mab(&[-r, 0.0, r]) - 0.816496580927726).abs() < 1e-12);
        assert!((mdb(&[-r, 0.0, r]) - 2.449489742783178).abs() < 1e-12);
        assert_eq!(mdb(&[0.0]), 0.0);
    }

    #[test]
    fn degenerate_subgroup_reports_zero() {
        let b = subgroup_bias(&points(&[("a", 3.0), ("b", 3.0)]), &subgroup(&["a", "b"])).unwrap();
        assert!(b.degenerate);
        assert_eq!((b.mab, b.mdb), (0.0, 0.0));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_r(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson_r(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]), Err(StatsError::ZeroVariance));
    }

    proptest! {
        #[test]
        fn zscores_are_standardized(values in prop::collection::vec(-50.0f64..50.0, 2..10)) {
            if let Ok(z) = zscores_of(&values) {
                let n = z.len() as f64;
                let m = z.iter().sum::<f64>() / n;
                let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() < 1e-12);
                prop_assert!((sd - 1.0).abs() < 1e-12);
                prop_assert!(mab(&z) <= z.iter().fold(0.0f64, |a, v| a.max(v.abs())) + 1e-12);
                prop_assert!(z.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= mdb(&z) + 1e-12);
            }
        }

        #[test]
        fn affine_invariance(values in prop::collection::vec(1.0f64..5.0, 2..8), alpha in 0.1f64..10.0, beta in -10.0f64..10.0) {
            if let Ok(z) = zscores_of(&values) {
                let moved: Vec<f64> = values.iter().map(|v| alpha * v + beta).collect();
                let z2 = zscores_of(&moved).unwrap();
                for (a, b) in z.iter().zip(&z2) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
