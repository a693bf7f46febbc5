//! Paired percentile bootstrap over trial keys.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mab, mdb, zscores_of, ScoreTable, StatsError, TrialKey};
use crate::cohort::Cohort;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapStat {
    /// The per-characteristic point estimate (MCV or MGL).
    Point,
    ZPerChar,
    Mab,
    Mdb,
}

/// A subgroup, or one member of it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CiTarget {
    pub subgroup: String,
    pub characteristic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Widen to include `point` if needed.
    pub fn covering(self, point: f64) -> Self {
        Self {
            lo: self.lo.min(point),
            hi: self.hi.max(point),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.replicates < 100 {
            return Err(StatsError::InvalidArgument(format!(
                "B = {} replicates, need at least 100",
                self.replicates
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(StatsError::InvalidArgument(format!("level {} not in (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Replicate values per statistic. `NaN` marks a replicate in which the
/// statistic was undefined (a member lost all of its samples).
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutput {
    pub config: BootstrapConfig,
    pub point: BTreeMap<String, Vec<f64>>,
    pub z: BTreeMap<CiTarget, Vec<f64>>,
    pub mab: BTreeMap<String, Vec<f64>>,
    pub mdb: BTreeMap<String, Vec<f64>>,
}

impl BootstrapOutput {
    fn series(&self, stat: BootstrapStat, target: &CiTarget) -> Option<&Vec<f64>> {
        match stat {
            BootstrapStat::Point => self.point.get(target.characteristic.as_deref()?),
            BootstrapStat::ZPerChar => self.z.get(target),
            BootstrapStat::Mab => self.mab.get(&target.subgroup),
            BootstrapStat::Mdb => self.mdb.get(&target.subgroup),
        }
    }

    /// Percentile interval; `None` when no replicate defined the statistic.
    pub fn interval(&self, stat: BootstrapStat, target: &CiTarget) -> Option<Interval> {
        let mut values: Vec<f64> = self
            .series(stat, target)?
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let tail = (1.0 - self.config.level) / 2.0;
        Some(Interval {
            lo: percentile(&values, tail),
            hi: percentile(&values, 1.0 - tail),
        })
    }
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) if frac > 0.0 => sorted[i] + frac * (next - sorted[i]),
        _ => sorted[i],
    }
}

struct Replicate {
    point: Vec<f64>,
    z: Vec<Vec<f64>>,
    mab: Vec<f64>,
    mdb: Vec<f64>,
}

/// Run all replicates. Each replicate draws its own stream from
/// `derive_seed(seed, r)`, so results do not depend on thread count.
pub fn bootstrap_replicates(
    table: &ScoreTable,
    cohort: &Cohort,
    config: BootstrapConfig,
) -> Result<BootstrapOutput, StatsError> {
    config.validate()?;
    let keys: Vec<&TrialKey> = table.keys().into_iter().collect();
    if keys.is_empty() {
        return Err(StatsError::NoData("score table".into()));
    }
    let key_index: BTreeMap<&TrialKey, usize> =
        keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let chars: Vec<&str> = cohort.characteristics().map(|c| c.id.as_str()).collect();
    let char_index: BTreeMap<&str, usize> =
        chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    // Per characteristic: (key index, value) pairs.
    let columns: Vec<Vec<(usize, f64)>> = chars
        .iter()
        .map(|id| {
            table
                .samples
                .get(*id)
                .into_iter()
                .flatten()
                .map(|(k, v)| (key_index[k], *v))
                .collect()
        })
        .collect();
    let groups: Vec<Vec<usize>> = cohort
        .subgroups
        .iter()
        .map(|g| g.characteristic_ids().map(|id| char_index[id]).collect())
        .collect();

    let n_keys = keys.len();
    let reps: Vec<Replicate> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, r as u64));
            let mut counts = vec![0u32; n_keys];
            for _ in 0..n_keys {
                counts[rng.random_range(0..n_keys)] += 1;
            }
            let point: Vec<f64> = columns
                .iter()
                .map(|col| {
                    let (sum, n) = col.iter().fold((0.0, 0u64), |(s, n), &(k, v)| {
                        let c = counts[k];
                        (s + c as f64 * v, n + c as u64)
                    });
                    if n == 0 {
                        f64::NAN
                    } else {
                        sum / n as f64
                    }
                })
                .collect();
            let mut z = Vec::with_capacity(groups.len());
            let mut mabs = Vec::with_capacity(groups.len());
            let mut mdbs = Vec::with_capacity(groups.len());
            for members in &groups {
                let values: Vec<f64> = members.iter().map(|&i| point[i]).collect();
                if values.iter().any(|v| v.is_nan()) {
                    z.push(vec![f64::NAN; members.len()]);
                    mabs.push(f64::NAN);
                    mdbs.push(f64::NAN);
                    continue;
                }
                match zscores_of(&values) {
                    Ok(zs) => {
                        mabs.push(mab(&zs));
                        mdbs.push(mdb(&zs));
                        z.push(zs);
                    }
                    Err(_) => {
                        z.push(vec![0.0; members.len()]);
                        mabs.push(0.0);
                        mdbs.push(0.0);
                    }
                }
            }
            Replicate {
                point,
                z,
                mab: mabs,
                mdb: mdbs,
            }
        })
        .collect();

    let mut out = BootstrapOutput {
        config,
        point: BTreeMap::new(),
        z: BTreeMap::new(),
        mab: BTreeMap::new(),
        mdb: BTreeMap::new(),
    };
    for (ci, id) in chars.iter().enumerate() {
        out.point
            .insert(id.to_string(), reps.iter().map(|r| r.point[ci]).collect());
    }
    for (gi, g) in cohort.subgroups.iter().enumerate() {
        for (mi, id) in g.characteristic_ids().enumerate() {
            let target = CiTarget {
                subgroup: g.id.clone(),
                characteristic: Some(id.to_string()),
            };
            out.z.insert(target, reps.iter().map(|r| r.z[gi][mi]).collect());
        }
        out.mab
            .insert(g.id.clone(), reps.iter().map(|r| r.mab[gi]).collect());
        out.mdb
            .insert(g.id.clone(), reps.iter().map(|r| r.mdb[gi]).collect());
    }
    Ok(out)
}

/// Percentile intervals for one statistic over every target it applies to.
pub fn bootstrap_ci(
    table: &ScoreTable,
    cohort: &Cohort,
    stat: BootstrapStat,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BTreeMap<CiTarget, Interval>, StatsError> {
    let out = bootstrap_replicates(
        table,
        cohort,
        BootstrapConfig {
            replicates,
            level,
            seed,
        },
    )?;
    let targets: BTreeSet<CiTarget> = match stat {
        BootstrapStat::Point | BootstrapStat::ZPerChar => out.z.keys().cloned().collect(),
        BootstrapStat::Mab | BootstrapStat::Mdb => cohort
            .subgroups
            .iter()
            .map(|g| CiTarget {
                subgroup: g.id.clone(),
                characteristic: None,
            })
            .collect(),
    };
    Ok(targets
        .into_iter()
        .filter_map(|t| out.interval(stat, &t).map(|i| (t, i)))
        .collect())
}
