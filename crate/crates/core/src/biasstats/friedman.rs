use serde::{Deserialize, Serialize};

use super::{ScoreTable, StatsError, TrialKey};
use crate::cohort::Subgroup;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub q: f64,
    pub df: usize,
    pub p: f64,
    /// Complete blocks used.
    pub blocks: usize,
    /// Blocks dropped because some member had no retained score.
    pub dropped: usize,
}

/// Upper tail of the chi-square distribution, `Q(df/2, x/2)`.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    assert!(df >= 1, "chi-square needs df >= 1");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test on complete blocks (`rows`, each with one score per
/// treatment). Ties get midranks and the statistic is tie-corrected.
pub fn friedman_matrix(rows: &[Vec<f64>]) -> Result<FriedmanResult, StatsError> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(StatsError::InvalidArgument(format!("{k} treatments, need at least 2")));
    }
    if n < 2 {
        return Err(StatsError::TooFewBlocks { blocks: n, dropped: 0 });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch(bad.len(), k));
    }

    let mut rank_sums = vec![0.0; k];
    let mut sum_sq = 0.0;
    for row in rows {
        for (j, r) in midranks(row).into_iter().enumerate() {
            rank_sums[j] += r;
            sum_sq += r * r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let expected = nf * (kf + 1.0) / 2.0;
    let between: f64 = rank_sums.iter().map(|r| (r - expected).powi(2)).sum();
    let denom = sum_sq - nf * kf * (kf + 1.0).powi(2) / 4.0;
    let q = if denom <= 1e-12 * sum_sq {
        0.0
    } else {
        (kf - 1.0) * between / denom
    };
    Ok(FriedmanResult {
        q,
        df: k - 1,
        p: chi_square_sf(q, k - 1),
        blocks: n,
        dropped: 0,
    })
}

/// Friedman test over a subgroup: treatments are its members, blocks are
/// trial keys where every member has a retained score.
pub fn friedman(table: &ScoreTable, subgroup: &Subgroup) -> Result<FriedmanResult, StatsError> {
    use std::collections::{BTreeMap, BTreeSet};

    let members: Vec<&str> = subgroup.characteristic_ids().collect();
    let by_member: Vec<BTreeMap<&TrialKey, f64>> = members
        .iter()
        .map(|id| {
            table
                .samples
                .get(*id)
                .into_iter()
                .flatten()
                .map(|(k, v)| (k, *v))
                .collect()
        })
        .collect();
    let all_keys: BTreeSet<&TrialKey> = by_member.iter().flat_map(|m| m.keys().copied()).collect();

    let rows: Vec<Vec<f64>> = all_keys
        .iter()
        .filter_map(|key| by_member.iter().map(|m| m.get(key).copied()).collect())
        .collect();
    let dropped = all_keys.len() - rows.len();
    if rows.len() < 2 {
        return Err(StatsError::TooFewBlocks {
            blocks: rows.len(),
            dropped,
        });
    }
    let mut result = friedman_matrix(&rows)?;
    result.dropped = dropped;
    Ok(result)
}
