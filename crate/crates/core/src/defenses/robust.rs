//! Baseline robust aggregation rules.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::flcore::{fedavg_aggregate, ClientUpdate};
use crate::nn::ParamVector;
use crate::seed;

fn check_aligned(updates: &[ClientUpdate]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Empty("aggregation needs at least one update".into()))?;
    for u in &updates[1..] {
        first.params.check_aligned(&u.params)?;
    }
    Ok(first.params.len())
}

/// Krum score of every update: the sum of its `n − f − 2` smallest squared
/// distances to the other updates.
pub fn krum_scores(updates: &[ClientUpdate], f: usize) -> Vec<f64> {
    let n = updates.len();
    let neighbours = n.saturating_sub(f + 2);
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = updates[i].params.squared_distance(&updates[j].params);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            row.sort_by(f64::total_cmp);
            row[..neighbours].iter().sum()
        })
        .collect()
}

/// Position (in `updates`) of the Krum choice; ties go to the lowest client id.
pub fn krum_index(updates: &[ClientUpdate], f: usize) -> Result<usize> {
    check_aligned(updates)?;
    if updates.len() < f + 3 {
        return Err(Error::InvalidArgument(format!(
            "krum needs n ≥ f + 3 (n = {}, f = {f})",
            updates.len()
        )));
    }
    let scores = krum_scores(updates, f);
    let best = (0..updates.len())
        .min_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(updates[a].client.cmp(&updates[b].client))
        })
        .expect("non-empty");
    Ok(best)
}

pub fn krum_select(updates: &[ClientUpdate], f: usize) -> Result<ParamVector> {
    Ok(updates[krum_index(updates, f)?].params.clone())
}

/// Positions (in `updates`) chosen by `m` rounds of Krum, each round
/// removing the previous choice from the pool.
pub fn multi_krum_indices(updates: &[ClientUpdate], f: usize, m: usize) -> Result<Vec<usize>> {
    check_aligned(updates)?;
    if m == 0 || updates.len() < f + 2 + m {
        return Err(Error::InvalidArgument(format!(
            "multi-krum needs m ≥ 1 and n ≥ f + 2 + m (n = {}, f = {f}, m = {m})",
            updates.len()
        )));
    }
    let mut pool: Vec<usize> = (0..updates.len()).collect();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let sub: Vec<ClientUpdate> = pool.iter().map(|&i| updates[i].clone()).collect();
        let k = krum_index(&sub, f)?;
        chosen.push(pool.remove(k));
    }
    Ok(chosen)
}

/// Equal-weight average of the `m` Multi-Krum selections.
pub fn multi_krum(updates: &[ClientUpdate], f: usize, m: usize) -> Result<ParamVector> {
    let chosen = multi_krum_indices(updates, f, m)?;
    let picked: Vec<ClientUpdate> = chosen
        .iter()
        .map(|&i| ClientUpdate {
            samples: 1,
            ..updates[i].clone()
        })
        .collect();
    fedavg_aggregate(&picked)
}

fn per_coordinate(updates: &[ClientUpdate], mut f: impl FnMut(&mut [f64]) -> f64) -> Result<ParamVector> {
    let dim = check_aligned(updates)?;
    let mut column = vec![0.0; updates.len()];
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        for (c, u) in column.iter_mut().zip(updates) {
            *c = u.params.as_slice()[i];
        }
        column.sort_by(f64::total_cmp);
        out.push(f(&mut column));
    }
    Ok(ParamVector::new(out))
}

/// Per-coordinate median; even counts average the two middle values.
pub fn coordinate_median(updates: &[ClientUpdate]) -> Result<ParamVector> {
    per_coordinate(updates, |sorted| {
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    })
}

/// Per-coordinate mean after dropping the `k` largest and `k` smallest values.
pub fn trimmed_mean(updates: &[ClientUpdate], k: usize) -> Result<ParamVector> {
    let n = updates.len();
    if n <= 2 * k {
        return Err(Error::InvalidArgument(format!(
            "trimmed mean needs n > 2k (n = {n}, k = {k})"
        )));
    }
    per_coordinate(updates, |sorted| {
        let kept = &sorted[k..n - k];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

/// Robust learning rate: per coordinate the server step is `+lr` when the
/// absolute sum of update signs reaches `theta`, `−lr` otherwise.
pub fn rlr_aggregate(
    g_old: &ParamVector,
    updates: &[ClientUpdate],
    theta: f64,
    lr: f64,
) -> Result<ParamVector> {
    check_aligned(updates)?;
    g_old.check_aligned(&updates[0].params)?;
    if !(theta >= 0.0) {
        return Err(Error::InvalidArgument(format!("theta must be ≥ 0, got {theta}")));
    }
    let n = updates.len() as f64;
    let base = g_old.as_slice();
    let out = (0..g_old.len())
        .map(|i| {
            let mut sign_sum = 0.0_f64;
            let mut delta_sum = 0.0;
            for u in updates {
                let d = u.params.as_slice()[i] - base[i];
                sign_sum += if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                delta_sum += d;
            }
            let step = if sign_sum.abs() >= theta { lr } else { -lr };
            base[i] + step * (delta_sum / n)
        })
        .collect();
    Ok(ParamVector::new(out))
}

/// FedAvg plus independent `N(0, σ²)` noise on every coordinate.
pub fn dp_aggregate(updates: &[ClientUpdate], sigma: f64, seed: u64) -> Result<ParamVector> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be ≥ 0, got {sigma}")));
    }
    let mut avg = fedavg_aggregate(updates)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidArgument(format!("gaussian noise: {e}")))?;
        let mut rng = seed::rng(seed);
        for v in avg.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(avg)
}
