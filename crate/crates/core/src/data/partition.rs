use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// One client's slice of the training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientShard {
    pub client: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn dirichlet(alpha: f64, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("dirichlet alpha {alpha}: {e}")))?;
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // every gamma draw underflowed (tiny alpha): put all mass on one client
        let pick = rand::Rng::random_range(rng, 0..n);
        draws = (0..n).map(|k| if k == pick { 1.0 } else { 0.0 }).collect();
    }
    Ok(draws)
}

/// Label-skewed split: for every class a proportion vector over clients is
/// drawn from `Dirichlet(alpha)` and the (shuffled) class indices are cut at
/// the rounded cumulative proportions. Empty shards are then repaired by
/// moving one sample from the largest shard (lowest client id on ties).
pub fn dirichlet_partition(
    dataset: &Dataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    if n_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if n_clients > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_clients} clients but only {} samples",
            dataset.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut by_class = vec![Vec::new(); dataset.classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for mut members in by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let props = dirichlet(alpha, n_clients, &mut rng)?;
        let n = members.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (k, p) in props.iter().enumerate() {
            cum += p;
            let end = if k + 1 == n_clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            shards[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..n_clients)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("n_clients ≥ 1");
        let moved = shards[largest].pop().expect("largest shard is non-empty");
        shards[empty].push(moved);
    }

    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(client, mut indices)| {
            indices.sort_unstable();
            ClientShard { client, indices }
        })
        .collect())
}
