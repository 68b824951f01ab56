//! Brute-force reference implementations of the robust aggregators and an
//! equivalence suite that compares them with the library versions on
//! random instances.
//!
//! The references deliberately take a different route: Krum scores are the
//! minimum over every neighbour subset of the right size, sorting is
//! insertion sort, and trimming removes extremes one at a time.

use fltrigger_core::defenses::{coordinate_median, krum_index, krum_scores, multi_krum, trimmed_mean};
use fltrigger_core::flcore::ClientUpdate;
use fltrigger_core::nn::ParamVector;
use fltrigger_core::seed;
use rand::Rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Score of every vector: the smallest achievable sum of squared distances
/// to any `n − f − 2` of the others, found by enumerating subsets.
pub fn brute_krum_scores(vectors: &[Vec<f64>], f: usize) -> Vec<f64> {
    let n = vectors.len();
    let size = n - f - 2;
    (0..n)
        .map(|i| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut best = f64::INFINITY;
            for mask in 0u32..(1 << others.len()) {
                if mask.count_ones() as usize != size {
                    continue;
                }
                let mut total = 0.0;
                for (bit, &j) in others.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        total += sq_dist(&vectors[i], &vectors[j]);
                    }
                }
                if total < best {
                    best = total;
                }
            }
            best
        })
        .collect()
}

/// Position of the minimal score; equal scores go to the smaller id.
pub fn brute_krum(vectors: &[Vec<f64>], ids: &[usize], f: usize) -> usize {
    let scores = brute_krum_scores(vectors, f);
    let mut best = 0;
    for i in 1..vectors.len() {
        if scores[i] < scores[best] || (scores[i] == scores[best] && ids[i] < ids[best]) {
            best = i;
        }
    }
    best
}

pub fn brute_multi_krum(vectors: &[Vec<f64>], ids: &[usize], f: usize, m: usize) -> Vec<f64> {
    let mut pool_v: Vec<Vec<f64>> = vectors.to_vec();
    let mut pool_id: Vec<usize> = ids.to_vec();
    let mut acc = vec![0.0; vectors[0].len()];
    for _ in 0..m {
        let k = brute_krum(&pool_v, &pool_id, f);
        for (a, x) in acc.iter_mut().zip(&pool_v[k]) {
            *a += x;
        }
        pool_v.remove(k);
        pool_id.remove(k);
    }
    acc.iter().map(|a| a / m as f64).collect()
}

fn insertion_sorted(mut v: Vec<f64>) -> Vec<f64> {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    v
}

fn column(vectors: &[Vec<f64>], d: usize) -> Vec<f64> {
    vectors.iter().map(|v| v[d]).collect()
}

pub fn brute_median(vectors: &[Vec<f64>]) -> Vec<f64> {
    (0..vectors[0].len())
        .map(|d| {
            let s = insertion_sorted(column(vectors, d));
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                (s[n / 2 - 1] + s[n / 2]) / 2.0
            }
        })
        .collect()
}

pub fn brute_trimmed_mean(vectors: &[Vec<f64>], k: usize) -> Vec<f64> {
    (0..vectors[0].len())
        .map(|d| {
            let mut s = insertion_sorted(column(vectors, d));
            for _ in 0..k {
                s.pop();
                s.remove(0);
            }
            let mut total = 0.0;
            for x in &s {
                total += x;
            }
            total / s.len() as f64
        })
        .collect()
}

/// Outcome of one aggregator's equivalence run.
#[derive(Clone, Debug)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub instances: usize,
    pub mismatches: usize,
    /// Largest absolute difference seen (scores for Krum, outputs otherwise).
    pub max_abs_diff: f64,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// A random instance: `n ≤ 8` updates of dimension `≤ 5` with shuffled
/// client ids. Some instances use coarse values so that ties occur.
fn instance(rng: &mut seed::Rng, min_n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.random_range(min_n..=8);
    let dim = rng.random_range(1..=5);
    let coarse = rng.random_bool(0.3);
    let mut vectors: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if coarse {
                        rng.random_range(-2i32..=2) as f64
                    } else {
                        rng.random_range(-10.0..10.0)
                    }
                })
                .collect()
        })
        .collect();
    if n > 3 && rng.random_bool(0.2) {
        vectors[1] = vectors[0].clone();
    }
    let mut ids: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    (vectors, ids)
}

fn updates(vectors: &[Vec<f64>], ids: &[usize]) -> Vec<ClientUpdate> {
    vectors
        .iter()
        .zip(ids)
        .map(|(v, &id)| ClientUpdate::new(id, ParamVector::new(v.clone()), 1).expect("finite"))
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs `instances` random comparisons per aggregator.
pub fn run_equivalence(instances: usize, master_seed: u64) -> Vec<OracleOutcome> {
    let mut rng = seed::rng_for(master_seed, "oracle", 0, 0);
    let mut out = Vec::new();

    let mut krum = OracleOutcome {
        name: "krum",
        instances,
        mismatches: 0,
        max_abs_diff: 0.0,
    };
    for _ in 0..instances {
        let (v, ids) = instance(&mut rng, 3);
        let f = rng.random_range(0..=v.len() - 3);
        let ups = updates(&v, &ids);
        let diff = max_diff(&krum_scores(&ups, f), &brute_krum_scores(&v, f));
        krum.max_abs_diff = krum.max_abs_diff.max(diff);
        let chosen = krum_index(&ups, f).ok();
        if diff > 1e-12 || chosen != Some(brute_krum(&v, &ids, f)) {
            krum.mismatches += 1;
        }
    }
    out.push(krum);

    let mut mk = OracleOutcome {
        name: "multi_krum",
        instances,
        mismatches: 0,
        max_abs_diff: 0.0,
    };
    for _ in 0..instances {
        let (v, ids) = instance(&mut rng, 3);
        let m = rng.random_range(1..=v.len() - 2);
        let f = rng.random_range(0..=v.len() - 2 - m);
        match multi_krum(&updates(&v, &ids), f, m) {
            Ok(got) => {
                let diff = max_diff(got.as_slice(), &brute_multi_krum(&v, &ids, f, m));
                mk.max_abs_diff = mk.max_abs_diff.max(diff);
                if diff > 1e-12 {
                    mk.mismatches += 1;
                }
            }
            Err(_) => mk.mismatches += 1,
        }
    }
    out.push(mk);

    let mut med = OracleOutcome {
        name: "coordinate_median",
        instances,
        mismatches: 0,
        max_abs_diff: 0.0,
    };
    for _ in 0..instances {
        let (v, ids) = instance(&mut rng, 1);
        match coordinate_median(&updates(&v, &ids)) {
            Ok(got) => {
                let want = brute_median(&v);
                med.max_abs_diff = med.max_abs_diff.max(max_diff(got.as_slice(), &want));
                if got.as_slice() != want.as_slice() {
                    med.mismatches += 1;
                }
            }
            Err(_) => med.mismatches += 1,
        }
    }
    out.push(med);

    let mut trim = OracleOutcome {
        name: "trimmed_mean",
        instances,
        mismatches: 0,
        max_abs_diff: 0.0,
    };
    for _ in 0..instances {
        let (v, ids) = instance(&mut rng, 1);
        let k = rng.random_range(0..=(v.len() - 1) / 2);
        match trimmed_mean(&updates(&v, &ids), k) {
            Ok(got) => {
                let want = brute_trimmed_mean(&v, k);
                trim.max_abs_diff = trim.max_abs_diff.max(max_diff(got.as_slice(), &want));
                if got.as_slice() != want.as_slice() {
                    trim.mismatches += 1;
                }
            }
            Err(_) => trim.mismatches += 1,
        }
    }
    out.push(trim);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_krum_on_the_square() {
        let v = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1], vec![5.0, 5.0]];
        let s = brute_krum_scores(&v, 1);
        assert!((s[0] - 0.01).abs() < 1e-15);
        assert_eq!(brute_krum(&v, &[0, 1, 2, 3], 1), 0);
        assert_eq!(brute_multi_krum(&v, &[0, 1, 2, 3], 0, 2), vec![0.05, 0.0]);
    }

    #[test]
    fn brute_order_statistics() {
        let v: Vec<Vec<f64>> = [5.0, 1.0, 4.0, 2.0, 3.0].iter().map(|&x| vec![x]).collect();
        assert_eq!(brute_median(&v), vec![3.0]);
        assert_eq!(brute_median(&v[..4]), vec![3.0]);
        assert_eq!(brute_trimmed_mean(&v, 1), vec![3.0]);
        assert_eq!(brute_trimmed_mean(&v, 2), vec![3.0]);
    }

    #[test]
    fn small_suite_passes() {
        for o in run_equivalence(25, 3) {
            assert!(o.passed(), "{o:?}");
        }
    }
}
