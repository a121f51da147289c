//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use chrono::Duration;
use market_states::{CorrelationWindow, ReturnPanel, Timestamp};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn start() -> Timestamp {
    market_states::time::parse_timestamp("2000-01-03").unwrap()
}

/// K×T panel with a random one-factor structure so matrices carry a clear top eigenvalue.
pub fn random_panel(k: usize, t: usize, seed: u64) -> ReturnPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loadings: Vec<f64> = (0..k).map(|_| rng.random_range(-0.2..1.0)).collect();
    let mut values = Array2::zeros((k, t));
    for c in 0..t {
        let f: f64 = rng.sample(StandardNormal);
        for r in 0..k {
            let e: f64 = rng.sample(StandardNormal);
            values[[r, c]] = 0.01 * (loadings[r] * f + e);
        }
    }
    let stamps = (0..t).map(|i| start() + Duration::days(i as i64)).collect();
    let symbols = (0..k).map(|i| format!("S{i:02}")).collect();
    ReturnPanel::new(symbols, stamps, values, false).unwrap()
}

/// Textbook two-pass estimate: centre, then cov / sqrt(var_i var_j), one pair at a time.
pub fn two_pass_correlation(panel: &ReturnPanel, range: std::ops::Range<usize>) -> Array2<f64> {
    let k = panel.n_series();
    let n = range.len() as f64;
    let mut out = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let xi: Vec<f64> = range.clone().map(|t| panel.values[[i, t]]).collect();
            let xj: Vec<f64> = range.clone().map(|t| panel.values[[j, t]]).collect();
            let mi = xi.iter().sum::<f64>() / n;
            let mj = xj.iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut vi = 0.0;
            let mut vj = 0.0;
            for t in 0..xi.len() {
                cov += (xi[t] - mi) * (xj[t] - mj);
                vi += (xi[t] - mi) * (xi[t] - mi);
                vj += (xj[t] - mj) * (xj[t] - mj);
            }
            out[[i, j]] = cov / (vi * vj).sqrt();
        }
    }
    out
}

fn to_dense(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Full symmetric spectrum, ascending.
pub fn dense_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(to_dense(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Numerical rank: singular values above `rel` times the largest.
pub fn numerical_rank(m: &Array2<f64>, rel: f64) -> usize {
    let sv = to_dense(m).singular_values();
    let top = sv.max();
    sv.iter().filter(|s| **s > rel * top).count()
}

pub fn zeta_oracle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let k = a.nrows();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            s += (a[[i, j]] - b[[i, j]]).abs();
        }
    }
    s / (k * k) as f64
}

fn mean_matrix(items: &[&Array2<f64>]) -> Array2<f64> {
    let mut acc = Array2::zeros(items[0].dim());
    for m in items {
        acc += *m;
    }
    acc / items.len() as f64
}

/// Sum over both sides of the distance from each member to its side's mean.
pub fn split_cost(items: &[&Array2<f64>], left: &[usize], right: &[usize]) -> f64 {
    [left, right]
        .iter()
        .map(|side| {
            let members: Vec<&Array2<f64>> = side.iter().map(|&i| items[i]).collect();
            let c = mean_matrix(&members);
            members.iter().map(|m| zeta_oracle(m, &c)).sum::<f64>()
        })
        .sum()
}

/// Exhaustive search over every 2-partition with both sides non-empty.
/// Returns the optimal partition with item 0 on the left.
pub fn best_bipartition(items: &[&Array2<f64>]) -> (Vec<usize>, Vec<usize>, f64) {
    let n = items.len();
    assert!(n <= 20);
    let mut best = (Vec::new(), Vec::new(), f64::INFINITY);
    // item 0 pinned left: masks over items 1..n
    for mask in 0u32..(1 << (n - 1)) {
        let (mut left, mut right) = (vec![0], Vec::new());
        for i in 1..n {
            if mask & (1 << (i - 1)) != 0 {
                right.push(i);
            } else {
                left.push(i);
            }
        }
        if right.is_empty() {
            continue;
        }
        let cost = split_cost(items, &left, &right);
        if cost < best.2 {
            best = (left, right, cost);
        }
    }
    best
}

/// Puts the side holding item 0 first.
pub fn canonical(left: &[usize], right: &[usize]) -> (Vec<usize>, Vec<usize>) {
    if left.contains(&0) {
        (left.to_vec(), right.to_vec())
    } else {
        (right.to_vec(), left.to_vec())
    }
}

pub fn uniform_window(k: usize, c: f64, day: i64) -> CorrelationWindow {
    let mut values = Array2::from_elem((k, k), c);
    values.diag_mut().fill(1.0);
    let t = start() + Duration::days(day);
    CorrelationWindow {
        values,
        symbols: (0..k).map(|i| format!("S{i:02}")).collect(),
        window_start: t,
        window_end: t,
        label_date: t,
        sample_count: 40,
    }
}

/// Panel with two blocks: within-block correlation `within`, across blocks `across`.
pub fn two_block_target(a: usize, b: usize, within: f64, across: f64) -> Array2<f64> {
    let k = a + b;
    Array2::from_shape_fn((k, k), |(i, j)| {
        if i == j {
            1.0
        } else if (i < a) == (j < a) {
            within
        } else {
            across
        }
    })
}
