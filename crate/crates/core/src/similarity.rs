//! Distances between correlation matrices.
//!
//! `zeta` is the mean absolute elementwise difference over all K² entries
//! (the diagonal contributes zero). `zeta_alt` compares only the largest
//! eigenvalue, which tracks the collective mode of the market and is far less
//! sensitive to estimation noise.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr::CorrelationWindow;
use crate::error::{Error, Result};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    #[default]
    Zeta,
    ZetaAlt,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeta" => Ok(Measure::Zeta),
            "zeta-alt" | "zeta_alt" => Ok(Measure::ZetaAlt),
            other => Err(Error::Invalid(format!("unknown measure `{other}`"))),
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Measure::Zeta => "zeta",
            Measure::ZetaAlt => "zeta-alt",
        })
    }
}

/// Pairwise distances between W windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub labels: Vec<Timestamp>,
    pub measure: Measure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSummary {
    pub lambda_max: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub tol: f64,
    pub max_iter: usize,
    /// Solve densely when iteration stalls, as it does when the two largest
    /// eigenvalues nearly coincide. Off, a stall is reported as an error.
    pub dense_fallback: bool,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            dense_fallback: true,
        }
    }
}

/// Mean of `|a_ij - b_ij|` over all entries of two equally shaped matrices.
pub(crate) fn zeta_values(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

pub fn zeta(a: &CorrelationWindow, b: &CorrelationWindow) -> Result<f64> {
    a.check_same_universe(b)?;
    Ok(zeta_values(&a.values, &b.values))
}

pub fn zeta_alt(a: &CorrelationWindow, b: &CorrelationWindow, solver: &PowerIteration) -> Result<f64> {
    a.check_same_universe(b)?;
    let la = largest_eigenvalue(&a.values, solver)?.lambda_max;
    let lb = largest_eigenvalue(&b.values, solver)?.lambda_max;
    Ok((la - lb).abs())
}

/// Largest eigenvalue of a symmetric matrix by shifted power iteration.
///
/// The shift is the Gershgorin lower bound of the spectrum (at most K for a
/// correlation matrix), which makes every eigenvalue of the shifted matrix
/// non-negative so the dominant one is `lambda_max + shift`. Iteration runs from
/// the normalized all-ones vector and from a fixed tilted vector. Each run stops once the residual
/// `max |C v - lambda v|` drops to `tol`.
pub fn largest_eigenvalue(c: &Array2<f64>, solver: &PowerIteration) -> Result<EigenSummary> {
    let (k, k2) = c.dim();
    if k != k2 || k == 0 {
        return Err(Error::Invalid(format!("expected a square matrix, got {k}x{k2}")));
    }
    if let Some(((row, col), _)) = c.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row, col });
    }
    let shift = (0..k)
        .map(|i| {
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| c[[i, j]].abs()).sum();
            off - c[[i, i]]
        })
        .fold(0.0f64, f64::max);

    // The all-ones start is orthogonal to the top eigenvector of some matrices
    // (a negatively correlated pair, for one), so a tilted start runs as well
    // and the larger Rayleigh quotient wins.
    let ones = Array1::from_elem(k, 1.0);
    let tilted = Array1::from_shape_fn(k, |i| 1.0 + (i + 1) as f64 / (k + 1) as f64);
    let runs = iterate(c, ones, shift, solver).and_then(|a| Ok((a, iterate(c, tilted, shift, solver)?)));
    match runs {
        Ok((first, second)) => Ok(if second.lambda_max > first.lambda_max {
            second
        } else {
            first
        }),
        Err(Error::NonConvergence { .. }) if solver.dense_fallback => Ok(dense_largest(c, solver.max_iter)),
        Err(e) => Err(e),
    }
}

fn dense_largest(c: &Array2<f64>, iterations: usize) -> EigenSummary {
    let k = c.nrows();
    let m = nalgebra::DMatrix::from_fn(k, k, |i, j| c[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.imax();
    let lambda = eig.eigenvalues[top];
    let v = eig.eigenvectors.column(top);
    let residual = (&m * v - v * lambda).amax();
    EigenSummary {
        lambda_max: lambda,
        iterations,
        residual,
    }
}

fn iterate(c: &Array2<f64>, start: Array1<f64>, shift: f64, solver: &PowerIteration) -> Result<EigenSummary> {
    let mut v = &start / start.dot(&start).sqrt();
    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;
    for iter in 1..=solver.max_iter {
        let cv = c.dot(&v);
        lambda = v.dot(&cv);
        residual = cv
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - lambda * b).abs())
            .fold(0.0, f64::max);
        if residual <= solver.tol {
            return Ok(EigenSummary {
                lambda_max: lambda,
                iterations: iter,
                residual,
            });
        }
        let mut next = cv + &v * shift;
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            // v lies in the kernel of C + shift·I; the spectrum is {-shift}.
            return Ok(EigenSummary {
                lambda_max: -shift,
                iterations: iter,
                residual: 0.0,
            });
        }
        next /= norm;
        v = next;
    }
    Err(Error::NonConvergence {
        iterations: solver.max_iter,
        estimate: lambda,
        residual,
    })
}

/// All pairwise distances between `windows` under `measure`.
pub fn similarity_matrix(
    windows: &[CorrelationWindow],
    measure: Measure,
    solver: &PowerIteration,
) -> Result<SimilarityMatrix> {
    if windows.len() < 2 {
        return Err(Error::Invalid(format!(
            "similarity matrix needs at least 2 windows, got {}",
            windows.len()
        )));
    }
    for w in &windows[1..] {
        windows[0].check_same_universe(w)?;
    }
    let n = windows.len();
    let eigen: Vec<f64> = match measure {
        Measure::Zeta => Vec::new(),
        Measure::ZetaAlt => windows
            .par_iter()
            .map(|w| largest_eigenvalue(&w.values, solver).map(|e| e.lambda_max))
            .collect::<Result<_>>()?,
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| match measure {
            Measure::Zeta => zeta_values(&windows[i].values, &windows[j].values),
            Measure::ZetaAlt => (eigen[i] - eigen[j]).abs(),
        })
        .collect();
    let mut values = Array2::zeros((n, n));
    for (&(i, j), d) in pairs.iter().zip(dists) {
        values[[i, j]] = d;
        values[[j, i]] = d;
    }
    Ok(SimilarityMatrix {
        values,
        labels: windows.iter().map(|w| w.label_date).collect(),
        measure,
    })
}
