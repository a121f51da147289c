//! Regime-switching synthetic return panels with known ground truth.
//!
//! Each segment draws independent innovations and mixes them with the
//! symmetric square root of the segment's target correlation matrix, so the
//! population correlation of every timestamp in the segment equals the target.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    /// Every off-diagonal entry equal to `c`.
    Uniform { c: f64 },
    /// Path of a matrix CSV, resolved relative to the spec file when loaded from disk.
    File { matrix_file: String },
    #[serde(skip)]
    Matrix(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length: usize,
    #[serde(flatten)]
    pub target: Target,
    /// Standard deviation of the generated returns.
    pub noise: f64,
    /// Ground-truth regime id; defaults to the segment's position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Innovations {
    #[default]
    Gaussian,
    /// Unit-variance Student-t with the given degrees of freedom (> 2).
    StudentT(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub innovations: Innovations,
    /// First business day of the generated calendar.
    #[serde(default = "default_start")]
    pub start: NaiveDate,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).unwrap()
}

impl RegimeSpec {
    pub fn uniform_segments(k: usize, seed: u64, segments: &[(usize, f64, usize)]) -> Self {
        Self {
            k,
            seed,
            segments: segments
                .iter()
                .map(|&(length, c, regime)| Segment {
                    length,
                    target: Target::Uniform { c },
                    noise: 0.01,
                    regime: Some(regime),
                })
                .collect(),
            innovations: Innovations::Gaussian,
            start: default_start(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("synthetic spec: {e}")))
    }
}

/// Generated panel with the regime of every timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: ReturnPanel,
    pub regimes: Vec<usize>,
}

impl SyntheticPanel {
    /// Majority regime of the timestamps in `range` (ties go to the lower id).
    pub fn window_regime(&self, range: std::ops::Range<usize>) -> usize {
        let mut counts = std::collections::BTreeMap::new();
        for &r in &self.regimes[range] {
            *counts.entry(r).or_insert(0usize) += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        counts
            .into_iter()
            .find(|&(_, n)| n == best)
            .map(|(r, _)| r)
            .unwrap_or(0)
    }
}

/// Uniform correlation matrix with off-diagonal `c`.
pub fn uniform_target(k: usize, c: f64) -> Array2<f64> {
    let mut m = Array2::from_elem((k, k), c);
    m.diag_mut().fill(1.0);
    m
}

/// Symmetric positive semidefinite square root of a correlation matrix.
pub fn symmetric_sqrt(target: &Array2<f64>) -> Result<Array2<f64>> {
    let k = target.nrows();
    if target.dim() != (k, k) {
        return Err(Error::Invalid("target matrix must be square".into()));
    }
    for i in 0..k {
        if (target[[i, i]] - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("target diagonal entry {i} is not 1")));
        }
        for j in 0..i {
            if (target[[i, j]] - target[[j, i]]).abs() > 1e-12 {
                return Err(Error::Invalid("target matrix is not symmetric".into()));
            }
        }
    }
    let m = DMatrix::from_fn(k, k, |i, j| target[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let roots = DVector::from_iterator(k, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(Array2::from_shape_fn((k, k), |(i, j)| s[(i, j)]))
}

fn business_days(start: NaiveDate, n: usize) -> Vec<Timestamp> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d.and_hms_opt(0, 0, 0).unwrap());
        }
        d += Duration::days(1);
    }
    out
}

/// Draws the panel described by `spec`. Deterministic in `spec.seed`.
pub fn generate_regime_panel(spec: &RegimeSpec) -> Result<SyntheticPanel> {
    if spec.k < 2 {
        return Err(Error::Invalid(format!("need at least 2 series, got {}", spec.k)));
    }
    if spec.segments.is_empty() {
        return Err(Error::Invalid("synthetic spec has no segments".into()));
    }
    let student = match spec.innovations {
        Innovations::Gaussian => None,
        Innovations::StudentT(dof) => {
            if dof.is_nan() || dof <= 2.0 {
                return Err(Error::Invalid(format!("Student-t needs dof > 2, got {dof}")));
            }
            let dist = StudentT::new(dof).map_err(|e| Error::Invalid(e.to_string()))?;
            Some((dist, ((dof - 2.0) / dof).sqrt()))
        }
    };

    let total: usize = spec.segments.iter().map(|s| s.length).sum();
    let mut values = Array2::zeros((spec.k, total));
    let mut regimes = Vec::with_capacity(total);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut col = 0;
    for (idx, seg) in spec.segments.iter().enumerate() {
        if seg.length < 2 {
            return Err(Error::Invalid(format!("segment {idx} is shorter than 2")));
        }
        if seg.noise.is_nan() || seg.noise <= 0.0 {
            return Err(Error::Invalid(format!("segment {idx} needs a positive noise scale")));
        }
        let target = match &seg.target {
            Target::Uniform { c } => uniform_target(spec.k, *c),
            Target::Matrix(m) => m.clone(),
            Target::File { matrix_file } => {
                return Err(Error::Invalid(format!(
                    "segment {idx} references {matrix_file}; load the spec with io::load_regime_spec"
                )))
            }
        };
        if target.dim() != (spec.k, spec.k) {
            return Err(Error::Invalid(format!("segment {idx} target is not {0}x{0}", spec.k)));
        }
        let root = symmetric_sqrt(&target)?;
        let mut z = ndarray::Array1::<f64>::zeros(spec.k);
        for _ in 0..seg.length {
            for zi in z.iter_mut() {
                *zi = match &student {
                    None => StandardNormal.sample(&mut rng),
                    Some((dist, scale)) => dist.sample(&mut rng) * scale,
                };
            }
            let x = root.dot(&z) * seg.noise;
            values.column_mut(col).assign(&x);
            regimes.push(seg.regime.unwrap_or(idx));
            col += 1;
        }
    }

    let width = spec.k.to_string().len().max(2);
    let symbols = (1..=spec.k).map(|i| format!("S{i:0width$}")).collect();
    let panel = ReturnPanel::new(symbols, business_days(spec.start, total), values, false)?;
    Ok(SyntheticPanel { panel, regimes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::pearson_matrix;

    fn off_diagonal_mean(m: &Array2<f64>) -> f64 {
        let k = m.nrows();
        let sum: f64 = m.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, v)| v).sum();
        sum / (k * (k - 1)) as f64
    }

    #[test]
    fn independent_segment() {
        let spec = RegimeSpec::uniform_segments(6, 11, &[(2000, 0.0, 0)]);
        let out = generate_regime_panel(&spec).unwrap();
        let c = pearson_matrix(&out.panel, 0..2000).unwrap();
        assert!(off_diagonal_mean(&c.values).abs() < 3.0 / (2000f64).sqrt());
    }

    #[test]
    fn strongly_correlated_segment() {
        let spec = RegimeSpec::uniform_segments(10, 5, &[(500, 0.9, 0)]);
        let out = generate_regime_panel(&spec).unwrap();
        let c = pearson_matrix(&out.panel, 0..500).unwrap();
        assert!((off_diagonal_mean(&c.values) - 0.9).abs() < 0.05);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = RegimeSpec::uniform_segments(4, 99, &[(30, 0.3, 0), (30, 0.7, 1)]);
        let a = generate_regime_panel(&spec).unwrap();
        let b = generate_regime_panel(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.regimes[..30], [0; 30]);
        assert_eq!(a.regimes[30..], [1; 30]);
        let other = RegimeSpec { seed: 100, ..spec };
        assert_ne!(generate_regime_panel(&other).unwrap().panel.values, a.panel.values);
    }

    #[test]
    fn rejects_non_psd_target() {
        // c = -0.5 with K = 4 gives eigenvalue 1 + 3(-0.5) < 0
        let spec = RegimeSpec::uniform_segments(4, 1, &[(10, -0.5, 0)]);
        assert!(matches!(
            generate_regime_panel(&spec),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn sqrt_squares_back() {
        let t = uniform_target(5, 0.4);
        let s = symmetric_sqrt(&t).unwrap();
        let back = s.dot(&s);
        assert!(back.iter().zip(t.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn calendar_skips_weekends() {
        let days = business_days(NaiveDate::from_ymd_opt(2000, 1, 7).unwrap(), 3);
        let wd: Vec<_> = days.iter().map(|d| d.weekday()).collect();
        assert_eq!(wd, vec![Weekday::Fri, Weekday::Mon, Weekday::Tue]);
    }

    #[test]
    fn spec_json() {
        let text = r#"{"K": 3, "seed": 4, "segments": [
            {"length": 10, "c": 0.5, "noise": 0.02},
            {"length": 12, "matrix_file": "m.csv", "noise": 0.01, "regime": 0}
        ]}"#;
        let spec = RegimeSpec::from_json(text).unwrap();
        assert_eq!(spec.k, 3);
        assert_eq!(spec.segments[0].target, Target::Uniform { c: 0.5 });
        assert_eq!(
            spec.segments[1].target,
            Target::File {
                matrix_file: "m.csv".into()
            }
        );
        assert_eq!(spec.innovations, Innovations::Gaussian);
    }

    #[test]
    fn window_regime_majority() {
        let spec = RegimeSpec::uniform_segments(3, 1, &[(6, 0.1, 0), (4, 0.5, 1)]);
        let out = generate_regime_panel(&spec).unwrap();
        assert_eq!(out.window_regime(0..5), 0);
        assert_eq!(out.window_regime(4..10), 1);
    }
}
