//! Local normalization of returns.
//!
//! Each return is centred on the mean of the `n` most recent values (the current
//! one included) and divided by their population standard deviation. This strips
//! slowly moving drift and volatility before correlations are estimated. The
//! first `n - 1` points have no complete window and are dropped.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ReturnPanel, ReturnSeries};
use crate::time::format_timestamp;

/// What to emit when a window has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneratePolicy {
    #[default]
    EmitZero,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalNormConfig {
    /// Window length in sampling points.
    pub n: usize,
    #[serde(default)]
    pub degenerate_policy: DegeneratePolicy,
}

impl Default for LocalNormConfig {
    fn default() -> Self {
        Self {
            n: 13,
            degenerate_policy: DegeneratePolicy::EmitZero,
        }
    }
}

impl LocalNormConfig {
    pub fn with_window(n: usize) -> Self {
        Self { n, ..Self::default() }
    }
}

/// Normalizes `values`; `Err(i)` reports the index of a degenerate window under the error policy.
fn normalize_values(values: &[f64], cfg: &LocalNormConfig) -> std::result::Result<Vec<f64>, usize> {
    let n = cfg.n;
    let inv_n = 1.0 / n as f64;
    values
        .windows(n)
        .enumerate()
        .map(|(i, w)| {
            let current = w[n - 1];
            let mean = w.iter().sum::<f64>() * inv_n;
            let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_n;
            // Relative floor: a constant window can leave round-off in `var`.
            let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if var <= (1e-14 * scale).powi(2) || var == 0.0 {
                return match cfg.degenerate_policy {
                    DegeneratePolicy::EmitZero => Ok(0.0),
                    DegeneratePolicy::Error => Err(i + n - 1),
                };
            }
            Ok((current - mean) / var.sqrt())
        })
        .collect()
}

fn check_config(cfg: &LocalNormConfig, len: usize) -> Result<()> {
    if cfg.n < 2 {
        return Err(Error::Invalid(format!(
            "normalization window must be >= 2, got {}",
            cfg.n
        )));
    }
    if len < cfg.n {
        return Err(Error::Invalid(format!(
            "series of length {len} is shorter than the normalization window {}",
            cfg.n
        )));
    }
    Ok(())
}

pub fn local_normalize(series: &ReturnSeries, cfg: &LocalNormConfig) -> Result<ReturnSeries> {
    check_config(cfg, series.len())?;
    let values = normalize_values(&series.values, cfg).map_err(|i| Error::DegenerateWindow {
        symbol: series.symbol.clone(),
        timestamp: format_timestamp(&series.timestamps[i]),
    })?;
    Ok(ReturnSeries {
        symbol: series.symbol.clone(),
        timestamps: series.timestamps[cfg.n - 1..].to_vec(),
        values,
        normalized: true,
    })
}

/// Row-wise [`local_normalize`] over an aligned panel.
pub fn normalize_panel(panel: &ReturnPanel, cfg: &LocalNormConfig) -> Result<ReturnPanel> {
    check_config(cfg, panel.n_times())?;
    let t_out = panel.n_times() - (cfg.n - 1);
    let mut out = Array2::zeros((panel.n_series(), t_out));
    for (k, row) in panel.values.rows().into_iter().enumerate() {
        let row = row.to_vec();
        let normed = normalize_values(&row, cfg).map_err(|i| Error::DegenerateWindow {
            symbol: panel.symbols[k].clone(),
            timestamp: format_timestamp(&panel.timestamps[i]),
        })?;
        out.row_mut(k).assign(&ndarray::Array1::from(normed));
    }
    ReturnPanel::new(panel.symbols.clone(), panel.timestamps[cfg.n - 1..].to_vec(), out, true)
}

/// Sample excess kurtosis `m4 / m2^2 - 3` with population moments.
pub fn excess_kurtosis(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;
    use chrono::Duration;
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> ReturnSeries {
        let start = parse_timestamp("2000-01-03").unwrap();
        let ts = (0..values.len()).map(|i| start + Duration::days(i as i64)).collect();
        ReturnSeries::new("X", ts, values).unwrap()
    }

    #[test]
    fn ramp_with_pairs_is_all_ones() {
        let s = series((1..=20).map(f64::from).collect());
        let out = local_normalize(&s, &LocalNormConfig::with_window(2)).unwrap();
        assert_eq!(out.len(), 19);
        assert!(out.values.iter().all(|v| (v - 1.0).abs() < 1e-12), "{:?}", out.values);
        assert!(out.normalized);
        assert_eq!(out.timestamps[0], s.timestamps[1]);
    }

    #[test]
    fn constant_series_emits_zero() {
        let s = series(vec![0.3; 30]);
        let out = local_normalize(&s, &LocalNormConfig::default()).unwrap();
        assert_eq!(out.len(), 18);
        assert!(out.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_series_errors_under_strict_policy() {
        let s = series(vec![0.3; 30]);
        let cfg = LocalNormConfig {
            n: 13,
            degenerate_policy: DegeneratePolicy::Error,
        };
        assert!(matches!(local_normalize(&s, &cfg), Err(Error::DegenerateWindow { .. })));
    }

    #[test]
    fn rejects_bad_window() {
        let s = series(vec![1.0, 2.0, 3.0]);
        assert!(local_normalize(&s, &LocalNormConfig::with_window(1)).is_err());
        assert!(local_normalize(&s, &LocalNormConfig::with_window(4)).is_err());
    }

    #[test]
    fn hand_computed_window() {
        // window {1, 2, 6}: mean 3, population var (4 + 1 + 9) / 3
        let s = series(vec![1.0, 2.0, 6.0]);
        let out = local_normalize(&s, &LocalNormConfig::with_window(3)).unwrap();
        let expected = 3.0 / (14.0f64 / 3.0).sqrt();
        assert!((out.values[0] - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            values in prop::collection::vec(-0.1f64..0.1, 20..60),
            a in 0.01f64..100.0,
            b in -1.0f64..1.0,
            n in 2usize..15,
        ) {
            let cfg = LocalNormConfig::with_window(n);
            let base = local_normalize(&series(values.clone()), &cfg).unwrap();
            let moved = local_normalize(&series(values.iter().map(|v| a * v + b).collect()), &cfg).unwrap();
            prop_assert_eq!(base.len(), values.len() - (n - 1));
            for (x, y) in base.values.iter().zip(&moved.values) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }
    }
}
