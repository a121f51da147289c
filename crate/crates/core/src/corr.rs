//! Window slicing and Pearson correlation matrices.

use std::ops::Range;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::time::{midpoint, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// Back-to-back windows; the stride always equals the length.
    #[default]
    Disjoint,
    /// One window ending every `stride` timestamps.
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub length: usize,
    pub stride: usize,
    pub mode: WindowMode,
}

impl WindowSpec {
    pub fn disjoint(length: usize) -> Self {
        Self {
            length,
            stride: length,
            mode: WindowMode::Disjoint,
        }
    }

    pub fn sliding(length: usize, stride: usize) -> Self {
        Self {
            length,
            stride,
            mode: WindowMode::Sliding,
        }
    }

    /// Two months of trading days.
    pub fn two_months() -> Self {
        Self::disjoint(42)
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::two_months()
    }
}

/// Pearson correlation matrix of one window of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationWindow {
    pub values: Array2<f64>,
    pub symbols: Vec<String>,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
    /// Date the window is reported under; the window end for estimated matrices.
    pub label_date: Timestamp,
    pub sample_count: usize,
}

impl CorrelationWindow {
    pub fn dim(&self) -> usize {
        self.symbols.len()
    }

    pub(crate) fn check_same_universe(&self, other: &CorrelationWindow) -> Result<()> {
        if self.symbols != other.symbols {
            return Err(Error::IncompatibleUniverse(format!(
                "{} symbols vs {} symbols, or different ordering",
                self.symbols.len(),
                other.symbols.len()
            )));
        }
        Ok(())
    }
}

/// Index ranges (end-exclusive) of the windows laid over `n_times` timestamps.
///
/// Disjoint windows are anchored at the end so the last window closes on the
/// last timestamp; the oldest remainder is discarded.
pub fn rolling_windows(n_times: usize, spec: &WindowSpec) -> Result<Vec<Range<usize>>> {
    if spec.length < 2 {
        return Err(Error::Invalid(format!(
            "window length must be >= 2, got {}",
            spec.length
        )));
    }
    if spec.stride == 0 {
        return Err(Error::Invalid("window stride must be >= 1".into()));
    }
    if n_times < spec.length {
        return Err(Error::WindowTooLong {
            length: spec.length,
            available: n_times,
        });
    }
    let len = spec.length;
    Ok(match spec.mode {
        WindowMode::Disjoint => {
            let offset = n_times % len;
            (0..n_times / len)
                .map(|i| offset + i * len..offset + (i + 1) * len)
                .collect()
        }
        WindowMode::Sliding => (len - 1..n_times)
            .step_by(spec.stride)
            .map(|end| end + 1 - len..end + 1)
            .collect(),
    })
}

/// Pearson correlations over `range` with population moments.
///
/// Each series is standardized and the matrix is built as the Gram matrix of
/// the standardized rows, so it is symmetric and positive semidefinite by
/// construction. The diagonal is set to exactly one.
pub fn pearson_matrix(panel: &ReturnPanel, range: Range<usize>) -> Result<CorrelationWindow> {
    if range.end > panel.n_times() || range.start >= range.end {
        return Err(Error::Invalid(format!(
            "window {}..{} outside panel of {} timestamps",
            range.start,
            range.end,
            panel.n_times()
        )));
    }
    let t = range.len();
    if t < 2 {
        return Err(Error::Invalid("window needs at least 2 samples".into()));
    }
    let k = panel.n_series();
    let slice = panel.values.slice(ndarray::s![.., range.clone()]);
    let mut z = Array2::<f64>::zeros((k, t));
    for (i, row) in slice.axis_iter(Axis(0)).enumerate() {
        let mean = row.sum() / t as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if var == 0.0 || var <= (1e-14 * scale).powi(2) {
            return Err(Error::DegenerateSeries {
                symbol: panel.symbols[i].clone(),
            });
        }
        let sd = var.sqrt();
        z.row_mut(i)
            .iter_mut()
            .zip(row)
            .for_each(|(dst, v)| *dst = (v - mean) / sd);
    }

    let mut c = Array2::<f64>::eye(k);
    let inv_t = 1.0 / t as f64;
    for i in 0..k {
        let zi = z.row(i);
        for j in i + 1..k {
            let v = (zi.dot(&z.row(j)) * inv_t).clamp(-1.0, 1.0);
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    Ok(CorrelationWindow {
        values: c,
        symbols: panel.symbols.clone(),
        window_start: panel.timestamps[range.start],
        window_end: panel.timestamps[range.end - 1],
        label_date: panel.timestamps[range.end - 1],
        sample_count: t,
    })
}

/// Correlation matrices of every window, evaluated in parallel, in window order.
pub fn correlation_windows(panel: &ReturnPanel, spec: &WindowSpec) -> Result<Vec<CorrelationWindow>> {
    rolling_windows(panel.n_times(), spec)?
        .into_par_iter()
        .map(|r| pearson_matrix(panel, r))
        .collect()
}

/// Elementwise mean of correlation matrices over a shared universe.
///
/// The result is labelled with the midpoint of the member label dates and spans
/// from the earliest start to the latest end.
pub fn average_matrix(matrices: &[&CorrelationWindow]) -> Result<CorrelationWindow> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Invalid("cannot average an empty list of matrices".into()))?;
    for m in &matrices[1..] {
        first.check_same_universe(m)?;
    }
    let values = mean_of(matrices.iter().map(|m| &m.values));
    Ok(CorrelationWindow {
        values,
        symbols: first.symbols.clone(),
        window_start: matrices.iter().map(|m| m.window_start).min().unwrap(),
        window_end: matrices.iter().map(|m| m.window_end).max().unwrap(),
        label_date: midpoint(matrices.iter().map(|m| m.label_date)).unwrap(),
        sample_count: matrices.iter().map(|m| m.sample_count).sum(),
    })
}

/// Elementwise mean with an exact unit diagonal. Callers guarantee a non-empty, same-shape input.
pub(crate) fn mean_of<'a>(matrices: impl IntoIterator<Item = &'a Array2<f64>>) -> Array2<f64> {
    let mut it = matrices.into_iter();
    let mut acc = it.next().expect("non-empty").clone();
    let mut count = 1usize;
    for m in it {
        acc += m;
        count += 1;
    }
    acc /= count as f64;
    acc.diag_mut().fill(1.0);
    acc
}
