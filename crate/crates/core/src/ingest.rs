//! Price table parsing, arithmetic returns and panel alignment.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{Duration, NaiveTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{format_timestamp, parse_timestamp, Timestamp};

/// Prices of one instrument, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub symbol: String,
    pub timestamps: Vec<Timestamp>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(symbol: impl Into<String>, timestamps: Vec<Timestamp>, prices: Vec<f64>) -> Result<Self> {
        let symbol = symbol.into();
        if timestamps.len() != prices.len() {
            return Err(Error::Invalid(format!(
                "{symbol}: {} timestamps but {} prices",
                timestamps.len(),
                prices.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "{symbol}: timestamps not strictly increasing at {}",
                format_timestamp(&w[1])
            )));
        }
        if let Some(&p) = prices.iter().find(|p| !p.is_finite() || **p <= 0.0) {
            return Err(Error::NonPositivePrice {
                line: 0,
                symbol,
                price: p,
            });
        }
        Ok(Self {
            symbol,
            timestamps,
            prices,
        })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    fn price_at(&self, t: &Timestamp) -> Option<f64> {
        self.timestamps.binary_search(t).ok().map(|i| self.prices[i])
    }
}

/// Returns of one instrument, indexed by the start instant of each return interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub symbol: String,
    pub timestamps: Vec<Timestamp>,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl ReturnSeries {
    pub fn new(symbol: impl Into<String>, timestamps: Vec<Timestamp>, values: Vec<f64>) -> Result<Self> {
        let symbol = symbol.into();
        if timestamps.len() != values.len() {
            return Err(Error::Invalid(format!(
                "{symbol}: {} timestamps but {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!("{symbol}: timestamps not strictly increasing")));
        }
        Ok(Self {
            symbol,
            timestamps,
            values,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// K aligned return series over a shared grid of T timestamps.
///
/// `values` is K×T: row `i` belongs to `symbols[i]`, column `t` to `timestamps[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub symbols: Vec<String>,
    pub timestamps: Vec<Timestamp>,
    pub values: Array2<f64>,
    pub normalized: bool,
}

impl ReturnPanel {
    pub fn new(
        symbols: Vec<String>,
        timestamps: Vec<Timestamp>,
        values: Array2<f64>,
        normalized: bool,
    ) -> Result<Self> {
        let (k, t) = values.dim();
        if k != symbols.len() || t != timestamps.len() {
            return Err(Error::Invalid(format!(
                "panel is {k}x{t} but has {} symbols and {} timestamps",
                symbols.len(),
                timestamps.len()
            )));
        }
        if k < 2 {
            return Err(Error::InsufficientUniverse { found: k });
        }
        if t < 2 {
            return Err(Error::Invalid(format!("panel needs at least 2 timestamps, got {t}")));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("panel timestamps not strictly increasing".into()));
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = symbols.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::Invalid(format!("duplicate symbol {dup} in panel")));
        }
        Ok(Self {
            symbols,
            timestamps,
            values,
            normalized,
        })
    }

    pub fn n_series(&self) -> usize {
        self.symbols.len()
    }

    pub fn n_times(&self) -> usize {
        self.timestamps.len()
    }

    /// Splits the panel back into one series per symbol.
    pub fn series(&self) -> Vec<ReturnSeries> {
        self.symbols
            .iter()
            .zip(self.values.rows())
            .map(|(symbol, row)| ReturnSeries {
                symbol: symbol.clone(),
                timestamps: self.timestamps.clone(),
                values: row.to_vec(),
                normalized: self.normalized,
            })
            .collect()
    }
}

/// Column layout of a long-format price table.
#[derive(Debug, Clone)]
pub struct PriceTableFormat {
    pub delimiter: u8,
    pub date_column: String,
    pub symbol_column: String,
    pub price_column: String,
}

impl Default for PriceTableFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            date_column: "date".into(),
            symbol_column: "symbol".into(),
            price_column: "price".into(),
        }
    }
}

/// Parses a long-format `date,symbol,price` table into one series per symbol.
///
/// Series come back ordered by symbol; rows of each series are sorted by time.
pub fn parse_price_table<R: Read>(reader: R, format: &PriceTableFormat) -> Result<Vec<PriceSeries>> {
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing `{name}` column in header"),
        })
    };
    let (date_col, symbol_col, price_col) = (
        column(&format.date_column)?,
        column(&format.symbol_column)?,
        column(&format.price_column)?,
    );

    // symbol -> [(timestamp, price, line)]
    let mut rows: BTreeMap<String, Vec<(Timestamp, f64, usize)>> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = csv.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let ts = parse_timestamp(&record[date_col]).ok_or_else(|| Error::Parse {
            line,
            message: format!("unparseable date `{}`", &record[date_col]),
        })?;
        let symbol = record[symbol_col].to_string();
        if symbol.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty symbol".into(),
            });
        }
        let price: f64 = record[price_col].parse().map_err(|_| Error::Parse {
            line,
            message: format!("unparseable price `{}`", &record[price_col]),
        })?;
        if !price.is_finite() || price <= 0.0 {
            return Err(Error::NonPositivePrice { line, symbol, price });
        }
        rows.entry(symbol).or_default().push((ts, price, line));
    }

    rows.into_iter()
        .map(|(symbol, mut obs)| {
            obs.sort_by_key(|o| (o.0, o.2));
            if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::DuplicateTimestamp {
                    symbol,
                    timestamp: format_timestamp(&w[1].0),
                });
            }
            let (timestamps, prices) = obs.into_iter().map(|(t, p, _)| (t, p)).unzip();
            Ok(PriceSeries {
                symbol,
                timestamps,
                prices,
            })
        })
        .collect()
}

/// Writes series in the long `date,symbol,price` format accepted by [`parse_price_table`].
pub fn write_price_table<W: Write>(writer: W, series: &[PriceSeries]) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["date", "symbol", "price"])?;
    for s in series {
        for (t, p) in s.timestamps.iter().zip(&s.prices) {
            csv.write_record([format_timestamp(t), s.symbol.clone(), p.to_string()])?;
        }
    }
    csv.flush()
}

/// Intraday window of sample instants, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionWindow {
    pub open: NaiveTime,
    pub close: NaiveTime,
}

impl Default for SessionWindow {
    fn default() -> Self {
        Self {
            open: NaiveTime::from_hms_opt(10, 45, 0).unwrap(),
            close: NaiveTime::from_hms_opt(14, 45, 0).unwrap(),
        }
    }
}

impl std::str::FromStr for SessionWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |p: &str| {
            NaiveTime::parse_from_str(p.trim(), "%H:%M")
                .or_else(|_| NaiveTime::parse_from_str(p.trim(), "%H:%M:%S"))
                .map_err(|_| Error::Invalid(format!("bad session time `{p}`")))
        };
        let (open, close) = s
            .split_once('-')
            .ok_or_else(|| Error::Invalid(format!("session must look like HH:MM-HH:MM, got `{s}`")))?;
        Ok(Self {
            open: parse(open)?,
            close: parse(close)?,
        })
    }
}

/// How return instants are sampled from a price series.
#[derive(Debug, Clone, PartialEq)]
pub enum ReturnSampling {
    /// Horizon and stride counted in observations, e.g. trading days for daily data.
    Steps { horizon: usize, stride: usize },
    /// Wall-clock horizon and stride; sample instants lie inside the session of each day.
    Clock {
        horizon: Duration,
        stride: Duration,
        session: SessionWindow,
    },
}

impl ReturnSampling {
    pub fn daily() -> Self {
        ReturnSampling::Steps { horizon: 1, stride: 1 }
    }

    /// One-hour returns sampled every minute inside the default session.
    pub fn intraday() -> Self {
        ReturnSampling::Clock {
            horizon: Duration::hours(1),
            stride: Duration::minutes(1),
            session: SessionWindow::default(),
        }
    }
}

/// Arithmetic returns `(S(t+h) - S(t)) / S(t)` at every sample instant where both prices exist.
pub fn compute_returns(series: &PriceSeries, sampling: &ReturnSampling) -> Result<ReturnSeries> {
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    match sampling {
        ReturnSampling::Steps { horizon, stride } => {
            if *horizon == 0 || *stride == 0 {
                return Err(Error::Invalid("horizon and stride must be positive".into()));
            }
            let n = series.len();
            for i in (0..n).step_by(*stride) {
                if i + horizon >= n {
                    break;
                }
                let (s0, s1) = (series.prices[i], series.prices[i + horizon]);
                timestamps.push(series.timestamps[i]);
                values.push((s1 - s0) / s0);
            }
        }
        ReturnSampling::Clock {
            horizon,
            stride,
            session,
        } => {
            if *horizon <= Duration::zero() || *stride <= Duration::zero() {
                return Err(Error::Invalid("horizon and stride must be positive".into()));
            }
            if session.open > session.close {
                return Err(Error::Invalid("session opens after it closes".into()));
            }
            let mut days: Vec<_> = series.timestamps.iter().map(|t| t.date()).collect();
            days.dedup();
            for day in days {
                let close = day.and_time(session.close);
                let mut t = day.and_time(session.open);
                while t <= close {
                    if let (Some(s0), Some(s1)) = (series.price_at(&t), series.price_at(&(t + *horizon))) {
                        timestamps.push(t);
                        values.push((s1 - s0) / s0);
                    }
                    t += *stride;
                }
            }
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyReturns {
            symbol: series.symbol.clone(),
        });
    }
    Ok(ReturnSeries {
        symbol: series.symbol.clone(),
        timestamps,
        values,
        normalized: false,
    })
}

/// Inclusive time interval; an open end is unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeRange {
    pub start: Option<Timestamp>,
    pub end: Option<Timestamp>,
}

impl TimeRange {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn between(start: Timestamp, end: Timestamp) -> Self {
        Self {
            start: Some(start),
            end: Some(end),
        }
    }

    pub fn contains(&self, t: &Timestamp) -> bool {
        self.start.is_none_or(|s| *t >= s) && self.end.is_none_or(|e| *t <= e)
    }
}

/// Builds a rectangular panel from the series that have a value at every grid instant.
///
/// The grid is every instant inside `range` observed by a strict majority of the
/// input series. Symbols missing any grid instant are dropped (complete-case);
/// instants nobody or only a minority observed never enter the grid.
pub fn align_universe(series: &[ReturnSeries], range: TimeRange) -> Result<ReturnPanel> {
    if let (Some(s), Some(e)) = (range.start, range.end) {
        if s > e {
            return Err(Error::Invalid("range start is after range end".into()));
        }
    }
    let normalized = series.first().is_some_and(|s| s.normalized);
    if series.iter().any(|s| s.normalized != normalized) {
        return Err(Error::Invalid("cannot align normalized and raw series together".into()));
    }

    let mut seen: BTreeMap<Timestamp, usize> = BTreeMap::new();
    for s in series {
        for t in s.timestamps.iter().filter(|t| range.contains(t)) {
            *seen.entry(*t).or_default() += 1;
        }
    }
    let grid: Vec<Timestamp> = seen
        .into_iter()
        .filter(|&(_, n)| 2 * n > series.len())
        .map(|(t, _)| t)
        .collect();
    if grid.is_empty() {
        return Err(Error::EmptyRange);
    }

    let mut kept: Vec<(&str, Vec<f64>)> = Vec::new();
    for s in series {
        let lookup: HashMap<&Timestamp, f64> = s.timestamps.iter().zip(s.values.iter().copied()).collect();
        let row: Option<Vec<f64>> = grid.iter().map(|t| lookup.get(t).copied()).collect();
        if let Some(row) = row {
            kept.push((&s.symbol, row));
        }
    }
    if kept.len() < 2 {
        return Err(Error::InsufficientUniverse { found: kept.len() });
    }
    kept.sort_by(|a, b| a.0.cmp(b.0));

    let t = grid.len();
    let mut values = Array2::zeros((kept.len(), t));
    for (mut dst, (_, row)) in values.rows_mut().into_iter().zip(&kept) {
        dst.assign(&ndarray::ArrayView1::from(row.as_slice()));
    }
    let symbols = kept.into_iter().map(|(s, _)| s.to_string()).collect();
    ReturnPanel::new(symbols, grid, values, normalized)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn days(n: usize) -> Vec<Timestamp> {
        let start = ts("2001-01-01");
        (0..n).map(|i| start + Duration::days(i as i64)).collect()
    }

    fn prices(values: &[f64]) -> PriceSeries {
        PriceSeries::new("A", days(values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn parses_single_symbol() {
        let text = "date,symbol,price\n2001-01-03,A,3\n2001-01-01,A,1\n2001-01-02,A,2\n";
        let out = parse_price_table(text.as_bytes(), &PriceTableFormat::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].prices, vec![1.0, 2.0, 3.0]);
        assert_eq!(out[0].timestamps, days(3));
    }

    #[test]
    fn groups_interleaved_symbols() {
        let text = "date,symbol,price\n2001-01-02,B,20\n2001-01-01,A,1\n2001-01-01,B,10\n2001-01-02,A,2\n";
        let out = parse_price_table(text.as_bytes(), &PriceTableFormat::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].symbol, "A");
        assert_eq!(out[0].prices, vec![1.0, 2.0]);
        assert_eq!(out[1].symbol, "B");
        assert_eq!(out[1].prices, vec![10.0, 20.0]);
    }

    #[test]
    fn rejects_zero_price() {
        let text = "date,symbol,price\n2001-01-01,A,1\n2001-01-02,A,0\n";
        let err = parse_price_table(text.as_bytes(), &PriceTableFormat::default()).unwrap_err();
        assert!(matches!(err, Error::NonPositivePrice { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "date,symbol,price\n2001-01-01,A,1\n2001-01-02,A\n";
        let err = parse_price_table(text.as_bytes(), &PriceTableFormat::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let text = "date,symbol,price\n2001-01-01,A,abc\n";
        let err = parse_price_table(text.as_bytes(), &PriceTableFormat::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicate_timestamp() {
        let text = "date,symbol,price\n2001-01-01,A,1\n2001-01-01,A,2\n";
        let err = parse_price_table(text.as_bytes(), &PriceTableFormat::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateTimestamp { .. }));
    }

    #[test]
    fn daily_returns() {
        let r = compute_returns(&prices(&[100.0, 110.0]), &ReturnSampling::daily()).unwrap();
        assert_eq!(r.values, vec![0.10]);
        let r = compute_returns(&prices(&[100.0, 110.0, 99.0]), &ReturnSampling::daily()).unwrap();
        assert_eq!(r.values.len(), 2);
        assert!((r.values[0] - 0.10).abs() < 1e-15);
        assert!((r.values[1] + 0.10).abs() < 1e-15);
        assert_eq!(r.timestamps, days(2));
        let r = compute_returns(&prices(&[50.0, 50.0, 50.0]), &ReturnSampling::daily()).unwrap();
        assert_eq!(r.values, vec![0.0, 0.0]);
    }

    #[test]
    fn single_price_has_no_return() {
        let err = compute_returns(&prices(&[100.0]), &ReturnSampling::daily()).unwrap_err();
        assert!(matches!(err, Error::EmptyReturns { .. }));
    }

    #[test]
    fn strided_steps() {
        let p = prices(&[1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        let r = compute_returns(&p, &ReturnSampling::Steps { horizon: 2, stride: 2 }).unwrap();
        // instants 0, 2 have partners at 2, 4; instant 4 has none at 6
        assert_eq!(r.values, vec![3.0, 3.0]);
    }

    #[test]
    fn intraday_session_sampling() {
        let day = ts("2008-03-03").date();
        let start = day.and_hms_opt(9, 30, 0).unwrap();
        let minutes = 6 * 60 + 30;
        let timestamps: Vec<_> = (0..=minutes).map(|m| start + Duration::minutes(m)).collect();
        let values: Vec<f64> = (0..=minutes).map(|m| 100.0 + m as f64).collect();
        let series = PriceSeries::new("X", timestamps, values).unwrap();
        let r = compute_returns(&series, &ReturnSampling::intraday()).unwrap();
        // 10:45 through 14:45 inclusive, every minute
        assert_eq!(r.len(), 4 * 60 + 1);
        assert_eq!(r.timestamps[0], day.and_hms_opt(10, 45, 0).unwrap());
        assert_eq!(*r.timestamps.last().unwrap(), day.and_hms_opt(14, 45, 0).unwrap());
        let s0 = 100.0 + 75.0;
        assert!((r.values[0] - 60.0 / s0).abs() < 1e-15);
    }

    #[test]
    fn session_from_str() {
        let s: SessionWindow = "10:45-14:45".parse().unwrap();
        assert_eq!(s, SessionWindow::default());
        assert!("10:45".parse::<SessionWindow>().is_err());
    }

    fn returns(symbol: &str, stamps: &[Timestamp]) -> ReturnSeries {
        let values = stamps.iter().enumerate().map(|(i, _)| i as f64 * 0.01).collect();
        ReturnSeries::new(symbol, stamps.to_vec(), values).unwrap()
    }

    #[test]
    fn align_complete_universe() {
        let grid = days(10);
        let all = vec![returns("A", &grid), returns("B", &grid), returns("C", &grid)];
        let panel = align_universe(&all, TimeRange::all()).unwrap();
        assert_eq!(panel.values.dim(), (3, 10));
    }

    #[test]
    fn align_drops_incomplete_symbol() {
        let grid = days(10);
        let mut holey = grid.clone();
        holey.remove(4);
        let all = vec![returns("A", &grid), returns("B", &holey), returns("C", &grid)];
        let panel = align_universe(&all, TimeRange::all()).unwrap();
        assert_eq!(panel.symbols, vec!["A", "C"]);
        assert_eq!(panel.values.dim(), (2, 10));
    }

    #[test]
    fn align_skips_shared_gap() {
        let mut grid = days(11);
        grid.remove(5);
        let all = vec![returns("A", &grid), returns("B", &grid), returns("C", &grid)];
        let panel = align_universe(&all, TimeRange::all()).unwrap();
        assert_eq!(panel.values.dim(), (3, 10));
        assert!(!panel.timestamps.contains(&days(11)[5]));
    }

    #[test]
    fn align_errors() {
        let grid = days(5);
        let err = align_universe(&[returns("A", &grid)], TimeRange::all()).unwrap_err();
        assert!(matches!(err, Error::InsufficientUniverse { found: 1 }));
        let far = TimeRange::between(ts("2020-01-01"), ts("2020-02-01"));
        let err = align_universe(&[returns("A", &grid), returns("B", &grid)], far).unwrap_err();
        assert!(matches!(err, Error::EmptyRange));
    }

    #[test]
    fn align_respects_range() {
        let grid = days(10);
        let all = vec![returns("A", &grid), returns("B", &grid)];
        let panel = align_universe(&all, TimeRange::between(grid[2], grid[6])).unwrap();
        assert_eq!(panel.timestamps, grid[2..=6].to_vec());
    }
}
