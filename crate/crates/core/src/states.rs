//! Characterization of market states: averages, sector ordering, differences
//! to the overall mean and histograms of correlation coefficients.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cluster::StateCut;
use crate::corr::{average_matrix, CorrelationWindow};
use crate::error::{Error, Result};

/// The ten GICS sectors, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sector {
    E,
    M,
    I,
    CD,
    CS,
    H,
    F,
    IT,
    C,
    U,
}

impl Sector {
    pub const ALL: [Sector; 10] = [
        Sector::E,
        Sector::M,
        Sector::I,
        Sector::CD,
        Sector::CS,
        Sector::H,
        Sector::F,
        Sector::IT,
        Sector::C,
        Sector::U,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Sector::E => "E",
            Sector::M => "M",
            Sector::I => "I",
            Sector::CD => "CD",
            Sector::CS => "CS",
            Sector::H => "H",
            Sector::F => "F",
            Sector::IT => "IT",
            Sector::C => "C",
            Sector::U => "U",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sector::E => "Energy",
            Sector::M => "Materials",
            Sector::I => "Industrials",
            Sector::CD => "Consumer Discretionary",
            Sector::CS => "Consumer Staples",
            Sector::H => "Health Care",
            Sector::F => "Financials",
            Sector::IT => "Information Technology",
            Sector::C => "Communication",
            Sector::U => "Utilities",
        }
    }
}

impl std::str::FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sector::ALL
            .into_iter()
            .find(|sec| sec.code() == s.trim())
            .ok_or_else(|| Error::Invalid(format!("unknown sector code `{s}`")))
    }
}

/// Symbol to sector assignment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectorMap {
    map: BTreeMap<String, Sector>,
}

impl SectorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, symbol: impl Into<String>, sector: Sector) -> Result<()> {
        let symbol = symbol.into();
        if self.map.contains_key(&symbol) {
            return Err(Error::Invalid(format!("symbol {symbol} assigned twice in sector map")));
        }
        self.map.insert(symbol, sector);
        Ok(())
    }

    pub fn get(&self, symbol: &str) -> Option<Sector> {
        self.map.get(symbol).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Sector)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, Sector)> for SectorMap {
    fn from_iter<T: IntoIterator<Item = (String, Sector)>>(iter: T) -> Self {
        Self {
            map: iter.into_iter().collect(),
        }
    }
}

/// Average matrix of every state, at position `state_id - 1`.
pub fn state_average(cut: &StateCut, windows: &[CorrelationWindow]) -> Result<Vec<CorrelationWindow>> {
    cut.states
        .iter()
        .enumerate()
        .map(|(s, members)| {
            if members.is_empty() {
                return Err(Error::Invalid(format!("state {} has no members", s + 1)));
            }
            let refs: Vec<&CorrelationWindow> = members.iter().map(|&i| &windows[i]).collect();
            average_matrix(&refs)
        })
        .collect()
}

/// Contiguous run of rows belonging to one sector after sorting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorBlock {
    pub sector: Sector,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorOrdering {
    /// `permutation[new] = old` row index.
    pub permutation: Vec<usize>,
    pub blocks: Vec<SectorBlock>,
}

/// Ordering that groups `symbols` by sector, alphabetical inside each sector.
pub fn sector_ordering(symbols: &[String], map: &SectorMap) -> Result<SectorOrdering> {
    let mut keyed = Vec::with_capacity(symbols.len());
    for (i, s) in symbols.iter().enumerate() {
        let sector = map.get(s).ok_or_else(|| Error::MissingSector(s.clone()))?;
        keyed.push((sector, s.as_str(), i));
    }
    keyed.sort();
    let mut blocks: Vec<SectorBlock> = Vec::new();
    for (pos, (sector, _, _)) in keyed.iter().enumerate() {
        match blocks.last_mut() {
            Some(b) if b.sector == *sector => b.range.end = pos + 1,
            _ => blocks.push(SectorBlock {
                sector: *sector,
                range: pos..pos + 1,
            }),
        }
    }
    Ok(SectorOrdering {
        permutation: keyed.into_iter().map(|(_, _, i)| i).collect(),
        blocks,
    })
}

/// Applies a symmetric row/column permutation (`permutation[new] = old`).
pub fn permute(matrix: &CorrelationWindow, permutation: &[usize]) -> CorrelationWindow {
    let k = permutation.len();
    let values = Array2::from_shape_fn((k, k), |(i, j)| matrix.values[[permutation[i], permutation[j]]]);
    CorrelationWindow {
        values,
        symbols: permutation.iter().map(|&i| matrix.symbols[i].clone()).collect(),
        ..matrix.clone()
    }
}

/// Reorders rows and columns into sector blocks.
pub fn sector_sort(matrix: &CorrelationWindow, map: &SectorMap) -> Result<(CorrelationWindow, SectorOrdering)> {
    let ordering = sector_ordering(&matrix.symbols, map)?;
    Ok((permute(matrix, &ordering.permutation), ordering))
}

/// Elementwise `state_avg - overall`, with an exactly zero diagonal.
pub fn diff_to_overall(state_avg: &CorrelationWindow, overall: &CorrelationWindow) -> Result<Array2<f64>> {
    state_avg.check_same_universe(overall)?;
    let mut d = &state_avg.values - &overall.values;
    d.diag_mut().fill(0.0);
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub source: String,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Indices of non-empty bins.
    pub fn occupied(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, _)| i)
            .collect()
    }
}

pub const DEFAULT_BINS: usize = 40;

/// Bin of `v` among `bins` equal bins over [-1, 1]; the last bin is closed on the right.
pub fn bin_index(v: f64, bins: usize) -> usize {
    let pos = ((v + 1.0) / 2.0 * bins as f64).floor();
    (pos.max(0.0) as usize).min(bins - 1)
}

/// Histogram of the coefficients of `window` over [-1, 1].
///
/// Off-diagonal entries are counted once per unordered pair; with
/// `include_diagonal` the K unit entries are added.
pub fn coefficient_histogram(
    window: &CorrelationWindow,
    bins: usize,
    include_diagonal: bool,
    source: impl Into<String>,
) -> Result<Histogram> {
    matrix_histogram(&window.values, bins, include_diagonal, source)
}

/// Same as [`coefficient_histogram`] for a bare square matrix.
pub fn matrix_histogram(
    values: &Array2<f64>,
    bins: usize,
    include_diagonal: bool,
    source: impl Into<String>,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let k = values.nrows();
    let mut counts = vec![0u64; bins];
    for i in 0..k {
        let from = if include_diagonal { i } else { i + 1 };
        for j in from..k {
            let v = values[[i, j]];
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            counts[bin_index(v, bins)] += 1;
        }
    }
    let width = 2.0 / bins as f64;
    let bin_edges = (0..=bins)
        .map(|i| if i == bins { 1.0 } else { -1.0 + i as f64 * width })
        .collect();
    Ok(Histogram {
        bin_edges,
        counts,
        source: source.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;

    fn window(values: Array2<f64>, symbols: &[&str]) -> CorrelationWindow {
        let t = parse_timestamp("2000-01-03").unwrap();
        CorrelationWindow {
            values,
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
            window_start: t,
            window_end: t,
            label_date: t,
            sample_count: 10,
        }
    }

    fn uniform(k: usize, c: f64) -> CorrelationWindow {
        let mut m = Array2::from_elem((k, k), c);
        m.diag_mut().fill(1.0);
        let names: Vec<String> = (0..k).map(|i| format!("S{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        window(m, &refs)
    }

    fn sectors(pairs: &[(&str, Sector)]) -> SectorMap {
        pairs.iter().map(|(s, c)| (s.to_string(), *c)).collect()
    }

    #[test]
    fn state_average_examples() {
        let ws = vec![uniform(3, 0.2), uniform(3, 0.6), uniform(3, 0.9)];
        let cut = StateCut {
            assignment: vec![1, 1, 2],
            states: vec![vec![0, 1], vec![2]],
        };
        let avg = state_average(&cut, &ws).unwrap();
        assert!((avg[0].values[[0, 1]] - 0.4).abs() < 1e-15);
        assert_eq!(avg[1].values, ws[2].values);
    }

    #[test]
    fn sorted_input_keeps_identity() {
        let map = sectors(&[("A", Sector::E), ("B", Sector::E), ("C", Sector::F), ("D", Sector::U)]);
        let w = window(Array2::eye(4), &["A", "B", "C", "D"]);
        let (sorted, ord) = sector_sort(&w, &map).unwrap();
        assert_eq!(ord.permutation, vec![0, 1, 2, 3]);
        assert_eq!(sorted.values, w.values);
        assert_eq!(
            ord.blocks,
            vec![
                SectorBlock {
                    sector: Sector::E,
                    range: 0..2
                },
                SectorBlock {
                    sector: Sector::F,
                    range: 2..3
                },
                SectorBlock {
                    sector: Sector::U,
                    range: 3..4
                },
            ]
        );
    }

    #[test]
    fn reversed_input_reverses() {
        let map = sectors(&[("A", Sector::E), ("B", Sector::M), ("C", Sector::I)]);
        let m = ndarray::arr2(&[[1.0, 0.1, 0.2], [0.1, 1.0, 0.3], [0.2, 0.3, 1.0]]);
        let w = window(m, &["C", "B", "A"]);
        let (sorted, ord) = sector_sort(&w, &map).unwrap();
        assert_eq!(ord.permutation, vec![2, 1, 0]);
        assert_eq!(sorted.symbols, vec!["A", "B", "C"]);
        assert_eq!(sorted.values[[0, 1]], 0.3);
        let (again, ord2) = sector_sort(&sorted, &map).unwrap();
        assert_eq!(ord2.permutation, vec![0, 1, 2]);
        assert_eq!(again, sorted);
    }

    #[test]
    fn unmapped_symbol() {
        let map = sectors(&[("A", Sector::E)]);
        let w = window(Array2::eye(2), &["A", "Q"]);
        match sector_sort(&w, &map) {
            Err(Error::MissingSector(s)) => assert_eq!(s, "Q"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn diff_examples() {
        let a = uniform(4, 0.4);
        assert_eq!(diff_to_overall(&a, &a).unwrap(), Array2::<f64>::zeros((4, 4)));
        let d = diff_to_overall(&uniform(4, 0.6), &a).unwrap();
        assert!((d[[1, 2]] - 0.2).abs() < 1e-15);
        assert_eq!(d[[2, 2]], 0.0);
        assert!(diff_to_overall(&uniform(3, 0.6), &a).is_err());
    }

    #[test]
    fn histogram_of_identity() {
        let h = coefficient_histogram(&uniform(3, 0.0), 4, false, "id").unwrap();
        assert_eq!(h.counts, vec![0, 0, 3, 0]);
        assert_eq!(h.bin_edges, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let with_diag = coefficient_histogram(&uniform(3, 0.0), 4, true, "id").unwrap();
        assert_eq!(with_diag.counts, vec![0, 0, 3, 3]);
    }

    #[test]
    fn histogram_top_bin() {
        let h = coefficient_histogram(&uniform(10, 0.95), DEFAULT_BINS, false, "u").unwrap();
        assert_eq!(h.counts[DEFAULT_BINS - 1], 45);
        assert_eq!(h.total(), 45);
        assert!(h.bin_edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bin_edges_are_closed_correctly() {
        assert_eq!(bin_index(-1.0, 40), 0);
        assert_eq!(bin_index(1.0, 40), 39);
        assert_eq!(bin_index(0.0, 4), 2);
        assert!(coefficient_histogram(&uniform(2, 0.0), 0, false, "x").is_err());
    }

    #[test]
    fn sector_codes() {
        for s in Sector::ALL {
            assert_eq!(s.code().parse::<Sector>().unwrap(), s);
        }
        assert!("XX".parse::<Sector>().is_err());
    }
}
