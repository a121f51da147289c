//! File formats: matrix, panel, similarity, timeline, histogram and sector-map
//! CSVs, and the on-disk bundle of correlation windows.
//!
//! Floating point values are written with 17 significant digits so every
//! reader returns bit-identical values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::cluster::StateSequence;
use crate::corr::CorrelationWindow;
use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::similarity::{Measure, SimilarityMatrix};
use crate::states::{Histogram, Sector, SectorMap};
use crate::synth::{RegimeSpec, Target};
use crate::time::{format_timestamp, parse_timestamp, Timestamp};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: `{s}`"),
    })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io("<stream>", source),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Attaches `path` to stream-level I/O errors.
fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r)
}

/// Square matrix with row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub labels: Vec<String>,
    pub values: Array2<f64>,
}

pub fn write_matrix_csv<W: Write>(w: W, labels: &[String], values: &Array2<f64>) -> Result<()> {
    if values.dim() != (labels.len(), labels.len()) {
        return Err(Error::Invalid(format!(
            "{} labels for a {}x{} matrix",
            labels.len(),
            values.nrows(),
            values.ncols()
        )));
    }
    let mut csv = csv::Writer::from_writer(w);
    let header = std::iter::once(String::new()).chain(labels.iter().cloned());
    csv.write_record(header).map_err(csv_error)?;
    for (label, row) in labels.iter().zip(values.rows()) {
        let rec = std::iter::once(label.clone()).chain(row.iter().map(|v| fmt_f64(*v)));
        csv.write_record(rec).map_err(csv_error)?;
    }
    csv.flush().map_err(io_err)
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<LabeledMatrix> {
    let mut rows = reader(r).into_records();
    let header = rows.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty matrix file".into(),
    })??;
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let k = labels.len();
    let mut values = Array2::zeros((k, k));
    let mut n = 0;
    for (i, rec) in rows.enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        if rec.len() != k + 1 {
            return Err(Error::Parse {
                line,
                message: format!("row {} has {} fields, expected {}", i + 1, rec.len(), k + 1),
            });
        }
        if i >= k {
            return Err(Error::Parse {
                line,
                message: format!("more than {k} rows"),
            });
        }
        if rec[0] != labels[i] {
            return Err(Error::Parse {
                line,
                message: format!("row label `{}` does not match column `{}`", &rec[0], labels[i]),
            });
        }
        for j in 0..k {
            values[[i, j]] = parse_f64(&rec[j + 1], line)?;
        }
        n += 1;
    }
    if n != k {
        return Err(Error::Parse {
            line: n + 2,
            message: format!("expected {k} rows, found {n}"),
        });
    }
    Ok(LabeledMatrix { labels, values })
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        csv_error(e)
    }
}

pub fn save_matrix(path: &Path, labels: &[String], values: &Array2<f64>) -> Result<()> {
    at_path(path, write_matrix_csv(create(path)?, labels, values))
}

pub fn load_matrix(path: &Path) -> Result<LabeledMatrix> {
    at_path(path, read_matrix_csv(open(path)?))
}

pub fn write_similarity_csv<W: Write>(w: W, sim: &SimilarityMatrix) -> Result<()> {
    let labels: Vec<String> = sim.labels.iter().map(format_timestamp).collect();
    write_matrix_csv(w, &labels, &sim.values)
}

pub fn read_similarity_csv<R: Read>(r: R, measure: Measure) -> Result<SimilarityMatrix> {
    let m = read_matrix_csv(r)?;
    let labels = m
        .labels
        .iter()
        .map(|l| {
            parse_timestamp(l).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("bad date label `{l}`"),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SimilarityMatrix {
        values: m.values,
        labels,
        measure,
    })
}

/// Wide panel layout: `date,<symbol>...`, one row per timestamp.
pub fn write_panel_csv<W: Write>(w: W, panel: &ReturnPanel) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let header = std::iter::once("date".to_string()).chain(panel.symbols.iter().cloned());
    csv.write_record(header)?;
    for (t, col) in panel.timestamps.iter().zip(panel.values.columns()) {
        let rec = std::iter::once(format_timestamp(t)).chain(col.iter().map(|v| fmt_f64(*v)));
        csv.write_record(rec)?;
    }
    csv.flush().map_err(io_err)
}

pub fn read_panel_csv<R: Read>(r: R) -> Result<ReturnPanel> {
    let mut rows = reader(r).into_records();
    let header = rows.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty panel file".into(),
    })??;
    if header.get(0) != Some("date") {
        return Err(Error::Parse {
            line: 1,
            message: "panel header must start with `date`".into(),
        });
    }
    let symbols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let k = symbols.len();
    let mut stamps = Vec::new();
    let mut flat = Vec::new();
    for (i, rec) in rows.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != k + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", k + 1, rec.len()),
            });
        }
        stamps.push(parse_timestamp(&rec[0]).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad date `{}`", &rec[0]),
        })?);
        for v in rec.iter().skip(1) {
            flat.push(parse_f64(v, line)?);
        }
    }
    let t = stamps.len();
    let values = Array2::from_shape_vec((t, k), flat)
        .expect("row lengths checked")
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    ReturnPanel::new(symbols, stamps, values, false)
}

pub fn save_panel(path: &Path, panel: &ReturnPanel) -> Result<()> {
    at_path(path, write_panel_csv(create(path)?, panel))
}

pub fn load_panel(path: &Path) -> Result<ReturnPanel> {
    at_path(path, read_panel_csv(open(path)?))
}

pub fn write_timeline_csv<W: Write>(w: W, seq: &StateSequence) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["date", "state"])?;
    for (t, s) in &seq.entries {
        csv.write_record([format_timestamp(t), s.to_string()])?;
    }
    csv.flush().map_err(io_err)
}

pub fn read_timeline_csv<R: Read>(r: R) -> Result<StateSequence> {
    let mut csv = csv::Reader::from_reader(r);
    let mut entries = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        if rec.len() != 2 {
            return Err(bad("expected `date,state`"));
        }
        let t = parse_timestamp(&rec[0]).ok_or_else(|| bad("bad date"))?;
        let s: usize = rec[1].trim().parse().map_err(|_| bad("bad state id"))?;
        entries.push((t, s));
    }
    Ok(StateSequence { entries })
}

pub fn write_histogram_csv<W: Write>(w: W, h: &Histogram) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["bin_left", "bin_right", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        csv.write_record([fmt_f64(h.bin_edges[i]), fmt_f64(h.bin_edges[i + 1]), c.to_string()])?;
    }
    csv.flush().map_err(io_err)
}

pub fn read_histogram_csv<R: Read>(r: R, source: &str) -> Result<Histogram> {
    let mut csv = csv::Reader::from_reader(r);
    let mut edges = Vec::new();
    let mut counts = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                message: "expected `bin_left,bin_right,count`".into(),
            });
        }
        let left = parse_f64(&rec[0], line)?;
        let right = parse_f64(&rec[1], line)?;
        if edges.is_empty() {
            edges.push(left);
        } else if *edges.last().unwrap() != left {
            return Err(Error::Parse {
                line,
                message: "bins are not contiguous".into(),
            });
        }
        edges.push(right);
        counts.push(rec[2].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad count `{}`", &rec[2]),
        })?);
    }
    Ok(Histogram {
        bin_edges: edges,
        counts,
        source: source.to_string(),
    })
}

pub fn read_sector_map<R: Read>(r: R) -> Result<SectorMap> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = csv.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "symbol" || &headers[1] != "sector" {
        return Err(Error::Parse {
            line: 1,
            message: "sector map header must be `symbol,sector`".into(),
        });
    }
    let mut map = SectorMap::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let sector: Sector = rec[1].parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        map.insert(&rec[0], sector).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    }
    Ok(map)
}

pub fn write_sector_map<W: Write>(w: W, map: &SectorMap) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["symbol", "sector"])?;
    for (s, sec) in map.iter() {
        csv.write_record([s, sec.code()])?;
    }
    csv.flush().map_err(io_err)
}

pub fn load_sector_map(path: &Path) -> Result<SectorMap> {
    at_path(path, read_sector_map(open(path)?))
}

const WINDOW_INDEX: &str = "index.csv";

/// Writes each window as a matrix CSV plus an `index.csv` holding window metadata.
pub fn save_windows(dir: &Path, windows: &[CorrelationWindow]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index_path = dir.join(WINDOW_INDEX);
    let mut index = csv::Writer::from_writer(create(&index_path)?);
    index.write_record(["label_date", "window_start", "window_end", "sample_count", "file"])?;
    let mut written = Vec::with_capacity(windows.len() + 1);
    for (i, w) in windows.iter().enumerate() {
        let name = format!("window_{:04}.csv", i + 1);
        let path = dir.join(&name);
        save_matrix(&path, &w.symbols, &w.values)?;
        index.write_record([
            format_timestamp(&w.label_date),
            format_timestamp(&w.window_start),
            format_timestamp(&w.window_end),
            w.sample_count.to_string(),
            name,
        ])?;
        written.push(path);
    }
    index.flush().map_err(|e| Error::io(&index_path, e))?;
    written.push(index_path);
    Ok(written)
}

pub fn load_windows(dir: &Path) -> Result<Vec<CorrelationWindow>> {
    let index_path = dir.join(WINDOW_INDEX);
    let mut index = csv::Reader::from_reader(open(&index_path)?);
    let mut out = Vec::new();
    for (i, rec) in index.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |m: String| Error::Parse { line, message: m };
        if rec.len() != 5 {
            return Err(bad("index rows need 5 fields".into()));
        }
        let date = |s: &str| parse_timestamp(s).ok_or_else(|| bad(format!("bad date `{s}`")));
        let label_date: Timestamp = date(&rec[0])?;
        let window_start = date(&rec[1])?;
        let window_end = date(&rec[2])?;
        let sample_count = rec[3]
            .parse()
            .map_err(|_| bad(format!("bad sample count `{}`", &rec[3])))?;
        let m = load_matrix(&dir.join(&rec[4]))?;
        out.push(CorrelationWindow {
            values: m.values,
            symbols: m.labels,
            window_start,
            window_end,
            label_date,
            sample_count,
        });
    }
    Ok(out)
}

/// Reads a synthetic spec, loading any `matrix_file` targets relative to the spec's directory.
pub fn load_regime_spec(path: &Path) -> Result<RegimeSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut spec = RegimeSpec::from_json(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for seg in &mut spec.segments {
        if let Target::File { matrix_file } = &seg.target {
            let m = load_matrix(&base.join(matrix_file))?;
            seg.target = Target::Matrix(m.values);
        }
    }
    Ok(spec)
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
