//! End-to-end driver: prices (or a synthetic spec) in, state artifacts out.
//!
//! Every artifact is first written to a staging directory inside the output
//! directory and moved into place only when all stages succeed, so a failed
//! run leaves no partial outputs behind. The manifest lists every artifact with
//! its SHA-256; identical inputs and config give identical hashes.

use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{build_tree, cut_to_states, state_timeline, ClusterConfig};
use crate::corr::{average_matrix, correlation_windows, CorrelationWindow, WindowSpec};
use crate::error::{Error, Result};
use crate::ingest::{
    align_universe, compute_returns, parse_price_table, PriceTableFormat, ReturnPanel, ReturnSampling, SessionWindow,
    TimeRange,
};
use crate::io;
use crate::normalize::{normalize_panel, DegeneratePolicy, LocalNormConfig};
use crate::render::{render_heatmap, render_timeline, render_tree, ColorRange, HeatmapStyle};
use crate::similarity::{similarity_matrix, Measure, PowerIteration};
use crate::states::{
    coefficient_histogram, diff_to_overall, permute, sector_ordering, state_average, SectorMap, DEFAULT_BINS,
};
use crate::synth::generate_regime_panel;
use crate::time::format_timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    #[default]
    Daily,
    Intraday,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnsConfig {
    pub mode: SamplingMode,
    /// Daily mode: horizon and stride in observations.
    pub horizon_days: usize,
    pub stride_days: usize,
    /// Intraday mode: horizon and stride in minutes.
    pub horizon_minutes: i64,
    pub stride_minutes: i64,
    pub session: SessionWindow,
}

impl Default for ReturnsConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::Daily,
            horizon_days: 1,
            stride_days: 1,
            horizon_minutes: 60,
            stride_minutes: 1,
            session: SessionWindow::default(),
        }
    }
}

impl ReturnsConfig {
    pub fn sampling(&self) -> ReturnSampling {
        match self.mode {
            SamplingMode::Daily => ReturnSampling::Steps {
                horizon: self.horizon_days,
                stride: self.stride_days,
            },
            SamplingMode::Intraday => ReturnSampling::Clock {
                horizon: Duration::minutes(self.horizon_minutes),
                stride: Duration::minutes(self.stride_minutes),
                session: self.session,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    /// Unset means on for daily data and off for intraday data.
    pub enabled: Option<bool>,
    pub n: usize,
    pub degenerate_policy: DegeneratePolicy,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            enabled: None,
            n: 13,
            degenerate_policy: DegeneratePolicy::EmitZero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Long-format price table.
    pub prices: Option<PathBuf>,
    /// Synthetic regime spec used instead of a price table.
    pub synthetic: Option<PathBuf>,
    pub sector_map: Option<PathBuf>,
    pub returns: ReturnsConfig,
    pub range: TimeRange,
    pub normalization: NormalizationConfig,
    pub window: WindowSpec,
    pub measure: Measure,
    pub cluster: ClusterConfig,
    /// Run the state characterization stage (needs a sector map).
    pub states: bool,
    pub histogram_bins: usize,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prices: None,
            synthetic: None,
            sector_map: None,
            returns: ReturnsConfig::default(),
            range: TimeRange::all(),
            normalization: NormalizationConfig::default(),
            window: WindowSpec::two_months(),
            measure: Measure::Zeta,
            cluster: ClusterConfig::default(),
            states: true,
            histogram_bins: DEFAULT_BINS,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn normalize_enabled(&self) -> bool {
        self.normalization
            .enabled
            .unwrap_or(self.returns.mode == SamplingMode::Daily)
    }

    fn validate(&self) -> Result<()> {
        match (&self.prices, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Invalid("give either prices or synthetic, not both".into())),
            (None, None) => return Err(Error::Invalid("no input: set prices or synthetic".into())),
            _ => {}
        }
        if self.states && self.sector_map.is_none() {
            return Err(Error::MissingSectorMap);
        }
        for p in [&self.prices, &self.synthetic, &self.sector_map].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        if self.normalization.n < 2 {
            return Err(Error::Invalid("normalization window must be >= 2".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Invalid("histogram_bins must be >= 1".into()));
        }
        if self.cluster.threshold.is_nan() || self.cluster.threshold < 0.0 {
            return Err(Error::Invalid("cluster threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub symbols: usize,
    pub timestamps: usize,
    pub windows: usize,
    pub states: usize,
    pub measure: Measure,
    pub threshold: f64,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

/// Collects artifacts in the staging directory.
struct Staging {
    dir: tempfile::TempDir,
    artifacts: Vec<(String, String)>,
}

impl Staging {
    fn path(&mut self, rel: &str, kind: &str) -> PathBuf {
        self.artifacts.push((rel.to_string(), kind.to_string()));
        self.dir.path().join(rel)
    }

    fn text(&mut self, rel: &str, kind: &str, text: &str) -> Result<()> {
        let p = self.path(rel, kind);
        io::save_text(&p, text)
    }

    fn csv<F>(&mut self, rel: &str, kind: &str, write: F) -> Result<()>
    where
        F: FnOnce(std::io::BufWriter<File>) -> Result<()>,
    {
        let p = self.path(rel, kind);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        write(std::io::BufWriter::new(f)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(&p, source),
            other => other,
        })
    }
}

fn load_panel(cfg: &PipelineConfig) -> Result<ReturnPanel> {
    let panel = if let Some(path) = &cfg.prices {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let prices = parse_price_table(std::io::BufReader::new(f), &PriceTableFormat::default())?;
        let sampling = cfg.returns.sampling();
        let returns = prices
            .iter()
            .map(|s| compute_returns(s, &sampling))
            .collect::<Result<Vec<_>>>()?;
        align_universe(&returns, cfg.range)?
    } else {
        let path = cfg.synthetic.as_ref().expect("validated");
        let spec = io::load_regime_spec(path)?;
        let panel = generate_regime_panel(&spec)?.panel;
        align_universe(&panel.series(), cfg.range)?
    };
    Ok(panel)
}

fn relative_name(t: &crate::time::Timestamp) -> String {
    format_timestamp(t).replace(':', "")
}

/// Runs every stage and publishes the artifacts into `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let sectors: Option<SectorMap> = if cfg.states {
        let path = cfg.sector_map.as_ref().expect("validated");
        Some(io::load_sector_map(path).map_err(|e| e.in_stage("states"))?)
    } else {
        None
    };

    let mut panel = load_panel(cfg).map_err(|e| e.in_stage("ingest"))?;
    if cfg.normalize_enabled() {
        let norm = LocalNormConfig {
            n: cfg.normalization.n,
            degenerate_policy: cfg.normalization.degenerate_policy,
        };
        panel = normalize_panel(&panel, &norm).map_err(|e| e.in_stage("normalize"))?;
    }
    let windows = correlation_windows(&panel, &cfg.window).map_err(|e| e.in_stage("corr"))?;
    let sim =
        similarity_matrix(&windows, cfg.measure, &PowerIteration::default()).map_err(|e| e.in_stage("similarity"))?;

    let full = ClusterConfig {
        threshold: 0.0,
        ..cfg.cluster
    };
    let mut tree = build_tree(&windows, &full).map_err(|e| e.in_stage("cluster"))?;
    let cut = cut_to_states(&mut tree, cfg.cluster.threshold);
    let timeline = state_timeline(&cut, &windows).map_err(|e| e.in_stage("cluster"))?;

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let dir = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(&cfg.output_dir)
        .map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut out = Staging {
        dir,
        artifacts: Vec::new(),
    };

    let write = |out: &mut Staging| -> Result<()> {
        out.csv("similarity.csv", "similarity-csv", |w| {
            io::write_similarity_csv(w, &sim)
        })?;
        let labels: Vec<String> = sim.labels.iter().map(format_timestamp).collect();
        let style = HeatmapStyle {
            title: Some(format!("{} between windows", cfg.measure)),
            ..HeatmapStyle::distances()
        };
        out.text(
            "similarity.svg",
            "similarity-svg",
            &render_heatmap(&sim.values, &labels, &style)?,
        )?;

        let record = tree.to_record();
        let p = out.path("tree.json", "tree-json");
        io::save_json(&p, &record)?;
        out.text("tree.svg", "tree-svg", &render_tree(&record))?;

        out.csv("timeline.csv", "timeline-csv", |w| io::write_timeline_csv(w, &timeline))?;
        out.text("timeline.svg", "timeline-svg", &render_timeline(&timeline))?;

        for w in &windows {
            let h = coefficient_histogram(w, cfg.histogram_bins, false, format_timestamp(&w.label_date))?;
            let rel = format!("histograms/window_{}.csv", relative_name(&w.label_date));
            out.csv(&rel, "histogram-csv", |f| io::write_histogram_csv(f, &h))?;
        }
        Ok(())
    };
    write(&mut out)?;

    if let Some(sectors) = &sectors {
        write_states(&mut out, cfg, &windows, &cut, sectors).map_err(|e| e.in_stage("states"))?;
    }

    publish(out, cfg, &panel, windows.len(), cut.n_states())
}

fn write_states(
    out: &mut Staging,
    cfg: &PipelineConfig,
    windows: &[CorrelationWindow],
    cut: &crate::cluster::StateCut,
    sectors: &SectorMap,
) -> Result<()> {
    let ordering = sector_ordering(&windows[0].symbols, sectors)?;
    let all: Vec<&CorrelationWindow> = windows.iter().collect();
    let overall = average_matrix(&all)?;
    let averages = state_average(cut, windows)?;

    let heat = |m: &CorrelationWindow, title: String, range: ColorRange| {
        let sorted = permute(m, &ordering.permutation);
        let style = HeatmapStyle {
            range,
            title: Some(title),
            blocks: ordering.blocks.clone(),
            ..HeatmapStyle::default()
        };
        render_heatmap(&sorted.values, &sorted.symbols, &style).map(|svg| (sorted, svg))
    };

    let (sorted, svg) = heat(&overall, "overall average".into(), ColorRange::Correlation)?;
    out.csv("states/overall.csv", "matrix-csv", |w| {
        io::write_matrix_csv(w, &sorted.symbols, &sorted.values)
    })?;
    out.text("states/overall.svg", "matrix-svg", &svg)?;
    let h = coefficient_histogram(&overall, cfg.histogram_bins, false, "overall")?;
    out.csv("histograms/overall.csv", "histogram-csv", |w| {
        io::write_histogram_csv(w, &h)
    })?;

    for (i, avg) in averages.iter().enumerate() {
        let id = i + 1;
        let (sorted, svg) = heat(avg, format!("state {id}"), ColorRange::Correlation)?;
        out.csv(&format!("states/state_{id:02}.csv"), "matrix-csv", |w| {
            io::write_matrix_csv(w, &sorted.symbols, &sorted.values)
        })?;
        out.text(&format!("states/state_{id:02}.svg"), "matrix-svg", &svg)?;

        let diff = CorrelationWindow {
            values: diff_to_overall(avg, &overall)?,
            ..avg.clone()
        };
        let span = diff.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let (sorted, svg) = heat(
            &diff,
            format!("state {id} minus overall"),
            ColorRange::Fixed(-span, span),
        )?;
        out.csv(&format!("states/state_{id:02}_diff.csv"), "matrix-csv", |w| {
            io::write_matrix_csv(w, &sorted.symbols, &sorted.values)
        })?;
        out.text(&format!("states/state_{id:02}_diff.svg"), "matrix-svg", &svg)?;

        let h = coefficient_histogram(avg, cfg.histogram_bins, false, format!("state {id}"))?;
        out.csv(&format!("histograms/state_{id:02}.csv"), "histogram-csv", |w| {
            io::write_histogram_csv(w, &h)
        })?;
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn publish(out: Staging, cfg: &PipelineConfig, panel: &ReturnPanel, windows: usize, states: usize) -> Result<Manifest> {
    let mut artifacts = Vec::with_capacity(out.artifacts.len());
    for (rel, kind) in &out.artifacts {
        artifacts.push(Artifact {
            path: rel.clone(),
            kind: kind.clone(),
            sha256: sha256_file(&out.dir.path().join(rel))?,
        });
    }
    let manifest = Manifest {
        symbols: panel.n_series(),
        timestamps: panel.n_times(),
        windows,
        states,
        measure: cfg.measure,
        threshold: cfg.cluster.threshold,
        artifacts,
    };
    io::save_json(&out.dir.path().join("manifest.json"), &manifest)?;

    let mut moved: Vec<PathBuf> = Vec::new();
    let names = out
        .artifacts
        .iter()
        .map(|(rel, _)| rel.as_str())
        .chain(std::iter::once("manifest.json"));
    for rel in names {
        let from = out.dir.path().join(rel);
        let to = cfg.output_dir.join(rel);
        let result = to
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| std::fs::rename(&from, &to));
        if let Err(e) = result {
            for p in &moved {
                let _ = std::fs::remove_file(p);
            }
            return Err(Error::io(&to, e));
        }
        moved.push(to);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.normalization.n, 13);
        assert_eq!(cfg.cluster.threshold, 0.1465);
        assert_eq!(cfg.window, WindowSpec::disjoint(42));
        assert!(cfg.normalize_enabled());
        let intraday = PipelineConfig {
            returns: ReturnsConfig {
                mode: SamplingMode::Intraday,
                ..ReturnsConfig::default()
            },
            ..PipelineConfig::default()
        };
        assert!(!intraday.normalize_enabled());
        assert_eq!(
            intraday.returns.sampling(),
            ReturnSampling::Clock {
                horizon: Duration::hours(1),
                stride: Duration::minutes(1),
                session: SessionWindow::default()
            }
        );
    }

    #[test]
    fn config_json_partial() {
        let cfg = PipelineConfig::from_json(
            r#"{"synthetic": "s.json", "states": false,
                "window": {"length": 40, "stride": 40, "mode": "disjoint"},
                "cluster": {"threshold": 0.05, "max_kmeans_iter": 50},
                "returns": {"mode": "intraday", "session": "10:45:00-14:45:00"}}"#,
        );
        // session is an object, not a string
        assert!(cfg.is_err());
        let cfg = PipelineConfig::from_json(
            r#"{"synthetic": "s.json", "states": false,
                "window": {"length": 40, "stride": 40, "mode": "disjoint"},
                "cluster": {"threshold": 0.05, "max_kmeans_iter": 50},
                "returns": {"mode": "intraday", "session": {"open": "10:00:00", "close": "15:00:00"}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.window.length, 40);
        assert_eq!(cfg.cluster.threshold, 0.05);
        assert_eq!(cfg.histogram_bins, DEFAULT_BINS);
        assert_eq!(cfg.returns.mode, SamplingMode::Intraday);
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn states_without_sector_map() {
        let cfg = PipelineConfig {
            synthetic: Some("whatever.json".into()),
            ..PipelineConfig::default()
        };
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(matches!(err, Error::Stage { source, .. } if matches!(*source, Error::MissingSectorMap)));
    }
}
