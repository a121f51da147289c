//! `mstates`: command-line driver for the market-states pipeline.
//!
//! Each stage has its own subcommand reading and writing the same files the
//! full `run` pipeline produces, so stages can be inspected or swapped out.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use market_states::cluster::StateSequence;
use market_states::corr::correlation_windows;
use market_states::ingest::{PriceTableFormat, SessionWindow};
use market_states::io;
use market_states::normalize::DegeneratePolicy;
use market_states::pipeline::{run_pipeline, PipelineConfig, SamplingMode};
use market_states::render::{render_heatmap, render_timeline, render_tree, ColorRange, HeatmapStyle};
use market_states::states::{matrix_histogram, permute, sector_ordering, DEFAULT_BINS};
use market_states::time::{format_timestamp, parse_timestamp};
use market_states::{
    align_universe, average_matrix, build_tree, compute_returns, cut_to_states, diff_to_overall, generate_regime_panel,
    normalize_panel, parse_price_table, similarity_matrix, state_average, state_timeline, ClusterConfig,
    CorrelationWindow, Error, InitPolicy, LocalNormConfig, Measure, PowerIteration, ReturnSampling, SectorMap,
    TimeRange, Timestamp, TreeRecord, WindowSpec,
};
use ndarray::Array2;

type Result<T> = market_states::Result<T>;

#[derive(Parser)]
#[command(
    name = "mstates",
    version,
    about = "Identify market states from correlation structure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price table -> aligned (optionally normalized) return panel CSV.
    Returns(ReturnsArgs),
    /// Return panel -> directory of correlation-matrix CSVs.
    Corr(CorrArgs),
    /// Correlation windows -> pairwise similarity matrix CSV.
    Similarity(SimilarityArgs),
    /// Correlation windows -> cluster tree JSON and state timeline CSV.
    Cluster(ClusterArgs),
    /// Correlation windows -> per-state average and difference matrices.
    States(StatesArgs),
    /// Matrix CSV -> coefficient histogram CSV.
    Hist(HistArgs),
    /// Render a matrix, similarity matrix, tree or timeline as SVG.
    Render(RenderArgs),
    /// Generate a synthetic return panel from a regime spec.
    Synth(SynthArgs),
    /// Run the whole pipeline from a JSON config and/or flags.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Daily,
    Intraday,
}

#[derive(Clone, Copy, ValueEnum)]
enum Degenerate {
    EmitZero,
    Error,
}

impl From<Degenerate> for DegeneratePolicy {
    fn from(d: Degenerate) -> Self {
        match d {
            Degenerate::EmitZero => DegeneratePolicy::EmitZero,
            Degenerate::Error => DegeneratePolicy::Error,
        }
    }
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, value_enum, default_value = "daily")]
    mode: Mode,
    /// Return horizon in trading days (daily mode).
    #[arg(long, default_value_t = 1)]
    horizon_days: usize,
    #[arg(long, default_value_t = 1)]
    stride_days: usize,
    /// Return horizon in minutes (intraday mode).
    #[arg(long, default_value_t = 60)]
    horizon_minutes: i64,
    #[arg(long, default_value_t = 1)]
    stride_minutes: i64,
    /// Intraday session as HH:MM-HH:MM.
    #[arg(long, default_value = "10:45-14:45")]
    session: SessionWindow,
}

impl SamplingArgs {
    fn sampling(&self) -> ReturnSampling {
        match self.mode {
            Mode::Daily => ReturnSampling::Steps {
                horizon: self.horizon_days,
                stride: self.stride_days,
            },
            Mode::Intraday => ReturnSampling::Clock {
                horizon: chrono::Duration::minutes(self.horizon_minutes),
                stride: chrono::Duration::minutes(self.stride_minutes),
                session: self.session,
            },
        }
    }
}

#[derive(Args)]
struct NormArgs {
    /// Force local normalization on (default: on for daily, off for intraday).
    #[arg(long, conflicts_with = "no_normalize")]
    normalize: bool,
    #[arg(long)]
    no_normalize: bool,
    /// Local normalization window length.
    #[arg(long, default_value_t = 13)]
    norm_window: usize,
    #[arg(long, value_enum, default_value = "emit-zero")]
    degenerate: Degenerate,
}

impl NormArgs {
    fn enabled(&self, mode: Mode) -> bool {
        self.normalize || (!self.no_normalize && matches!(mode, Mode::Daily))
    }

    fn config(&self) -> LocalNormConfig {
        LocalNormConfig {
            n: self.norm_window,
            degenerate_policy: self.degenerate.into(),
        }
    }
}

#[derive(Args)]
struct RangeArgs {
    /// First timestamp to keep (YYYY-MM-DD[ HH:MM[:SS]]).
    #[arg(long, value_parser = timestamp_arg)]
    start: Option<Timestamp>,
    #[arg(long, value_parser = timestamp_arg)]
    end: Option<Timestamp>,
}

impl RangeArgs {
    fn range(&self) -> TimeRange {
        TimeRange {
            start: self.start,
            end: self.end,
        }
    }
}

fn timestamp_arg(s: &str) -> std::result::Result<Timestamp, String> {
    parse_timestamp(s).ok_or_else(|| format!("cannot parse `{s}` as a timestamp"))
}

#[derive(Args)]
struct WindowArgs {
    /// Window length in samples (42 trading days is about two months).
    #[arg(long, default_value_t = 42)]
    window: usize,
    /// Use overlapping windows advancing by this many samples.
    #[arg(long)]
    slide: Option<usize>,
}

impl WindowArgs {
    fn spec(&self) -> WindowSpec {
        match self.slide {
            Some(stride) => WindowSpec::sliding(self.window, stride),
            None => WindowSpec::disjoint(self.window),
        }
    }
}

#[derive(Args)]
struct ClusterOpts {
    /// Mean center distance above which a cluster is split.
    #[arg(long, default_value_t = market_states::cluster::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 100)]
    max_kmeans_iter: usize,
    /// Seed random center initialisation instead of the farthest pair.
    #[arg(long)]
    init_seed: Option<u64>,
}

impl ClusterOpts {
    fn config(&self) -> ClusterConfig {
        ClusterConfig {
            threshold: self.threshold,
            max_kmeans_iter: self.max_kmeans_iter,
            init_policy: match self.init_seed {
                Some(seed) => InitPolicy::SeededRandom { seed },
                None => InitPolicy::FarthestPair,
            },
        }
    }
}

#[derive(Args)]
struct ReturnsArgs {
    /// Long-format `date,symbol,price` table.
    #[arg(long)]
    prices: PathBuf,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    norm: NormArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrArgs {
    /// Wide return panel CSV (`date,<symbols>`).
    #[arg(long)]
    panel: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Output directory for window CSVs and their index.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SimilarityArgs {
    /// Directory written by `corr`.
    #[arg(long)]
    windows: PathBuf,
    #[arg(long, default_value = "zeta")]
    measure: Measure,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    windows: PathBuf,
    #[command(flatten)]
    cluster: ClusterOpts,
    /// Tree JSON output.
    #[arg(long)]
    tree: PathBuf,
    /// State timeline CSV output.
    #[arg(long)]
    timeline: PathBuf,
}

#[derive(Args)]
struct StatesArgs {
    #[arg(long)]
    windows: PathBuf,
    #[command(flatten)]
    cluster: ClusterOpts,
    /// `symbol,sector` map; matrices are written in sector order when given.
    #[arg(long)]
    sector_map: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct HistArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Count the unit diagonal as well.
    #[arg(long)]
    include_diagonal: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(subcommand)]
    what: RenderWhat,
}

#[derive(Subcommand)]
enum RenderWhat {
    /// Correlation (or difference) matrix CSV as a heatmap.
    Heatmap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sector_map: Option<PathBuf>,
        /// Symmetric color range [-x, x] instead of [-1, 1].
        #[arg(long)]
        span: Option<f64>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Similarity matrix CSV as a heatmap over [0, observed max].
    Similarity {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Tree JSON as a dendrogram.
    Tree {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Timeline CSV as a state strip.
    Timeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Regime spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Wide return panel CSV output.
    #[arg(long, short)]
    out: PathBuf,
    /// Optional `date,regime` CSV of planted labels.
    #[arg(long)]
    regimes: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "synthetic")]
    prices: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long)]
    sector_map: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_parser = timestamp_arg)]
    start: Option<Timestamp>,
    #[arg(long, value_parser = timestamp_arg)]
    end: Option<Timestamp>,
    #[arg(long, conflicts_with = "no_normalize")]
    normalize: bool,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    norm_window: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    slide: Option<usize>,
    #[arg(long)]
    measure: Option<Measure>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_kmeans_iter: Option<usize>,
    /// Skip the state characterization stage.
    #[arg(long)]
    no_states: bool,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.prices {
            cfg.prices = Some(p.clone());
            cfg.synthetic = None;
        }
        if let Some(p) = &self.synthetic {
            cfg.synthetic = Some(p.clone());
            cfg.prices = None;
        }
        if let Some(p) = &self.sector_map {
            cfg.sector_map = Some(p.clone());
        }
        if let Some(mode) = self.mode {
            cfg.returns.mode = match mode {
                Mode::Daily => SamplingMode::Daily,
                Mode::Intraday => SamplingMode::Intraday,
            };
        }
        if self.start.is_some() {
            cfg.range.start = self.start;
        }
        if self.end.is_some() {
            cfg.range.end = self.end;
        }
        if self.normalize {
            cfg.normalization.enabled = Some(true);
        }
        if self.no_normalize {
            cfg.normalization.enabled = Some(false);
        }
        if let Some(n) = self.norm_window {
            cfg.normalization.n = n;
        }
        if let Some(len) = self.window {
            cfg.window.length = len;
            if self.slide.is_none() {
                cfg.window = WindowSpec::disjoint(len);
            }
        }
        if let Some(stride) = self.slide {
            cfg.window = WindowSpec::sliding(cfg.window.length, stride);
        }
        if let Some(m) = self.measure {
            cfg.measure = m;
        }
        if let Some(t) = self.threshold {
            cfg.cluster.threshold = t;
        }
        if let Some(n) = self.max_kmeans_iter {
            cfg.cluster.max_kmeans_iter = n;
        }
        if self.no_states {
            cfg.states = false;
        }
        if let Some(b) = self.bins {
            cfg.histogram_bins = b;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_windows(dir: &Path) -> Result<Vec<CorrelationWindow>> {
    let windows = io::load_windows(dir)?;
    if windows.is_empty() {
        return Err(Error::Invalid(format!("no windows listed in {}", dir.display())));
    }
    Ok(windows)
}

fn returns(args: &ReturnsArgs) -> Result<()> {
    let prices = parse_price_table(open(&args.prices)?, &PriceTableFormat::default())?;
    let sampling = args.sampling.sampling();
    let series = prices
        .iter()
        .map(|s| compute_returns(s, &sampling))
        .collect::<Result<Vec<_>>>()?;
    let mut panel = align_universe(&series, args.range.range())?;
    if args.norm.enabled(args.sampling.mode) {
        panel = normalize_panel(&panel, &args.norm.config())?;
    }
    io::save_panel(&args.out, &panel)?;
    println!(
        "{} series x {} timestamps -> {}",
        panel.n_series(),
        panel.n_times(),
        args.out.display()
    );
    Ok(())
}

fn corr(args: &CorrArgs) -> Result<()> {
    let panel = io::load_panel(&args.panel)?;
    let windows = correlation_windows(&panel, &args.window.spec())?;
    io::save_windows(&args.out, &windows)?;
    println!("{} windows -> {}", windows.len(), args.out.display());
    Ok(())
}

fn similarity(args: &SimilarityArgs) -> Result<()> {
    let windows = load_windows(&args.windows)?;
    let sim = similarity_matrix(&windows, args.measure, &PowerIteration::default())?;
    io::write_similarity_csv(create(&args.out)?, &sim)?;
    println!(
        "{0}x{0} {1} matrix -> {2}",
        windows.len(),
        args.measure,
        args.out.display()
    );
    Ok(())
}

fn cluster(args: &ClusterArgs) -> Result<()> {
    let windows = load_windows(&args.windows)?;
    let cfg = args.cluster.config();
    let full = ClusterConfig { threshold: 0.0, ..cfg };
    let mut tree = build_tree(&windows, &full)?;
    let cut = cut_to_states(&mut tree, cfg.threshold);
    let timeline = state_timeline(&cut, &windows)?;
    io::save_json(&args.tree, &tree.to_record())?;
    io::write_timeline_csv(create(&args.timeline)?, &timeline)?;
    println!(
        "{} windows -> {} states at threshold {}",
        windows.len(),
        cut.n_states(),
        cfg.threshold
    );
    Ok(())
}

fn states(args: &StatesArgs) -> Result<()> {
    let windows = load_windows(&args.windows)?;
    let cfg = args.cluster.config();
    let mut tree = build_tree(&windows, &ClusterConfig { threshold: 0.0, ..cfg })?;
    let cut = cut_to_states(&mut tree, cfg.threshold);
    let all: Vec<&CorrelationWindow> = windows.iter().collect();
    let overall = average_matrix(&all)?;
    let averages = state_average(&cut, &windows)?;

    let order: Vec<usize> = match &args.sector_map {
        Some(path) => {
            let map: SectorMap = io::load_sector_map(path)?;
            sector_ordering(&overall.symbols, &map)?.permutation
        }
        None => (0..overall.dim()).collect(),
    };
    let save = |name: String, m: &CorrelationWindow| {
        let sorted = permute(m, &order);
        io::save_matrix(&args.out.join(name), &sorted.symbols, &sorted.values)
    };
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    save("overall.csv".into(), &overall)?;
    for (i, avg) in averages.iter().enumerate() {
        let id = i + 1;
        save(format!("state_{id:02}.csv"), avg)?;
        let diff = CorrelationWindow {
            values: diff_to_overall(avg, &overall)?,
            ..avg.clone()
        };
        save(format!("state_{id:02}_diff.csv"), &diff)?;
    }
    println!("{} states -> {}", averages.len(), args.out.display());
    Ok(())
}

fn hist(args: &HistArgs) -> Result<()> {
    let m = io::load_matrix(&args.matrix)?;
    let source = args.matrix.display().to_string();
    let h = matrix_histogram(&m.values, args.bins, args.include_diagonal, source)?;
    io::write_histogram_csv(create(&args.out)?, &h)?;
    println!(
        "{} coefficients in {} bins -> {}",
        h.total(),
        args.bins,
        args.out.display()
    );
    Ok(())
}

fn render(args: &RenderArgs) -> Result<()> {
    let (svg, out) = match &args.what {
        RenderWhat::Heatmap {
            input,
            sector_map,
            span,
            title,
            out,
        } => {
            let m = io::load_matrix(input)?;
            let mut style = HeatmapStyle {
                title: title.clone(),
                ..HeatmapStyle::default()
            };
            if let Some(x) = span {
                style.range = ColorRange::Fixed(-x, *x);
            }
            let (values, labels) = match sector_map {
                Some(path) => {
                    let map = io::load_sector_map(path)?;
                    let ordering = sector_ordering(&m.labels, &map)?;
                    let p = &ordering.permutation;
                    let values = permute_values(&m.values, p);
                    let labels = p.iter().map(|&i| m.labels[i].clone()).collect();
                    style.blocks = ordering.blocks;
                    (values, labels)
                }
                None => (m.values, m.labels),
            };
            (render_heatmap(&values, &labels, &style)?, out)
        }
        RenderWhat::Similarity { input, out } => {
            let sim = io::read_similarity_csv(open(input)?, Measure::Zeta)?;
            let labels: Vec<String> = sim.labels.iter().map(format_timestamp).collect();
            (render_heatmap(&sim.values, &labels, &HeatmapStyle::distances())?, out)
        }
        RenderWhat::Tree { input, out } => {
            let text = std::fs::read_to_string(input).map_err(|source| Error::Io {
                path: input.clone(),
                source,
            })?;
            let record: TreeRecord =
                serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", input.display())))?;
            (render_tree(&record), out)
        }
        RenderWhat::Timeline { input, out } => {
            let seq: StateSequence = io::read_timeline_csv(open(input)?)?;
            (render_timeline(&seq), out)
        }
    };
    io::save_text(out, &svg)?;
    println!("-> {}", out.display());
    Ok(())
}

fn permute_values(values: &Array2<f64>, p: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((p.len(), p.len()), |(i, j)| values[[p[i], p[j]]])
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = io::load_regime_spec(&args.spec)?;
    let synth = generate_regime_panel(&spec)?;
    io::save_panel(&args.out, &synth.panel)?;
    if let Some(path) = &args.regimes {
        let mut w = create(path)?;
        let io_err = |source| Error::Io {
            path: path.clone(),
            source,
        };
        writeln!(w, "date,regime").map_err(io_err)?;
        for (t, r) in synth.panel.timestamps.iter().zip(&synth.regimes) {
            writeln!(w, "{},{r}", format_timestamp(t)).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    println!(
        "{} series x {} timestamps -> {}",
        synth.panel.n_series(),
        synth.panel.n_times(),
        args.out.display()
    );
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let manifest = run_pipeline(&cfg)?;
    println!(
        "{} symbols, {} timestamps, {} windows, {} states ({} at threshold {})",
        manifest.symbols, manifest.timestamps, manifest.windows, manifest.states, manifest.measure, manifest.threshold
    );
    println!("{} artifacts in {}", manifest.artifacts.len(), cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Returns(a) => returns(a),
        Command::Corr(a) => corr(a),
        Command::Similarity(a) => similarity(a),
        Command::Cluster(a) => cluster(a),
        Command::States(a) => states(a),
        Command::Hist(a) => hist(a),
        Command::Render(a) => render(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
