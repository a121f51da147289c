//! Identification of market states from correlation structure.
//!
//! Return series are aligned into a panel, optionally locally normalized, cut
//! into windows and turned into Pearson correlation matrices. Matrices are
//! compared with the mean absolute elementwise difference (`zeta`) or the
//! difference of their largest eigenvalues (`zeta_alt`), and clustered top-down
//! by repeated two-way k-means into a tree whose cut gives the market states.

pub mod cluster;
pub mod corr;
pub mod error;
pub mod ingest;
pub mod io;
pub mod normalize;
pub mod pipeline;
pub mod render;
pub mod similarity;
pub mod states;
pub mod synth;
pub mod time;

pub use cluster::{
    build_tree, cut_to_states, kmeans_bisect, state_timeline, Bisection, ClusterConfig, ClusterNode, ClusterTree,
    InitPolicy, StateCut, StateSequence, TreeRecord,
};
pub use corr::{average_matrix, pearson_matrix, rolling_windows, CorrelationWindow, WindowMode, WindowSpec};
pub use error::{Error, ErrorKind, Result};
pub use ingest::{
    align_universe, compute_returns, parse_price_table, PriceSeries, ReturnPanel, ReturnSampling, ReturnSeries,
    TimeRange,
};
pub use normalize::{local_normalize, normalize_panel, LocalNormConfig};
pub use similarity::{
    largest_eigenvalue, similarity_matrix, zeta, zeta_alt, Measure, PowerIteration, SimilarityMatrix,
};
pub use states::{coefficient_histogram, diff_to_overall, sector_sort, state_average, Histogram, Sector, SectorMap};
pub use synth::{generate_regime_panel, RegimeSpec, SyntheticPanel};
pub use time::Timestamp;
