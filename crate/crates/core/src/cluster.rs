//! Top-down clustering of correlation matrices into market states.
//!
//! All windows start in one cluster. A cluster is split in two by a k-means
//! pass under `zeta` with elementwise-mean centers, and splitting recurses into
//! every cluster whose mean center-to-member distance is above the threshold.
//! With a threshold of zero the recursion runs down to singletons and yields the
//! full tree; cutting that tree at a threshold gives the same states as
//! stopping the division at that threshold.

use std::collections::HashSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corr::{average_matrix, mean_of, CorrelationWindow};
use crate::error::{Error, Result};
use crate::similarity::zeta_values;
use crate::time::{format_timestamp, Timestamp};

/// Threshold on the mean center-to-member distance used for the published state split.
pub const DEFAULT_THRESHOLD: f64 = 0.1465;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum InitPolicy {
    /// The two members at maximal pairwise distance; first pair in index order on ties.
    #[default]
    FarthestPair,
    SeededRandom {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub threshold: f64,
    pub max_kmeans_iter: usize,
    #[serde(default)]
    pub init_policy: InitPolicy,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_kmeans_iter: 100,
            init_policy: InitPolicy::FarthestPair,
        }
    }
}

impl ClusterConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::Invalid(format!(
                "threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Outcome of one two-way split. Indices refer to the input slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bisection {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Labels reached a fixed point within the iteration cap.
    pub converged: bool,
    /// An assignment step emptied one side and a member had to be moved over.
    pub degenerate: bool,
    pub iterations: usize,
}

fn init_centers(items: &[&Array2<f64>], policy: InitPolicy, salt: u64) -> (usize, usize) {
    match policy {
        InitPolicy::FarthestPair => {
            let mut best = (0, 1, f64::NEG_INFINITY);
            for i in 0..items.len() {
                for j in i + 1..items.len() {
                    let d = zeta_values(items[i], items[j]);
                    if d > best.2 {
                        best = (i, j, d);
                    }
                }
            }
            (best.0, best.1)
        }
        InitPolicy::SeededRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let a = rng.random_range(0..items.len());
            let mut b = rng.random_range(0..items.len() - 1);
            if b >= a {
                b += 1;
            }
            (a.min(b), a.max(b))
        }
    }
}

/// Moves the member farthest from the occupied side's center into an empty side.
fn repair_empty_side(labels: &mut [u8], items: &[&Array2<f64>], centers: &[Array2<f64>; 2]) -> bool {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let occupied = match ones {
        0 => 0u8,
        n if n == labels.len() => 1u8,
        _ => return false,
    };
    let center = &centers[occupied as usize];
    let mut far = (0, f64::NEG_INFINITY);
    for (i, item) in items.iter().enumerate() {
        let d = zeta_values(item, center);
        if d > far.1 {
            far = (i, d);
        }
    }
    labels[far.0] = 1 - occupied;
    true
}

fn split_centers(items: &[&Array2<f64>], labels: &[u8]) -> [Array2<f64>; 2] {
    let side = |s: u8| mean_of(items.iter().zip(labels).filter(|(_, &l)| l == s).map(|(m, _)| *m));
    [side(0), side(1)]
}

fn bisect_values(items: &[&Array2<f64>], cfg: &ClusterConfig, salt: u64) -> Bisection {
    let (a, b) = init_centers(items, cfg.init_policy, salt);
    let mut centers = [items[a].clone(), items[b].clone()];
    let mut labels: Vec<u8> = items
        .iter()
        .map(|m| u8::from(zeta_values(m, &centers[1]) < zeta_values(m, &centers[0])))
        .collect();
    let mut degenerate = repair_empty_side(&mut labels, items, &centers);

    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    seen.insert(labels.clone());
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_kmeans_iter {
        iterations += 1;
        centers = split_centers(items, &labels);
        let mut next: Vec<u8> = items
            .iter()
            .zip(&labels)
            .map(|(m, &current)| {
                let d0 = zeta_values(m, &centers[0]);
                let d1 = zeta_values(m, &centers[1]);
                if d0 < d1 {
                    0
                } else if d1 < d0 {
                    1
                } else {
                    current
                }
            })
            .collect();
        degenerate |= repair_empty_side(&mut next, items, &centers);
        if next == labels {
            converged = true;
            break;
        }
        let repeated = !seen.insert(next.clone());
        labels = next;
        if repeated {
            // The mean is not the L1 minimizer, so the loop can cycle.
            break;
        }
    }

    let (left, right) = (0..items.len()).partition(|&i| labels[i] == 0);
    Bisection {
        left,
        right,
        converged,
        degenerate,
        iterations,
    }
}

/// Splits `members` into two non-empty groups by k-means under `zeta`.
pub fn kmeans_bisect(members: &[&CorrelationWindow], cfg: &ClusterConfig) -> Result<Bisection> {
    if members.len() < 2 {
        return Err(Error::Invalid(format!("cannot bisect {} member(s)", members.len())));
    }
    for m in &members[1..] {
        members[0].check_same_universe(m)?;
    }
    let items: Vec<&Array2<f64>> = members.iter().map(|m| &m.values).collect();
    Ok(bisect_values(&items, cfg, 0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    /// Window indices, ascending.
    pub members: Vec<usize>,
    /// Elementwise mean of the member matrices.
    pub center: CorrelationWindow,
    pub mean_center_distance: f64,
    /// Distance from this node's center to its parent's center; zero at the root.
    pub branch_length: f64,
    /// Either empty or exactly two nodes.
    pub children: Vec<ClusterNode>,
    pub state_id: Option<usize>,
    /// Whether the k-means pass that produced `children` converged.
    pub split_converged: bool,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(ClusterNode::leaf_count).sum()
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ClusterNode::depth).max().unwrap_or(0)
    }

    /// Pre-order traversal.
    pub fn nodes(&self) -> Vec<&ClusterNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.nodes());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub root: ClusterNode,
    /// Label date of each window, indexed like `ClusterNode::members`.
    pub labels: Vec<Timestamp>,
}

fn build_node(
    windows: &[CorrelationWindow],
    members: Vec<usize>,
    parent_center: Option<&Array2<f64>>,
    cfg: &ClusterConfig,
) -> Result<ClusterNode> {
    let refs: Vec<&CorrelationWindow> = members.iter().map(|&i| &windows[i]).collect();
    let center = average_matrix(&refs)?;
    let mean_center_distance =
        refs.iter().map(|w| zeta_values(&center.values, &w.values)).sum::<f64>() / refs.len() as f64;
    let branch_length = parent_center.map_or(0.0, |p| zeta_values(&center.values, p));

    let mut node = ClusterNode {
        members,
        center,
        mean_center_distance,
        branch_length,
        children: Vec::new(),
        state_id: None,
        split_converged: true,
    };
    if node.members.len() < 2 || mean_center_distance <= cfg.threshold {
        return Ok(node);
    }

    let items: Vec<&Array2<f64>> = refs.iter().map(|w| &w.values).collect();
    let split = bisect_values(
        &items,
        cfg,
        node.members[0] as u64 ^ ((node.members.len() as u64) << 32),
    );
    let left: Vec<usize> = split.left.iter().map(|&i| node.members[i]).collect();
    let right: Vec<usize> = split.right.iter().map(|&i| node.members[i]).collect();
    let parent = &node.center.values;
    let (l, r) = rayon::join(
        || build_node(windows, left, Some(parent), cfg),
        || build_node(windows, right, Some(parent), cfg),
    );
    node.children = vec![l?, r?];
    node.split_converged = split.converged;
    Ok(node)
}

/// Divides `windows` recursively until every cluster is within `cfg.threshold`.
pub fn build_tree(windows: &[CorrelationWindow], cfg: &ClusterConfig) -> Result<ClusterTree> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Invalid("cannot cluster an empty set of windows".into()));
    }
    for w in &windows[1..] {
        windows[0].check_same_universe(w)?;
    }
    let root = build_node(windows, (0..windows.len()).collect(), None, cfg)?;
    Ok(ClusterTree {
        root,
        labels: windows.iter().map(|w| w.label_date).collect(),
    })
}

/// Market states from a cut of the tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateCut {
    /// State id (1-based) of each window.
    pub assignment: Vec<usize>,
    /// Window indices of state `s` at position `s - 1`.
    pub states: Vec<Vec<usize>>,
}

impl StateCut {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }
}

fn collect_states<'a>(node: &'a ClusterNode, threshold: f64, out: &mut Vec<&'a ClusterNode>) {
    if node.is_leaf() || node.mean_center_distance <= threshold {
        out.push(node);
    } else {
        for c in &node.children {
            collect_states(c, threshold, out);
        }
    }
}

fn clear_states(node: &mut ClusterNode) {
    node.state_id = None;
    node.children.iter_mut().for_each(clear_states);
}

fn mark_state(node: &mut ClusterNode, members: &[usize], id: usize) -> bool {
    if node.members == members {
        node.state_id = Some(id);
        return true;
    }
    node.children.iter_mut().any(|c| mark_state(c, members, id))
}

/// Labels the shallowest nodes whose mean center-to-member distance is within
/// `threshold` as states (leaves always qualify).
///
/// States are numbered from 1 in order of their earliest member window.
pub fn cut_to_states(tree: &mut ClusterTree, threshold: f64) -> StateCut {
    let mut nodes = Vec::new();
    collect_states(&tree.root, threshold, &mut nodes);
    let labels = &tree.labels;
    let first = |n: &ClusterNode| n.members.iter().map(|&i| (labels[i], i)).min().unwrap();
    nodes.sort_by_key(|n| first(n));
    let states: Vec<Vec<usize>> = nodes.iter().map(|n| n.members.clone()).collect();

    clear_states(&mut tree.root);
    let mut assignment = vec![0; labels.len()];
    for (s, members) in states.iter().enumerate() {
        mark_state(&mut tree.root, members, s + 1);
        for &i in members {
            assignment[i] = s + 1;
        }
    }
    StateCut { assignment, states }
}

/// Ordered `(label_date, state_id)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSequence {
    pub entries: Vec<(Timestamp, usize)>,
}

impl StateSequence {
    pub fn states(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.1).collect()
    }
}

pub fn state_timeline(cut: &StateCut, windows: &[CorrelationWindow]) -> Result<StateSequence> {
    if cut.assignment.len() != windows.len() {
        return Err(Error::Invalid(format!(
            "{} labels for {} windows",
            cut.assignment.len(),
            windows.len()
        )));
    }
    let mut entries: Vec<(Timestamp, usize)> = windows
        .iter()
        .zip(&cut.assignment)
        .map(|(w, &s)| (w.label_date, s))
        .collect();
    entries.sort_by_key(|e| e.0);
    Ok(StateSequence { entries })
}

/// Serializable view of a tree without the center matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub members: Vec<String>,
    pub branch_length: f64,
    pub mean_center_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_id: Option<usize>,
    #[serde(default)]
    pub children: Vec<TreeRecord>,
}

impl TreeRecord {
    pub fn leaf_count(&self) -> usize {
        if self.children.is_empty() {
            1
        } else {
            self.children.iter().map(TreeRecord::leaf_count).sum()
        }
    }
}

impl ClusterTree {
    pub fn to_record(&self) -> TreeRecord {
        fn go(node: &ClusterNode, labels: &[Timestamp]) -> TreeRecord {
            TreeRecord {
                members: node.members.iter().map(|&i| format_timestamp(&labels[i])).collect(),
                branch_length: node.branch_length,
                mean_center_distance: node.mean_center_distance,
                state_id: node.state_id,
                children: node.children.iter().map(|c| go(c, labels)).collect(),
            }
        }
        go(&self.root, &self.labels)
    }
}
