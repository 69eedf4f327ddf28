//! Bagged ensemble of randomized decision trees (Gini splits, a few random
//! candidate features per node) producing a threat confidence in `[0, 1]`.
//!
//! Training is deterministic for a given seed and independent of the order
//! in which examples are supplied: rows are first put into a canonical order
//! (lexicographic on the feature vector, then label) and every random draw is
//! made against that order. Trees are grown in parallel from per-tree seeds
//! and collected by tree index.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::splitmix64;

pub const FOREST_MAGIC: [u8; 4] = *b"GPRF";
pub const FOREST_VERSION: u16 = 1;
const TREE_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
const TAG_LEAF: u8 = 0;
const TAG_SPLIT: u8 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    Empty,
    #[error("training set has no {0} examples")]
    MissingClass(&'static str),
    #[error("{features} feature rows but {labels} labels")]
    LabelCount { features: usize, labels: usize },
    #[error("row {row} has {found} features, expected {expected}")]
    InconsistentDims {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("feature ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("feature vector has {found} entries, forest was trained on {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"GPRF\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported forest version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt forest blob: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features sampled (without replacement) as split candidates per node.
    pub n_split_candidates: usize,
    /// Minimum bootstrap weight in each child of a split.
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            n_split_candidates: 2,
            min_leaf: 1,
            seed: 28,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { fraction } => return fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub n_features: usize,
}

impl Forest {
    /// Mean over trees of the reached leaf's threat fraction.
    pub fn predict(&self, feature: &[f64]) -> Result<f64, ForestError> {
        if feature.len() != self.n_features {
            return Err(ForestError::DimMismatch {
                expected: self.n_features,
                found: feature.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(feature)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

/// Column-major training matrix in canonical row order plus per-feature
/// presorted row orders shared by every tree.
struct TrainingData {
    cols: Vec<Vec<f64>>,
    labels: Vec<bool>,
    order: Vec<Vec<u32>>,
    /// Dense rank of each row's value within its feature (ties share a rank).
    ranks: Vec<Vec<u32>>,
}

fn dense_ranks(col: &[f64], order: &[u32]) -> Vec<u32> {
    let mut rank = vec![0u32; col.len()];
    let mut r = 0u32;
    for k in 1..order.len() {
        if col[order[k] as usize] != col[order[k - 1] as usize] {
            r += 1;
        }
        rank[order[k] as usize] = r;
    }
    rank
}

impl TrainingData {
    fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

/// Validated examples in canonical order, presorted once so that forests
/// trained on many subsets (cross-validation folds) skip the sorting.
pub struct Dataset {
    data: TrainingData,
    /// Canonical position of each example, by original index.
    canonical_pos: Vec<u32>,
}

impl Dataset {
    pub fn new<R: AsRef<[f64]>>(features: &[R], labels: &[bool]) -> Result<Self, ForestError> {
        validate_rows(features, labels)?;
        let mut idx: Vec<usize> = (0..features.len()).collect();
        idx.sort_by(|&a, &b| {
            features[a]
                .as_ref()
                .iter()
                .zip(features[b].as_ref())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(labels[a].cmp(&labels[b]))
        });
        let mut canonical_pos = vec![0u32; idx.len()];
        for (pos, &i) in idx.iter().enumerate() {
            canonical_pos[i] = pos as u32;
        }
        let dim = features[0].as_ref().len();
        let cols: Vec<Vec<f64>> = (0..dim)
            .map(|f| idx.iter().map(|&r| features[r].as_ref()[f]).collect())
            .collect();
        let labels: Vec<bool> = idx.iter().map(|&r| labels[r]).collect();
        let order: Vec<Vec<u32>> = cols
            .iter()
            .map(|col| {
                let mut o: Vec<u32> = (0..col.len() as u32).collect();
                o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        let ranks = cols.iter().zip(&order).map(|(c, o)| dense_ranks(c, o)).collect();
        Ok(Self {
            data: TrainingData {
                cols,
                labels,
                order,
                ranks,
            },
            canonical_pos,
        })
    }

    pub fn len(&self) -> usize {
        self.data.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols.len()
    }

    /// Restriction to the given original indices, still in canonical order.
    fn subset(&self, rows: &[usize]) -> TrainingData {
        let n = self.len();
        if rows.len() == n {
            return TrainingData {
                cols: self.data.cols.clone(),
                labels: self.data.labels.clone(),
                order: self.data.order.clone(),
                ranks: self.data.ranks.clone(),
            };
        }
        let mut new_idx = vec![u32::MAX; n];
        for &r in rows {
            new_idx[self.canonical_pos[r] as usize] = 0;
        }
        let mut keep = Vec::with_capacity(rows.len());
        for (pos, slot) in new_idx.iter_mut().enumerate() {
            if *slot == 0 {
                *slot = keep.len() as u32;
                keep.push(pos);
            }
        }
        let cols: Vec<Vec<f64>> = self
            .data
            .cols
            .iter()
            .map(|c| keep.iter().map(|&p| c[p]).collect())
            .collect();
        let labels = keep.iter().map(|&p| self.data.labels[p]).collect();
        let order: Vec<Vec<u32>> = self
            .data
            .order
            .iter()
            .map(|o| {
                o.iter()
                    .map(|&p| new_idx[p as usize])
                    .filter(|&k| k != u32::MAX)
                    .collect()
            })
            .collect();
        let ranks = cols.iter().zip(&order).map(|(c, o)| dense_ranks(c, o)).collect();
        TrainingData {
            cols,
            labels,
            order,
            ranks,
        }
    }
}

fn validate_rows<R: AsRef<[f64]>>(features: &[R], labels: &[bool]) -> Result<(), ForestError> {
    if features.len() != labels.len() {
        return Err(ForestError::LabelCount {
            features: features.len(),
            labels: labels.len(),
        });
    }
    let Some(first) = features.first() else {
        return Err(ForestError::Empty);
    };
    let dim = first.as_ref().len();
    for (row, f) in features.iter().map(AsRef::as_ref).enumerate() {
        if f.len() != dim {
            return Err(ForestError::InconsistentDims {
                row,
                expected: dim,
                found: f.len(),
            });
        }
        if let Some(col) = f.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite { row, col });
        }
    }
    Ok(())
}

fn validate_config(config: &ForestConfig, dim: usize) -> Result<(), ForestError> {
    if config.n_trees == 0 {
        return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
    }
    if config.min_leaf == 0 {
        return Err(ForestError::InvalidConfig("min_leaf must be at least 1".into()));
    }
    if config.n_split_candidates == 0 || config.n_split_candidates > dim {
        return Err(ForestError::InvalidConfig(format!(
            "n_split_candidates must be in 1..={dim}, got {}",
            config.n_split_candidates
        )));
    }
    Ok(())
}

pub fn tree_seed(seed: u64, tree_index: usize) -> u64 {
    splitmix64(seed ^ (tree_index as u64).wrapping_mul(TREE_SEED_STRIDE))
}

pub fn train<R: AsRef<[f64]>>(features: &[R], labels: &[bool], config: &ForestConfig) -> Result<Forest, ForestError> {
    let ds = Dataset::new(features, labels)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    train_subset(&ds, &all, config)
}

/// Same forest as `train` on the listed examples alone. `rows` are original
/// indices into the dataset and are treated as a set.
pub fn train_subset(ds: &Dataset, rows: &[usize], config: &ForestConfig) -> Result<Forest, ForestError> {
    let mut rows = rows.to_vec();
    rows.sort_unstable();
    rows.dedup();
    if rows.is_empty() {
        return Err(ForestError::Empty);
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= ds.len()) {
        return Err(ForestError::InvalidConfig(format!(
            "row {bad} out of range for {} examples",
            ds.len()
        )));
    }
    validate_config(config, ds.dim())?;
    let data = ds.subset(&rows);
    if !data.labels.iter().any(|&l| l) {
        return Err(ForestError::MissingClass("threat"));
    }
    if data.labels.iter().all(|&l| l) {
        return Err(ForestError::MissingClass("non-threat"));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&data, config, tree_seed(config.seed, t)))
        .collect();
    Ok(Forest {
        trees,
        config: config.clone(),
        n_features: ds.dim(),
    })
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Weighted Gini impurity times weight: `W − (P² + N²)/W`.
fn weighted_gini(w: f64, pos: f64) -> f64 {
    let neg = w - pos;
    w - (pos * pos + neg * neg) / w
}

fn grow_tree(data: &TrainingData, config: &ForestConfig, seed: u64) -> Tree {
    let n = data.n_rows();
    let dim = data.cols.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weight = vec![0u32; n];
    for _ in 0..n {
        weight[rng.gen_range(0..n)] += 1;
    }
    let root_rows: Vec<u32> = (0..n as u32).filter(|&i| weight[i as usize] > 0).collect();
    let mut node_of = vec![u32::MAX; n];
    for &r in &root_rows {
        node_of[r as usize] = 0;
    }

    let min_leaf = config.min_leaf as f64;
    let mut nodes = vec![Node::Leaf { fraction: 0.0 }];
    let mut stack = vec![(0u32, root_rows)];
    let mut sorted: Vec<u32> = Vec::with_capacity(n);
    let mut keys: Vec<u64> = Vec::new();
    let mut keys32: Vec<u32> = Vec::new();
    // (rank, row) packs into 32 bits while both stay below 2^16
    let small_keys = n <= 1 << 16;

    while let Some((id, rows)) = stack.pop() {
        let (mut w, mut pos) = (0.0, 0.0);
        for &r in &rows {
            let wr = weight[r as usize] as f64;
            w += wr;
            if data.labels[r as usize] {
                pos += wr;
            }
        }
        let leaf = Node::Leaf { fraction: pos / w };
        if pos == 0.0 || pos == w || w < 2.0 * min_leaf {
            nodes[id as usize] = leaf;
            continue;
        }
        let parent = weighted_gini(w, pos);
        let mut candidates = sample(&mut rng, dim, config.n_split_candidates).into_vec();
        candidates.sort_unstable();

        let mut best: Option<Split> = None;
        for &f in &candidates {
            let col = &data.cols[f];
            sorted.clear();
            if rows.len() * 8 > n {
                sorted.extend(data.order[f].iter().filter(|&&r| node_of[r as usize] == id));
            } else {
                let rank = &data.ranks[f];
                if small_keys {
                    keys32.clear();
                    keys32.extend(rows.iter().map(|&r| rank[r as usize] << 16 | r));
                    keys32.sort_unstable();
                    sorted.extend(keys32.iter().map(|&k| k & 0xFFFF));
                } else {
                    keys.clear();
                    keys.extend(rows.iter().map(|&r| (rank[r as usize] as u64) << 32 | r as u64));
                    keys.sort_unstable();
                    sorted.extend(keys.iter().map(|&k| k as u32));
                }
            }
            let (mut wl, mut pl) = (0.0, 0.0);
            for k in 0..sorted.len() - 1 {
                let r = sorted[k] as usize;
                let wr = weight[r] as f64;
                wl += wr;
                if data.labels[r] {
                    pl += wr;
                }
                let (a, b) = (col[r], col[sorted[k + 1] as usize]);
                if a == b || wl < min_leaf || w - wl < min_leaf {
                    continue;
                }
                let gain = parent - weighted_gini(wl, pl) - weighted_gini(w - wl, pos - pl);
                if gain > 1e-12 * w && best.is_none_or(|s| gain > s.gain) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }

        let Some(split) = best else {
            nodes[id as usize] = leaf;
            continue;
        };
        let left = nodes.len() as u32;
        let right = left + 1;
        nodes.push(Node::Leaf { fraction: 0.0 });
        nodes.push(Node::Leaf { fraction: 0.0 });
        nodes[id as usize] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left,
            right,
        };
        let col = &data.cols[split.feature];
        let (lrows, rrows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| col[r as usize] <= split.threshold);
        for &r in &lrows {
            node_of[r as usize] = left;
        }
        for &r in &rrows {
            node_of[r as usize] = right;
        }
        stack.push((right, rrows));
        stack.push((left, lrows));
    }
    Tree { nodes }
}

/// Serializes to the versioned `GPRF` blob (little-endian).
pub fn write_forest<W: Write>(forest: &Forest, w: &mut W) -> Result<(), ForestError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&FOREST_MAGIC);
    buf.extend_from_slice(&FOREST_VERSION.to_le_bytes());
    buf.extend_from_slice(&(forest.n_features as u32).to_le_bytes());
    buf.extend_from_slice(&(forest.config.n_trees as u32).to_le_bytes());
    buf.extend_from_slice(&(forest.config.n_split_candidates as u32).to_le_bytes());
    buf.extend_from_slice(&(forest.config.min_leaf as u32).to_le_bytes());
    buf.extend_from_slice(&forest.config.seed.to_le_bytes());
    buf.extend_from_slice(&(forest.trees.len() as u32).to_le_bytes());
    for tree in &forest.trees {
        buf.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
        for node in &tree.nodes {
            match *node {
                Node::Leaf { fraction } => {
                    buf.push(TAG_LEAF);
                    buf.extend_from_slice(&fraction.to_le_bytes());
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    buf.push(TAG_SPLIT);
                    buf.extend_from_slice(&feature.to_le_bytes());
                    buf.extend_from_slice(&threshold.to_le_bytes());
                    buf.extend_from_slice(&left.to_le_bytes());
                    buf.extend_from_slice(&right.to_le_bytes());
                }
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ForestError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(ForestError::Corrupt(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ForestError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ForestError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ForestError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ForestError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ForestError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_forest<R: Read>(r: &mut R) -> Result<Forest, ForestError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic: [u8; 4] = match c.take(4) {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..buf.len()].copy_from_slice(&buf);
            return Err(ForestError::BadMagic(m));
        }
    };
    if magic != FOREST_MAGIC {
        return Err(ForestError::BadMagic(magic));
    }
    let version = c.u16()?;
    if version != FOREST_VERSION {
        return Err(ForestError::UnsupportedVersion(version));
    }
    let n_features = c.u32()? as usize;
    let config = ForestConfig {
        n_trees: c.u32()? as usize,
        n_split_candidates: c.u32()? as usize,
        min_leaf: c.u32()? as usize,
        seed: c.u64()?,
    };
    let n_trees = c.u32()? as usize;
    if n_trees == 0 || n_trees != config.n_trees {
        return Err(ForestError::Corrupt(format!(
            "tree count {n_trees} disagrees with config {}",
            config.n_trees
        )));
    }
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let n_nodes = c.u32()? as usize;
        if n_nodes == 0 {
            return Err(ForestError::Corrupt(format!("tree {t} has no nodes")));
        }
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for _ in 0..n_nodes {
            let node = match c.u8()? {
                TAG_LEAF => {
                    let fraction = c.f64()?;
                    if !(0.0..=1.0).contains(&fraction) {
                        return Err(ForestError::Corrupt(format!("leaf fraction {fraction} in tree {t}")));
                    }
                    Node::Leaf { fraction }
                }
                TAG_SPLIT => {
                    let feature = c.u32()?;
                    let threshold = c.f64()?;
                    let left = c.u32()?;
                    let right = c.u32()?;
                    if feature as usize >= n_features
                        || left as usize >= n_nodes
                        || right as usize >= n_nodes
                        || !threshold.is_finite()
                    {
                        return Err(ForestError::Corrupt(format!("invalid split node in tree {t}")));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                tag => return Err(ForestError::Corrupt(format!("unknown node tag {tag}"))),
            };
            nodes.push(node);
        }
        // children always follow their parent, which rules out cycles
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = node {
                if *left as usize <= i || *right as usize <= i {
                    return Err(ForestError::Corrupt(format!("backward child link in tree {t}")));
                }
            }
        }
        trees.push(Tree { nodes });
    }
    if c.pos != buf.len() {
        return Err(ForestError::Corrupt(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(Forest {
        trees,
        config,
        n_features,
    })
}

pub fn save_forest(forest: &Forest, path: &Path) -> Result<(), ForestError> {
    let mut buf = Vec::new();
    write_forest(forest, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<Forest, ForestError> {
    read_forest(&mut std::fs::File::open(path)?)
}
