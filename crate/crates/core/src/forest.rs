//! Binary random-forest classifier.
//!
//! Trees are grown on full-size bootstrap samples. At every node a fresh
//! random subset of `features_per_node` features is drawn and the split with
//! the largest Shannon information gain is kept. Class probabilities are
//! the unweighted mean of per-tree leaf distributions.
//!
//! Each tree draws from its own ChaCha stream keyed by `(seed, tree index)`,
//! so training is reproducible regardless of how trees are scheduled across
//! threads.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub features_per_node: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub min_leaf_size: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 500, features_per_node: 20, seed: 0, max_depth: 25, min_leaf_size: 2 }
    }
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::Parameter("forest needs at least one tree".into()));
        }
        if self.features_per_node < 1 || self.features_per_node > n_features {
            return Err(Error::Parameter(format!(
                "features per node must be in 1..={n_features}, got {}",
                self.features_per_node
            )));
        }
        if self.min_leaf_size < 1 {
            return Err(Error::Parameter("min_leaf_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: [u32; 2],
    },
}

impl TreeNode {
    /// Leaf reached by `x`. Values `<= threshold` go left.
    pub fn leaf_for(&self, x: &[f64]) -> [u32; 2] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { counts } => return *counts,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature as usize] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    /// Visit every node in preorder.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        if let TreeNode::Split { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }

    /// Class distribution of all samples below this node.
    pub fn total_counts(&self) -> [u32; 2] {
        match self {
            TreeNode::Leaf { counts } => *counts,
            TreeNode::Split { left, right, .. } => {
                let (l, r) = (left.total_counts(), right.total_counts());
                [l[0] + r[0], l[1] + r[1]]
            }
        }
    }
}

/// Posterior over {stroma = 0, border = 1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProbability {
    pub p: [f64; 2],
}

impl ClassProbability {
    /// Most probable class; an exact tie goes to class 1.
    pub fn class(&self) -> u8 {
        u8::from(self.p[1] >= self.p[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
    pub params: ForestParams,
    /// Thick/thin decision threshold computed from the training masks.
    pub boundary_threshold: Option<f64>,
}

impl Forest {
    pub fn predict_proba(&self, x: &[f64]) -> ClassProbability {
        assert_eq!(x.len(), self.n_features, "feature vector length");
        let mut p = [0.0; 2];
        for tree in &self.trees {
            let c = tree.leaf_for(x);
            let n = f64::from(c[0] + c[1]);
            p[0] += f64::from(c[0]) / n;
            p[1] += f64::from(c[1]) / n;
        }
        let n = self.trees.len() as f64;
        ClassProbability { p: [p[0] / n, p[1] / n] }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        self.predict_proba(x).class()
    }
}

/// Binary entropy (nats) of a two-class count.
fn entropy(c0: usize, c1: usize) -> f64 {
    let n = (c0 + c1) as f64;
    let h = |c: usize| {
        if c == 0 {
            0.0
        } else {
            let p = c as f64 / n;
            -p * p.ln()
        }
    };
    h(c0) + h(c1)
}

/// Information gain of splitting `(l0 + r0, l1 + r1)` into the two sides.
pub fn information_gain(left: [usize; 2], right: [usize; 2]) -> f64 {
    let (nl, nr) = ((left[0] + left[1]) as f64, (right[0] + right[1]) as f64);
    let n = nl + nr;
    entropy(left[0] + right[0], left[1] + right[1])
        - nl / n * entropy(left[0], left[1])
        - nr / n * entropy(right[0], right[1])
}

/// Per-tree random stream.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Bootstrap sample of tree `tree`: `n` indices drawn with replacement.
/// Exposed so a tree can be reproduced outside the forest.
pub fn bootstrap_indices(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    let mut rng = tree_rng(seed, tree);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Grower<'a, R: AsRef<[f64]>> {
    x: &'a [R],
    y: &'a [u8],
    n_features: usize,
    params: &'a ForestParams,
}

impl<R: AsRef<[f64]> + Sync> Grower<'_, R> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let ones = idx.iter().filter(|&&i| self.y[i] == 1).count();
        [idx.len() - ones, ones]
    }

    fn grow(&self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        let counts = self.counts(idx);
        let leaf = TreeNode::Leaf { counts: [counts[0] as u32, counts[1] as u32] };
        if counts[0] == 0 || counts[1] == 0 || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf_size {
            return leaf;
        }
        let mut features = sample(rng, self.n_features, self.params.features_per_node).into_vec();
        features.sort_unstable();

        let mut best: Option<BestSplit> = None;
        let mut column: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        for &f in &features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.x[i].as_ref()[f], self.y[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..column.len() - 1 {
                left[column[k].1 as usize] += 1;
                let (lo, hi) = (column[k].0, column[k + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = k + 1;
                if nl < self.params.min_leaf_size || column.len() - nl < self.params.min_leaf_size {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let gain = information_gain(left, right);
                if gain > best.map_or(0.0, |b| b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        let Some(split) = best else {
            return leaf;
        };
        let x = self.x;
        let mut mid = 0;
        for k in 0..idx.len() {
            if x[idx[k]].as_ref()[split.feature] <= split.threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        TreeNode::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Grow one tree on an explicit sample multiset with the forest's rules.
/// `rng` supplies the per-node feature subsets.
fn grow_tree<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[u8],
    params: &ForestParams,
    mut idx: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let n_features = x[0].as_ref().len();
    Grower { x, y, n_features, params }.grow(&mut idx, 0, rng)
}

/// Train a forest on rows `x` with 0/1 targets `y`.
pub fn train_forest<R: AsRef<[f64]> + Sync>(x: &[R], y: &[u8], params: &ForestParams) -> Result<Forest> {
    if x.is_empty() {
        return Err(Error::Training("no training samples".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Training(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let n_features = x[0].as_ref().len();
    if x.iter().any(|r| r.as_ref().len() != n_features) {
        return Err(Error::Training("rows have differing lengths".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Training(format!("label {bad} is not 0 or 1")));
    }
    params.validate(n_features)?;
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::Training("training labels contain a single class".into()));
    }

    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let idx: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
            grow_tree(x, y, params, idx, &mut rng)
        })
        .collect();
    Ok(Forest { trees, n_features, params: *params, boundary_threshold: None })
}

/// Failures reading a model file.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("not a forest model file")]
    BadMagic,
    #[error("model format version {found} is not supported (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("model file is truncated")]
    Truncated,
    #[error("model checksum mismatch")]
    Checksum,
    #[error("malformed model: {0}")]
    Malformed(String),
}

const MAGIC: &[u8; 8] = b"GLSEGRF\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;
const MAX_LOAD_DEPTH: usize = 256;

fn write_node(buf: &mut Vec<u8>, node: &TreeNode) {
    match node {
        TreeNode::Leaf { counts } => {
            buf.push(0);
            buf.extend_from_slice(&counts[0].to_le_bytes());
            buf.extend_from_slice(&counts[1].to_le_bytes());
        }
        TreeNode::Split { feature, threshold, left, right } => {
            buf.push(1);
            buf.extend_from_slice(&feature.to_le_bytes());
            buf.extend_from_slice(&threshold.to_bits().to_le_bytes());
            write_node(buf, left);
            write_node(buf, right);
        }
    }
}

/// Serialize: magic, version, body length, body, SHA-256 of everything
/// before it. The body holds the parameter block followed by every tree in
/// preorder.
pub fn forest_to_bytes(forest: &Forest) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&(forest.n_features as u32).to_le_bytes());
    body.extend_from_slice(&(forest.params.n_trees as u32).to_le_bytes());
    body.extend_from_slice(&(forest.params.features_per_node as u32).to_le_bytes());
    body.extend_from_slice(&forest.params.seed.to_le_bytes());
    body.extend_from_slice(&(forest.params.max_depth as u32).to_le_bytes());
    body.extend_from_slice(&(forest.params.min_leaf_size as u32).to_le_bytes());
    match forest.boundary_threshold {
        Some(t) => {
            body.push(1);
            body.extend_from_slice(&t.to_bits().to_le_bytes());
        }
        None => {
            body.push(0);
            body.extend_from_slice(&0u64.to_le_bytes());
        }
    }
    body.extend_from_slice(&(forest.trees.len() as u32).to_le_bytes());
    for tree in &forest.trees {
        body.extend_from_slice(&(tree.node_count() as u32).to_le_bytes());
        write_node(&mut body, tree);
    }

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| ModelError::Malformed("body ends early".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length is N"))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn node(&mut self, depth: usize, n_features: usize, budget: &mut u32) -> Result<TreeNode, ModelError> {
        if depth > MAX_LOAD_DEPTH || *budget == 0 {
            return Err(ModelError::Malformed("tree deeper or larger than declared".into()));
        }
        *budget -= 1;
        match self.u8()? {
            0 => {
                let counts = [self.u32()?, self.u32()?];
                if counts[0] + counts[1] == 0 {
                    return Err(ModelError::Malformed("empty leaf".into()));
                }
                Ok(TreeNode::Leaf { counts })
            }
            1 => {
                let feature = self.u32()?;
                if feature as usize >= n_features {
                    return Err(ModelError::Malformed(format!("feature index {feature} out of range")));
                }
                let threshold = f64::from_bits(self.u64()?);
                let left = Box::new(self.node(depth + 1, n_features, budget)?);
                let right = Box::new(self.node(depth + 1, n_features, budget)?);
                Ok(TreeNode::Split { feature, threshold, left, right })
            }
            tag => Err(ModelError::Malformed(format!("unknown node tag {tag}"))),
        }
    }
}

pub fn forest_from_bytes(bytes: &[u8]) -> Result<Forest, ModelError> {
    if bytes.len() < MAGIC.len() {
        return Err(ModelError::Truncated);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion { found: version });
    }
    let body_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = (HEADER_LEN as u64).saturating_add(body_len).saturating_add(CHECKSUM_LEN as u64);
    if (bytes.len() as u64) < expected {
        return Err(ModelError::Truncated);
    }
    if bytes.len() as u64 > expected {
        return Err(ModelError::Malformed("trailing bytes after checksum".into()));
    }
    let split = bytes.len() - CHECKSUM_LEN;
    if Sha256::digest(&bytes[..split]).as_slice() != &bytes[split..] {
        return Err(ModelError::Checksum);
    }

    let mut r = Reader { buf: &bytes[HEADER_LEN..split], pos: 0 };
    let n_features = r.u32()? as usize;
    let params = ForestParams {
        n_trees: r.u32()? as usize,
        features_per_node: r.u32()? as usize,
        seed: r.u64()?,
        max_depth: r.u32()? as usize,
        min_leaf_size: r.u32()? as usize,
    };
    let has_threshold = r.u8()?;
    let threshold_bits = r.u64()?;
    let boundary_threshold = match has_threshold {
        0 => None,
        1 => Some(f64::from_bits(threshold_bits)),
        v => return Err(ModelError::Malformed(format!("bad threshold flag {v}"))),
    };
    let n_trees = r.u32()? as usize;
    if n_trees != params.n_trees || n_features == 0 {
        return Err(ModelError::Malformed("parameter block disagrees with tree list".into()));
    }
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let mut budget = r.u32()?;
        let tree = r.node(0, n_features, &mut budget)?;
        if budget != 0 {
            return Err(ModelError::Malformed("node count disagrees with tree".into()));
        }
        trees.push(tree);
    }
    if r.pos != r.buf.len() {
        return Err(ModelError::Malformed("unused bytes in body".into()));
    }
    Ok(Forest { trees, n_features, params, boundary_threshold })
}

/// Write the model through a temporary sibling file and rename into place.
pub fn save_forest(forest: &Forest, path: &Path) -> Result<()> {
    let bytes = forest_to_bytes(forest);
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<Forest> {
    let bytes = fs::read(path)?;
    Ok(forest_from_bytes(&bytes)?)
}
