//! Random-forest baseline over the same feature vectors: bootstrap CART
//! trees with Gini impurity and per-split feature subsampling, soft-voted
//! by averaging leaf positive fractions. Time gaps are ignored.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            features_per_split: 5,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
        }
        if self.features_per_split == 0 || self.features_per_split > dim {
            return Err(Error::InvalidArgument(format!(
                "features_per_split must lie in [1, {dim}], got {}",
                self.features_per_split
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidArgument("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
    },
}

/// Node table; the root is node 0. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_fraction(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { positive_fraction } => return *positive_fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub dim: usize,
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    /// Mean leaf positive fraction over trees.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf_fraction(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Gini impurity `1 - p^2 - q^2` of a node with the given class counts.
pub fn gini(pos: u64, neg: u64) -> f64 {
    let n = (pos + neg) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p, q) = (pos as f64 / n, neg as f64 / n);
    1.0 - p * p - q * q
}

/// A split's purity score `(pos^2 + neg^2) / n` summed over children as an
/// exact fraction; larger is better (equivalently, lower weighted Gini).
#[derive(Debug, Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn node(pos: u64, neg: u64) -> Self {
        Purity {
            num: (pos as u128).pow(2) + (neg as u128).pow(2),
            den: (pos + neg) as u128,
        }
    }

    fn children(l: (u64, u64), r: (u64, u64)) -> Self {
        let a = Purity::node(l.0, l.1);
        let b = Purity::node(r.0, r.1);
        Purity {
            num: a.num * b.den + b.num * a.den,
            den: a.den * b.den,
        }
    }

    fn greater_than(self, other: Purity) -> bool {
        self.num * other.den > other.num * self.den
    }
}

struct Grower<'a> {
    x: &'a [f64],
    y: &'a [u8],
    dim: usize,
    cfg: &'a ForestConfig,
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    purity: Purity,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> (u64, u64) {
        let pos = rows.iter().filter(|&&i| self.y[i] == 1).count() as u64;
        (pos, rows.len() as u64 - pos)
    }

    fn best_split_on(&self, rows: &[usize], feature: usize, total: (u64, u64)) -> Option<Candidate> {
        let mut sorted: Vec<(f64, u8)> = rows.iter().map(|&i| (self.x[i * self.dim + feature], self.y[i])).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let min_leaf = self.cfg.min_leaf as u64;
        let mut best: Option<Candidate> = None;
        let (mut lp, mut ln) = (0u64, 0u64);
        for k in 0..sorted.len() - 1 {
            if sorted[k].1 == 1 {
                lp += 1;
            } else {
                ln += 1;
            }
            if sorted[k].0 == sorted[k + 1].0 {
                continue;
            }
            let left = (lp, ln);
            let right = (total.0 - lp, total.1 - ln);
            if lp + ln < min_leaf || right.0 + right.1 < min_leaf {
                continue;
            }
            let purity = Purity::children(left, right);
            // Strictly better only, so the smallest threshold wins ties.
            if best.as_ref().is_none_or(|b| purity.greater_than(b.purity)) {
                best = Some(Candidate {
                    feature,
                    threshold: 0.5 * (sorted[k].0 + sorted[k + 1].0),
                    purity,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (pos, neg) = self.counts(&rows);
        let id = self.nodes.len();
        let leaf = Node::Leaf {
            positive_fraction: pos as f64 / (pos + neg) as f64,
        };
        self.nodes.push(leaf.clone());
        if depth >= self.cfg.max_depth || pos == 0 || neg == 0 || rows.len() < 2 * self.cfg.min_leaf {
            return id;
        }
        let mut features: Vec<usize> = sample(rng, self.dim, self.cfg.features_per_split).into_vec();
        features.sort_unstable();
        let mut best: Option<Candidate> = None;
        for f in features {
            if let Some(c) = self.best_split_on(&rows, f, (pos, neg)) {
                // Features visited in increasing order: ties keep the lower index.
                if best.as_ref().is_none_or(|b| c.purity.greater_than(b.purity)) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else { return id };
        if !best.purity.greater_than(Purity::node(pos, neg)) {
            return id;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i * self.dim + best.feature] <= best.threshold);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

/// Grows one tree on the given row indices (with multiplicity).
pub fn fit_tree(x: &[f64], y: &[u8], dim: usize, rows: Vec<usize>, cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> DecisionTree {
    let mut grower = Grower {
        x,
        y,
        dim,
        cfg,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0, rng);
    DecisionTree { nodes: grower.nodes }
}

/// Fits a forest on a row-major `n x dim` matrix. Tree `t` uses a generator
/// seeded with `seed + t`.
pub fn fit(x: &[f64], y: &[u8], dim: usize, cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate(dim)?;
    let n = y.len();
    if x.len() != n * dim {
        return Err(Error::LengthMismatch {
            what: "feature matrix vs labels",
            left: x.len(),
            right: n * dim,
        });
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::SingleClass {
            context: "random forest training split".into(),
        });
    }
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, y, dim, rows, cfg, &mut rng)
        })
        .collect();
    Ok(Forest { dim, trees })
}
