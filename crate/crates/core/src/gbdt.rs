//! Histogram-split gradient-boosted trees: a softmax classifier and a
//! squared-loss regressor.
//!
//! Features are bucketed into at most `max_bins` quantile bins per column at
//! training time only; fitted trees store raw thresholds, so prediction is a
//! plain comparison walk and needs no binning state.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub max_bins: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Row fraction drawn per round; 1.0 disables sampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 6,
            learning_rate: 0.1,
            min_leaf: 5,
            max_bins: 64,
            lambda: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

/// Node 0 is the root. `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn check_matrix(x: &[Vec<f64>], n_targets: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    if x.len() != n_targets {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: n_targets,
        });
    }
    let dim = x[0].len();
    for (r, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: row.len(),
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateData(format!(
                "non-finite feature at row {r}, column {c}"
            )));
        }
    }
    Ok(dim)
}

fn check_config(cfg: &GbdtConfig) -> Result<()> {
    let ok = cfg.max_bins >= 2
        && cfg.max_bins <= 256
        && cfg.min_leaf >= 1
        && cfg.learning_rate > 0.0
        && cfg.lambda >= 0.0
        && cfg.subsample > 0.0
        && cfg.subsample <= 1.0;
    if ok {
        Ok(())
    } else {
        Err(Error::BadSpec(format!("invalid boosting config {cfg:?}")))
    }
}

/// Column-major bin codes plus the cut points that define them.
struct Binned {
    cuts: Vec<Vec<f64>>,
    codes: Vec<Vec<u8>>,
}

impl Binned {
    fn new(x: &[Vec<f64>], dim: usize, max_bins: usize) -> Self {
        let n = x.len();
        let mut cuts = Vec::with_capacity(dim);
        let mut codes = Vec::with_capacity(dim);
        for f in 0..dim {
            let mut col: Vec<f64> = x.iter().map(|r| r[f]).collect();
            col.sort_by(f64::total_cmp);
            let mut c: Vec<f64> = Vec::new();
            for b in 1..max_bins {
                let k = b * n / max_bins;
                if k == 0 || k >= n {
                    continue;
                }
                let (lo, hi) = (col[k - 1], col[k]);
                if lo < hi {
                    let mid = lo + (hi - lo) / 2.0;
                    if c.last().is_none_or(|&last| last < mid) {
                        c.push(mid);
                    }
                }
            }
            // Few distinct values: cut between every pair.
            let mut distinct = col.clone();
            distinct.dedup();
            if distinct.len() <= max_bins {
                c = distinct
                    .windows(2)
                    .map(|w| w[0] + (w[1] - w[0]) / 2.0)
                    .collect();
            }
            codes.push(
                x.iter()
                    .map(|r| c.partition_point(|&cut| cut < r[f]) as u8)
                    .collect(),
            );
            cuts.push(c);
        }
        Self { cuts, codes }
    }
}

struct Grower<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        -self.cfg.learning_rate * g / (h + self.cfg.lambda)
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, usize)> {
        let lambda = self.cfg.lambda;
        let g_all: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h_all: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let parent = g_all * g_all / (h_all + lambda);
        let mut best: Option<(f64, usize, usize)> = None;
        for (f, cuts) in self.binned.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let nb = cuts.len() + 1;
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            let mut hc = vec![0usize; nb];
            let codes = &self.binned.codes[f];
            for &i in rows {
                let b = codes[i] as usize;
                hg[b] += self.grad[i];
                hh[b] += self.hess[i];
                hc[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                let cr = rows.len() - cl;
                if cl < self.cfg.min_leaf || cr < self.cfg.min_leaf {
                    continue;
                }
                let (gr, hr) = (g_all - gl, h_all - hl);
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, f, b));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let split = if depth < self.cfg.max_depth && rows.len() >= 2 * self.cfg.min_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => self.nodes[id] = Node::Leaf(self.leaf_value(&rows)),
            Some((feature, bin)) => {
                let codes = &self.binned.codes[feature];
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| (codes[i] as usize) <= bin);
                let threshold = self.binned.cuts[feature][bin];
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

fn fit_tree(
    binned: &Binned,
    grad: &[f64],
    hess: &[f64],
    rows: Vec<usize>,
    cfg: &GbdtConfig,
) -> Tree {
    let mut g = Grower {
        binned,
        grad,
        hess,
        cfg,
        nodes: Vec::new(),
    };
    g.grow(rows, 0);
    Tree { nodes: g.nodes }
}

fn round_rows(n: usize, cfg: &GbdtConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if cfg.subsample >= 1.0 {
        return (0..n).collect();
    }
    let take = ((n as f64 * cfg.subsample).ceil() as usize).clamp(1, n);
    let mut rows = sample(rng, n, take).into_vec();
    rows.sort_unstable();
    rows
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|e| e / sum).collect()
}

/// Multi-class softmax ensemble: one tree per class per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtClassifier {
    pub n_classes: usize,
    pub n_features: usize,
    pub base: Vec<f64>,
    /// `rounds[r][k]` is the class-`k` tree of round `r`.
    pub rounds: Vec<Vec<Tree>>,
    /// Set when training saw a single class.
    pub constant: Option<usize>,
}

impl GbdtClassifier {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &GbdtConfig) -> Result<Self> {
        Self::fit_traced(x, y, n_classes, cfg).map(|(m, _)| m)
    }

    /// Also returns the mean training cross-entropy before the first and
    /// after every round.
    pub fn fit_traced(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        cfg: &GbdtConfig,
    ) -> Result<(Self, Vec<f64>)> {
        check_config(cfg)?;
        let dim = check_matrix(x, y.len())?;
        if n_classes < 2 {
            return Err(Error::BadSpec("need at least two classes".into()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::OutOfRange {
                value: bad as f64,
                min: 0.0,
                max: (n_classes - 1) as f64,
            });
        }
        let n = x.len();
        let mut counts = vec![0usize; n_classes];
        for &c in y {
            counts[c] += 1;
        }
        if counts.iter().filter(|&&c| c > 0).count() == 1 {
            let class = y[0];
            return Ok((
                Self {
                    n_classes,
                    n_features: dim,
                    base: vec![0.0; n_classes],
                    rounds: Vec::new(),
                    constant: Some(class),
                },
                vec![0.0],
            ));
        }
        let base: Vec<f64> = counts
            .iter()
            .map(|&c| ((c as f64 + 1.0) / (n as f64 + n_classes as f64)).ln())
            .collect();
        let binned = Binned::new(x, dim, cfg.max_bins);
        let mut raw: Vec<Vec<f64>> = vec![base.clone(); n];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let loss = |raw: &[Vec<f64>]| {
            raw.iter()
                .zip(y)
                .map(|(r, &c)| -softmax(r)[c].max(1e-300).ln())
                .sum::<f64>()
                / n as f64
        };
        let mut history = vec![loss(&raw)];
        let mut rounds = Vec::with_capacity(cfg.n_trees);
        for _ in 0..cfg.n_trees {
            let probs: Vec<Vec<f64>> = raw.iter().map(|r| softmax(r)).collect();
            let rows = round_rows(n, cfg, &mut rng);
            let mut trees = Vec::with_capacity(n_classes);
            #[allow(clippy::needless_range_loop)]
            for k in 0..n_classes {
                let grad: Vec<f64> = (0..n)
                    .map(|i| probs[i][k] - if y[i] == k { 1.0 } else { 0.0 })
                    .collect();
                let hess: Vec<f64> = (0..n)
                    .map(|i| (probs[i][k] * (1.0 - probs[i][k])).max(1e-6))
                    .collect();
                trees.push(fit_tree(&binned, &grad, &hess, rows.clone(), cfg));
            }
            for (i, r) in raw.iter_mut().enumerate() {
                for (k, t) in trees.iter().enumerate() {
                    r[k] += t.predict(&x[i]);
                }
            }
            history.push(loss(&raw));
            rounds.push(trees);
        }
        Ok((
            Self {
                n_classes,
                n_features: dim,
                base,
                rounds,
                constant: None,
            },
            history,
        ))
    }

    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut raw = self.base.clone();
        for trees in &self.rounds {
            for (k, t) in trees.iter().enumerate() {
                raw[k] += t.predict(x);
            }
        }
        raw
    }

    /// Class probabilities; `x` must have `n_features` entries.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        if let Some(c) = self.constant {
            let mut p = vec![0.0; self.n_classes];
            p[c] = 1.0;
            return p;
        }
        softmax(&self.raw_scores(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtRegressor {
    pub n_features: usize,
    pub base: f64,
    pub trees: Vec<Tree>,
}

impl GbdtRegressor {
    pub fn constant(n_features: usize, value: f64) -> Self {
        Self {
            n_features,
            base: value,
            trees: Vec::new(),
        }
    }

    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &GbdtConfig) -> Result<Self> {
        Self::fit_traced(x, y, cfg).map(|(m, _)| m)
    }

    /// Also returns the mean squared training error before the first and
    /// after every round.
    pub fn fit_traced(x: &[Vec<f64>], y: &[f64], cfg: &GbdtConfig) -> Result<(Self, Vec<f64>)> {
        check_config(cfg)?;
        let dim = check_matrix(x, y.len())?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        let n = x.len();
        let base = y.iter().sum::<f64>() / n as f64;
        let binned = Binned::new(x, dim, cfg.max_bins);
        let mut pred = vec![base; n];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mse =
            |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        let mut history = vec![mse(&pred)];
        let hess = vec![1.0; n];
        let mut trees = Vec::with_capacity(cfg.n_trees);
        for _ in 0..cfg.n_trees {
            let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
            let rows = round_rows(n, cfg, &mut rng);
            let tree = fit_tree(&binned, &grad, &hess, rows, cfg);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += tree.predict(&x[i]);
            }
            history.push(mse(&pred));
            trees.push(tree);
        }
        Ok((
            Self {
                n_features: dim,
                base,
                trees,
            },
            history,
        ))
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}
