//! Histogram-based CART regression trees shared by the forest and the
//! boosting learner.
//!
//! Each feature is cut into at most [`MAX_BINS`] bins from its training
//! distribution. Split search accumulates per-bin target sums and counts and
//! scans them for the largest reduction in squared error, so a node costs
//! O(rows × candidate features) instead of a sort per feature.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;

pub const MAX_BINS: usize = 64;

/// Per-feature ascending cut points. A value `v` falls in bin
/// `#{t : t < v}`; "bin ≤ b" is therefore "v ≤ cuts[b]".
#[derive(Debug, Clone)]
pub(crate) struct Binner {
    cuts: Vec<Vec<f64>>,
}

impl Binner {
    pub fn fit(x: &DMatrix<f64>, max_bins: usize) -> Self {
        let n = x.nrows();
        let cuts = (0..x.ncols())
            .map(|j| {
                let mut col: Vec<f64> = x.column(j).iter().copied().collect();
                col.sort_by(f64::total_cmp);
                let mut uniq = col.clone();
                uniq.dedup();
                let mut cuts = Vec::new();
                if uniq.len() <= max_bins {
                    for w in uniq.windows(2) {
                        cuts.push(0.5 * (w[0] + w[1]));
                    }
                } else {
                    for k in 1..max_bins {
                        let idx = k * n / max_bins;
                        if idx == 0 || idx >= n {
                            continue;
                        }
                        let (a, b) = (col[idx - 1], col[idx]);
                        if a < b {
                            cuts.push(0.5 * (a + b));
                        }
                    }
                    cuts.dedup();
                }
                cuts
            })
            .collect();
        Self { cuts }
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    pub fn cut(&self, feature: usize, bin: usize) -> f64 {
        self.cuts[feature][bin]
    }

    /// Column-major bin codes, `codes[j * n + i]`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Vec<u8> {
        let n = x.nrows();
        let mut codes = vec![0u8; n * x.ncols()];
        for (j, cuts) in self.cuts.iter().enumerate() {
            for i in 0..n {
                let v = x[(i, j)];
                codes[j * n + i] = cuts.partition_point(|t| *t < v) as u8;
            }
        }
        codes
    }
}

/// Binned training matrix.
pub(crate) struct Binned<'a> {
    pub binner: &'a Binner,
    pub codes: &'a [u8],
    pub n_rows: usize,
    pub n_features: usize,
}

impl Binned<'_> {
    #[inline]
    fn code(&self, row: u32, feature: usize) -> usize {
        self.codes[feature * self.n_rows + row as usize] as usize
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; `>= n_features` means all.
    pub mtry: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut k = 0usize;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[(i, feature)] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    /// Grow a tree on `rows` (indices into the binned matrix; repeats allowed
    /// for bootstrap samples). `rng` drives per-node feature subsampling.
    pub fn grow<R: Rng>(
        data: &Binned<'_>,
        y: &[f64],
        rows: &mut [u32],
        params: TreeParams,
        rng: &mut R,
    ) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        let mut features: Vec<usize> = (0..data.n_features).collect();
        let mut scratch = Scratch {
            sums: vec![0.0; MAX_BINS + 1],
            counts: vec![0; MAX_BINS + 1],
        };
        tree.grow_node(data, y, rows, 0, params, rng, &mut features, &mut scratch);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow_node<R: Rng>(
        &mut self,
        data: &Binned<'_>,
        y: &[f64],
        rows: &mut [u32],
        depth: usize,
        params: TreeParams,
        rng: &mut R,
        features: &mut [usize],
        scratch: &mut Scratch,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| y[r as usize]).sum();
        let mean = total / n as f64;
        self.nodes.push(Node::Leaf(mean));
        if depth >= params.max_depth || n < 2 * params.min_leaf.max(1) {
            return id;
        }
        let mtry = params.mtry.clamp(1, features.len());
        if mtry < features.len() {
            // partial Fisher–Yates: the first `mtry` slots become the sample
            for k in 0..mtry {
                let j = rng.random_range(k..features.len());
                features.swap(k, j);
            }
        }
        let parent_score = total * total / n as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for &f in &features[..mtry] {
            let nb = data.binner.n_bins(f);
            if nb < 2 {
                continue;
            }
            scratch.sums[..nb].iter_mut().for_each(|s| *s = 0.0);
            scratch.counts[..nb].iter_mut().for_each(|c| *c = 0);
            for &r in rows.iter() {
                let b = data.code(r, f);
                scratch.sums[b] += y[r as usize];
                scratch.counts[b] += 1;
            }
            let (mut sl, mut nl) = (0.0, 0usize);
            for b in 0..nb - 1 {
                sl += scratch.sums[b];
                nl += scratch.counts[b];
                let nr = n - nl;
                if nl < params.min_leaf.max(1) {
                    continue;
                }
                if nr < params.min_leaf.max(1) {
                    break;
                }
                let sr = total - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent_score;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, b));
                }
            }
        }
        let Some((gain, feature, bin)) = best else {
            return id;
        };
        if !(gain > 1e-12 * (1.0 + parent_score.abs())) {
            return id;
        }
        // partition rows: bin <= `bin` to the left
        let mut split = 0;
        for k in 0..n {
            if data.code(rows[k], feature) <= bin {
                rows.swap(k, split);
                split += 1;
            }
        }
        let (lrows, rrows) = rows.split_at_mut(split);
        let left = self.grow_node(data, y, lrows, depth + 1, params, rng, features, scratch);
        let right = self.grow_node(data, y, rrows, depth + 1, params, rng, features, scratch);
        self.nodes[id as usize] = Node::Split {
            feature,
            threshold: data.binner.cut(feature, bin),
            left,
            right,
        };
        id
    }
}

struct Scratch {
    sums: Vec<f64>,
    counts: Vec<usize>,
}
