//! Soft binary decision tree over 2-D locations.
//!
//! Each node holds a weight pair and a bias; its decision score is
//! `sigmoid(w . l - b)`. A location's score for leaf `k` is the product of the
//! per-level scores along the path to that leaf, taking `sigma` on a left
//! branch and `1 - sigma` on a right branch. The K = 2^depth leaf scores form
//! a convex weighting over subregions: they sum to 1 for every location.
//!
//! Tree evaluation is read-only and thread-safe; parameter updates require
//! exclusive access.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;

/// One decision node: weights over (x, y) and a bias threshold.
///
/// The decision argument is `w . l - b`; positive values favor the left
/// branch. Steepness is carried by `|w|` and learned, not a separate knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub w: [f64; 2],
    pub b: f64,
}

impl TreeNode {
    pub fn new(w: [f64; 2], b: f64) -> Self {
        TreeNode { w, b }
    }

    /// Sigmoid decision score at a location.
    pub fn score(&self, l: [f64; 2]) -> f64 {
        sigmoid(self.w[0] * l[0] + self.w[1] * l[1] - self.b)
    }
}

/// Depth-`depth` complete binary tree; nodes stored breadth-first.
///
/// Depth 0 is the degenerate single-leaf tree (no nodes, scores = `[1.0]`),
/// which reduces the model to one spatially homogeneous subregion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    depth: usize,
    nodes: Vec<TreeNode>,
}

/// Leaf-score vector rho(l): each entry in (0, 1), summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SubregionScores(pub Vec<f64>);

impl SubregionScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for SubregionScores {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Exact partials of every leaf score with respect to every node parameter.
///
/// Flat layout: entry for node `r` and leaf `k` sits at `r * n_leaves + k`.
/// Nodes off the path to a leaf contribute zeros.
#[derive(Debug, Clone)]
pub struct ScoreJacobian {
    pub n_leaves: usize,
    pub d_wx: Vec<f64>,
    pub d_wy: Vec<f64>,
    pub d_b: Vec<f64>,
}

impl DecisionTree {
    /// Build a tree from breadth-first nodes; `nodes.len()` must be `2^depth - 1`.
    pub fn new(depth: usize, nodes: Vec<TreeNode>) -> Result<Self> {
        let expected = (1usize << depth) - 1;
        if nodes.len() != expected {
            return Err(Error::Precondition(format!(
                "depth-{depth} tree needs {expected} nodes, got {}",
                nodes.len()
            )));
        }
        for (r, n) in nodes.iter().enumerate() {
            if !(n.w[0].is_finite() && n.w[1].is_finite() && n.b.is_finite()) {
                return Err(Error::Precondition(format!("non-finite parameters at node {r}")));
            }
        }
        Ok(DecisionTree { depth, nodes })
    }

    /// Random initialization: weights uniform in [-1, 1], biases placed so the
    /// initial hyperplane passes near the location spread of `anchors`.
    ///
    /// Anchoring the bias at a jittered data median avoids starts where all
    /// mass collapses into one leaf.
    pub fn init_random(depth: usize, anchors: &[[f64; 2]], rng: &mut crate::Rng) -> Self {
        let (median, iqr) = median_and_iqr(anchors);
        let n_nodes = (1usize << depth) - 1;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let w = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            let anchor = [
                median[0] + rng.gen_range(-0.25..=0.25) * iqr[0],
                median[1] + rng.gen_range(-0.25..=0.25) * iqr[1],
            ];
            let b = w[0] * anchor[0] + w[1] * anchor[1];
            nodes.push(TreeNode::new(w, b));
        }
        DecisionTree { depth, nodes }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [TreeNode] {
        &mut self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of leaves K = 2^depth.
    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    /// Subregion score vector rho(l).
    pub fn scores(&self, l: [f64; 2]) -> SubregionScores {
        let mut out = vec![0.0; self.n_leaves()];
        self.scores_into(l, &mut out);
        SubregionScores(out)
    }

    /// Write rho(l) into a caller-provided buffer of length `n_leaves()`.
    ///
    /// Level sweep: the buffer entry for a path prefix splits into its two
    /// children scaled by sigma and 1 - sigma of the prefix's node.
    pub fn scores_into(&self, l: [f64; 2], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_leaves());
        out[0] = 1.0;
        let mut width = 1usize;
        for level in 0..self.depth {
            let first = (1usize << level) - 1;
            // Expand in place from the back so parents are not overwritten.
            for i in (0..width).rev() {
                let s = self.nodes[first + i].score(l);
                let p = out[i];
                out[2 * i] = p * s;
                out[2 * i + 1] = p * (1.0 - s);
            }
            width *= 2;
        }
    }

    /// Index of the leaf with the highest score; ties break to the lowest index.
    pub fn hard_assign(&self, l: [f64; 2]) -> usize {
        let scores = self.scores(l);
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        best
    }

    /// Leaf reached by following the sign of `w . l - b` at every node
    /// (left on positive). This is the hard-limit partition the soft scores
    /// converge to as parameters scale up.
    pub fn sign_assign(&self, l: [f64; 2]) -> usize {
        let mut node = 0usize;
        let mut leaf = 0usize;
        for _ in 0..self.depth {
            let n = &self.nodes[node];
            let go_left = n.w[0] * l[0] + n.w[1] * l[1] - n.b > 0.0;
            leaf = 2 * leaf + usize::from(!go_left);
            node = 2 * node + if go_left { 1 } else { 2 };
        }
        leaf
    }

    /// Exact Jacobian of every leaf score w.r.t. every node's (w, b) at `l`.
    ///
    /// For a node on the path to leaf k with decision argument a = w . l - b:
    /// d rho_k / d a = +rho_k (1 - sigma) on a left branch, -rho_k sigma on a
    /// right branch; then d/dw = (d/da) l and d/db = -(d/da). Off-path nodes
    /// contribute zero.
    pub fn score_jacobian(&self, l: [f64; 2]) -> ScoreJacobian {
        let n_leaves = self.n_leaves();
        let n = self.n_nodes() * n_leaves;
        let mut jac = ScoreJacobian {
            n_leaves,
            d_wx: vec![0.0; n],
            d_wy: vec![0.0; n],
            d_b: vec![0.0; n],
        };
        if self.depth == 0 {
            return jac;
        }
        let sig: Vec<f64> = self.nodes.iter().map(|m| m.score(l)).collect();
        let rho = self.scores(l);
        for k in 0..n_leaves {
            for level in 0..self.depth {
                let prefix = k >> (self.depth - level);
                let r = ((1usize << level) - 1) + prefix;
                let goes_left = (k >> (self.depth - 1 - level)) & 1 == 0;
                let d_a = if goes_left {
                    rho[k] * (1.0 - sig[r])
                } else {
                    -rho[k] * sig[r]
                };
                let idx = r * n_leaves + k;
                jac.d_wx[idx] = d_a * l[0];
                jac.d_wy[idx] = d_a * l[1];
                jac.d_b[idx] = -d_a;
            }
        }
        jac
    }
}

/// Per-axis median and interquartile range of a point set.
fn median_and_iqr(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    if points.is_empty() {
        return ([0.0, 0.0], [1.0, 1.0]);
    }
    let mut med = [0.0; 2];
    let mut iqr = [0.0; 2];
    for axis in 0..2 {
        let mut vals: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |f: f64| vals[((vals.len() - 1) as f64 * f).round() as usize];
        med[axis] = q(0.5);
        iqr[axis] = (q(0.75) - q(0.25)).max(1e-6);
    }
    (med, iqr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth1(w: [f64; 2], b: f64) -> DecisionTree {
        DecisionTree::new(1, vec![TreeNode::new(w, b)]).unwrap()
    }

    fn uniform_tree(depth: usize, w: [f64; 2], b: f64) -> DecisionTree {
        let n = (1usize << depth) - 1;
        DecisionTree::new(depth, vec![TreeNode::new(w, b); n]).unwrap()
    }

    #[test]
    fn boundary_location_splits_evenly() {
        let t = depth1([1.0, 0.0], 0.0);
        let rho = t.scores([0.0, 5.0]);
        assert!((rho[0] - 0.5).abs() < 1e-15);
        assert!((rho[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn saturated_sigmoid_concentrates_on_left_leaf() {
        let t = depth1([1.0, 0.0], 0.0);
        let rho = t.scores([20.0, 0.0]);
        assert!((rho[0] - 1.0).abs() < 1e-8);
        assert!(rho[1] < 1e-8);
    }

    #[test]
    fn depth2_center_gives_quarter_scores() {
        // Oracle: product of per-level sigmoids, sigma(0) = 0.5 at both levels,
        // so every leaf carries 0.25.
        let t = uniform_tree(2, [1.0, 0.0], 0.0);
        let rho = t.scores([0.0, 0.0]);
        for k in 0..4 {
            assert!((rho[k] - 0.25).abs() < 1e-15, "leaf {k}: {}", rho[k]);
        }
    }

    #[test]
    fn hard_assign_follows_sign() {
        let t = depth1([1.0, 0.0], 0.0);
        assert_eq!(t.hard_assign([3.0, 0.0]), 0);
        assert_eq!(t.hard_assign([-3.0, 0.0]), 1);
    }

    #[test]
    fn hard_assign_tie_breaks_to_lowest_index() {
        let t = uniform_tree(2, [1.0, 0.0], 0.0);
        assert_eq!(t.hard_assign([0.0, 0.0]), 0);
    }

    #[test]
    fn depth1_bias_jacobian_matches_hand_value() {
        // sigma = 0.5 at the node: d rho_0 / d b = -0.25, d rho_1 / d b = +0.25.
        let t = depth1([1.0, 0.0], 1.0);
        let jac = t.score_jacobian([1.0, 0.0]);
        assert!((jac.d_b[0] - -0.25).abs() < 1e-15);
        assert!((jac.d_b[1] - 0.25).abs() < 1e-15);
        // w partial is the opposite-signed b partial times l.
        assert!((jac.d_wx[0] - 0.25).abs() < 1e-15);
        assert!((jac.d_wy[0] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn saturated_node_has_vanishing_partials() {
        let t = depth1([10.0, 0.0], 0.0);
        let jac = t.score_jacobian([5.0, 0.0]);
        for v in jac.d_b.iter().chain(&jac.d_wx).chain(&jac.d_wy) {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn node_count_is_validated() {
        assert!(DecisionTree::new(2, vec![TreeNode::new([1.0, 0.0], 0.0); 2]).is_err());
    }

    #[test]
    fn depth0_tree_is_a_single_full_leaf() {
        let t = DecisionTree::new(0, vec![]).unwrap();
        assert_eq!(t.n_leaves(), 1);
        let rho = t.scores([3.0, -2.0]);
        assert_eq!(rho.as_slice(), &[1.0]);
        assert_eq!(t.hard_assign([3.0, -2.0]), 0);
        assert!(t.score_jacobian([3.0, -2.0]).d_b.is_empty());
    }

    /// Central finite difference of rho_k w.r.t. one scalar parameter.
    fn fd_score(tree: &DecisionTree, l: [f64; 2], node: usize, param: usize, k: usize) -> f64 {
        let h = 1e-6;
        let mut plus = tree.clone();
        let mut minus = tree.clone();
        match param {
            0 => {
                plus.nodes_mut()[node].w[0] += h;
                minus.nodes_mut()[node].w[0] -= h;
            }
            1 => {
                plus.nodes_mut()[node].w[1] += h;
                minus.nodes_mut()[node].w[1] -= h;
            }
            _ => {
                plus.nodes_mut()[node].b += h;
                minus.nodes_mut()[node].b -= h;
            }
        }
        (plus.scores(l)[k] - minus.scores(l)[k]) / (2.0 * h)
    }

    fn random_tree(depth: usize, rng: &mut crate::Rng) -> DecisionTree {
        let n = (1usize << depth) - 1;
        let nodes = (0..n)
            .map(|_| {
                TreeNode::new(
                    [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        DecisionTree::new(depth, nodes).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = crate::rng_for_seed(7);
        for trial in 0..100 {
            let depth = 1 + trial % 3;
            let tree = random_tree(depth, &mut rng);
            let l = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let jac = tree.score_jacobian(l);
            let nl = tree.n_leaves();
            for r in 0..tree.n_nodes() {
                for k in 0..nl {
                    for (param, analytic) in [
                        (0usize, jac.d_wx[r * nl + k]),
                        (1, jac.d_wy[r * nl + k]),
                        (2, jac.d_b[r * nl + k]),
                    ] {
                        let fd = fd_score(&tree, l, r, param, k);
                        let denom = fd.abs().max(analytic.abs()).max(1e-8);
                        assert!(
                            (fd - analytic).abs() / denom < 1e-4,
                            "trial {trial} node {r} leaf {k} param {param}: fd={fd} analytic={analytic}"
                        );
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn scores_are_normalized_and_in_range(
            depth in 0usize..4,
            seed in any::<u64>(),
            lx in -10.0f64..10.0,
            ly in -10.0f64..10.0,
        ) {
            let mut rng = crate::rng_for_seed(seed);
            let tree = random_tree(depth, &mut rng);
            let rho = tree.scores([lx, ly]);
            let sum: f64 = rho.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for &v in rho.as_slice() {
                prop_assert!(v >= 0.0 && v <= 1.0);
            }
        }

        #[test]
        fn jacobian_columns_sum_to_zero(
            depth in 1usize..4,
            seed in any::<u64>(),
            lx in -5.0f64..5.0,
            ly in -5.0f64..5.0,
        ) {
            // Scores sum to the constant 1, so every parameter's partials
            // cancel across leaves.
            let mut rng = crate::rng_for_seed(seed);
            let tree = random_tree(depth, &mut rng);
            let jac = tree.score_jacobian([lx, ly]);
            let nl = tree.n_leaves();
            for r in 0..tree.n_nodes() {
                let row = &jac.d_b[r * nl..(r + 1) * nl];
                let s: f64 = row.iter().sum();
                prop_assert!(s.abs() < 1e-12);
            }
        }

        #[test]
        fn hard_limit_matches_sign_rule(
            depth in 1usize..4,
            seed in any::<u64>(),
            lx in -5.0f64..5.0,
            ly in -5.0f64..5.0,
        ) {
            let mut rng = crate::rng_for_seed(seed);
            let tree = random_tree(depth, &mut rng);
            // Scale all parameters hard; scores converge to a one-hot vector
            // at the sign-rule leaf unless the location sits on a boundary.
            let mut scaled = tree.clone();
            for n in scaled.nodes_mut() {
                n.w[0] *= 1e5;
                n.w[1] *= 1e5;
                n.b *= 1e5;
            }
            let on_boundary = tree.nodes().iter().any(|n| {
                (n.w[0] * lx + n.w[1] * ly - n.b).abs() < 1e-2
            });
            prop_assume!(!on_boundary);
            let hot = scaled.hard_assign([lx, ly]);
            prop_assert_eq!(hot, tree.sign_assign([lx, ly]));
            prop_assert!(scaled.scores([lx, ly])[hot] > 1.0 - 1e-6);
        }
    }
}
