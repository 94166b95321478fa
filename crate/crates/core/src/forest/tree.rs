use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
        count: u32,
    },
}

/// Axis-aligned regression tree; node 0 is the root. Samples go left when
/// `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub min_leaf: usize,
    pub features_tested: usize,
    pub max_depth: Option<usize>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
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
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left as usize).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Structural check used after deserialization.
    pub(crate) fn validate(&self, n_features: usize) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().all(|n| match *n {
                Node::Leaf { value, .. } => value.is_finite(),
                Node::Split {
                    feature, left, right, ..
                } => {
                    (feature as usize) < n_features
                        && (left as usize) < self.nodes.len()
                        && (right as usize) < self.nodes.len()
                }
            })
    }

    /// Grows a variance-reduction tree on row-major `x` (`n × n_features`).
    pub(crate) fn grow(x: &[f64], n_features: usize, y: &[f64], params: GrowParams, rng: &mut Rng) -> Self {
        let n = y.len();
        debug_assert_eq!(x.len(), n * n_features);
        let min_leaf = params.min_leaf.max(1);
        let mut idx: Vec<u32> = (0..n as u32).collect();
        let mut nodes: Vec<Node> = Vec::new();
        // (node slot, lo, hi, depth)
        let mut stack = vec![(0usize, 0usize, n, 0usize)];
        nodes.push(Node::Leaf { value: 0.0, count: 0 });
        let mut order: Vec<usize> = (0..n_features).collect();
        let mut pairs: Vec<(f64, f64)> = Vec::new();

        while let Some((slot, lo, hi, depth)) = stack.pop() {
            let m = hi - lo;
            let members = &idx[lo..hi];
            let sum: f64 = members.iter().map(|&i| y[i as usize]).sum();
            let mean = sum / m as f64;
            let pure = members.iter().all(|&i| y[i as usize] == y[members[0] as usize]);
            let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
            if m < 2 * min_leaf || pure || depth_capped {
                nodes[slot] = Node::Leaf {
                    value: mean,
                    count: m as u32,
                };
                continue;
            }

            order.shuffle(rng);
            let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
            let mut tested = 0;
            for &f in order.iter() {
                if tested == params.features_tested {
                    break;
                }
                pairs.clear();
                pairs.extend(members.iter().map(|&i| (x[i as usize * n_features + f], y[i as usize])));
                pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                if pairs[0].0 == pairs[m - 1].0 {
                    continue;
                }
                tested += 1;
                let mut left_sum = 0.0;
                for k in 1..m {
                    left_sum += pairs[k - 1].1;
                    if k < min_leaf || m - k < min_leaf || pairs[k - 1].0 == pairs[k].0 {
                        continue;
                    }
                    let right_sum = sum - left_sum;
                    let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (m - k) as f64;
                    if best.is_none_or(|b| score > b.0) {
                        let (a, b) = (pairs[k - 1].0, pairs[k].0);
                        let mid = 0.5 * (a + b);
                        let threshold = if mid < b { mid } else { a };
                        best = Some((score, f, threshold));
                    }
                }
            }
            let Some((_, feature, threshold)) = best else {
                nodes[slot] = Node::Leaf {
                    value: mean,
                    count: m as u32,
                };
                continue;
            };

            // partition idx[lo..hi] in place
            let seg = &mut idx[lo..hi];
            let mut split = 0;
            for k in 0..m {
                if x[seg[k] as usize * n_features + feature] <= threshold {
                    seg.swap(k, split);
                    split += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0, count: 0 });
            nodes.push(Node::Leaf { value: 0.0, count: 0 });
            nodes[slot] = Node::Split {
                feature: feature as u32,
                threshold,
                left: left as u32,
                right: left as u32 + 1,
            };
            stack.push((left + 1, lo + split, hi, depth + 1));
            stack.push((left, lo, lo + split, depth + 1));
        }
        RegressionTree { nodes }
    }
}
