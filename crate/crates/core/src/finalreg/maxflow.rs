//! Dinic max-flow on a graph with real capacities, and the construction of
//! graph-representable binary energies on top of it.

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct FlowGraph {
    adj: Vec<Vec<usize>>,
    edges: Vec<Edge>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); n],
            edges: Vec::new(),
            level: vec![0; n],
            iter: vec![0; n],
        }
    }

    /// Directed edge `a -> b` with capacity `cab` and reverse capacity `cba`.
    pub fn add_edge(&mut self, a: usize, b: usize, cab: f64, cba: f64) {
        self.adj[a].push(self.edges.len());
        self.edges.push(Edge { to: b, cap: cab });
        self.adj[b].push(self.edges.len());
        self.edges.push(Edge { to: a, cap: cba });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(-1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let Edge { to, cap } = self.edges[e];
                if cap > EPS && self.level[to] < 0 {
                    self.level[to] = self.level[v] + 1;
                    queue.push_back(to);
                }
            }
        }
        self.level[t] >= 0
    }

    /// Blocking flow on the current level graph, with an explicit path stack.
    fn blocking_flow(&mut self, s: usize, t: usize) -> f64 {
        self.iter.fill(0);
        let mut total = 0.0;
        let mut path: Vec<usize> = Vec::new();
        let mut v = s;
        loop {
            if v == t {
                let f = path.iter().map(|&e| self.edges[e].cap).fold(f64::INFINITY, f64::min);
                for &e in &path {
                    self.edges[e].cap -= f;
                    self.edges[e ^ 1].cap += f;
                }
                total += f;
                let k = path.iter().position(|&e| self.edges[e].cap <= EPS).unwrap_or(0);
                path.truncate(k);
                v = path.last().map_or(s, |&e| self.edges[e].to);
                continue;
            }
            let mut advanced = false;
            while self.iter[v] < self.adj[v].len() {
                let e = self.adj[v][self.iter[v]];
                let Edge { to, cap } = self.edges[e];
                if cap > EPS && self.level[to] == self.level[v] + 1 {
                    path.push(e);
                    v = to;
                    advanced = true;
                    break;
                }
                self.iter[v] += 1;
            }
            if !advanced {
                if v == s {
                    return total;
                }
                // dead end: remove v from the level graph and retreat
                self.level[v] = -1;
                let e = path.pop().expect("non-source node has an incoming path edge");
                v = self.edges[e ^ 1].to;
                self.iter[v] += 1;
            }
        }
    }

    /// Maximum flow from `s` to `t`; the residual graph is kept for
    /// [`source_side`](Self::source_side).
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            flow += self.blocking_flow(s, t);
        }
        flow
    }

    /// Nodes reachable from `s` in the residual graph after `max_flow`.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let Edge { to, cap } = self.edges[e];
                if cap > EPS && !seen[to] {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        }
        seen
    }
}

/// Binary energy `sum_i E_i(x_i) + sum_ij E_ij(x_i, x_j)` over `x in {0, 1}^n`
/// with submodular pairwise terms, minimized exactly by one cut.
pub(crate) struct BinaryEnergy {
    n: usize,
    graph: FlowGraph,
    constant: f64,
    // accumulated unary difference E_i(1) - E_i(0)
    unary: Vec<f64>,
}

impl BinaryEnergy {
    pub fn new(n: usize) -> Self {
        BinaryEnergy {
            n,
            graph: FlowGraph::new(n + 2),
            constant: 0.0,
            unary: vec![0.0; n],
        }
    }

    pub fn add_unary(&mut self, i: usize, e0: f64, e1: f64) {
        self.constant += e0;
        self.unary[i] += e1 - e0;
    }

    /// Pairwise table `(E00, E01, E10, E11)`; requires `E00 + E11 <= E01 + E10`.
    pub fn add_pairwise(&mut self, i: usize, j: usize, e00: f64, e01: f64, e10: f64, e11: f64) {
        let c = e01 + e10 - e00 - e11;
        debug_assert!(c >= -1e-9, "non-submodular pairwise term");
        self.constant += e00;
        self.unary[i] += e10 - e00;
        self.unary[j] += e11 - e10;
        if c > 0.0 {
            self.graph.add_edge(i, j, c, 0.0);
        }
    }

    /// Minimizing assignment (`true` means label 1) and its energy.
    pub fn minimize(mut self) -> (Vec<bool>, f64) {
        let (s, t) = (self.n, self.n + 1);
        let mut constant = self.constant;
        for i in 0..self.n {
            let d = self.unary[i];
            if d > 0.0 {
                // paying d when x_i = 1: edge s -> i is cut when i is on the sink side
                self.graph.add_edge(s, i, d, 0.0);
            } else if d < 0.0 {
                constant += d;
                self.graph.add_edge(i, t, -d, 0.0);
            }
        }
        let flow = self.graph.max_flow(s, t);
        let side = self.graph.source_side(s);
        ((0..self.n).map(|i| !side[i]).collect(), constant + flow)
    }
}
