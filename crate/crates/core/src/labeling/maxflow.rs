//! Dinic max-flow on real capacities, used for binary expansion moves.

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

pub(crate) struct FlowGraph {
    adj: Vec<Vec<Arc>>,
    source: usize,
    sink: usize,
    /// Constant energy offset accumulated by terminal reparametrization.
    pub constant: f64,
}

impl FlowGraph {
    /// `nodes` inner nodes plus a source and a sink.
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes + 2],
            source: nodes,
            sink: nodes + 1,
            constant: 0.0,
        }
    }

    fn add_arc(&mut self, u: usize, v: usize, cap: f64) {
        let ru = self.adj[v].len();
        let rv = self.adj[u].len();
        self.adj[u].push(Arc { to: v, cap, rev: ru });
        self.adj[v].push(Arc { to: u, cap: 0.0, rev: rv });
    }

    /// Adds the cost `cost0` if node `v` ends up labeled 0 (source side) and
    /// `cost1` if labeled 1 (sink side).
    pub fn add_unary(&mut self, v: usize, cost0: f64, cost1: f64) {
        let m = cost0.min(cost1);
        self.constant += m;
        if cost1 - m > 0.0 {
            self.add_arc(self.source, v, cost1 - m);
        }
        if cost0 - m > 0.0 {
            self.add_arc(v, self.sink, cost0 - m);
        }
    }

    /// Adds `cost` when `u` is 0 and `v` is 1.
    pub fn add_directed(&mut self, u: usize, v: usize, cost: f64) {
        if cost > 0.0 {
            self.add_arc(u, v, cost);
        }
    }

    /// Adds a submodular pairwise term with table `[[e00, e01], [e10, e11]]`.
    pub fn add_pairwise(&mut self, u: usize, v: usize, e00: f64, e01: f64, e10: f64, e11: f64) {
        // E = e00 + (e10−e00)·x_u + (e11−e10)·x_v + (e01+e10−e00−e11)·[x_u=0, x_v=1]
        self.constant += e00;
        self.add_unary(u, 0.0, e10 - e00);
        self.add_unary(v, 0.0, e11 - e10);
        let w = e01 + e10 - e00 - e11;
        debug_assert!(w >= -1e-9, "non-submodular term");
        self.add_directed(u, v, w.max(0.0));
    }

    /// Runs max-flow and returns, per inner node, whether it is on the sink
    /// side (label 1).
    pub fn solve(&mut self) -> (f64, Vec<bool>) {
        let n = self.adj.len();
        let mut flow = 0.0;
        let mut level = vec![-1i64; n];
        let mut iter = vec![0usize; n];
        loop {
            level.fill(-1);
            level[self.source] = 0;
            let mut queue = VecDeque::from([self.source]);
            while let Some(u) = queue.pop_front() {
                for a in &self.adj[u] {
                    if a.cap > EPS && level[a.to] < 0 {
                        level[a.to] = level[u] + 1;
                        queue.push_back(a.to);
                    }
                }
            }
            if level[self.sink] < 0 {
                break;
            }
            iter.fill(0);
            loop {
                let f = self.augment(self.source, f64::INFINITY, &level, &mut iter);
                if f <= EPS {
                    break;
                }
                flow += f;
            }
        }
        // Source side = reachable in the residual graph.
        let mut reach = vec![false; n];
        reach[self.source] = true;
        let mut stack = vec![self.source];
        while let Some(u) = stack.pop() {
            for a in &self.adj[u] {
                if a.cap > EPS && !reach[a.to] {
                    reach[a.to] = true;
                    stack.push(a.to);
                }
            }
        }
        let sides = (0..n - 2).map(|v| !reach[v]).collect();
        (flow, sides)
    }

    fn augment(&mut self, u: usize, limit: f64, level: &[i64], iter: &mut [usize]) -> f64 {
        if u == self.sink {
            return limit;
        }
        while iter[u] < self.adj[u].len() {
            let i = iter[u];
            let (to, cap) = (self.adj[u][i].to, self.adj[u][i].cap);
            if cap > EPS && level[to] == level[u] + 1 {
                let pushed = self.augment(to, limit.min(cap), level, iter);
                if pushed > EPS {
                    self.adj[u][i].cap -= pushed;
                    let rev = self.adj[u][i].rev;
                    self.adj[to][rev].cap += pushed;
                    return pushed;
                }
            }
            iter[u] += 1;
        }
        0.0
    }
}
