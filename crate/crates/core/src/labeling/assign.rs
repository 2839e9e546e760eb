use serde::{Deserialize, Serialize};

use super::energy::unary_table;
use super::maxflow::FlowGraph;
use super::{Label, Labeling, Problem, ResidualCache, Slot};

/// Discrete optimizer used for the assignment step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignStrategy {
    /// Exact search on small instances, expansion moves otherwise.
    #[default]
    Auto,
    Icm,
    Expansion,
    Exact,
}

/// Instances with at most this many joint labelings are solved exactly
/// under [`AssignStrategy::Auto`].
const EXACT_LIMIT: f64 = (1u64 << 20) as f64;
const EXACT_NODE_BUDGET: usize = 20_000_000;
const BIG: f64 = 1e9;
const IMPROVEMENT: f64 = 1e-9;

/// Multi-label Potts energy with per-label costs. Column `m − 1` is the
/// outlier label, which has no cost.
pub(crate) struct Discrete<'a> {
    pub unary: &'a [Vec<f64>],
    pub adjacency: Vec<&'a [usize]>,
    pub edges: Vec<(usize, usize)>,
    pub lambda: f64,
    pub label_cost: Vec<f64>,
}

impl Discrete<'_> {
    fn n(&self) -> usize {
        self.unary.len()
    }

    fn m(&self) -> usize {
        self.label_cost.len()
    }

    pub fn energy(&self, x: &[usize]) -> f64 {
        let mut e: f64 = x.iter().enumerate().map(|(i, &c)| self.unary[i][c]).sum();
        e += self.lambda * self.edges.iter().filter(|(a, b)| x[*a] != x[*b]).count() as f64;
        let mut used = vec![false; self.m()];
        for &c in x {
            used[c] = true;
        }
        e + used
            .iter()
            .zip(&self.label_cost)
            .filter(|(u, _)| **u)
            .map(|(_, c)| c)
            .sum::<f64>()
    }

    fn counts(&self, x: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.m()];
        for &c in x {
            counts[c] += 1;
        }
        counts
    }

    /// Greedy single-site moves until no move lowers the energy.
    pub fn icm(&self, x: &mut [usize]) {
        let mut counts = self.counts(x);
        for _sweep in 0..100 {
            let mut changed = false;
            for i in 0..self.n() {
                let a = x[i];
                let local = |c: usize, counts: &[usize]| -> f64 {
                    let cut = self.adjacency[i].iter().filter(|&&j| x[j] != c).count();
                    let label = if c == a {
                        if counts[a] == 1 { self.label_cost[a] } else { 0.0 }
                    } else if counts[c] == 0 {
                        self.label_cost[c]
                    } else {
                        0.0
                    };
                    self.unary[i][c] + self.lambda * cut as f64 + label
                };
                let current = local(a, &counts);
                let mut best = (current, a);
                for c in 0..self.m() {
                    if c != a {
                        let v = local(c, &counts);
                        if v < best.0 - IMPROVEMENT {
                            best = (v, c);
                        }
                    }
                }
                if best.1 != a {
                    counts[a] -= 1;
                    counts[best.1] += 1;
                    x[i] = best.1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Alpha-expansion with label costs; every accepted move strictly
    /// lowers the exact energy.
    pub fn expansion(&self, x: &mut Vec<usize>) {
        let mut current = self.energy(x);
        for _cycle in 0..20 {
            let mut improved = false;
            for alpha in 0..self.m() {
                if let Some(candidate) = self.expand(x, alpha) {
                    let e = self.energy(&candidate);
                    if e < current - IMPROVEMENT || (current.is_infinite() && e.is_finite()) {
                        *x = candidate;
                        current = e;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }

    fn expand(&self, x: &[usize], alpha: usize) -> Option<Vec<usize>> {
        let n = self.n();
        if (0..n).all(|i| self.unary[i][alpha] >= BIG) {
            return None;
        }
        let clamp = |v: f64| v.min(BIG);
        let counts = self.counts(x);
        // Aux node per other used label with a cost, plus one for alpha if
        // it is not yet used.
        let aux_labels: Vec<usize> = (0..self.m())
            .filter(|&c| c != alpha && counts[c] > 0 && self.label_cost[c] > 0.0)
            .collect();
        let alpha_aux = counts[alpha] == 0 && self.label_cost[alpha] > 0.0;
        let total = n + aux_labels.len() + usize::from(alpha_aux);
        let mut g = FlowGraph::new(total);
        for i in 0..n {
            if x[i] == alpha {
                g.add_unary(i, 0.0, 0.0);
            } else {
                g.add_unary(i, clamp(self.unary[i][x[i]]), clamp(self.unary[i][alpha]));
            }
        }
        let lab = |i: usize, b: bool| if b { alpha } else { x[i] };
        for &(a, b) in &self.edges {
            let e = |ba: bool, bb: bool| {
                if lab(a, ba) != lab(b, bb) {
                    self.lambda
                } else {
                    0.0
                }
            };
            g.add_pairwise(a, b, e(false, false), e(false, true), e(true, false), e(true, true));
        }
        for (k, &c) in aux_labels.iter().enumerate() {
            let y = n + k;
            // Cost paid unless every member of c switches to alpha.
            g.add_unary(y, self.label_cost[c], 0.0);
            for i in (0..n).filter(|&i| x[i] == c) {
                g.add_directed(i, y, BIG);
            }
        }
        if alpha_aux {
            let z = n + aux_labels.len();
            g.add_unary(z, 0.0, self.label_cost[alpha]);
            for i in 0..n {
                g.add_directed(z, i, BIG);
            }
        }
        let (_, sides) = g.solve();
        let candidate: Vec<usize> = (0..n).map(|i| lab(i, sides[i])).collect();
        (candidate != x).then_some(candidate)
    }

    /// Depth-first branch and bound over all labelings, seeded with `x` as
    /// the incumbent. Stops early (keeping the incumbent) if the node budget
    /// runs out.
    pub fn exact(&self, x: &mut Vec<usize>) {
        let n = self.n();
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            let best = self.unary[i].iter().copied().fold(f64::INFINITY, f64::min);
            suffix[i] = suffix[i + 1] + best;
        }
        let mut order: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut cs: Vec<usize> = (0..self.m()).filter(|&c| self.unary[i][c].is_finite()).collect();
                cs.sort_by(|&a, &b| self.unary[i][a].total_cmp(&self.unary[i][b]).then(a.cmp(&b)));
                cs
            })
            .collect();
        // A variable with no finite option keeps every option.
        for cs in order.iter_mut().filter(|cs| cs.is_empty()) {
            *cs = (0..self.m()).collect();
        }
        let mut search = Search {
            problem: self,
            order: &order,
            suffix: &suffix,
            best: self.energy(x),
            best_x: x.clone(),
            cur: vec![usize::MAX; n],
            counts: vec![0; self.m()],
            nodes: 0,
        };
        search.descend(0, 0.0);
        *x = search.best_x;
    }
}

struct Search<'a, 'b> {
    problem: &'a Discrete<'b>,
    order: &'a [Vec<usize>],
    suffix: &'a [f64],
    best: f64,
    best_x: Vec<usize>,
    cur: Vec<usize>,
    counts: Vec<usize>,
    nodes: usize,
}

impl Search<'_, '_> {
    fn descend(&mut self, i: usize, partial: f64) {
        self.nodes += 1;
        if self.nodes > EXACT_NODE_BUDGET {
            return;
        }
        let p = self.problem;
        if i == p.n() {
            if partial < self.best - IMPROVEMENT {
                self.best = partial;
                self.best_x = self.cur.clone();
            }
            return;
        }
        for &c in &self.order[i] {
            let cut = p.adjacency[i]
                .iter()
                .filter(|&&j| j < i && self.cur[j] != c)
                .count();
            let label = if self.counts[c] == 0 { p.label_cost[c] } else { 0.0 };
            let cost = partial + p.unary[i][c] + p.lambda * cut as f64 + label;
            if cost + self.suffix[i + 1] >= self.best - IMPROVEMENT {
                continue;
            }
            self.cur[i] = c;
            self.counts[c] += 1;
            self.descend(i + 1, cost);
            self.counts[c] -= 1;
            self.cur[i] = usize::MAX;
        }
    }
}

/// Adds the proposals to the label set and reassigns every tracklet to
/// minimize the energy. The result never has higher energy than the
/// incoming assignment over the enlarged label set. Labels left without
/// support are kept; callers prune them.
pub fn assign_labels(
    labeling: &Labeling,
    proposals: Vec<Label>,
    problem: &Problem,
    cache: &mut ResidualCache,
) -> Labeling {
    let mut candidate = labeling.clone();
    for p in proposals {
        candidate.insert_label(p);
    }
    let rows = cache.rows(&candidate, problem);
    let unary = unary_table(&candidate, problem, &rows);
    let m = candidate.labels().len() + 1;
    let params = &problem.params;
    let mut label_cost = vec![params.label_cost; m];
    label_cost[m - 1] = 0.0;
    let discrete = Discrete {
        unary: &unary,
        adjacency: (0..problem.graph.len()).map(|v| problem.graph.neighbors(v)).collect(),
        edges: problem.graph.edges().iter().map(|e| (e.a, e.b)).collect(),
        lambda: params.lambda,
        label_cost,
    };
    let ids: Vec<Slot> = candidate
        .labels()
        .iter()
        .map(|l| Slot::Label(l.id))
        .chain(std::iter::once(Slot::Outlier))
        .collect();
    let column = |s: Slot| ids.iter().position(|t| *t == s).unwrap_or(m - 1);
    let start: Vec<usize> = candidate.assignment.iter().map(|s| column(*s)).collect();
    let mut x = start.clone();

    let n = x.len();
    let small = (m as f64).powi(n.min(64) as i32) <= EXACT_LIMIT;
    match params.assign_strategy {
        AssignStrategy::Icm => discrete.icm(&mut x),
        AssignStrategy::Expansion => {
            discrete.expansion(&mut x);
            discrete.icm(&mut x);
        }
        AssignStrategy::Exact => {
            discrete.expansion(&mut x);
            discrete.exact(&mut x);
        }
        AssignStrategy::Auto => {
            discrete.expansion(&mut x);
            discrete.icm(&mut x);
            if small {
                discrete.exact(&mut x);
            }
        }
    }
    if !(discrete.energy(&x) <= discrete.energy(&start)) {
        x = start;
    }
    candidate.assignment = x.into_iter().map(|c| ids[c]).collect();
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enumerate_min(d: &Discrete) -> f64 {
        let n = d.n();
        let m = d.m();
        let mut x = vec![0; n];
        let mut best = f64::INFINITY;
        loop {
            best = best.min(d.energy(&x));
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                x[i] += 1;
                if x[i] < m {
                    break;
                }
                x[i] = 0;
                i += 1;
            }
        }
    }

    fn chain(n: usize) -> (Vec<Vec<usize>>, Vec<(usize, usize)>) {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        (adj, edges)
    }

    fn pseudo_unary(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = super::super::keyed_rng(seed, &[]);
        (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect()
    }

    #[test]
    fn exact_matches_enumeration() {
        for seed in 0..20 {
            let (n, m) = (7, 3);
            let unary = pseudo_unary(n, m, seed);
            let (adj, edges) = chain(n);
            let d = Discrete {
                unary: &unary,
                adjacency: adj.iter().map(|a| a.as_slice()).collect(),
                edges,
                lambda: 2.0,
                label_cost: vec![5.0, 5.0, 0.0],
            };
            let mut x = vec![m - 1; n];
            d.exact(&mut x);
            let best = enumerate_min(&d);
            assert!((d.energy(&x) - best).abs() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn moves_never_increase_energy() {
        for seed in 0..20 {
            let (n, m) = (9, 4);
            let unary = pseudo_unary(n, m, 100 + seed);
            let (adj, edges) = chain(n);
            let d = Discrete {
                unary: &unary,
                adjacency: adj.iter().map(|a| a.as_slice()).collect(),
                edges,
                lambda: 3.0,
                label_cost: vec![4.0, 4.0, 4.0, 0.0],
            };
            let start = vec![m - 1; n];
            let e0 = d.energy(&start);
            let mut x = start.clone();
            d.expansion(&mut x);
            let e1 = d.energy(&x);
            assert!(e1 <= e0 + 1e-12);
            d.icm(&mut x);
            assert!(d.energy(&x) <= e1 + 1e-12);
        }
    }

    #[test]
    fn expansion_move_is_optimal_for_two_labels() {
        // With two labels an expansion from all-0 to label 1 is a global
        // binary optimum; check against enumeration.
        for seed in 0..10 {
            let n = 8;
            let unary = pseudo_unary(n, 2, 200 + seed);
            let (adj, edges) = chain(n);
            let d = Discrete {
                unary: &unary,
                adjacency: adj.iter().map(|a| a.as_slice()).collect(),
                edges,
                lambda: 2.5,
                label_cost: vec![6.0, 0.0],
            };
            let mut x = vec![1; n];
            d.expansion(&mut x);
            let best = enumerate_min(&d);
            assert!((d.energy(&x) - best).abs() < 1e-9, "seed {seed}");
        }
    }
}
