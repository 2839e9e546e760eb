//! k-nearest-neighbour graph over tracklets.
//!
//! The distance between two tracklets is the largest image-plane distance
//! between their observations over the frames where both are observed, so
//! two features are neighbours only if they stay close for their whole
//! common lifetime. Tracklets that never share a frame are infinitely far
//! apart and never connected.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;

use crate::tracklet::{Tracklet, TrackletId};

/// Max-over-common-frames image distance; `None` when the tracklets never
/// coexist.
pub fn tracklet_distance(p: &Tracklet, q: &Tracklet) -> Option<f64> {
    let start = p.first_frame().max(q.first_frame());
    let end = p.last_frame().min(q.last_frame());
    let mut best: Option<f64> = None;
    for k in start..=end.max(start) {
        if k > end {
            break;
        }
        if let (Some(a), Some(b)) = (p.at(k), q.at(k)) {
            let d = a.stereo.image_distance(&b.stereo);
            best = Some(best.map_or(d, |m: f64| m.max(d)));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// Undirected neighbourhood graph. Vertices are numbered by ascending
/// tracklet id; all edges have unit weight.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodGraph {
    ids: Vec<TrackletId>,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<Edge>,
}

impl NeighborhoodGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, vertex: usize) -> TrackletId {
        self.ids[vertex]
    }

    pub fn vertex(&self, id: TrackletId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn neighbors(&self, vertex: usize) -> &[usize] {
        &self.adjacency[vertex]
    }

    pub fn degree(&self, vertex: usize) -> usize {
        self.adjacency[vertex].len()
    }

    /// Edges with `a < b`, sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_weight(&self, _a: usize, _b: usize) -> f64 {
        1.0
    }

    /// Writes `p_id,q_id,distance` rows.
    pub fn write_edge_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "p_id,q_id,distance")?;
        for e in &self.edges {
            writeln!(w, "{},{},{}", self.ids[e.a], self.ids[e.b], e.distance)?;
        }
        Ok(())
    }

    /// Builds an explicit graph; used by tests and tools.
    pub fn from_edges(ids: Vec<TrackletId>, pairs: &[(usize, usize)]) -> Self {
        let mut set = BTreeSet::new();
        for &(a, b) in pairs {
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Self::from_edge_set(ids, set.into_iter().map(|(a, b)| Edge { a, b, distance: 0.0 }).collect())
    }

    fn from_edge_set(ids: Vec<TrackletId>, edges: Vec<Edge>) -> Self {
        let mut adjacency = vec![Vec::new(); ids.len()];
        for e in &edges {
            adjacency[e.a].push(e.b);
            adjacency[e.b].push(e.a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Self {
            ids,
            adjacency,
            edges,
        }
    }

    /// Partition of `subset` into connected components of the induced
    /// subgraph. Components are sorted internally and ordered by their
    /// smallest vertex.
    pub fn connected_components(&self, subset: &[usize]) -> Vec<Vec<usize>> {
        let mut member = vec![false; self.len()];
        for &v in subset {
            member[v] = true;
        }
        let mut seen = vec![false; self.len()];
        let mut sorted: Vec<usize> = subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut components = Vec::new();
        for &start in &sorted {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &u in &self.adjacency[v] {
                    if member[u] && !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }
}

/// Connects each tracklet to its `k_nn` nearest finite-distance neighbours
/// (ties by ascending id) and symmetrizes by union.
pub fn build_graph(tracklets: &[Tracklet], k_nn: usize) -> NeighborhoodGraph {
    assert!(k_nn >= 1, "k_nn must be at least 1");
    let mut order: Vec<&Tracklet> = tracklets.iter().collect();
    order.sort_by_key(|t| t.id);
    let ids: Vec<TrackletId> = order.iter().map(|t| t.id).collect();

    let nearest: Vec<Vec<(f64, usize)>> = (0..order.len())
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..order.len())
                .filter(|&j| j != i)
                .filter_map(|j| tracklet_distance(order[i], order[j]).map(|d| (d, j)))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k_nn);
            cand
        })
        .collect();

    let mut set = BTreeSet::new();
    let mut dist = std::collections::BTreeMap::new();
    for (i, list) in nearest.iter().enumerate() {
        for &(d, j) in list {
            let key = (i.min(j), i.max(j));
            set.insert(key);
            dist.insert(key, d);
        }
    }
    let edges = set
        .into_iter()
        .map(|(a, b)| Edge {
            a,
            b,
            distance: dist[&(a, b)],
        })
        .collect();
    NeighborhoodGraph::from_edge_set(ids, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::StereoObservation;
    use crate::se3::Vec3;
    use crate::tracklet::FrameObservation;

    fn track(id: TrackletId, first: usize, uv: &[Option<(f64, f64)>]) -> Tracklet {
        let obs = uv
            .iter()
            .map(|o| {
                o.map(|(u, v)| FrameObservation {
                    stereo: StereoObservation::new(u, v, 10.0),
                    point: Vec3::new(u, v, 1.0),
                })
            })
            .collect();
        Tracklet::new(id, first, obs).unwrap()
    }

    #[test]
    fn distance_examples() {
        let p = track(0, 0, &[Some((100.0, 100.0)), Some((100.0, 100.0))]);
        assert_eq!(tracklet_distance(&p, &p), Some(0.0));
        let q = track(1, 0, &[Some((103.0, 104.0)), Some((100.0, 100.0))]);
        assert_eq!(tracklet_distance(&p, &q), Some(5.0));
        assert_eq!(tracklet_distance(&q, &p), Some(5.0));
        let r = track(2, 2, &[Some((100.0, 100.0))]);
        assert_eq!(tracklet_distance(&p, &r), None);
        // Coexisting range but never both observed.
        let s = track(3, 0, &[None, Some((1.0, 1.0))]);
        let t = track(4, 0, &[Some((1.0, 1.0)), None, Some((1.0, 1.0))]);
        assert_eq!(tracklet_distance(&s, &t), None);
    }

    #[test]
    fn two_coexisting_tracklets_share_one_edge() {
        let ts = vec![
            track(5, 0, &[Some((0.0, 0.0)), Some((1.0, 0.0))]),
            track(2, 0, &[Some((3.0, 0.0)), Some((4.0, 0.0))]),
        ];
        let g = build_graph(&ts, 5);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.id(0), 2);
    }

    fn clusters() -> Vec<Tracklet> {
        let mut ts = Vec::new();
        for i in 0..6 {
            let x = i as f64;
            ts.push(track(i, 0, &[Some((x, 0.0)), Some((x, 1.0))]));
            ts.push(track(100 + i, 0, &[Some((500.0 + x, 0.0)), Some((500.0 + x, 1.0))]));
        }
        ts
    }

    #[test]
    fn separated_clusters_form_two_components() {
        let g = build_graph(&clusters(), 3);
        let all: Vec<usize> = (0..g.len()).collect();
        let comps = g.connected_components(&all);
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.len() == 6));
        for e in g.edges() {
            assert_eq!(g.id(e.a) >= 100, g.id(e.b) >= 100);
        }
    }

    #[test]
    fn components_of_subsets() {
        let g = build_graph(&clusters(), 3);
        let first: Vec<usize> = (0..6).collect();
        assert_eq!(g.connected_components(&first), vec![first.clone()]);
        let isolated = NeighborhoodGraph::from_edges(vec![0, 1, 2], &[]);
        assert_eq!(isolated.connected_components(&[0, 1, 2]).len(), 3);
    }

    #[test]
    fn graph_independent_of_input_order() {
        let mut ts = clusters();
        let a = build_graph(&ts, 2);
        ts.reverse();
        let b = build_graph(&ts, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn edge_csv() {
        let g = build_graph(&clusters()[..2], 1);
        let mut out = Vec::new();
        g.write_edge_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "p_id,q_id,distance\n0,100,500\n");
    }
}
