//! Threshold graph over videos; connected components are individuals.
//!
//! Accepted pairs are inserted one at a time, strongest first. A pair whose
//! endpoints are both free opens a new cluster, a pair with one free endpoint
//! attaches it, and a pair joining two different clusters either moves the
//! more weakly bound endpoint across (when the new score beats that
//! endpoint's binding score) or is recorded as a conflict.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::matching::SimilarityRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub score: f64,
}

impl Edge {
    /// Canonical edge with `a < b`.
    pub fn new(x: &str, y: &str, score: f64) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Edge {
            a: a.to_string(),
            b: b.to_string(),
            score,
        }
    }
}

impl From<&SimilarityRecord> for Edge {
    fn from(r: &SimilarityRecord) -> Self {
        Edge::new(&r.video_a, &r.video_b, r.score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Lowest member sequence id.
    pub cluster_id: String,
    /// Sorted.
    pub members: Vec<String>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    /// Case A.
    NewCluster,
    /// Case B.
    Attached,
    /// Both endpoints already share a cluster.
    Reinforced,
    /// Case C, rebind: the named endpoint left its cluster.
    Moved { moved_b: bool },
    /// Case C, no rebind.
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterGraph {
    pub threshold: f64,
    pub nodes: BTreeSet<String>,
    /// Keyed by canonical `(a, b)`.
    pub edges: BTreeMap<(String, String), f64>,
    pub conflicts: Vec<Edge>,
}

impl ClusterGraph {
    pub fn new(threshold: f64) -> Self {
        ClusterGraph {
            threshold,
            ..Default::default()
        }
    }

    pub fn add_node(&mut self, id: &str) {
        if !self.nodes.contains(id) {
            self.nodes.insert(id.to_string());
        }
    }

    fn incident(&self, v: &str) -> impl Iterator<Item = (&(String, String), &f64)> + '_ {
        let v = v.to_string();
        self.edges
            .iter()
            .filter(move |((a, b), _)| *a == v || *b == v)
    }

    pub fn degree(&self, v: &str) -> usize {
        self.incident(v).count()
    }

    /// Strongest incident edge score, the score that binds `v` into its
    /// cluster.
    pub fn binding_score(&self, v: &str) -> Option<f64> {
        self.incident(v).map(|(_, s)| *s).reduce(f64::max)
    }

    fn detach(&mut self, v: &str) {
        self.edges.retain(|(a, b), _| a != v && b != v);
    }

    fn component_of(&self, v: &str) -> BTreeSet<String> {
        let adj = self.adjacency();
        let mut seen = BTreeSet::new();
        let mut stack = vec![v.to_string()];
        while let Some(n) = stack.pop() {
            if !seen.insert(n.clone()) {
                continue;
            }
            if let Some(ns) = adj.get(n.as_str()) {
                stack.extend(ns.iter().map(|s| s.to_string()));
            }
        }
        seen
    }

    fn adjacency(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in self.edges.keys() {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        adj
    }

    /// Inserts one above-threshold pair.
    pub fn sequential_insert(&mut self, candidate: &Edge) -> InsertOutcome {
        debug_assert!(candidate.score >= self.threshold);
        let (a, b) = (candidate.a.as_str(), candidate.b.as_str());
        self.add_node(a);
        self.add_node(b);
        let key = (candidate.a.clone(), candidate.b.clone());
        let bind_a = self.binding_score(a);
        let bind_b = self.binding_score(b);
        match (bind_a, bind_b) {
            (None, None) => {
                self.edges.insert(key, candidate.score);
                InsertOutcome::NewCluster
            }
            (Some(_), None) | (None, Some(_)) => {
                self.edges.insert(key, candidate.score);
                InsertOutcome::Attached
            }
            (Some(ba), Some(bb)) => {
                if self.component_of(a).contains(b) {
                    let slot = self.edges.entry(key).or_insert(candidate.score);
                    *slot = slot.max(candidate.score);
                    return InsertOutcome::Reinforced;
                }
                if candidate.score > ba.min(bb) {
                    // the endpoint with the weaker binding moves; ties move b
                    let moved_b = bb <= ba;
                    self.detach(if moved_b { b } else { a });
                    self.edges.insert(key, candidate.score);
                    InsertOutcome::Moved { moved_b }
                } else {
                    self.conflicts.push(candidate.clone());
                    InsertOutcome::Conflict
                }
            }
        }
    }

    pub fn edge_list(&self) -> Vec<Edge> {
        self.edges
            .iter()
            .map(|((a, b), s)| Edge {
                a: a.clone(),
                b: b.clone(),
                score: *s,
            })
            .collect()
    }

    pub fn n_matches(&self) -> usize {
        self.edges.len()
    }

    /// Cluster id of every node.
    pub fn assignment(&self) -> BTreeMap<String, String> {
        components(self)
            .into_iter()
            .flat_map(|c| {
                let id = c.cluster_id.clone();
                c.members.into_iter().map(move |m| (m, id.clone()))
            })
            .collect()
    }

    /// The node partition as a set of sorted member lists.
    pub fn partition(&self) -> BTreeSet<Vec<String>> {
        components(self).into_iter().map(|c| c.members).collect()
    }
}

/// Canonical processing order: descending score, then `(a, b)`.
fn canonical_order(records: &[SimilarityRecord], threshold: f64) -> Vec<Edge> {
    let mut edges: Vec<Edge> = records
        .iter()
        .filter(|r| r.score >= threshold)
        .map(Edge::from)
        .collect();
    edges.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b)))
    });
    edges
}

fn graph_with_nodes(records: &[SimilarityRecord], threshold: f64) -> ClusterGraph {
    let mut g = ClusterGraph::new(threshold);
    for r in records {
        g.add_node(&r.video_a);
        g.add_node(&r.video_b);
    }
    g
}

/// Every video named in `records` becomes a node; above-threshold records
/// are inserted in canonical order.
pub fn build_clusters(records: &[SimilarityRecord], threshold: f64) -> ClusterGraph {
    let mut g = graph_with_nodes(records, threshold);
    for e in canonical_order(records, threshold) {
        g.sequential_insert(&e);
    }
    g
}

/// Each node keeps only its single strongest above-threshold pair (ties to
/// the lowest partner id).
pub fn best_edge_forest(records: &[SimilarityRecord], threshold: f64) -> ClusterGraph {
    let mut g = graph_with_nodes(records, threshold);
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.score >= threshold) {
        for (v, u) in [(&r.video_a, &r.video_b), (&r.video_b, &r.video_a)] {
            let entry = best.entry(v.as_str()).or_insert((r.score, u.as_str()));
            if r.score > entry.0 || (r.score == entry.0 && u.as_str() < entry.1) {
                *entry = (r.score, u.as_str());
            }
        }
    }
    for (v, (score, u)) in best {
        let e = Edge::new(v, u, score);
        g.edges.insert((e.a, e.b), e.score);
    }
    g
}

/// Connected components, members sorted, clusters ordered by lowest member.
pub fn components(graph: &ClusterGraph) -> Vec<Cluster> {
    let index: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..index.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (a, b) in graph.edges.keys() {
        let (ra, rb) = (find(&mut parent, index[a.as_str()]), find(&mut parent, index[b.as_str()]));
        if ra != rb {
            // union toward the smaller index keeps roots at the lowest id
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
    }
    let names: Vec<&String> = graph.nodes.iter().collect();
    let mut groups: BTreeMap<usize, Cluster> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let root = find(&mut parent, i);
        groups
            .entry(root)
            .or_insert_with(|| Cluster {
                cluster_id: names[root].clone(),
                members: Vec::new(),
                edges: Vec::new(),
            })
            .members
            .push((*name).clone());
    }
    for ((a, b), s) in &graph.edges {
        let root = find(&mut parent, index[a.as_str()]);
        groups.get_mut(&root).expect("root exists").edges.push(Edge {
            a: a.clone(),
            b: b.clone(),
            score: *s,
        });
    }
    groups.into_values().collect()
}
