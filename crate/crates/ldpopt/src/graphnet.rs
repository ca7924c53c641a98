//! Communication graphs and the synchronous exchange simulator.
//!
//! Nodes are 0-based in memory and 1-based in every emitted file.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::rng::{self, domain};

/// Connected undirected simple graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    node_count: usize,
    /// Sorted pairs `(i, j)` with `i < j`.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return invalid("graph needs at least one node");
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return invalid(format!("edge ({a}, {b}) out of range for {node_count} nodes"));
            }
            if a == b {
                return invalid(format!("self-loop at node {a}"));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return invalid(format!("duplicate edge ({a}, {b})"));
            }
        }
        if set.len() + 1 < node_count {
            return invalid("fewer than N-1 edges cannot connect the graph");
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|v| v.sort_unstable());
        let topo = Self { node_count, edges, adjacency };
        if !topo.is_connected() {
            return invalid("graph is not connected");
        }
        Ok(topo)
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::from_edges(n, &edges).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.node_count * (self.node_count - 1) / 2
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Metropolis–Hastings mixing weights: symmetric and doubly stochastic.
    pub fn metropolis_weights(&self) -> Vec<Vec<f64>> {
        let n = self.node_count;
        let mut w = vec![vec![0.0; n]; n];
        for &(a, b) in &self.edges {
            let v = 1.0 / (1 + self.degree(a).max(self.degree(b))) as f64;
            w[a][b] = v;
            w[b][a] = v;
        }
        for (i, row) in w.iter_mut().enumerate() {
            let off: f64 = row.iter().sum();
            row[i] = 1.0 - off;
        }
        w
    }

    /// "N M" header then one 1-based "i j" line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{} {}\n", self.node_count, self.edges.len());
        for &(a, b) in &self.edges {
            s.push_str(&format!("{} {}\n", a + 1, b + 1));
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Ingestion("empty edge list".into()))?;
        let (n, m) = parse_pair(header)?;
        let mut edges = Vec::with_capacity(m);
        for line in lines {
            let (a, b) = parse_pair(line)?;
            if a == 0 || b == 0 {
                return Err(Error::Ingestion(format!("edge list is 1-based, got '{line}'")));
            }
            edges.push((a - 1, b - 1));
        }
        if edges.len() != m {
            return Err(Error::Ingestion(format!("header promises {m} edges, found {}", edges.len())));
        }
        Self::from_edges(n, &edges).map_err(|e| Error::Ingestion(e.to_string()))
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::Ingestion(format!("expected two integers, got '{line}'"))),
    }
}

/// Uniform random spanning tree (Prüfer decoding) plus uniformly chosen
/// extra edges.
pub fn generate_random_graph(n: usize, m: usize, seed: u64) -> Result<Topology> {
    if n < 2 {
        return invalid("need at least two nodes");
    }
    let max_edges = n * (n - 1) / 2;
    if m < n - 1 || m > max_edges {
        return invalid(format!("edge count {m} outside [{}, {max_edges}]", n - 1));
    }
    let mut rng = rng::stream(seed, domain::GRAPH, n as u64, m as u64);
    let mut edges = BTreeSet::new();
    if n == 2 {
        edges.insert((0, 1));
    } else {
        let prufer: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
        let mut degree = vec![1usize; n];
        prufer.iter().for_each(|&v| degree[v] += 1);
        let mut leaves: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&v| degree[v] == 1).map(Reverse).collect();
        for &v in &prufer {
            let Reverse(leaf) = leaves.pop().expect("Prüfer decoding always has a leaf");
            edges.insert((leaf.min(v), leaf.max(v)));
            degree[v] -= 1;
            if degree[v] == 1 {
                leaves.push(Reverse(v));
            }
        }
        let Reverse(u) = leaves.pop().expect("two leaves remain");
        let Reverse(w) = leaves.pop().expect("two leaves remain");
        edges.insert((u.min(w), u.max(w)));
    }
    let extra = m - (n - 1);
    if extra > 0 {
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|e| !edges.contains(e))
            .collect();
        for idx in rand::seq::index::sample(&mut rng, candidates.len(), extra) {
            edges.insert(candidates[idx]);
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    Topology::from_edges(n, &edges)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeMode {
    Neighbors,
    Complete,
}

/// Messages delivered in one synchronous round, keyed by `(sender, receiver)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMailbox<T> {
    pub round_index: usize,
    pub messages: BTreeMap<(usize, usize), Vec<T>>,
}

impl<T> RoundMailbox<T> {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Payloads received by `receiver`, ordered by sender.
    pub fn inbox(&self, receiver: usize) -> Vec<(usize, &[T])> {
        self.messages
            .iter()
            .filter(|((_, r), _)| *r == receiver)
            .map(|((s, _), v)| (*s, v.as_slice()))
            .collect()
    }
}

pub fn exchange_round<T: Clone>(
    topology: &Topology,
    payload_of: &[Vec<T>],
    mode: ExchangeMode,
    round_index: usize,
) -> Result<RoundMailbox<T>> {
    check_dim(topology.node_count(), payload_of.len())?;
    let d = payload_of[0].len();
    for p in payload_of {
        check_dim(d, p.len())?;
    }
    let n = topology.node_count();
    let mut messages = BTreeMap::new();
    for (i, payload) in payload_of.iter().enumerate() {
        let receivers: Vec<usize> = match mode {
            ExchangeMode::Neighbors => topology.neighbors(i).to_vec(),
            ExchangeMode::Complete => (0..n).filter(|&j| j != i).collect(),
        };
        for j in receivers {
            messages.insert((i, j), payload.clone());
        }
    }
    Ok(RoundMailbox { round_index, messages })
}
