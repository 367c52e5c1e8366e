//! Immutable oriented edge lists.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({tail}, {head}) references a node outside 0..{n}")]
    NodeOutOfRange { tail: usize, head: usize, n: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate undirected edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("permutation of length {got} does not match node count {n}")]
    BadPermutation { n: usize, got: usize },
}

/// An undirected graph stored once per edge with a fixed orientation
/// `tail -> head`.
///
/// Self-loops and duplicate undirected edges are never stored. The
/// orientation is part of the graph: the incidence operator and every
/// first-order block depend on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph keeping the given orientation and edge order.
    pub fn from_oriented(n: usize, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        let mut seen = HashSet::with_capacity(edges.len());
        for &(tail, head) in &edges {
            if tail >= n || head >= n {
                return Err(GraphError::NodeOutOfRange { tail, head, n });
            }
            if tail == head {
                return Err(GraphError::SelfLoop(tail));
            }
            let key = (tail.min(head), tail.max(head));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge(key.0, key.1));
            }
        }
        Ok(Self { n, edges })
    }

    /// Builds a graph from raw undirected pairs in canonical form: every
    /// edge oriented `min -> max`, sorted, self-loops and duplicates
    /// dropped with a warning.
    pub fn from_undirected<I>(n: usize, pairs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut edges = Vec::new();
        let mut self_loops = 0usize;
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(GraphError::NodeOutOfRange { tail: a, head: b, n });
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        let duplicates = before - edges.len();
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop(s) from edge list");
        }
        if duplicates > 0 {
            log::warn!("dropped {duplicates} duplicate undirected edge(s)");
        }
        Ok(Self { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Undirected degree of every node (self-loops excluded).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(t, h) in &self.edges {
            deg[t] += 1;
            deg[h] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(t, h) in &self.edges {
            adj[t].push(h);
            adj[h].push(t);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n
    }

    /// Relabels node `i` as `perm[i]`. Orientation and edge order are
    /// carried over unchanged, so edge-indexed quantities stay aligned.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::BadPermutation {
                n: self.n,
                got: perm.len(),
            });
        }
        let edges = self.edges.iter().map(|&(t, h)| (perm[t], perm[h])).collect();
        Self::from_oriented(self.n, edges)
    }
}
