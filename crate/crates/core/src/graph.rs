//! The fixed sensor digraph.
//!
//! Vehicles are indexed from 0 inside the library. Scenario files and CLI
//! reports use 1-based labels.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Directed graph where an edge `i -> j` means vehicle `i` senses vehicle `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorDigraph {
    // Sorted, deduplicated out-neighbour lists.
    neighbors: Vec<Vec<usize>>,
}

impl SensorDigraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("sensor digraph needs at least one vehicle".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (from, to) in edges {
            for index in [from, to] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if from == to {
                return Err(Error::SelfLoop { from, to });
            }
            neighbors[from].push(to);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    /// The five-vehicle digraph used for the reference rendezvous experiment:
    /// 1→3, 2→3, 3→4, 3→5, 4→1, 5→2 (1-based labels).
    pub fn reference_five() -> Self {
        Self::new(5, [(0, 2), (1, 2), (2, 3), (2, 4), (3, 0), (4, 1)]).expect("reference digraph is valid")
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.neighbors.get(i).map(Vec::as_slice).ok_or(Error::IndexOutOfRange { index: i, n: self.len() })
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, list)| list.iter().map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Lowest-index node reachable from every other node, if any.
    pub fn globally_reachable_node(&self) -> Option<usize> {
        let n = self.len();
        let mut reverse = vec![Vec::new(); n];
        for (i, j) in self.edges() {
            reverse[j].push(i);
        }
        (0..n).find(|&candidate| {
            // Every node reaches `candidate` iff BFS on the reverse graph from it visits all.
            let mut seen = vec![false; n];
            seen[candidate] = true;
            let mut visited = 1;
            let mut queue = VecDeque::from([candidate]);
            while let Some(u) = queue.pop_front() {
                for &w in &reverse[u] {
                    if !seen[w] {
                        seen[w] = true;
                        visited += 1;
                        queue.push_back(w);
                    }
                }
            }
            visited == n
        })
    }

    pub fn has_globally_reachable_node(&self) -> bool {
        self.globally_reachable_node().is_some()
    }

    /// The same graph with vehicle `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: perm.len() });
        }
        Self::new(self.len(), self.edges().map(|(i, j)| (perm[i], perm[j])))
    }
}
