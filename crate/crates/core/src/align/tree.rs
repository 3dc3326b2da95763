//! Maximum-weight spanning tree over the pair graph.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("edge ({i}, {j}) references a node outside 0..{nodes}")]
    NodeRange { i: usize, j: usize, nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Edge indices in descending weight, ties broken by `(min, max)` node id.
pub fn edge_order(edges: &[WeightedEdge]) -> Vec<usize> {
    let key = |e: &WeightedEdge| (e.i.min(e.j), e.i.max(e.j));
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| {
        edges[b].weight.total_cmp(&edges[a].weight).then_with(|| key(&edges[a]).cmp(&key(&edges[b])))
    });
    order
}

/// Kruskal on descending weights. Returns indices into `edges`, in the
/// order they were accepted.
pub fn max_spanning_tree(nodes: usize, edges: &[WeightedEdge]) -> Result<Vec<usize>, TreeError> {
    if let Some(e) = edges.iter().find(|e| e.i >= nodes || e.j >= nodes) {
        return Err(TreeError::NodeRange { i: e.i, j: e.j, nodes });
    }
    let mut sets = DisjointSet::new(nodes);
    let mut chosen = Vec::with_capacity(nodes.saturating_sub(1));
    for idx in edge_order(edges) {
        if sets.union(edges[idx].i, edges[idx].j) {
            chosen.push(idx);
        }
    }
    if chosen.len() + 1 < nodes {
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for v in 0..nodes {
            groups.entry(sets.find(v)).or_default().push(v);
        }
        let mut components: Vec<Vec<usize>> = groups.into_values().collect();
        components.sort();
        return Err(TreeError::Disconnected { components });
    }
    Ok(chosen)
}
