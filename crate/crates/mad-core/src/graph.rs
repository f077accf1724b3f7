//! Graphs and the memorized adjacency they induce.
//!
//! The model's "memory" is nothing more than the training adjacency matrix:
//! a dense byte per ordered pair, symmetric for undirected graphs. Scoring
//! reads memorized relations through a single learnable scalar (the
//! [`MemoryAdaptor`]), which lets training discover how much weight raw
//! memorization deserves.

use std::collections::HashMap;

use crate::error::{MadError, Result};

/// An edge list with a fixed node count.
///
/// Node ids are dense `0..n_nodes`. For undirected graphs each edge is
/// stored once with `u < v`; lookups are symmetric downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(u32, u32)>,
    directed: bool,
}

impl Graph {
    /// Build a graph, canonicalizing undirected edges to `u <= v` order.
    ///
    /// Rejects out-of-range ids and duplicate edges; callers that tolerate
    /// duplicates (file loaders) dedupe first and report the count.
    pub fn new(n_nodes: usize, edges: Vec<(u32, u32)>, directed: bool) -> Result<Self> {
        let mut canonical = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            for node in [u, v] {
                if node as usize >= n_nodes {
                    return Err(MadError::NodeOutOfRange { node, n_nodes });
                }
            }
            let pair = if directed || u <= v { (u, v) } else { (v, u) };
            canonical.push(pair);
        }
        let mut seen = std::collections::HashSet::with_capacity(canonical.len());
        for &pair in &canonical {
            if !seen.insert(pair) {
                return Err(MadError::Config(format!(
                    "duplicate edge ({}, {})",
                    pair.0, pair.1
                )));
            }
        }
        Ok(Graph {
            n_nodes,
            edges: canonical,
            directed,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        let pair = if self.directed || u <= v { (u, v) } else { (v, u) };
        self.edges.contains(&pair)
    }

    /// A graph with the same node count and direction but different edges;
    /// used to carve splits out of a loaded graph.
    pub fn with_edges(&self, edges: Vec<(u32, u32)>) -> Result<Graph> {
        Graph::new(self.n_nodes, edges, self.directed)
    }
}

/// Dense boolean relation matrix built from training edges.
///
/// `lookup(u, v)` answers "did training see this relation?" as 0.0 or 1.0.
/// Pairs can be temporarily masked (forced to 0) and restored, which strict
/// evaluation harnesses use to prove a score never read its own label.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMemory {
    n_nodes: usize,
    directed: bool,
    cells: Vec<u8>,
    masked: HashMap<(u32, u32), u8>,
}

impl AdjacencyMemory {
    pub fn from_graph(graph: &Graph) -> Self {
        let n = graph.n_nodes();
        let mut cells = vec![0u8; n * n];
        for &(u, v) in graph.edges() {
            cells[u as usize * n + v as usize] = 1;
            if !graph.directed() {
                cells[v as usize * n + u as usize] = 1;
            }
        }
        AdjacencyMemory {
            n_nodes: n,
            directed: graph.directed(),
            cells,
            masked: HashMap::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    fn check_node(&self, node: u32) -> Result<()> {
        if node as usize >= self.n_nodes {
            return Err(MadError::NodeOutOfRange {
                node,
                n_nodes: self.n_nodes,
            });
        }
        Ok(())
    }

    /// Memorized relation for `(u, v)`: 1.0 if the training graph had the
    /// edge, else 0.0. Symmetric when undirected.
    pub fn lookup(&self, u: u32, v: u32) -> Result<f64> {
        self.check_node(u)?;
        self.check_node(v)?;
        Ok(self.at(u, v))
    }

    /// Unchecked fast path for ids already validated by the caller.
    pub(crate) fn at(&self, u: u32, v: u32) -> f64 {
        self.cells[u as usize * self.n_nodes + v as usize] as f64
    }

    fn mask_key(&self, u: u32, v: u32) -> (u32, u32) {
        if self.directed || u <= v {
            (u, v)
        } else {
            (v, u)
        }
    }

    /// Temporarily zero the cell for `(u, v)` (and its mirror when
    /// undirected). Masking an already-masked pair is an error.
    pub fn mask_pair(&mut self, u: u32, v: u32) -> Result<()> {
        self.check_node(u)?;
        self.check_node(v)?;
        let key = self.mask_key(u, v);
        if self.masked.contains_key(&key) {
            return Err(MadError::MaskState {
                u,
                v,
                problem: "is already masked",
            });
        }
        let idx = u as usize * self.n_nodes + v as usize;
        self.masked.insert(key, self.cells[idx]);
        self.cells[idx] = 0;
        if !self.directed {
            self.cells[v as usize * self.n_nodes + u as usize] = 0;
        }
        Ok(())
    }

    /// Restore a previously masked pair. Unmasking a pair that is not
    /// masked is an error.
    pub fn unmask_pair(&mut self, u: u32, v: u32) -> Result<()> {
        self.check_node(u)?;
        self.check_node(v)?;
        let key = self.mask_key(u, v);
        let original = self
            .masked
            .remove(&key)
            .ok_or(MadError::MaskState {
                u,
                v,
                problem: "was never masked",
            })?;
        self.cells[u as usize * self.n_nodes + v as usize] = original;
        if !self.directed {
            self.cells[v as usize * self.n_nodes + u as usize] = original;
        }
        Ok(())
    }

    /// Sum of all cells; `2 * n_edges` for an undirected loop-free graph.
    pub fn total(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }
}

/// The single learnable scalar between memory and prediction.
///
/// A memorized relation `r0` enters an estimate as `w * r0`; `w` starts at
/// 1.0 (trust memory fully) and training adjusts it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryAdaptor {
    pub w: f64,
}

impl MemoryAdaptor {
    /// Name under which the scalar is registered in a parameter store.
    pub const PARAM: &'static str = "adaptor.w";

    pub const INIT: f64 = 1.0;

    pub fn adapt(&self, r0: f64) -> f64 {
        self.w * r0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_graph() -> Graph {
        // Path 0-1-2 plus the edge (0, 3).
        Graph::new(4, vec![(0, 1), (1, 2), (0, 3)], false).unwrap()
    }

    #[test]
    fn undirected_edges_are_canonicalized() {
        let g = Graph::new(3, vec![(2, 0), (1, 2)], false).unwrap();
        assert_eq!(g.edges(), &[(0, 2), (1, 2)]);
        assert!(g.has_edge(2, 0) && g.has_edge(0, 2));
        assert!(!g.has_edge(0, 1));
    }

    #[test]
    fn out_of_range_and_duplicate_edges_are_rejected() {
        assert!(matches!(
            Graph::new(2, vec![(0, 5)], false),
            Err(MadError::NodeOutOfRange { node: 5, .. })
        ));
        // (1, 0) collapses onto (0, 1) when undirected.
        assert!(Graph::new(2, vec![(0, 1), (1, 0)], false).is_err());
        // ...but is a distinct edge when directed.
        assert!(Graph::new(2, vec![(0, 1), (1, 0)], true).is_ok());
    }

    #[test]
    fn lookup_is_symmetric_for_undirected() {
        let mem = AdjacencyMemory::from_graph(&small_graph());
        assert_eq!(mem.lookup(0, 1).unwrap(), 1.0);
        assert_eq!(mem.lookup(1, 0).unwrap(), 1.0);
        assert_eq!(mem.lookup(0, 2).unwrap(), 0.0);
        assert_eq!(mem.lookup(2, 2).unwrap(), 0.0);
    }

    #[test]
    fn directed_lookup_is_one_way() {
        let g = Graph::new(3, vec![(0, 1)], true).unwrap();
        let mem = AdjacencyMemory::from_graph(&g);
        assert_eq!(mem.lookup(0, 1).unwrap(), 1.0);
        assert_eq!(mem.lookup(1, 0).unwrap(), 0.0);
    }

    #[test]
    fn lookup_checks_range() {
        let mem = AdjacencyMemory::from_graph(&small_graph());
        assert!(matches!(
            mem.lookup(0, 9),
            Err(MadError::NodeOutOfRange { node: 9, .. })
        ));
    }

    #[test]
    fn total_counts_both_directions() {
        let mem = AdjacencyMemory::from_graph(&small_graph());
        assert_eq!(mem.total(), 6);
    }

    #[test]
    fn mask_then_unmask_restores_original() {
        let mut mem = AdjacencyMemory::from_graph(&small_graph());
        mem.mask_pair(0, 1).unwrap();
        assert_eq!(mem.lookup(0, 1).unwrap(), 0.0);
        assert_eq!(mem.lookup(1, 0).unwrap(), 0.0);
        // Other pairs are untouched.
        assert_eq!(mem.lookup(1, 2).unwrap(), 1.0);
        mem.unmask_pair(1, 0).unwrap(); // mirror order also works
        assert_eq!(mem.lookup(0, 1).unwrap(), 1.0);
    }

    #[test]
    fn mask_state_errors() {
        let mut mem = AdjacencyMemory::from_graph(&small_graph());
        assert!(mem.unmask_pair(0, 1).is_err());
        mem.mask_pair(0, 1).unwrap();
        assert!(mem.mask_pair(0, 1).is_err());
        mem.unmask_pair(0, 1).unwrap();
        assert!(mem.unmask_pair(0, 1).is_err());
    }

    #[test]
    fn masking_a_non_edge_roundtrips_too() {
        let mut mem = AdjacencyMemory::from_graph(&small_graph());
        mem.mask_pair(0, 2).unwrap();
        assert_eq!(mem.lookup(0, 2).unwrap(), 0.0);
        mem.unmask_pair(0, 2).unwrap();
        assert_eq!(mem.lookup(0, 2).unwrap(), 0.0);
    }

    #[test]
    fn adaptor_starts_trusting_memory() {
        let a = MemoryAdaptor {
            w: MemoryAdaptor::INIT,
        };
        assert_eq!(a.adapt(1.0), 1.0);
        assert_eq!(a.adapt(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn adapt_is_linear(w in -10.0f64..10.0, r0 in -2.0f64..2.0, a in -5.0f64..5.0) {
            let adaptor = MemoryAdaptor { w };
            let lhs = adaptor.adapt(a * r0);
            let rhs = a * adaptor.adapt(r0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
        }
    }
}
