//! Per-node encoding tables and nearest-neighbour queries over them.
//!
//! Each head owns a position table `pos` (the learned embedding of every
//! node) and one or two differential tables: `g_dst`, read at the
//! destination to weigh differences between source candidates, and `g_src`,
//! read at the source for the mirrored role. Undirected graphs share a
//! single differential table for both roles.
//!
//! Tables are registered in a [`ParamStore`] under `head{h}.pos`,
//! `head{h}.g_dst` and `head{h}.g_src`; the structs here only carry names
//! and dimensions.

use crate::error::{MadError, Result};
use crate::rng::Rng;
use crate::tensor::{l2_distance_slices, ParamStore, Tensor};

/// Name/dimension metadata for one head's tables.
#[derive(Debug, Clone)]
pub struct EncodingTable {
    head: usize,
    n_nodes: usize,
    dim: usize,
    shared: bool,
    pos_name: String,
    g_dst_name: String,
    g_src_name: String,
}

impl EncodingTable {
    pub fn head(&self) -> usize {
        self.head
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether both differential roles read the same table.
    pub fn shared(&self) -> bool {
        self.shared
    }

    pub fn pos_name(&self) -> &str {
        &self.pos_name
    }

    pub fn g_dst_name(&self) -> &str {
        &self.g_dst_name
    }

    pub fn g_src_name(&self) -> &str {
        &self.g_src_name
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

    /// Position row of `node`.
    pub fn position<'a>(&self, params: &'a ParamStore, node: u32) -> Result<&'a [f64]> {
        self.check_node(node)?;
        Ok(params.value(&self.pos_name)?.row(node as usize))
    }

    /// Destination-side differential row of `node`.
    pub fn g_dst<'a>(&self, params: &'a ParamStore, node: u32) -> Result<&'a [f64]> {
        self.check_node(node)?;
        Ok(params.value(&self.g_dst_name)?.row(node as usize))
    }

    /// Source-side differential row of `node` (same storage as `g_dst`
    /// when shared).
    pub fn g_src<'a>(&self, params: &'a ParamStore, node: u32) -> Result<&'a [f64]> {
        self.check_node(node)?;
        Ok(params.value(&self.g_src_name)?.row(node as usize))
    }
}

/// All heads of a model.
#[derive(Debug, Clone)]
pub struct HeadSet {
    heads: Vec<EncodingTable>,
}

impl HeadSet {
    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head(&self, h: usize) -> &EncodingTable {
        &self.heads[h]
    }

    pub fn iter(&self) -> impl Iterator<Item = &EncodingTable> {
        self.heads.iter()
    }
}

/// Total learnable scalars for a model of this shape, including the single
/// memory-adaptor scalar shared across heads.
pub fn param_count(n_nodes: usize, dim: usize, heads: usize, shared: bool) -> usize {
    let tables_per_head = if shared { 2 } else { 3 };
    heads * n_nodes * dim * tables_per_head + 1
}

/// Create and register all head tables.
///
/// Entries are i.i.d. uniform in `[-0.5/sqrt(d), 0.5/sqrt(d)]`, which keeps
/// initial pairwise distances of order one regardless of dimension. Tables
/// are filled in a fixed order (per head: positions, then differentials) so
/// a given seed always produces the same initialization.
pub fn init_tables(
    params: &mut ParamStore,
    n_nodes: usize,
    dim: usize,
    heads: usize,
    shared: bool,
    rng: &mut Rng,
) -> Result<HeadSet> {
    if n_nodes == 0 || dim == 0 || heads == 0 {
        return Err(MadError::Config(format!(
            "init_tables needs positive sizes, got n_nodes={n_nodes} dim={dim} heads={heads}"
        )));
    }
    let bound = 0.5 / (dim as f64).sqrt();
    let filled = |rng: &mut Rng| -> Tensor {
        let mut t = Tensor::zeros(&[n_nodes, dim]);
        for x in t.data_mut() {
            *x = rng.uniform(-bound, bound);
        }
        t
    };

    let mut list = Vec::with_capacity(heads);
    for h in 0..heads {
        let pos_name = format!("head{h}.pos");
        let g_dst_name = format!("head{h}.g_dst");
        let g_src_name = if shared {
            g_dst_name.clone()
        } else {
            format!("head{h}.g_src")
        };
        params.register(&pos_name, filled(rng))?;
        params.register(&g_dst_name, filled(rng))?;
        if !shared {
            params.register(&g_src_name, filled(rng))?;
        }
        list.push(EncodingTable {
            head: h,
            n_nodes,
            dim,
            shared,
            pos_name,
            g_dst_name,
            g_src_name,
        });
    }
    Ok(HeadSet { heads: list })
}

/// The `k` nodes whose positions lie nearest to `query`'s position,
/// excluding `exclude`, ties broken toward the smaller id.
///
/// Brute force over all rows: at the node counts this crate targets a scan
/// beats any index structure.
pub fn knn_positions(
    table: &EncodingTable,
    params: &ParamStore,
    query: u32,
    k: usize,
    exclude: &[u32],
) -> Result<Vec<u32>> {
    let n = table.n_nodes();
    let available = (0..n as u32).filter(|i| !exclude.contains(i)).count();
    if available < k {
        return Err(MadError::Infeasible {
            requested: k,
            available,
        });
    }
    let q = table.position(params, query)?;
    let pos = params.value(table.pos_name())?;
    let mut ranked: Vec<(f64, u32)> = (0..n as u32)
        .filter(|i| !exclude.contains(i))
        .map(|i| (l2_distance_slices(pos.row(i as usize), q), i))
        .collect();
    // Finite distances always compare; id ascending settles exact ties.
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, i)| i).collect())
}
