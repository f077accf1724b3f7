//! Link prediction by memory plus first-order correction.
//!
//! To score a candidate edge `(u, v)`, the model never asks "what is the
//! probability of (u, v)" directly. It asks references it has memorized:
//! for a reference source `u0`, "training said `r0` about `(u0, v)`; `u`
//! differs from `u0` by this much, so correct `r0` accordingly":
//!
//! ```text
//! value = g_dst(v) . (pos(u) - pos(u0)) + w * r0      r0 = memory[u0, v]
//! ```
//!
//! and symmetrically through reference destinations `v0` using `g_src(u)`
//! and `memory[u, v0]`. Each reference also reports how far it sits from
//! the query endpoint; softmin aggregation then trusts near references and
//! discounts far ones. Heads are independent instances whose logits are
//! averaged.
//!
//! Two ablations cut one ingredient each: `NoGrad` drops the differential
//! (pure memory readout), `NoMem` drops the memory term (pure field).

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_mean, aggregate_softmin, Estimate, SentinelConfig};
use crate::encoder::{init_tables, knn_positions, EncodingTable, HeadSet};
use crate::error::{MadError, Result};
use crate::graph::{AdjacencyMemory, Graph, MemoryAdaptor};
use crate::rng::{tags, Rng};
use crate::tensor::{l2_distance_slices, ParamStore, Tensor};

/// Which ingredient of the estimate to disable, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Memory and differential both active.
    Full,
    /// Differential term zeroed: estimates are adapted memory readouts.
    NoGrad,
    /// Memory term zeroed: estimates are pure differentials.
    NoMem,
}

impl Ablation {
    pub fn label(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGrad => "nograd",
            Ablation::NoMem => "nomem",
        }
    }
}

/// How references are chosen for a query endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMode {
    /// Uniform distinct draws, excluding the endpoint itself.
    Random,
    /// Nearest neighbours in the current position space.
    DynamicNn,
}

impl RefMode {
    pub fn label(&self) -> &'static str {
        match self {
            RefMode::Random => "random",
            RefMode::DynamicNn => "dynamic_nn",
        }
    }
}

/// How per-reference estimates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// Plain average; distances ignored, no uncertainty signal.
    Mean,
    /// Distance-weighted softmin, with sentinels per the model config.
    Softmin,
}

/// Model shape and behaviour switches.
///
/// `share_tables: None` resolves to "share when the graph is undirected",
/// which keeps the source and destination differential roles identical
/// exactly when edges carry no direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MadConfig {
    pub dim: usize,
    pub heads: usize,
    pub k_refs: usize,
    pub share_tables: Option<bool>,
    pub sentinels: SentinelConfig,
    pub aggregator: AggregatorKind,
    pub ablation: Ablation,
    pub train_mode: RefMode,
    pub eval_mode: RefMode,
}

impl Default for MadConfig {
    fn default() -> Self {
        MadConfig {
            dim: 32,
            heads: 1,
            k_refs: 8,
            share_tables: None,
            sentinels: SentinelConfig::default(),
            aggregator: AggregatorKind::Softmin,
            ablation: Ablation::Full,
            train_mode: RefMode::Random,
            eval_mode: RefMode::DynamicNn,
        }
    }
}

/// A candidate edge to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairQuery {
    pub u: u32,
    pub v: u32,
}

impl PairQuery {
    pub fn new(u: u32, v: u32) -> Self {
        PairQuery { u, v }
    }

    /// Stream tag for per-pair randomness, so a pair's random references do
    /// not depend on its position within a batch.
    pub(crate) fn stream_tag(&self) -> u64 {
        tags::PAIR_SCORE ^ (((self.u as u64) << 32) | self.v as u64)
    }
}

/// References chosen for one head: sources to compare `u` against and
/// destinations to compare `v` against.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadRefs {
    pub u0s: Vec<u32>,
    pub v0s: Vec<u32>,
}

/// Scoring output, with per-head logits kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub logit: f64,
    pub uncertainty: f64,
    pub head_logits: Vec<f64>,
}

/// Estimate `(u, v)` through reference source `u0`.
///
/// The differential compares `u` to `u0` from the destination's viewpoint;
/// the memory term reads what training recorded about `(u0, v)`.
pub fn estimate_via_u0(
    table: &EncodingTable,
    params: &ParamStore,
    memory: &AdjacencyMemory,
    adaptor: &MemoryAdaptor,
    ablation: Ablation,
    u: u32,
    v: u32,
    u0: u32,
) -> Result<Estimate> {
    if u0 == u {
        return Err(MadError::SelfReference { node: u0 });
    }
    let pos_u = table.position(params, u)?;
    let pos_u0 = table.position(params, u0)?;
    let mut value = 0.0;
    if ablation != Ablation::NoGrad {
        let g = table.g_dst(params, v)?;
        let mut acc = 0.0;
        for t in 0..table.dim() {
            acc += g[t] * (pos_u[t] - pos_u0[t]);
        }
        value += acc;
    }
    if ablation != Ablation::NoMem {
        value += adaptor.adapt(memory.lookup(u0, v)?);
    }
    Ok(Estimate {
        value,
        distance: l2_distance_slices(pos_u, pos_u0),
    })
}

/// Estimate `(u, v)` through reference destination `v0`; mirror of
/// [`estimate_via_u0`].
pub fn estimate_via_v0(
    table: &EncodingTable,
    params: &ParamStore,
    memory: &AdjacencyMemory,
    adaptor: &MemoryAdaptor,
    ablation: Ablation,
    u: u32,
    v: u32,
    v0: u32,
) -> Result<Estimate> {
    if v0 == v {
        return Err(MadError::SelfReference { node: v0 });
    }
    let pos_v = table.position(params, v)?;
    let pos_v0 = table.position(params, v0)?;
    let mut value = 0.0;
    if ablation != Ablation::NoGrad {
        let g = table.g_src(params, u)?;
        let mut acc = 0.0;
        for t in 0..table.dim() {
            acc += g[t] * (pos_v[t] - pos_v0[t]);
        }
        value += acc;
    }
    if ablation != Ablation::NoMem {
        value += adaptor.adapt(memory.lookup(u, v0)?);
    }
    Ok(Estimate {
        value,
        distance: l2_distance_slices(pos_v, pos_v0),
    })
}

/// A link-prediction model: head tables (named into a [`ParamStore`]),
/// memorized training adjacency, and behaviour switches.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub cfg: MadConfig,
    pub memory: AdjacencyMemory,
    heads: HeadSet,
    shared: bool,
    n_nodes: usize,
}

impl LinkModel {
    /// Register fresh tables in `params` and memorize `graph`'s edges.
    ///
    /// `graph` must be the training split only; evaluation edges must never
    /// reach the memory.
    pub fn init(
        cfg: &MadConfig,
        graph: &Graph,
        params: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<LinkModel> {
        let n = graph.n_nodes();
        if cfg.k_refs == 0 {
            return Err(MadError::Config("k_refs must be at least 1".into()));
        }
        if n < cfg.k_refs + 1 {
            return Err(MadError::Config(format!(
                "{} nodes cannot supply {} references plus the query endpoint",
                n, cfg.k_refs
            )));
        }
        let shared = cfg.share_tables.unwrap_or(!graph.directed());
        let heads = init_tables(params, n, cfg.dim, cfg.heads, shared, rng)?;
        params.register(MemoryAdaptor::PARAM, Tensor::scalar(MemoryAdaptor::INIT)?)?;
        Ok(LinkModel {
            cfg: cfg.clone(),
            memory: AdjacencyMemory::from_graph(graph),
            heads,
            shared,
            n_nodes: n,
        })
    }

    /// Rebuild the model around tables that already exist in `params`
    /// (e.g. loaded from disk). Validates names and shapes.
    pub fn attach(cfg: &MadConfig, graph: &Graph, params: &ParamStore) -> Result<LinkModel> {
        let mut scratch = ParamStore::new();
        let shared = cfg.share_tables.unwrap_or(!graph.directed());
        let heads = init_tables(
            &mut scratch,
            graph.n_nodes(),
            cfg.dim,
            cfg.heads,
            shared,
            &mut Rng::new(0),
        )?;
        scratch.register(MemoryAdaptor::PARAM, Tensor::scalar(MemoryAdaptor::INIT)?)?;
        for name in scratch.names() {
            let expected = scratch.value(name)?.shape();
            let found = params.value(name)?.shape();
            if expected != found {
                return Err(MadError::Config(format!(
                    "parameter {name:?} has shape {found:?}, expected {expected:?}"
                )));
            }
        }
        Ok(LinkModel {
            cfg: cfg.clone(),
            memory: AdjacencyMemory::from_graph(graph),
            heads,
            shared,
            n_nodes: graph.n_nodes(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn shared_tables(&self) -> bool {
        self.shared
    }

    pub fn heads(&self) -> &HeadSet {
        &self.heads
    }

    /// Current memory adaptor, read out of the store.
    pub fn adaptor(&self, params: &ParamStore) -> Result<MemoryAdaptor> {
        Ok(MemoryAdaptor {
            w: params.value(MemoryAdaptor::PARAM)?.item(),
        })
    }

    fn check_query(&self, q: PairQuery) -> Result<()> {
        for node in [q.u, q.v] {
            if node as usize >= self.n_nodes {
                return Err(MadError::NodeOutOfRange {
                    node,
                    n_nodes: self.n_nodes,
                });
            }
        }
        if q.u == q.v {
            return Err(MadError::SelfReference { node: q.u });
        }
        Ok(())
    }

    /// Choose `k_refs` reference sources and destinations per head.
    ///
    /// Random mode consumes `rng`; DynamicNn mode is fully determined by
    /// the current positions (ties toward smaller ids).
    pub fn sample_references(
        &self,
        params: &ParamStore,
        q: PairQuery,
        mode: RefMode,
        rng: &mut Rng,
    ) -> Result<Vec<HeadRefs>> {
        self.check_query(q)?;
        let n = self.n_nodes;
        let k = self.cfg.k_refs;
        let mut all = Vec::with_capacity(self.heads.n_heads());
        for head in self.heads.iter() {
            let refs = match mode {
                RefMode::Random => HeadRefs {
                    u0s: rng
                        .sample_distinct(n, k, &[q.u as usize])
                        .into_iter()
                        .map(|i| i as u32)
                        .collect(),
                    v0s: rng
                        .sample_distinct(n, k, &[q.v as usize])
                        .into_iter()
                        .map(|i| i as u32)
                        .collect(),
                },
                RefMode::DynamicNn => HeadRefs {
                    u0s: knn_positions(head, params, q.u, k, &[q.u])?,
                    v0s: knn_positions(head, params, q.v, k, &[q.v])?,
                },
            };
            all.push(refs);
        }
        Ok(all)
    }

    /// Gather one head's estimates for a query given chosen references.
    pub fn head_estimates(
        &self,
        params: &ParamStore,
        head: &EncodingTable,
        q: PairQuery,
        refs: &HeadRefs,
    ) -> Result<Vec<Estimate>> {
        let adaptor = self.adaptor(params)?;
        let mut estimates = Vec::with_capacity(refs.u0s.len() + refs.v0s.len());
        for &u0 in &refs.u0s {
            estimates.push(estimate_via_u0(
                head,
                params,
                &self.memory,
                &adaptor,
                self.cfg.ablation,
                q.u,
                q.v,
                u0,
            )?);
        }
        for &v0 in &refs.v0s {
            estimates.push(estimate_via_v0(
                head,
                params,
                &self.memory,
                &adaptor,
                self.cfg.ablation,
                q.u,
                q.v,
                v0,
            )?);
        }
        Ok(estimates)
    }

    /// Score a query with references already chosen (one `HeadRefs` per
    /// head). This is the deterministic core every scoring path ends in.
    pub fn score_with_refs(
        &self,
        params: &ParamStore,
        q: PairQuery,
        refs: &[HeadRefs],
    ) -> Result<PairScore> {
        self.check_query(q)?;
        if refs.len() != self.heads.n_heads() {
            return Err(MadError::Config(format!(
                "got {} reference sets for {} heads",
                refs.len(),
                self.heads.n_heads()
            )));
        }
        let mut head_logits = Vec::with_capacity(refs.len());
        let mut uncertainty_sum = 0.0;
        for (head, head_refs) in self.heads.iter().zip(refs) {
            let estimates = self.head_estimates(params, head, q, head_refs)?;
            let (logit, uncertainty) = match self.cfg.aggregator {
                AggregatorKind::Mean => (aggregate_mean(&estimates)?, 0.0),
                AggregatorKind::Softmin => aggregate_softmin(&estimates, &self.cfg.sentinels)?,
            };
            head_logits.push(logit);
            uncertainty_sum += uncertainty;
        }
        let h = head_logits.len() as f64;
        let logit = head_logits.iter().sum::<f64>() / h;
        if !logit.is_finite() {
            return Err(MadError::NonFinite {
                context: format!("logit for pair ({}, {})", q.u, q.v),
            });
        }
        Ok(PairScore {
            logit,
            uncertainty: uncertainty_sum / h,
            head_logits,
        })
    }

    /// Score a query in a given reference mode.
    ///
    /// `eval_rng` is a fork base, not a consumed stream: randomness is
    /// derived per pair, so scores do not depend on evaluation order and
    /// scoring the same pair twice against the same base agrees exactly.
    pub fn score_pair_in_mode(
        &self,
        params: &ParamStore,
        q: PairQuery,
        mode: RefMode,
        eval_rng: &Rng,
    ) -> Result<PairScore> {
        let mut pair_rng = eval_rng.fork(q.stream_tag());
        let refs = self.sample_references(params, q, mode, &mut pair_rng)?;
        self.score_with_refs(params, q, &refs)
    }

    /// Score a query in the model's configured evaluation mode.
    pub fn score_pair(&self, params: &ParamStore, q: PairQuery, eval_rng: &Rng) -> Result<PairScore> {
        self.score_pair_in_mode(params, q, self.cfg.eval_mode, eval_rng)
    }

    /// Score many queries; elementwise identical to calling
    /// [`LinkModel::score_pair_in_mode`] on each.
    pub fn score_batch(
        &self,
        params: &ParamStore,
        queries: &[PairQuery],
        mode: RefMode,
        eval_rng: &Rng,
    ) -> Result<Vec<PairScore>> {
        queries
            .iter()
            .map(|&q| self.score_pair_in_mode(params, q, mode, eval_rng))
            .collect()
    }
}
