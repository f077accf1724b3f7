//! Training: sigmoid cross-entropy over positive and negative pairs, a
//! hand-written backward pass, and an epoch loop with periodic ranking
//! evaluation.
//!
//! The backward pass runs in two phases. The forward phase replays each
//! example exactly as scoring does and records, per estimate, how the loss
//! moves with that estimate's value and distance. The accumulation phase
//! then walks those coefficients and adds contributions to the gradient
//! buffers:
//!
//! * value path: the differential `g . (pos_q - pos_t)` sends gradient to
//!   the `g` row and, with opposite signs, to the two position rows; the
//!   memory term sends `coefficient * r0` to the adaptor weight.
//! * distance path (softmin only): references compete through their
//!   distances, so each position row also receives
//!   `(ddistance / distance) * (pos_q - pos_t)`.
//!
//! Every formula here is pinned by finite-difference checks in the tests,
//! including a deliberately broken variant that drops the distance path to
//! prove the checks can fail.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_mean, aggregate_softmin, softmin_weights};
use crate::error::{MadError, Result};
use crate::eval::hits_at_k;
use crate::graph::{Graph, MemoryAdaptor};
use crate::link::{AggregatorKind, Ablation, HeadRefs, LinkModel, PairQuery, RefMode};
use crate::optim::{adam_step, AdamState};
use crate::rng::{tags, Rng};
use crate::tensor::ParamStore;

/// Probabilities are kept inside `[FLOOR, 1 - FLOOR]`; outside, the loss
/// plateaus and its gradient is exactly zero.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of one example from its logit, with the probability
/// clamped away from 0 and 1.
pub fn bce_from_logit(logit: f64, label: f64) -> f64 {
    let p = sigmoid(logit).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Derivative of [`bce_from_logit`] with respect to the logit: zero on the
/// clamped plateaus, `sigmoid(logit) - label` elsewhere.
pub fn dloss_dlogit(logit: f64, label: f64) -> f64 {
    let p = sigmoid(logit);
    if p < PROB_FLOOR || p > 1.0 - PROB_FLOOR {
        0.0
    } else {
        p - label
    }
}

fn canonical(u: u32, v: u32, directed: bool) -> (u32, u32) {
    if directed || u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Draw `count` distinct node pairs that are not edges of `graph` and not
/// self-pairs. Rejection sampling with a bounded attempt budget; dense
/// graphs that cannot supply enough non-edges produce
/// [`MadError::SamplingExhausted`].
pub fn sample_negatives(graph: &Graph, count: usize, rng: &mut Rng) -> Result<Vec<PairQuery>> {
    let n = graph.n_nodes();
    if n < 2 {
        return Err(MadError::EmptyInput {
            what: "graph with at least two nodes for negative sampling",
        });
    }
    let edges: HashSet<(u32, u32)> = graph
        .edges()
        .iter()
        .map(|&(u, v)| canonical(u, v, graph.directed()))
        .collect();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = 100 * count + 10_000;
    let mut attempts = 0usize;
    while out.len() < count && attempts < budget {
        attempts += 1;
        let u = rng.below(n) as u32;
        let v = rng.below(n) as u32;
        if u == v {
            continue;
        }
        let key = canonical(u, v, graph.directed());
        if edges.contains(&key) || !seen.insert(key) {
            continue;
        }
        out.push(PairQuery::new(u, v));
    }
    if out.len() < count {
        return Err(MadError::SamplingExhausted {
            attempts,
            found: out.len(),
            requested: count,
        });
    }
    Ok(out)
}

/// One training example with its references already chosen, so that loss
/// and gradient computations are deterministic functions of the parameters.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub query: PairQuery,
    pub label: f64,
    pub refs: Vec<HeadRefs>,
}

/// Choose references for a batch of labeled pairs in the model's training
/// mode. Random draws consume `rng` in example order.
pub fn prepare_batch(
    model: &LinkModel,
    params: &ParamStore,
    positives: &[PairQuery],
    negatives: &[PairQuery],
    rng: &mut Rng,
) -> Result<Vec<PreparedExample>> {
    let mut batch = Vec::with_capacity(positives.len() + negatives.len());
    for (&query, label) in positives
        .iter()
        .map(|q| (q, 1.0))
        .chain(negatives.iter().map(|q| (q, 0.0)))
    {
        let refs = model.sample_references(params, query, model.cfg.train_mode, rng)?;
        batch.push(PreparedExample { query, label, refs });
    }
    Ok(batch)
}

/// Total (sum-reduced) loss of a prepared batch. Pure forward pass; this is
/// the function the finite-difference checks probe.
pub fn batch_loss(model: &LinkModel, params: &ParamStore, batch: &[PreparedExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        let score = model.score_with_refs(params, ex.query, &ex.refs)?;
        total += bce_from_logit(score.logit, ex.label);
    }
    Ok(total)
}

/// Per-estimate loss sensitivities recorded by the forward phase.
struct EstimateTrace {
    head: usize,
    u0_side: bool,
    reference: u32,
    dval: f64,
    ddist: f64,
    distance: f64,
}

struct ExampleTrace {
    query: PairQuery,
    estimates: Vec<EstimateTrace>,
}

/// Compute the batch loss and accumulate parameter gradients into `params`.
/// Gradients add to whatever is already in the buffers; callers zero them
/// first.
pub fn backward(model: &LinkModel, params: &mut ParamStore, batch: &[PreparedExample]) -> Result<f64> {
    backward_impl(model, params, batch, true)
}

/// Backward with the softmin distance path optionally disabled. The
/// `false` variant exists only so tests can prove the finite-difference
/// harness catches a missing gradient term.
fn backward_impl(
    model: &LinkModel,
    params: &mut ParamStore,
    batch: &[PreparedExample],
    distance_path: bool,
) -> Result<f64> {
    let n_heads = model.heads().n_heads() as f64;
    let ablation = model.cfg.ablation;
    let mut total_loss = 0.0;
    let mut traces: Vec<ExampleTrace> = Vec::new();

    // Forward phase: replay scoring, collect loss sensitivities.
    for (i, ex) in batch.iter().enumerate() {
        let mut head_data = Vec::with_capacity(model.heads().n_heads());
        for (h, head_refs) in ex.refs.iter().enumerate() {
            let estimates =
                model.head_estimates(params, model.heads().head(h), ex.query, head_refs)?;
            let (head_logit, weights) = match model.cfg.aggregator {
                AggregatorKind::Mean => (aggregate_mean(&estimates)?, None),
                AggregatorKind::Softmin => {
                    let (logit, _) = aggregate_softmin(&estimates, &model.cfg.sentinels)?;
                    let distances: Vec<f64> = estimates.iter().map(|e| e.distance).collect();
                    let (w, _) = softmin_weights(&distances, &model.cfg.sentinels)?;
                    (logit, Some(w))
                }
            };
            head_data.push((head_refs, estimates, head_logit, weights));
        }
        let logit =
            head_data.iter().map(|(_, _, l, _)| *l).sum::<f64>() / n_heads;
        if !logit.is_finite() {
            return Err(MadError::NonFinite {
                context: format!(
                    "logit of batch example {} (pair ({}, {}))",
                    i, ex.query.u, ex.query.v
                ),
            });
        }
        total_loss += bce_from_logit(logit, ex.label);
        let dlogit = dloss_dlogit(logit, ex.label);
        if dlogit == 0.0 {
            continue;
        }
        let g_head = dlogit / n_heads;
        let mut estimates_out = Vec::new();
        for (h, (head_refs, estimates, head_logit, weights)) in head_data.iter().enumerate() {
            let n_est = estimates.len() as f64;
            for (e_idx, est) in estimates.iter().enumerate() {
                let (dval, ddist) = match weights {
                    None => (g_head / n_est, 0.0),
                    Some(w) => (
                        g_head * w[e_idx],
                        g_head * w[e_idx] * (head_logit - est.value),
                    ),
                };
                let (u0_side, reference) = if e_idx < head_refs.u0s.len() {
                    (true, head_refs.u0s[e_idx])
                } else {
                    (false, head_refs.v0s[e_idx - head_refs.u0s.len()])
                };
                estimates_out.push(EstimateTrace {
                    head: h,
                    u0_side,
                    reference,
                    dval,
                    ddist,
                    distance: est.distance,
                });
            }
        }
        traces.push(ExampleTrace {
            query: ex.query,
            estimates: estimates_out,
        });
    }

    // Accumulation phase: turn sensitivities into parameter gradients.
    let memory = &model.memory;
    let dim = model.cfg.dim;
    let mut w_grad = 0.0;
    let (values, grads) = params.values_and_grads_mut();
    let mut delta = vec![0.0; dim];
    for ex in &traces {
        let (u, v) = (ex.query.u as usize, ex.query.v as usize);
        for tr in &ex.estimates {
            let head = model.heads().head(tr.head);
            let pos_name = head.pos_name();
            // The endpoint being compared and the gradient-receiving g row
            // depend on the side: reference sources perturb `u` as seen by
            // `g_dst(v)`, reference destinations perturb `v` as seen by
            // `g_src(u)`.
            let (endpoint, g_name, g_row) = if tr.u0_side {
                (u, head.g_dst_name(), v)
            } else {
                (v, head.g_src_name(), u)
            };
            let reference = tr.reference as usize;
            {
                let pos = values.get(pos_name).expect("registered");
                let q_row = pos.row(endpoint);
                let t_row = pos.row(reference);
                for d in 0..dim {
                    delta[d] = q_row[d] - t_row[d];
                }
            }
            if ablation != Ablation::NoGrad {
                {
                    let row = grads.get_mut(g_name).expect("registered").row_mut(g_row);
                    for d in 0..dim {
                        row[d] += tr.dval * delta[d];
                    }
                }
                let g_values = values.get(g_name).expect("registered");
                let g_row_vals = g_values.row(g_row);
                {
                    let row = grads.get_mut(pos_name).expect("registered").row_mut(endpoint);
                    for d in 0..dim {
                        row[d] += tr.dval * g_row_vals[d];
                    }
                }
                {
                    let row = grads
                        .get_mut(pos_name)
                        .expect("registered")
                        .row_mut(reference);
                    for d in 0..dim {
                        row[d] -= tr.dval * g_row_vals[d];
                    }
                }
            }
            if ablation != Ablation::NoMem {
                let r0 = if tr.u0_side {
                    memory.at(tr.reference, ex.query.v)
                } else {
                    memory.at(ex.query.u, tr.reference)
                };
                w_grad += tr.dval * r0;
            }
            // Coincident points make the distance non-differentiable; the
            // guard freezes that direction rather than dividing by zero.
            if distance_path && tr.ddist != 0.0 && tr.distance > 1e-12 {
                let coef = tr.ddist / tr.distance;
                {
                    let row = grads.get_mut(pos_name).expect("registered").row_mut(endpoint);
                    for d in 0..dim {
                        row[d] += coef * delta[d];
                    }
                }
                {
                    let row = grads
                        .get_mut(pos_name)
                        .expect("registered")
                        .row_mut(reference);
                    for d in 0..dim {
                        row[d] -= coef * delta[d];
                    }
                }
            }
        }
    }
    grads
        .get_mut(MemoryAdaptor::PARAM)
        .expect("registered")
        .data_mut()[0] += w_grad;
    Ok(total_loss)
}

/// Epoch loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives drawn per positive in each batch.
    pub neg_ratio: usize,
    pub lr: f64,
    pub seed: u64,
    /// Evaluate every this many epochs (and always on the last); 0 means
    /// last epoch only.
    pub eval_every: usize,
    /// Hide each batch's positive edges from the memory while computing
    /// that batch's loss and gradients, so examples cannot read their
    /// co-batch labels. Off by default; training edges legitimately stay
    /// memorized across batches.
    #[serde(default)]
    pub strict_masking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1024,
            neg_ratio: 1,
            lr: 0.005,
            seed: 0,
            eval_every: 10,
            strict_masking: false,
        }
    }
}

/// Ranking quality under both reference-selection modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitsByMode {
    pub random: f64,
    pub dynamic_nn: f64,
}

/// One epoch's record. Hits fields are present on evaluation epochs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_hits: Option<HitsByMode>,
    pub eval_hits: Option<HitsByMode>,
}

/// Held-out edges and fixed negatives for evaluation during training.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub eval_positives: Vec<PairQuery>,
    pub negatives: Vec<PairQuery>,
    /// At most this many training edges are scored for progress reports.
    pub train_probe_cap: usize,
    pub hits_k: usize,
}

fn hits_in_both_modes(
    model: &LinkModel,
    params: &ParamStore,
    positives: &[PairQuery],
    negatives: &[PairQuery],
    k: usize,
    rng: &Rng,
) -> Result<HitsByMode> {
    let mut by_mode = [0.0; 2];
    for (slot, mode) in [(0, RefMode::Random), (1, RefMode::DynamicNn)] {
        let pos: Vec<f64> = model
            .score_batch(params, positives, mode, rng)?
            .into_iter()
            .map(|s| s.logit)
            .collect();
        let neg: Vec<f64> = model
            .score_batch(params, negatives, mode, rng)?
            .into_iter()
            .map(|s| s.logit)
            .collect();
        by_mode[slot] = hits_at_k(&pos, &neg, k)?;
    }
    Ok(HitsByMode {
        random: by_mode[0],
        dynamic_nn: by_mode[1],
    })
}

/// Train `model` on the edges of `train_graph`, reporting loss each epoch
/// and ranking metrics on evaluation epochs.
///
/// All randomness descends from `cfg.seed`; two calls with equal inputs
/// produce identical reports and identical final parameters.
pub fn fit(
    model: &mut LinkModel,
    params: &mut ParamStore,
    train_graph: &Graph,
    cfg: &TrainConfig,
    eval: Option<&EvalSetup>,
) -> Result<Vec<LossReport>> {
    if train_graph.n_nodes() != model.n_nodes() {
        return Err(MadError::Config(format!(
            "training graph has {} nodes but the model was built for {}",
            train_graph.n_nodes(),
            model.n_nodes()
        )));
    }
    let positives: Vec<PairQuery> = train_graph
        .edges()
        .iter()
        .map(|&(u, v)| PairQuery::new(u, v))
        .collect();
    if positives.is_empty() {
        return Err(MadError::EmptyInput {
            what: "training edges",
        });
    }
    let root = Rng::new(cfg.seed);
    let mut train_rng = root.fork(tags::TRAINING);
    let eval_base = root.fork(tags::EVAL);
    let probe: Option<Vec<PairQuery>> = eval.map(|setup| {
        let cap = setup.train_probe_cap.min(positives.len());
        let mut probe_rng = root.fork(tags::TRAIN_PROBE);
        probe_rng
            .sample_distinct(positives.len(), cap, &[])
            .into_iter()
            .map(|i| positives[i])
            .collect()
    });
    let mut optimizer = AdamState::new(cfg.lr);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let batch_size = cfg.batch_size.max(1);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..positives.len()).collect();
        train_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_examples = 0usize;
        for chunk in order.chunks(batch_size) {
            let chunk_pos: Vec<PairQuery> = chunk.iter().map(|&i| positives[i]).collect();
            let negatives =
                sample_negatives(train_graph, chunk_pos.len() * cfg.neg_ratio, &mut train_rng)?;
            let batch = prepare_batch(model, params, &chunk_pos, &negatives, &mut train_rng)?;
            params.zero_grads();
            let loss = if cfg.strict_masking {
                for q in &chunk_pos {
                    model.memory.mask_pair(q.u, q.v)?;
                }
                let result = backward(model, params, &batch);
                for q in &chunk_pos {
                    model.memory.unmask_pair(q.u, q.v)?;
                }
                result?
            } else {
                backward(model, params, &batch)?
            };
            adam_step(params, &mut optimizer)?;
            epoch_loss += loss;
            n_examples += batch.len();
        }

        let evaluate_now = eval.is_some()
            && (epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0));
        let (train_hits, eval_hits) = if evaluate_now {
            let setup = eval.expect("checked");
            let epoch_rng = eval_base.fork(epoch as u64);
            let train_hits = match &probe {
                Some(p) if !p.is_empty() => Some(hits_in_both_modes(
                    model,
                    params,
                    p,
                    &setup.negatives,
                    setup.hits_k,
                    &epoch_rng,
                )?),
                _ => None,
            };
            let eval_hits = Some(hits_in_both_modes(
                model,
                params,
                &setup.eval_positives,
                &setup.negatives,
                setup.hits_k,
                &epoch_rng,
            )?);
            (train_hits, eval_hits)
        } else {
            (None, None)
        };
        reports.push(LossReport {
            epoch,
            mean_loss: epoch_loss / n_examples as f64,
            train_hits,
            eval_hits,
        });
    }
    Ok(reports)
}
