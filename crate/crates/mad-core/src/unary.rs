//! Scalar regression from memorized examples plus learned differences.
//!
//! The model keeps every training pair `(x_i, y_i)` verbatim. A prediction
//! for a query `x` starts from a reference's stored label and adds a
//! first-order correction:
//!
//! ```text
//! estimate(x | x0, y0) = w * y0 + (f(x) - f(x0)) . g(x)
//! ```
//!
//! where `f` embeds inputs into a feature space, `g` plays the role of a
//! learned gradient, and `w` is the scalar memory adaptor. Estimates from
//! `K` references are pooled by distance-weighted softmin, optionally with
//! sentinels supplying an uncertainty floor. Both maps are affine, which
//! keeps the model exactly solvable for affine ground truth: with `f` the
//! identity, `g` the true slope, and `w = 1`, every estimate equals the
//! label no matter which references are chosen.

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_softmin, Estimate, SentinelConfig};
use crate::error::{MadError, Result};
use crate::graph::MemoryAdaptor;
use crate::optim::{adam_step, AdamState};
use crate::rng::Rng;
use crate::tensor::{dot_slices, l2_distance_slices, ParamStore, Tensor};

/// How references are drawn from memory for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryRefMode {
    /// K nearest by raw input distance; ignores the learned feature map.
    Fixed,
    /// K distinct uniform draws.
    Random,
    /// K nearest by current feature-space distance.
    DynamicNn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnaryConfig {
    /// Raw input width.
    pub in_dim: usize,
    /// Feature dimension shared by `f` and `g`.
    pub dim: usize,
    pub k_refs: usize,
    pub sentinels: SentinelConfig,
    pub train_mode: UnaryRefMode,
    pub eval_mode: UnaryRefMode,
}

impl Default for UnaryConfig {
    fn default() -> Self {
        UnaryConfig {
            in_dim: 1,
            dim: 4,
            k_refs: 4,
            sentinels: SentinelConfig::none(),
            train_mode: UnaryRefMode::Random,
            eval_mode: UnaryRefMode::DynamicNn,
        }
    }
}

/// References chosen for one query, with their estimates. `estimates[j]`
/// belongs to `indices[j]`; its distance is measured in feature space.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub indices: Vec<usize>,
    pub estimates: Vec<Estimate>,
}

/// Parameter names: `f` is the feature map, `g` the differential map.
const F_WEIGHT: &str = "f.weight";
const F_BIAS: &str = "f.bias";
const G_WEIGHT: &str = "g.weight";
const G_BIAS: &str = "g.bias";

#[derive(Debug, Clone)]
pub struct UnaryModel {
    pub cfg: UnaryConfig,
    memory: Vec<(Vec<f64>, f64)>,
}

impl UnaryModel {
    /// Register fresh affine maps and the memory adaptor, leaving the
    /// memory empty. Weights start uniform in `±0.5/sqrt(dim)` like the
    /// link encoders; biases start at zero and the adaptor at 1.
    pub fn init(cfg: &UnaryConfig, params: &mut ParamStore, rng: &mut Rng) -> Result<UnaryModel> {
        if cfg.in_dim == 0 || cfg.dim == 0 {
            return Err(MadError::Config(
                "unary model needs in_dim >= 1 and dim >= 1".into(),
            ));
        }
        if cfg.k_refs == 0 {
            return Err(MadError::Config("unary model needs k_refs >= 1".into()));
        }
        let bound = 0.5 / (cfg.dim as f64).sqrt();
        for name in [F_WEIGHT, G_WEIGHT] {
            let mut t = Tensor::zeros(&[cfg.dim, cfg.in_dim]);
            for x in t.data_mut() {
                *x = rng.uniform(-bound, bound);
            }
            params.register(name, t)?;
        }
        for name in [F_BIAS, G_BIAS] {
            params.register(name, Tensor::zeros(&[1, cfg.dim]))?;
        }
        params.register(MemoryAdaptor::PARAM, Tensor::scalar(MemoryAdaptor::INIT)?)?;
        Ok(UnaryModel {
            cfg: cfg.clone(),
            memory: Vec::new(),
        })
    }

    /// Store training pairs verbatim. Replaces any previous memory.
    pub fn memorize(&mut self, data: &[(Vec<f64>, f64)]) -> Result<()> {
        for (i, (x, y)) in data.iter().enumerate() {
            if x.len() != self.cfg.in_dim {
                return Err(MadError::Config(format!(
                    "memory row {i} has {} features, expected {}",
                    x.len(),
                    self.cfg.in_dim
                )));
            }
            if !x.iter().all(|v| v.is_finite()) || !y.is_finite() {
                return Err(MadError::NonFinite {
                    context: format!("memory row {i}"),
                });
            }
        }
        self.memory = data.to_vec();
        Ok(())
    }

    pub fn memory(&self) -> &[(Vec<f64>, f64)] {
        &self.memory
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cfg.in_dim {
            return Err(MadError::Config(format!(
                "query has {} features, expected {}",
                x.len(),
                self.cfg.in_dim
            )));
        }
        Ok(())
    }

    fn affine(&self, params: &ParamStore, weight: &str, bias: &str, x: &[f64]) -> Result<Vec<f64>> {
        let w = params.value(weight)?;
        let b = params.value(bias)?;
        let mut out = Vec::with_capacity(self.cfg.dim);
        for j in 0..self.cfg.dim {
            out.push(dot_slices(w.row(j), x) + b.row(0)[j]);
        }
        Ok(out)
    }

    /// The feature embedding `f(x)`.
    pub fn feature(&self, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.affine(params, F_WEIGHT, F_BIAS, x)
    }

    /// The differential map `g(x)`.
    pub fn diff(&self, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.affine(params, G_WEIGHT, G_BIAS, x)
    }

    pub fn adaptor(&self, params: &ParamStore) -> Result<MemoryAdaptor> {
        Ok(MemoryAdaptor {
            w: params.value(MemoryAdaptor::PARAM)?.item(),
        })
    }
}

/// One reference's contribution: the adapted stored label plus the
/// first-order correction, and the feature-space distance.
pub fn estimate_from_reference(
    model: &UnaryModel,
    params: &ParamStore,
    x: &[f64],
    ref_index: usize,
) -> Result<Estimate> {
    let (x_ref, y_ref) = model.memory.get(ref_index).ok_or_else(|| {
        MadError::Config(format!(
            "reference index {ref_index} out of range ({} memorized)",
            model.memory.len()
        ))
    })?;
    let fx = model.feature(params, x)?;
    let fr = model.feature(params, x_ref)?;
    let gx = model.diff(params, x)?;
    let adaptor = model.adaptor(params)?;
    let mut correction = 0.0;
    for t in 0..model.cfg.dim {
        correction += (fx[t] - fr[t]) * gx[t];
    }
    Ok(Estimate {
        value: adaptor.adapt(*y_ref) + correction,
        distance: l2_distance_slices(&fx, &fr),
    })
}

/// Pick `k_refs` memory slots for a query under the given mode and compute
/// their estimates. `exclude` removes one slot from consideration — used
/// during training so an example never references itself.
pub fn choose_references(
    model: &UnaryModel,
    params: &ParamStore,
    x: &[f64],
    mode: UnaryRefMode,
    exclude: Option<usize>,
    rng: &mut Rng,
) -> Result<ReferenceSet> {
    model.check_input(x)?;
    if model.memory.is_empty() {
        return Err(MadError::EmptyInput {
            what: "unary memory",
        });
    }
    let n = model.memory.len();
    let available = n - usize::from(exclude.map_or(false, |e| e < n));
    if model.cfg.k_refs > available {
        return Err(MadError::Infeasible {
            requested: model.cfg.k_refs,
            available,
        });
    }
    let eligible: Vec<usize> = (0..n).filter(|i| Some(*i) != exclude).collect();
    let indices: Vec<usize> = match mode {
        UnaryRefMode::Random => {
            let excluded: Vec<usize> = exclude.into_iter().collect();
            rng.sample_distinct(n, model.cfg.k_refs, &excluded)
        }
        UnaryRefMode::Fixed => {
            let mut by_raw: Vec<(f64, usize)> = eligible
                .iter()
                .map(|&i| (l2_distance_slices(&model.memory[i].0, x), i))
                .collect();
            by_raw.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            by_raw[..model.cfg.k_refs].iter().map(|&(_, i)| i).collect()
        }
        UnaryRefMode::DynamicNn => {
            let fx = model.feature(params, x)?;
            let mut by_feat: Vec<(f64, usize)> = Vec::with_capacity(eligible.len());
            for &i in &eligible {
                let fi = model.feature(params, &model.memory[i].0)?;
                by_feat.push((l2_distance_slices(&fi, &fx), i));
            }
            by_feat.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            by_feat[..model.cfg.k_refs].iter().map(|&(_, i)| i).collect()
        }
    };
    let mut estimates = Vec::with_capacity(indices.len());
    for &i in &indices {
        estimates.push(estimate_from_reference(model, params, x, i)?);
    }
    Ok(ReferenceSet { indices, estimates })
}

/// Predict the label for `x`: choose references in the configured
/// evaluation mode and softmin-pool their estimates. Returns the
/// prediction and the sentinel (uncertainty) weight.
pub fn predict_unary(
    model: &UnaryModel,
    params: &ParamStore,
    x: &[f64],
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let refs = choose_references(model, params, x, model.cfg.eval_mode, None, rng)?;
    let (value, uncertainty) = aggregate_softmin(&refs.estimates, &model.cfg.sentinels)?;
    if !value.is_finite() {
        return Err(MadError::NonFinite {
            context: "unary prediction".into(),
        });
    }
    Ok((value, uncertainty))
}

/// Prediction with caller-chosen reference indices; returns the pooled
/// value. This is the smooth function of the parameters that training
/// differentiates once references are fixed.
pub fn predict_with_references(
    model: &UnaryModel,
    params: &ParamStore,
    x: &[f64],
    indices: &[usize],
) -> Result<f64> {
    let mut estimates = Vec::with_capacity(indices.len());
    for &i in indices {
        estimates.push(estimate_from_reference(model, params, x, i)?);
    }
    let (value, _) = aggregate_softmin(&estimates, &model.cfg.sentinels)?;
    Ok(value)
}

/// Accumulate gradients of `(pooled - y)^2` for one example with fixed
/// references. Returns the example's squared error.
fn backward_example(
    model: &UnaryModel,
    params: &mut ParamStore,
    x: &[f64],
    y: f64,
    indices: &[usize],
) -> Result<f64> {
    let d = model.cfg.dim;
    let fx = model.feature(params, x)?;
    let gx = model.diff(params, x)?;
    let adaptor = model.adaptor(params)?;
    let mut feats = Vec::with_capacity(indices.len());
    let mut estimates = Vec::with_capacity(indices.len());
    for &i in indices {
        let (x_ref, y_ref) = &model.memory[i];
        let fr = model.feature(params, x_ref)?;
        let mut correction = 0.0;
        for t in 0..d {
            correction += (fx[t] - fr[t]) * gx[t];
        }
        estimates.push(Estimate {
            value: adaptor.adapt(*y_ref) + correction,
            distance: l2_distance_slices(&fx, &fr),
        });
        feats.push(fr);
    }
    let sentinels = &model.cfg.sentinels;
    let (pooled, _) = aggregate_softmin(&estimates, sentinels)?;
    if !pooled.is_finite() {
        return Err(MadError::NonFinite {
            context: "unary training prediction".into(),
        });
    }
    let err = pooled - y;
    let dpooled = 2.0 * err;

    let distances: Vec<f64> = estimates.iter().map(|e| e.distance).collect();
    let (weights, _) = crate::aggregate::softmin_weights(&distances, sentinels)?;

    // Pooled value is sum_j w_j v_j (+ sentinel term); each distance moves
    // every weight, which collapses to w_j * (pooled - v_j).
    let mut dfx = vec![0.0; d];
    let mut dgx = vec![0.0; d];
    let mut dfr = vec![vec![0.0; d]; indices.len()];
    let mut dw = 0.0;
    for (j, &i) in indices.iter().enumerate() {
        let dval = dpooled * weights[j];
        let ddist = dpooled * weights[j] * (pooled - estimates[j].value);
        let (_, y_ref) = &model.memory[i];
        dw += dval * y_ref;
        for t in 0..d {
            dfx[t] += dval * gx[t];
            dfr[j][t] -= dval * gx[t];
            dgx[t] += dval * (fx[t] - feats[j][t]);
        }
        if distances[j] > 1e-12 {
            let coef = ddist / distances[j];
            for t in 0..d {
                dfx[t] += coef * (fx[t] - feats[j][t]);
                dfr[j][t] -= coef * (fx[t] - feats[j][t]);
            }
        }
    }

    // Push the feature-space gradients through the affine maps: for an
    // affine h(x) = Wx + b, dW[t][m] += dh[t] * x[m] and db[t] += dh[t].
    let in_dim = x.len();
    {
        let gw = params.grad_mut(F_WEIGHT)?;
        for t in 0..d {
            for (m, &xm) in x.iter().enumerate() {
                gw.data_mut()[t * in_dim + m] += dfx[t] * xm;
            }
            for (j, &i) in indices.iter().enumerate() {
                for (m, &xm) in model.memory[i].0.iter().enumerate() {
                    gw.data_mut()[t * in_dim + m] += dfr[j][t] * xm;
                }
            }
        }
    }
    {
        let gb = params.grad_mut(F_BIAS)?;
        for t in 0..d {
            let mut total = dfx[t];
            for dj in &dfr {
                total += dj[t];
            }
            gb.data_mut()[t] += total;
        }
    }
    {
        let ggw = params.grad_mut(G_WEIGHT)?;
        for t in 0..d {
            for (m, &xm) in x.iter().enumerate() {
                ggw.data_mut()[t * in_dim + m] += dgx[t] * xm;
            }
        }
    }
    {
        let ggb = params.grad_mut(G_BIAS)?;
        for t in 0..d {
            ggb.data_mut()[t] += dgx[t];
        }
    }
    params.grad_mut(MemoryAdaptor::PARAM)?.data_mut()[0] += dw;
    Ok(err * err)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnaryTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for UnaryTrainConfig {
    fn default() -> Self {
        UnaryTrainConfig {
            epochs: 150,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Memorize the dataset and fit `f`, `g`, and the adaptor by full-batch
/// Adam on squared error. Each example draws its references in the
/// configured training mode, never referencing itself. Returns the
/// per-epoch mean squared error (measured before each step).
pub fn train_unary(
    model: &mut UnaryModel,
    params: &mut ParamStore,
    data: &[(Vec<f64>, f64)],
    cfg: &UnaryTrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(MadError::EmptyInput {
            what: "unary training data",
        });
    }
    model.memorize(data)?;
    let mut rng = Rng::new(cfg.seed).fork(crate::rng::tags::TRAINING);
    let mut optimizer = AdamState::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        params.zero_grads();
        let mut total = 0.0;
        for (i, (x, y)) in data.iter().enumerate() {
            let refs =
                choose_references(model, params, x, model.cfg.train_mode, Some(i), &mut rng)?;
            total += backward_example(model, params, x, *y, &refs.indices)?;
        }
        adam_step(params, &mut optimizer)?;
        curve.push(total / data.len() as f64);
    }
    Ok(curve)
}

/// Mean squared error of always predicting the label mean — the baseline a
/// trained model must beat. Equals the population variance of the labels.
pub fn mean_predictor_mse(data: &[(Vec<f64>, f64)]) -> Result<f64> {
    if data.is_empty() {
        return Err(MadError::EmptyInput {
            what: "unary training data",
        });
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|(_, y)| y).sum::<f64>() / n;
    Ok(data.iter().map(|(_, y)| (y - mean).powi(2)).sum::<f64>() / n)
}
