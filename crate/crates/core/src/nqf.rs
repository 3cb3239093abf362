//! Quantile-conditioned recurrent generation model.
//!
//! The network consumes wind speed and its own previous output, is
//! conditioned on a per-step quantile level, and emits a capacity factor
//! through a sigmoid head. Training minimizes a discretized CRPS
//! (pinball sum over a fixed level set) with a mean-bias term and a soft
//! monotonicity penalty; inference samples a smooth trajectory by
//! driving the quantile level with a reflected random walk.

use crate::econ::FarmSpec;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{
    self, ff_forward_cached, lstm_step_cached, AdamState, FfCache, Gradients, LstmCache,
    LstmState, NetParams, NetShape,
};
use crate::rng::mix_seed;
use crate::series::{make_batches, Channel, SeriesFrame};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Reflection margin keeping quantile levels strictly inside (0, 1).
const LEVEL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NqfConfig {
    pub hidden: usize,
    pub ff_widths: (usize, usize),
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Quantile levels used during training, ascending, strictly in (0,1).
    pub levels: Vec<f64>,
    /// Random-walk smoothness factor.
    pub smooth_lambda: f64,
    /// Random-walk drift toward the median.
    pub drift_gamma: f64,
    /// Weight of the mean-bias loss term.
    pub bias_weight: f64,
    /// Weight of the soft quantile-monotonicity penalty.
    pub mono_weight: f64,
    /// Hard monotone head: constrains every weight on the path from the
    /// quantile-level input to the output to be non-negative (projected
    /// after each optimizer step), making the quantile function monotone
    /// by construction instead of only penalizing crossings.
    pub mono_hard: bool,
    pub seed: u64,
}

impl Default for NqfConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            ff_widths: (32, 16),
            learning_rate: 1e-3,
            epochs: 32,
            batch_size: 6,
            seq_len: 168,
            levels: vec![0.01, 0.05, 0.1, 0.5, 0.9, 0.99],
            smooth_lambda: 0.01,
            drift_gamma: 0.005,
            bias_weight: 1.0,
            mono_weight: 1.0,
            mono_hard: false,
            seed: 0,
        }
    }
}

impl NqfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("quantile level set is empty".into()));
        }
        for pair in self.levels.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Config("quantile levels must be strictly ascending".into()));
            }
        }
        if self.levels[0] <= 0.0 || *self.levels.last().unwrap() >= 1.0 {
            return Err(Error::Config("quantile levels must lie strictly inside (0, 1)".into()));
        }
        if self.smooth_lambda < 0.0 || !(0.0..1.0).contains(&self.drift_gamma) {
            return Err(Error::Config("walk parameters out of range".into()));
        }
        if self.learning_rate <= 0.0 || self.epochs == 0 || self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::Config("training parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn net_shape(&self) -> NetShape {
        // LSTM sees (scaled wind speed, previous output); the head input
        // gains the quantile level.
        NetShape::new(2, self.hidden, 1, self.ff_widths)
    }

    /// Index of the level closest to the median.
    pub fn median_index(&self) -> usize {
        let mut best = 0;
        for (i, a) in self.levels.iter().enumerate() {
            if (a - 0.5).abs() < (self.levels[best] - 0.5).abs() {
                best = i;
            }
        }
        best
    }
}

/// A trained generation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NqfModel {
    pub params: NetParams,
    pub config: NqfConfig,
    /// Wind speeds are divided by this before entering the network.
    pub wind_scale: f64,
    /// Rated capacity used to convert capacity factors to MW.
    pub capacity_mw: f64,
}

/// Per-level predicted capacity-factor paths over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction {
    pub levels: Vec<f64>,
    /// `paths[k][t]` is the prediction for `levels[k]` at step `t`.
    pub paths: Vec<Vec<f64>>,
}

/// Runs the recurrent pass over `wind` with one quantile level per step.
/// `p0` seeds the autoregressive input. Output is on capacity-factor
/// scale.
pub fn nqf_forward(model: &NqfModel, wind: &[f64], alphas: &[f64], p0: f64) -> Result<Vec<f64>> {
    if wind.len() != alphas.len() {
        return Err(Error::Size("wind and level series differ in length".into()));
    }
    for a in alphas {
        if !(*a > 0.0 && *a < 1.0) {
            return Err(Error::Domain(format!("quantile level {a} outside (0, 1)")));
        }
    }
    let mut state = LstmState::zeros(model.config.hidden);
    let mut p_prev = p0;
    let mut out = Vec::with_capacity(wind.len());
    for (v, alpha) in wind.iter().zip(alphas) {
        let x = [v / model.wind_scale, p_prev];
        state = nn::lstm_step(&model.params, &x, &state)?;
        let z = nn::ff_forward(&model.params, &state.h, &[*alpha])?;
        let p = nn::sigmoid(z);
        out.push(p);
        p_prev = p;
    }
    Ok(out)
}

struct StepCache {
    lstm: LstmCache,
    ff: FfCache,
    pred: f64,
}

/// Forward pass with caches; one fixed level per trajectory during
/// training, or per-step levels at inference.
fn forward_cached(
    params: &NetParams,
    wind_scaled: &[f64],
    alphas: &[f64],
    p0: f64,
) -> Result<(Vec<f64>, Vec<StepCache>)> {
    let hidden = params.shape.hidden;
    let mut state = LstmState::zeros(hidden);
    let mut p_prev = p0;
    let mut preds = Vec::with_capacity(wind_scaled.len());
    let mut caches = Vec::with_capacity(wind_scaled.len());
    for (v, alpha) in wind_scaled.iter().zip(alphas) {
        let x = [*v, p_prev];
        let (next, lstm) = lstm_step_cached(params, &x, &state)?;
        let (z, ff) = ff_forward_cached(params, &next.h, &[*alpha])?;
        let p = nn::sigmoid(z);
        preds.push(p);
        caches.push(StepCache { lstm, ff, pred: p });
        state = next;
        p_prev = p;
    }
    Ok((preds, caches))
}

/// Backpropagation through time for one trajectory. `d_preds[t]` holds
/// the loss gradient w.r.t. the step-t output; the autoregressive path
/// (output feeding the next step's input) is differentiated as well.
fn backward_through_time(params: &NetParams, caches: &[StepCache], d_preds: &[f64], grads: &mut Gradients) {
    let hidden = params.shape.hidden;
    let mut d_h = vec![0.0; hidden];
    let mut d_c = vec![0.0; hidden];
    let mut d_feedback = 0.0;
    for t in (0..caches.len()).rev() {
        let cache = &caches[t];
        let p = cache.pred;
        let d_p = d_preds[t] + d_feedback;
        let d_z = d_p * p * (1.0 - p);
        let d_ff_in = nn::ff_backward(params, &cache.ff, d_z, grads);
        for (acc, d) in d_h.iter_mut().zip(&d_ff_in[..hidden]) {
            *acc += *d;
        }
        let (d_x, d_h_prev, d_c_prev) = nn::lstm_step_backward(params, &cache.lstm, &d_h, &d_c, grads);
        d_feedback = d_x[1];
        d_h = d_h_prev;
        d_c = d_c_prev;
    }
}

/// Discretized CRPS over a level set (pinball decomposition) plus a
/// squared mean-bias term on the median path. Returns the mean over
/// timesteps.
pub fn crps_loss(preds: &QuantilePrediction, observed: &[f64], bias_weight: f64) -> Result<f64> {
    let (loss, _) = crps_loss_with_grads(preds, observed, bias_weight)?;
    Ok(loss)
}

fn crps_loss_with_grads(
    preds: &QuantilePrediction,
    observed: &[f64],
    bias_weight: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let levels = &preds.levels;
    if levels.is_empty() || preds.paths.len() != levels.len() {
        return Err(Error::Size("prediction levels and paths mismatch".into()));
    }
    let t_len = observed.len();
    if t_len == 0 || preds.paths.iter().any(|p| p.len() != t_len) {
        return Err(Error::Size("prediction and observation lengths differ".into()));
    }
    let mut grads = vec![vec![0.0; t_len]; levels.len()];
    let norm = 2.0 / (levels.len() as f64 * t_len as f64);
    let mut loss = 0.0;
    for (k, alpha) in levels.iter().enumerate() {
        for t in 0..t_len {
            let u = observed[t] - preds.paths[k][t];
            let (rho, d_pred) = if u >= 0.0 {
                (u * alpha, -alpha)
            } else {
                (u * (alpha - 1.0), 1.0 - alpha)
            };
            loss += norm * rho;
            grads[k][t] += norm * d_pred;
        }
    }

    let median = {
        let mut best = 0;
        for (i, a) in levels.iter().enumerate() {
            if (a - 0.5).abs() < (levels[best] - 0.5).abs() {
                best = i;
            }
        }
        best
    };
    let mean_pred = preds.paths[median].iter().sum::<f64>() / t_len as f64;
    let mean_obs = observed.iter().sum::<f64>() / t_len as f64;
    let bias = mean_pred - mean_obs;
    loss += bias_weight * bias * bias;
    let d_bias = bias_weight * 2.0 * bias / t_len as f64;
    for g in &mut grads[median] {
        *g += d_bias;
    }

    Ok((loss, grads))
}

/// Hinge penalty on adjacent-level crossings, averaged over timesteps.
fn monotonicity_penalty_with_grads(preds: &QuantilePrediction, weight: f64, grads: &mut [Vec<f64>]) -> f64 {
    if weight == 0.0 || preds.levels.len() < 2 {
        return 0.0;
    }
    let t_len = preds.paths[0].len();
    let norm = weight / t_len as f64;
    let mut penalty = 0.0;
    for k in 0..preds.levels.len() - 1 {
        for t in 0..t_len {
            let gap = preds.paths[k][t] - preds.paths[k + 1][t];
            if gap > 0.0 {
                penalty += norm * gap;
                grads[k][t] += norm;
                grads[k + 1][t] -= norm;
            }
        }
    }
    penalty
}

/// Smooth random walk over quantile levels: Gaussian steps of scale
/// `lambda` with drift `gamma` toward the median, reflected into
/// (0, 1). The first element is `alpha0` itself.
pub fn brownian_walk(steps: usize, lambda: f64, gamma: f64, seed: u64, alpha0: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 || !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain("walk parameters out of range".into()));
    }
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(Error::Domain(format!("start level {alpha0} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut out = Vec::with_capacity(steps);
    let mut alpha = alpha0;
    for t in 0..steps {
        if t > 0 {
            let noise: f64 = normal.sample(&mut rng);
            alpha = alpha + lambda * noise + gamma * (0.5 - alpha);
            alpha = reflect_into_open_unit(alpha);
        }
        out.push(alpha);
    }
    Ok(out)
}

fn reflect_into_open_unit(mut x: f64) -> f64 {
    let lo = LEVEL_MARGIN;
    let hi = 1.0 - LEVEL_MARGIN;
    while x < lo || x > hi {
        if x < lo {
            x = 2.0 * lo - x;
        } else {
            x = 2.0 * hi - x;
        }
    }
    x
}

/// Samples a synthetic power series (MW) for a wind-speed series by
/// driving the trained network with a quantile-level walk.
pub fn generate(model: &NqfModel, wind: &[f64], seed: u64) -> Result<Vec<f64>> {
    let walk = brownian_walk(
        wind.len(),
        model.config.smooth_lambda,
        model.config.drift_gamma,
        seed,
        0.5,
    )?;
    let cf = nqf_forward(model, wind, &walk, 0.0)?;
    Ok(cf.into_iter().map(|p| p * model.capacity_mw).collect())
}

/// The model's median path in MW (the `lambda = 0` walk at the median).
pub fn median_path(model: &NqfModel, wind: &[f64]) -> Result<Vec<f64>> {
    let alphas = vec![0.5; wind.len()];
    let cf = nqf_forward(model, wind, &alphas, 0.0)?;
    Ok(cf.into_iter().map(|p| p * model.capacity_mw).collect())
}

/// Per-step quantile profile at fixed conditioning: the recurrence runs
/// once along the median level, and at every step the head is evaluated
/// for each requested level against that shared state. `out[t][k]` is
/// the capacity-factor prediction for `levels[k]` at step `t`.
pub fn quantile_profile(
    model: &NqfModel,
    wind: &[f64],
    levels: &[f64],
    p0: f64,
) -> Result<Vec<Vec<f64>>> {
    for a in levels {
        if !(*a > 0.0 && *a < 1.0) {
            return Err(Error::Domain(format!("quantile level {a} outside (0, 1)")));
        }
    }
    let mut state = LstmState::zeros(model.config.hidden);
    let mut p_prev = p0;
    let mut out = Vec::with_capacity(wind.len());
    for v in wind {
        let x = [v / model.wind_scale, p_prev];
        state = nn::lstm_step(&model.params, &x, &state)?;
        let mut row = Vec::with_capacity(levels.len());
        for alpha in levels {
            let z = nn::ff_forward(&model.params, &state.h, &[*alpha])?;
            row.push(nn::sigmoid(z));
        }
        let median = nn::ff_forward(&model.params, &state.h, &[0.5])?;
        p_prev = nn::sigmoid(median);
        out.push(row);
    }
    Ok(out)
}

/// Per-epoch training record. Epoch 0 is the untrained baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetric {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
}

/// Versioned training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NqfCheckpoint {
    pub version: u32,
    pub model: NqfModel,
    pub adam: AdamState,
    /// Next epoch to run (1-based).
    pub next_epoch: usize,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Incremental trainer; owns the parameters and optimizer state so runs
/// can be checkpointed and resumed bit-identically.
pub struct NqfTrainer {
    model: NqfModel,
    adam: AdamState,
    next_epoch: usize,
}

impl NqfTrainer {
    pub fn new(config: NqfConfig, farm: &FarmSpec, train: &SeriesFrame) -> Result<Self> {
        config.validate()?;
        farm.validate()?;
        let v = train.require(Channel::WindSpeed)?;
        let wind_scale = {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            if mean > 1e-9 {
                mean
            } else {
                1.0
            }
        };
        let shape = config.net_shape();
        let mut params = nn::init_params(shape, config.seed);
        if config.mono_hard {
            project_level_path_nonnegative(&mut params);
        }
        let adam = AdamState::new(shape.param_len());
        Ok(Self {
            model: NqfModel { params, config, wind_scale, capacity_mw: farm.capacity_mw },
            adam,
            next_epoch: 1,
        })
    }

    pub fn from_checkpoint(ckpt: NqfCheckpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.model.config.validate()?;
        Ok(Self { model: ckpt.model, adam: ckpt.adam, next_epoch: ckpt.next_epoch })
    }

    pub fn checkpoint(&self) -> NqfCheckpoint {
        NqfCheckpoint {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            adam: self.adam.clone(),
            next_epoch: self.next_epoch,
        }
    }

    pub fn model(&self) -> &NqfModel {
        &self.model
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    /// Trains until `until_epoch` (inclusive, capped by the configured
    /// epoch count) and returns one metric row per epoch run, plus an
    /// untrained baseline row when starting from scratch.
    pub fn run_until(
        &mut self,
        train: &SeriesFrame,
        valid: &SeriesFrame,
        until_epoch: usize,
    ) -> Result<Vec<EpochMetric>> {
        let (train_v, train_y) = self.normalized_channels(train)?;
        let (valid_v, valid_y) = self.normalized_channels(valid)?;
        let cfg = self.model.config.clone();
        let last = until_epoch.min(cfg.epochs);

        let mut metrics = Vec::new();
        if self.next_epoch == 1 {
            metrics.push(EpochMetric {
                epoch: 0,
                train_loss: None,
                valid_loss: self.validation_loss(&valid_v, &valid_y)?,
            });
        }

        while self.next_epoch <= last {
            let epoch = self.next_epoch;
            let batches = make_batches(
                train,
                cfg.seq_len,
                cfg.batch_size,
                mix_seed(cfg.seed, epoch as u64),
                None,
            )?;
            let mut epoch_loss = 0.0;
            let mut window_count = 0usize;
            for batch in &batches {
                let results = exec::map_collect(&batch.starts, |&start| {
                    self.window_pass(&train_v, &train_y, start, cfg.seq_len)
                });
                let mut grads = Gradients::zeros(self.model.params.shape);
                let mut batch_loss = 0.0;
                for r in results {
                    let (loss, g) = r?;
                    batch_loss += loss;
                    grads.add_assign(&g);
                }
                let count = batch.starts.len() as f64;
                grads.scale(1.0 / count);
                grads.assert_finite()?;
                if !batch_loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
                }
                epoch_loss += batch_loss;
                window_count += batch.starts.len();
                self.adam.step(&mut self.model.params, &grads, cfg.learning_rate);
                if cfg.mono_hard {
                    project_level_path_nonnegative(&mut self.model.params);
                }
                self.model.params.assert_finite()?;
            }
            let valid_loss = self.validation_loss(&valid_v, &valid_y)?;
            metrics.push(EpochMetric {
                epoch,
                train_loss: Some(epoch_loss / window_count.max(1) as f64),
                valid_loss,
            });
            self.next_epoch += 1;
        }
        Ok(metrics)
    }

    pub fn run(&mut self, train: &SeriesFrame, valid: &SeriesFrame) -> Result<Vec<EpochMetric>> {
        self.run_until(train, valid, self.model.config.epochs)
    }

    /// Loss and parameter gradients for one training window: every
    /// quantile level runs its own autoregressive trajectory seeded with
    /// the observed value at the window start.
    fn window_pass(
        &self,
        wind_scaled: &[f64],
        observed_cf: &[f64],
        start: usize,
        seq_len: usize,
    ) -> Result<(f64, Gradients)> {
        let v = &wind_scaled[start..start + seq_len];
        let y = &observed_cf[start..start + seq_len];
        window_loss_grads_scaled(&self.model.params, &self.model.config, v, y, y[0])
    }

    /// Mean CRPS loss over non-overlapping validation windows.
    fn validation_loss(&self, wind_scaled: &[f64], observed_cf: &[f64]) -> Result<f64> {
        let cfg = &self.model.config;
        let seq_len = cfg.seq_len.min(wind_scaled.len());
        let windows: Vec<usize> = (0..=(wind_scaled.len() - seq_len)).step_by(seq_len).collect();
        let losses = exec::map_collect(&windows, |&start| -> Result<f64> {
            let v = &wind_scaled[start..start + seq_len];
            let y = &observed_cf[start..start + seq_len];
            let p0 = y[0];
            let mut paths = Vec::with_capacity(cfg.levels.len());
            for alpha in &cfg.levels {
                let alphas = vec![*alpha; seq_len];
                let (preds, _) = forward_cached(&self.model.params, v, &alphas, p0)?;
                paths.push(preds);
            }
            crps_loss(&QuantilePrediction { levels: cfg.levels.clone(), paths }, y, cfg.bias_weight)
        });
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / windows.len().max(1) as f64)
    }

    /// Wind scaled by the training mean; generation as clamped capacity
    /// factors.
    fn normalized_channels(&self, frame: &SeriesFrame) -> Result<(Vec<f64>, Vec<f64>)> {
        let v = frame.require(Channel::WindSpeed)?;
        let g = frame.require(Channel::Generation)?;
        let scaled: Vec<f64> = v.iter().map(|x| x / self.model.wind_scale).collect();
        let y: Vec<f64> = g.iter().map(|x| (x / self.model.capacity_mw).clamp(0.0, 1.0)).collect();
        Ok((scaled, y))
    }
}

/// Projects every weight on the quantile-level path (the level column of
/// the first feedforward layer, the second layer, and the head) onto
/// [0, inf). With tanh hidden activations this makes the head output
/// non-decreasing in the level input for any fixed hidden state.
fn project_level_path_nonnegative(params: &mut NetParams) {
    let shape = params.shape;
    if shape.ff_extra == 0 {
        return;
    }
    let seg = shape.segments();
    let din = shape.ff_input_dim();
    // Level inputs occupy the trailing `ff_extra` columns of layer 1.
    for row in 0..shape.ff_widths.0 {
        for col in shape.hidden..din {
            let idx = seg.ff1_w.0 + row * din + col;
            params.values[idx] = params.values[idx].max(0.0);
        }
    }
    for idx in seg.ff2_w.0..seg.ff2_w.1 {
        params.values[idx] = params.values[idx].max(0.0);
    }
    for idx in seg.head_w.0..seg.head_w.1 {
        params.values[idx] = params.values[idx].max(0.0);
    }
}

fn window_loss_grads_scaled(
    params: &NetParams,
    cfg: &NqfConfig,
    wind_scaled: &[f64],
    observed_cf: &[f64],
    p0: f64,
) -> Result<(f64, Gradients)> {
    let seq_len = wind_scaled.len();
    let mut paths = Vec::with_capacity(cfg.levels.len());
    let mut caches = Vec::with_capacity(cfg.levels.len());
    for alpha in &cfg.levels {
        let alphas = vec![*alpha; seq_len];
        let (preds, cache) = forward_cached(params, wind_scaled, &alphas, p0)?;
        paths.push(preds);
        caches.push(cache);
    }
    let preds = QuantilePrediction { levels: cfg.levels.clone(), paths };
    let (mut loss, mut d_paths) = crps_loss_with_grads(&preds, observed_cf, cfg.bias_weight)?;
    loss += monotonicity_penalty_with_grads(&preds, cfg.mono_weight, &mut d_paths);

    let mut grads = Gradients::zeros(params.shape);
    for (cache, d_preds) in caches.iter().zip(&d_paths) {
        backward_through_time(params, cache, d_preds, &mut grads);
    }
    Ok((loss, grads))
}

/// Full training loss over one window (pinball sum, bias term, and
/// monotonicity penalty) with its parameter gradients: the exact
/// quantity the trainer descends. Wind is in m/s; the observed series is
/// on capacity-factor scale.
pub fn window_loss_and_grads(
    model: &NqfModel,
    wind: &[f64],
    observed_cf: &[f64],
    p0: f64,
) -> Result<(f64, Gradients)> {
    if wind.len() != observed_cf.len() || wind.is_empty() {
        return Err(Error::Size("window channels must share a nonzero length".into()));
    }
    let scaled: Vec<f64> = wind.iter().map(|v| v / model.wind_scale).collect();
    window_loss_grads_scaled(&model.params, &model.config, &scaled, observed_cf, p0)
}

/// Convenience wrapper: fresh trainer, full run, returns the model and
/// the per-epoch metrics.
pub fn train_nqf(
    train: &SeriesFrame,
    valid: &SeriesFrame,
    config: NqfConfig,
    farm: &FarmSpec,
) -> Result<(NqfModel, Vec<EpochMetric>)> {
    let mut trainer = NqfTrainer::new(config, farm, train)?;
    let metrics = trainer.run(train, valid)?;
    Ok((trainer.model, metrics))
}


#[cfg(test)]
mod trained_model_tests {
    use super::*;
    use crate::metrics::{pair_series, power_curve_similarity, DEFAULT_BINS};
    use crate::series::{synth_dataset, SynthConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_setup() -> (SeriesFrame, SeriesFrame, FarmSpec) {
        let farm = FarmSpec { capacity_mw: 250.0, capex_usd: 3.75e8, opex_usd_per_yr: 1.0e7, fcr: 0.07 };
        // A calm-heavy regime with an instantaneous power curve, so the
        // cut-in behavior is cleanly learnable from the data.
        let synth = SynthConfig {
            wind_mean: 5.5,
            wind_regime_sd: 3.0,
            rotor_blend: 0.0,
            rotor_alpha: 1.0,
            ..SynthConfig::default()
        };
        let data = synth_dataset(2, 21, &farm, &synth).unwrap();
        let (train, valid) = data.split_train_test(0.7).unwrap();
        (train, valid, farm)
    }

    fn toy_config(mono_hard: bool) -> NqfConfig {
        NqfConfig {
            hidden: 8,
            ff_widths: (12, 6),
            epochs: 16,
            batch_size: 6,
            seq_len: 24,
            seed: 3,
            mono_weight: 5.0,
            mono_hard,
            ..NqfConfig::default()
        }
    }

    /// Worst adjacent-level inversion over ~1000 random fixed-conditioning
    /// probes of the quantile profile.
    fn worst_profile_inversion(model: &NqfModel, v: &[f64]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let window = 48;
        let mut worst: f64 = 0.0;
        let mut probes = 0usize;
        while probes < 1000 {
            let start = rng.random_range(0..v.len() - window);
            let slice = &v[start..start + window];
            let profile = quantile_profile(model, slice, &model.config.levels, 0.3).unwrap();
            for row in &profile {
                for k in 0..row.len() - 1 {
                    worst = worst.max(row[k] - row[k + 1]);
                }
            }
            probes += window;
        }
        worst
    }

    #[test]
    fn trained_model_properties() {
        let (train, valid, farm) = toy_setup();
        let (model, _) = train_nqf(&train, &valid, toy_config(false), &farm).unwrap();
        let v_valid = valid.wind_speed().unwrap();
        let g_valid = valid.generation().unwrap();

        // Quantile monotonicity at fixed conditioning, 1e-6 slack.
        let worst = worst_profile_inversion(&model, v_valid);
        assert!(worst < 1e-6, "worst quantile inversion {worst}");

        // The extreme levels bracket each other at fixed conditioning.
        let profile = quantile_profile(&model, &v_valid[0..48], &[0.01, 0.99], 0.3).unwrap();
        for row in &profile {
            assert!(row[1] >= row[0] - 1e-6);
        }

        // Trajectory-wise (each level feeding back its own prediction)
        // the orderings hold at almost every step; exact pointwise order
        // is not enforceable because the two trajectories condition on
        // different feedback.
        let mut ordered = 0usize;
        let mut total = 0usize;
        for start in (0..v_valid.len() - 48).step_by(48) {
            let slice = &v_valid[start..start + 48];
            let p0 = g_valid[start] / farm.capacity_mw;
            let lo = nqf_forward(&model, slice, &vec![0.01; 48], p0).unwrap();
            let hi = nqf_forward(&model, slice, &vec![0.99; 48], p0).unwrap();
            for t in 0..48 {
                total += 1;
                if hi[t] >= lo[t] - 1e-6 {
                    ordered += 1;
                }
            }
        }
        let fraction = ordered as f64 / total as f64;
        assert!(fraction > 0.97, "extreme trajectories ordered at {fraction:.4} of steps");

        // Calm wind drives the median path to (near) zero output.
        let calm = vec![0.0; 72];
        let median = median_path(&model, &calm).unwrap();
        let worst_calm = median.iter().cloned().fold(0.0, f64::max) / farm.capacity_mw;
        assert!(worst_calm < 0.05, "calm-wind median capacity factor {worst_calm}");

        // Two seeds generate distinct but distributionally similar series.
        let a = generate(&model, v_valid, 1).unwrap();
        let b = generate(&model, v_valid, 2).unwrap();
        assert_ne!(a, b);
        let cap = farm.capacity_mw;
        let sim = power_curve_similarity(
            &pair_series(v_valid, &a.iter().map(|x| x / cap).collect::<Vec<_>>()).unwrap(),
            &pair_series(v_valid, &b.iter().map(|x| x / cap).collect::<Vec<_>>()).unwrap(),
            DEFAULT_BINS,
            DEFAULT_BINS,
        )
        .unwrap();
        assert!(sim > 0.9, "self-similarity {sim}");
    }

    #[test]
    fn hard_monotone_head_never_inverts() {
        let (train, valid, farm) = toy_setup();
        let mut cfg = toy_config(true);
        cfg.epochs = 4;
        let (model, _) = train_nqf(&train, &valid, cfg, &farm).unwrap();
        let v_valid = valid.wind_speed().unwrap();
        // Machine-exact monotonicity, no slack needed.
        let worst = worst_profile_inversion(&model, v_valid);
        assert!(worst <= 0.0, "hard head inverted by {worst}");
    }
}
