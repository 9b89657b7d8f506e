//! Masked pre-training: loss, learning-rate schedule, adaptive-moment
//! updates, and the iteration loop.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{Dataset, Instance};
use crate::mask::{sample_training_mask, MaskMatrix, MaskPolicy};
use crate::model::{backward, forward_cached, ModelConfig, ParameterStore};
use crate::tensor::Scalar;

/// Which cells the reconstruction loss is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossScope {
    MaskedOnly,
    AllCells,
}

impl std::str::FromStr for LossScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "masked_only" => Ok(LossScope::MaskedOnly),
            "all_cells" => Ok(LossScope::AllCells),
            other => Err(format!("unknown loss scope `{other}`")),
        }
    }
}

impl std::fmt::Display for LossScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossScope::MaskedOnly => "masked_only",
            LossScope::AllCells => "all_cells",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iters: u64,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub mask_policy: MaskPolicy,
    pub loss_scope: LossScope,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Rows of the loss log cover this many iterations each.
    pub log_every: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            total_iters: 50_000,
            base_lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            mask_policy: MaskPolicy::default(),
            loss_scope: LossScope::MaskedOnly,
            seed: 0,
            checkpoint_every: 5_000,
            log_every: 100,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Settings sized for a single workstation CPU.
    pub fn desk() -> Self {
        Self {
            batch_size: 32,
            total_iters: 2_000,
            checkpoint_every: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("train.base_lr", "must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("train.checkpoint_every", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("train.log_every", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("train.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta2", "must be in [0, 1)"));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::config("train.adam_eps", "must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config("train.clip_norm", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Cosine decay from `base_lr` at step 0 to 0 at `total_iters`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_iters {
        return Err(Error::domain(format!(
            "step {step} is past the schedule end {}",
            cfg.total_iters
        )));
    }
    if cfg.total_iters == 0 {
        return Ok(cfg.base_lr);
    }
    let progress = step as f64 / cfg.total_iters as f64;
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Mean absolute error over the selected cells.
pub fn masked_mae_loss(pred: &[f64], target: &[f64], selected: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != selected.len() {
        return Err(Error::domain("loss inputs have different lengths"));
    }
    let n = selected.iter().filter(|&&s| s).count();
    if n == 0 {
        return Err(Error::domain("loss selects no cells"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .zip(selected)
        .filter(|(_, &s)| s)
        .map(|((p, t), _)| (p - t).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Loss value and `∂loss/∂pred`.
pub fn masked_mae_with_grad<T: Scalar>(
    pred: &[T],
    target: &[f64],
    selected: &[bool],
) -> Result<(f64, Vec<T>)> {
    let as_f64: Vec<f64> = pred.iter().map(|v| v.f64()).collect();
    let loss = masked_mae_loss(&as_f64, target, selected)?;
    let n = selected.iter().filter(|&&s| s).count();
    let w = T::of(1.0 / n as f64);
    let grad = as_f64
        .iter()
        .zip(target)
        .zip(selected)
        .map(|((p, t), &s)| {
            if !s || p == t {
                T::zero()
            } else if p > t {
                w
            } else {
                -w
            }
        })
        .collect();
    Ok((loss, grad))
}

pub fn loss_selection(mask: &MaskMatrix, scope: LossScope) -> Vec<bool> {
    match scope {
        LossScope::MaskedOnly => mask.bits().to_vec(),
        LossScope::AllCells => vec![true; mask.bits().len()],
    }
}

/// Loss and parameter gradient for one instance, or `None` when the loss
/// selects no cells.
pub fn instance_gradient<T: Scalar>(
    params: &ParameterStore<T>,
    instance: &Instance,
    mask: &MaskMatrix,
    scope: LossScope,
    dropout_seed: Option<u64>,
) -> Result<Option<(f64, Vec<T>)>> {
    let selection = loss_selection(mask, scope);
    if !selection.iter().any(|&s| s) {
        return Ok(None);
    }
    let (pred, cache) = forward_cached(instance, mask, params, dropout_seed)?;
    let (loss, dpred) = masked_mae_with_grad(&pred, &instance.target, &selection)?;
    let mut grads = vec![T::zero(); params.len()];
    backward(&cache, &dpred, params, &mut grads);
    Ok(Some((loss, grads)))
}

/// One bias-corrected adaptive-moment update. `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powf(t as f64)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powf(t as f64)));
    let (lr, eps) = (T::of(lr), T::of(cfg.adam_eps));
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let mhat = m[i] * c1;
        let vhat = v[i] * c2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Optimizer and sampling state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub iteration: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub rng: ChaCha8Rng,
    /// Loss sum and count of the reporting interval in progress.
    pub interval_loss_sum: f64,
    pub interval_count: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ cfg.mask_policy.seed;
        Self {
            iteration: 0,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            rng: ChaCha8Rng::seed_from_u64(seed),
            interval_loss_sum: 0.0,
            interval_count: 0,
        }
    }
}

/// Samples masks, computes the batch-mean masked loss and its gradient, and
/// applies one optimizer update with the scheduled learning rate.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    params: &mut ParameterStore<T>,
    batch: &[Instance],
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let (h, c) = (params.config().h, params.config().c);
    let mut jobs = Vec::with_capacity(batch.len());
    for inst in batch {
        let mask = sample_training_mask(&cfg.mask_policy, h, c, &mut state.rng)?;
        let dropout_seed = state.rng.next_u64();
        jobs.push((inst, mask, dropout_seed));
    }
    let frozen: &ParameterStore<T> = params;
    let results: Vec<Option<(f64, Vec<T>)>> = jobs
        .par_iter()
        .map(|(inst, mask, seed)| {
            instance_gradient(frozen, inst, mask, cfg.loss_scope, Some(*seed))
        })
        .collect::<Result<_>>()?;

    let mut grads = vec![T::zero(); params.len()];
    let mut loss = 0.0;
    let mut used = 0usize;
    for (l, g) in results.into_iter().flatten() {
        loss += l;
        used += 1;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    if used == 0 {
        return Err(Error::domain(
            "no instance in the batch has a non-empty loss selection",
        ));
    }
    loss /= used as f64;
    let inv = T::of(1.0 / used as f64);
    let mut sq = 0.0f64;
    for g in grads.iter_mut() {
        *g *= inv;
        sq += g.f64() * g.f64();
    }
    if !loss.is_finite() || !sq.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient at iteration {}",
            state.iteration
        )));
    }
    if let Some(max) = cfg.clip_norm {
        let norm = sq.sqrt();
        if norm > max {
            let s = T::of(max / norm);
            grads.iter_mut().for_each(|g| *g *= s);
        }
    }
    let lr = lr_at(state.iteration.min(cfg.total_iters), cfg)?;
    let t = state.iteration + 1;
    adam_update(
        params.data_mut(),
        &grads,
        &mut state.m,
        &mut state.v,
        t,
        lr,
        cfg,
    );
    state.iteration = t;
    state.interval_loss_sum += loss;
    state.interval_count += 1;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    /// Iteration count at the end of the interval.
    pub iteration: u64,
    /// Mean loss over the interval.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub const HEADER: &'static str = "iteration,loss,lr";

    pub fn to_table(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.iteration, r.loss, r.lr);
        }
        out
    }

    pub fn first(&self) -> Option<&LossRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&LossRow> {
        self.rows.last()
    }
}

/// Final parameters of a run with its logs.
pub struct PretrainOutput<T> {
    pub params: ParameterStore<T>,
    pub state: TrainState<T>,
    pub log: LossLog,
    /// Batch loss of every iteration run by this trainer.
    pub losses: Vec<f64>,
}

/// Iteration driver over a dataset, sampling batches uniformly with
/// replacement.
pub struct Trainer<'a, T, D: ?Sized> {
    data: &'a D,
    cfg: TrainConfig,
    params: ParameterStore<T>,
    state: TrainState<T>,
    log: LossLog,
    losses: Vec<f64>,
}

impl<'a, T: Scalar, D: Dataset + ?Sized> Trainer<'a, T, D> {
    pub fn new(data: &'a D, cfg: TrainConfig, model: &ModelConfig) -> Result<Self> {
        let params = ParameterStore::init(model, cfg.seed)?;
        let state = TrainState::new(params.len(), &cfg);
        Self::resume(data, cfg, params, state)
    }

    pub fn resume(
        data: &'a D,
        cfg: TrainConfig,
        params: ParameterStore<T>,
        state: TrainState<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.mask_policy
            .validate(params.config().h, params.config().c)?;
        if state.m.len() != params.len() || state.v.len() != params.len() {
            return Err(Error::domain(
                "optimizer moments do not match the parameters",
            ));
        }
        if data.is_empty() && state.iteration < cfg.total_iters {
            return Err(Error::domain("training dataset is empty"));
        }
        Ok(Self {
            data,
            cfg,
            params,
            state,
            log: LossLog::default(),
            losses: Vec::new(),
        })
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn log(&self) -> &LossLog {
        &self.log
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.cfg.total_iters
    }

    /// Runs one iteration and returns the newly completed log row, if any.
    pub fn step(&mut self) -> Result<Option<LossRow>> {
        let n = self.data.len();
        let picks: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| self.state.rng.random_range(0..n))
            .collect();
        let batch: Vec<Instance> = picks
            .par_iter()
            .map(|&i| self.data.instance(i))
            .collect::<Result<_>>()?;
        let loss = train_step(&mut self.state, &mut self.params, &batch, &self.cfg)?;
        self.losses.push(loss);
        let it = self.state.iteration;
        if it.is_multiple_of(self.cfg.log_every) || it == self.cfg.total_iters {
            let row = LossRow {
                iteration: it,
                loss: self.state.interval_loss_sum / self.state.interval_count as f64,
                lr: lr_at(it.min(self.cfg.total_iters), &self.cfg)?,
            };
            self.state.interval_loss_sum = 0.0;
            self.state.interval_count = 0;
            self.log.rows.push(row);
            return Ok(Some(row));
        }
        Ok(None)
    }

    /// Runs up to `until` (capped at `total_iters`), invoking `on_checkpoint`
    /// every `checkpoint_every` iterations and once at the end of training.
    pub fn run_until<F>(&mut self, until: u64, mut on_checkpoint: F) -> Result<()>
    where
        F: FnMut(&ParameterStore<T>, &TrainState<T>) -> Result<()>,
    {
        let until = until.min(self.cfg.total_iters);
        while self.state.iteration < until {
            self.step()?;
            let it = self.state.iteration;
            if it.is_multiple_of(self.cfg.checkpoint_every) || it == self.cfg.total_iters {
                on_checkpoint(&self.params, &self.state)?;
            }
        }
        Ok(())
    }

    pub fn run<F>(&mut self, on_checkpoint: F) -> Result<()>
    where
        F: FnMut(&ParameterStore<T>, &TrainState<T>) -> Result<()>,
    {
        self.run_until(self.cfg.total_iters, on_checkpoint)
    }

    pub fn finish(self) -> PretrainOutput<T> {
        PretrainOutput {
            params: self.params,
            state: self.state,
            log: self.log,
            losses: self.losses,
        }
    }
}

/// Full pre-training run from a fresh seeded initialization.
pub fn pretrain<T: Scalar, D: Dataset + ?Sized>(
    dataset: &D,
    cfg: &TrainConfig,
    model: &ModelConfig,
) -> Result<PretrainOutput<T>> {
    let mut trainer = Trainer::new(dataset, cfg.clone(), model)?;
    trainer.run(|_, _| Ok(()))?;
    Ok(trainer.finish())
}
