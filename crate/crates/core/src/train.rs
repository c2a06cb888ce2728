//! Pruning objective, optimizer and training loop.
//!
//! Each minibatch minimizes `cross_entropy + λ·(Σ mask − c)²`, where the
//! sum runs over the mode's mask field of every prunable layer and `c` is
//! the surviving-entry budget. The latent tensors are updated with Adam;
//! σ follows a geometric schedule and the learning rate adapts to the
//! speed of change of the epoch-mean loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::gcn::{accuracy, predict, GcnModel};
use crate::mask::{BinaryMask, PruneMode, SigmaSchedule, DEFAULT_THRESHOLD};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "epoch,loss,ce,budget_residual,lr,sigma,achieved_rate,train_acc,test_acc";

/// Sparsity term added to the cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// `λ·(Σ mask − c)²`.
    Budget,
    /// `weight · Σ |W|` over the effective weights of prunable layers.
    L1 { weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetConfig {
    pub rate: f64,
    pub lambda: f64,
}

impl BudgetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!("rate must lie in [0, 1), got {}", self.rate)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn target(&self, prunable: usize) -> usize {
        ((1.0 - self.rate) * prunable as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub sigma0: f64,
    pub sigma_max: f64,
    pub mode: PruneMode,
    pub budget: BudgetConfig,
    pub regularizer: Regularizer,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 4,
            lr: 0.003,
            lr_factor: 0.99,
            lr_min: 1e-6,
            lr_max: 0.1,
            beta1: 0.9,
            beta2: 0.9,
            eps: 1e-8,
            sigma0: 1.0,
            sigma_max: 1000.0,
            mode: PruneMode::Ctf,
            budget: BudgetConfig {
                rate: 0.9,
                lambda: 1000.0,
            },
            regularizer: Regularizer::Budget,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr && self.lr <= self.lr_max) {
            return bad(format!(
                "need 0 < lr_min <= lr <= lr_max, got {} / {} / {}",
                self.lr_min, self.lr, self.lr_max
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if let Regularizer::L1 { weight } = self.regularizer {
            if !(weight >= 0.0 && weight.is_finite()) {
                return bad(format!("l1 weight must be >= 0, got {weight}"));
            }
        }
        self.budget.validate()?;
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<SigmaSchedule> {
        SigmaSchedule::new(self.sigma0, self.sigma_max, self.epochs.saturating_sub(1).max(1))
    }
}

/// `λ·(Σ masks − c)²` on the tape.
pub fn budget_loss(tape: &mut Tape, masks: &[Var], target: f64, lambda: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &m in masks {
        let s = tape.sum_all(m)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));
    let diff = tape.sub_scalar(total, target)?;
    let sq = tape.square(diff)?;
    tape.scale(sq, lambda)
}

/// `Σ |x|` over the given tensors.
pub fn l1_regularizer(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &x in xs {
        let a = tape.abs(x)?;
        let s = tape.sum_all(a)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    pub fn new(shapes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "Adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Contract(format!(
                    "Adam slot {i}: moment size {}, param {}, grad {}",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate driven by the speed of change of the loss: the rate
/// shrinks by `factor` when the speed increases and grows by `1/factor`
/// otherwise, clamped to `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrController {
    pub lr: f64,
    pub factor: f64,
    pub min: f64,
    pub max: f64,
    prev_loss: Option<f64>,
    prev_speed: Option<f64>,
}

impl LrController {
    pub fn new(lr: f64, factor: f64, min: f64, max: f64) -> Self {
        LrController {
            lr,
            factor,
            min,
            max,
            prev_loss: None,
            prev_speed: None,
        }
    }

    pub fn update(&mut self, loss: f64) -> f64 {
        if let Some(prev) = self.prev_loss {
            let speed = (loss - prev).abs();
            if let Some(prev_speed) = self.prev_speed {
                let next = if speed > prev_speed {
                    self.lr * self.factor
                } else {
                    self.lr / self.factor
                };
                if next.is_finite() {
                    self.lr = next.clamp(self.min, self.max);
                }
            }
            self.prev_speed = Some(speed);
        }
        self.prev_loss = Some(loss);
        self.lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    /// `(Σ mask − c)²` at the end of the epoch.
    pub budget_residual: f64,
    pub lr: f64,
    pub sigma: f64,
    pub achieved_rate: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            m.epoch, m.loss, m.ce, m.budget_residual, m.lr, m.sigma, m.achieved_rate, m.train_acc, m.test_acc
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GcnModel,
    pub history: Vec<EpochMetrics>,
    pub masks: [BinaryMask; 3],
    pub achieved_rate: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Largest ambiguous-band fraction over the masked layers.
    pub ambiguous_fraction: f64,
}

/// Accuracy of the deployed (binarized) network on `samples`.
pub fn evaluate(model: &GcnModel, samples: &Samples, threshold: f64) -> Result<f64> {
    let (w, _) = model.deployed_weights(threshold)?;
    let logits = model.dense_forward(&w, &samples.signals, false)?;
    Ok(accuracy(&predict(&logits), &samples.labels))
}

struct StepLoss {
    total: f64,
    ce: f64,
}

fn masked_fields(fwd: &crate::gcn::Forward) -> Vec<Var> {
    fwd.masks.iter().flatten().map(|m| m.composed).collect()
}

fn record_step(
    model: &mut GcnModel,
    adam: &mut Adam,
    batch: &Samples,
    cfg: &TrainConfig,
    target: f64,
    lr: f64,
) -> Result<StepLoss> {
    let mut tape = Tape::new();
    let fwd = model.forward_tape(&mut tape, &batch.signals)?;
    let ce = tape.cross_entropy(fwd.logits, &batch.labels)?;
    let total = match cfg.regularizer {
        Regularizer::Budget if cfg.mode.is_masked() && cfg.budget.lambda > 0.0 => {
            let masks = masked_fields(&fwd);
            let b = budget_loss(&mut tape, &masks, target, cfg.budget.lambda)?;
            tape.add(ce, b)?
        }
        Regularizer::L1 { weight } if weight > 0.0 => {
            let eff: Vec<Var> = (0..3).filter(|&l| model.config.prunable[l]).map(|l| fwd.params[l]).collect();
            let r = l1_regularizer(&mut tape, &eff)?;
            let r = tape.scale(r, weight)?;
            tape.add(ce, r)?
        }
        _ => ce,
    };
    tape.backward(total)?;
    let grads: Vec<Vec<f64>> = fwd
        .params
        .iter()
        .map(|&p| tape.grad(p).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(p).len()]))
        .collect();
    let loss = StepLoss {
        total: tape.scalar(total),
        ce: tape.scalar(ce),
    };
    let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let mut params: Vec<&mut Tensor> = model.layers.iter_mut().map(|l| &mut l.latent).collect();
    adam.step(&mut params, &grad_refs, lr)?;
    Ok(loss)
}

/// Gradient norms of the cross-entropy and budget terms, taken separately
/// at the current parameters.
pub fn term_grad_norms(model: &GcnModel, batch: &Samples, target: f64, lambda: f64) -> Result<(f64, f64)> {
    let norm = |budget: bool| -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = model.forward_tape(&mut tape, &batch.signals)?;
        let loss = if budget {
            let masks = masked_fields(&fwd);
            budget_loss(&mut tape, &masks, target, lambda)?
        } else {
            tape.cross_entropy(fwd.logits, &batch.labels)?
        };
        tape.backward(loss)?;
        Ok(fwd
            .params
            .iter()
            .filter_map(|&p| tape.grad(p))
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt())
    };
    Ok((norm(false)?, norm(true)?))
}

/// Soft mask sum over prunable layers under the model's mode.
pub fn mask_sum(model: &GcnModel) -> Result<f64> {
    let masks = model.composed_masks()?;
    Ok((0..3).filter(|&l| model.is_masked(l)).map(|l| masks[l].sum()).sum())
}

/// Runs the full training schedule. `model.mode` must match `cfg.mode`.
pub fn train(mut model: GcnModel, train_set: &Samples, test_set: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.mode != cfg.mode {
        return Err(Error::Config(format!(
            "model mode {} differs from training mode {}",
            model.mode, cfg.mode
        )));
    }
    if train_set.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let schedule = cfg.schedule()?;
    let target = cfg.budget.target(model.count_params().prunable) as f64;
    let sizes: Vec<usize> = model.layers.iter().map(|l| l.latent.len()).collect();
    let mut adam = Adam::new(&sizes, cfg.beta1, cfg.beta2, cfg.eps);
    let mut lr = LrController::new(cfg.lr, cfg.lr_factor, cfg.lr_min, cfg.lr_max);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let sigma = schedule.at(epoch.min(schedule.total_epochs))?;
        model.anneal_to(sigma)?;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut ce_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.select(chunk)?;
            let step = record_step(&mut model, &mut adam, &batch, cfg, target, lr.lr).map_err(|e| match e {
                Error::NonFinite(op) => Error::Divergence {
                    epoch,
                    msg: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            loss_sum += step.total * chunk.len() as f64;
            ce_sum += step.ce * chunk.len() as f64;
        }
        let n = train_set.len() as f64;
        let (loss, ce) = (loss_sum / n, ce_sum / n);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                msg: format!("epoch loss {loss}"),
            });
        }
        model.epoch = epoch + 1;
        let used_lr = lr.lr;
        lr.update(loss);

        let (w, bins) = model.deployed_weights(cfg.threshold)?;
        let acc = |s: &Samples| -> Result<f64> {
            if s.is_empty() {
                return Ok(0.0);
            }
            let logits = model.dense_forward(&w, &s.signals, false)?;
            Ok(accuracy(&predict(&logits), &s.labels))
        };
        let residual = if model.mode.is_masked() {
            (mask_sum(&model)? - target).powi(2)
        } else {
            0.0
        };
        history.push(EpochMetrics {
            epoch,
            loss,
            ce,
            budget_residual: residual,
            lr: used_lr,
            sigma,
            achieved_rate: model.achieved_rate(&bins),
            train_acc: acc(train_set)?,
            test_acc: acc(test_set)?,
        });
    }

    let masks = model.binary_masks(cfg.threshold)?;
    let last = history.last().expect("at least one epoch");
    let ambiguous_fraction = (0..3)
        .filter(|&l| model.is_masked(l))
        .map(|l| masks[l].ambiguous_fraction)
        .fold(0.0, f64::max);
    Ok(TrainOutcome {
        achieved_rate: last.achieved_rate,
        train_acc: last.train_acc,
        test_acc: last.test_acc,
        ambiguous_fraction,
        masks,
        history,
        model,
    })
}
