use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainingMeta};
use super::config::TrainingConfig;
use super::model::{Mode, TiramisuModel};
use super::ops::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `(1/N) Σ (y_i - ŷ_i)²`.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("loss of an empty window".into()));
    }
    let ss: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p.to_f64().unwrap() - t.to_f64().unwrap()).powi(2))
        .sum();
    Ok(ss / pred.len() as f64)
}

/// Training objective: MSE plus `l2_factor · Σ‖kernels‖²`.
pub fn total_loss<T: Scalar>(model: &TiramisuModel<T>, pred: &[T], target: &[T]) -> Result<f64> {
    Ok(mse_loss(pred, target)? + model.config.l2_factor * model.store.kernel_sq_norm())
}

/// Gradients of [`total_loss`] for a batch; returns `(mse, grads, trace)`.
pub fn loss_and_grads<T: Scalar>(
    model: &TiramisuModel<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Vec<T>>, super::model::Trace<T>)> {
    let (out, trace) = model.forward_batch(input, Mode::Train { dropout_rng })?;
    let trace = trace.expect("training mode records a trace");
    let mse = mse_loss(&out.data, &target.data)?;
    let scale = T::c(2.0 / out.data.len() as f64);
    let dout = Tensor::from_vec(
        out.data.iter().zip(&target.data).map(|(&p, &t)| scale * (p - t)).collect(),
        out.batch,
        out.channels,
        out.len,
    );
    let mut grads = model.backward(&trace, &dout);
    let l2 = T::c(2.0 * model.config.l2_factor);
    for ((g, v), kind) in grads.iter_mut().zip(&model.store.values).zip(&model.store.kinds) {
        if *kind == super::model::ParamKind::Kernel {
            for (gi, &vi) in g.iter_mut().zip(v) {
                *gi += l2 * vi;
            }
        }
    }
    Ok((mse, grads, trace))
}

/// Adam with bias correction folded into the step size.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &TiramisuModel<T>, cfg: &TrainingConfig) -> Adam<T> {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: model.store.zeros_like(),
            v: model.store.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut TiramisuModel<T>, grads: &[Vec<T>]) {
        self.t += 1;
        let lr_t = self.lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        let (b1, b2, lr_t, eps) = (T::c(self.beta1), T::c(self.beta2), T::c(lr_t), T::c(self.eps));
        let one = T::one();
        for (i, g) in grads.iter().enumerate() {
            if !model.store.kinds[i].trainable() {
                continue;
            }
            let p = &mut model.store.values[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                p[j] -= lr_t * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

/// One `(noisy, clean)` window pair, both peak-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// `None` when wall-clock timing is suppressed for reproducible logs.
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Written after every epoch.
    pub checkpoint_path: Option<PathBuf>,
    pub record_wall_time: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

/// Loss CSV: `epoch,train_loss,val_loss,wall_seconds`.
pub fn loss_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,wall_seconds\n");
    for e in history {
        let val = e.val_loss.map_or_else(String::new, |v| format!("{v:.9}"));
        let wall = e.wall_seconds.map_or_else(String::new, |v| format!("{v:.3}"));
        out.push_str(&format!("{},{:.9},{val},{wall}\n", e.epoch, e.train_loss));
    }
    out
}

fn check_pairs<T: Scalar>(pairs: &[TrainingPair<T>], window_len: usize, what: &str) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        if p.input.len() != window_len || p.target.len() != window_len {
            return Err(Error::Shape(format!(
                "{what} pair {i} has lengths ({}, {}), window is {window_len}",
                p.input.len(),
                p.target.len()
            )));
        }
        if p.input.iter().chain(&p.target).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{what} pair {i} contains non-finite values")));
        }
    }
    Ok(())
}

fn stack<T: Scalar>(pairs: &[&TrainingPair<T>], len: usize) -> (Tensor<T>, Tensor<T>) {
    let x = pairs.iter().flat_map(|p| p.input.iter().copied()).collect();
    let y = pairs.iter().flat_map(|p| p.target.iter().copied()).collect();
    (
        Tensor::from_vec(x, pairs.len(), 1, len),
        Tensor::from_vec(y, pairs.len(), 1, len),
    )
}

/// Mean inference-mode MSE over `pairs`.
pub fn evaluate_loss<T: Scalar>(model: &TiramisuModel<T>, pairs: &[TrainingPair<T>], batch_size: usize) -> Result<f64> {
    let len = model.config.window_len;
    let mut total = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainingPair<T>> = chunk.iter().collect();
        let (x, y) = stack(&refs, len);
        let (out, _) = model.forward_batch(&x, Mode::Inference)?;
        total += mse_loss(&out.data, &y.data)? * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

fn diagnostics<T: Scalar>(model: &TiramisuModel<T>) -> String {
    let norms: Vec<String> = model
        .store
        .names
        .iter()
        .zip(&model.store.values)
        .map(|(n, v)| {
            let s: f64 = v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2)).sum();
            format!("{n}={:.4e}", s.sqrt())
        })
        .collect();
    format!("parameter norms: {}", norms.join(", "))
}

/// Minibatch Adam on the total objective. Batches are reshuffled every epoch
/// from a seeded generator; dropout masks come from a second seeded stream.
pub fn train(
    model: &mut TiramisuModel<f32>,
    pairs: &[TrainingPair<f32>],
    validation: &[TrainingPair<f32>],
    cfg: &TrainingConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    let len = model.config.window_len;
    check_pairs(pairs, len, "training")?;
    check_pairs(validation, len, "validation")?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6472_6f70_6f75_7421);
    let mut adam = Adam::new(model, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let started = Instant::now();
    let mut checkpoint = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&TrainingPair<f32>> = idx.iter().map(|&i| &pairs[i]).collect();
            let (x, y) = stack(&refs, len);
            let (mse, grads, trace) = loss_and_grads(model, &x, &y, Some(&mut dropout_rng))?;
            let finite = mse.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFinite {
                    epoch,
                    batch,
                    diagnostics: format!("batch mse {mse}; {}", diagnostics(model)),
                });
            }
            adam.step(model, &grads);
            model.update_running_stats(&trace);
            sum += mse * idx.len() as f64;
        }
        let train_loss = sum / pairs.len() as f64;
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, validation, cfg.batch_size)?)
        };
        let wall = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train {train_loss:.6}{} ({wall:.1}s)",
            val_loss.map_or_else(String::new, |v| format!(", val {v:.6}"))
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            wall_seconds: opts.record_wall_time.then_some(wall),
        });
        let ck = Checkpoint::from_model(
            model,
            TrainingMeta {
                epoch: epoch + 1,
                seed: cfg.seed,
                loss_history: history.iter().map(|e| e.train_loss).collect(),
                training: cfg.clone(),
            },
        );
        if let Some(path) = &opts.checkpoint_path {
            ck.save(path)?;
        }
        checkpoint = Some(ck);
    }
    Ok(TrainOutcome {
        history,
        checkpoint: checkpoint.expect("epochs >= 1"),
    })
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compare analytic gradients of [`total_loss`] (training-mode BN, no
/// dropout) with central differences `(L(p+h) - L(p-h)) / 2h` for every
/// trainable scalar. Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    model: &mut TiramisuModel<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let (_, grads, _) = loss_and_grads(model, input, target, None)?;
    let loss = |m: &TiramisuModel<f64>| -> Result<f64> {
        let (out, _) = m.forward_batch(input, Mode::Train { dropout_rng: None })?;
        total_loss(m, &out.data, &target.data)
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for i in 0..model.store.len() {
        if !model.store.kinds[i].trainable() {
            continue;
        }
        for j in 0..model.store.values[i].len() {
            let orig = model.store.values[i][j];
            model.store.values[i][j] = orig + h;
            let up = loss(model)?;
            model.store.values[i][j] = orig - h;
            let down = loss(model)?;
            model.store.values[i][j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[i][j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{j}] (analytic {analytic:e}, numeric {numeric:e})", model.store.names[i]);
            }
        }
    }
    Ok(report)
}
