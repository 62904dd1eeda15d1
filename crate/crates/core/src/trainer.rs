//! Mini-batch Adam training with seeded shuffling and per-epoch metrics.

use crate::datasets::{one_hot, LabeledSet};
use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use crate::ops::loss::softmax_xent;
use crate::parallel;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Single-threaded kernels and zeroed wall-clock fields, so the whole
    /// metric trace is a pure function of the seed.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 500,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-7,
            seed: 42,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::config(format!(
                "Adam betas must lie in (0,1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// One epoch's worth of metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

/// Per-epoch records plus the final summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<EpochRow>,
    pub best_test_acc: f64,
    pub total_train_seconds: f64,
    pub param_total: u64,
}

impl RunMetrics {
    /// CSV with header epoch,train_loss,train_acc,test_acc,wall_seconds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc,wall_seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.test_acc, r.wall_seconds
            ));
        }
        out
    }
}

/// Adam optimizer state: first/second moments per registry slot.
pub struct Adam<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Network<T>) -> Self {
        let shapes: Vec<usize> = net.param_slots().iter().map(|s| s.len).collect();
        Adam {
            m: shapes.iter().map(|&l| vec![T::ZERO; l]).collect(),
            v: shapes.iter().map(|&l| vec![T::ZERO; l]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: m ← β1·m + (1−β1)·g; v ← β2·v + (1−β2)·g²; parameters move
    /// by −lr·m̂/(√v̂ + ε) with bias-corrected moments.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, cfg: &TrainConfig) -> Result<()> {
        let slots = net.param_slots();
        if grads.slots.len() != slots.len()
            || grads.slots.iter().zip(&slots).any(|(g, s)| g.len() != s.len)
        {
            return Err(Error::shape(
                "adam: gradient registry does not match parameter registry".to_string(),
            ));
        }
        for (g, meta) in grads.slots.iter().zip(&slots) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: meta.label() });
            }
        }

        self.t += 1;
        let t = self.t;
        let lr = T::from_f64(cfg.learning_rate);
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let eps = T::from_f64(cfg.adam_epsilon);
        let bc1 = T::ONE - b1.powi(t as i32);
        let bc2 = T::ONE - b2.powi(t as i32);

        let m = &mut self.m;
        let v = &mut self.v;
        net.for_each_param_mut(|slot, params| {
            let g = &grads.slots[slot];
            let ms = &mut m[slot];
            let vs = &mut v[slot];
            for i in 0..params.len() {
                ms[i] = b1 * ms[i] + (T::ONE - b1) * g[i];
                vs[i] = b2 * vs[i] + (T::ONE - b2) * g[i] * g[i];
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

fn check_dataset<T: Scalar>(net: &Network<T>, set: &LabeledSet, role: &str) -> Result<()> {
    if set.len() == 0 {
        return Err(Error::config(format!("{role} dataset is empty")));
    }
    let (h, w, c) = net.plan().input_shape();
    let dims = set.images.dims();
    if (dims[1], dims[2], dims[3]) != (h, w, c) {
        return Err(Error::config(format!(
            "{role} dataset images are {}x{}x{}, model expects {h}x{w}x{c}",
            dims[1], dims[2], dims[3]
        )));
    }
    let classes = net.plan().num_classes();
    if let Some(&bad) = set.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::config(format!(
            "{role} dataset has label {bad} but the model has {classes} classes"
        )));
    }
    Ok(())
}

/// Index of the largest logit; ties go to the lowest class index.
fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Infer-mode loss and accuracy over a whole set, in fixed-size batches.
pub fn evaluate<T: Scalar>(net: &Network<T>, set: &LabeledSet) -> Result<(f64, f64)> {
    check_dataset(net, set, "eval")?;
    let classes = net.plan().num_classes();
    let n = set.len();
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let eval_batch = 256;
    let mut start = 0;
    while start < n {
        let end = (start + eval_batch).min(n);
        let (batch, labels) = set.gather::<T>(&(start..end).collect::<Vec<_>>());
        let logits = net.forward_infer(&batch)?;
        let targets = one_hot::<T>(&labels, classes)?;
        let out = softmax_xent(&logits, &targets)?;
        loss_sum += out.loss.to_f64() * (end - start) as f64;
        for (row, &label) in out.probs.data().chunks_exact(classes).zip(&labels) {
            if argmax_row(row) == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

/// Runs the full training protocol: per epoch, a seeded shuffle, mini-batch
/// forward/loss/backward/Adam steps (last partial batch kept), then a full
/// infer-mode pass over the test set.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &LabeledSet,
    test_set: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<RunMetrics> {
    cfg.validate()?;
    check_dataset(net, train_set, "train")?;
    check_dataset(net, test_set, "test")?;
    parallel::set_deterministic(cfg.deterministic);

    let classes = net.plan().num_classes();
    let n = train_set.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net);
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut total_train = 0.0f64;

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let timer = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = train_set.gather::<T>(chunk);
            let targets = one_hot::<T>(&labels, classes)?;
            let cache = net.forward_train(&batch)?;
            net.commit_batchnorm(&cache)?;
            let out = softmax_xent(cache.logits(), &targets)?;
            loss_sum += out.loss.to_f64() * chunk.len() as f64;
            for (row, &label) in out.probs.data().chunks_exact(classes).zip(&labels) {
                if argmax_row(row) == label as usize {
                    correct += 1;
                }
            }
            let grads = net.backward(&cache, &out.grad_logits)?;
            adam.step(net, &grads, cfg)?;
        }
        let wall = timer.elapsed().as_secs_f64();
        total_train += wall;

        let (_, test_acc) = evaluate(net, test_set)?;
        rows.push(EpochRow {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_acc,
            wall_seconds: if cfg.deterministic { 0.0 } else { wall },
        });
    }

    let best = rows.iter().map(|r| r.test_acc).fold(0.0f64, f64::max);
    Ok(RunMetrics {
        rows,
        best_test_acc: best,
        total_train_seconds: if cfg.deterministic { 0.0 } else { total_train },
        param_total: net.scalar_param_count(),
    })
}
