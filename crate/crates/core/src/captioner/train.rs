//! Teacher-forced training with Adam.

use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix, ParamStore, SplitMix64, Tape, Var};

use super::model::CaptionModel;
use super::prepare::{align_targets, PreparedScene};
use super::ModelConfig;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction; one moment pair per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, _, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Parameters without a gradient are treated as having zero gradient.
    pub fn update(&mut self, store: &mut ParamStore, grads: &crate::numerics::Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// One caption of one scene, aligned to output indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub scene: usize,
    pub targets: Vec<usize>,
}

/// Every caption of every scene, in order.
pub fn build_examples(scenes: &[PreparedScene], model: &CaptionModel) -> Vec<Example> {
    let cfg = &model.config;
    scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.captions.iter().map(move |c| Example {
                scene: i,
                targets: align_targets(c, &model.vocab, &s.ocr_surfaces, cfg.max_len, cfg.prefer_copy),
            })
        })
        .collect()
}

/// Token-weighted mean cross-entropy over a batch, recorded on `tape`.
pub fn batch_loss(
    model: &CaptionModel,
    tape: &mut Tape,
    scenes: &[PreparedScene],
    batch: &[&Example],
) -> Result<(Var, usize)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty training batch".into()));
    }
    let tokens: usize = batch.iter().map(|e| e.targets.len()).sum();
    let mut total: Option<Var> = None;
    for ex in batch {
        let scene = scenes.get(ex.scene).ok_or(Error::Index {
            what: "scene",
            index: ex.scene,
            len: scenes.len(),
        })?;
        let ce = model.caption_loss(tape, scene, &ex.targets)?;
        let weighted = tape.scale(ce, ex.targets.len() as f64 / tokens as f64);
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok((total.expect("non-empty batch"), tokens))
}

/// Fraction of target tokens that are the argmax under teacher forcing.
pub fn teacher_forced_accuracy(model: &CaptionModel, scenes: &[PreparedScene], examples: &[Example]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let mut tape = Tape::new();
        let scores = model.teacher_forced_scores(&mut tape, &scenes[ex.scene], &ex.targets)?;
        let scores = tape.value(scores);
        for (row, &t) in scores.iter_rows().zip(&ex.targets) {
            hit += usize::from(argmax(row) == t);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Argument("no target tokens".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Learning rate at `step` (0-based) of a `total_steps` run.
pub fn learning_rate(config: &ModelConfig, step: usize, total_steps: usize) -> f64 {
    let decay_at = config.lr_decay_step.unwrap_or(total_steps * 7 / 9);
    if step >= decay_at {
        config.lr * config.lr_decay
    } else {
        config.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub tokens: usize,
}

/// Full-batch or mini-batch training over a fixed set of examples.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub examples: Vec<Example>,
    pub total_steps: usize,
    /// `None` trains on every example each step.
    pub batch_size: Option<usize>,
    adam: Adam,
    rng: SplitMix64,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    pub fn new(model: &CaptionModel, scenes: &[PreparedScene], total_steps: usize) -> Result<Self> {
        let examples = build_examples(scenes, model);
        if examples.is_empty() {
            return Err(Error::Argument("no captions to train on".into()));
        }
        let order = (0..examples.len()).collect();
        Ok(Self {
            examples,
            total_steps,
            batch_size: model.config.batch_size,
            adam: Adam::new(&model.store),
            rng: SplitMix64::new(model.config.seed ^ 0x5eed_0fba_7c40),
            order,
            cursor: 0,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.examples.len();
        let size = self.batch_size.unwrap_or(n).clamp(1, n);
        if size == n {
            return (0..n).collect();
        }
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == 0 {
                self.rng.shuffle(&mut self.order);
            }
            out.push(self.order[self.cursor]);
            self.cursor = (self.cursor + 1) % n;
        }
        out
    }

    /// Computes the batch loss, back-propagates and applies one update.
    /// The reported loss is the value before the update.
    pub fn step(&mut self, model: &mut CaptionModel, scenes: &[PreparedScene]) -> Result<StepReport> {
        let picked = self.next_batch();
        let batch: Vec<&Example> = picked.iter().map(|&i| &self.examples[i]).collect();
        let mut tape = Tape::new();
        let (loss, tokens) = batch_loss(model, &mut tape, scenes, &batch)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.step)));
        }
        let grads = tape.backward(loss)?;
        let lr = learning_rate(&model.config, self.step, self.total_steps);
        self.adam.update(&mut model.store, &grads, lr);
        let report = StepReport {
            step: self.step,
            loss: value,
            lr,
            tokens,
        };
        self.step += 1;
        Ok(report)
    }
}
