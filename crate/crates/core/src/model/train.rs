use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exec::{logits, loss_and_gradients, Gradients};
use super::params::{LayerParams, NetParams};
use super::spec::NetSpec;
use crate::error::{Error, Result};
use crate::ops::sgd_update;
use crate::tensor::Tensor;

/// Images with class labels in `0..num_classes`.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Applies `f` to every image, keeping labels.
    pub fn map_images(&self, f: impl Fn(&Tensor) -> Result<Tensor> + Sync) -> Result<Dataset> {
        let images = self.images.par_iter().map(&f).collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            images,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }
}

/// Training and held-out evaluation split of one task.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f32,
    pub momentum: f32,
    pub batch: usize,
    pub iterations: usize,
    /// Evaluate on the test split every this many iterations (0 disables).
    pub eval_every: usize,
    pub seed: u64,
    /// Evaluate and reduce batch gradients across threads. Summation order
    /// may then differ between runs.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over the iterations of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` at the first iteration towards zero.
    Cosine,
}

impl Hyper {
    /// Learning rate at 1-based iteration `it`.
    pub fn lr_at(&self, it: usize) -> f32 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = (it - 1) as f64 / self.iterations.max(1) as f64;
                (self.lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
            }
        }
    }
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 0.01,
            momentum: 0.9,
            batch: 16,
            iterations: 300,
            eval_every: 25,
            seed: 0,
            parallel: false,
            schedule: LrSchedule::Constant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean batch loss at each iteration.
    pub losses: Vec<f32>,
    /// Test accuracy at evaluation points, by increasing iteration.
    pub evals: Vec<EvalPoint>,
}

pub fn predict(spec: &NetSpec, params: &NetParams, input: &Tensor) -> Result<usize> {
    let out = logits(spec, params, input)?;
    let mut best = 0;
    for (i, &v) in out.data().iter().enumerate() {
        if v > out.data()[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Fraction of correctly classified examples.
pub fn evaluate(spec: &NetSpec, params: &NetParams, data: &Dataset, parallel: bool) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty set".into()));
    }
    let hit = |(x, &y): (&Tensor, &usize)| predict(spec, params, x).map(|p| (p == y) as usize);
    let correct: usize = if parallel {
        data.images
            .par_iter()
            .zip(data.labels.par_iter())
            .map(hit)
            .sum::<Result<usize>>()?
    } else {
        data.images
            .iter()
            .zip(&data.labels)
            .map(hit)
            .sum::<Result<usize>>()?
    };
    Ok(correct as f64 / data.len() as f64)
}

/// Position of the first layer updated by training when conv layers
/// `1..=frozen` are fixed.
pub fn first_trainable_layer(spec: &NetSpec, frozen: usize) -> Result<usize> {
    if frozen > spec.conv_count() {
        return Err(Error::InvalidArgument(format!(
            "cannot freeze {frozen} conv layers of {}",
            spec.conv_count()
        )));
    }
    Ok(if frozen == 0 {
        0
    } else {
        spec.conv_position(frozen)? + 1
    })
}

struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        let mut b = BatchOrder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.cursor + size > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        b
    }
}

/// Minibatch momentum SGD on softmax cross-entropy. Parameters of conv
/// layers `1..=frozen_prefix_depth`, and every layer before them, are never
/// touched.
pub fn train(
    spec: &NetSpec,
    params: &NetParams,
    frozen_prefix_depth: usize,
    data: &TaskData,
    hyper: &Hyper,
) -> Result<(NetParams, TrainHistory)> {
    params.check(spec)?;
    let first = first_trainable_layer(spec, frozen_prefix_depth)?;
    if data.train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    if hyper.batch == 0 || hyper.batch > data.train.len() {
        return Err(Error::InvalidArgument(format!(
            "batch {} for {} training examples",
            hyper.batch,
            data.train.len()
        )));
    }
    let mut params = params.clone();
    let mut history = TrainHistory::default();
    if hyper.iterations == 0 {
        return Ok((params, history));
    }
    let mut velocity = Gradients::zeros_like(&params, first);
    let mut order = BatchOrder::new(data.train.len(), hyper.seed);
    let scale = 1.0 / hyper.batch as f32;
    for it in 1..=hyper.iterations {
        let batch = order.next_batch(hyper.batch);
        let per_example = |&i: &usize| {
            loss_and_gradients(
                spec,
                &params,
                &data.train.images[i],
                data.train.labels[i],
                first,
            )
        };
        let (loss, mut grads) = if hyper.parallel {
            batch
                .par_iter()
                .map(per_example)
                .try_reduce_with(|(la, mut ga), (lb, gb)| {
                    ga.add(&gb);
                    Ok((la + lb, ga))
                })
                .expect("non-empty batch")?
        } else {
            let mut acc = Gradients::zeros_like(&params, first);
            let mut total = 0.0f32;
            for i in &batch {
                let (l, g) = per_example(i)?;
                total += l;
                acc.add(&g);
            }
            (total, acc)
        };
        grads.scale(scale);
        apply_update(
            &mut params,
            &grads,
            &mut velocity,
            hyper.lr_at(it),
            hyper.momentum,
        )?;
        history.losses.push(loss * scale);
        let at_eval =
            hyper.eval_every > 0 && (it % hyper.eval_every == 0 || it == hyper.iterations);
        if at_eval && !data.test.is_empty() {
            let accuracy = evaluate(spec, &params, &data.test, hyper.parallel)?;
            history.evals.push(EvalPoint {
                iteration: it,
                accuracy,
            });
        }
    }
    Ok((params, history))
}

fn apply_update(
    params: &mut NetParams,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f32,
    momentum: f32,
) -> Result<()> {
    for (i, (g, v)) in grads
        .layers
        .iter()
        .zip(velocity.layers.iter_mut())
        .enumerate()
    {
        let (Some((gw, gb)), Some((vw, vb))) = (g, v) else {
            continue;
        };
        match params.layer_mut(i) {
            LayerParams::Conv(k) => {
                let mut w = k.weights().clone();
                let mut b = k.bias().clone();
                sgd_update(&mut w, gw, lr, momentum, vw)?;
                sgd_update(&mut b, gb, lr, momentum, vb)?;
                k.weights_mut().copy_from_slice(w.data());
                k.bias_mut().copy_from_slice(b.data());
            }
            LayerParams::Dense { weights, bias } => {
                sgd_update(weights, gw, lr, momentum, vw)?;
                sgd_update(bias, gb, lr, momentum, vb)?;
            }
            LayerParams::None => {}
        }
    }
    Ok(())
}
