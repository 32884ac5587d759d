//! Network input preparation, augmentation and the training loop.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sonospine_autograd::{Adam, AdamConfig, Tape, Tensor};

use crate::image::{frame_to_input, log_transform, warp_bilinear, Affine2, GrayImage};
use crate::landmarks::{make_target, DecodeConfig, HeatmapStack, Landmark, LandmarkSet, Point};
use crate::model::{loss_on_tape, ShnWeights};
use crate::rng::{child_rng, derive_seed, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: Vec<Phase>,
    pub batch_size: usize,
    pub rotation_deg: f64,
    pub flip_probability: f64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 500 epochs at 1e-5 followed by 500 at 1e-7.
    pub fn long() -> Self {
        Self {
            schedule: vec![Phase { epochs: 500, lr: 1e-5 }, Phase { epochs: 500, lr: 1e-7 }],
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        Self {
            schedule: vec![Phase { epochs: 10, lr: 1e-3 }, Phase { epochs: 4, lr: 2e-4 }],
            batch_size: 4,
            rotation_deg: 20.0,
            flip_probability: 0.5,
            checkpoint_every: 0,
        }
    }

    /// Replaces the schedule with one constant-rate phase.
    pub fn single_phase(&mut self, epochs: usize, lr: f64) {
        self.schedule = vec![Phase { epochs, lr }];
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|p| p.epochs).sum()
    }

    /// Learning rate of 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> Option<f64> {
        let mut end = 0;
        for p in &self.schedule {
            end += p.epochs;
            if epoch >= 1 && epoch <= end {
                return Some(p.lr);
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() || self.schedule.iter().any(|p| p.epochs == 0 || !(p.lr > 0.0)) {
            return Err(Error::Config("train: every phase needs epochs > 0 and a positive rate".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train: batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) || !(self.rotation_deg >= 0.0) {
            return Err(Error::Config("train: flip probability in [0, 1] and rotation >= 0 required".into()));
        }
        Ok(())
    }
}

/// One geometric augmentation: horizontal mirror, then rotation about the
/// image centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub rotation_rad: f64,
    pub flip: bool,
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation { rotation_rad: 0.0, flip: false };

    /// Original frame coordinates to augmented frame coordinates.
    pub fn transform(&self, width: usize, height: usize) -> Affine2 {
        let center = [(width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0];
        let rot = Affine2::rotation_about(self.rotation_rad, center);
        if self.flip {
            rot.then_after(&Affine2::horizontal_flip(width))
        } else {
            rot
        }
    }

    /// Moves the landmarks with the image; a mirror swaps left and right
    /// lamina channels so the labels keep their anatomical order.
    pub fn apply(&self, lm: &LandmarkSet, width: usize, height: usize) -> LandmarkSet {
        let t = self.transform(width, height);
        let mut out = *lm;
        for l in Landmark::ALL {
            let src = if self.flip { l.mirrored() } else { l };
            let p = lm.get(src);
            let [x, y] = t.apply([p.x, p.y]);
            out.points[l.index()] = Point::new(x, y);
        }
        out
    }
}

fn inside(lm: &LandmarkSet, width: usize, height: usize) -> bool {
    lm.points.iter().all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64)
}

/// Draws an augmentation, redrawing the angle until every landmark stays in
/// the frame.
pub fn draw_augmentation(rng: &mut Rng, config: &TrainConfig, lm: &LandmarkSet, width: usize, height: usize) -> Augmentation {
    let flip = rng.gen_bool(config.flip_probability);
    let max = config.rotation_deg.to_radians();
    for _ in 0..32 {
        let rotation_rad = if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
        let aug = Augmentation { rotation_rad, flip };
        if inside(&aug.apply(lm, width, height), width, height) {
            return aug;
        }
    }
    Augmentation { rotation_rad: 0.0, flip }
}

/// Log-transformed, augmented, resized network input scaled to `[0, 1]`.
pub fn network_input(image: &GrayImage, aug: &Augmentation, input_size: usize) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let logged = log_transform(image);
    let to_input = frame_to_input(w, h, input_size, input_size).then_after(&aug.transform(w, h));
    let mut out = warp_bilinear(&logged, w, h, input_size, input_size, &to_input.inverse());
    out.iter_mut().for_each(|v| *v /= 255.0);
    out
}

/// A frame with its truth landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub image: GrayImage,
    pub landmarks: LandmarkSet,
}

/// Drives Adam over a weight set one batch at a time.
pub struct Trainer {
    pub weights: ShnWeights,
    adam: Adam,
}

impl Trainer {
    pub fn new(weights: ShnWeights) -> Self {
        Self { weights, adam: Adam::new(AdamConfig::default()) }
    }

    pub fn steps_taken(&self) -> u64 {
        self.adam.steps_taken()
    }

    /// One Adam step on `[B,1,S,S]` inputs against `[B,K,S/4,S/4]` targets;
    /// returns the loss before the update.
    pub fn step(&mut self, inputs: Tensor, targets: Tensor, lr: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.weights.bind(&mut tape, true);
        let x = tape.constant(inputs);
        let preds = self.weights.forward(&mut tape, &bound, x)?;
        let t = tape.constant(targets);
        let loss = loss_on_tape(&mut tape, &preds, t)?;
        let value = tape.value(loss).item();
        tape.backward(loss)?;
        for (name, &var) in bound.iter() {
            let grad = tape.take_grad(var).ok_or_else(|| Error::invalid(format!("no gradient reached {name}")))?;
            self.weights.params.get_mut(name).expect("bound from these params").set_grad(grad)?;
        }
        drop(tape);
        self.adam.step(self.weights.params.values_mut(), lr)?;
        self.weights.params.values_mut().for_each(Tensor::clear_grad);
        Ok(value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub steps: usize,
}

/// Builds an input/target batch from samples with their augmentations.
pub fn make_batch(samples: &[(&TrainingSample, Augmentation)], input_size: usize, decode: &DecodeConfig) -> Result<(Tensor, Tensor)> {
    let side = decode.heatmap_size;
    let prepared: Vec<(Vec<f64>, HeatmapStack)> = samples
        .par_iter()
        .map(|(s, aug)| {
            let (w, h) = (s.image.width(), s.image.height());
            let input = network_input(&s.image, aug, input_size);
            let target = make_target(&aug.apply(&s.landmarks, w, h), decode);
            (input, target)
        })
        .collect();
    let b = samples.len();
    let mut inputs = Vec::with_capacity(b * input_size * input_size);
    let mut targets = Vec::with_capacity(b * 5 * side * side);
    for (i, t) in prepared {
        inputs.extend(i);
        targets.extend(t.into_data());
    }
    Ok((Tensor::new(&[b, 1, input_size, input_size], inputs)?, Tensor::new(&[b, 5, side, side], targets)?))
}

/// Trains on `data` following the schedule. `on_epoch` sees each finished
/// epoch, e.g. to log or checkpoint.
pub fn train(
    trainer: &mut Trainer,
    data: &[TrainingSample],
    config: &TrainConfig,
    decode: &DecodeConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats, &ShnWeights) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mc = &trainer.weights.config;
    if mc.num_landmarks != 5 || mc.heatmap_size != decode.heatmap_size {
        return Err(Error::Config("model and decode settings disagree on landmarks or heatmap size".into()));
    }
    let input_size = mc.input_size;
    let mut log = Vec::with_capacity(config.total_epochs());
    for epoch in 1..=config.total_epochs() {
        let lr = config.lr_at(epoch).expect("epoch within schedule");
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut child_rng(seed, epoch as u64));
        let mut total = 0.0;
        let mut steps = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&TrainingSample, Augmentation)> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let s = &data[i];
                    let mut r = child_rng(derive_seed(seed, epoch as u64), (b * config.batch_size + j) as u64);
                    (s, draw_augmentation(&mut r, config, &s.landmarks, s.image.width(), s.image.height()))
                })
                .collect();
            let (inputs, targets) = make_batch(&batch, input_size, decode)?;
            total += trainer.step(inputs, targets, lr)?;
            steps += 1;
        }
        let stats = EpochStats { epoch, lr, loss: total / steps as f64, steps };
        on_epoch(&stats, &trainer.weights)?;
        log.push(stats);
    }
    Ok(log)
}

/// Last-stack heatmaps for one frame.
pub fn predict_heatmaps(weights: &ShnWeights, image: &GrayImage) -> Result<HeatmapStack> {
    let s = weights.config.input_size;
    let input = Tensor::new(&[1, 1, s, s], network_input(image, &Augmentation::NONE, s))?;
    let outs = weights.predict(&input)?;
    let last = outs.into_iter().last().expect("at least one stack");
    HeatmapStack::new(weights.config.heatmap_size, last.into_data())
}
