//! Stacked hourglass network for five-landmark heatmap regression.
//!
//! Layout per stack: a recursive hourglass (residual per scale on both the
//! pooled and skip branches, nearest upsampling and addition on the way
//! back up), then a residual, a 1x1 feature layer and a 1x1 heatmap head.
//! Between stacks the stack input, a 1x1 remap of the features and a 1x1
//! remap of the heatmaps are summed.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sonospine_autograd::{Tape, Tensor, Var};

use crate::rng::rng;
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShnConfig {
    pub num_stacks: usize,
    pub feature_channels: usize,
    pub hourglass_depth: usize,
    pub num_landmarks: usize,
    pub input_size: usize,
    pub heatmap_size: usize,
    /// Batch-statistics normalization after every convolution in a residual block.
    pub batch_norm: bool,
}

impl Default for ShnConfig {
    fn default() -> Self {
        Self {
            num_stacks: 2,
            feature_channels: 256,
            hourglass_depth: 4,
            num_landmarks: 5,
            input_size: 256,
            heatmap_size: 64,
            batch_norm: false,
        }
    }
}

impl ShnConfig {
    /// Reduced width that trains on a CPU in minutes.
    pub fn desk() -> Self {
        Self { feature_channels: 32, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.num_stacks == 0 || self.num_landmarks == 0 || self.hourglass_depth == 0 {
            return bad("stacks, landmarks and hourglass depth must be positive".into());
        }
        if self.feature_channels < 4 || !self.feature_channels.is_multiple_of(4) {
            return bad(format!("feature_channels must be a positive multiple of 4, got {}", self.feature_channels));
        }
        if self.heatmap_size * 4 != self.input_size {
            return bad(format!("heatmap side {} must be a quarter of input side {}", self.heatmap_size, self.input_size));
        }
        let reach = 1usize.checked_shl(self.hourglass_depth as u32).unwrap_or(0);
        if reach == 0 || !self.heatmap_size.is_multiple_of(reach) || self.heatmap_size / reach < 4 {
            return bad(format!(
                "{} halvings of a {}-pixel heatmap must end at 4 pixels or more",
                self.hourglass_depth, self.heatmap_size
            ));
        }
        Ok(())
    }

    /// Every parameter name and shape, in initialization order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.feature_channels;
        let k = self.num_landmarks;
        let mut out = Vec::new();
        conv_shapes(&mut out, "stem.conv", c / 4, 1, 7);
        residual_shapes(&mut out, "stem.res1", c / 4, c / 2, self.batch_norm);
        residual_shapes(&mut out, "stem.res2", c / 2, c / 2, self.batch_norm);
        residual_shapes(&mut out, "stem.res3", c / 2, c, self.batch_norm);
        for s in 0..self.num_stacks {
            for d in (1..=self.hourglass_depth).rev() {
                for part in ["up", "low1", "low3"] {
                    residual_shapes(&mut out, &format!("hg{s}.l{d}.{part}"), c, c, self.batch_norm);
                }
                if d == 1 {
                    residual_shapes(&mut out, &format!("hg{s}.l1.low2"), c, c, self.batch_norm);
                }
            }
            residual_shapes(&mut out, &format!("post{s}.res"), c, c, self.batch_norm);
            conv_shapes(&mut out, &format!("post{s}.lin"), c, c, 1);
            conv_shapes(&mut out, &format!("post{s}.head"), k, c, 1);
            if s + 1 < self.num_stacks {
                conv_shapes(&mut out, &format!("post{s}.remap_feat"), c, c, 1);
                conv_shapes(&mut out, &format!("post{s}.remap_heat"), c, k, 1);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

fn conv_shapes(out: &mut Vec<(String, Vec<usize>)>, name: &str, cout: usize, cin: usize, k: usize) {
    out.push((format!("{name}.weight"), vec![cout, cin, k, k]));
    out.push((format!("{name}.bias"), vec![cout]));
}

fn residual_shapes(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, cin: usize, cout: usize, bn: bool) {
    let mid = cout / 2;
    conv_shapes(out, &format!("{prefix}.conv1"), mid, cin, 1);
    conv_shapes(out, &format!("{prefix}.conv2"), mid, mid, 3);
    conv_shapes(out, &format!("{prefix}.conv3"), cout, mid, 1);
    if bn {
        for (i, ch) in [(1, mid), (2, mid), (3, cout)] {
            out.push((format!("{prefix}.bn{i}.gamma"), vec![ch]));
            out.push((format!("{prefix}.bn{i}.beta"), vec![ch]));
        }
    }
    if cin != cout {
        conv_shapes(out, &format!("{prefix}.skip"), cout, cin, 1);
    }
}

/// Named parameters of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ShnWeights {
    pub config: ShnConfig,
    pub params: BTreeMap<String, Tensor>,
}

/// Parameters recorded on a tape, looked up by name during the forward pass.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Config(format!("model has no parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

impl ShnWeights {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases; normalization scales start at 1 and shifts at 0.
    pub fn build(config: &ShnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed);
        let shapes = config.parameter_shapes();
        let mut params = BTreeMap::new();
        let mut fan_in = 1;
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".gamma") {
                vec![1.0; n]
            } else if name.ends_with(".beta") {
                vec![0.0; n]
            } else {
                if name.ends_with(".weight") {
                    fan_in = shape[1..].iter().product();
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| r.gen_range(-bound..bound)).collect()
            };
            params.insert(name, Tensor::new(&shape, data)?);
        }
        Ok(Self { config: config.clone(), params })
    }

    /// Checks that the parameter set is exactly the one the config implies.
    pub fn from_parts(config: ShnConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::Config(format!("expected {} parameters, got {}", expected.len(), params.len())));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Config(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape())))
                }
                None => return Err(Error::Config(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Records every parameter as a leaf; `trainable` leaves collect gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let t = t.clone().with_grad(trainable);
                let v = if trainable { tape.leaf(t) } else { tape.constant(t) };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Heatmap predictions of every stack for a `[B, 1, S, S]` input.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Vec<Var>> {
        let cfg = &self.config;
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.input_size || shape[3] != cfg.input_size {
            return Err(Error::invalid(format!(
                "network input must be [B, 1, {s}, {s}], got {shape:?}",
                s = cfg.input_size
            )));
        }
        let bn = cfg.batch_norm;
        let conv = |tape: &mut Tape, name: &str, x: Var, stride: usize, pad: usize| -> Result<Var> {
            Ok(tape.conv2d(x, bound.get(&format!("{name}.weight"))?, Some(bound.get(&format!("{name}.bias"))?), stride, pad)?)
        };
        let stem = conv(tape, "stem.conv", input, 2, 3)?;
        let mut x = tape.relu(stem);
        x = residual_block(tape, bound, "stem.res1", x, bn)?;
        x = tape.maxpool2(x)?;
        x = residual_block(tape, bound, "stem.res2", x, bn)?;
        x = residual_block(tape, bound, "stem.res3", x, bn)?;

        let mut heatmaps = Vec::with_capacity(cfg.num_stacks);
        for s in 0..cfg.num_stacks {
            let hg = hourglass(tape, bound, s, cfg.hourglass_depth, x, bn)?;
            let feat = residual_block(tape, bound, &format!("post{s}.res"), hg, bn)?;
            let lin = conv(tape, &format!("post{s}.lin"), feat, 1, 0)?;
            let lin = tape.relu(lin);
            let heat = conv(tape, &format!("post{s}.head"), lin, 1, 0)?;
            heatmaps.push(heat);
            if s + 1 < cfg.num_stacks {
                let a = conv(tape, &format!("post{s}.remap_feat"), lin, 1, 0)?;
                let b = conv(tape, &format!("post{s}.remap_heat"), heat, 1, 0)?;
                let sum = tape.add(x, a)?;
                x = tape.add(sum, b)?;
            }
        }
        Ok(heatmaps)
    }

    /// Forward pass without gradients, returning each stack's heatmaps.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let outs = self.forward(&mut tape, &bound, x)?;
        Ok(outs.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

/// Bottleneck residual block: 1x1 to half the output width, 3x3, 1x1 back
/// up, each followed by relu except the last, plus an identity (or 1x1
/// projection) skip and a final relu.
pub fn residual_block(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var, batch_norm: bool) -> Result<Var> {
    let cin = tape.value(x).shape()[1];
    if !cin.is_multiple_of(2) {
        return Err(Error::Config(format!("{prefix}: residual blocks need an even channel count, got {cin}")));
    }
    let mut h = x;
    for (i, pad) in [(1, 0), (2, 1), (3, 0)] {
        let w = bound.get(&format!("{prefix}.conv{i}.weight"))?;
        let b = bound.get(&format!("{prefix}.conv{i}.bias"))?;
        h = tape.conv2d(h, w, Some(b), 1, pad)?;
        if batch_norm {
            let g = bound.get(&format!("{prefix}.bn{i}.gamma"))?;
            let be = bound.get(&format!("{prefix}.bn{i}.beta"))?;
            h = tape.batch_norm(h, g, be, BN_EPS)?;
        }
        if i < 3 {
            h = tape.relu(h);
        }
    }
    let skip = match bound.get(&format!("{prefix}.skip.weight")) {
        Ok(w) => {
            let b = bound.get(&format!("{prefix}.skip.bias"))?;
            tape.conv2d(x, w, Some(b), 1, 0)?
        }
        Err(_) => x,
    };
    let sum = tape.add(h, skip)?;
    Ok(tape.relu(sum))
}

fn hourglass(tape: &mut Tape, bound: &Bound, stack: usize, level: usize, x: Var, bn: bool) -> Result<Var> {
    let name = |part: &str| format!("hg{stack}.l{level}.{part}");
    let up = residual_block(tape, bound, &name("up"), x, bn)?;
    let pooled = tape.maxpool2(x)?;
    let low1 = residual_block(tape, bound, &name("low1"), pooled, bn)?;
    let low2 = if level > 1 {
        hourglass(tape, bound, stack, level - 1, low1, bn)?
    } else {
        residual_block(tape, bound, &name("low2"), low1, bn)?
    };
    let low3 = residual_block(tape, bound, &name("low3"), low2, bn)?;
    let upsampled = tape.upsample_nearest2(low3)?;
    Ok(tape.add(up, upsampled)?)
}

/// Sum over stacks of the mean squared error against one target.
pub fn loss_on_tape(tape: &mut Tape, predicted: &[Var], target: Var) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in predicted {
        let l = tape.mse_loss(p, target)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    total.ok_or_else(|| Error::invalid("loss needs at least one prediction"))
}

pub fn loss(predicted: &[Tensor], target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let preds: Vec<Var> = predicted.iter().map(|p| tape.constant(p.clone())).collect();
    let t = tape.constant(target.clone());
    let l = loss_on_tape(&mut tape, &preds, t)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ShnConfig {
        ShnConfig { feature_channels: 8, hourglass_depth: 2, input_size: 64, heatmap_size: 16, ..ShnConfig::default() }
    }

    #[test]
    fn config_rules() {
        assert!(ShnConfig::default().validate().is_ok());
        assert!(ShnConfig::desk().validate().is_ok());
        assert!(ShnConfig { heatmap_size: 32, ..ShnConfig::desk() }.validate().is_err());
        assert!(ShnConfig { hourglass_depth: 5, ..ShnConfig::desk() }.validate().is_err());
        assert!(ShnConfig { feature_channels: 30, ..ShnConfig::desk() }.validate().is_err());
    }

    #[test]
    fn build_is_seeded() {
        let a = ShnWeights::build(&tiny(), 3).unwrap();
        assert_eq!(a, ShnWeights::build(&tiny(), 3).unwrap());
        assert_ne!(a, ShnWeights::build(&tiny(), 4).unwrap());
        assert_eq!(a.parameter_count(), tiny().parameter_count());
    }

    #[test]
    fn forward_shapes() {
        let w = ShnWeights::build(&tiny(), 1).unwrap();
        let out = w.predict(&Tensor::full(&[2, 1, 64, 64], 0.5)).unwrap();
        assert_eq!(out.len(), 2);
        for o in out {
            assert_eq!(o.shape(), &[2, 5, 16, 16]);
        }
        assert!(w.predict(&Tensor::zeros(&[1, 1, 32, 32])).is_err());
    }

    #[test]
    fn zero_heads_give_zero_heatmaps() {
        let mut w = ShnWeights::build(&tiny(), 1).unwrap();
        for (name, t) in w.params.iter_mut() {
            if name.contains(".head.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let input = Tensor::new(&[1, 1, 64, 64], (0..4096).map(|i| (i % 17) as f64).collect()).unwrap();
        for o in w.predict(&input).unwrap() {
            assert!(o.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn from_parts_checks_names_and_shapes() {
        let w = ShnWeights::build(&tiny(), 1).unwrap();
        assert!(ShnWeights::from_parts(tiny(), w.params.clone()).is_ok());
        let mut missing = w.params.clone();
        missing.remove("stem.conv.bias");
        assert!(ShnWeights::from_parts(tiny(), missing).is_err());
    }
}
