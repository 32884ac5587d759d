use crate::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// One bias-corrected Adam update of `param` in place. `step` is 1-based.
pub fn adam_update(param: &mut [f64], grad: &[f64], moments: &mut Moments, lr: f64, config: &AdamConfig, step: u64) {
    assert!(step >= 1, "Adam steps are 1-based");
    let bc1 = 1.0 - config.beta1.powi(step as i32);
    let bc2 = 1.0 - config.beta2.powi(step as i32);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(moments.first.iter_mut())
        .zip(moments.second.iter_mut())
    {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

/// Adam over a fixed, ordered parameter list. Moments are allocated on the
/// first step and matched to parameters by position afterwards.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    /// Applies one update using the gradients stored on each tensor.
    pub fn step<'a, I>(&mut self, params: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if let Some(index) = params.iter().position(|p| p.grad().is_none()) {
            return Err(TensorError::MissingGrad { index });
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments { first: vec![0.0; p.numel()], second: vec![0.0; p.numel()] })
                .collect();
        }
        if self.moments.len() != params.len() || self.moments.iter().zip(&params).any(|(m, p)| m.first.len() != p.numel()) {
            return Err(TensorError::Invalid {
                op: "adam_step",
                reason: "parameter list changed between steps".into(),
            });
        }
        self.step += 1;
        for (param, moments) in params.into_iter().zip(self.moments.iter_mut()) {
            let grad = param.grad().expect("checked above").to_vec();
            adam_update(param.data_mut(), &grad, moments, lr, &self.config, self.step);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.5).with_grad(true);
        p.set_grad(vec![1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step([&mut p], 1e-3).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
        assert!(((0.5 - p.item()) - 9.999_999_9e-4).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            p.set_grad(vec![0.0; 3]).unwrap();
            adam.step([&mut p], 1e-2).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn identical_params_follow_identical_trajectories() {
        let mut a = Tensor::scalar(0.3);
        let mut b = Tensor::scalar(0.3);
        let mut adam = Adam::new(AdamConfig::default());
        for t in 0..25 {
            let g = ((t as f64) * 0.7).sin() + a.item();
            a.set_grad(vec![g]).unwrap();
            b.set_grad(vec![g]).unwrap();
            adam.step([&mut a, &mut b], 1e-2).unwrap();
            assert_eq!(a.item().to_bits(), b.item().to_bits());
        }
    }

    #[test]
    fn missing_grad_is_rejected() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        a.set_grad(vec![1.0]).unwrap();
        let err = Adam::new(AdamConfig::default()).step([&mut a, &mut b], 1e-3).unwrap_err();
        assert_eq!(err, TensorError::MissingGrad { index: 1 });
    }

    #[test]
    fn moments_persist_across_steps() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = Adam::new(AdamConfig::default());
        p.set_grad(vec![1.0]).unwrap();
        adam.step([&mut p], 1e-3).unwrap();
        p.set_grad(vec![1.0]).unwrap();
        adam.step([&mut p], 1e-3).unwrap();
        assert_eq!(adam.steps_taken(), 2);
        let m = &adam.moments()[0];
        assert!((m.first[0] - 0.19).abs() < 1e-15);
        assert!((m.second[0] - (1.0 - 0.999f64.powi(2))).abs() < 1e-15);
    }
}
