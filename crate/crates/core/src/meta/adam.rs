use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(1e-3)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("parameter {name}: gradient has {grad} entries, value has {value}")]
    ShapeMismatch { name: String, grad: usize, value: usize },
}

/// One parameter buffer with its gradient.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Bias-corrected Adam. Moment buffers are allocated on the first step and
/// matched to parameters by position.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every slot. Nothing is modified if any gradient
    /// is non-finite or mis-sized.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<(), AdamError> {
        for s in slots.iter() {
            if s.grad.len() != s.value.len() {
                return Err(AdamError::ShapeMismatch {
                    name: s.name.to_owned(),
                    grad: s.grad.len(),
                    value: s.value.len(),
                });
            }
            if s.grad.iter().any(|g| !g.is_finite()) {
                return Err(AdamError::NonFiniteGradient { name: s.name.to_owned() });
            }
        }
        if self.m.is_empty() {
            self.m = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, s) in slots.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..s.value.len() {
                let g = s.grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                s.value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(adam: &mut Adam, x: &mut [f64], g: &[f64]) -> Result<(), AdamError> {
        adam.step(&mut [ParamSlot { name: "x", value: x, grad: g }])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut x = [1.0, -2.0];
        run(&mut adam, &mut x, &[0.0, 0.0]).unwrap();
        assert_eq!(x, [1.0, -2.0]);
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.01));
        let mut x = [0.0, 0.0, 0.0];
        run(&mut adam, &mut x, &[3.0, -0.5, 1e-3]).unwrap();
        for (xi, sign) in x.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((xi - sign * 0.01).abs() < 1e-7, "{xi}");
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.001));
        let mut x = [0.0];
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..5000 {
            run(&mut adam, &mut x, &[0.25]).unwrap();
            last_step = prev - x[0];
            prev = x[0];
        }
        assert!((last_step - 0.001).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut x = [1.0];
        let mut y = [2.0];
        let err = adam
            .step(&mut [
                ParamSlot { name: "x", value: &mut x, grad: &[0.1] },
                ParamSlot { name: "log_a", value: &mut y, grad: &[f64::NAN] },
            ])
            .unwrap_err();
        assert_eq!(err, AdamError::NonFiniteGradient { name: "log_a".into() });
        assert_eq!(x, [1.0]);
    }
}
