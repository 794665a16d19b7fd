use std::collections::HashMap;

use crate::error::{Error, Result};

use super::params::{ParamId, Parameter, Parameters};
use super::tensor::{Scalar, Tensor};

/// Adam hyperparameters. beta1 defaults to 0.5 (adversarial training).
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-parameter Adam state: moment estimates plus the step counter used for
/// bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(shape: &[usize], config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
            config,
        })
    }
}

/// One Adam update with bias correction. The parameter's accumulated gradient
/// is consumed as-is; zeroing it between steps is the caller's job.
pub fn adam_step<S: Scalar>(param: &mut Parameter<S>, state: &mut AdamState<S>) -> Result<()> {
    if param.gradient.shape() != param.value.shape() {
        return Err(Error::shape(format!(
            "gradient shape {:?} != value shape {:?} for {}",
            param.gradient.shape(),
            param.value.shape(),
            param.name
        )));
    }
    if state.first_moment.shape() != param.value.shape() {
        return Err(Error::shape(format!(
            "adam state shape {:?} != value shape {:?} for {}",
            state.first_moment.shape(),
            param.value.shape(),
            param.name
        )));
    }
    if !param.gradient.is_finite() {
        return Err(Error::NonFinite(format!("gradient of {}", param.name)));
    }

    state.step_count += 1;
    let cfg = &state.config;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one = S::one();
    let lr = S::from_f64(cfg.learning_rate);
    let eps = S::from_f64(cfg.epsilon);
    let bc1 = S::from_f64(1.0 - cfg.beta1.powi(state.step_count as i32));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powi(state.step_count as i32));

    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    let g = param.gradient.data();
    let w = param.value.data_mut();
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a parameter arena: lazily creates one [`AdamState`] per
/// parameter the first time it is stepped.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    config: AdamConfig,
    states: HashMap<usize, AdamState<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            states: HashMap::new(),
        })
    }

    /// Update `ids` from their accumulated gradients, then zero those
    /// gradients.
    pub fn step(&mut self, params: &mut Parameters<S>, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            let param = params.get_mut(id);
            let state = match self.states.entry(id.index()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(AdamState::new(param.value.shape(), self.config)?)
                }
            };
            adam_step(param, state)?;
            param.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_with_grad(value: f64, grad: f64) -> Parameter<f64> {
        let mut p = Parameter::new("p", Tensor::scalar(value));
        p.gradient = Tensor::scalar(grad);
        p
    }

    #[test]
    fn zero_gradient_is_identity_on_value() {
        let mut p = param_with_grad(3.25, 0.0);
        let mut st = AdamState::new(&[], AdamConfig::default()).unwrap();
        adam_step(&mut p, &mut st).unwrap();
        assert_eq!(p.value.item().unwrap(), 3.25);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // value 0, gradient 1, defaults: one bias-corrected step moves by
        // -lr * 1 / (1 + eps) which is -1e-4 to within 1e-9.
        let mut p = param_with_grad(0.0, 1.0);
        let mut st = AdamState::new(&[], AdamConfig::default()).unwrap();
        adam_step(&mut p, &mut st).unwrap();
        let got = p.value.item().unwrap();
        assert!((got - (-1e-4)).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn equal_inputs_update_equally() {
        let mut p1 = param_with_grad(0.7, -0.3);
        let mut p2 = param_with_grad(0.7, -0.3);
        let mut s1 = AdamState::new(&[], AdamConfig::default()).unwrap();
        let mut s2 = AdamState::new(&[], AdamConfig::default()).unwrap();
        for _ in 0..10 {
            adam_step(&mut p1, &mut s1).unwrap();
            adam_step(&mut p2, &mut s2).unwrap();
        }
        assert_eq!(p1.value.item().unwrap(), p2.value.item().unwrap());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = param_with_grad(0.0, f64::NAN);
        let mut st = AdamState::new(&[], AdamConfig::default()).unwrap();
        assert!(matches!(
            adam_step(&mut p, &mut st),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::<f64>::new(&[2], bad).is_err());
    }
}
