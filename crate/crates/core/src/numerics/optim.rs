use serde::{Deserialize, Serialize};

use super::params::{ParamStore, Parameter};
use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults follow the tokenizer and language-model
/// training setup: β1 = 0.9, β2 = 0.99, learning rate 2e-4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            learning_rate: 2e-4,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::invalid(format!(
                "Adam betas must lie in [0, 1): {}, {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam learning rate and epsilon must be positive"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update using the stored gradients, which are
/// zeroed afterwards. A non-finite gradient aborts the step before any
/// parameter is touched.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig, step: u64) -> Result<()> {
    cfg.validate()?;
    if step == 0 {
        return Err(Error::invalid("Adam step count starts at 1"));
    }
    if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for p in store.iter_mut() {
        let Parameter {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = p;
        let moments = adam_m.data_mut().iter_mut().zip(adam_v.data_mut().iter_mut());
        for ((x, &g), (m, v)) in value.data_mut().iter_mut().zip(grad.data()).zip(moments) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *x -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
        grad.fill(0.0);
    }
    Ok(())
}
