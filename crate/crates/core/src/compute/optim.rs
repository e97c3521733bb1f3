use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParamSet};
use crate::error::{Error, Result};

/// Adam with bias-corrected moments. State lives in each [`Param`](super::params::Param),
/// so one `Adam` value can drive any number of parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Applies one update to every trainable parameter of `params`.
    ///
    /// Gradients are validated first; a non-finite or misshapen gradient
    /// aborts the whole step and leaves every parameter untouched.
    pub fn step(&self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Usage(format!("gradient for unknown parameter `{name}`")))?;
            if p.value.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            for (((w, m), v), &g) in p.value.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
