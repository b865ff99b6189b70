//! Adam optimizer over flattened model parameters.

use super::mlp::{ParamGradient, SurrogateModel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// First-moment estimates, in [`SurrogateModel::flatten`] order.
    pub m: Vec<f64>,
    /// Second-moment estimates, same order.
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(parameter_count: usize, learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
        }
    }

    pub fn for_model(model: &SurrogateModel, learning_rate: f64) -> Self {
        Self::new(model.parameter_count(), learning_rate)
    }

    /// Applies one bias-corrected Adam update to `model`.
    pub fn step(&mut self, model: &mut SurrogateModel, grad: &ParamGradient) -> Result<()> {
        let g = grad.flatten();
        if g.len() != self.m.len() || g.len() != model.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, gradient has {}, model has {}",
                self.m.len(),
                g.len(),
                model.parameter_count()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch: self.step as usize,
                detail: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut params = model.flatten();
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        model.set_flat(&params)
    }
}
