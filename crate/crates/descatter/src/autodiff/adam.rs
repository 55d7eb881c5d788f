use super::tensor::{Scalar, Tensor};
use super::Parameter;
use crate::error::{Error, Result};

/// Adam hyperparameters. All values must be positive.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!(
                    "Adam hyperparameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-parameter moment estimates and the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<E: Scalar> {
    pub m: Tensor<E>,
    pub v: Tensor<E>,
    pub t: u64,
    pub hyper: AdamHyper,
}

/// Bias-corrected Adam over a parameter list.
pub struct Adam<E: Scalar> {
    states: Vec<AdamState<E>>,
}

impl<E: Scalar> Adam<E> {
    pub fn new(hyper: AdamHyper, params: &[Parameter<E>]) -> Result<Self> {
        hyper.validate()?;
        Ok(Adam {
            states: params
                .iter()
                .map(|p| AdamState {
                    m: Tensor::zeros(p.value.shape()),
                    v: Tensor::zeros(p.value.shape()),
                    t: 0,
                    hyper,
                })
                .collect(),
        })
    }

    pub fn states(&self) -> &[AdamState<E>] {
        &self.states
    }

    /// One update from the gradients currently stored in `params.grad`.
    pub fn step(&mut self, params: &mut [Parameter<E>]) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            adam_step(p, s)?;
        }
        Ok(())
    }
}

/// The standard bias-corrected Adam update for one parameter.
pub fn adam_step<E: Scalar>(param: &mut Parameter<E>, state: &mut AdamState<E>) -> Result<()> {
    state.hyper.validate()?;
    if param.value.shape() != state.m.shape() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "state shape {:?} does not match parameter {:?} of shape {:?}",
                state.m.shape(),
                param.name,
                param.value.shape()
            ),
        ));
    }
    state.t += 1;
    let h = state.hyper;
    let b1 = E::from_f64(h.beta1);
    let b2 = E::from_f64(h.beta2);
    let one = E::one();
    let bc1 = E::from_f64(1.0 - h.beta1.powi(state.t as i32));
    let bc2 = E::from_f64(1.0 - h.beta2.powi(state.t as i32));
    let lr = E::from_f64(h.lr);
    let eps = E::from_f64(h.epsilon);
    for (((w, &g), m), v) in param
        .value
        .data_mut()
        .iter_mut()
        .zip(param.grad.data())
        .zip(state.m.data_mut().iter_mut())
        .zip(state.v.data_mut().iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
