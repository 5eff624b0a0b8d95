use std::collections::BTreeMap;

use super::params::{ParamGrads, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::validation(format!("unknown optimizer `{other}` (expected adam or sgd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates and step counter for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub hyper: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, hyper: AdamConfig) -> Self {
        OptimizerState { kind, hyper, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn adam(hyper: AdamConfig) -> Self {
        Self::new(OptimizerKind::Adam, hyper)
    }

    /// Apply one update to every parameter in `params` that has a gradient.
    /// Gradients are checked for finiteness before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        for (name, g) in grads.iter() {
            if !params.contains(name) {
                continue;
            }
            if params.get(name)?.shape() != g.shape() {
                return Err(Error::validation(format!("gradient shape mismatch for `{name}`")));
            }
            if !g.all_finite() {
                return Err(Error::overflow(format!("optimizer_step({name})")));
            }
        }
        self.step += 1;
        let h = self.hyper;
        let lr = T::of(h.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (name, g) in grads.iter() {
                    if let Some(p) = params.get_mut(name) {
                        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                            *pv -= lr * gv;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
                let bc1 = T::of(1.0 - h.beta1.powf(self.step as f64));
                let bc2 = T::of(1.0 - h.beta2.powf(self.step as f64));
                let eps = T::of(h.eps);
                for (name, g) in grads.iter() {
                    let Some(p) = params.get_mut(name) else { continue };
                    let m = self.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
                    for (((pv, mv), vv), &gv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                        .zip(g.data())
                    {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
