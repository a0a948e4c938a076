use super::params::Params;
use crate::error::{Error, Result};

/// SGD with classic (heavy-ball) momentum: `v <- m*v + g; w <- w - lr*v`.
#[derive(Debug, Clone)]
pub struct OptState {
    pub lr: f64,
    pub momentum: f64,
    velocity: Params,
}

impl OptState {
    pub fn new(lr: f64, momentum: f64, params: &Params) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be > 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        let velocity = params
            .iter()
            .map(|(n, t)| (n.clone(), crate::tensor::Tensor::zeros(t.shape())))
            .collect();
        Ok(OptState { lr, momentum, velocity })
    }

    pub fn velocity(&self) -> &Params {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        params.check_layout(grads, "sgd step")?;
        params.check_layout(&self.velocity, "sgd velocity")?;
        let (lr, m) = (self.lr, self.momentum);
        for ((_, w), ((_, v), (_, g))) in params
            .iter_mut()
            .zip(self.velocity.iter_mut().zip(grads.iter()))
        {
            for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = m * *vi + gi;
                *wi -= lr * *vi;
            }
        }
        Ok(())
    }

    /// Momentum step on `F(w) + mu/2 * |w - anchor|^2` with the proximal
    /// gradient evaluated at the updated point, which stays stable for any
    /// `lr * mu`. With `mu == 0` this is exactly [`OptState::step`].
    pub fn step_proximal(&mut self, params: &mut Params, grads: &Params, anchor: &Params, mu: f64) -> Result<()> {
        if mu == 0.0 {
            return self.step(params, grads);
        }
        params.check_layout(grads, "sgd step")?;
        params.check_layout(anchor, "proximal anchor")?;
        let (lr, m) = (self.lr, self.momentum);
        let shrink = 1.0 + lr * mu;
        for (((_, w), (_, v)), ((_, g), (_, a))) in params
            .iter_mut()
            .zip(self.velocity.iter_mut())
            .zip(grads.iter().zip(anchor.iter()))
        {
            for (((wi, vi), gi), ai) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()).zip(a.data()) {
                let pushed = m * *vi + gi;
                let next = (*wi - lr * pushed + lr * mu * ai) / shrink;
                *vi = pushed + mu * (next - ai);
                *wi = next;
            }
        }
        Ok(())
    }
}
