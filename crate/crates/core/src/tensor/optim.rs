use alloc::vec::Vec;

use super::{Result, Tensor, TensorError};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← momentum·v + grad`, `p ← p − lr·v`, then gradients are cleared.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(TensorError::InvalidArgument(
                "learning rate must be non-negative",
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::InvalidArgument("momentum must lie in [0, 1)"));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    /// Applies one update. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(TensorError::MissingGrad(i));
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| alloc::vec![0.0; p.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let grad = p.grad().expect("checked above").to_vec();
            for ((x, vel), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vel = self.momentum * *vel + g;
                *x -= self.learning_rate * *vel;
            }
            p.clear_grad();
        }
        Ok(())
    }
}
