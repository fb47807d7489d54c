use super::Tensor;
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f32,
    momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    /// Applies one update from the `grad` slot of each parameter. Parameters
    /// without a gradient are left alone. A non-finite gradient anywhere
    /// rejects the whole step before anything is modified.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        for (index, p) in params.iter().enumerate() {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient { index });
                }
            }
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let Some(g) = p.grad.take() else { continue };
            for ((w, vel), gi) in p.data.iter_mut().zip(v.iter_mut()).zip(&g) {
                *vel = self.momentum * *vel + gi;
                *w -= self.lr * *vel;
            }
            p.grad = Some(g);
        }
        Ok(())
    }
}

/// Rescales every gradient so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling. `max_norm <= 0` leaves gradients untouched.
pub fn clip_grad_norm(params: &mut [Tensor], max_norm: f32) -> f64 {
    let norm = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm as f64 {
        let scale = (max_norm as f64 / norm) as f32;
        for p in params.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}
