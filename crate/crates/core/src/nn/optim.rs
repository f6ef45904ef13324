use super::{DenseNet, Gradient};
use crate::error::{Error, Result};

fn check(net: &DenseNet, g: &Gradient, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Input(format!("learning rate must be positive, got {lr}")));
    }
    if g.len() != net.num_params() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, network has {} parameters",
            g.len(),
            net.num_params()
        )));
    }
    if let Some(i) = g.0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", g.0[i])));
    }
    Ok(())
}

/// Plain gradient descent: `p <- p - lr * g`.
pub fn sgd_step(net: &mut DenseNet, g: &Gradient, lr: f64) -> Result<()> {
    check(net, g, lr)?;
    let mut it = g.0.iter();
    for layer in net.layers_mut() {
        for (p, gi) in layer.params_mut().zip(&mut it) {
            *p -= lr * gi;
        }
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum. One instance per network.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, g: &Gradient, lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(net, g, lr);
        }
        check(net, g, lr)?;
        if self.velocity.len() != g.len() {
            self.velocity = vec![0.0; g.len()];
        }
        for (v, gi) in self.velocity.iter_mut().zip(&g.0) {
            *v = self.momentum * *v + gi;
        }
        sgd_step(net, &Gradient(self.velocity.clone()), lr)
    }
}
