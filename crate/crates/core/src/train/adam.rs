use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Adam with bias correction and optional L2 weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// Zero moments sized for `shapes`.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Tensor<T>>, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|t| (vec![T::zero(); t.len()], vec![T::zero(); t.len()]))
            .unzip();
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update of every parameter in place.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor<T>>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimiser holds {} moment buffers, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "parameter {i} has shape {:?}, gradient {:?}, moments {}",
                    p.shape(),
                    g.shape(),
                    self.m[i].len()
                )));
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - self.beta1.powi(self.step));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.step));
        let (lr, eps, wd) = (T::lit(lr), T::lit(self.eps), T::lit(self.weight_decay));
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + wd * *theta;
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
