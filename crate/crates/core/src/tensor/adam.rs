use crate::error::{Error, Result};

use super::Tensor;

/// Adam optimizer state with decoupled weight decay. Weight decay is
/// applied directly to the parameters, not folded into the gradient.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl AdamState {
    pub fn new(lr: f32, beta1: f32, beta2: f32, eps: f32, weight_decay: f32) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over an ordered parameter list. Every parameter must
    /// carry a populated gradient; gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Usage(format!(
                "adam state tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            match &p.grad {
                None => {
                    return Err(Error::Usage(format!(
                        "adam step with missing gradient on parameter {i}"
                    )))
                }
                Some(g) if g.len() != p.numel() => {
                    return Err(Error::Usage(format!(
                        "gradient length {} does not match parameter {i} of {} elements",
                        g.len(),
                        p.numel()
                    )))
                }
                _ => {}
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let grad = p.grad.take().expect("checked above");
            let decay = self.lr * self.weight_decay;
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps) + decay * *x;
            }
        }
        Ok(())
    }
}
