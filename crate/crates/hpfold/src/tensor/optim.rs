//! Parameter initialization and the Adam optimizer.

use rand::Rng;

use super::{Tensor, TensorError};

/// Xavier-uniform initializer: entries drawn from
/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Adam state: per-parameter moment estimates plus the shared step counter.
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update over `params`, then zeroes their grads.
    ///
    /// Every parameter must carry a gradient; the parameter list must match
    /// the one the state was built from.
    pub fn step(&mut self, params: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.first_moment.len() {
            return Err(TensorError::ParamCountMismatch { state: self.first_moment.len(), given: params.len() });
        }
        let grads: Vec<Vec<f64>> = params
            .iter()
            .enumerate()
            .map(|(i, p)| p.grad().ok_or(TensorError::MissingGrad(i)))
            .collect::<Result<_, _>>()?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter()
            .zip(&grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let mut data = p.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        for p in params {
            p.zero_grad();
        }
        Ok(())
    }

    /// Moment arrays, exposed for checkpointing.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn restore(&mut self, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>, step_count: u64) {
        assert_eq!(first.len(), self.first_moment.len());
        assert_eq!(second.len(), self.second_moment.len());
        self.first_moment = first;
        self.second_moment = second;
        self.step_count = step_count;
    }
}
