use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{AstnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. One state owns the moment buffers of a fixed,
/// ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<F>>,
    second_moment: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Zeroed moments for parameters of the given element counts.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        AdamState {
            config,
            step_count: 0,
            first_moment: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn for_tensors<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(|t| t.len()).collect();
        Self::new(config, &sizes)
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(config: AdamConfig, step_count: u64, first: Vec<Vec<F>>, second: Vec<Vec<F>>) -> Result<Self> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.len() != b.len()) {
            return Err(AstnError::shape("adam", "first and second moments differ in layout"));
        }
        Ok(AdamState {
            config,
            step_count,
            first_moment: first,
            second_moment: second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Vec<F>], &[Vec<F>]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Applies one update to `params` using the gradient each carries.
    pub fn update(&mut self, params: &mut [&mut Tensor<F>]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(AstnError::shape(
                "adam",
                format!("state tracks {} params, got {}", self.first_moment.len(), params.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first_moment[i].len() {
                return Err(AstnError::shape(
                    "adam",
                    format!("param {i}: moment holds {}, param holds {}", self.first_moment[i].len(), p.len()),
                ));
            }
            if p.grad().is_none() {
                return Err(AstnError::shape("adam", format!("param {i} has no gradient buffer")));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::from_f64(c.beta1), F::from_f64(c.beta2));
        let (one_b1, one_b2) = (F::from_f64(1.0 - c.beta1), F::from_f64(1.0 - c.beta2));
        let step = F::from_f64(c.lr / bc1);
        let inv_sqrt_bc2 = F::from_f64(1.0 / bc2.sqrt());
        let eps = F::from_f64(c.epsilon);
        for (i, p) in params.iter_mut().enumerate() {
            let (data, grad) = p.split_mut();
            let grad = grad.expect("checked above");
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let denom = v[j].sqrt() * inv_sqrt_bc2 + eps;
                data[j] = data[j] - step * m[j] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(vals: &[f64], grad: &[f64]) -> Tensor<f64> {
        let mut t = Tensor::from_f64(&[vals.len()], vals).unwrap();
        t.set_requires_grad(true);
        t.set_grad(grad).unwrap();
        t
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = with_grad(&[1.0, -2.0], &[0.0, 0.0]);
        let mut st = AdamState::for_tensors(AdamConfig::default(), [&p]);
        st.update(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3, -5.0, 1e-3] {
            let mut p = with_grad(&[0.0], &[g]);
            let cfg = AdamConfig::default();
            let mut st = AdamState::for_tensors(cfg, [&p]);
            st.update(&mut [&mut p]).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·|g|/(|g|+ε)
            let expected = cfg.lr * g.abs() / (g.abs() + cfg.epsilon);
            assert!((p.data()[0].abs() - expected).abs() < 1e-12);
            assert!((p.data()[0].abs() - cfg.lr).abs() < 1e-6 * (1.0 + cfg.epsilon / g.abs()));
            assert_eq!(p.data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let mut p = with_grad(&[1.0, 2.0], &[0.1, 0.1]);
        let mut st = AdamState::<f64>::new(AdamConfig::default(), &[3]);
        assert!(st.update(&mut [&mut p]).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
