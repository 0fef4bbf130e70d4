use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor<f32>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor<f32>) -> Self {
        Parameter {
            name: name.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// L2 penalty folded into the gradient. Off by default.
    pub weight_decay: f32,
    /// Global gradient-norm clip. Off by default.
    pub clip_norm: Option<f32>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

/// Moment buffers for ADAM with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Parameter], config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    /// Applies one update. Parameters are untouched if any gradient is
    /// non-finite or misshapen.
    pub fn step(&mut self, params: &mut [Parameter], grads: &[Tensor<f32>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        let mut sq_norm = 0.0f64;
        for (p, g) in params.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(TensorError::shape(
                    "adam_step",
                    format!(
                        "grad {:?} for `{}` {:?}",
                        g.shape(),
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient(p.name.clone()));
            }
            sq_norm += g
                .data()
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>();
        }
        let clip_scale = match self.config.clip_norm {
            Some(max) if sq_norm.sqrt() > max as f64 => (max as f64 / sq_norm.sqrt()) as f32,
            _ => 1.0,
        };

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j] * clip_scale + weight_decay * *w;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] as f64 / bc1;
                let v_hat = v[j] as f64 / bc2;
                *w -= (lr as f64 * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Vec<Parameter>, Vec<Tensor<f32>>) {
        let params = vec![
            Parameter::new("a", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()),
            Parameter::new("b", Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()),
        ];
        let grads = vec![
            Tensor::new(vec![3], vec![0.3, -4.0, 1e-3]).unwrap(),
            Tensor::new(vec![2], vec![-0.01, 50.0]).unwrap(),
        ];
        (params, grads)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g| + eps).
        let (_, grads) = setup();
        let mut params: Vec<Parameter> = grads
            .iter()
            .enumerate()
            .map(|(i, g)| Parameter::new(format!("p{i}"), Tensor::zeros(g.shape().to_vec())))
            .collect();
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        state.step(&mut params, &grads).unwrap();
        for (p, g) in params.iter().zip(&grads) {
            for (&delta, &gj) in p.value.data().iter().zip(g.data()) {
                let expected = -0.01 * (gj as f64).signum();
                let eps_effect = 1e-8 / (gj as f64).abs();
                let rel = ((delta as f64 - expected) / expected).abs();
                assert!(rel < eps_effect + 1e-6, "{delta} vs {expected}");
            }
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut params, _) = setup();
        let before = params.clone();
        let zeros: Vec<Tensor<f32>> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        let mut state = AdamState::new(&params, AdamConfig::default());
        state.step(&mut params, &zeros).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn identical_states_give_identical_results() {
        let (params, grads) = setup();
        let mut a = params.clone();
        let mut b = params;
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = sa.clone();
        for _ in 0..3 {
            sa.step(&mut a, &grads).unwrap();
            sb.step(&mut b, &grads).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut params, mut grads) = setup();
        grads[1].data_mut()[0] = f32::NAN;
        let before = params.clone();
        let mut state = AdamState::new(&params, AdamConfig::default());
        let err = state.step(&mut params, &grads).unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient("b".into()));
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn clip_norm_bounds_effective_gradient() {
        let mut params = vec![Parameter::new("w", Tensor::zeros(vec![2]))];
        let grads = vec![Tensor::new(vec![2], vec![300.0, 400.0]).unwrap()];
        let cfg = AdamConfig {
            clip_norm: Some(5.0),
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        state.step(&mut params, &grads).unwrap();
        // After clipping the gradient is (3, 4): first-moment buffer holds 0.1·g.
        assert!((state.first[0][0] - 0.3).abs() < 1e-6);
        assert!((state.first[0][1] - 0.4).abs() < 1e-6);
    }
}
