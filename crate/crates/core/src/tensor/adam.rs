//! Bias-corrected Adam updates.

use crate::error::Error;
use crate::Result;

use super::Parameter;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step over a set of parameters. Each parameter must carry a
/// gradient; moments decay even where the gradient is zero.
pub fn adam_step(params: &mut [&mut Parameter], config: &AdamConfig) -> Result<()> {
    for p in params.iter_mut() {
        if p.value.grad().is_none() {
            return Err(Error::Config(format!(
                "parameter {} has no gradient; run backward first",
                p.name
            )));
        }
    }
    for p in params.iter_mut() {
        p.step += 1;
        let t = p.step;
        let bc1 = 1.0 - config.beta1.powi(t as i32);
        let bc2 = 1.0 - config.beta2.powi(t as i32);
        let grad = p.value.grad().unwrap().to_vec();
        for (i, g) in grad.iter().enumerate() {
            p.m[i] = config.beta1 * p.m[i] + (1.0 - config.beta1) * g;
            p.v[i] = config.beta2 * p.v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.value.data_mut()[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
        if !p.value.all_finite() {
            return Err(Error::NonFinite(format!("adam step on {}", p.name)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        p.value.grad_mut(); // zero gradient, fresh moments
        adam_step(&mut [&mut p], &AdamConfig::default()).unwrap();
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(p.step, 1);

        // existing moments decay by beta under a zero gradient
        p.m = vec![0.5, 0.5];
        p.v = vec![0.25, 0.25];
        adam_step(&mut [&mut p], &AdamConfig::default()).unwrap();
        assert_relative_eq!(p.m[0], 0.45);
        assert_relative_eq!(p.v[0], 0.25 * 0.999);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        // bias correction makes m_hat/sqrt(v_hat) = sign(g) on step 1
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = Parameter::new("w", Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap());
        p.value.accumulate_grad(&[2.5, -0.3, 0.0]);
        adam_step(&mut [&mut p], &config).unwrap();
        let got = p.value.data();
        assert!((got[0] - (-0.1)).abs() < 1e-6, "got {got:?}");
        assert!((got[1] - 0.1).abs() < 1e-6, "got {got:?}");
        assert_eq!(got[2], 0.0);
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut p = Parameter::new("w", Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap());
            p.value.accumulate_grad(&[0.7, -0.7]);
            adam_step(&mut [&mut p], &AdamConfig::default()).unwrap();
            p.value.zero_grad();
            p.value.accumulate_grad(&[0.7, -0.7]);
            adam_step(&mut [&mut p], &AdamConfig::default()).unwrap();
            p.value.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Parameter::new("w", Tensor::zeros(&[2]));
        assert!(adam_step(&mut [&mut p], &AdamConfig::default()).is_err());
    }
}
