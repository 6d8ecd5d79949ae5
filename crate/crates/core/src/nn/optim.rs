use std::f64::consts::PI;

use super::params::ParamVector;
use crate::error::{Error, Result};

/// SGD with momentum and L2 weight decay, PyTorch semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    buffer: Vec<f64>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(len: usize, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Self {
            buffer: vec![0.0; len],
            lr,
            momentum,
            weight_decay,
        })
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }
}

/// `v <- m*v + (g + wd*theta); theta <- theta - lr*v`
pub fn sgd_step(
    params: &mut ParamVector,
    grad: &ParamVector,
    opt: &mut OptimizerState,
) -> Result<()> {
    params.check_layout(grad)?;
    if opt.buffer.len() != params.len() {
        return Err(Error::Shape {
            layer: "momentum buffer".into(),
            expected: params.len(),
            found: opt.buffer.len(),
        });
    }
    let (lr, m, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    for ((theta, g), v) in params
        .values_mut()
        .iter_mut()
        .zip(grad.values())
        .zip(opt.buffer.iter_mut())
    {
        *v = m * *v + (g + wd * *theta);
        *theta -= lr * *v;
    }
    Ok(())
}

/// `0.5 * base * (1 + cos(pi * t / horizon))`
pub fn cosine_annealing_lr(t: usize, horizon: usize, base: f64) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::invalid("cosine horizon must be >= 1"));
    }
    if t > horizon {
        return Err(Error::invalid(format!(
            "step {t} beyond cosine horizon {horizon}"
        )));
    }
    if t == horizon {
        return Ok(0.0);
    }
    Ok(0.5 * base * (1.0 + (PI * t as f64 / horizon as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;
    use proptest::prelude::*;

    fn params(values: Vec<f64>) -> ParamVector {
        let spec = ModelSpec::mlp(1, vec![], 2).unwrap();
        assert_eq!(values.len(), spec.num_params());
        spec.zeros().with_values(values).unwrap()
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = params(vec![1.0, -2.0, 0.5, 3.0]);
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = OptimizerState::new(4, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn vanilla_sgd_is_exact() {
        let mut p = params(vec![1.0, -2.0, 0.5, 3.0]);
        let g = params(vec![0.5, 0.25, -1.0, 2.0]);
        let mut opt = OptimizerState::new(4, 0.1, 0.0, 0.0).unwrap();
        sgd_step(&mut p, &g, &mut opt).unwrap();
        let expected: Vec<f64> = [1.0, -2.0, 0.5, 3.0]
            .iter()
            .zip([0.5, 0.25, -1.0, 2.0])
            .map(|(t, g)| t - 0.1 * g)
            .collect();
        assert_eq!(p.values(), expected.as_slice());
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        let theta0 = [0.3, -0.7, 1.1, 0.05];
        let g1 = [0.2, -0.4, 0.9, -1.3];
        let g2 = [-0.6, 0.1, 0.3, 0.8];
        let (lr, m, wd) = (0.05, 0.9, 4e-4);
        let mut p = params(theta0.to_vec());
        let mut opt = OptimizerState::new(4, lr, m, wd).unwrap();
        sgd_step(&mut p, &params(g1.to_vec()), &mut opt).unwrap();
        sgd_step(&mut p, &params(g2.to_vec()), &mut opt).unwrap();
        for i in 0..4 {
            let v1 = g1[i] + wd * theta0[i];
            let t1 = theta0[i] - lr * v1;
            let v2 = m * v1 + g2[i] + wd * t1;
            let t2 = t1 - lr * v2;
            assert!((p.values()[i] - t2).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_annealing_lr(0, 10, 0.2).unwrap(), 0.2);
        assert_eq!(cosine_annealing_lr(10, 10, 0.2).unwrap(), 0.0);
        assert!((cosine_annealing_lr(5, 10, 0.2).unwrap() - 0.1).abs() < 1e-15);
        assert!(cosine_annealing_lr(11, 10, 0.2).is_err());
        assert!(cosine_annealing_lr(0, 0, 0.2).is_err());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(OptimizerState::new(1, -0.1, 0.0, 0.0).is_err());
        assert!(OptimizerState::new(1, 0.1, 1.0, 0.0).is_err());
        assert!(OptimizerState::new(1, 0.1, 0.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn plain_step_is_linear_in_grad(
            theta in prop::collection::vec(-5.0f64..5.0, 4),
            grad in prop::collection::vec(-5.0f64..5.0, 4),
            a in -3.0f64..3.0,
        ) {
            let step = |g: Vec<f64>| {
                let mut p = params(theta.clone());
                let mut opt = OptimizerState::new(4, 0.1, 0.0, 0.0).unwrap();
                sgd_step(&mut p, &params(g), &mut opt).unwrap();
                p.values().iter().zip(&theta).map(|(x, t)| x - t).collect::<Vec<_>>()
            };
            let base = step(grad.clone());
            let scaled = step(grad.iter().map(|g| a * g).collect());
            for (s, b) in scaled.iter().zip(&base) {
                prop_assert!((s - a * b).abs() < 1e-12);
            }
        }
    }
}
