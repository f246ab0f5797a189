use crate::error::{mismatch, Result, TensorError};
use crate::param::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimiser state; `m` and `v` mirror the parameter shapes one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.dims())).collect();
        Self {
            config,
            step_count: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update.
///
/// Gradients are validated before anything is touched: a non-finite or
/// misshapen gradient leaves parameters and state unchanged.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(mismatch("adam_step", "parameter count", params.len(), grads.len()));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.dims() != g.dims() {
            return Err(mismatch(
                "adam_step",
                format!("gradient of {name}"),
                format!("{:?}", p.dims()),
                format!("{:?}", g.dims()),
            ));
        }
        if !g.is_finite() {
            return Err(TensorError::NonFinite { op: "adam_step" });
        }
    }
    let c = state.config;
    let t = state.step_count + 1;
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let one = T::one();
    let bc1 = T::from_f64_lossy(1.0 - c.beta1.powf(t as f64));
    let bc2 = T::from_f64_lossy(1.0 - c.beta2.powf(t as f64));
    let lr = T::from_f64_lossy(c.lr);
    let eps = T::from_f64_lossy(c.epsilon);
    for (i, g) in grads.iter().enumerate() {
        let p = params.tensor_mut(i);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pj -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step_count = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("x", Tensor::scalar(x));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.7);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut st).unwrap();
        assert_eq!(p.tensor(0).item(), 0.7);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg, &p);
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st).unwrap();
        assert!((p.tensor(0).item() + 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut p = single(1.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let err = adam_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut st).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
        assert_eq!(p.tensor(0).item(), 1.0);
        assert_eq!(st.step_count, 0);
    }

    /// Scalar re-simulation of Adam on f(x) = x^2, written independently of
    /// `adam_step`.
    fn simulate_quadratic(x0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t as i32))) / ((v / (1.0 - b2.powi(t as i32))).sqrt() + eps);
        }
        x
    }

    #[test]
    fn quadratic_converges_like_simulation() {
        let mut p = single(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg, &p);
        for _ in 0..100 {
            let g = 2.0 * p.tensor(0).item();
            adam_step(&mut p, &[Tensor::scalar(g)], &mut st).unwrap();
        }
        let x = p.tensor(0).item();
        let oracle = simulate_quadratic(1.0, 0.1, 100);
        assert!(oracle.abs() < 0.1, "oracle {oracle}");
        assert!((x - oracle).abs() < 1e-12);
        assert!(x.abs() < 0.1);
    }
}
