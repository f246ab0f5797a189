use crate::error::{mismatch, Result};
use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Scalar> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the previous running value in each update.
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: T::from_f64_lossy(Self::DEFAULT_MOMENTUM),
            epsilon: T::from_f64_lossy(Self::DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

struct BatchNormTrainBackward<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> Backward<T> for BatchNormTrainBackward<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].nchw("batch_norm").expect("4-D input");
        let gamma = inputs[1].data();
        let plane = h * w;
        let m = T::from_usize_lossy(n * plane);
        let mut gx = Tensor::zeros(inputs[0].dims());
        let mut ggamma = Tensor::zeros(&[c]);
        let mut gbeta = Tensor::zeros(&[c]);
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    sum_g += g.data()[i];
                    sum_gx += g.data()[i] * self.x_hat[i];
                }
            }
            ggamma.data_mut()[ch] = sum_gx;
            gbeta.data_mut()[ch] = sum_g;
            let k = gamma[ch] * self.inv_std[ch];
            let (mean_g, mean_gx) = (sum_g / m, sum_gx / m);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    gx.data_mut()[i] = k * (g.data()[i] - mean_g - self.x_hat[i] * mean_gx);
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }
}

struct BatchNormEvalBackward<T> {
    inv_std: Vec<T>,
    mean: Vec<T>,
}

impl<T: Scalar> Backward<T> for BatchNormEvalBackward<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let (n, c, h, w) = x.nchw("batch_norm").expect("4-D input");
        let gamma = inputs[1].data();
        let plane = h * w;
        let mut gx = Tensor::zeros(x.dims());
        let mut ggamma = Tensor::zeros(&[c]);
        let mut gbeta = Tensor::zeros(&[c]);
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x.data()[i] - self.mean[ch]) * self.inv_std[ch];
                    ggamma.data_mut()[ch] += g.data()[i] * xh;
                    gbeta.data_mut()[ch] += g.data()[i];
                    gx.data_mut()[i] = g.data()[i] * gamma[ch] * self.inv_std[ch];
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }
}

/// Per-channel batch normalisation of an NCHW tensor.
///
/// In [`NormMode::Train`] the batch statistics normalise the input and are
/// folded into `state` (`running = momentum * running + (1 - momentum) * batch`,
/// unbiased variance). In [`NormMode::Eval`] the running statistics are used.
pub fn batch_norm<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState<T>,
    mode: NormMode,
) -> Result<Var> {
    let (n, c, h, w) = g.value(x).nchw("batch_norm")?;
    for (name, v) in [("gamma length", gamma), ("beta length", beta)] {
        if g.value(v).numel() != c {
            return Err(mismatch("batch_norm", name, c, g.value(v).numel()));
        }
    }
    if state.channels() != c {
        return Err(mismatch("batch_norm", "running stats length", c, state.channels()));
    }
    let plane = h * w;
    let count = n * plane;
    let eps = state.epsilon;
    let xd = g.value(x).data();
    let gd = g.value(gamma).data();
    let bd = g.value(beta).data();
    let mut out = Tensor::zeros(g.value(x).dims());
    match mode {
        NormMode::Train => {
            let mut x_hat = vec![T::zero(); xd.len()];
            let mut inv_std = vec![T::zero(); c];
            let m = T::from_usize_lossy(count);
            for ch in 0..c {
                let mut mean = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    mean += xd[off..off + plane].iter().copied().sum::<T>();
                }
                mean /= m;
                let mut var = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    var += xd[off..off + plane].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                var /= m;
                let is = T::one() / (var + eps).sqrt();
                inv_std[ch] = is;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        let xh = (xd[i] - mean) * is;
                        x_hat[i] = xh;
                        out.data_mut()[i] = gd[ch] * xh + bd[ch];
                    }
                }
                let unbiased = if count > 1 { var * m / (m - T::one()) } else { var };
                let mom = state.momentum;
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = mom * *rm + (T::one() - mom) * mean;
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = mom * *rv + (T::one() - mom) * unbiased;
            }
            g.record(
                "batch_norm",
                out,
                &[x, gamma, beta],
                Box::new(BatchNormTrainBackward { x_hat, inv_std }),
            )
        }
        NormMode::Eval => {
            let mean = state.running_mean.data().to_vec();
            let inv_std: Vec<T> = state
                .running_var
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        out.data_mut()[i] = gd[ch] * (xd[i] - mean[ch]) * inv_std[ch] + bd[ch];
                    }
                }
            }
            g.record(
                "batch_norm",
                out,
                &[x, gamma, beta],
                Box::new(BatchNormEvalBackward { inv_std, mean }),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(&[2, 1, 3, 3], 7.5));
        let gamma = g.param(Tensor::full(&[1], 2.0));
        let beta = g.param(Tensor::full(&[1], 0.25));
        let mut st = BatchNormState::new(1);
        let y = batch_norm(&mut g, x, gamma, beta, &mut st, NormMode::Train).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn train_output_is_standardised() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 4)
            .map(|i| ((i * 7919) % 101) as f64 * 0.3 - 4.0)
            .collect();
        let x = g.param(Tensor::from_vec(&[2, 3, 4, 4], data).unwrap());
        let gamma = g.param(Tensor::ones(&[3]));
        let beta = g.param(Tensor::zeros(&[3]));
        let mut st = BatchNormState::new(3);
        let y = batch_norm(&mut g, x, gamma, beta, &mut st, NormMode::Train).unwrap();
        let yv = g.value(y);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| (0..16).map(move |i| (b, i)))
                .map(|(b, i)| yv.data()[(b * 3 + ch) * 16 + i])
                .collect();
            let mean = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn running_stats_update_and_eval_uses_them() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let gamma = g.constant(Tensor::ones(&[1]));
        let beta = g.constant(Tensor::zeros(&[1]));
        let mut st = BatchNormState::new(1);
        batch_norm(&mut g, x, gamma, beta, &mut st, NormMode::Train).unwrap();
        assert!((st.running_mean.data()[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((st.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        let y = batch_norm(&mut g, x, gamma, beta, &mut st, NormMode::Eval).unwrap();
        let expect = (1.0 - 0.25) / (st.running_var.data()[0] + 1e-5).sqrt();
        assert!((g.value(y).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_gamma_length() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[1, 2, 2, 2]));
        let gamma = g.param(Tensor::ones(&[3]));
        let beta = g.param(Tensor::zeros(&[2]));
        let mut st = BatchNormState::new(2);
        assert!(batch_norm(&mut g, x, gamma, beta, &mut st, NormMode::Train).is_err());
    }
}
