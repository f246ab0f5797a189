//! Central finite-difference verification of analytic gradients (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::elementwise::dot_const;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Seeds the output projection and coordinate sampling.
    pub seed: u64,
    /// Inputs to differentiate; the rest enter as constants. `None` = all.
    pub wrt: Option<Vec<usize>>,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords_per_input: Option<usize>,
    /// Lower bound of the relative-error denominator; components whose
    /// gradient is below it are compared in absolute terms scaled by it.
    pub denominator_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            seed: 0x5eed,
            wrt: None,
            max_coords_per_input: None,
            denominator_floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoordError {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordError> {
        self.coords.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.coords.is_empty() {
            return 1.0;
        }
        self.coords.iter().filter(|c| c.rel_error <= tol).count() as f64 / self.coords.len() as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the reverse-mode gradient of `f` against central differences.
///
/// Multi-element outputs are reduced to a scalar through a fixed random
/// projection so that every output element contributes.
pub fn finite_diff_check<F>(inputs: &[Tensor<f64>], cfg: &GradCheckConfig, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let wrt: Vec<usize> = cfg.wrt.clone().unwrap_or_else(|| (0..inputs.len()).collect());
    let mut projection: Option<Tensor<f64>> = None;

    let mut eval = |inputs: &[Tensor<f64>],
                    want_grad: bool,
                    projection: &mut Option<Tensor<f64>>,
                    rng: &mut ChaCha8Rng|
     -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| g.leaf(t.clone(), want_grad && wrt.contains(&i)))
            .collect();
        let out = f(&mut g, &vars)?;
        let root = if g.value(out).numel() == 1 {
            out
        } else {
            let dims = g.value(out).dims().to_vec();
            let proj = projection.get_or_insert_with(|| {
                let n: usize = dims.iter().product();
                Tensor::from_vec(&dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("projection dims")
            });
            dot_const(&mut g, out, proj)?
        };
        let value = g.value(root).item();
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        g.backward(root)?;
        Ok((value, vars.iter().map(|&v| g.grad(v).cloned()).collect()))
    };

    let (_, grads) = eval(inputs, true, &mut projection, &mut rng)?;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &i in &wrt {
        let n = inputs[i].numel();
        let coords: Vec<usize> = match cfg.max_coords_per_input {
            Some(k) if k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                for j in 0..k {
                    let r = rng.gen_range(j..n);
                    all.swap(j, r);
                }
                all.truncate(k);
                all.sort_unstable();
                all
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let orig = inputs[i].data()[idx];
            work[i].data_mut()[idx] = orig + cfg.h;
            let (plus, _) = eval(&work, false, &mut projection, &mut rng)?;
            work[i].data_mut()[idx] = orig - cfg.h;
            let (minus, _) = eval(&work, false, &mut projection, &mut rng)?;
            work[i].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let analytic = grads[i].as_ref().map_or(0.0, |g| g.data()[idx]);
            let rel_error = relative_error(analytic, numeric, cfg.denominator_floor);
            report.max_rel_error = report.max_rel_error.max(rel_error);
            report.coords.push(CoordError {
                input: i,
                index: idx,
                analytic,
                numeric,
                rel_error,
            });
        }
    }
    Ok(report)
}
