use crate::error::{invalid, Result};
use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct ReluBackward;

impl<T: Scalar> Backward<T> for ReluBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let mut out = g.clone();
        for (o, &xi) in out.data_mut().iter_mut().zip(x.data()) {
            // Subgradient 0 at the kink.
            if xi <= T::zero() {
                *o = T::zero();
            }
        }
        vec![Some(out)]
    }
}

/// Element-wise `max(0, x)`.
pub fn relu<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let out = g.value(x).map(|v| v.max(T::zero()));
    g.record("relu", out, &[x], Box::new(ReluBackward))
}

struct ClampBackward<T> {
    lo: T,
    hi: T,
}

impl<T: Scalar> Backward<T> for ClampBackward<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut out = g.clone();
        for (o, &xi) in out.data_mut().iter_mut().zip(inputs[0].data()) {
            if xi < self.lo || xi > self.hi {
                *o = T::zero();
            }
        }
        vec![Some(out)]
    }
}

/// Hard clamp to `[lo, hi]`; the gradient is zero outside the range.
pub fn clamp<T: Scalar>(g: &mut Graph<T>, x: Var, lo: T, hi: T) -> Result<Var> {
    if !(lo < hi) {
        return Err(invalid("clamp", format!("lo ({lo}) must be below hi ({hi})")));
    }
    let out = g.value(x).map(|v| v.max(lo).min(hi));
    g.record("clamp", out, &[x], Box::new(ClampBackward { lo, hi }))
}

struct AddBackward;

impl<T: Scalar> Backward<T> for AddBackward {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

pub fn add<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    g.value(a).same_dims(g.value(b), "add")?;
    let mut out = g.value(a).clone();
    out.add_assign(g.value(b));
    g.record("add", out, &[a, b], Box::new(AddBackward))
}

struct ScaleBackward<T>(T);

impl<T: Scalar> Backward<T> for ScaleBackward<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.map(|v| v * self.0))]
    }
}

/// Multiplication by a constant.
pub fn scale<T: Scalar>(g: &mut Graph<T>, x: Var, factor: T) -> Result<Var> {
    let out = g.value(x).map(|v| v * factor);
    g.record("scale", out, &[x], Box::new(ScaleBackward(factor)))
}

struct SumBackward;

impl<T: Scalar> Backward<T> for SumBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(inputs[0].dims(), g.item()))]
    }
}

/// Sum of all elements, as a one-element tensor.
pub fn sum<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let out = Tensor::scalar(g.value(x).sum());
    g.record("sum", out, &[x], Box::new(SumBackward))
}

pub fn mean<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let n = T::from_usize_lossy(g.value(x).numel());
    let s = sum(g, x)?;
    scale(g, s, T::one() / n)
}

struct DotConstBackward<T: Scalar>(Tensor<T>);

impl<T: Scalar> Backward<T> for DotConstBackward<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = g.item();
        vec![Some(self.0.map(|w| w * s))]
    }
}

/// `sum(x * weights)` with constant weights of identical shape.
pub fn dot_const<T: Scalar>(g: &mut Graph<T>, x: Var, weights: &Tensor<T>) -> Result<Var> {
    g.value(x).same_dims(weights, "dot_const")?;
    let v: T = g.value(x).data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
    g.record(
        "dot_const",
        Tensor::scalar(v),
        &[x],
        Box::new(DotConstBackward(weights.clone())),
    )
}
