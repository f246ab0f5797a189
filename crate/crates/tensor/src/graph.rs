//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and, when any
//! input requires a gradient, a [`Backward`] rule. Nodes are appended in
//! evaluation order, so a reverse sweep over the tape is a valid topological
//! order for gradient propagation.

use std::collections::BTreeMap;

use crate::error::{invalid, Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rule of a recorded operation.
///
/// Returns one entry per input; `None` means the input receives no gradient
/// from this operation.
pub trait Backward<T: Scalar>: Send + Sync {
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_output: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    scopes: Vec<&'static str>,
    counts: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            scopes: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            inputs: Vec::new(),
            rule: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends the result of an operation.
    ///
    /// The output must be finite; the rule is kept only when some input
    /// participates in differentiation.
    pub fn record(
        &mut self,
        op: &'static str,
        output: Tensor<T>,
        inputs: &[Var],
        rule: Box<dyn Backward<T>>,
    ) -> Result<Var> {
        output.ensure_finite(op)?;
        let key = if self.scopes.is_empty() {
            op.to_string()
        } else {
            format!("{}/{}", self.scopes.join("/"), op)
        };
        *self.counts.entry(key).or_insert(0) += 1;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: output,
            grad: None,
            requires_grad,
            inputs: inputs.to_vec(),
            rule: requires_grad.then_some(rule),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Runs `f` with `name` pushed on the op-count scope stack.
    pub fn scoped<R>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.scopes.push(name);
        let out = f(self);
        self.scopes.pop();
        out
    }

    /// Number of recorded operations named `op` under scope path `scope`
    /// (`""` for the root scope).
    pub fn op_count(&self, scope: &str, op: &str) -> usize {
        let key = if scope.is_empty() {
            op.to_string()
        } else {
            format!("{scope}/{op}")
        };
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn op_counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    /// Backpropagates from a single-element `root` seeded with 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let dims = self.nodes[root.0].value.dims().to_vec();
        if self.nodes[root.0].value.numel() != 1 {
            return Err(invalid(
                "backward",
                format!("root must hold one element, has dims {dims:?}"),
            ));
        }
        self.backward_with(root, Tensor::ones(&dims))
    }

    pub fn backward_with(&mut self, root: Var, seed: Tensor<T>) -> Result<()> {
        self.nodes[root.0].value.same_dims(&seed, "backward")?;
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(grad_out) = self.nodes[idx].grad.take() else {
                continue;
            };
            if let Some(rule) = self.nodes[idx].rule.as_ref() {
                let inputs: Vec<&Tensor<T>> = self.nodes[idx].inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let grads = rule.backward(&inputs, &self.nodes[idx].value, &grad_out);
                let targets = self.nodes[idx].inputs.clone();
                debug_assert_eq!(grads.len(), targets.len());
                for (target, g) in targets.into_iter().zip(grads) {
                    let Some(g) = g else { continue };
                    let node = &mut self.nodes[target.0];
                    if !node.requires_grad {
                        continue;
                    }
                    g.ensure_finite("backward")?;
                    if g.dims() != node.value.dims() {
                        return Err(TensorError::ShapeMismatch {
                            op: "backward",
                            dim: format!("gradient of node {}", target.0),
                            expected: format!("{:?}", node.value.dims()),
                            actual: format!("{:?}", g.dims()),
                        });
                    }
                    match node.grad.as_mut() {
                        Some(acc) => acc.add_assign(&g),
                        None => node.grad = Some(g),
                    }
                }
            }
            self.nodes[idx].grad = Some(grad_out);
        }
        Ok(())
    }
}
