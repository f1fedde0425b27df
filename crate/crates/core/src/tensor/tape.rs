use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule can see.
pub struct BackwardArgs<'a, F> {
    pub inputs: Vec<(&'a [F], &'a [usize])>,
    pub output: &'a [F],
    pub out_shape: &'a [usize],
    pub grad: &'a [F],
    /// Which inputs need a gradient; rules may skip the rest.
    pub needs: Vec<bool>,
}

/// A recorded differentiable operation.
pub trait Function<F: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradient contribution for each input, aligned with the node's inputs.
    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>>;
}

struct Node<F> {
    value: Vec<F>,
    shape: Vec<usize>,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function<F>>>,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape. One tape per forward pass.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    check_finite: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite: false,
        }
    }

    /// Enables the NaN/Inf assertion after every op.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes and gradients.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn leaf(&mut self, tensor: &Tensor<F>) -> Var {
        self.raw_leaf(tensor.data().to_vec(), tensor.shape().to_vec(), tensor.requires_grad)
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape("constant", &shape, &[data.len()]));
        }
        Ok(self.raw_leaf(data, shape, false))
    }

    pub fn variable(&mut self, shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape("variable", &shape, &[data.len()]));
        }
        Ok(self.raw_leaf(data, shape, true))
    }

    fn raw_leaf(&mut self, value: Vec<F>, shape: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            inputs: Vec::new(),
            func: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Total number of elements held by all nodes.
    pub fn stored_values(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    /// Appends an op node. Used by every differentiable operation.
    pub fn push(
        &mut self,
        value: Vec<F>,
        shape: Vec<usize>,
        inputs: Vec<Var>,
        func: Box<dyn Function<F>>,
    ) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if self.check_finite && !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: func.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            shape,
            inputs,
            func: Some(func),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires one. `loss` must hold a single element.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(func) = &node.func {
                if node.requires_grad {
                    let needs: Vec<bool> = node
                        .inputs
                        .iter()
                        .map(|v| self.nodes[v.0].requires_grad)
                        .collect();
                    let args = BackwardArgs {
                        inputs: node
                            .inputs
                            .iter()
                            .map(|v| {
                                let n = &self.nodes[v.0];
                                (n.value.as_slice(), n.shape.as_slice())
                            })
                            .collect(),
                        output: &node.value,
                        out_shape: &node.shape,
                        grad: &grad,
                        needs: needs.clone(),
                    };
                    let input_grads = func.backward(args);
                    for ((input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                        let Some(g) = g else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(g.len(), self.nodes[input.0].value.len(), "{}", func.name());
                        match &mut grads[input.0] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
            grads[idx] = Some(grad);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
