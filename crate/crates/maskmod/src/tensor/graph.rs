//! The recording graph (tape) and reverse-mode backward pass.

use std::collections::HashMap;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Borrowed view of a tensor's shape and values.
#[derive(Clone, Copy)]
pub struct View<'a, E> {
    pub shape: &'a [usize],
    pub data: &'a [E],
}

impl<'a, E: Element> View<'a, E> {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Arguments handed to a node's backward rule.
///
/// Backward rules are pure: anything they need (batch statistics, argmax
/// positions, softmax values) is recomputed from the recorded input and
/// output values.
pub struct BwdArgs<'a, E: Element> {
    /// Gradient of the loss with respect to this node's output.
    pub upstream: &'a [E],
    /// Input values at forward time.
    pub inputs: &'a [View<'a, E>],
    /// Output value at forward time.
    pub output: View<'a, E>,
    /// Which inputs actually need a gradient; rules may skip the others.
    pub needs: &'a [bool],
}

type BackwardRule<E> = Box<dyn Fn(&BwdArgs<'_, E>) -> Vec<Option<Vec<E>>>>;

struct Node<E: Element> {
    name: String,
    inputs: Vec<Tensor<E>>,
    output: Tensor<E>,
    backward: BackwardRule<E>,
}

/// An ordered record of operations for one forward/backward pass.
///
/// Nodes are replayed in reverse creation order, which is a valid topological
/// order because an operation's inputs always exist before its output. A
/// node's backward rule is whatever was registered with it; it may
/// deliberately differ from the analytic derivative of the forward rule,
/// which is how the straight-through mask estimator is expressed.
pub struct Graph<E: Element> {
    nodes: std::cell::RefCell<Vec<Node<E>>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an operation on the tape.
    ///
    /// `fwd` computes the output shape and values from the input views.
    /// `bwd` maps the upstream gradient to per-input gradients (`None` for
    /// inputs the rule does not differentiate). The output requires a
    /// gradient iff any input does.
    pub fn forward_op(
        &self,
        name: &str,
        inputs: &[&Tensor<E>],
        fwd: impl FnOnce(&[View<'_, E>]) -> Result<(Vec<usize>, Vec<E>)>,
        bwd: impl Fn(&BwdArgs<'_, E>) -> Vec<Option<Vec<E>>> + 'static,
    ) -> Result<Tensor<E>> {
        let borrows: Vec<_> = inputs.iter().map(|t| t.borrow_inner()).collect();
        let views: Vec<View<'_, E>> = borrows.iter().map(|b| b.view()).collect();
        let (shape, data) = fwd(&views)?;
        drop(borrows);

        let output = Tensor::new(shape, data)?;
        if inputs.iter().any(|t| t.is_requires_grad()) {
            output.set_requires_grad(true);
        }
        self.nodes.borrow_mut().push(Node {
            name: name.to_string(),
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            output: output.clone(),
            backward: Box::new(bwd),
        });
        Ok(output)
    }

    /// Runs the backward pass from a scalar loss.
    ///
    /// The seed gradient is 1. Gradients are accumulated (summed) into the
    /// `grad` buffer of every requires-grad tensor reachable from the loss;
    /// the flow between nodes uses transient buffers, so running backward
    /// again on the same graph accumulates the same contribution a second
    /// time.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss.shape(),
            });
        }
        if !loss.is_requires_grad() {
            return Err(Error::LossWithoutGrad);
        }

        let nodes = self.nodes.borrow();
        // Map storage identity -> producing node, so input gradients can be
        // routed to the right transient buffer.
        let mut producer: HashMap<usize, usize> = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            producer.insert(node.output.storage_key(), i);
        }

        let mut flow: Vec<Option<Vec<E>>> = (0..nodes.len()).map(|_| None).collect();
        match producer.get(&loss.storage_key()) {
            Some(&i) => flow[i] = Some(vec![E::one()]),
            None => {
                // A leaf loss: nothing to replay.
                loss.accumulate_grad(&[E::one()]);
                return Ok(());
            }
        }

        for i in (0..nodes.len()).rev() {
            let upstream = match flow[i].take() {
                Some(u) => u,
                None => continue,
            };
            let node = &nodes[i];
            node.output.accumulate_grad(&upstream);

            let needs: Vec<bool> = node.inputs.iter().map(|t| t.is_requires_grad()).collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }

            let grads = {
                let borrows: Vec<_> = node.inputs.iter().map(|t| t.borrow_inner()).collect();
                let views: Vec<View<'_, E>> = borrows.iter().map(|b| b.view()).collect();
                let out_borrow = node.output.borrow_inner();
                let args = BwdArgs {
                    upstream: &upstream,
                    inputs: &views,
                    output: out_borrow.view(),
                    needs: &needs,
                };
                (node.backward)(&args)
            };
            assert_eq!(
                grads.len(),
                node.inputs.len(),
                "backward rule of `{}` must return one slot per input",
                node.name
            );

            for (j, grad) in grads.into_iter().enumerate() {
                if !needs[j] {
                    continue;
                }
                let grad = match grad {
                    Some(g) => g,
                    None => continue,
                };
                let input = &node.inputs[j];
                assert_eq!(
                    grad.len(),
                    input.numel(),
                    "backward rule of `{}` returned a gradient of wrong length for input {}",
                    node.name,
                    j
                );
                match producer.get(&input.storage_key()) {
                    Some(&p) if p < i => match flow[p].as_mut() {
                        Some(buf) => {
                            for (b, g) in buf.iter_mut().zip(&grad) {
                                *b = *b + *g;
                            }
                        }
                        None => flow[p] = Some(grad),
                    },
                    // Graph leaves (parameters, inputs) accumulate directly.
                    _ => input.accumulate_grad(&grad),
                }
            }
        }
        Ok(())
    }
}
