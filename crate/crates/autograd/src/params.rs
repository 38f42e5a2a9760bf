use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Per-parameter optimizer memory.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub state: MomentState<T>,
    /// Buffers (running statistics, frozen maps) are stored and checkpointed
    /// but never receive gradients or optimizer updates.
    pub trainable: bool,
}

/// Named parameters of one network, plus a read counter used to prove that
/// a code path never touched the network.
#[derive(Debug)]
pub struct ParamStore<T> {
    label: String,
    params: Vec<Parameter<T>>,
    reads: AtomicU64,
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            label: self.label.clone(),
            params: self.params.clone(),
            reads: AtomicU64::new(self.reads()),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            params: Vec::new(),
            reads: AtomicU64::new(0),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let n = value.numel();
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            state: MomentState {
                first: vec![T::zero(); n],
                second: vec![T::zero(); n],
                steps: 0,
            },
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.insert(name, value, false)
    }

    /// Uniform in `±sqrt(3 / fan_in)`, i.e. unit-variance pre-activations for unit inputs.
    pub fn add_fan_in_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        self.add_uniform(name, shape, bound, rng)
    }

    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        let value = Tensor::new(shape, data).expect("length matches shape");
        self.add(name, value)
    }

    /// Value read that counts as an access.
    pub fn read(&self, id: ParamId) -> &Tensor<T> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.params[id.0].value
    }

    /// Number of [`read`](Self::read) calls so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Adds the gradients `graph` computed for this store's bound parameters.
    /// Parameters that were not bound, or that the loss did not reach, keep
    /// their current gradient (zero after [`zero_grads`](Self::zero_grads)).
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) -> Result<()> {
        for b in graph.bindings().iter().filter(|b| b.store == self.label) {
            let Some(g) = graph.grad(b.var) else {
                continue;
            };
            let p = &mut self.params[b.id.0];
            if !p.trainable {
                continue;
            }
            if g.shape() != p.grad.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "accumulate_grads",
                    lhs: p.grad.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.all_finite() && p.grad.all_finite())
    }
}
