use super::ops::BatchNormCache;
use super::Tensor;

/// Per-node state saved during a training forward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    None,
    Conv { cols: Vec<T> },
    MaxPool { argmax: Vec<usize> },
    BatchNorm(BatchNormCache<T>),
    Dropout(Option<Vec<T>>),
}

/// Record of one forward pass: every node's output plus whatever its backward
/// kernel needs. After `backward` it also holds one gradient per trainable
/// parameter that was reachable from the loss.
#[derive(Debug, Clone)]
pub struct GradTape<T> {
    pub(crate) values: Vec<Tensor<T>>,
    pub(crate) caches: Vec<Cache<T>>,
    pub(crate) grads: Vec<Option<Tensor<T>>>,
    pub(crate) param_names: Vec<String>,
}

impl<T> GradTape<T> {
    pub(crate) fn new(param_names: Vec<String>, nodes: usize) -> Self {
        GradTape {
            values: Vec::with_capacity(nodes),
            caches: Vec::with_capacity(nodes),
            grads: (0..param_names.len()).map(|_| None).collect(),
            param_names,
        }
    }

    pub(crate) fn record(&mut self, value: Tensor<T>, cache: Cache<T>) {
        self.values.push(value);
        self.caches.push(cache);
    }

    /// Output of the node at `index` in graph order.
    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.values[index]
    }

    pub fn output(&self) -> &Tensor<T> {
        self.values.last().expect("tape records at least the input node")
    }

    /// Gradient for the named parameter, if one was computed.
    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        let idx = self.param_names.iter().position(|n| n == name)?;
        self.grads[idx].as_ref()
    }

    /// Gradients indexed like the model's parameter list.
    pub fn grads(&self) -> &[Option<Tensor<T>>] {
        &self.grads
    }

    pub fn into_grads(self) -> Vec<Option<Tensor<T>>> {
        self.grads
    }
}
