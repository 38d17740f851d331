use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::tape::{Tape, Var};
use super::AutodiffError;

/// Which part of the model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Feature extractor (theta).
    Backbone,
    /// Searchable prediction head and output layers (omega).
    Head,
    /// Architecture logits (delta).
    Arch,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub group: ParamGroup,
    pub value: Tensor<T>,
}

/// Named parameters in insertion order. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
}

/// Gradient per parameter name.
pub type GradMap<T> = IndexMap<String, Tensor<T>>;

/// Tape handles for the parameters of one [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var, AutodiffError> {
        self.vars.get(name).copied().ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        self.params.insert(name, Param { group, value });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over a set of groups.
    pub fn count(&self, groups: &[ParamGroup]) -> usize {
        self.params.values().filter(|p| groups.contains(&p.group)).map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a tape leaf; only `trainable` groups require gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: &[ParamGroup]) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), tape.leaf(p.value.clone(), trainable.contains(&p.group))))
            .collect();
        Bindings { vars }
    }

    /// Removes every parameter of `group`.
    pub fn remove_group(&mut self, group: ParamGroup) {
        self.params.retain(|_, p| p.group != group);
    }
}

/// Backpropagates `loss` and collects gradients for every bound parameter that
/// requires them. Parameters the loss does not reach get a zero gradient.
pub fn forward_backward<T: Scalar>(
    tape: &Tape<T>,
    loss: Var,
    bindings: &Bindings,
) -> Result<GradMap<T>, AutodiffError> {
    let mut grads = tape.backward(loss)?;
    let mut out = GradMap::new();
    for (name, var) in bindings.iter() {
        if !tape.requires_grad(var) {
            continue;
        }
        let g = grads.take(var).unwrap_or_else(|| Tensor::zeros(tape.shape(var).to_vec()));
        out.insert(name.to_string(), g);
    }
    Ok(out)
}

/// Plain SGD, `p <- p - lr * g`, on the parameters of `groups`.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &GradMap<T>,
    lr: T,
    groups: &[ParamGroup],
) -> Result<(), AutodiffError> {
    if !(lr > T::zero()) {
        return Err(AutodiffError::Contract(format!("learning rate must be positive, got {lr}")));
    }
    for (name, p) in params.params.iter_mut().filter(|(_, p)| groups.contains(&p.group)) {
        let g = grads.get(name).ok_or_else(|| AutodiffError::MissingGradient(name.clone()))?;
        if g.shape() != p.value.shape() {
            return Err(AutodiffError::Contract(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
        p.value.axpy(-lr, g);
    }
    Ok(())
}
