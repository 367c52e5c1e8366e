use std::collections::HashMap;

use ndarray::Array2;

use super::AutodiffError;
use crate::real::Real;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor together with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
    /// Whether L2 weight decay applies to this parameter.
    pub weight_decay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Array2<T>,
        weight_decay: bool,
    ) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Parameter {
            name,
            value,
            grad,
            weight_decay,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Copies of every parameter value, in id order.
    pub fn snapshot(&self) -> Vec<Array2<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<T>]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot size");
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            assert_eq!(p.value.dim(), v.dim(), "snapshot shape for {}", p.name);
            p.value.assign(v);
        }
    }

    /// Euclidean norm of each parameter, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| {
                let sq: f64 = p.value.iter().map(|v| v.as_f64().powi(2)).sum();
                (p.name.clone(), sq.sqrt())
            })
            .collect()
    }
}
