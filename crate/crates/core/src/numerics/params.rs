use std::collections::HashMap;

use rand::Rng;

use super::{NumericsError, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a layout bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    /// Glorot-uniform initialised `rows x cols` matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as Real).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::new(rows, cols, data).expect("sized"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        let id = self
            .id(name)
            .ok_or_else(|| NumericsError::shape("ParamSet::assign", format!("unknown parameter {name}")))?;
        if self.tensors[id.0].shape() != value.shape() {
            return Err(NumericsError::shape(
                "ParamSet::assign",
                format!("{name}: {:?} vs {:?}", self.tensors[id.0].shape(), value.shape()),
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    /// Zero-valued gradient buffers matching this set's layout.
    pub fn zeros_like(&self) -> GradSet {
        GradSet {
            grads: self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }
}

/// Per-parameter gradients in [`ParamSet`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    grads: Vec<Tensor>,
}

impl GradSet {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn add_assign(&mut self, other: &GradSet) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: Real) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> Real {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|x| x * x)
            .sum::<Real>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: Real) -> Real {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}
