use crate::scalar::Scalar;

use super::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is (re)initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight or embedding matrix: uniform in a symmetric range.
    Weight,
    /// Bias vector: zeros.
    Bias,
    /// LSTM gate bias over `[input, forget, output, candidate]` blocks of the
    /// given width: zeros except ones on the forget block.
    LstmBias { hidden: usize },
    /// Normalization scale: ones.
    Gain,
}

/// Named collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            kinds: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.add_kind(name, value, ParamKind::Weight)
    }

    pub fn add_kind(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.kinds.push(kind);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.values
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (v, n))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    /// Largest absolute elementwise difference to another store of identical layout.
    pub fn max_abs_diff(&self, other: &ParamStore<T>) -> T {
        let mut m = T::zero();
        for (a, b) in self.values.iter().zip(&other.values) {
            for (x, y) in a.data().iter().zip(b.data()) {
                m = m.max((*x - *y).abs());
            }
        }
        m
    }
}

/// Dense gradient buffers, one per parameter, accumulated until zeroed.
#[derive(Debug, Clone)]
pub struct GradStore<T: Scalar> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Self {
            grads: params.values.iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(T::zero());
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Euclidean norm over the given parameters.
    pub fn norm(&self, ids: &[ParamId]) -> T {
        let mut sq = T::zero();
        for id in ids {
            for g in self.grads[id.0].data() {
                sq += *g * *g;
            }
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, ids: &[ParamId], factor: T) {
        for id in ids {
            for g in self.grads[id.0].data_mut() {
                *g *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }

    /// True when every entry of the given parameter's gradient is exactly zero.
    pub fn is_zero(&self, id: ParamId) -> bool {
        self.grads[id.0].data().iter().all(|g| *g == T::zero())
    }
}
