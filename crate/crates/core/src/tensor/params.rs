use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which learning-rate group a parameter is trained in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroupKind {
    /// Word-vector table.
    WordVectors,
    /// Everything else.
    Main,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroupKind,
    /// Row that never receives gradient (padding row of an embedding table).
    pub frozen_row: Option<usize>,
    /// Frozen parameters still receive gradients but are left out of
    /// optimizer groups.
    pub trainable: bool,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, mut value: Tensor, group: ParamGroupKind) -> ParamId {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name {name}"
        );
        value.requires_grad = true;
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            group,
            frozen_row: None,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn set_frozen_row(&mut self, id: ParamId, row: usize) {
        self.params[id.0].frozen_row = Some(row);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Sets every gradient to an explicit zero buffer.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.grad = Some(vec![0.0; p.value.numel()]);
        }
    }

    /// Drops every gradient buffer.
    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.value.grad = None;
        }
    }

    /// Adds `grad` into the accumulated gradient of `id`.
    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        let n = p.value.data().len();
        let buf = p.value.grad.get_or_insert_with(|| vec![0.0; n]);
        for (b, g) in buf.iter_mut().zip(grad) {
            *b += g;
        }
    }

    pub(crate) fn accumulate_row(&mut self, id: ParamId, row: usize, grad: &[f64]) {
        let p = &mut self.params[id.0];
        if p.frozen_row == Some(row) {
            return;
        }
        let cols = p.value.cols();
        let n = p.value.data().len();
        let buf = p.value.grad.get_or_insert_with(|| vec![0.0; n]);
        for (b, g) in buf[row * cols..(row + 1) * cols].iter_mut().zip(grad) {
            *b += g;
        }
    }

    /// Replaces the values of all parameters, checking names and shapes.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
