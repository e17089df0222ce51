use rand::Rng;

use super::TokenMatrix;
use crate::error::{Error, Result};

/// Index of a [`Parameter`] inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with a gradient accumulator of the same shape.
///
/// Shape is `[rows, cols]` for weights and `[cols]` for biases and
/// normalization scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n || shape.is_empty() || shape.len() > 2 {
            return Err(Error::Shape {
                op: "Parameter::new",
                left: (shape.len(), n),
                right: (values.len(), 1),
            });
        }
        Ok(Self {
            name: name.into(),
            grad: vec![0.0; n],
            shape,
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Matrix view: weights keep their shape, vectors become one row.
    pub fn as_matrix(&self) -> TokenMatrix {
        let (r, c) = self.matrix_shape();
        TokenMatrix::new(r, c, self.values.clone()).expect("parameter shape invariant")
    }

    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape[..] {
            [c] => (1, c),
            [r, c] => (r, c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Ordered collection of parameters, addressed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Parameter) -> ParamId {
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    /// Weight of shape `fan_in × fan_out`, uniform in ±1/√fan_in.
    pub fn init_weight<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.push(Parameter::new(name, vec![fan_in, fan_out], values).expect("shape"))
    }

    /// Bias of length `fan_out`, uniform in ±1/√fan_in.
    pub fn init_bias<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.push(Parameter::new(name, vec![fan_out], values).expect("shape"))
    }

    pub fn constant(&mut self, name: impl Into<String>, len: usize, value: f64) -> ParamId {
        self.push(Parameter::new(name, vec![len], vec![value; len]).expect("shape"))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }
}
