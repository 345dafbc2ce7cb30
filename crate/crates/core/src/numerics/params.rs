use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Named tensors with lexicographic iteration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

/// How a freshly declared parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `(-INIT_RANGE, INIT_RANGE)`.
    Uniform,
    Zeros,
    Ones,
}

pub const INIT_RANGE: f64 = 0.08;

/// A parameter declaration: name, shape and initializer.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, dims: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            dims: dims.to_vec(),
            init,
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Materializes declarations in the order given, drawing uniform values
    /// from `rng` for every `Init::Uniform` entry.
    pub fn initialize(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut set = ParamSet::new();
        for spec in specs {
            let mut t = Tensor::zeros(&spec.dims);
            match spec.init {
                Init::Uniform => {
                    for v in t.data_mut() {
                        *v = rng.gen_range(-INIT_RANGE..INIT_RANGE);
                    }
                }
                Init::Zeros => {}
                Init::Ones => t.data_mut().fill(1.0),
            }
            if set.tensors.insert(spec.name.clone(), t).is_some() {
                return Err(Error::invalid(format!("duplicate parameter `{}`", spec.name)));
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims())))
                .collect(),
        }
    }

    /// Elementwise `self += other`; keys and shapes must match.
    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_compatible(other)?;
        for (name, t) in &mut self.tensors {
            t.add_assign(&other.tensors[name]);
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.values_mut() {
            t.scale_assign(c);
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// Largest elementwise absolute difference; infinite if keys or shapes differ.
    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        if self.check_compatible(other).is_err() {
            return f64::INFINITY;
        }
        self.tensors
            .iter()
            .map(|(k, t)| t.max_abs_diff(&other.tensors[k]))
            .fold(0.0, f64::max)
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::invalid("parameter sets have different sizes"));
        }
        for (name, t) in &self.tensors {
            let o = other
                .tensors
                .get(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if o.dims() != t.dims() {
                return Err(Error::Shape {
                    op: "param_set",
                    lhs: t.dims().to_vec(),
                    rhs: o.dims().to_vec(),
                });
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}

impl IntoIterator for ParamSet {
    type Item = (String, Tensor);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.into_iter()
    }
}
