use indexmap::IndexMap;
use rand::Rng;

use crate::scalar::Real;

use super::DiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Glorot-uniform `rows×cols` weight matrix; fan-in is `rows`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = glorot_bound(rows, cols);
        let data = (0..rows * cols).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, p: Param<T>) -> Result<usize, DiffError> {
        let name = name.into();
        if p.data.len() != p.rows * p.cols {
            return Err(DiffError::Shape { op: "param", left: (p.rows, p.cols), right: (p.data.len(), 1) });
        }
        if self.params.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        let (idx, _) = self.params.insert_full(name, p);
        Ok(idx)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn get_index(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get_index_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    pub fn name_of(&self, idx: usize) -> &str {
        self.params.get_index(idx).map(|(k, _)| k.as_str()).unwrap_or("")
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

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(Param::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    let data = p.data.iter().map(|v| U::lit(v.to_f64_lossless())).collect();
                    (k.clone(), Param { rows: p.rows, cols: p.cols, data })
                })
                .collect(),
        }
    }
}
