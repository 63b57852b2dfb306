use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Where a parameter's starting value came from. Fresh parameters train at a
/// boosted learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Inherited,
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub origin: Origin,
}

/// Named parameters in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

pub const INIT_STD: f64 = 0.02;
/// Scale of the stand-in token, class and position tables, comparable to
/// the unit-variance output of a fan-in scaled projection.
pub const EMBED_STD: f64 = 1.0;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, origin: Origin) {
        self.params.insert(name.into(), Param { value, origin });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    /// Copies every parameter of `other` into `self`, overwriting.
    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Subset whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    // -- initializers ------------------------------------------------------

    pub fn init_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) {
        let data = (0..rows * cols).map(|_| rng.trunc_normal(std)).collect();
        self.insert(
            name,
            Tensor::new(&[rows, cols], data).expect("positive extents"),
            Origin::Fresh,
        );
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(&[rows, cols]), Origin::Fresh);
    }

    pub fn init_ones(&mut self, name: &str, cols: usize) {
        self.insert(name, Tensor::full(&[1, cols], 1.0), Origin::Fresh);
    }

    pub fn init_const(&mut self, name: &str, value: f64) {
        self.insert(name, Tensor::full(&[1, 1], value), Origin::Fresh);
    }
}
