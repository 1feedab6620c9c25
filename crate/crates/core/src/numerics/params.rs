use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Which side of the online/target pairing a store plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Trained by gradients (θ).
    Online,
    /// Moving average of the online weights (ξ); never touched by gradients.
    Target,
}

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    role: Role,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            tensors: BTreeMap::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
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

    /// Total scalar count, optionally restricted to names starting with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Copy of the entries whose names start with `prefix`, under a new role.
    pub fn subset(&self, prefixes: &[&str], role: Role) -> Self {
        let tensors = self
            .tensors
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self { role, tensors }
    }

    pub fn merge(&mut self, other: Self) {
        self.tensors.extend(other.tensors);
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            role: self.role,
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Check that `other` holds exactly the same names with the same shapes.
    pub fn check_paired(&self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::NameMismatch(format!(
                "{} vs {} entries",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.tensors.iter().zip(&other.tensors) {
            if a != b {
                return Err(Error::NameMismatch(format!("'{a}' vs '{b}'")));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::NameMismatch(format!(
                    "'{a}' has shapes {:?} and {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    inner: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn insert(&mut self, name: String, g: Tensor<T>) {
        self.inner.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.inner.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.inner.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    /// L2 norm over every entry whose name starts with `prefix`.
    pub fn norm(&self, prefix: &str) -> f64 {
        self.inner
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, g)| g.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Normal(0, std) samples truncated to two standard deviations by resampling.
pub fn trunc_normal<T: Real, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::lit(v);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}
