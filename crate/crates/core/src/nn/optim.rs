use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor together with its momentum velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub velocity: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let velocity = Tensor::zeros(value.shape());
        Self { value, velocity }
    }
}

/// Named trainable parameters, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: BTreeMap<String, Param<T>>,
}

pub type Grads<T> = BTreeMap<String, Tensor<T>>;

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    /// Inserts a parameter with an explicit velocity (checkpoint restore).
    pub fn insert_with_velocity(&mut self, name: impl Into<String>, value: Tensor<T>, velocity: Tensor<T>) -> Result<()> {
        let name = name.into();
        if value.shape() != velocity.shape() {
            return Err(Error::shape(
                "param_set",
                format!("velocity {:?} vs value {:?} for {name}", velocity.shape(), value.shape()),
            ));
        }
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, Param { value, velocity });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn reset_velocity(&mut self) {
        for p in self.params.values_mut() {
            p.velocity = Tensor::zeros(p.value.shape());
        }
    }

    /// One SGD-with-momentum step: `v ← μ·v + g`, then `θ ← θ − lr·v`.
    pub fn sgd_momentum_step(&mut self, grads: &Grads<T>, lr: f64, momentum: f64) -> Result<()> {
        let mismatched: Vec<String> = self
            .params
            .keys()
            .filter(|k| !grads.contains_key(*k))
            .chain(grads.keys().filter(|k| !self.params.contains_key(*k)))
            .cloned()
            .collect();
        if !mismatched.is_empty() {
            return Err(Error::NameMismatch { names: mismatched });
        }
        for (name, p) in self.params.iter() {
            if grads[name].shape() != p.value.shape() {
                return Err(Error::shape(
                    "sgd_momentum_step",
                    format!("gradient {:?} vs parameter {:?} for {name}", grads[name].shape(), p.value.shape()),
                ));
            }
        }
        let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
        for (name, p) in self.params.iter_mut() {
            let g = grads[name].data();
            let v = p.velocity.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = mu * *vi + gi;
            }
            for (w, &vi) in p.value.data_mut().iter_mut().zip(p.velocity.data()) {
                *w -= lr * vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(theta: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.insert("theta", Tensor::from_f64(&[1], &[theta]).unwrap()).unwrap();
        ps
    }

    fn grad(g: f64) -> Grads<f64> {
        BTreeMap::from([("theta".to_string(), Tensor::from_f64(&[1], &[g]).unwrap())])
    }

    #[test]
    fn plain_sgd_step() {
        let mut ps = scalar_set(1.0);
        ps.sgd_momentum_step(&grad(1.0), 0.1, 0.0).unwrap();
        assert!((ps.get("theta").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_on_quadratic() {
        // f(θ) = θ²/2 so g = θ
        let mut ps = scalar_set(1.0);
        let theta = |ps: &ParamSet<f64>| ps.get("theta").unwrap().data()[0];
        ps.sgd_momentum_step(&grad(theta(&ps)), 0.1, 0.9).unwrap();
        assert!((theta(&ps) - 0.9).abs() < 1e-15);
        ps.sgd_momentum_step(&grad(theta(&ps)), 0.1, 0.9).unwrap();
        assert!((ps.param("theta").unwrap().velocity.data()[0] - 1.8).abs() < 1e-15);
        assert!((theta(&ps) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_still_moves_with_velocity() {
        let mut ps = scalar_set(1.0);
        ps.sgd_momentum_step(&grad(1.0), 0.1, 0.9).unwrap();
        let before = ps.get("theta").unwrap().data()[0];
        ps.sgd_momentum_step(&grad(0.0), 0.1, 0.9).unwrap();
        let after = ps.get("theta").unwrap().data()[0];
        assert!((before - after - 0.1 * 0.9 * 1.0).abs() < 1e-15);
    }

    #[test]
    fn name_mismatch_lists_symmetric_difference() {
        let mut ps = scalar_set(1.0);
        let g = BTreeMap::from([("other".to_string(), Tensor::<f64>::zeros(&[1]))]);
        match ps.sgd_momentum_step(&g, 0.1, 0.9) {
            Err(Error::NameMismatch { names }) => assert_eq!(names, vec!["theta", "other"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = scalar_set(1.0);
        assert!(ps.insert("theta", Tensor::zeros(&[1])).is_err());
    }
}
