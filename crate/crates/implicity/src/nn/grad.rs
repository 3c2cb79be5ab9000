//! Named gradient accumulation and parameter traversal.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::scalar::Scalar;

/// Gradients keyed by parameter name. BTreeMap keeps reduction and update
/// order fixed, which makes training bit-reproducible.
#[derive(Debug, Clone)]
pub struct Grads<F: Scalar> {
    pub map: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> Default for Grads<F> {
    fn default() -> Self {
        Grads { map: BTreeMap::new() }
    }
}

impl<F: Scalar> Grads<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acc(&mut self, name: &str, g: ArrayD<F>) {
        match self.map.get_mut(name) {
            Some(t) => *t = &*t + &g,
            None => {
                let g = if g.is_standard_layout() { g } else { g.as_standard_layout().to_owned() };
                self.map.insert(name.to_string(), g);
            }
        }
    }

    /// Merge another gradient set into this one, element-wise.
    pub fn merge(&mut self, other: Grads<F>) {
        for (k, g) in other.map {
            self.acc(&k, g);
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.map.get(name)
    }
}

/// Anything holding named parameter tensors.
pub trait Module<F: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n.to_string()));
        names
    }
}
