use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::{precision, Tensor};

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    frozen: bool,
}

impl Parameter {
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}

/// Ordered collection of parameters addressed by slash-separated names.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `tensor` under `name` and returns the tracked handle.
    ///
    /// # Panics
    /// If `name` is already registered.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Tensor {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let tensor = tensor.requires_grad();
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor: tensor.clone(),
            frozen: false,
        });
        tensor
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Scalar weights under names starting with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|p| p.name.starts_with(prefix)).map(|p| p.tensor.numel()).sum()
    }

    /// Freezes every parameter whose name starts with `prefix`; returns how many.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = true;
            p.tensor.set_requires_grad(false);
            p.tensor.zero_grad();
            n += 1;
        }
        n
    }

    pub fn frozen_names(&self) -> Vec<String> {
        self.params.iter().filter(|p| p.frozen).map(|p| p.name.clone()).collect()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    /// Overwrites the value of `name` (shape must match).
    pub fn load(&self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let p = self.get(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if p.tensor.shape() != shape {
            return Err(TensorError::ShapeMismatch {
                op: "load",
                lhs: p.tensor.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        p.tensor.assign(data)
    }
}

/// Adam with bias correction; state is keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every non-frozen parameter.
    pub fn step(&mut self, params: &ParamStore, lr: f64) -> Result<()> {
        // validate before mutating anything
        for p in params.iter().filter(|p| !p.frozen) {
            if p.tensor.grad().is_none() {
                return Err(TensorError::MissingGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let prec = precision();
        for p in params.iter().filter(|p| !p.frozen) {
            let g = p.tensor.grad().expect("checked above");
            let n = g.len();
            let (m, v) = self.moments.entry(p.name.clone()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let mut w = p.tensor.to_vec();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] = prec.round_scalar(w[i] - lr * mhat / (vhat.sqrt() + self.eps));
            }
            p.tensor.assign(w)?;
        }
        Ok(())
    }

    /// Flattened state: `(name, first moment, second moment)`.
    pub fn state(&self) -> impl Iterator<Item = (&str, &[f64], &[f64])> {
        self.moments.iter().map(|(k, (m, v))| (k.as_str(), m.as_slice(), v.as_slice()))
    }

    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>) {
        self.step = step;
        self.moments = moments;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(vals: &[f64]) -> (ParamStore, Tensor) {
        let mut s = ParamStore::new();
        let t = s.add("w", Tensor::from_slice(vals));
        (s, t)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (store, w) = store_with(&[1.0, -1.0, 0.5]);
        let g = Tensor::from_slice(&[3.0, -0.02, 100.0]);
        w.mul(&g).unwrap().sum().backward().unwrap();
        let mut adam = Adam::default();
        adam.step(&store, 0.01).unwrap();
        let after = w.to_vec();
        let expect = [1.0 - 0.01, -1.0 + 0.01, 0.5 - 0.01];
        for (a, e) in after.iter().zip(expect) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut s = ParamStore::new();
        let a = s.add("enc/w", Tensor::from_slice(&[1.0, 2.0]));
        let b = s.add("dec/w", Tensor::from_slice(&[3.0]));
        assert_eq!(s.freeze_prefix("enc/"), 1);
        let loss = a.sum().add(&b.sum()).unwrap();
        loss.backward().unwrap();
        assert!(a.grad().is_none());
        Adam::default().step(&s, 0.1).unwrap();
        assert_eq!(a.to_vec(), vec![1.0, 2.0]);
        assert_ne!(b.to_vec(), vec![3.0]);
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let (store, w) = store_with(&[0.25, -4.0]);
        let mut adam = Adam::default();
        for _ in 0..2 {
            store.zero_grad();
            w.scale(0.0).sum().backward().unwrap();
            adam.step(&store, 0.1).unwrap();
        }
        assert_eq!(w.to_vec(), vec![0.25, -4.0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (store, _w) = store_with(&[1.0]);
        let err = Adam::default().step(&store, 0.1).unwrap_err();
        assert!(matches!(err, TensorError::MissingGradient(ref n) if n == "w"));
    }
}
