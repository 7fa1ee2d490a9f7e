use serde::{Deserialize, Serialize};

use super::{Gradients, Result, Tape, Tensor, TensorError, Var};

/// A named learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    grad: Vec<f64>,
}

impl Parameter {
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

/// Ordered collection of named parameters.
///
/// The insertion order is the canonical order: [`ParameterSet::flat_view`]
/// concatenates every tensor's row-major data in that order, and
/// [`ParameterSet::load_flat`] reads it back the same way.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    params: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(TensorError::Contract(format!("duplicate parameter `{name}`")));
        }
        let grad = vec![0.0; value.len()];
        self.params.push(Parameter { name, value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    /// Names and shapes in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    }

    pub fn flat_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn flat_view(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(TensorError::Shape {
                op: "load_flat",
                shapes: vec![vec![self.flat_len()], vec![flat.len()]],
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn grad_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for p in &self.params {
            out.extend_from_slice(&p.grad);
        }
        out
    }

    /// Puts every parameter on `tape` as a leaf, in canonical order.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    /// Adds the gradients of the leaves returned by [`ParameterSet::register`].
    pub fn accumulate(&mut self, grads: &Gradients, vars: &[Var]) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(TensorError::Contract(format!(
                "{} vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(*v) {
                p.grad.resize(p.value.len(), 0.0);
                for (acc, x) in p.grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.clear();
            p.grad.resize(p.value.len(), 0.0);
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
}

impl Parameter {
    pub(crate) fn grad_mut(&mut self) -> &mut Vec<f64> {
        if self.grad.len() != self.value.len() {
            self.grad.resize(self.value.len(), 0.0);
        }
        &mut self.grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut ps = ParameterSet::new();
        ps.push("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        ps.push("b", Tensor::new(vec![1, 3], vec![3.0, 4.0, 5.0]).unwrap())
            .unwrap();
        ps
    }

    #[test]
    fn flat_view_follows_insertion_order() {
        let ps = sample();
        assert_eq!(ps.flat_view(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(ps.flat_len(), 5);
    }

    #[test]
    fn load_flat_rejects_wrong_length() {
        let mut ps = sample();
        assert!(ps.load_flat(&[0.0; 4]).is_err());
        ps.load_flat(&[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(ps.get("b").unwrap().value.data(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = sample();
        assert!(ps.push("a", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn accumulate_sums_over_calls() {
        let mut ps = sample();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let vars = ps.register(&mut tape, true);
            let s0 = tape.sum(vars[0]);
            let s1 = tape.sum(vars[1]);
            let l = tape.add(s0, s1).unwrap();
            let g = tape.backward(l).unwrap();
            ps.accumulate(&g, &vars).unwrap();
        }
        assert_eq!(ps.grad_flat(), vec![2.0; 5]);
        ps.zero_grads();
        assert_eq!(ps.grad_flat(), vec![0.0; 5]);
    }
}
