//! Named parameter storage and the forward-pass session that binds
//! parameters onto a tape.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub tensor: Tensor<F>,
}

/// Owns every learnable tensor of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor: tensor.with_grad(),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut Rng,
    ) -> ParamId {
        let n = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..n).map(|_| F::of(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, data).expect("shape matches"))
    }

    pub fn normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut Rng,
    ) -> ParamId {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| F::of(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, data).expect("shape matches"))
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, F::of(value)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// Replaces all values with those of `other`, matched by name.
    pub fn load_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Format(format!("missing parameter {}", p.name)))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(Error::shape("load_from", p.tensor.shape(), src.tensor.shape()));
            }
            p.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }
}

/// One forward pass: a tape plus the parameters bound onto it.
pub struct Session<'a, F: Scalar> {
    pub tape: Tape<F>,
    store: &'a ParamStore<F>,
    bound: Vec<Option<Var>>,
    training: bool,
    dropout_rng: Option<&'a mut Rng>,
}

impl<'a, F: Scalar> Session<'a, F> {
    /// Evaluation-mode session: dropout is the identity.
    pub fn eval(store: &'a ParamStore<F>) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            training: false,
            dropout_rng: None,
        }
    }

    pub fn train(store: &'a ParamStore<F>, dropout_rng: &'a mut Rng) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            training: true,
            dropout_rng: Some(dropout_rng),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.tape = std::mem::take(&mut self.tape).with_finite_checks(on);
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    /// Tape handle for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id));
        self.bound[id.0] = Some(v);
        v
    }

    /// Inverted dropout. Identity in eval mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let rng = self
            .dropout_rng
            .as_deref_mut()
            .ok_or_else(|| Error::contract("training session without dropout rng"))?;
        let keep = F::of(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.tape.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let shape = self.tape.shape(x).to_vec();
        let m = self.tape.constant(shape, mask)?;
        self.tape.mul(x, m)
    }

    /// Runs backward from `loss` and returns per-parameter gradients, in
    /// store order. Unused parameters get `None`.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<Option<Vec<F>>>> {
        self.tape.backward(loss)?;
        Ok(self
            .bound
            .iter()
            .map(|b| b.and_then(|v| self.tape.grad(v).map(|g| g.to_vec())))
            .collect())
    }
}

/// Writes gradients returned by [`Session::backward`] into the store.
pub fn apply_grads<F: Scalar>(store: &mut ParamStore<F>, grads: Vec<Option<Vec<F>>>) -> Result<()> {
    for (id, g) in grads.into_iter().enumerate() {
        let t = store.get_mut(ParamId(id));
        match g {
            Some(g) => t.set_grad(g)?,
            None => t.clear_grad(),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let store = ParamStore::<f64>::new();
        let mut rng = stream(1, Stream::Dropout);
        let mut s = Session::train(&store, &mut rng);
        let x = s.tape.variable(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.dropout(x, 0.0).unwrap(), x);
        let mut e = Session::eval(&store);
        let y = e.tape.variable(vec![2], vec![1.0, 2.0]).unwrap();
        assert_eq!(e.dropout(y, 0.5).unwrap(), y);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let store = ParamStore::<f64>::new();
        let mut e = Session::eval(&store);
        let y = e.tape.variable(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(e.dropout(y, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let store = ParamStore::<f64>::new();
        let mut rng = stream(3, Stream::Dropout);
        let mut s = Session::train(&store, &mut rng);
        let n = 1_000_000;
        let x = s.tape.constant(vec![n], vec![1.0; n]).unwrap();
        let y = s.dropout(x, 0.2).unwrap();
        let vals = s.tape.value(y);
        let mean = vals.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.2).abs() < 0.005);
    }

    #[test]
    fn params_bind_once() {
        let mut store = ParamStore::<f64>::new();
        let id = store.constant("w", vec![2], 1.5);
        let mut s = Session::eval(&store);
        let a = s.param(id);
        let b = s.param(id);
        assert_eq!(a, b);
        assert_eq!(s.tape.len(), 1);
    }
}
