use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Gradients, Graph, Var};
use crate::numerics::tensor::Tensor;

/// A named model parameter. `trainable == false` is the freezing flag: the
/// value enters every graph as a leaf that never receives gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Name-ordered parameter container shared by every model component.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                trainable: true,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Total scalar count of parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Marks every parameter trainable iff its name starts with one of `prefixes`.
    pub fn set_trainable_prefixes(&mut self, prefixes: &[&str]) {
        for (name, p) in self.params.iter_mut() {
            p.trainable = prefixes.iter().any(|pre| name.starts_with(pre));
        }
    }

    pub fn freeze_all(&mut self) {
        self.params.values_mut().for_each(|p| p.trainable = false);
    }

    /// Copies every tensor under `from` to the same suffix under `to`.
    pub fn fork_prefix(&mut self, from: &str, to: &str, trainable: bool) {
        let copies: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter(|(n, _)| n.starts_with(from))
            .map(|(n, p)| (format!("{}{}", to, &n[from.len()..]), p.value.clone()))
            .collect();
        for (name, value) in copies {
            self.params.insert(name, Param { value, trainable });
        }
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|n, _| !n.starts_with(prefix));
    }
}

/// Parameter initializers.
pub mod init {
    use super::*;

    /// Uniform(−1/√fan_in, 1/√fan_in), the usual default for linear layers.
    pub fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }

    pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen::<f64>();
                std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }
}

/// One forward pass: a fresh [`Graph`] plus lazily bound parameter leaves.
pub struct Session<'s> {
    pub graph: Graph,
    store: &'s ParamStore,
    bound: HashMap<String, Var>,
    no_grad: bool,
    rng: Option<ChaCha8Rng>,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
            no_grad: false,
            rng: None,
        }
    }

    /// A session where no leaf requires gradient (pure evaluation).
    pub fn inference(store: &'s ParamStore) -> Self {
        Session {
            no_grad: true,
            ..Session::new(store)
        }
    }

    /// Attaches the random source used by dropout.
    pub fn with_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Binds parameter `name` as a leaf (once per session).
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let v = self
            .graph
            .leaf(p.value.clone(), p.trainable && !self.no_grad);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.graph.constant(value)
    }

    /// Inverted dropout; identity when `active` is false, the rate is zero,
    /// or no random source is attached.
    pub fn dropout(&mut self, x: Var, rate: f64, active: bool) -> Result<Var> {
        if !active || rate <= 0.0 {
            return Ok(x);
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - rate;
        let n = self.graph.value(x).numel();
        let mask = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.graph.mask_mul(x, mask)
    }

    /// Gradients of every bound trainable parameter, by name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if let Some(g) = grads.get(v) {
                let shape = self.graph.value(v).shape().to_vec();
                out.insert(
                    name.clone(),
                    Tensor::new(shape, g.to_vec()).expect("grad shape"),
                );
            }
        }
        out
    }
}
