use std::collections::HashMap;
use std::sync::{Mutex, MutexGuard};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg32;

use crate::tensor::{BnStats, Parameter, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BnId(pub(crate) usize);

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
}

/// Owns every learnable parameter of a model together with the batch-norm
/// running statistics, addressed by stable handles and unique names.
#[derive(Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
    bn: Vec<(String, Mutex<BnStats>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// construction bug rather than a runtime condition.
    pub fn add(&mut self, rng: &mut Pcg32, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(v) => vec![v; n],
            Init::He { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
        };
        let id = self.params.len();
        assert!(self.by_name.insert(name.clone(), id).is_none(), "duplicate parameter name {name}");
        self.params.push(Parameter::new(name, shape.to_vec(), data).expect("shape matches data"));
        ParamId(id)
    }

    pub fn add_bn(&mut self, name: impl Into<String>, channels: usize) -> BnId {
        self.bn.push((name.into(), Mutex::new(BnStats::new(channels))));
        BnId(self.bn.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn bn_stats(&self, id: BnId) -> MutexGuard<'_, BnStats> {
        self.bn[id.0].1.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// `(name, stats)` snapshots of every batch-norm layer in creation order.
    pub fn bn_buffers(&self) -> Vec<(String, BnStats)> {
        self.bn
            .iter()
            .map(|(n, s)| (n.clone(), s.lock().unwrap_or_else(|e| e.into_inner()).clone()))
            .collect()
    }

    pub fn set_bn(&self, name: &str, stats: BnStats) -> bool {
        match self.bn.iter().find(|(n, _)| n == name) {
            Some((_, s)) => {
                *s.lock().unwrap_or_else(|e| e.into_inner()) = stats;
                true
            }
            None => false,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.value.zero_grad());
    }

    /// Adds `N(0, std)` noise to every parameter except the attention
    /// temperatures, so zero-initialised branches carry signal in checks.
    pub fn perturb(&mut self, rng: &mut Pcg32, std: f64) {
        let normal = Normal::new(0.0, std).expect("non-negative std");
        for p in self.params.iter_mut().filter(|p| !p.name.contains(".alpha.")) {
            let data = p.value.data().iter().map(|v| v + normal.sample(rng)).collect();
            p.set_data(data);
        }
    }
}

/// Random `ParamStore` entry, used by sampling-based checks.
pub fn random_entry(store: &ParamStore, rng: &mut Pcg32) -> (usize, usize) {
    let total = store.parameter_count();
    let mut k = rng.random_range(0..total);
    for (i, p) in store.params().iter().enumerate() {
        if k < p.numel() {
            return (i, k);
        }
        k -= p.numel();
    }
    unreachable!("index below total count")
}
