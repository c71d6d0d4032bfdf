use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Matrix, ParamId};

/// A named learnable tensor and the freeze group it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub group: String,
    pub value: Matrix,
}

/// All learnable tensors of a model, addressable by [`ParamId`] or name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    index: BTreeMap<String, usize>,
}

/// How a fresh tensor is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `(-bound, bound)`.
    Uniform(f64),
    Normal(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let n = rows * cols;
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..b)).collect(),
            Init::Normal(s) => {
                let dist = Normal::new(0.0, s).expect("valid std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        self.index.insert(name.clone(), self.tensors.len());
        self.tensors.push(ParamTensor {
            name,
            group: group.to_string(),
            value: Matrix::from_vec(rows, cols, data),
        });
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0].value
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    /// Distinct group names in first-seen order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.tensors {
            if !out.contains(&t.group) {
                out.push(t.group.clone());
            }
        }
        out
    }

    pub fn ids_in_group(&self, group: &str) -> Vec<ParamId> {
        self.iter().filter(|(_, t)| t.group == group).map(|(id, _)| id).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }
}
