//! Named parameter storage with per-tensor seeded initialization.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SluError};
use crate::numerics::graph::Mat;

/// Initialization scheme for a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform Glorot: U(-l, l) with l = sqrt(6 / (rows + cols)).
    Glorot,
    /// Gaussian with the given standard deviation (embedding tables).
    Normal(f64),
    Const(f64),
}

/// FNV-1a over the tensor name, mixed with the store seed, so every tensor
/// draws from its own stream regardless of definition order.
fn tensor_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    (h ^ seed).wrapping_mul(0x9e3779b97f4a7c15)
}

pub fn init_matrix(seed: u64, name: &str, rows: usize, cols: usize, init: Init) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(tensor_seed(seed, name));
    match init {
        Init::Zeros => Mat::zeros((rows, cols)),
        Init::Const(c) => Mat::from_elem((rows, cols), c),
        Init::Glorot => {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
        }
        Init::Normal(std) => {
            let dist = Normal::new(0.0, std).expect("valid std");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        }
    }
}

/// Ordered map of named parameter tensors. Names are namespaced by phase
/// (`embed.*`, `encoder.*`, `slot.*`, `intent.*`), which is what checkpoint
/// partitioning and weight transfer key on.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    params: IndexMap<String, Mat>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: IndexMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Define a tensor, initializing it from the store seed and its name.
    /// Defining the same name twice is a programming error.
    pub fn define(&mut self, name: &str, rows: usize, cols: usize, init: Init) {
        assert!(
            !self.params.contains_key(name),
            "parameter {name} defined twice"
        );
        let m = init_matrix(self.seed, name, rows, cols, init);
        self.params.insert(name.to_string(), m);
    }

    /// Define a tensor with externally supplied values (pre-trained embeddings).
    pub fn define_with(&mut self, name: &str, value: Mat) {
        assert!(
            !self.params.contains_key(name),
            "parameter {name} defined twice"
        );
        self.params.insert(name.to_string(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Mat {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn set(&mut self, name: &str, value: Mat) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) => {
                if slot.dim() != value.dim() {
                    return Err(SluError::InvalidArgument(format!(
                        "shape mismatch for {name}: have {:?}, got {:?}",
                        slot.dim(),
                        value.dim()
                    )));
                }
                *slot = value;
                Ok(())
            }
            None => Err(SluError::InvalidArgument(format!(
                "unknown parameter {name}"
            ))),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar coordinates across all tensors.
    pub fn num_coords(&self) -> usize {
        self.params.values().map(|m| m.len()).sum()
    }
}
