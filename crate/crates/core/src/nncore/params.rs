use std::collections::BTreeMap;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{MlpSpec, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

impl ParamKind {
    /// Kind from the last path segment (`w…` or `b…`).
    pub fn from_name(name: &str) -> Self {
        match name.rsplit('/').next() {
            Some(leaf) if leaf.starts_with('b') => ParamKind::Bias,
            _ => ParamKind::Weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
}

/// Named learnable tensors with gradient accumulators, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        if self.params.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad,
                kind: ParamKind::from_name(name),
            },
        );
        Ok(())
    }

    /// Initializes and inserts every parameter of `spec` under `prefix`.
    pub fn register_mlp(&mut self, prefix: &str, spec: &MlpSpec, seed: u64) -> Result<(), NnError> {
        for (name, value) in init_params(spec, prefix, seed) {
            self.insert(&name, value)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param, NnError> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param, NnError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, NnError> {
        self.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor, NnError> {
        self.get(name).map(|p| &p.grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<(), NnError> {
        let p = self.get_mut(name)?;
        if p.grad.len() != g.len() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient for {name}: {:?} vs {:?}",
                g.shape(),
                p.grad.shape()
            )));
        }
        p.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_values(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.value.fill(0.0);
                n += 1;
            }
        }
        n
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn path_hash(path: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in path.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG stream owned by one parameter path: ChaCha20 keyed by `seed`, with
/// the stream id taken from the path hash.
pub fn param_rng(seed: u64, path: &str) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(path_hash(path));
    rng
}

/// Glorot-uniform weights and zero biases for every layer of `spec`.
pub fn init_params(spec: &MlpSpec, prefix: &str, seed: u64) -> Vec<(String, Tensor)> {
    spec.parameter_shapes(prefix)
        .into_iter()
        .map(|(name, shape)| {
            let t = match ParamKind::from_name(&name) {
                ParamKind::Bias => Tensor::zeros(shape),
                ParamKind::Weight => {
                    let (fan_in, fan_out) = (shape[0], shape[1]);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                    let mut rng = param_rng(seed, &name);
                    let data = (0..fan_in * fan_out)
                        .map(|_| dist.sample(&mut rng))
                        .collect();
                    Tensor::new(shape, data).expect("shape matches count")
                }
            };
            (name, t)
        })
        .collect()
}
