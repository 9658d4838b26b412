use indexmap::IndexMap;

use super::rng::Rng;
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Initialization scheme for a fresh parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`.
    UniformGlorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

impl Init {
    /// Glorot fans for a `k × cin × cout` convolution kernel.
    pub fn glorot_conv(shape: &[usize]) -> Self {
        let (k, cin, cout) = (shape[0], shape[1], shape[2]);
        Init::UniformGlorot {
            fan_in: k * cin,
            fan_out: k * cout,
        }
    }

    /// Glorot fans for an `n × m` dense matrix.
    pub fn glorot_dense(shape: &[usize]) -> Self {
        Init::UniformGlorot {
            fan_in: shape[0],
            fan_out: shape[1],
        }
    }

    pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Deterministic tensor initialization from `(shape, scheme, seed)`.
pub fn seeded_init<T: Scalar>(shape: &[usize], scheme: Init, seed: u64) -> Tensor<T> {
    match scheme {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, T::one()),
        Init::UniformGlorot { fan_in, fan_out } => {
            let bound = Init::glorot_bound(fan_in, fan_out);
            let mut rng = Rng::new(seed);
            Tensor::from_fn(shape, |_| T::of(rng.uniform(-bound, bound)))
        }
    }
}

/// Adam moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: IndexMap<String, Tensor<T>>,
    pub second: IndexMap<String, Tensor<T>>,
}

/// Named parameters in insertion order, plus the seed they were drawn from
/// and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
    seed: u64,
    pub(crate) adam: Option<AdamState<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: IndexMap::new(),
            seed,
            adam: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Adds a parameter initialized from a seed derived from the store seed
    /// and the parameter's position. Panics on a duplicate name.
    pub fn add(&mut self, name: &str, shape: &[usize], scheme: Init) -> &Tensor<T> {
        let index = self.params.len() as u64;
        let seed = Rng::derive(self.seed, index + 1).next_u64();
        self.insert(name, seeded_init(shape, scheme, seed))
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> &Tensor<T> {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        self.params.insert(name.to_string(), value);
        &self.params[name]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar elements.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Parameters only, without optimizer state, converted to another
    /// precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            seed: self.seed,
            adam: None,
        }
    }

    /// Drops optimizer state, keeping values.
    pub fn frozen(&self) -> Self {
        Self {
            params: self.params.clone(),
            seed: self.seed,
            adam: None,
        }
    }

    /// Flattened element `(name, offset)` addressing for every scalar.
    pub fn element_index(&self) -> Vec<(String, usize)> {
        self.params
            .iter()
            .flat_map(|(k, v)| (0..v.len()).map(move |i| (k.clone(), i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_bit_identical() {
        let a: Tensor<f64> = seeded_init(&[5, 7, 3], Init::glorot_conv(&[5, 7, 3]), 11);
        let b: Tensor<f64> = seeded_init(&[5, 7, 3], Init::glorot_conv(&[5, 7, 3]), 11);
        assert_eq!(a, b);
        let c: Tensor<f64> = seeded_init(&[5, 7, 3], Init::glorot_conv(&[5, 7, 3]), 12);
        assert_ne!(a, c);
    }

    #[test]
    fn zeros_and_ones() {
        let z: Tensor<f64> = seeded_init(&[3, 4], Init::Zeros, 1);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let o: Tensor<f32> = seeded_init(&[3, 4], Init::Ones, 1);
        assert!(o.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn glorot_within_bound() {
        let shape = [16, 32];
        let bound = Init::glorot_bound(16, 32);
        let t: Tensor<f64> = seeded_init(&shape, Init::glorot_dense(&shape), 5);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // Not degenerate: spans a good part of the interval.
        let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.8 * bound);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new(0);
        s.add("a", &[2], Init::Zeros);
        s.add("a", &[2], Init::Zeros);
    }

    #[test]
    fn insertion_order_is_kept() {
        let mut s = ParamStore::<f64>::new(0);
        for n in ["z", "a", "m"] {
            s.add(n, &[1], Init::Ones);
        }
        assert_eq!(s.names().collect::<Vec<_>>(), ["z", "a", "m"]);
    }
}
