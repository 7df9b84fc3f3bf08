//! Dense 2-D tensors and the named parameter store.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NumericsError;

/// Element type for all numeric work. `f64` is used for gradient checking,
/// `f32` for training and checkpoints.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn max_val(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn zero() -> Self {
                0.0
            }
            fn one() -> Self {
                1.0
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn powi(self, n: i32) -> Self {
                self.powi(n)
            }
            fn max_val(self, other: Self) -> Self {
                self.max(other)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense row-major matrix. Vectors are 1×n tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
    /// Accumulated gradient, same shape as `data` when present.
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols], grad: None }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length must match shape");
        Tensor { rows, cols, data, grad: None }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data, grad: None }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Converts element type, e.g. an `f64` reference copy of `f32` parameters.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }

    pub fn transposed(&self) -> Tensor<S> {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Named map of trainable parameters. All randomness flows from `seed`.
#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    params: BTreeMap<String, Tensor<S>>,
    pub seed: u64,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> Self {
        ParamStore { params: BTreeMap::new(), seed }
    }

    /// Seeded RNG for parameter initialization. Draws are `f64` so that
    /// stores built in `f32` and `f64` from the same seed hold the same
    /// values bit-for-bit after casting.
    pub fn init_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn insert(&mut self, name: &str, t: Tensor<S>) {
        assert!(
            self.params.insert(name.to_string(), t).is_none(),
            "duplicate parameter name {name}"
        );
    }

    /// Glorot-uniform weight matrix: uniform(-r, r), r = sqrt(6/(fan_in+fan_out)).
    pub fn insert_weight(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) {
        let r = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| S::from_f64(rng.gen_range(-r..r))).collect();
        self.insert(name, Tensor::from_vec(rows, cols, data));
    }

    /// Embedding table: normal(0, 0.02).
    pub fn insert_embedding(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) {
        let data = (0..rows * cols)
            .map(|_| {
                // Box-Muller from two uniform draws keeps the stream identical
                // across scalar types.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                S::from_f64(0.02 * n)
            })
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data));
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(rows, cols));
    }

    pub fn insert_const(&mut self, name: &str, rows: usize, cols: usize, v: S) {
        self.insert(name, Tensor::from_vec(rows, cols, vec![v; rows * cols]));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>, NumericsError> {
        self.params.get(name).ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>, NumericsError> {
        self.params.get_mut(name).ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Parameter names in deterministic (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_entries(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn clear_grads(&mut self) {
        for t in self.params.values_mut() {
            t.grad = None;
        }
    }

    /// Copy of the store with every tensor cast to another element type.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new(self.seed);
        for (name, t) in &self.params {
            out.params.insert(name.clone(), t.cast());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_and_access() {
        let t = Tensor::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.shape(), (2, 3));
        assert_eq!(t.at(1, 2), 6.0);
        assert_eq!(t.row(0), &[1.0, 2.0, 3.0]);
        let tt = t.transposed();
        assert_eq!(tt.shape(), (3, 2));
        assert_eq!(tt.at(2, 1), 6.0);
    }

    #[test]
    fn same_seed_same_values_across_dtypes() {
        let mut a: ParamStore<f32> = ParamStore::new(7);
        let mut b: ParamStore<f64> = ParamStore::new(7);
        let mut ra = a.init_rng();
        let mut rb = b.init_rng();
        a.insert_weight("w", 4, 5, &mut ra);
        b.insert_weight("w", 4, 5, &mut rb);
        a.insert_embedding("e", 3, 2, &mut ra);
        b.insert_embedding("e", 3, 2, &mut rb);
        for (x, y) in a.get("w").unwrap().data.iter().zip(&b.get("w").unwrap().data) {
            assert_eq!(*x as f64, *y as f32 as f64);
        }
        for (x, y) in a.get("e").unwrap().data.iter().zip(&b.get("e").unwrap().data) {
            assert_eq!(*x as f64, *y as f32 as f64);
        }
    }

    #[test]
    fn unknown_param_is_an_error() {
        let s: ParamStore<f32> = ParamStore::new(0);
        assert!(matches!(s.get("nope"), Err(NumericsError::UnknownParam(_))));
    }
}
