//! Dense `f64` tensors and the named parameter store.
//!
//! Everything here is deliberately plain: row-major `Vec<f64>` storage, no
//! views, no broadcasting. Model code works on row slices; the store exists
//! so the optimizer and the gradient checker can walk every learnable value
//! in a stable order.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{MadError, Result};

/// A dense row-major tensor of `f64` values.
///
/// Invariants: `data.len()` equals the product of `shape`, the shape is
/// non-empty, and construction rejects non-finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(MadError::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.check_finite("Tensor::from_vec")?;
        Ok(t)
    }

    /// A single-element tensor, handy for scalar parameters.
    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::from_vec(&[1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The value of a single-element tensor.
    ///
    /// Panics if the tensor has more than one element; this is a programmer
    /// error, not a data error.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    /// Row `i` of a 2-D tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.cols();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        for &x in &self.data {
            if !x.is_finite() {
                return Err(MadError::NonFinite {
                    context: context.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Inner product of two equal-shape tensors.
pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(MadError::ShapeMismatch {
            op: "dot",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(dot_slices(&a.data, &b.data))
}

/// Euclidean distance between two equal-shape tensors.
pub fn l2_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(MadError::ShapeMismatch {
            op: "l2_distance",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(l2_distance_slices(&a.data, &b.data))
}

/// Inner product of two slices; lengths must match.
pub fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Euclidean distance between two slices; lengths must match.
pub fn l2_distance_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

/// Named collection of learnable tensors with matching gradient buffers.
///
/// Storage is ordered (`BTreeMap`) so that iteration order, and therefore
/// every optimizer trajectory and serialized artifact, is independent of
/// insertion order and hashing. Frozen parameters keep their gradient
/// buffers but are skipped by the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    values: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Register a new parameter with a zeroed gradient buffer.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.values.contains_key(name) {
            return Err(MadError::DuplicateParam {
                name: name.to_string(),
            });
        }
        self.grads.insert(name.to_string(), Tensor::zeros(value.shape()));
        self.values.insert(name.to_string(), value);
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.values.get(name).ok_or_else(|| MadError::UnknownParam {
            name: name.to_string(),
        })
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.values
            .get_mut(name)
            .ok_or_else(|| MadError::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.grads.get(name).ok_or_else(|| MadError::UnknownParam {
            name: name.to_string(),
        })
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.grads
            .get_mut(name)
            .ok_or_else(|| MadError::UnknownParam {
                name: name.to_string(),
            })
    }

    /// Immutable values together with mutable gradients, for backward passes
    /// that read parameters while accumulating into their gradients.
    pub fn values_and_grads_mut(
        &mut self,
    ) -> (&BTreeMap<String, Tensor>, &mut BTreeMap<String, Tensor>) {
        (&self.values, &mut self.grads)
    }

    /// One parameter's mutable value alongside its immutable gradient, for
    /// optimizers that read the gradient while updating the value.
    pub fn value_mut_and_grad(&mut self, name: &str) -> Result<(&mut Tensor, &Tensor)> {
        let value = self
            .values
            .get_mut(name)
            .ok_or_else(|| MadError::UnknownParam {
                name: name.to_string(),
            })?;
        let grad = self.grads.get(name).ok_or_else(|| MadError::UnknownParam {
            name: name.to_string(),
        })?;
        Ok((value, grad))
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Exclude a parameter from optimizer updates. Gradients still
    /// accumulate; they are just never applied.
    pub fn freeze(&mut self, name: &str) -> Result<()> {
        if !self.values.contains_key(name) {
            return Err(MadError::UnknownParam {
                name: name.to_string(),
            });
        }
        self.frozen.insert(name.to_string());
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    /// Total number of scalar parameters across all tensors.
    pub fn n_params(&self) -> usize {
        self.values.values().map(|t| t.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dot_of_orthogonal_unit_vectors_is_zero() {
        let a = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        assert_eq!(dot(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dot_matches_hand_computation() {
        let a = Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap();
        assert_eq!(dot(&a, &a).unwrap(), 13.0);
    }

    #[test]
    fn dot_with_zero_vector_is_zero() {
        let a = Tensor::from_vec(&[3], vec![4.0, -1.5, 2.25]).unwrap();
        let z = Tensor::zeros(&[3]);
        assert_eq!(dot(&a, &z).unwrap(), 0.0);
    }

    #[test]
    fn dot_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        let err = dot(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn l2_distance_to_self_is_zero() {
        let a = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn l2_distance_three_four_five() {
        let a = Tensor::from_vec(&[2], vec![3.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.0, 4.0]).unwrap();
        assert_eq!(l2_distance(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn l2_distance_unit_step() {
        let a = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(l2_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length_and_non_finite() {
        assert!(Tensor::from_vec(&[3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn rows_are_contiguous_and_writable() {
        let mut t = Tensor::zeros(&[3, 2]);
        t.row_mut(1).copy_from_slice(&[5.0, 6.0]);
        assert_eq!(t.row(1), &[5.0, 6.0]);
        assert_eq!(t.data(), &[0.0, 0.0, 5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn store_registers_and_rejects_duplicates() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(1.0).unwrap()).unwrap();
        assert!(matches!(
            store.register("w", Tensor::scalar(2.0).unwrap()),
            Err(MadError::DuplicateParam { .. })
        ));
        assert!(matches!(
            store.value("missing"),
            Err(MadError::UnknownParam { .. })
        ));
        assert_eq!(store.n_params(), 1);
    }

    #[test]
    fn store_grads_start_zero_and_reset() {
        let mut store = ParamStore::new();
        store.register("a", Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(store.grad("a").unwrap().data(), &[0.0; 4]);
        store.grad_mut("a").unwrap().data_mut()[3] = 7.0;
        store.zero_grads();
        assert_eq!(store.grad("a").unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn store_names_are_sorted_regardless_of_insertion_order() {
        let mut store = ParamStore::new();
        store.register("zz", Tensor::scalar(0.0).unwrap()).unwrap();
        store.register("aa", Tensor::scalar(0.0).unwrap()).unwrap();
        store.register("mm", Tensor::scalar(0.0).unwrap()).unwrap();
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["aa", "mm", "zz"]);
    }

    #[test]
    fn freeze_requires_existing_name() {
        let mut store = ParamStore::new();
        assert!(store.freeze("nope").is_err());
        store.register("w", Tensor::scalar(1.0).unwrap()).unwrap();
        store.freeze("w").unwrap();
        assert!(store.is_frozen("w"));
    }

    proptest! {
        #[test]
        fn l2_is_symmetric(xs in proptest::collection::vec(-100.0f64..100.0, 1..8),
                           ys in proptest::collection::vec(-100.0f64..100.0, 1..8)) {
            let n = xs.len().min(ys.len());
            let a = Tensor::from_vec(&[n], xs[..n].to_vec()).unwrap();
            let b = Tensor::from_vec(&[n], ys[..n].to_vec()).unwrap();
            let ab = l2_distance(&a, &b).unwrap();
            let ba = l2_distance(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn l2_satisfies_triangle_inequality(
            xs in proptest::collection::vec(-50.0f64..50.0, 4),
            ys in proptest::collection::vec(-50.0f64..50.0, 4),
            zs in proptest::collection::vec(-50.0f64..50.0, 4),
        ) {
            let a = Tensor::from_vec(&[4], xs).unwrap();
            let b = Tensor::from_vec(&[4], ys).unwrap();
            let c = Tensor::from_vec(&[4], zs).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            let ab = l2_distance(&a, &b).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            // Small slack for floating-point rounding near equality.
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
