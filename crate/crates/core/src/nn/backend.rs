use std::collections::HashMap;
use std::sync::Arc;

use super::matrix::{matmul, Matrix, Real};
use super::ops;
use super::params::ParameterStore;

/// The operation set the network is written against. [`super::Tape`]
/// records for reverse mode; [`Eval`] computes values only and frees
/// intermediates as soon as they are dropped.
///
/// Operations consume their inputs; clone a `Var` to keep using it.
pub trait Backend {
    type T: Real;
    type Var: Clone;

    fn value<'s>(&'s self, v: &'s Self::Var) -> &'s Matrix<Self::T>;
    fn constant(&mut self, m: Matrix<Self::T>) -> Self::Var;
    fn param(&mut self, name: &str) -> Self::Var;

    fn matmul(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn add_bias(&mut self, x: Self::Var, b: Self::Var) -> Self::Var;
    fn relu(&mut self, x: Self::Var) -> Self::Var;
    fn add(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn mul(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn scale(&mut self, x: Self::Var, s: f64) -> Self::Var;
    fn softmax_rows(&mut self, x: Self::Var) -> Self::Var;
    /// Softmax down each column within consecutive blocks of `g` rows.
    fn softmax_groups(&mut self, x: Self::Var, g: usize) -> Self::Var;
    /// Sums consecutive blocks of `g` rows.
    fn group_sum(&mut self, x: Self::Var, g: usize) -> Self::Var;
    /// Gathers rows by id; id `-1` yields a zero row.
    fn gather_rows(&mut self, x: Self::Var, ids: &Arc<Vec<i64>>) -> Self::Var;
    fn concat_cols(&mut self, xs: Vec<Self::Var>) -> Self::Var;
    /// Normalized propagation over a 4-regular graph (self loops included).
    fn propagate(&mut self, x: Self::Var, adj: &Arc<Vec<[u32; 4]>>) -> Self::Var;
}

/// No-grad evaluation. Matrices are shared through `Arc` and reused in
/// place when uniquely owned.
pub struct Eval<T: Real> {
    params: HashMap<String, Arc<Matrix<T>>>,
}

impl<T: Real> Eval<T> {
    pub fn new(store: &ParameterStore) -> Self {
        Eval {
            params: store.iter().map(|(n, m)| (n.to_string(), Arc::new(m.cast::<T>()))).collect(),
        }
    }
}

fn owned<T: Real>(v: Arc<Matrix<T>>) -> Matrix<T> {
    Arc::try_unwrap(v).unwrap_or_else(|shared| (*shared).clone())
}

impl<T: Real> Backend for Eval<T> {
    type T = T;
    type Var = Arc<Matrix<T>>;

    fn value<'s>(&'s self, v: &'s Self::Var) -> &'s Matrix<T> {
        v
    }

    fn constant(&mut self, m: Matrix<T>) -> Self::Var {
        Arc::new(m)
    }

    fn param(&mut self, name: &str) -> Self::Var {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
            .clone()
    }

    fn matmul(&mut self, a: Self::Var, b: Self::Var) -> Self::Var {
        Arc::new(matmul(&a, false, &b, false))
    }

    fn add_bias(&mut self, x: Self::Var, b: Self::Var) -> Self::Var {
        Arc::new(ops::add_bias(owned(x), &b))
    }

    fn relu(&mut self, x: Self::Var) -> Self::Var {
        Arc::new(ops::relu(owned(x)))
    }

    fn add(&mut self, a: Self::Var, b: Self::Var) -> Self::Var {
        Arc::new(ops::add(owned(a), &b))
    }

    fn mul(&mut self, a: Self::Var, b: Self::Var) -> Self::Var {
        Arc::new(ops::mul(owned(a), &b))
    }

    fn scale(&mut self, x: Self::Var, s: f64) -> Self::Var {
        Arc::new(ops::scale(owned(x), T::from_f64(s)))
    }

    fn softmax_rows(&mut self, x: Self::Var) -> Self::Var {
        Arc::new(ops::softmax_rows(owned(x)))
    }

    fn softmax_groups(&mut self, x: Self::Var, g: usize) -> Self::Var {
        Arc::new(ops::softmax_groups(owned(x), g))
    }

    fn group_sum(&mut self, x: Self::Var, g: usize) -> Self::Var {
        Arc::new(ops::group_sum(&x, g))
    }

    fn gather_rows(&mut self, x: Self::Var, ids: &Arc<Vec<i64>>) -> Self::Var {
        Arc::new(ops::gather_rows(&x, ids))
    }

    fn concat_cols(&mut self, xs: Vec<Self::Var>) -> Self::Var {
        let refs: Vec<&Matrix<T>> = xs.iter().map(|x| &**x).collect();
        Arc::new(ops::concat_cols(&refs))
    }

    fn propagate(&mut self, x: Self::Var, adj: &Arc<Vec<[u32; 4]>>) -> Self::Var {
        Arc::new(ops::propagate(&x, adj))
    }
}
