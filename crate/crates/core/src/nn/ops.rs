//! Forward kernels shared by the recording tape and the no-grad evaluator.

use super::matrix::{matmul, Matrix, Real};

pub fn add_bias<T: Real>(mut x: Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(b.rows(), 1, "bias must be a row vector");
    assert_eq!(b.cols(), x.cols(), "bias width");
    let c = x.cols();
    if c == 0 {
        return x;
    }
    for row in x.data_mut().chunks_mut(c) {
        for (v, &bb) in row.iter_mut().zip(b.data()) {
            *v = *v + bb;
        }
    }
    x
}

pub fn relu<T: Real>(mut x: Matrix<T>) -> Matrix<T> {
    for v in x.data_mut() {
        // NaN passes through so non-finite parameters surface in the loss
        if *v <= T::zero() {
            *v = T::zero();
        }
    }
    x
}

pub fn add<T: Real>(mut a: Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    a.add_assign(b);
    a
}

pub fn mul<T: Real>(mut a: Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.shape(), b.shape(), "mul shape");
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x = *x * y;
    }
    a
}

pub fn scale<T: Real>(mut x: Matrix<T>, s: T) -> Matrix<T> {
    for v in x.data_mut() {
        *v = *v * s;
    }
    x
}

fn softmax_slice<T: Real>(v: &mut [T]) {
    let m = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut s = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s = s + *x;
    }
    for x in v.iter_mut() {
        *x = *x / s;
    }
}

/// Softmax across the columns of each row.
pub fn softmax_rows<T: Real>(mut x: Matrix<T>) -> Matrix<T> {
    let c = x.cols();
    if c == 0 {
        return x;
    }
    for row in x.data_mut().chunks_mut(c) {
        softmax_slice(row);
    }
    x
}

/// Softmax down each column within consecutive blocks of `g` rows.
pub fn softmax_groups<T: Real>(mut x: Matrix<T>, g: usize) -> Matrix<T> {
    assert!(g > 0 && x.rows().is_multiple_of(g), "softmax group size {g} vs {} rows", x.rows());
    let c = x.cols();
    let mut col = vec![T::zero(); g];
    for block in x.data_mut().chunks_mut(g * c) {
        for j in 0..c {
            for r in 0..g {
                col[r] = block[r * c + j];
            }
            softmax_slice(&mut col);
            for r in 0..g {
                block[r * c + j] = col[r];
            }
        }
    }
    x
}

/// Backward of a softmax over index sets: `dx = y ⊙ (dy - Σ y·dy)`.
pub fn softmax_groups_backward<T: Real>(y: &Matrix<T>, dy: &Matrix<T>, g: usize) -> Matrix<T> {
    let c = y.cols();
    let mut dx = Matrix::zeros(y.rows(), c);
    for (b, (yb, dyb)) in y.data().chunks(g * c).zip(dy.data().chunks(g * c)).enumerate() {
        let out = &mut dx.data_mut()[b * g * c..(b + 1) * g * c];
        for j in 0..c {
            let mut s = T::zero();
            for r in 0..g {
                s = s + yb[r * c + j] * dyb[r * c + j];
            }
            for r in 0..g {
                out[r * c + j] = yb[r * c + j] * (dyb[r * c + j] - s);
            }
        }
    }
    dx
}

pub fn softmax_rows_backward<T: Real>(y: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
    let c = y.cols();
    let mut dx = Matrix::zeros(y.rows(), c);
    if c == 0 {
        return dx;
    }
    for ((yr, dyr), out) in y.data().chunks(c).zip(dy.data().chunks(c)).zip(dx.data_mut().chunks_mut(c)) {
        let s: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for k in 0..c {
            out[k] = yr[k] * (dyr[k] - s);
        }
    }
    dx
}

/// Sums consecutive blocks of `g` rows.
pub fn group_sum<T: Real>(x: &Matrix<T>, g: usize) -> Matrix<T> {
    assert!(g > 0 && x.rows().is_multiple_of(g), "group size {g} vs {} rows", x.rows());
    let c = x.cols();
    let mut out = Matrix::zeros(x.rows() / g, c);
    for (i, block) in x.data().chunks(g * c.max(1)).enumerate().take(x.rows() / g) {
        let o = out.row_mut(i);
        for r in 0..g {
            for j in 0..c {
                o[j] = o[j] + block[r * c + j];
            }
        }
    }
    out
}

/// Repeats each row `g` times consecutively (adjoint of [`group_sum`]).
pub fn repeat_rows<T: Real>(x: &Matrix<T>, g: usize) -> Matrix<T> {
    let c = x.cols();
    let mut data = Vec::with_capacity(x.rows() * g * c);
    for i in 0..x.rows() {
        for _ in 0..g {
            data.extend_from_slice(x.row(i));
        }
    }
    Matrix::from_vec(x.rows() * g, c, data)
}

/// Row `ids[r]` of `x` for each `r`; id `-1` gives a zero row.
pub fn gather_rows<T: Real>(x: &Matrix<T>, ids: &[i64]) -> Matrix<T> {
    let c = x.cols();
    let mut data = Vec::with_capacity(ids.len() * c);
    for &id in ids {
        if id < 0 {
            assert_eq!(id, -1, "negative gather id other than -1");
            data.extend(std::iter::repeat_n(T::zero(), c));
        } else {
            assert!((id as usize) < x.rows(), "gather id {id} out of range for {} rows", x.rows());
            data.extend_from_slice(x.row(id as usize));
        }
    }
    Matrix::from_vec(ids.len(), c, data)
}

/// Adjoint of [`gather_rows`]: scatter-adds rows of `dy` into `n` rows.
pub fn scatter_add_rows<T: Real>(dy: &Matrix<T>, ids: &[i64], n: usize) -> Matrix<T> {
    let c = dy.cols();
    let mut out = Matrix::zeros(n, c);
    for (r, &id) in ids.iter().enumerate() {
        if id >= 0 {
            let src = dy.row(r);
            let dst = out.row_mut(id as usize);
            for j in 0..c {
                dst[j] = dst[j] + src[j];
            }
        }
    }
    out
}

pub fn concat_cols<T: Real>(xs: &[&Matrix<T>]) -> Matrix<T> {
    let rows = xs.first().map_or(0, |x| x.rows());
    let cols: usize = xs.iter().map(|x| x.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for x in xs {
            assert_eq!(x.rows(), rows, "concat row count");
            data.extend_from_slice(x.row(r));
        }
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn split_cols<T: Real>(x: &Matrix<T>, widths: &[usize]) -> Vec<Matrix<T>> {
    let mut out: Vec<Matrix<T>> = widths.iter().map(|&w| Matrix::zeros(x.rows(), w)).collect();
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut off = 0;
        for (o, &w) in out.iter_mut().zip(widths) {
            o.row_mut(r).copy_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    out
}

/// `Â x` with `Â = D^{-1/2} (A + I) D^{-1/2}` for a 4-regular adjacency,
/// which is `(x_i + Σ_j x_{nbr(i, j)}) / 5`. Evaluated as
/// `x_i + Σ_j (x_j - x_i) / 5` so constant columns are reproduced exactly.
pub fn propagate<T: Real>(x: &Matrix<T>, adj: &[[u32; 4]]) -> Matrix<T> {
    assert_eq!(x.rows(), adj.len(), "propagation row count");
    let c = x.cols();
    let five = T::from_f64(5.0);
    let mut out = Matrix::zeros(x.rows(), c);
    let mut acc = vec![T::zero(); c];
    for (i, nb) in adj.iter().enumerate() {
        let xi = x.row(i);
        acc.iter_mut().for_each(|a| *a = T::zero());
        for &j in nb {
            let src = x.row(j as usize);
            for k in 0..c {
                acc[k] = acc[k] + (src[k] - xi[k]);
            }
        }
        let o = out.row_mut(i);
        for k in 0..c {
            o[k] = xi[k] + acc[k] / five;
        }
    }
    out
}

pub fn dense<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    add_bias(matmul(x, false, w, false), b)
}
