use ndarray::{s, Array2, ArcArray2, Axis, Zip};

use super::{broadcast_shape, linalg, Ops, ParamStore, Slot, Unary};

/// Plain double-precision evaluation, no derivative tracking.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eager;

pub(crate) fn zip_with(
    a: &ArcArray2<f64>,
    b: &ArcArray2<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Array2<f64> {
    let shape = broadcast_shape(a.dim(), b.dim());
    let av = a.broadcast(shape).expect("broadcast lhs");
    let bv = b.broadcast(shape).expect("broadcast rhs");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

/// Sums `g` down to `shape` along broadcast axes.
pub(crate) fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

pub(crate) fn concat(parts: &[&ArcArray2<f64>]) -> Array2<f64> {
    let rows = parts.iter().map(|p| p.nrows()).max().unwrap_or(1);
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut c0 = 0;
    for p in parts {
        let c = p.ncols();
        let src = p.broadcast((rows, c)).expect("concat rows broadcast");
        out.slice_mut(s![.., c0..c0 + c]).assign(&src);
        c0 += c;
    }
    out
}

fn batch_rows(cols: &[&ArcArray2<f64>]) -> usize {
    cols.iter().map(|c| c.nrows()).max().unwrap_or(1)
}

fn entry(c: &ArcArray2<f64>, r: usize) -> f64 {
    if c.nrows() == 1 {
        c[[0, 0]]
    } else {
        c[[r, 0]]
    }
}

/// Gathers row `r` of the d×d system into a row-major matrix.
pub(crate) fn gather_matrix(jac: &[&ArcArray2<f64>], r: usize) -> Vec<f64> {
    jac.iter().map(|c| entry(c, r)).collect()
}

/// Row-wise solve. Singular rows produce NaN, which callers surface as errors.
pub(crate) fn batched_solve(jac: &[&ArcArray2<f64>], rhs: &[&ArcArray2<f64>]) -> Array2<f64> {
    let d = rhs.len();
    assert_eq!(jac.len(), d * d, "jacobian must have d² entries");
    let mut all: Vec<&ArcArray2<f64>> = jac.to_vec();
    all.extend_from_slice(rhs);
    let rows = batch_rows(&all);
    let mut out = Array2::zeros((rows, d));
    for r in 0..rows {
        let a = gather_matrix(jac, r);
        let b: Vec<f64> = rhs.iter().map(|c| entry(c, r)).collect();
        match linalg::solve(&a, &b) {
            Some(x) => {
                for (j, v) in x.into_iter().enumerate() {
                    out[[r, j]] = v;
                }
            }
            None => out.row_mut(r).fill(f64::NAN),
        }
    }
    out
}

pub(crate) fn batched_log_abs_det(jac: &[&ArcArray2<f64>], d: usize) -> Array2<f64> {
    let rows = batch_rows(jac);
    let mut out = Array2::zeros((rows, 1));
    for r in 0..rows {
        let a = gather_matrix(jac, r);
        out[[r, 0]] = linalg::det(&a, d).abs().ln();
    }
    out
}

pub(crate) fn dim_of(jac_len: usize) -> usize {
    let d = (jac_len as f64).sqrt().round() as usize;
    assert_eq!(d * d, jac_len, "jacobian entry count must be a square");
    d
}

impl Ops for Eager {
    type T = ArcArray2<f64>;

    fn shape(&self, a: &Self::T) -> (usize, usize) {
        a.dim()
    }

    fn constant(&self, value: Array2<f64>) -> Self::T {
        value.into_shared()
    }

    fn param(&self, store: &ParamStore, slot: Slot) -> Self::T {
        store.matrix(slot).into_shared()
    }

    fn add(&self, a: &Self::T, b: &Self::T) -> Self::T {
        zip_with(a, b, |x, y| x + y).into_shared()
    }

    fn sub(&self, a: &Self::T, b: &Self::T) -> Self::T {
        zip_with(a, b, |x, y| x - y).into_shared()
    }

    fn mul(&self, a: &Self::T, b: &Self::T) -> Self::T {
        zip_with(a, b, |x, y| x * y).into_shared()
    }

    fn div(&self, a: &Self::T, b: &Self::T) -> Self::T {
        zip_with(a, b, |x, y| x / y).into_shared()
    }

    fn scale(&self, a: &Self::T, c: f64) -> Self::T {
        a.map(|x| x * c).into_shared()
    }

    fn add_scalar(&self, a: &Self::T, c: f64) -> Self::T {
        a.map(|x| x + c).into_shared()
    }

    fn matmul(&self, a: &Self::T, w: &Self::T) -> Self::T {
        a.dot(w).into_shared()
    }

    fn unary(&self, a: &Self::T, op: Unary) -> Self::T {
        a.map(|&x| op.apply(x)).into_shared()
    }

    fn sum_cols(&self, a: &Self::T) -> Self::T {
        a.sum_axis(Axis(1)).insert_axis(Axis(1)).into_shared()
    }

    fn sum_all(&self, a: &Self::T) -> Self::T {
        Array2::from_elem((1, 1), a.sum()).into_shared()
    }

    fn concat_cols(&self, parts: &[Self::T]) -> Self::T {
        let refs: Vec<&ArcArray2<f64>> = parts.iter().collect();
        concat(&refs).into_shared()
    }

    fn slice_cols(&self, a: &Self::T, start: usize, len: usize) -> Self::T {
        a.slice(s![.., start..start + len]).to_owned().into_shared()
    }

    fn solve(&self, jac: &[Self::T], rhs: &[Self::T]) -> Vec<Self::T> {
        let j: Vec<_> = jac.iter().collect();
        let b: Vec<_> = rhs.iter().collect();
        let x = batched_solve(&j, &b);
        (0..rhs.len())
            .map(|k| x.slice(s![.., k..k + 1]).to_owned().into_shared())
            .collect()
    }

    fn log_abs_det(&self, jac: &[Self::T]) -> Self::T {
        let j: Vec<_> = jac.iter().collect();
        batched_log_abs_det(&j, dim_of(jac.len())).into_shared()
    }
}
