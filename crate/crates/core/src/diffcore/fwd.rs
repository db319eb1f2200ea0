use ndarray::Array2;

use super::{Ops, ParamStore, Slot, Unary};

/// A tensor together with a fixed number of directional derivatives.
///
/// `None` marks a tangent that is identically zero, which keeps parameters and
/// time-only quantities from carrying dead spatial tangents.
#[derive(Debug, Clone)]
pub struct Dual<T> {
    pub value: T,
    pub tangents: Vec<Option<T>>,
}

/// Forward-mode interpreter layered over another interpreter.
#[derive(Debug, Clone, Copy)]
pub struct Fwd<'a, O: Ops> {
    inner: &'a O,
    dirs: usize,
}

impl<'a, O: Ops> Fwd<'a, O> {
    pub fn new(inner: &'a O, dirs: usize) -> Self {
        Self { inner, dirs }
    }

    pub fn inner(&self) -> &'a O {
        self.inner
    }

    pub fn dirs(&self) -> usize {
        self.dirs
    }

    /// Lifts an inner value with all-zero tangents.
    pub fn lift(&self, value: O::T) -> Dual<O::T> {
        Dual {
            value,
            tangents: vec![None; self.dirs],
        }
    }

    /// Lifts `value` with tangent `seed` in direction `dir`.
    pub fn seed(&self, value: O::T, dir: usize, seed: O::T) -> Dual<O::T> {
        let mut d = self.lift(value);
        d.tangents[dir] = Some(seed);
        d
    }

    fn map_tangents(&self, a: &Dual<O::T>, f: impl Fn(&O::T) -> O::T) -> Vec<Option<O::T>> {
        a.tangents.iter().map(|t| t.as_ref().map(&f)).collect()
    }

    /// Widens a column-broadcast tangent to the value's column count.
    fn full_cols(&self, t: &O::T, cols: usize) -> O::T {
        let c = self.inner.shape(t).1;
        if c == cols {
            t.clone()
        } else {
            self.inner.add(t, &self.inner.constant(Array2::zeros((1, cols))))
        }
    }

    fn add_opt(&self, a: Option<O::T>, b: Option<O::T>) -> Option<O::T> {
        match (a, b) {
            (Some(a), Some(b)) => Some(self.inner.add(&a, &b)),
            (a, None) => a,
            (None, b) => b,
        }
    }
}

impl<'a, O: Ops> Ops for Fwd<'a, O> {
    type T = Dual<O::T>;

    fn shape(&self, a: &Self::T) -> (usize, usize) {
        self.inner.shape(&a.value)
    }

    fn constant(&self, value: Array2<f64>) -> Self::T {
        self.lift(self.inner.constant(value))
    }

    fn param(&self, store: &ParamStore, slot: Slot) -> Self::T {
        self.lift(self.inner.param(store, slot))
    }

    fn add(&self, a: &Self::T, b: &Self::T) -> Self::T {
        let o = self.inner;
        Dual {
            value: o.add(&a.value, &b.value),
            tangents: a
                .tangents
                .iter()
                .zip(&b.tangents)
                .map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => Some(o.add(x, y)),
                    (Some(x), None) => Some(x.clone()),
                    (None, Some(y)) => Some(y.clone()),
                    (None, None) => None,
                })
                .collect(),
        }
    }

    fn sub(&self, a: &Self::T, b: &Self::T) -> Self::T {
        let o = self.inner;
        Dual {
            value: o.sub(&a.value, &b.value),
            tangents: a
                .tangents
                .iter()
                .zip(&b.tangents)
                .map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => Some(o.sub(x, y)),
                    (Some(x), None) => Some(x.clone()),
                    (None, Some(y)) => Some(o.neg(y)),
                    (None, None) => None,
                })
                .collect(),
        }
    }

    fn mul(&self, a: &Self::T, b: &Self::T) -> Self::T {
        let o = self.inner;
        Dual {
            value: o.mul(&a.value, &b.value),
            tangents: a
                .tangents
                .iter()
                .zip(&b.tangents)
                .map(|(x, y)| {
                    let l = x.as_ref().map(|x| o.mul(x, &b.value));
                    let r = y.as_ref().map(|y| o.mul(&a.value, y));
                    self.add_opt(l, r)
                })
                .collect(),
        }
    }

    fn div(&self, a: &Self::T, b: &Self::T) -> Self::T {
        let o = self.inner;
        let value = o.div(&a.value, &b.value);
        let tangents = a
            .tangents
            .iter()
            .zip(&b.tangents)
            .map(|(x, y)| {
                // (a/b)' = (a' - (a/b) b') / b
                let num = match (x, y) {
                    (Some(x), Some(y)) => Some(o.sub(x, &o.mul(&value, y))),
                    (Some(x), None) => Some(x.clone()),
                    (None, Some(y)) => Some(o.neg(&o.mul(&value, y))),
                    (None, None) => None,
                };
                num.map(|n| o.div(&n, &b.value))
            })
            .collect();
        Dual { value, tangents }
    }

    fn scale(&self, a: &Self::T, c: f64) -> Self::T {
        Dual {
            value: self.inner.scale(&a.value, c),
            tangents: self.map_tangents(a, |t| self.inner.scale(t, c)),
        }
    }

    fn add_scalar(&self, a: &Self::T, c: f64) -> Self::T {
        Dual {
            value: self.inner.add_scalar(&a.value, c),
            tangents: a.tangents.clone(),
        }
    }

    fn matmul(&self, a: &Self::T, w: &Self::T) -> Self::T {
        let o = self.inner;
        Dual {
            value: o.matmul(&a.value, &w.value),
            tangents: a
                .tangents
                .iter()
                .zip(&w.tangents)
                .map(|(x, y)| {
                    let l = x.as_ref().map(|x| o.matmul(&self.full_cols(x, o.shape(&a.value).1), &w.value));
                    let r = y.as_ref().map(|y| o.matmul(&a.value, y));
                    self.add_opt(l, r)
                })
                .collect(),
        }
    }

    fn unary(&self, a: &Self::T, op: Unary) -> Self::T {
        let o = self.inner;
        let x = &a.value;
        let y = o.unary(x, op);
        if op == Unary::Sign || a.tangents.iter().all(Option::is_none) {
            return self.lift(y);
        }
        // Local derivative as an inner-interpreter tensor, so nesting composes.
        let deriv = match op {
            Unary::Exp => y.clone(),
            Unary::Log => o.unary(x, Unary::Recip),
            Unary::Log1p => o.unary(&o.add_scalar(x, 1.0), Unary::Recip),
            Unary::Tanh => o.add_scalar(&o.neg(&o.square(&y)), 1.0),
            Unary::Atanh => o.unary(&o.add_scalar(&o.neg(&o.square(x)), 1.0), Unary::Recip),
            Unary::Sin => o.unary(x, Unary::Cos),
            Unary::Cos => o.neg(&o.unary(x, Unary::Sin)),
            Unary::Sqrt => o.scale(&o.unary(&y, Unary::Recip), 0.5),
            Unary::Square => o.scale(x, 2.0),
            Unary::Recip => o.neg(&o.square(&y)),
            Unary::Powf(p) => o.scale(&o.unary(x, Unary::Powf(p - 1.0)), p),
            Unary::Abs => o.unary(x, Unary::Sign),
            Unary::Sign => unreachable!(),
        };
        Dual {
            value: y,
            tangents: self.map_tangents(a, |t| o.mul(t, &deriv)),
        }
    }

    fn sum_cols(&self, a: &Self::T) -> Self::T {
        let cols = self.inner.shape(&a.value).1;
        Dual {
            value: self.inner.sum_cols(&a.value),
            tangents: self.map_tangents(a, |t| self.inner.sum_cols(&self.full_cols(t, cols))),
        }
    }

    fn sum_all(&self, a: &Self::T) -> Self::T {
        let (rows, cols) = self.inner.shape(&a.value);
        Dual {
            value: self.inner.sum_all(&a.value),
            tangents: self.map_tangents(a, |t| {
                // A single-row tangent broadcast over `rows` sums to `rows` times its sum.
                let t = self.full_cols(t, cols);
                let s = self.inner.sum_all(&t);
                let t = &t;
                let tr = self.inner.shape(t).0;
                if tr == rows {
                    s
                } else {
                    self.inner.scale(&s, rows as f64 / tr as f64)
                }
            }),
        }
    }

    fn concat_cols(&self, parts: &[Self::T]) -> Self::T {
        let o = self.inner;
        let value = o.concat_cols(&parts.iter().map(|p| p.value.clone()).collect::<Vec<_>>());
        let tangents = (0..self.dirs)
            .map(|k| {
                if parts.iter().all(|p| p.tangents[k].is_none()) {
                    return None;
                }
                let cols: Vec<O::T> = parts
                    .iter()
                    .map(|p| match &p.tangents[k] {
                        Some(t) => self.full_cols(t, o.shape(&p.value).1),
                        None => o.constant(Array2::zeros((1, o.shape(&p.value).1))),
                    })
                    .collect();
                Some(o.concat_cols(&cols))
            })
            .collect();
        Dual { value, tangents }
    }

    fn slice_cols(&self, a: &Self::T, start: usize, len: usize) -> Self::T {
        let cols = self.inner.shape(&a.value).1;
        Dual {
            value: self.inner.slice_cols(&a.value, start, len),
            tangents: self.map_tangents(a, |t| self.inner.slice_cols(&self.full_cols(t, cols), start, len)),
        }
    }

    fn solve(&self, jac: &[Self::T], rhs: &[Self::T]) -> Vec<Self::T> {
        let o = self.inner;
        let d = rhs.len();
        let jv: Vec<O::T> = jac.iter().map(|j| j.value.clone()).collect();
        let bv: Vec<O::T> = rhs.iter().map(|b| b.value.clone()).collect();
        let x = o.solve(&jv, &bv);
        let mut out: Vec<Self::T> = x.iter().map(|xi| self.lift(xi.clone())).collect();
        for k in 0..self.dirs {
            let any_j = jac.iter().any(|j| j.tangents[k].is_some());
            let any_b = rhs.iter().any(|b| b.tangents[k].is_some());
            if !any_j && !any_b {
                continue;
            }
            // dx = J⁻¹ (db − dJ x)
            let r: Vec<O::T> = (0..d)
                .map(|i| {
                    let mut acc = rhs[i].tangents[k].clone();
                    for j in 0..d {
                        if let Some(dj) = &jac[i * d + j].tangents[k] {
                            let term = o.neg(&o.mul(dj, &x[j]));
                            acc = self.add_opt(acc, Some(term));
                        }
                    }
                    acc.unwrap_or_else(|| o.scalar(0.0))
                })
                .collect();
            let dx = o.solve(&jv, &r);
            for (i, dxi) in dx.into_iter().enumerate() {
                out[i].tangents[k] = Some(dxi);
            }
        }
        out
    }

    fn log_abs_det(&self, jac: &[Self::T]) -> Self::T {
        let o = self.inner;
        let d = super::eager::dim_of(jac.len());
        let jv: Vec<O::T> = jac.iter().map(|j| j.value.clone()).collect();
        let value = o.log_abs_det(&jv);
        let mut result = self.lift(value);
        if jac.iter().all(|j| j.tangents.iter().all(Option::is_none)) {
            return result;
        }
        // d log|det J| = tr(J⁻¹ dJ); columns of J⁻¹ come from unit right-hand sides.
        let inv_cols: Vec<Vec<O::T>> = (0..d)
            .map(|c| {
                let e: Vec<O::T> = (0..d).map(|i| o.scalar(if i == c { 1.0 } else { 0.0 })).collect();
                o.solve(&jv, &e)
            })
            .collect();
        for k in 0..self.dirs {
            let mut acc: Option<O::T> = None;
            for i in 0..d {
                for j in 0..d {
                    if let Some(dj) = &jac[i * d + j].tangents[k] {
                        // (J⁻¹)_{ji} is row j of column i.
                        acc = self.add_opt(acc, Some(o.mul(&inv_cols[i][j], dj)));
                    }
                }
            }
            result.tangents[k] = acc;
        }
        result
    }
}
