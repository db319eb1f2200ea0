use ndarray::Array2;

use super::{Eager, Fwd, Ops, ParamStore, Tape};
use crate::error::{Error, Result};

/// A differentiable map `R^d → R^d` evaluated on `1 × d` rows.
pub trait SpatialMap {
    fn dim(&self) -> usize;
    fn eval<O: Ops>(&self, ops: &O, x: &O::T) -> O::T;
}

/// A time-conditioned map `(t, x) ↦ Φ_t(x)`; `t` is `1 × 1`, `x` is `1 × d`.
pub trait TimeMap {
    fn dim(&self) -> usize;
    fn eval<O: Ops>(&self, ops: &O, t: &O::T, x: &O::T) -> O::T;
}

/// Builds a scalar loss from parameters under any interpreter.
pub trait LossBuilder {
    fn build<O: Ops>(&self, ops: &O, params: &ParamStore) -> Result<O::T>;
}

fn row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector")
}

fn unit(d: usize, j: usize) -> Array2<f64> {
    let mut e = Array2::zeros((1, d));
    e[[0, j]] = 1.0;
    e
}

/// Exact Jacobian by one forward-mode pass per coordinate; entry `[i][j] = ∂f_i/∂x_j`.
pub fn jacobian<M: SpatialMap>(map: &M, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = map.dim();
    if !(1..=3).contains(&d) || x.len() != d {
        return Err(Error::invalid(format!("jacobian expects 1 ≤ d ≤ 3 and a matching point, got d={d}")));
    }
    let e = Eager;
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let f = Fwd::new(&e, 1);
        let xin = f.seed(e.constant(row(x)), 0, e.constant(unit(d, j)));
        let y = map.eval(&f, &xin);
        for i in 0..d {
            let v = match &y.tangents[0] {
                Some(t) => t[[0, if t.ncols() == 1 { 0 } else { i }]],
                None => 0.0,
            };
            if !v.is_finite() || !y.value[[0, i]].is_finite() {
                return Err(Error::NonFiniteValue { what: "jacobian" });
            }
            jac[i][j] = v;
        }
    }
    Ok(jac)
}

/// `∂Φ(x; t)/∂t` holding `x` fixed, by seeding the time input.
pub fn time_derivative<M: TimeMap>(map: &M, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = map.dim();
    let e = Eager;
    let f = Fwd::new(&e, 1);
    let tin = f.seed(e.constant(row(&[t])), 0, e.constant(row(&[1.0])));
    let xin = f.lift(e.constant(row(x)));
    let y = map.eval(&f, &tin, &xin);
    let out: Vec<f64> = (0..d)
        .map(|i| match &y.tangents[0] {
            Some(tan) => tan[[0, if tan.ncols() == 1 { 0 } else { i }]],
            None => 0.0,
        })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { what: "time derivative" });
    }
    Ok(out)
}

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Worst `|g − fd| / max(|g|, |fd|, 1e-4)` over checked parameters.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Relative-error floor below which gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

/// Compares the tape gradient of `builder` with fourth-order central
/// differences of step `step` at the parameter indices `indices` (all parameters when `None`).
pub fn check_gradient<L: LossBuilder>(
    builder: &L,
    params: &ParamStore,
    step: f64,
    indices: Option<&[usize]>,
) -> Result<GradientCheck> {
    if step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let tape = Tape::new();
    let root = builder.build(&tape, params)?;
    let grad = tape.gradient(&root, params)?;

    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let eval = |p: &ParamStore| -> Result<f64> {
        let v = builder.build(&Eager, p)?;
        Ok(v[[0, 0]])
    };
    let mut work = params.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for &i in idx {
        let orig = work.values()[i];
        let mut at = |k: f64| -> Result<f64> {
            work.values_mut()[i] = orig + k * step;
            eval(&work)
        };
        let fd = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * step);
        work.values_mut()[i] = orig;
        let abs = (grad[i] - fd).abs();
        let rel = abs / grad[i].abs().max(fd.abs()).max(REL_FLOOR);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    Ok(GradientCheck {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Slot, Unary};

    struct Linear;
    impl SpatialMap for Linear {
        fn dim(&self) -> usize {
            2
        }
        fn eval<O: Ops>(&self, ops: &O, x: &O::T) -> O::T {
            ops.mul(x, &ops.constant(ndarray::array![[2.0, 3.0]]))
        }
    }

    struct Shear;
    impl SpatialMap for Shear {
        fn dim(&self) -> usize {
            2
        }
        fn eval<O: Ops>(&self, ops: &O, x: &O::T) -> O::T {
            let x1 = ops.col(x, 0);
            let x2 = ops.col(x, 1);
            let y1 = ops.add(&x1, &ops.scale(&ops.sin(&x2), 0.1));
            ops.concat_cols(&[y1, x2])
        }
    }

    struct Identity(usize);
    impl SpatialMap for Identity {
        fn dim(&self) -> usize {
            self.0
        }
        fn eval<O: Ops>(&self, _ops: &O, x: &O::T) -> O::T {
            x.clone()
        }
    }

    #[test]
    fn jacobian_examples() {
        let j = jacobian(&Identity(3), &[0.3, -1.0, 2.0]).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert_eq!(j[i][k], if i == k { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(jacobian(&Linear, &[1.0, 1.0]).unwrap(), vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(jacobian(&Shear, &[0.0, 0.0]).unwrap(), vec![vec![1.0, 0.1], vec![0.0, 1.0]]);
    }

    struct Decay;
    impl TimeMap for Decay {
        fn dim(&self) -> usize {
            2
        }
        fn eval<O: Ops>(&self, ops: &O, t: &O::T, x: &O::T) -> O::T {
            ops.mul(x, &ops.exp(&ops.neg(t)))
        }
    }

    struct Drift;
    impl TimeMap for Drift {
        fn dim(&self) -> usize {
            2
        }
        fn eval<O: Ops>(&self, ops: &O, t: &O::T, x: &O::T) -> O::T {
            let z = ops.scale(t, 0.0);
            ops.add(x, &ops.concat_cols(&[t.clone(), z]))
        }
    }

    struct Still;
    impl TimeMap for Still {
        fn dim(&self) -> usize {
            2
        }
        fn eval<O: Ops>(&self, ops: &O, _t: &O::T, x: &O::T) -> O::T {
            ops.scale(x, 1.5)
        }
    }

    #[test]
    fn time_derivative_examples() {
        assert_eq!(time_derivative(&Decay, 0.0, &[1.0, 1.0]).unwrap(), vec![-1.0, -1.0]);
        assert_eq!(time_derivative(&Still, 0.4, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(time_derivative(&Drift, 0.7, &[3.0, -2.0]).unwrap(), vec![1.0, 0.0]);
    }

    struct Quadratic(Slot);
    impl LossBuilder for Quadratic {
        fn build<O: Ops>(&self, ops: &O, params: &ParamStore) -> Result<O::T> {
            let p = ops.param(params, self.0);
            let c = ops.constant(ndarray::array![[1.0, -2.0, 0.5]]);
            let diff = ops.sub(&p, &c);
            Ok(ops.sum_all(&ops.mul(&ops.square(&diff), &ops.constant(ndarray::array![[1.0, 3.0, 0.25]]))))
        }
    }

    struct ConstantLoss;
    impl LossBuilder for ConstantLoss {
        fn build<O: Ops>(&self, ops: &O, _params: &ParamStore) -> Result<O::T> {
            Ok(ops.scalar(2.5))
        }
    }

    #[test]
    fn gradient_check_quadratic_and_constant() {
        let mut p = ParamStore::new();
        let s = p.add("w", 1, 3, vec![0.3, 0.7, -1.1]);
        let c = check_gradient(&Quadratic(s), &p, 1e-5, None).unwrap();
        assert!(c.max_rel_error <= 1e-8, "{c:?}");
        let c = check_gradient(&ConstantLoss, &p, 1e-5, None).unwrap();
        assert!(c.max_abs_error <= 1e-12);
    }

    struct NestedLogDet(Slot);
    impl LossBuilder for NestedLogDet {
        // log|det J| of x ↦ x + 0.3 tanh(W x) at a fixed point, differentiated in W.
        fn build<O: Ops>(&self, ops: &O, params: &ParamStore) -> Result<O::T> {
            let f = Fwd::new(ops, 2);
            let x = f.constant(ndarray::array![[0.4, -0.2]]);
            let mut x = x;
            x.tangents[0] = Some(ops.constant(ndarray::array![[1.0, 0.0]]));
            x.tangents[1] = Some(ops.constant(ndarray::array![[0.0, 1.0]]));
            let w = f.param(params, self.0);
            let h = f.unary(&f.matmul(&x, &w), Unary::Tanh);
            let y = f.add(&x, &f.scale(&h, 0.3));
            let jac: Vec<O::T> = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| ops.col(y.tangents[j].as_ref().unwrap(), i))
                .collect();
            Ok(ops.sum_all(&ops.log_abs_det(&jac)))
        }
    }

    #[test]
    fn nested_derivative_passes_gradient_check() {
        let mut p = ParamStore::new();
        let s = p.add("w", 2, 2, vec![0.5, -0.3, 0.8, 0.2]);
        let c = check_gradient(&NestedLogDet(s), &p, 1e-5, None).unwrap();
        assert!(c.max_rel_error <= 1e-6, "{c:?}");
    }
}
