//! Automatic differentiation over small batched tensors.
//!
//! Model code is written once against the [`Ops`] trait and then run under
//! different interpreters:
//!
//! * [`Eager`] evaluates plain `f64` arrays,
//! * [`Tape`] records a reverse-mode graph for parameter gradients,
//! * [`Fwd`] wraps any other interpreter with forward-mode tangents.
//!
//! Nesting gives the higher-order patterns the field needs: `Fwd<Eager>` for
//! Jacobians, `Fwd<Fwd<Eager>>` for divergences of the velocity and
//! `Fwd<Tape>` for losses that contain Jacobian entries (reverse-over-forward).
//!
//! Every tensor is two dimensional, `rows × cols`, with rows indexing batch
//! elements. Binary operations broadcast along an axis of length one.

mod check;
mod eager;
mod fwd;
pub mod linalg;
mod params;
mod scalar;
mod tape;

pub use check::{check_gradient, jacobian, time_derivative, GradientCheck, LossBuilder, SpatialMap, TimeMap};
pub use eager::Eager;
pub use fwd::{Dual, Fwd};
pub use params::{ParamStore, Slot, SlotInfo};
pub use scalar::{DualScalar, Real};
pub use tape::{Tape, Var};

use ndarray::Array2;

/// Elementwise primitive functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Exp,
    Log,
    Log1p,
    Tanh,
    Atanh,
    Sin,
    Cos,
    Sqrt,
    Square,
    Recip,
    Powf(f64),
    Abs,
    /// Piecewise constant; its derivative is zero everywhere.
    Sign,
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Log1p => x.ln_1p(),
            Unary::Tanh => x.tanh(),
            Unary::Atanh => x.atanh(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Recip => 1.0 / x,
            Unary::Powf(p) => x.powf(p),
            Unary::Abs => x.abs(),
            Unary::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative given the input `x` and the output `y = f(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Log1p => 1.0 / (1.0 + x),
            Unary::Tanh => 1.0 - y * y,
            Unary::Atanh => 1.0 / (1.0 - x * x),
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Recip => -y * y,
            Unary::Powf(p) => p * x.powf(p - 1.0),
            Unary::Abs => Unary::Sign.apply(x),
            Unary::Sign => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Log1p => "log1p",
            Unary::Tanh => "tanh",
            Unary::Atanh => "atanh",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Recip => "recip",
            Unary::Powf(_) => "powf",
            Unary::Abs => "abs",
            Unary::Sign => "sign",
        }
    }
}

/// Interpreter for differentiable tensor programs.
pub trait Ops {
    type T: Clone;

    fn shape(&self, a: &Self::T) -> (usize, usize);
    fn constant(&self, value: Array2<f64>) -> Self::T;
    fn param(&self, store: &ParamStore, slot: Slot) -> Self::T;

    fn add(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn div(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&self, a: &Self::T, c: f64) -> Self::T;
    fn add_scalar(&self, a: &Self::T, c: f64) -> Self::T;
    /// `a (r × n) · w (n × m)`.
    fn matmul(&self, a: &Self::T, w: &Self::T) -> Self::T;
    fn unary(&self, a: &Self::T, op: Unary) -> Self::T;
    /// Row sums, `r × c → r × 1`.
    fn sum_cols(&self, a: &Self::T) -> Self::T;
    /// Sum of all entries, `→ 1 × 1`.
    fn sum_all(&self, a: &Self::T) -> Self::T;
    /// Horizontal concatenation; single-row parts broadcast over rows.
    fn concat_cols(&self, parts: &[Self::T]) -> Self::T;
    fn slice_cols(&self, a: &Self::T, start: usize, len: usize) -> Self::T;
    /// Row-wise solve of `J x = b` for d×d systems.
    ///
    /// `jac` holds the d² entries row-major and `rhs` the d right-hand sides,
    /// each an `r × 1` column (or `1 × 1`, broadcast). Returns d columns.
    fn solve(&self, jac: &[Self::T], rhs: &[Self::T]) -> Vec<Self::T>;
    /// Row-wise `log |det J|` for d×d systems laid out as in [`Ops::solve`].
    fn log_abs_det(&self, jac: &[Self::T]) -> Self::T;

    fn scalar(&self, c: f64) -> Self::T {
        self.constant(Array2::from_elem((1, 1), c))
    }
    fn neg(&self, a: &Self::T) -> Self::T {
        self.scale(a, -1.0)
    }
    fn exp(&self, a: &Self::T) -> Self::T {
        self.unary(a, Unary::Exp)
    }
    fn log(&self, a: &Self::T) -> Self::T {
        self.unary(a, Unary::Log)
    }
    fn sin(&self, a: &Self::T) -> Self::T {
        self.unary(a, Unary::Sin)
    }
    fn tanh(&self, a: &Self::T) -> Self::T {
        self.unary(a, Unary::Tanh)
    }
    fn square(&self, a: &Self::T) -> Self::T {
        self.unary(a, Unary::Square)
    }
    fn col(&self, a: &Self::T, j: usize) -> Self::T {
        self.slice_cols(a, j, 1)
    }
    fn mean_all(&self, a: &Self::T) -> Self::T {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(&s, 1.0 / (r * c) as f64)
    }
    /// `x · sigmoid(x)`, with the sigmoid written through `tanh` for stability.
    fn swish(&self, a: &Self::T) -> Self::T {
        let half = self.scale(a, 0.5);
        let gate = self.add_scalar(&self.tanh(&half), 1.0);
        self.mul(&half, &gate)
    }
    /// `sin(ω x) / ω`, 1-Lipschitz for every ω > 0.
    fn sine_act(&self, a: &Self::T, omega: f64) -> Self::T {
        let s = self.sin(&self.scale(a, omega));
        self.scale(&s, 1.0 / omega)
    }
}

/// Output shape of a broadcasting binary operation.
pub(crate) fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}
