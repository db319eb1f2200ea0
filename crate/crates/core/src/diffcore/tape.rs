use std::cell::RefCell;

use ndarray::{s, Array2, ArcArray2, Axis};

use super::eager::{batched_log_abs_det, batched_solve, concat, dim_of, gather_matrix, reduce_to, zip_with};
use super::{linalg, Ops, ParamStore, Slot, Unary};
use crate::error::{Error, Result};

/// Handle to a recorded tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(Slot),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Unary(usize, Unary),
    SumCols(usize),
    SumAll(usize),
    Concat(Vec<usize>),
    SliceCols(usize, usize),
    Solve { jac: Vec<usize>, rhs: Vec<usize> },
    LogAbsDet { jac: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Unary(_, u) => u.name(),
            Op::SumCols(_) => "sum_cols",
            Op::SumAll(_) => "sum_all",
            Op::Concat(_) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::Solve { .. } => "solve",
            Op::LogAbsDet { .. } => "log_abs_det",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: ArcArray2<f64>,
    op: Op,
}

/// Reverse-mode recording. Nodes are appended in evaluation order, so parents
/// always precede children; one sweep differentiates one scalar root.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: &Var) -> ArcArray2<f64> {
        self.nodes.borrow()[v.idx].value.clone()
    }

    pub fn scalar_value(&self, v: &Var) -> f64 {
        self.nodes.borrow()[v.idx].value[[0, 0]]
    }

    fn push(&self, value: Array2<f64>, op: Op) -> Var {
        let (rows, cols) = value.dim();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: value.into_shared(),
            op,
        });
        Var {
            idx: nodes.len() - 1,
            rows,
            cols,
        }
    }

    fn val(&self, v: &Var) -> ArcArray2<f64> {
        self.nodes.borrow()[v.idx].value.clone()
    }

    /// Gradient of the scalar `root` with respect to every parameter in `store`.
    ///
    /// Parameters that do not influence the root get a zero gradient.
    pub fn gradient(&self, root: &Var, store: &ParamStore) -> Result<Vec<f64>> {
        if (root.rows, root.cols) != (1, 1) {
            return Err(Error::Shape(format!("gradient root must be 1×1, got {}×{}", root.rows, root.cols)));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.idx + 1];
        grads[root.idx] = Some(Array2::ones((1, 1)));
        let mut out = vec![0.0; store.len()];

        fn acc(grads: &mut [Option<Array2<f64>>], idx: usize, g: Array2<f64>) {
            match &mut grads[idx] {
                Some(existing) => {
                    if existing.dim() == g.dim() {
                        *existing += &g;
                    } else {
                        *existing += &g.broadcast(existing.dim()).expect("gradient broadcast");
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.value.iter().any(|v| !v.is_finite()) || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
            let shape = |j: usize| nodes[j].value.dim();
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => {
                    let info = store.info(*slot);
                    let g = reduce_to(g, (info.rows, info.cols));
                    for (k, v) in g.iter().enumerate() {
                        out[info.offset + k] += v;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), shape(*a)));
                    acc(&mut grads, *b, reduce_to(g, shape(*b)));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), shape(*a)));
                    acc(&mut grads, *b, reduce_to(-g, shape(*b)));
                }
                Op::Mul(a, b) => {
                    let gs = g.into_shared();
                    let ga = zip_with(&gs, &nodes[*b].value, |x, y| x * y);
                    let gb = zip_with(&gs, &nodes[*a].value, |x, y| x * y);
                    acc(&mut grads, *a, reduce_to(ga, shape(*a)));
                    acc(&mut grads, *b, reduce_to(gb, shape(*b)));
                }
                Op::Div(a, b) => {
                    let gs = g.into_shared();
                    let ga = zip_with(&gs, &nodes[*b].value, |x, y| x / y);
                    // d(a/b)/db = -y / b
                    let gy = zip_with(&gs, &node.value, |x, y| -x * y).into_shared();
                    let gb = zip_with(&gy, &nodes[*b].value, |x, y| x / y);
                    acc(&mut grads, *a, reduce_to(ga, shape(*a)));
                    acc(&mut grads, *b, reduce_to(gb, shape(*b)));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::MatMul(a, w) => {
                    let av = &nodes[*a].value;
                    let wv = &nodes[*w].value;
                    acc(&mut grads, *a, g.dot(&wv.t()));
                    acc(&mut grads, *w, av.t().dot(&g));
                }
                Op::Unary(a, u) => {
                    let x = &nodes[*a].value;
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(x)
                        .and(&node.value)
                        .for_each(|gv, &xv, &yv| *gv *= u.derivative(xv, yv));
                    acc(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let ga = g.broadcast(shape(*a)).expect("sum_cols broadcast").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    acc(&mut grads, *a, Array2::from_elem(shape(*a), g[[0, 0]]));
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let (pr, pc) = shape(p);
                        let gp = g.slice(s![.., c0..c0 + pc]).to_owned();
                        acc(&mut grads, p, reduce_to(gp, (pr, pc)));
                        c0 += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(shape(*a));
                    let len = g.ncols();
                    ga.slice_mut(s![.., *start..*start + len]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Solve { jac, rhs } => {
                    let d = rhs.len();
                    let jv: Vec<&ArcArray2<f64>> = jac.iter().map(|&j| &nodes[j].value).collect();
                    let x = &node.value;
                    let rows = x.nrows();
                    let mut gj = vec![Array2::<f64>::zeros((rows, 1)); d * d];
                    let mut gb = vec![Array2::<f64>::zeros((rows, 1)); d];
                    for r in 0..rows {
                        let a = gather_matrix(&jv, r);
                        let gr: Vec<f64> = (0..d).map(|k| g[[r, k]]).collect();
                        let lambda = linalg::solve_transposed(&a, &gr).unwrap_or_else(|| vec![f64::NAN; d]);
                        for i in 0..d {
                            gb[i][[r, 0]] = lambda[i];
                            for j in 0..d {
                                gj[i * d + j][[r, 0]] = -lambda[i] * x[[r, j]];
                            }
                        }
                    }
                    for (k, gk) in gj.into_iter().enumerate() {
                        acc(&mut grads, jac[k], reduce_to(gk, shape(jac[k])));
                    }
                    for (k, gk) in gb.into_iter().enumerate() {
                        acc(&mut grads, rhs[k], reduce_to(gk, shape(rhs[k])));
                    }
                }
                Op::LogAbsDet { jac } => {
                    let d = dim_of(jac.len());
                    let jv: Vec<&ArcArray2<f64>> = jac.iter().map(|&j| &nodes[j].value).collect();
                    let rows = node.value.nrows();
                    let mut gj = vec![Array2::<f64>::zeros((rows, 1)); d * d];
                    for r in 0..rows {
                        let a = gather_matrix(&jv, r);
                        let inv = linalg::inverse(&a, d).unwrap_or_else(|| vec![f64::NAN; d * d]);
                        for i in 0..d {
                            for j in 0..d {
                                gj[i * d + j][[r, 0]] = g[[r, 0]] * inv[j * d + i];
                            }
                        }
                    }
                    for (k, gk) in gj.into_iter().enumerate() {
                        acc(&mut grads, jac[k], reduce_to(gk, shape(jac[k])));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Ops for Tape {
    type T = Var;

    fn shape(&self, a: &Var) -> (usize, usize) {
        (a.rows, a.cols)
    }

    fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    fn param(&self, store: &ParamStore, slot: Slot) -> Var {
        self.push(store.matrix(slot), Op::Param(slot))
    }

    fn add(&self, a: &Var, b: &Var) -> Var {
        let v = zip_with(&self.val(a), &self.val(b), |x, y| x + y);
        self.push(v, Op::Add(a.idx, b.idx))
    }

    fn sub(&self, a: &Var, b: &Var) -> Var {
        let v = zip_with(&self.val(a), &self.val(b), |x, y| x - y);
        self.push(v, Op::Sub(a.idx, b.idx))
    }

    fn mul(&self, a: &Var, b: &Var) -> Var {
        let v = zip_with(&self.val(a), &self.val(b), |x, y| x * y);
        self.push(v, Op::Mul(a.idx, b.idx))
    }

    fn div(&self, a: &Var, b: &Var) -> Var {
        let v = zip_with(&self.val(a), &self.val(b), |x, y| x / y);
        self.push(v, Op::Div(a.idx, b.idx))
    }

    fn scale(&self, a: &Var, c: f64) -> Var {
        let v = self.val(a).map(|x| x * c);
        self.push(v, Op::Scale(a.idx, c))
    }

    fn add_scalar(&self, a: &Var, c: f64) -> Var {
        let v = self.val(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a.idx))
    }

    fn matmul(&self, a: &Var, w: &Var) -> Var {
        let v = self.val(a).dot(&self.val(w));
        self.push(v, Op::MatMul(a.idx, w.idx))
    }

    fn unary(&self, a: &Var, op: Unary) -> Var {
        let v = self.val(a).map(|&x| op.apply(x));
        self.push(v, Op::Unary(a.idx, op))
    }

    fn sum_cols(&self, a: &Var) -> Var {
        let v = self.val(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a.idx))
    }

    fn sum_all(&self, a: &Var) -> Var {
        let v = Array2::from_elem((1, 1), self.val(a).sum());
        self.push(v, Op::SumAll(a.idx))
    }

    fn concat_cols(&self, parts: &[Var]) -> Var {
        let vals: Vec<ArcArray2<f64>> = parts.iter().map(|p| self.val(p)).collect();
        let refs: Vec<&ArcArray2<f64>> = vals.iter().collect();
        let v = concat(&refs);
        self.push(v, Op::Concat(parts.iter().map(|p| p.idx).collect()))
    }

    fn slice_cols(&self, a: &Var, start: usize, len: usize) -> Var {
        let v = self.val(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a.idx, start))
    }

    fn solve(&self, jac: &[Var], rhs: &[Var]) -> Vec<Var> {
        let jv: Vec<ArcArray2<f64>> = jac.iter().map(|j| self.val(j)).collect();
        let bv: Vec<ArcArray2<f64>> = rhs.iter().map(|b| self.val(b)).collect();
        let x = batched_solve(&jv.iter().collect::<Vec<_>>(), &bv.iter().collect::<Vec<_>>());
        let node = self.push(
            x,
            Op::Solve {
                jac: jac.iter().map(|j| j.idx).collect(),
                rhs: rhs.iter().map(|b| b.idx).collect(),
            },
        );
        (0..rhs.len()).map(|k| self.slice_cols(&node, k, 1)).collect()
    }

    fn log_abs_det(&self, jac: &[Var]) -> Var {
        let jv: Vec<ArcArray2<f64>> = jac.iter().map(|j| self.val(j)).collect();
        let v = batched_log_abs_det(&jv.iter().collect::<Vec<_>>(), dim_of(jac.len()));
        self.push(
            v,
            Op::LogAbsDet {
                jac: jac.iter().map(|j| j.idx).collect(),
            },
        )
    }
}
