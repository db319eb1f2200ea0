use ndarray::Array2;

use crate::error::{Error, Result};

/// Optimal assignment for the `n × n` cost `cost(i, j)` by shortest augmenting
/// paths with potentials. Returns `assignment[i] = j` and the total cost.
pub fn assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, f64) {
    // 1-based arrays with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost(i, assign[i])).sum();
    (assign, total)
}

fn sq_dist(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Exact squared 2-Wasserstein distance between two equal-weight empirical
/// measures of the same size.
pub fn discrete_w2(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!("sample counts differ: {} vs {}", a.nrows(), b.nrows())));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("dimensions differ: {} vs {}", a.ncols(), b.ncols())));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::invalid("empty sample sets"));
    }
    let (_, total) = assignment(n, |i, j| sq_dist(a, b, i, j));
    Ok(total / n as f64)
}
