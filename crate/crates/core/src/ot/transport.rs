use ndarray::Array2;

use crate::bijection::ConditionalBijection;
use crate::error::{Error, Result};
use crate::field::LagrangianField;

/// Moves every sample along the learned flow map from `t_from` to `t_to`.
/// Failing rows are reported together in [`Error::TransportFailed`].
pub fn transport_samples<M: ConditionalBijection>(
    field: &LagrangianField<M>,
    samples: &Array2<f64>,
    t_from: f64,
    t_to: f64,
) -> Result<Array2<f64>> {
    match field.flow_map_batch(t_from, t_to, samples) {
        Ok(out) => Ok(out),
        Err(Error::Shape(msg)) => Err(Error::Shape(msg)),
        Err(_) => {
            let mut out = Array2::zeros(samples.dim());
            let mut failed = Vec::new();
            for (i, row) in samples.rows().into_iter().enumerate() {
                match field.flow_map(t_from, t_to, &row.to_vec()) {
                    Ok(y) => out.row_mut(i).assign(&ndarray::ArrayView1::from(&y)),
                    Err(_) => failed.push(i),
                }
            }
            if failed.is_empty() {
                Ok(out)
            } else {
                Err(Error::TransportFailed { indices: failed })
            }
        }
    }
}

/// Mean squared displacement `(1/n) Σ ‖yᵢ − xᵢ‖²`.
pub fn empirical_w2(source: &Array2<f64>, transported: &Array2<f64>) -> Result<f64> {
    if source.dim() != transported.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", source.dim(), transported.dim())));
    }
    if source.nrows() == 0 {
        return Err(Error::invalid("empty sample set"));
    }
    Ok(squared_displacements(source, transported).iter().sum::<f64>() / source.nrows() as f64)
}

fn squared_displacements(source: &Array2<f64>, transported: &Array2<f64>) -> Vec<f64> {
    source
        .rows()
        .into_iter()
        .zip(transported.rows())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum())
        .collect()
}

/// Outcome of repeated transport-cost estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    /// Source samples of the last repetition.
    pub source: Array2<f64>,
    pub transported: Array2<f64>,
    pub displacements: Vec<f64>,
    /// Per-repetition estimates.
    pub estimates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Repeats the transport-cost estimate `reps` times. With `resample` a fresh
/// batch is drawn from `sample` for each repetition; otherwise the first batch
/// is reused and every estimate is identical.
pub fn repeated_w2<M: ConditionalBijection>(
    field: &LagrangianField<M>,
    mut sample: impl FnMut() -> Result<Array2<f64>>,
    t_from: f64,
    t_to: f64,
    reps: usize,
    resample: bool,
) -> Result<TransportResult> {
    if reps == 0 {
        return Err(Error::invalid("need at least one repetition"));
    }
    let mut estimates = Vec::with_capacity(reps);
    let mut source = sample()?;
    let mut transported = transport_samples(field, &source, t_from, t_to)?;
    estimates.push(empirical_w2(&source, &transported)?);
    for _ in 1..reps {
        if resample {
            source = sample()?;
            transported = transport_samples(field, &source, t_from, t_to)?;
        }
        estimates.push(empirical_w2(&source, &transported)?);
    }
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let std = if reps > 1 {
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(TransportResult {
        displacements: squared_displacements(&source, &transported),
        source,
        transported,
        estimates,
        mean,
        std,
    })
}
