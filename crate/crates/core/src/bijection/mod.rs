//! Time-conditioned invertible layers and their composition `Φ_t = Φ(·; f(t))`.

mod actnorm;
mod domain;
mod embedding;
mod residual;
mod svd;

pub use actnorm::ActNorm;
pub use domain::{DomainBijection, DomainBox};
pub use embedding::TimeEmbedding;
pub use residual::{power_iteration, spectral_normalize_matrix, InverseOptions, ResidualBlock};
pub use svd::{householder_orthogonal, SvdLayer};

use ndarray::{ArcArray2, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{linalg, Eager, Fwd, Ops, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            width: 128,
            hidden_layers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Domain,
    ActNorm,
    Residual {
        depth: usize,
        width: usize,
        omega: f64,
        lipschitz: f64,
    },
    Svd {
        /// Reflections per orthogonal factor; the dimension when absent.
        reflections: Option<usize>,
        conditioner_width: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    pub layers: Vec<LayerConfig>,
}

impl ArchitectureConfig {
    /// Domain bijection followed by `blocks` × [ActNorm, i-DenseNet, SVD].
    pub fn standard(blocks: usize, depth: usize, width: usize, omega: f64) -> Self {
        let mut layers = vec![LayerConfig::Domain];
        for _ in 0..blocks {
            layers.push(LayerConfig::ActNorm);
            layers.push(LayerConfig::Residual {
                depth,
                width,
                omega,
                lipschitz: 0.97,
            });
            layers.push(LayerConfig::Svd {
                reflections: None,
                conditioner_width: 32,
            });
        }
        Self {
            embedding: EmbeddingConfig::default(),
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding.dim == 0 || self.embedding.width == 0 {
            return Err(Error::invalid("embedding dimension and width must be positive"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerConfig::Domain if i != 0 => {
                    return Err(Error::invalid("the domain bijection must be the first layer"));
                }
                LayerConfig::Residual {
                    depth,
                    width,
                    omega,
                    lipschitz,
                } => {
                    if *width == 0 || !(*omega > 0.0) || !(*lipschitz > 0.0 && *lipschitz < 1.0) {
                        return Err(Error::invalid(format!(
                            "residual layer {i}: need width > 0, omega > 0 and 0 < lipschitz < 1 (depth {depth})"
                        )));
                    }
                }
                LayerConfig::Svd {
                    conditioner_width, ..
                } if *conditioner_width == 0 => {
                    return Err(Error::invalid(format!("svd layer {i}: conditioner width must be positive")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Domain(DomainBijection),
    ActNorm(ActNorm),
    Residual(ResidualBlock),
    Svd(SvdLayer),
}

impl Layer {
    pub fn forward<O: Ops>(&self, ops: &O, p: &ParamStore, x: &O::T, emb: &O::T) -> O::T {
        match self {
            Layer::Domain(l) => l.forward(ops, x),
            Layer::ActNorm(l) => l.forward(ops, p, x),
            Layer::Residual(l) => l.forward(ops, p, x, emb),
            Layer::Svd(l) => l.forward(ops, p, x, emb),
        }
    }

    pub fn inverse(&self, p: &ParamStore, y: &Array2<f64>, emb: &ArcArray2<f64>, opts: InverseOptions) -> Result<Array2<f64>> {
        Ok(match self {
            Layer::Domain(l) => l.inverse(y),
            Layer::ActNorm(l) => l.inverse(p, y),
            Layer::Residual(l) => l.inverse(p, y, emb, opts)?,
            Layer::Svd(l) => l.inverse(p, y, emb),
        })
    }

    /// `log |det ∂layer/∂x|` for every row of `x`.
    pub fn logdet(&self, p: &ParamStore, x: &Array2<f64>, emb: &ArcArray2<f64>) -> Result<Vec<f64>> {
        let rows = x.nrows();
        match self {
            Layer::Domain(l) => Ok(l.logdet(x)),
            Layer::ActNorm(l) => Ok(vec![l.logdet(p); rows]),
            Layer::Svd(l) => Ok(vec![l.logdet(p); rows]),
            Layer::Residual(l) => {
                let jac = batched_jacobian(x, |ops, xin| {
                    let e = ops.lift(emb.clone());
                    l.forward(ops, p, xin, &e)
                });
                let d = x.ncols();
                (0..rows)
                    .map(|r| {
                        let m: Vec<f64> = (0..d * d).map(|k| jac[k % d][[r, k / d]]).collect();
                        let det = linalg::det(&m, d);
                        if det > 0.0 && det.is_finite() {
                            Ok(det.ln())
                        } else {
                            Err(Error::NonPositiveDeterminant { det })
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Columns `∂f/∂x_j` (each `rows × d`) of a row-wise map by forward mode.
fn batched_jacobian<F>(x: &Array2<f64>, f: F) -> Vec<Array2<f64>>
where
    F: for<'a> Fn(&Fwd<'a, Eager>, &<Fwd<'a, Eager> as Ops>::T) -> <Fwd<'a, Eager> as Ops>::T,
{
    let (rows, d) = x.dim();
    let e = Eager;
    let fwd = Fwd::new(&e, d);
    let mut xin = fwd.lift(x.clone().into_shared());
    for j in 0..d {
        let mut unit = Array2::zeros((1, d));
        unit[[0, j]] = 1.0;
        xin.tangents[j] = Some(unit.into_shared());
    }
    let y = f(&fwd, &xin);
    y.tangents
        .iter()
        .map(|t| match t {
            Some(t) => {
                let mut full = Array2::zeros((rows, d));
                full += t;
                full
            }
            None => Array2::zeros((rows, d)),
        })
        .collect()
}

/// Ordered layers sharing one time embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct BijectionStack {
    dim: usize,
    embedding: TimeEmbedding,
    layers: Vec<Layer>,
    inverse_options: InverseOptions,
}

/// A time-conditioned diffeomorphism `(t, x) ↦ Φ_t(x)` on `R^d`.
pub trait ConditionalBijection {
    fn dim(&self) -> usize;
    /// `t` is `rows × 1` or a shared `1 × 1` time; `x` is `rows × d`.
    fn transform<O: Ops>(&self, ops: &O, p: &ParamStore, t: &O::T, x: &O::T) -> O::T;
    /// Row-wise `Φ_t⁻¹(y)` with `t` laid out as in [`ConditionalBijection::transform`].
    fn inverse_transform(&self, p: &ParamStore, t: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>>;
}

impl ConditionalBijection for BijectionStack {
    fn dim(&self) -> usize {
        self.dim
    }

    fn transform<O: Ops>(&self, ops: &O, p: &ParamStore, t: &O::T, x: &O::T) -> O::T {
        let emb = self.embed(ops, p, t);
        self.forward(ops, p, x, &emb)
    }

    fn inverse_transform(&self, p: &ParamStore, t: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
        let emb = self.embed(&Eager, p, &t.clone().into_shared());
        self.inverse(p, y, &emb, self.inverse_options)
    }
}

impl BijectionStack {
    /// Allocates every parameter in `params` and runs 50 power iterations per
    /// weight matrix so the Lipschitz constraint holds from the start.
    pub fn new(
        arch: &ArchitectureConfig,
        domain: &DomainBox,
        params: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        arch.validate()?;
        let dim = domain.dim();
        let embedding = TimeEmbedding::new(&arch.embedding, params, rng);
        let k = arch.embedding.dim;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, cfg) in arch.layers.iter().enumerate() {
            let name = format!("layer{i}");
            layers.push(match cfg {
                LayerConfig::Domain => Layer::Domain(DomainBijection::new(domain)),
                LayerConfig::ActNorm => Layer::ActNorm(ActNorm::new(&name, dim, params)),
                LayerConfig::Residual {
                    depth,
                    width,
                    omega,
                    lipschitz,
                } => Layer::Residual(ResidualBlock::new(
                    &name, dim, k, *depth, *width, *omega, *lipschitz, params, rng,
                )),
                LayerConfig::Svd {
                    reflections,
                    conditioner_width,
                } => Layer::Svd(SvdLayer::new(
                    &name,
                    dim,
                    k,
                    reflections.unwrap_or(dim),
                    *conditioner_width,
                    params,
                    rng,
                )),
            });
        }
        let mut stack = Self {
            dim,
            embedding,
            layers,
            inverse_options: InverseOptions::default(),
        };
        stack.spectral_normalize(params, 50);
        Ok(stack)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inverse_options(&self) -> InverseOptions {
        self.inverse_options
    }

    pub fn set_inverse_options(&mut self, opts: InverseOptions) {
        self.inverse_options = opts;
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    /// `f(t)` for a `rows × 1` column of times.
    pub fn embed<O: Ops>(&self, ops: &O, p: &ParamStore, t: &O::T) -> O::T {
        self.embedding.forward(ops, p, t)
    }

    /// `f(t)` for a single time.
    pub fn embed_time(&self, p: &ParamStore, t: f64) -> Vec<f64> {
        let e = self.embed(&Eager, p, &Array2::from_elem((1, 1), t).into_shared());
        e.iter().copied().collect()
    }

    pub fn forward<O: Ops>(&self, ops: &O, p: &ParamStore, x: &O::T, emb: &O::T) -> O::T {
        self.layers.iter().fold(x.clone(), |z, l| l.forward(ops, p, &z, emb))
    }

    /// Inputs to every layer followed by the final output, evaluated eagerly.
    pub fn forward_trace(&self, p: &ParamStore, x: &Array2<f64>, emb: &ArcArray2<f64>) -> Vec<Array2<f64>> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        let mut z: ArcArray2<f64> = x.clone().into_shared();
        out.push(x.clone());
        for l in &self.layers {
            z = l.forward(&Eager, p, &z, emb);
            out.push(z.to_owned());
        }
        out
    }

    pub fn inverse(&self, p: &ParamStore, y: &Array2<f64>, emb: &ArcArray2<f64>, opts: InverseOptions) -> Result<Array2<f64>> {
        let mut x = y.clone();
        for l in self.layers.iter().rev() {
            x = l.inverse(p, &x, emb, opts)?;
        }
        Ok(x)
    }

    /// Per-row sum of the layer log-determinants.
    pub fn logdet(&self, p: &ParamStore, x: &Array2<f64>, emb: &ArcArray2<f64>) -> Result<Vec<f64>> {
        let trace = self.forward_trace(p, x, emb);
        let mut total = vec![0.0; x.nrows()];
        for (l, input) in self.layers.iter().zip(&trace) {
            for (acc, v) in total.iter_mut().zip(l.logdet(p, input, emb)?) {
                *acc += v;
            }
        }
        Ok(total)
    }

    pub fn spectral_normalize(&mut self, p: &mut ParamStore, iters: usize) {
        for l in &mut self.layers {
            if let Layer::Residual(b) = l {
                b.spectral_normalize(p, iters);
            }
        }
    }

    /// Power-iteration vectors of every residual block, in layer order.
    pub fn power_state(&self) -> Vec<Vec<Vec<f64>>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Residual(b) => Some(b.power_vectors().to_vec()),
                _ => None,
            })
            .collect()
    }

    pub fn set_power_state(&mut self, state: Vec<Vec<Vec<f64>>>) -> Result<()> {
        let mut it = state.into_iter();
        for l in &mut self.layers {
            if let Layer::Residual(b) = l {
                let v = it.next().ok_or_else(|| Error::invalid("missing power-iteration state"))?;
                b.set_power_vectors(v)?;
            }
        }
        if it.next().is_some() {
            return Err(Error::invalid("extra power-iteration state"));
        }
        Ok(())
    }
}
