//! Unrolled network architectures: each layer is one solver iteration with
//! learnable regularization.  Layer 1 runs the direct update set; later
//! layers run the augmented set.  In the adaptive variant the fit weights
//! `W` and sparsity weights `M` are recomputed every layer from static
//! feature embeddings through small learnable affine maps with a bounded
//! exponential head, so one trained model transfers across topologies and
//! scales.

mod embed;
mod io;

pub use embed::{embed_m, embed_w, FeatureTensor, EPS_LOG, H_M, H_W};
pub use io::{load_model, save_model};

use crate::error::{Error, Result};
use crate::scenario::{Observation, ObservationData};
use crate::solvers::{aug_iteration, td_iteration, RegParams, RouteKernel, SolverInit, SolverState};
use crate::tensor::{cpd_reconstruct, masked_stats, FactorTriple, Matrix, Tensor3};

/// Default head bound `C`; outputs stay within `(e^-C, e^C)`.
pub const DEFAULT_HEAD_BOUND: f64 = 5.0;

/// Default nonnegative offset inside the sparsity head input, biasing the
/// maps away from an all-zero anomaly output early in training.
pub const DEFAULT_M_BIAS: f64 = 0.1;

/// Affine body of a parameter representation map.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AffineMap {
    pub fn zeros(n: usize) -> Self {
        Self {
            weights: vec![0.0; n],
            bias: 0.0,
        }
    }

    #[inline]
    pub fn apply(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        let mut acc = self.bias;
        for (w, h) in self.weights.iter().zip(features) {
            acc += w * h;
        }
        acc
    }
}

/// Learnable weights of one layer.  `log_nu` is absent in layer 1 (the
/// direct layer has no fidelity parameter).  `log_mu` and `m_bias` drive the
/// constant sparsity level of the non-adaptive variant
/// (`mu = exp(log_mu) + max(m_bias, 0)`); in the adaptive variant `m_bias`
/// is a fixed offset added to the sparsity head input and is not trained,
/// keeping the learnable count at 24 per augmented layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub log_lambda: f64,
    pub log_nu: Option<f64>,
    pub log_mu: f64,
    pub m_bias: f64,
    pub w_map: AffineMap,
    pub m_map: AffineMap,
}

impl LayerParams {
    fn fresh(first: bool) -> Self {
        Self {
            log_lambda: 0.0,
            log_nu: if first { None } else { Some(0.0) },
            log_mu: 0.0,
            m_bias: DEFAULT_M_BIAS,
            w_map: AffineMap::zeros(H_W),
            m_map: AffineMap::zeros(H_M),
        }
    }
}

/// Full parameter set of an unrolled model.
///
/// Flattening order (frozen):
/// * adaptive, uncoupled: per layer `[log_lambda, (log_nu), w_map weights,
///   w_map bias, m_map weights, m_map bias]` - `24L - 1` values in total;
/// * adaptive, coupled: the per-layer scalars `[log_lambda, (log_nu)]` for
///   every layer, then the shared `w_map` and `m_map` (taken from layer 1);
/// * non-adaptive: per layer `[log_lambda, (log_nu), log_mu, m_bias]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub head_bound: f64,
    pub adaptive: bool,
    pub coupled: bool,
    /// Nonnegative projection of the fit tensor in augmented layers.
    pub nonneg: bool,
    /// CPD rank override; the loose default bound is used when absent.
    pub rank: Option<usize>,
}

impl ModelParams {
    pub fn new(n_layers: usize, adaptive: bool, coupled: bool) -> Result<Self> {
        if n_layers < 1 {
            return Err(Error::arg("a model needs at least one layer"));
        }
        Ok(Self {
            layers: (0..n_layers).map(|l| LayerParams::fresh(l == 0)).collect(),
            head_bound: DEFAULT_HEAD_BOUND,
            adaptive,
            coupled,
            nonneg: true,
            rank: None,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for layer in &self.layers {
            v.push(layer.log_lambda);
            if let Some(nu) = layer.log_nu {
                v.push(nu);
            }
            if self.adaptive {
                if !self.coupled {
                    v.extend_from_slice(&layer.w_map.weights);
                    v.push(layer.w_map.bias);
                    v.extend_from_slice(&layer.m_map.weights);
                    v.push(layer.m_map.bias);
                }
            } else {
                v.push(layer.log_mu);
                v.push(layer.m_bias);
            }
        }
        if self.adaptive && self.coupled {
            let shared = &self.layers[0];
            v.extend_from_slice(&shared.w_map.weights);
            v.push(shared.w_map.bias);
            v.extend_from_slice(&shared.m_map.weights);
            v.push(shared.m_map.bias);
        }
        v
    }

    /// Rebuilds a parameter set from a flat vector, taking every
    /// non-flattened field from `self`.  Exact inverse of [`Self::flatten`].
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        let mut next = |what: &str| {
            it.next()
                .ok_or_else(|| Error::arg(format!("flat vector too short at {what}")))
        };
        for layer in out.layers.iter_mut() {
            layer.log_lambda = next("log_lambda")?;
            if layer.log_nu.is_some() {
                layer.log_nu = Some(next("log_nu")?);
            }
            if self.adaptive {
                if !self.coupled {
                    for w in layer.w_map.weights.iter_mut() {
                        *w = next("w_map")?;
                    }
                    layer.w_map.bias = next("w_map bias")?;
                    for w in layer.m_map.weights.iter_mut() {
                        *w = next("m_map")?;
                    }
                    layer.m_map.bias = next("m_map bias")?;
                }
            } else {
                layer.log_mu = next("log_mu")?;
                layer.m_bias = next("m_bias")?;
            }
        }
        if self.adaptive && self.coupled {
            let mut w_map = out.layers[0].w_map.clone();
            let mut m_map = out.layers[0].m_map.clone();
            for w in w_map.weights.iter_mut() {
                *w = next("shared w_map")?;
            }
            w_map.bias = next("shared w_map bias")?;
            for w in m_map.weights.iter_mut() {
                *w = next("shared m_map")?;
            }
            m_map.bias = next("shared m_map bias")?;
            for layer in out.layers.iter_mut() {
                layer.w_map = w_map.clone();
                layer.m_map = m_map.clone();
            }
        }
        if it.next().is_some() {
            return Err(Error::arg("flat vector too long"));
        }
        Ok(out)
    }
}

/// Loose upper bound on the CPD rank: `min{E*T1, E*T2, T1*T2}`.
pub fn default_rank(e: usize, t1: usize, t2: usize) -> usize {
    (e * t1).min(e * t2).min(t1 * t2).max(1)
}

/// Matrix-mode default rank `min{E, T}`.
pub fn default_rank_matrix(e: usize, t: usize) -> usize {
    e.min(t).max(1)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58476D1CE4E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn hash_f64s(mut h: u64, values: impl Iterator<Item = f64>) -> u64 {
    for v in values {
        h = splitmix(h ^ v.to_bits());
    }
    h
}

fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic state initialization: `A = 0` and factor entries uniform in
/// `[0, c)` with `c = (masked mean of Y / R)^(1/3)`, so the initial CPD sits
/// at the observed magnitude scale.
///
/// Rows of `P` are seeded by the content of their link's `(Y, O)` slices
/// rather than by position: relabeling links (or flows) then permutes the
/// initialization exactly, which extends the solvers' permutation
/// equivariance to the full forward pass, random init included.
pub fn init_state(obs: &Observation<'_>, r_cpd: usize, seed: u64) -> Result<SolverInit> {
    if r_cpd < 1 {
        return Err(Error::arg("r_cpd must be at least 1"));
    }
    let (e, t1, t2) = obs.y.dims();
    let (mean, _) = masked_stats(obs.y, obs.o)?;
    let scale = (mean / r_cpd as f64).cbrt();

    let mut p = Matrix::zeros(e, r_cpd);
    for j in 0..e {
        let mut h = splitmix(seed ^ 0x5031_u64);
        h = hash_f64s(h, (0..t2).flat_map(|k| (0..t1).map(move |t| (t, k))).map(|(t, k)| obs.y.at(j, t, k)));
        h = hash_f64s(h, (0..t2).flat_map(|k| (0..t1).map(move |t| (t, k))).map(|(t, k)| obs.o.at(j, t, k)));
        for r in 0..r_cpd {
            *p.at_mut(j, r) = scale * unit_from_hash(splitmix(h ^ (r as u64)));
        }
    }
    let time_factor = |rows: usize, tag: u64| {
        Matrix::from_fn(rows, r_cpd, |t, r| {
            let h = splitmix(splitmix(seed ^ tag ^ ((t as u64) << 24)) ^ (r as u64));
            scale * unit_from_hash(h)
        })
    };
    let q1 = time_factor(t1, 0x5131);
    let q2 = time_factor(t2, 0x5132);
    Ok(SolverInit {
        factors: FactorTriple::new(p, q1, q2)?,
        a: Tensor3::zeros(obs.flow_dims()),
    })
}

/// Bounded exponential head over an affine body:
/// `out = exp(C * tanh((body(h) + offset) / C))`, elementwise over cells.
fn map_features(ft: &FeatureTensor, map: &AffineMap, offset: f64, c: f64) -> Result<Tensor3> {
    if map.weights.len() != ft.n_features() {
        return Err(Error::dim(format!(
            "parameter map expects {} features, embedding has {}",
            map.weights.len(),
            ft.n_features()
        )));
    }
    if !(c > 0.0) {
        return Err(Error::arg("head bound C must be positive"));
    }
    let dims = ft.dims();
    let mut out = Tensor3::zeros(dims);
    for k in 0..dims.2 {
        for j in 0..dims.1 {
            for i in 0..dims.0 {
                let body = map.apply(ft.row(i, j, k)) + offset;
                *out.at_mut(i, j, k) = (c * (body / c).tanh()).exp();
            }
        }
    }
    Ok(out)
}

/// Applies a parameter representation map to a feature tensor.
pub fn param_map(ft: &FeatureTensor, map: &AffineMap, c: f64) -> Result<Tensor3> {
    map_features(ft, map, 0.0, c)
}

/// Per-layer regularization realized by a model on an observation.
fn layer_reg(
    obs: &Observation<'_>,
    params: &ModelParams,
    layer_idx: usize,
    x_effective: &Tensor3,
    a: &Tensor3,
    route: &RouteKernel,
    cache: &embed::EmbedCache,
) -> Result<RegParams> {
    let layer = &params.layers[layer_idx];
    let maps = if params.coupled { &params.layers[0] } else { layer };
    let lambda = layer.log_lambda.exp();
    let nu = layer.log_nu.map(f64::exp).unwrap_or(1.0);
    let (w, m) = if params.adaptive {
        let ftw = embed::embed_w_cached(obs, x_effective, cache)?;
        let ftm = embed::embed_m_cached(obs, x_effective, a, route, cache)?;
        let w = map_features(&ftw, &maps.w_map, 0.0, params.head_bound)?;
        let m = map_features(&ftm, &maps.m_map, layer.m_bias.max(0.0), params.head_bound)?;
        (w, m)
    } else {
        let mu = layer.log_mu.exp() + layer.m_bias.max(0.0);
        (
            Tensor3::constant(obs.y.dims(), 1.0),
            Tensor3::constant(obs.flow_dims(), mu),
        )
    };
    RegParams::new(lambda, m, w, nu)
}

/// Runs the unrolled network: layer 1 is one direct iteration, layers
/// `2..=L` are augmented iterations; adaptive weights are recomputed from
/// the current state before each layer.  Deterministic per `(obs, params,
/// seed)`.
pub fn forward(obs: &Observation<'_>, params: &ModelParams, seed: u64) -> Result<SolverState> {
    let (e, t1, t2) = obs.y.dims();
    let r_cpd = params.rank.unwrap_or_else(|| default_rank(e, t1, t2));
    let init = init_state(obs, r_cpd, seed)?;
    forward_from(obs, params, init)
}

/// As [`forward`] with an explicit initial state.
pub fn forward_from(obs: &Observation<'_>, params: &ModelParams, init: SolverInit) -> Result<SolverState> {
    if params.layers.is_empty() {
        return Err(Error::arg("a model needs at least one layer"));
    }
    if params.layers[0].log_nu.is_some() {
        return Err(Error::arg("layer 1 is a direct layer and carries no nu"));
    }
    let route = RouteKernel::new(obs.r);
    let cache = embed::EmbedCache::new(obs, &route)?;
    let mut state = SolverState::from_init(init);
    let mut x_eff = cpd_reconstruct(&state.factors);
    for l in 0..params.layers.len() {
        let reg = layer_reg(obs, params, l, &x_eff, &state.a, &route, &cache)?;
        if l == 0 {
            td_iteration(&mut state, obs, &reg, &route, true)?;
            x_eff = cpd_reconstruct(&state.factors);
            state.xtilde = Some(x_eff.clone());
        } else {
            aug_iteration(&mut state, obs, &reg, &route, params.nonneg)?;
            x_eff = state.xtilde.clone().expect("augmented layer sets xtilde");
        }
    }
    Ok(state)
}

/// Reshapes an observation to matrix mode (`T2 = 1`): the same data with
/// the time axes merged, so the model degenerates to matrix factorization
/// while `Q2` remains a learnable `1 x R` factor.
pub fn matrix_mode(obs: &Observation<'_>) -> Result<ObservationData> {
    let (e, t1, t2) = obs.y.dims();
    Ok(ObservationData {
        y: obs.y.reshaped((e, t1 * t2, 1))?,
        o: obs.o.reshaped((e, t1 * t2, 1))?,
        r: obs.r.clone(),
    })
}
