//! Static feature embeddings for the adaptive parameter maps.
//!
//! Feature orders are frozen; the affine maps are order-sensitive.  Every
//! raw feature is compressed by `log(. + EPS)`.  Slice statistics over the
//! link and flow axes are reduced through sorted per-slice partials so the
//! embeddings commute exactly with link and flow permutations.

use crate::error::{Error, Result};
use crate::scenario::Observation;
use crate::solvers::RouteKernel;
use crate::tensor::{stable_sum, Tensor3};

/// Epsilon inside every log transform and variance floor.
pub const EPS_LOG: f64 = 1e-8;

/// Number of fit-weight features (per link and time step).
pub const H_W: usize = 7;

/// Number of sparsity-weight features (per flow and time step).
pub const H_M: usize = 13;

/// Dense feature tensor: `n_features` values per `(slice, t1, t2)` cell,
/// feature index fastest.
#[derive(Clone, Debug)]
pub struct FeatureTensor {
    dims: (usize, usize, usize),
    n_features: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    fn zeros(dims: (usize, usize, usize), n_features: usize) -> Self {
        Self {
            dims,
            n_features,
            data: vec![0.0; dims.0 * dims.1 * dims.2 * n_features],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn row(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let cell = i + j * self.dims.0 + k * self.dims.0 * self.dims.1;
        &self.data[cell * self.n_features..(cell + 1) * self.n_features]
    }

    #[inline]
    fn row_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [f64] {
        let cell = i + j * self.dims.0 + k * self.dims.0 * self.dims.1;
        &mut self.data[cell * self.n_features..(cell + 1) * self.n_features]
    }
}

#[inline]
fn logeps(v: f64) -> f64 {
    (v + EPS_LOG).ln()
}

/// Masked sample variance of every slice along all three modes.
///
/// Mode-1 slices are local to their first index, so they accumulate plainly;
/// modes 2 and 3 sum over the (permutable) first axis through per-index
/// partials that are reduced with sorted sums.  Masks are 0/1, so the
/// observation counts are exact integers in any summation order.
fn var_modes(t: &Tensor3, o: Option<&Tensor3>) -> [Vec<f64>; 3] {
    let (d1, t1, t2) = t.dims();
    let mask = |i: usize, j: usize, k: usize| o.map_or(1.0, |m| m.at(i, j, k));

    // Pass 1: sums and counts.
    let mut cnt = [vec![0.0; d1], vec![0.0; t1], vec![0.0; t2]];
    let mut sum1 = vec![0.0; d1];
    let mut psum2 = vec![0.0; t1 * d1];
    let mut psum3 = vec![0.0; t2 * d1];
    for i in 0..d1 {
        for k in 0..t2 {
            for j in 0..t1 {
                let m = mask(i, j, k);
                if m == 0.0 {
                    continue;
                }
                let v = m * t.at(i, j, k);
                cnt[0][i] += m;
                cnt[1][j] += m;
                cnt[2][k] += m;
                sum1[i] += v;
                psum2[j * d1 + i] += v;
                psum3[k * d1 + i] += v;
            }
        }
    }
    let mut buf: Vec<f64> = Vec::with_capacity(d1);
    let mut reduce = |parts: &[f64], n: usize| -> Vec<f64> {
        (0..n)
            .map(|s| {
                buf.extend_from_slice(&parts[s * d1..(s + 1) * d1]);
                stable_sum(&mut buf)
            })
            .collect()
    };
    let sums = [sum1, reduce(&psum2, t1), reduce(&psum3, t2)];
    let mean = |m: usize, n: usize| {
        if cnt[m][n] == 0.0 {
            0.0
        } else {
            sums[m][n] / cnt[m][n]
        }
    };
    let means: [Vec<f64>; 3] = [
        (0..d1).map(|n| mean(0, n)).collect(),
        (0..t1).map(|n| mean(1, n)).collect(),
        (0..t2).map(|n| mean(2, n)).collect(),
    ];

    // Pass 2: squared deviations (only where observed; masks are 0/1).
    let mut dev1 = vec![0.0; d1];
    let mut pdev2 = vec![0.0; t1 * d1];
    let mut pdev3 = vec![0.0; t2 * d1];
    for i in 0..d1 {
        for k in 0..t2 {
            for j in 0..t1 {
                let m = mask(i, j, k);
                if m == 0.0 {
                    continue;
                }
                let v = m * t.at(i, j, k);
                let d_1 = v - means[0][i] * m;
                let d_2 = v - means[1][j] * m;
                let d_3 = v - means[2][k] * m;
                dev1[i] += d_1 * d_1;
                pdev2[j * d1 + i] += d_2 * d_2;
                pdev3[k * d1 + i] += d_3 * d_3;
            }
        }
    }
    let devs = [dev1, reduce(&pdev2, t1), reduce(&pdev3, t2)];
    let var = |m: usize, n: usize| {
        if cnt[m][n] <= 1.0 {
            0.0
        } else {
            devs[m][n] / (cnt[m][n] - 1.0)
        }
    };
    [
        (0..d1).map(|n| var(0, n)).collect(),
        (0..t1).map(|n| var(1, n)).collect(),
        (0..t2).map(|n| var(2, n)).collect(),
    ]
}

/// Observation-constant pieces of the embeddings, computed once per forward
/// pass and shared across layers.
pub(crate) struct EmbedCache {
    /// Masked variance of `Y` along each mode.
    vy: [Vec<f64>; 3],
    /// Flow count per link (row sums of `R`).
    fan: Vec<f64>,
    /// Observed-link count per flow cell: `O x1 R^T`.
    obs_links: Tensor3,
    /// Denominator of the flow projection: `O^2 x1 (R.R)^T`.
    proj_den: Tensor3,
    /// `O^2` (elementwise).
    o2: Tensor3,
}

impl EmbedCache {
    pub fn new(obs: &Observation<'_>, route: &RouteKernel) -> Result<Self> {
        let o2 = obs.o.hadamard(obs.o)?;
        let mut buf: Vec<f64> = Vec::new();
        let fan = (0..obs.n_links())
            .map(|j| {
                for i in 0..obs.r.cols() {
                    let v = obs.r.at(j, i);
                    if v != 0.0 {
                        buf.push(v);
                    }
                }
                stable_sum(&mut buf)
            })
            .collect();
        Ok(Self {
            vy: var_modes(obs.y, Some(obs.o)),
            fan,
            obs_links: route.project(obs.o),
            proj_den: route.project_sq(&o2),
            o2,
        })
    }
}

/// Fit-weight embedding per link and time step.  Order:
/// masked variance of `Y` along modes 1..3, masked variance of `Y - X`
/// along modes 1..3, then the flow count of the link.
pub fn embed_w(obs: &Observation<'_>, x_effective: &Tensor3) -> Result<FeatureTensor> {
    let route = RouteKernel::new(obs.r);
    let cache = EmbedCache::new(obs, &route)?;
    embed_w_cached(obs, x_effective, &cache)
}

pub(crate) fn embed_w_cached(
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    cache: &EmbedCache,
) -> Result<FeatureTensor> {
    if x_effective.dims() != obs.y.dims() {
        return Err(Error::dim("embed_w: X must live in link space"));
    }
    let (e, t1, t2) = obs.y.dims();
    let err = obs.y.sub(x_effective)?;
    let ve = var_modes(&err, Some(obs.o));

    let mut ft = FeatureTensor::zeros((e, t1, t2), H_W);
    for k in 0..t2 {
        for j in 0..t1 {
            for i in 0..e {
                let row = ft.row_mut(i, j, k);
                row[0] = logeps(cache.vy[0][i]);
                row[1] = logeps(cache.vy[1][j]);
                row[2] = logeps(cache.vy[2][k]);
                row[3] = logeps(ve[0][i]);
                row[4] = logeps(ve[1][j]);
                row[5] = logeps(ve[2][k]);
                row[6] = logeps(cache.fan[i]);
            }
        }
    }
    Ok(ft)
}

struct SliceMaxima {
    mode1: Vec<f64>,
    mode2: Vec<f64>,
    mode3: Vec<f64>,
}

/// Plain and variance-normalized maxima of `|T|` along every mode.
/// The normalizer for a cell divides by the square root of the product of
/// the two complementary slice variances, floored at `EPS_LOG`.
fn abs_maxima(t: &Tensor3) -> (SliceMaxima, SliceMaxima) {
    let (d1, t1, t2) = t.dims();
    let [var1, var2, var3] = var_modes(t, None);

    let mut plain = SliceMaxima {
        mode1: vec![0.0; d1],
        mode2: vec![0.0; t1],
        mode3: vec![0.0; t2],
    };
    let mut normed = SliceMaxima {
        mode1: vec![0.0; d1],
        mode2: vec![0.0; t1],
        mode3: vec![0.0; t2],
    };
    for k in 0..t2 {
        for j in 0..t1 {
            let d23 = (var2[j] * var3[k]).sqrt().max(EPS_LOG);
            for i in 0..d1 {
                let v = t.at(i, j, k).abs();
                plain.mode1[i] = plain.mode1[i].max(v);
                plain.mode2[j] = plain.mode2[j].max(v);
                plain.mode3[k] = plain.mode3[k].max(v);
                let d13 = (var1[i] * var3[k]).sqrt().max(EPS_LOG);
                let d12 = (var1[i] * var2[j]).sqrt().max(EPS_LOG);
                normed.mode1[i] = normed.mode1[i].max(v / d23);
                normed.mode2[j] = normed.mode2[j].max(v / d13);
                normed.mode3[k] = normed.mode3[k].max(v / d12);
            }
        }
    }
    (plain, normed)
}

/// Sparsity embedding per flow and time step.  The residual `Y - X` is
/// projected onto flows; the feature order is: max `|E|` along modes 1..3,
/// variance-normalized max of `|E|` along modes 1..3, variance of `A` along
/// modes 1..3, variance-normalized max of `|A|` along modes 1..3, then the
/// observed-link count of the flow cell.
pub fn embed_m(obs: &Observation<'_>, x_effective: &Tensor3, a: &Tensor3) -> Result<FeatureTensor> {
    let route = RouteKernel::new(obs.r);
    let cache = EmbedCache::new(obs, &route)?;
    embed_m_cached(obs, x_effective, a, &route, &cache)
}

pub(crate) fn embed_m_cached(
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    a: &Tensor3,
    route: &RouteKernel,
    cache: &EmbedCache,
) -> Result<FeatureTensor> {
    if x_effective.dims() != obs.y.dims() {
        return Err(Error::dim("embed_m: X must live in link space"));
    }
    if a.dims() != obs.flow_dims() {
        return Err(Error::dim("embed_m: A must live in flow space"));
    }
    let (f, t1, t2) = a.dims();
    let err = obs.y.sub(x_effective)?;
    let num = route.project(&cache.o2.hadamard(&err)?);
    let eproj = num.zip_map(&cache.proj_den, |n, d| if d == 0.0 { 0.0 } else { n / d })?;

    let (e_plain, e_normed) = abs_maxima(&eproj);
    let (_, a_normed) = abs_maxima(a);
    let va = var_modes(a, None);

    let mut ft = FeatureTensor::zeros((f, t1, t2), H_M);
    for k in 0..t2 {
        for j in 0..t1 {
            for i in 0..f {
                let row = ft.row_mut(i, j, k);
                row[0] = logeps(e_plain.mode1[i]);
                row[1] = logeps(e_plain.mode2[j]);
                row[2] = logeps(e_plain.mode3[k]);
                row[3] = logeps(e_normed.mode1[i]);
                row[4] = logeps(e_normed.mode2[j]);
                row[5] = logeps(e_normed.mode3[k]);
                row[6] = logeps(va[0][i]);
                row[7] = logeps(va[1][j]);
                row[8] = logeps(va[2][k]);
                row[9] = logeps(a_normed.mode1[i]);
                row[10] = logeps(a_normed.mode2[j]);
                row[11] = logeps(a_normed.mode3[k]);
                row[12] = logeps(cache.obs_links.at(i, j, k));
            }
        }
    }
    Ok(ft)
}
