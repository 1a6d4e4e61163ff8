//! Closed-form block updates shared by the iterative solvers and the
//! unrolled layers.
//!
//! Reductions over link or flow indices go through sorted summation
//! (`stable_sum`) so that every update commutes exactly with permutations
//! of links and flows; sums over time or rank indices accumulate plainly.

use super::route::RouteKernel;
use super::RegParams;
use crate::error::{Error, Result};
use crate::scenario::Observation;
use crate::tensor::{
    cpd_reconstruct, soft_threshold, solve_spd, stable_sum, FactorTriple, Matrix, Mode, Tensor3,
};

/// `(O .* W)^2`, the squared weighted selection tensor.
pub(crate) fn weighted_mask_sq(obs: &Observation<'_>, reg: &RegParams) -> Result<Tensor3> {
    obs.o.zip_map(&reg.w, |o, w| {
        let v = o * w;
        v * v
    })
}

/// Upper-triangle packed index for a symmetric `n x n` matrix.
#[inline]
fn packed(a: usize, b: usize, n: usize) -> usize {
    debug_assert!(a <= b);
    a * n - a * (a + 1) / 2 + b
}

fn unpack_sym(packed_data: &[f64], n: usize, ridge: f64) -> Matrix {
    let mut g = Matrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = packed_data[packed(a, b, n)];
            *g.at_mut(a, b) = v;
            *g.at_mut(b, a) = v;
        }
    }
    for i in 0..n {
        *g.at_mut(i, i) += ridge;
    }
    g
}

/// Transposed copy so factor rows become contiguous columns.
fn rows_of(m: &Matrix) -> Matrix {
    m.transpose()
}

/// Exact minimizer of `f_td` over one factor with the others fixed: a ridge
/// system per slice of the matching unfolding, assembled row-wise.
pub fn factor_update_td(
    mode: Mode,
    obs: &Observation<'_>,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
) -> Result<Matrix> {
    super::check_problem(obs, reg, factors, a)?;
    if !(reg.lambda > 0.0) {
        return Err(Error::arg("factor_update_td requires lambda > 0"));
    }
    let route = RouteKernel::new(obs.r);
    let ot2 = weighted_mask_sq(obs, reg)?;
    let resid = obs.y.sub(&route.apply(a))?;
    factor_td_inner(mode, factors, &ot2, &resid, reg.lambda)
}

pub(crate) fn factor_td_inner(
    mode: Mode,
    factors: &FactorTriple,
    ot2: &Tensor3,
    resid: &Tensor3,
    lambda: f64,
) -> Result<Matrix> {
    let (e, t1, t2) = ot2.dims();
    let r = factors.rank();
    let pt = rows_of(&factors.p);
    let q1t = rows_of(&factors.q1);
    let q2t = rows_of(&factors.q2);
    let sym_len = r * (r + 1) / 2;

    match mode {
        // P: one ridge system per link; sums run over time only.
        Mode::One => {
            let mut out = Matrix::zeros(e, r);
            let mut gram = vec![0.0; sym_len];
            let mut rhs = vec![0.0; r];
            let mut krow = vec![0.0; r];
            for j in 0..e {
                gram.fill(0.0);
                rhs.fill(0.0);
                for k in 0..t2 {
                    let q2r = q2t.col(k);
                    for t in 0..t1 {
                        let w = ot2.at(j, t, k);
                        if w == 0.0 {
                            continue;
                        }
                        let q1r = q1t.col(t);
                        for rr in 0..r {
                            krow[rr] = q1r[rr] * q2r[rr];
                        }
                        accumulate(&mut gram, &mut rhs, &krow, w, resid.at(j, t, k), r);
                    }
                }
                let row = solve_row(&gram, &rhs, r, lambda)?;
                for rr in 0..r {
                    *out.at_mut(j, rr) = row[rr];
                }
            }
            Ok(out)
        }
        // Q1: one system per fast-time slice; per-link partials are reduced
        // with sorted sums before the solve.
        Mode::Two => {
            let mut out = Matrix::zeros(t1, r);
            let mut parts_g = vec![0.0; e * sym_len];
            let mut parts_r = vec![0.0; e * r];
            let mut krow = vec![0.0; r];
            for t in 0..t1 {
                parts_g.fill(0.0);
                parts_r.fill(0.0);
                for j in 0..e {
                    let pr = pt.col(j);
                    let g = &mut parts_g[j * sym_len..(j + 1) * sym_len];
                    let rv = &mut parts_r[j * r..(j + 1) * r];
                    for k in 0..t2 {
                        let w = ot2.at(j, t, k);
                        if w == 0.0 {
                            continue;
                        }
                        let q2r = q2t.col(k);
                        for rr in 0..r {
                            krow[rr] = pr[rr] * q2r[rr];
                        }
                        accumulate(g, rv, &krow, w, resid.at(j, t, k), r);
                    }
                }
                let row = solve_reduced(&parts_g, &parts_r, e, r, lambda)?;
                for rr in 0..r {
                    *out.at_mut(t, rr) = row[rr];
                }
            }
            Ok(out)
        }
        // Q2: one system per slow-time slice, reduced over links as above.
        Mode::Three => {
            let mut out = Matrix::zeros(t2, r);
            let mut parts_g = vec![0.0; e * sym_len];
            let mut parts_r = vec![0.0; e * r];
            let mut krow = vec![0.0; r];
            for k in 0..t2 {
                parts_g.fill(0.0);
                parts_r.fill(0.0);
                for j in 0..e {
                    let pr = pt.col(j);
                    let g = &mut parts_g[j * sym_len..(j + 1) * sym_len];
                    let rv = &mut parts_r[j * r..(j + 1) * r];
                    for t in 0..t1 {
                        let w = ot2.at(j, t, k);
                        if w == 0.0 {
                            continue;
                        }
                        let q1r = q1t.col(t);
                        for rr in 0..r {
                            krow[rr] = pr[rr] * q1r[rr];
                        }
                        accumulate(g, rv, &krow, w, resid.at(j, t, k), r);
                    }
                }
                let row = solve_reduced(&parts_g, &parts_r, e, r, lambda)?;
                for rr in 0..r {
                    *out.at_mut(k, rr) = row[rr];
                }
            }
            Ok(out)
        }
    }
}

#[inline]
fn accumulate(gram: &mut [f64], rhs: &mut [f64], krow: &[f64], w: f64, resid: f64, r: usize) {
    let wr = w * resid;
    for a in 0..r {
        let ka = w * krow[a];
        let base = packed(a, a, r);
        let row = &mut gram[base..base + (r - a)];
        for (off, kb) in krow[a..].iter().enumerate() {
            row[off] += ka * kb;
        }
        rhs[a] += wr * krow[a];
    }
}

fn solve_row(gram: &[f64], rhs: &[f64], r: usize, lambda: f64) -> Result<Vec<f64>> {
    let g = unpack_sym(gram, r, lambda);
    let b = Matrix::new(r, 1, rhs.to_vec())?;
    Ok(solve_spd(&g, &b)?.into_col())
}

fn solve_reduced(parts_g: &[f64], parts_r: &[f64], e: usize, r: usize, lambda: f64) -> Result<Vec<f64>> {
    let sym_len = r * (r + 1) / 2;
    let mut gram = vec![0.0; sym_len];
    let mut rhs = vec![0.0; r];
    let mut buf: Vec<f64> = Vec::with_capacity(e);
    for s in 0..sym_len {
        for j in 0..e {
            buf.push(parts_g[j * sym_len + s]);
        }
        gram[s] = stable_sum(&mut buf);
    }
    for rr in 0..r {
        for j in 0..e {
            buf.push(parts_r[j * r + rr]);
        }
        rhs[rr] = stable_sum(&mut buf);
    }
    solve_row(&gram, &rhs, r, lambda)
}

/// Soft-thresholded direction for the anomaly block: the closed-form
/// minimizer of the decoupled approximation around `a0`.  Entries whose
/// projected weight is zero carry no information and keep their `a0` value.
pub fn anomaly_direction(
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    a0: &Tensor3,
    reg: &RegParams,
) -> Result<Tensor3> {
    super::check_link_tensor(obs, x_effective)?;
    super::check_flow_tensor(obs, a0)?;
    let route = RouteKernel::new(obs.r);
    let ot2 = weighted_mask_sq(obs, reg)?;
    anomaly_direction_inner(&route, &ot2, obs, x_effective, a0, &reg.m)
}

pub(crate) fn anomaly_direction_inner(
    route: &RouteKernel,
    ot2: &Tensor3,
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    a0: &Tensor3,
    m: &Tensor3,
) -> Result<Tensor3> {
    let ra0 = route.apply(a0);
    anomaly_direction_core(route, ot2, obs, x_effective, a0, &ra0, m)
}

pub(crate) fn anomaly_direction_core(
    route: &RouteKernel,
    ot2: &Tensor3,
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    a0: &Tensor3,
    ra0: &Tensor3,
    m: &Tensor3,
) -> Result<Tensor3> {
    let resid = obs.y.sub(x_effective)?.sub(ra0)?;
    let projected = route.project(&ot2.hadamard(&resid)?);
    let denom = route.project_sq(ot2);
    let numer = projected.add(&denom.hadamard(a0)?)?;
    let shrunk = soft_threshold(&numer, m)?;
    let mut out = shrunk;
    for ((v, &d), &prev) in out
        .data_mut()
        .iter_mut()
        .zip(denom.data())
        .zip(a0.data())
    {
        if d == 0.0 {
            *v = prev;
        } else {
            *v /= d;
        }
    }
    Ok(out)
}

/// Exact minimizer over `[0, 1]` of the majorizer of the objective along the
/// segment from `a0` to `a_tilde`; returns 0 for a zero direction.
pub fn step_size(
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    a_tilde: &Tensor3,
    a0: &Tensor3,
    reg: &RegParams,
) -> Result<f64> {
    let route = RouteKernel::new(obs.r);
    let ot2 = weighted_mask_sq(obs, reg)?;
    step_size_inner(&route, &ot2, obs, x_effective, a_tilde, a0, &reg.m)
}

pub(crate) fn step_size_inner(
    route: &RouteKernel,
    ot2: &Tensor3,
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    a_tilde: &Tensor3,
    a0: &Tensor3,
    m: &Tensor3,
) -> Result<f64> {
    let ra0 = route.apply(a0);
    step_size_core(route, ot2, obs, x_effective, a_tilde, a0, &ra0, m)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn step_size_core(
    route: &RouteKernel,
    ot2: &Tensor3,
    obs: &Observation<'_>,
    x_effective: &Tensor3,
    a_tilde: &Tensor3,
    a0: &Tensor3,
    ra0: &Tensor3,
    m: &Tensor3,
) -> Result<f64> {
    let diff = a_tilde.sub(a0)?;
    let rdiff = route.apply(&diff);
    let mut buf: Vec<f64> = Vec::with_capacity(rdiff.len());
    for (&w2, &d) in ot2.data().iter().zip(rdiff.data()) {
        buf.push(w2 * d * d);
    }
    let denom = stable_sum(&mut buf);
    if denom == 0.0 {
        return Ok(0.0);
    }
    for i in 0..ot2.len() {
        let mismatch = x_effective.data()[i] + ra0.data()[i] - obs.y.data()[i];
        buf.push(ot2.data()[i] * mismatch * rdiff.data()[i]);
    }
    let inner = stable_sum(&mut buf);
    let l1 = |t: &Tensor3, buf: &mut Vec<f64>| {
        for (&mv, &av) in m.data().iter().zip(t.data()) {
            buf.push(mv * av.abs());
        }
        stable_sum(buf)
    };
    let l1_tilde = l1(a_tilde, &mut buf);
    let l1_a0 = l1(a0, &mut buf);
    let gamma = -(inner + l1_tilde - l1_a0) / denom;
    Ok(gamma.clamp(0.0, 1.0))
}

/// Block update of the auxiliary fit tensor in the augmented objective;
/// with `nonneg` the result is projected onto `[0, inf)` elementwise.
pub fn xtilde_update(
    obs: &Observation<'_>,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
    nonneg: bool,
) -> Result<Tensor3> {
    super::check_problem(obs, reg, factors, a)?;
    if !(reg.nu > 0.0) {
        return Err(Error::arg("xtilde_update requires nu > 0"));
    }
    let route = RouteKernel::new(obs.r);
    let ot2 = weighted_mask_sq(obs, reg)?;
    let model = cpd_reconstruct(factors);
    xtilde_inner(&route, &ot2, obs, &model, a, reg.nu, nonneg)
}

pub(crate) fn xtilde_inner(
    route: &RouteKernel,
    ot2: &Tensor3,
    obs: &Observation<'_>,
    model: &Tensor3,
    a: &Tensor3,
    nu: f64,
    nonneg: bool,
) -> Result<Tensor3> {
    let ra = route.apply(a);
    xtilde_core(ot2, obs, model, &ra, nu, nonneg)
}

pub(crate) fn xtilde_core(
    ot2: &Tensor3,
    obs: &Observation<'_>,
    model: &Tensor3,
    ra: &Tensor3,
    nu: f64,
    nonneg: bool,
) -> Result<Tensor3> {
    let mut out = Tensor3::zeros(obs.y.dims());
    for i in 0..out.len() {
        let w2 = ot2.data()[i];
        let v = (w2 * (obs.y.data()[i] - ra.data()[i]) + nu * model.data()[i]) / (w2 + nu);
        out.data_mut()[i] = if nonneg { v.max(0.0) } else { v };
    }
    Ok(out)
}

/// Regularized alternating-least-squares factor update of the augmented
/// objective, e.g. for mode 1:
/// `P = unfold(X~,1) (Q2 (*) Q1) ((Q1^T Q1).(Q2^T Q2) + (lambda/nu) I)^-1`.
pub fn factor_update_aug(
    mode: Mode,
    xtilde: &Tensor3,
    factors: &FactorTriple,
    reg: &RegParams,
) -> Result<Matrix> {
    if !(reg.nu > 0.0) {
        return Err(Error::arg("factor_update_aug requires nu > 0"));
    }
    if reg.lambda < 0.0 {
        return Err(Error::arg("factor_update_aug requires lambda >= 0"));
    }
    let (e, t1, t2) = xtilde.dims();
    if factors.dims() != (e, t1, t2) {
        return Err(Error::dim("factor_update_aug: factor dims do not match xtilde"));
    }
    factor_aug_inner(mode, xtilde, factors, reg.lambda / reg.nu)
}

/// `m^T m` with per-entry sorted sums over rows (used for the link-indexed
/// factor `P`; time-indexed Grams accumulate plainly via `Matrix::gram`).
fn gram_stable(m: &Matrix) -> Matrix {
    let n = m.cols();
    let mut g = Matrix::zeros(n, n);
    let mut buf: Vec<f64> = Vec::with_capacity(m.rows());
    for a in 0..n {
        for b in a..n {
            let (ca, cb) = (m.col(a), m.col(b));
            for i in 0..m.rows() {
                buf.push(ca[i] * cb[i]);
            }
            let v = stable_sum(&mut buf);
            *g.at_mut(a, b) = v;
            *g.at_mut(b, a) = v;
        }
    }
    g
}

pub(crate) fn factor_aug_inner(
    mode: Mode,
    xtilde: &Tensor3,
    factors: &FactorTriple,
    ridge: f64,
) -> Result<Matrix> {
    let (e, t1, t2) = xtilde.dims();
    let r = factors.rank();
    let pt = rows_of(&factors.p);
    let q1t = rows_of(&factors.q1);
    let q2t = rows_of(&factors.q2);

    let hadamard_sym = |a: &Matrix, b: &Matrix, ridge: f64| {
        let mut g = Matrix::zeros(r, r);
        for c in 0..r {
            for rr in 0..r {
                *g.at_mut(rr, c) = a.at(rr, c) * b.at(rr, c);
            }
            *g.at_mut(c, c) += ridge;
        }
        g
    };

    match mode {
        // Rows are links: time sums only, accumulated plainly.
        Mode::One => {
            let g = hadamard_sym(&factors.q1.gram(), &factors.q2.gram(), ridge);
            let mut mttkrp = Matrix::zeros(r, e);
            for j in 0..e {
                let dst = &mut mttkrp.data_mut()[j * r..(j + 1) * r];
                for k in 0..t2 {
                    let q2r = q2t.col(k);
                    for t in 0..t1 {
                        let x = xtilde.at(j, t, k);
                        if x == 0.0 {
                            continue;
                        }
                        let q1r = q1t.col(t);
                        for rr in 0..r {
                            dst[rr] += x * q1r[rr] * q2r[rr];
                        }
                    }
                }
            }
            Ok(solve_spd(&g, &mttkrp)?.transpose())
        }
        // Rows are fast-time slices: link-indexed partials reduced stably.
        Mode::Two => {
            let g = hadamard_sym(&gram_stable(&factors.p), &factors.q2.gram(), ridge);
            let mut mttkrp = Matrix::zeros(r, t1);
            let mut parts = vec![0.0; e * r];
            let mut buf: Vec<f64> = Vec::with_capacity(e);
            for t in 0..t1 {
                parts.fill(0.0);
                for j in 0..e {
                    let pr = pt.col(j);
                    let dst = &mut parts[j * r..(j + 1) * r];
                    for k in 0..t2 {
                        let x = xtilde.at(j, t, k);
                        if x == 0.0 {
                            continue;
                        }
                        let q2r = q2t.col(k);
                        for rr in 0..r {
                            dst[rr] += x * q2r[rr];
                        }
                    }
                    for rr in 0..r {
                        dst[rr] *= pr[rr];
                    }
                }
                let dst = &mut mttkrp.data_mut()[t * r..(t + 1) * r];
                for rr in 0..r {
                    for j in 0..e {
                        buf.push(parts[j * r + rr]);
                    }
                    dst[rr] = stable_sum(&mut buf);
                }
            }
            Ok(solve_spd(&g, &mttkrp)?.transpose())
        }
        Mode::Three => {
            let g = hadamard_sym(&gram_stable(&factors.p), &factors.q1.gram(), ridge);
            let mut mttkrp = Matrix::zeros(r, t2);
            let mut parts = vec![0.0; e * r];
            let mut buf: Vec<f64> = Vec::with_capacity(e);
            for k in 0..t2 {
                parts.fill(0.0);
                for j in 0..e {
                    let pr = pt.col(j);
                    let dst = &mut parts[j * r..(j + 1) * r];
                    for t in 0..t1 {
                        let x = xtilde.at(j, t, k);
                        if x == 0.0 {
                            continue;
                        }
                        let q1r = q1t.col(t);
                        for rr in 0..r {
                            dst[rr] += x * q1r[rr];
                        }
                    }
                    for rr in 0..r {
                        dst[rr] *= pr[rr];
                    }
                }
                let dst = &mut mttkrp.data_mut()[k * r..(k + 1) * r];
                for rr in 0..r {
                    for j in 0..e {
                        buf.push(parts[j * r + rr]);
                    }
                    dst[rr] = stable_sum(&mut buf);
                }
            }
            Ok(solve_spd(&g, &mttkrp)?.transpose())
        }
    }
}

trait IntoCol {
    fn into_col(self) -> Vec<f64>;
}

impl IntoCol for Matrix {
    fn into_col(self) -> Vec<f64> {
        debug_assert_eq!(self.cols(), 1);
        self.into_data()
    }
}
