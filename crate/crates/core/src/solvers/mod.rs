//! Iterative recovery of low-rank flows plus sparse anomalies from masked
//! link loads, via block-successive convex approximation.
//!
//! Two algorithms are provided.  The direct one alternates exact ridge
//! updates of the CPD factors with a soft-thresholded step on the anomaly
//! tensor; the augmented one introduces an auxiliary fit tensor so the
//! factor updates become plain regularized ALS, trading per-iteration cost
//! for an extra fidelity parameter `nu`.  Both descend their objectives
//! monotonically.  With `T2 = 1` and `Q2` frozen to ones the direct
//! algorithm reduces to the matrix-factorization recursion in
//! [`matrix`], which is kept as an independent implementation for
//! cross-checks.

mod matrix;
mod route;
mod updates;

pub use matrix::{matrix_rpca, MatrixRegParams, MatrixRpcaState};
pub use updates::{
    anomaly_direction, factor_update_aug, factor_update_td, step_size, xtilde_update,
};

pub(crate) use route::RouteKernel;

use crate::error::{Error, Result};
use crate::scenario::Observation;
use crate::tensor::{cpd_reconstruct, FactorTriple, Mode, Tensor3};

/// Regularization bundle: scalar rank penalty `lambda`, elementwise sparsity
/// weights `M` (flow space), fit weights `W` (link space) and the augmented
/// fidelity parameter `nu`.
#[derive(Clone, Debug)]
pub struct RegParams {
    pub lambda: f64,
    pub m: Tensor3,
    pub w: Tensor3,
    pub nu: f64,
}

impl RegParams {
    pub fn new(lambda: f64, m: Tensor3, w: Tensor3, nu: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !(nu >= 0.0) {
            return Err(Error::arg("lambda and nu must be nonnegative"));
        }
        if m.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::arg("sparsity weights M must be strictly positive"));
        }
        if w.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::arg("fit weights W must be strictly positive"));
        }
        Ok(Self { lambda, m, w, nu })
    }

    /// Constant weights: `W = 1`, `M = mu * 1`.
    pub fn scalar(lambda: f64, mu: f64, nu: f64, obs: &Observation<'_>) -> Result<Self> {
        Self::new(
            lambda,
            Tensor3::constant(obs.flow_dims(), mu),
            Tensor3::constant(obs.y.dims(), 1.0),
            nu,
        )
    }
}

/// Initial iterate for the solvers and unrolled networks.
#[derive(Clone, Debug)]
pub struct SolverInit {
    pub factors: FactorTriple,
    pub a: Tensor3,
}

/// Iterate bundle returned by the solvers.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub factors: FactorTriple,
    pub a: Tensor3,
    pub xtilde: Option<Tensor3>,
    pub objective_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
}

impl SolverState {
    pub fn from_init(init: SolverInit) -> Self {
        Self {
            factors: init.factors,
            a: init.a,
            xtilde: None,
            objective_trace: Vec::new(),
            gamma_trace: Vec::new(),
        }
    }

    /// The current estimate of the normal link loads: the auxiliary tensor
    /// when present, the CPD reconstruction otherwise.
    pub fn x_effective(&self) -> Tensor3 {
        match &self.xtilde {
            Some(x) => x.clone(),
            None => cpd_reconstruct(&self.factors),
        }
    }
}

pub(crate) fn check_link_tensor(obs: &Observation<'_>, t: &Tensor3) -> Result<()> {
    if t.dims() != obs.y.dims() {
        return Err(Error::dim("expected a link-space tensor matching Y"));
    }
    Ok(())
}

pub(crate) fn check_flow_tensor(obs: &Observation<'_>, t: &Tensor3) -> Result<()> {
    if t.dims() != obs.flow_dims() {
        return Err(Error::dim("expected a flow-space tensor matching A"));
    }
    Ok(())
}

pub(crate) fn check_problem(
    obs: &Observation<'_>,
    reg: &RegParams,
    factors: &FactorTriple,
    a: &Tensor3,
) -> Result<()> {
    if obs.o.dims() != obs.y.dims() {
        return Err(Error::dim("observation mask must match Y"));
    }
    if obs.r.rows() != obs.y.dims().0 {
        return Err(Error::dim("routing rows must match the link count"));
    }
    check_link_tensor(obs, &reg.w)?;
    check_flow_tensor(obs, &reg.m)?;
    check_flow_tensor(obs, a)?;
    if factors.dims() != obs.y.dims() {
        return Err(Error::dim("factor dims must match the measurement"));
    }
    Ok(())
}

/// Model-fitting objective of the direct formulation:
/// `1/2 ||(O.W).(Y - cpd - A x1 R)||_F^2 + lambda/2 sum||factors||^2 + ||M.A||_1`.
pub fn objective_td(
    obs: &Observation<'_>,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
) -> Result<f64> {
    check_problem(obs, reg, factors, a)?;
    let route = RouteKernel::new(obs.r);
    let model = cpd_reconstruct(factors);
    Ok(objective_td_inner(&route, obs, &model, factors, a, reg))
}

fn data_term(obs: &Observation<'_>, reg: &RegParams, fitted: &Tensor3, ra: &Tensor3) -> f64 {
    let mut acc = 0.0;
    for i in 0..obs.y.len() {
        let v = obs.o.data()[i]
            * reg.w.data()[i]
            * (obs.y.data()[i] - fitted.data()[i] - ra.data()[i]);
        acc += v * v;
    }
    0.5 * acc
}

fn sparsity_term(a: &Tensor3, reg: &RegParams) -> f64 {
    reg.m
        .data()
        .iter()
        .zip(a.data())
        .map(|(&m, &v)| m * v.abs())
        .sum()
}

fn objective_td_inner(
    route: &RouteKernel,
    obs: &Observation<'_>,
    model: &Tensor3,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
) -> f64 {
    let ra = route.apply(a);
    data_term(obs, reg, model, &ra)
        + 0.5 * reg.lambda * factors.frobenius_sq_sum()
        + sparsity_term(a, reg)
}

/// Augmented objective with the auxiliary fit tensor `X~`:
/// the data term uses `X~` and `nu/2 ||X~ - cpd||_F^2` ties it to the model.
pub fn objective_aug(
    obs: &Observation<'_>,
    xtilde: &Tensor3,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
) -> Result<f64> {
    check_problem(obs, reg, factors, a)?;
    check_link_tensor(obs, xtilde)?;
    let route = RouteKernel::new(obs.r);
    Ok(objective_aug_inner(&route, obs, xtilde, factors, a, reg))
}

fn objective_aug_inner(
    route: &RouteKernel,
    obs: &Observation<'_>,
    xtilde: &Tensor3,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
) -> f64 {
    let ra = route.apply(a);
    let model = cpd_reconstruct(factors);
    let fit: f64 = xtilde
        .data()
        .iter()
        .zip(model.data())
        .map(|(&x, &c)| {
            let d = x - c;
            d * d
        })
        .sum();
    data_term(obs, reg, xtilde, &ra)
        + 0.5 * reg.nu * fit
        + 0.5 * reg.lambda * factors.frobenius_sq_sum()
        + sparsity_term(a, reg)
}

/// One full iteration of the direct algorithm: factor ridge updates, then
/// the soft-thresholded anomaly step with its exact majorizer step size.
pub(crate) fn td_iteration(
    state: &mut SolverState,
    obs: &Observation<'_>,
    reg: &RegParams,
    route: &RouteKernel,
    update_q2: bool,
) -> Result<()> {
    let ot2 = updates::weighted_mask_sq(obs, reg)?;
    let ra0 = route.apply(&state.a);
    let resid = obs.y.sub(&ra0)?;
    state.factors.p = updates::factor_td_inner(Mode::One, &state.factors, &ot2, &resid, reg.lambda)?;
    state.factors.q1 = updates::factor_td_inner(Mode::Two, &state.factors, &ot2, &resid, reg.lambda)?;
    if update_q2 {
        state.factors.q2 =
            updates::factor_td_inner(Mode::Three, &state.factors, &ot2, &resid, reg.lambda)?;
    }
    let model = cpd_reconstruct(&state.factors);
    let a_tilde = updates::anomaly_direction_core(route, &ot2, obs, &model, &state.a, &ra0, &reg.m)?;
    let gamma = updates::step_size_core(route, &ot2, obs, &model, &a_tilde, &state.a, &ra0, &reg.m)?;
    state.a = blend(&state.a, &a_tilde, gamma)?;
    state.gamma_trace.push(gamma);
    Ok(())
}

/// One full iteration of the augmented algorithm.  The fit tensor is updated
/// twice so the anomaly step sees the freshly updated factors and vice versa.
pub(crate) fn aug_iteration(
    state: &mut SolverState,
    obs: &Observation<'_>,
    reg: &RegParams,
    route: &RouteKernel,
    nonneg: bool,
) -> Result<()> {
    let ot2 = updates::weighted_mask_sq(obs, reg)?;
    let ra0 = route.apply(&state.a);
    let model = cpd_reconstruct(&state.factors);
    let x1 = updates::xtilde_core(&ot2, obs, &model, &ra0, reg.nu, nonneg)?;
    let ridge = reg.lambda / reg.nu;
    state.factors.p = updates::factor_aug_inner(Mode::One, &x1, &state.factors, ridge)?;
    state.factors.q1 = updates::factor_aug_inner(Mode::Two, &x1, &state.factors, ridge)?;
    state.factors.q2 = updates::factor_aug_inner(Mode::Three, &x1, &state.factors, ridge)?;
    let model = cpd_reconstruct(&state.factors);
    let x2 = updates::xtilde_core(&ot2, obs, &model, &ra0, reg.nu, nonneg)?;
    let a_tilde = updates::anomaly_direction_core(route, &ot2, obs, &x2, &state.a, &ra0, &reg.m)?;
    let gamma = updates::step_size_core(route, &ot2, obs, &x2, &a_tilde, &state.a, &ra0, &reg.m)?;
    state.a = blend(&state.a, &a_tilde, gamma)?;
    state.gamma_trace.push(gamma);
    state.xtilde = Some(x2);
    Ok(())
}

fn blend(a0: &Tensor3, a_tilde: &Tensor3, gamma: f64) -> Result<Tensor3> {
    a0.zip_map(a_tilde, |prev, dir| prev + gamma * (dir - prev))
}

fn check_run(obs: &Observation<'_>, reg: &RegParams, l: usize, init: &SolverInit) -> Result<()> {
    if l < 1 {
        return Err(Error::arg("iteration count L must be at least 1"));
    }
    if !(reg.lambda > 0.0) {
        return Err(Error::arg("solvers require lambda > 0"));
    }
    check_problem(obs, reg, &init.factors, &init.a)
}

/// Direct tensor solver: `L` iterations from `init`, objective recorded
/// after each iteration (non-increasing).
pub fn tbsca_ad(obs: &Observation<'_>, reg: &RegParams, l: usize, init: SolverInit) -> Result<SolverState> {
    tbsca_ad_with(obs, reg, l, init, |_, _| {})
}

/// As [`tbsca_ad`], invoking `hook(iteration, state)` after every iteration.
pub fn tbsca_ad_with(
    obs: &Observation<'_>,
    reg: &RegParams,
    l: usize,
    init: SolverInit,
    hook: impl FnMut(usize, &SolverState),
) -> Result<SolverState> {
    tbsca_ad_opts(obs, reg, l, init, true, hook)
}

/// Direct solver with an optional frozen `Q2` (the matrix-factorization
/// reduction keeps `Q2` fixed at ones and `T2 = 1`).
pub fn tbsca_ad_opts(
    obs: &Observation<'_>,
    reg: &RegParams,
    l: usize,
    init: SolverInit,
    update_q2: bool,
    mut hook: impl FnMut(usize, &SolverState),
) -> Result<SolverState> {
    check_run(obs, reg, l, &init)?;
    let route = RouteKernel::new(obs.r);
    let mut state = SolverState::from_init(init);
    for iter in 1..=l {
        td_iteration(&mut state, obs, reg, &route, update_q2)?;
        let model = cpd_reconstruct(&state.factors);
        state
            .objective_trace
            .push(objective_td_inner(&route, obs, &model, &state.factors, &state.a, reg));
        hook(iter, &state);
    }
    Ok(state)
}

/// Augmented tensor solver.  The first iteration runs one direct iteration
/// (the augmented updates need a warm factorization); iterations `2..=L`
/// run the augmented block sequence and record the augmented objective,
/// which is non-increasing from iteration 2 on.
pub fn tbsca_ad_aug(
    obs: &Observation<'_>,
    reg: &RegParams,
    l: usize,
    init: SolverInit,
    nonneg: bool,
) -> Result<SolverState> {
    tbsca_ad_aug_with(obs, reg, l, init, nonneg, |_, _| {})
}

/// As [`tbsca_ad_aug`] with a per-iteration hook.
pub fn tbsca_ad_aug_with(
    obs: &Observation<'_>,
    reg: &RegParams,
    l: usize,
    init: SolverInit,
    nonneg: bool,
    mut hook: impl FnMut(usize, &SolverState),
) -> Result<SolverState> {
    check_run(obs, reg, l, &init)?;
    if !(reg.nu > 0.0) {
        return Err(Error::arg("the augmented solver requires nu > 0"));
    }
    let route = RouteKernel::new(obs.r);
    let mut state = SolverState::from_init(init);
    for iter in 1..=l {
        if iter == 1 {
            td_iteration(&mut state, obs, reg, &route, true)?;
            state.xtilde = Some(cpd_reconstruct(&state.factors));
        } else {
            aug_iteration(&mut state, obs, reg, &route, nonneg)?;
            let xtilde = state.xtilde.as_ref().expect("set by aug_iteration");
            state
                .objective_trace
                .push(objective_aug_inner(&route, obs, xtilde, &state.factors, &state.a, reg));
        }
        hook(iter, &state);
    }
    Ok(state)
}

/// Which classical solver to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverVariant {
    Td,
    Aug { nonneg: bool },
}

/// Run-to-convergence mode: stops when the relative objective change drops
/// below `tol` (default 1e-8) or after `max_iters` (default 500) iterations.
pub fn run_to_convergence(
    obs: &Observation<'_>,
    reg: &RegParams,
    init: SolverInit,
    variant: SolverVariant,
    max_iters: Option<usize>,
    tol: Option<f64>,
) -> Result<SolverState> {
    let max_iters = max_iters.unwrap_or(500).max(1);
    let tol = tol.unwrap_or(1e-8);
    check_run(obs, reg, max_iters, &init)?;
    let route = RouteKernel::new(obs.r);
    let mut state = SolverState::from_init(init);
    let mut prev: Option<f64> = None;
    for iter in 1..=max_iters {
        let obj = match variant {
            SolverVariant::Td => {
                td_iteration(&mut state, obs, reg, &route, true)?;
                let model = cpd_reconstruct(&state.factors);
                objective_td_inner(&route, obs, &model, &state.factors, &state.a, reg)
            }
            SolverVariant::Aug { nonneg } => {
                if iter == 1 {
                    td_iteration(&mut state, obs, reg, &route, true)?;
                    state.xtilde = Some(cpd_reconstruct(&state.factors));
                    continue;
                }
                aug_iteration(&mut state, obs, reg, &route, nonneg)?;
                let xt = state.xtilde.as_ref().expect("set by aug_iteration");
                objective_aug_inner(&route, obs, xt, &state.factors, &state.a, reg)
            }
        };
        state.objective_trace.push(obj);
        if let Some(p) = prev {
            if (p - obj).abs() <= tol * p.abs().max(1e-30) {
                break;
            }
        }
        prev = Some(obj);
    }
    Ok(state)
}
