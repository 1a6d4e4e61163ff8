//! Matrix-factorization recovery: the `T2 = 1` special case written directly
//! in matrix form, with `X = P Q^T` and dense routing products.
//!
//! Kept independent of the tensor code paths on purpose: the tensor solver
//! with `T2 = 1` and `Q2` frozen at ones must reproduce this recursion
//! iterate-for-iterate, and the comparison is only meaningful if the two
//! implementations share no update code.

use crate::error::{Error, Result};
use crate::tensor::{solve_spd, Matrix};

/// Regularization for the matrix recursion; `m` and `w` generalize the
/// scalar sparsity and fit weights exactly as in the tensor objective.
#[derive(Clone, Debug)]
pub struct MatrixRegParams {
    pub lambda: f64,
    /// `F x T` sparsity weights.
    pub m: Matrix,
    /// `E x T` fit weights.
    pub w: Matrix,
}

#[derive(Clone, Debug)]
pub struct MatrixRpcaState {
    pub p: Matrix,
    pub q: Matrix,
    pub a: Matrix,
    pub objective_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
}

/// Runs `l` iterations of the matrix recursion (P ridge rows, Q ridge rows,
/// soft-thresholded anomaly direction, exact majorizer step).
#[allow(clippy::too_many_arguments)]
pub fn matrix_rpca(
    y: &Matrix,
    o: &Matrix,
    r: &Matrix,
    reg: &MatrixRegParams,
    l: usize,
    p0: Matrix,
    q0: Matrix,
    a0: Matrix,
) -> Result<MatrixRpcaState> {
    let (e, t) = (y.rows(), y.cols());
    let f = r.cols();
    if o.rows() != e || o.cols() != t || r.rows() != e {
        return Err(Error::dim("matrix_rpca: Y, O, R shapes inconsistent"));
    }
    if a0.rows() != f || a0.cols() != t {
        return Err(Error::dim("matrix_rpca: A must be F x T"));
    }
    if p0.cols() != q0.cols() || p0.rows() != e || q0.rows() != t {
        return Err(Error::dim("matrix_rpca: factor shapes inconsistent"));
    }
    if reg.m.rows() != f || reg.m.cols() != t || reg.w.rows() != e || reg.w.cols() != t {
        return Err(Error::dim("matrix_rpca: weight shapes inconsistent"));
    }
    if l < 1 {
        return Err(Error::arg("matrix_rpca: L must be at least 1"));
    }
    if !(reg.lambda > 0.0) {
        return Err(Error::arg("matrix_rpca: lambda must be positive"));
    }

    let rank = p0.cols();
    let ot2 = Matrix::from_fn(e, t, |j, tt| {
        let v = o.at(j, tt) * reg.w.at(j, tt);
        v * v
    });
    let mut state = MatrixRpcaState {
        p: p0,
        q: q0,
        a: a0,
        objective_trace: Vec::new(),
        gamma_trace: Vec::new(),
    };

    let route = |a: &Matrix| -> Matrix {
        // R * A, dense.
        let mut out = Matrix::zeros(e, t);
        for tt in 0..t {
            for j in 0..e {
                let mut s = 0.0;
                for i in 0..f {
                    s += r.at(j, i) * a.at(i, tt);
                }
                *out.at_mut(j, tt) = s;
            }
        }
        out
    };

    for _ in 0..l {
        let ra = route(&state.a);
        // P update: ridge per link row with design Q.
        for j in 0..e {
            let mut gram = Matrix::zeros(rank, rank);
            let mut rhs = Matrix::zeros(rank, 1);
            for tt in 0..t {
                let wj = ot2.at(j, tt);
                if wj == 0.0 {
                    continue;
                }
                let target = y.at(j, tt) - ra.at(j, tt);
                for a_i in 0..rank {
                    let qa = state.q.at(tt, a_i);
                    for b_i in 0..rank {
                        *gram.at_mut(a_i, b_i) += wj * qa * state.q.at(tt, b_i);
                    }
                    *rhs.at_mut(a_i, 0) += wj * target * qa;
                }
            }
            for d in 0..rank {
                *gram.at_mut(d, d) += reg.lambda;
            }
            let sol = solve_spd(&gram, &rhs)?;
            for c in 0..rank {
                *state.p.at_mut(j, c) = sol.at(c, 0);
            }
        }
        // Q update: ridge per time row with design P.
        for tt in 0..t {
            let mut gram = Matrix::zeros(rank, rank);
            let mut rhs = Matrix::zeros(rank, 1);
            for j in 0..e {
                let wj = ot2.at(j, tt);
                if wj == 0.0 {
                    continue;
                }
                let target = y.at(j, tt) - ra.at(j, tt);
                for a_i in 0..rank {
                    let pa = state.p.at(j, a_i);
                    for b_i in 0..rank {
                        *gram.at_mut(a_i, b_i) += wj * pa * state.p.at(j, b_i);
                    }
                    *rhs.at_mut(a_i, 0) += wj * target * pa;
                }
            }
            for d in 0..rank {
                *gram.at_mut(d, d) += reg.lambda;
            }
            let sol = solve_spd(&gram, &rhs)?;
            for c in 0..rank {
                *state.q.at_mut(tt, c) = sol.at(c, 0);
            }
        }

        let x = state.p.matmul(&state.q.transpose())?;
        let ra = route(&state.a);
        // Anomaly direction: soft-threshold of the flow-projected residual.
        let mut a_tilde = Matrix::zeros(f, t);
        let mut denom = Matrix::zeros(f, t);
        for tt in 0..t {
            for i in 0..f {
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..e {
                    let rji = r.at(j, i);
                    if rji == 0.0 {
                        continue;
                    }
                    let w2 = ot2.at(j, tt);
                    num += rji * w2 * (y.at(j, tt) - x.at(j, tt) - ra.at(j, tt));
                    den += rji * rji * w2;
                }
                *denom.at_mut(i, tt) = den;
                if den == 0.0 {
                    *a_tilde.at_mut(i, tt) = state.a.at(i, tt);
                } else {
                    let raw = num + den * state.a.at(i, tt);
                    let mu = reg.m.at(i, tt);
                    let mag = raw.abs() - mu;
                    *a_tilde.at_mut(i, tt) = if mag > 0.0 { raw.signum() * mag / den } else { 0.0 };
                }
            }
        }
        // Exact majorizer step size, clamped to [0, 1].
        let diff = a_tilde.sub(&state.a)?;
        let rdiff = route(&diff);
        let mut denom_g = 0.0;
        let mut inner = 0.0;
        for tt in 0..t {
            for j in 0..e {
                let w2 = ot2.at(j, tt);
                let d = rdiff.at(j, tt);
                denom_g += w2 * d * d;
                inner += w2 * (x.at(j, tt) + ra.at(j, tt) - y.at(j, tt)) * d;
            }
        }
        let mut l1_tilde = 0.0;
        let mut l1_a0 = 0.0;
        for tt in 0..t {
            for i in 0..f {
                l1_tilde += reg.m.at(i, tt) * a_tilde.at(i, tt).abs();
                l1_a0 += reg.m.at(i, tt) * state.a.at(i, tt).abs();
            }
        }
        let gamma = if denom_g == 0.0 {
            0.0
        } else {
            (-(inner + l1_tilde - l1_a0) / denom_g).clamp(0.0, 1.0)
        };
        for tt in 0..t {
            for i in 0..f {
                let prev = state.a.at(i, tt);
                *state.a.at_mut(i, tt) = prev + gamma * (a_tilde.at(i, tt) - prev);
            }
        }
        state.gamma_trace.push(gamma);

        // Objective: matrix form of the model-fitting problem.
        let ra = route(&state.a);
        let mut obj = 0.0;
        for tt in 0..t {
            for j in 0..e {
                let v = o.at(j, tt) * reg.w.at(j, tt) * (y.at(j, tt) - x.at(j, tt) - ra.at(j, tt));
                obj += 0.5 * v * v;
            }
        }
        obj += 0.5 * reg.lambda * (state.p.frobenius_sq() + state.q.frobenius_sq());
        for tt in 0..t {
            for i in 0..f {
                obj += reg.m.at(i, tt) * state.a.at(i, tt).abs();
            }
        }
        state.objective_trace.push(obj);
    }
    Ok(state)
}
