//! Shared fixtures and independent oracles for the solver test suites.
//! Everything here evaluates the objectives and block minimizers by naive
//! scalar loops or brute-force search, never through the library's update
//! code paths.

#![allow(dead_code)]

use flowten::scenario::{gen_topology, sample_scenario, Observation, Scenario, SynthParams};
use flowten::solvers::RegParams;
use flowten::tensor::{FactorTriple, Matrix, Tensor3};

pub fn desk_params() -> SynthParams {
    SynthParams {
        n_nodes: 8,
        n_edges: 16,
        t1: 10,
        t2: 5,
        p_obs: 0.9,
        r_gt: 5,
        s_min: 0.5,
        s_max: 1.5,
        a_ano: 0.75,
        p_ano: 0.02,
        sigma_noise_sq: 0.04,
    }
}

pub fn desk_scenario(seed: u64) -> Scenario {
    let p = desk_params();
    let g = gen_topology(p.n_nodes, p.n_edges, seed ^ 0x70D0).unwrap();
    sample_scenario(&g, &p, seed).unwrap()
}

/// Deterministic uniform stream in [0, 1).
pub struct Stream(u64);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_add(0x9E3779B97F4A7C15))
    }

    pub fn next(&mut self) -> f64 {
        self.0 ^= self.0 >> 30;
        self.0 = self.0.wrapping_mul(0xBF58476D1CE4E5B9);
        self.0 ^= self.0 >> 27;
        self.0 = self.0.wrapping_mul(0x94D049BB133111EB);
        self.0 ^= self.0 >> 31;
        let v = (self.0 >> 11) as f64 / (1u64 << 53) as f64;
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        v
    }

    pub fn signed(&mut self) -> f64 {
        self.next() * 2.0 - 1.0
    }

    pub fn tensor(&mut self, dims: (usize, usize, usize)) -> Tensor3 {
        Tensor3::from_fn(dims, |_, _, _| self.signed())
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.signed())
    }
}

/// A small random problem instance around a sampled scenario.
pub struct Instance {
    pub scenario: Scenario,
    pub factors: FactorTriple,
    pub a: Tensor3,
    pub reg: RegParams,
}

impl Instance {
    pub fn obs(&self) -> Observation<'_> {
        self.scenario.observation()
    }
}

/// Random instance at the oracle scale: E=4, F=6, T1=4, T2=3, rank 2.
pub fn small_instance(seed: u64) -> Instance {
    small_instance_with(seed, 0.9)
}

pub fn small_instance_with(seed: u64, p_obs: f64) -> Instance {
    let params = SynthParams {
        n_nodes: 3,
        n_edges: 4,
        t1: 4,
        t2: 3,
        p_obs,
        r_gt: 2,
        s_min: 0.5,
        s_max: 1.5,
        a_ano: 1.0,
        p_ano: 0.05,
        sigma_noise_sq: 0.02,
    };
    let g = gen_topology(params.n_nodes, params.n_edges, seed ^ 0xBEEF).unwrap();
    let scenario = sample_scenario(&g, &params, seed).unwrap();
    let mut st = Stream::new(seed ^ 0xFACE);
    let rank = 2;
    let (e, t1, t2) = scenario.y.dims();
    let f = scenario.graph.n_flows();
    let factors = FactorTriple::new(
        st.matrix(e, rank),
        st.matrix(t1, rank),
        st.matrix(t2, rank),
    )
    .unwrap();
    let a = st.tensor((f, t1, t2)).scale(0.3);
    let m = Tensor3::from_fn((f, t1, t2), |_, _, _| 0.05 + 0.3 * st.next());
    let w = Tensor3::from_fn((e, t1, t2), |_, _, _| 0.5 + st.next());
    let reg = RegParams::new(0.1 + 0.4 * st.next(), m, w, 0.5 + st.next()).unwrap();
    Instance {
        scenario,
        factors,
        a,
        reg,
    }
}

/// Dense scalar-loop CPD reconstruction.
pub fn naive_cpd(f: &FactorTriple) -> Tensor3 {
    let (d1, d2, d3) = f.dims();
    Tensor3::from_fn((d1, d2, d3), |i, j, k| {
        (0..f.rank())
            .map(|r| f.p.at(i, r) * f.q1.at(j, r) * f.q2.at(k, r))
            .sum()
    })
}

/// Dense scalar-loop `A x1 R`.
pub fn naive_route(a: &Tensor3, r: &Matrix) -> Tensor3 {
    let (_, t1, t2) = a.dims();
    Tensor3::from_fn((r.rows(), t1, t2), |j, t, k| {
        (0..r.cols()).map(|i| r.at(j, i) * a.at(i, t, k)).sum()
    })
}

/// Naive elementwise evaluation of the direct objective.
pub fn naive_objective_td(
    obs: &Observation<'_>,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
) -> f64 {
    let model = naive_cpd(factors);
    let ra = naive_route(a, obs.r);
    let (e, t1, t2) = obs.y.dims();
    let mut acc = 0.0;
    for k in 0..t2 {
        for t in 0..t1 {
            for j in 0..e {
                let v = obs.o.at(j, t, k)
                    * reg.w.at(j, t, k)
                    * (obs.y.at(j, t, k) - model.at(j, t, k) - ra.at(j, t, k));
                acc += 0.5 * v * v;
            }
        }
    }
    acc += 0.5 * reg.lambda * factors.frobenius_sq_sum();
    let (fd, _, _) = a.dims();
    for k in 0..t2 {
        for t in 0..t1 {
            for i in 0..fd {
                acc += reg.m.at(i, t, k) * a.at(i, t, k).abs();
            }
        }
    }
    acc
}

/// Naive elementwise evaluation of the augmented objective.
pub fn naive_objective_aug(
    obs: &Observation<'_>,
    xtilde: &Tensor3,
    factors: &FactorTriple,
    a: &Tensor3,
    reg: &RegParams,
) -> f64 {
    let model = naive_cpd(factors);
    let ra = naive_route(a, obs.r);
    let (e, t1, t2) = obs.y.dims();
    let mut acc = 0.0;
    for k in 0..t2 {
        for t in 0..t1 {
            for j in 0..e {
                let v = obs.o.at(j, t, k)
                    * reg.w.at(j, t, k)
                    * (obs.y.at(j, t, k) - xtilde.at(j, t, k) - ra.at(j, t, k));
                acc += 0.5 * v * v;
                let d = xtilde.at(j, t, k) - model.at(j, t, k);
                acc += 0.5 * reg.nu * d * d;
            }
        }
    }
    acc += 0.5 * reg.lambda * factors.frobenius_sq_sum();
    let (fd, _, _) = a.dims();
    for k in 0..t2 {
        for t in 0..t1 {
            for i in 0..fd {
                acc += reg.m.at(i, t, k) * a.at(i, t, k).abs();
            }
        }
    }
    acc
}

/// Gaussian elimination with partial pivoting (independent of Cholesky).
pub fn gauss_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row: Vec<f64> = (0..n).map(|c| a.at(r, c)).collect();
            row.push(b[r]);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = m[r][n];
        for c in (r + 1)..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    x
}

/// Weighted ridge through the normal equations, assembled from an explicit
/// design matrix: minimizes `sum_i w_i (y_i - d_i^T x)^2 + lambda ||x||^2`.
pub fn ridge_oracle(design: &[Vec<f64>], weights: &[f64], targets: &[f64], lambda: f64) -> Vec<f64> {
    let r = design[0].len();
    let mut g = Matrix::zeros(r, r);
    let mut rhs = vec![0.0; r];
    for (row, (&w, &y)) in design.iter().zip(weights.iter().zip(targets)) {
        for a in 0..r {
            for b in 0..r {
                *g.at_mut(a, b) += w * row[a] * row[b];
            }
            rhs[a] += w * y * row[a];
        }
    }
    for d in 0..r {
        *g.at_mut(d, d) += lambda;
    }
    gauss_solve(&g, &rhs)
}

/// Golden-section search for the minimum of a unimodal function.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// The majorizer minimized by the step-size rule, as a function of gamma.
pub fn majorizer(
    obs: &Observation<'_>,
    x_eff: &Tensor3,
    a_tilde: &Tensor3,
    a0: &Tensor3,
    reg: &RegParams,
    gamma: f64,
) -> f64 {
    let l1 = |t: &Tensor3| -> f64 {
        let mut acc = 0.0;
        let (f, t1, t2) = t.dims();
        for k in 0..t2 {
            for tt in 0..t1 {
                for i in 0..f {
                    acc += reg.m.at(i, tt, k) * t.at(i, tt, k).abs();
                }
            }
        }
        acc
    };
    let blended = a0.zip_map(a_tilde, |p, d| p + gamma * (d - p)).unwrap();
    let ra = naive_route(&blended, obs.r);
    let (e, t1, t2) = obs.y.dims();
    let mut quad = 0.0;
    for k in 0..t2 {
        for tt in 0..t1 {
            for j in 0..e {
                let v = obs.o.at(j, tt, k)
                    * reg.w.at(j, tt, k)
                    * (obs.y.at(j, tt, k) - x_eff.at(j, tt, k) - ra.at(j, tt, k));
                quad += 0.5 * v * v;
            }
        }
    }
    gamma * (l1(a_tilde) - l1(a0)) + quad
}
