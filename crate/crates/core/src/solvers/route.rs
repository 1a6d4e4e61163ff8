//! Sparse application of the routing matrix along the first tensor mode.
//!
//! Routing matrices are sparse (one short path per flow), so products with
//! `R`, `R^T` and `(R.R)^T` gather a handful of terms per output entry.
//! Each gather is summed in sorted order, which makes the result a function
//! of the term multiset alone; together with the other sorted reductions in
//! this crate it gives the forward passes exact equivariance under link and
//! flow permutations.

use crate::tensor::{stable_sum, Matrix, Tensor3};

pub(crate) struct RouteKernel {
    n_links: usize,
    n_flows: usize,
    /// link j -> (flow i, R[j,i]) over nonzeros
    by_link: Vec<Vec<(usize, f64)>>,
    /// flow i -> (link j, R[j,i]) over nonzeros
    by_flow: Vec<Vec<(usize, f64)>>,
}

impl RouteKernel {
    pub fn new(r: &Matrix) -> Self {
        let (e, f) = (r.rows(), r.cols());
        let mut by_link = vec![Vec::new(); e];
        let mut by_flow = vec![Vec::new(); f];
        for i in 0..f {
            for j in 0..e {
                let v = r.at(j, i);
                if v != 0.0 {
                    by_link[j].push((i, v));
                    by_flow[i].push((j, v));
                }
            }
        }
        Self {
            n_links: e,
            n_flows: f,
            by_link,
            by_flow,
        }
    }

    /// `A x1 R`: flow space `(F, T1, T2)` to link space `(E, T1, T2)`.
    pub fn apply(&self, a: &Tensor3) -> Tensor3 {
        let (f, t1, t2) = a.dims();
        debug_assert_eq!(f, self.n_flows);
        let nt = t1 * t2;
        let mut out = Tensor3::zeros((self.n_links, t1, t2));
        let mut buf: Vec<f64> = Vec::new();
        for t in 0..nt {
            let a_col = &a.data()[t * f..(t + 1) * f];
            let o_col = &mut out.data_mut()[t * self.n_links..(t + 1) * self.n_links];
            for (j, links) in self.by_link.iter().enumerate() {
                for &(i, v) in links {
                    buf.push(v * a_col[i]);
                }
                o_col[j] = stable_sum(&mut buf);
            }
        }
        out
    }

    /// `X x1 R^T`: link space to flow space.
    pub fn project(&self, x: &Tensor3) -> Tensor3 {
        self.project_with(x, |v| v)
    }

    /// `X x1 (R.R)^T`: link space to flow space with squared weights.
    pub fn project_sq(&self, x: &Tensor3) -> Tensor3 {
        self.project_with(x, |v| v * v)
    }

    fn project_with(&self, x: &Tensor3, weight: impl Fn(f64) -> f64) -> Tensor3 {
        let (e, t1, t2) = x.dims();
        debug_assert_eq!(e, self.n_links);
        let nt = t1 * t2;
        let mut out = Tensor3::zeros((self.n_flows, t1, t2));
        let mut buf: Vec<f64> = Vec::new();
        for t in 0..nt {
            let x_col = &x.data()[t * e..(t + 1) * e];
            let o_col = &mut out.data_mut()[t * self.n_flows..(t + 1) * self.n_flows];
            for (i, links) in self.by_flow.iter().enumerate() {
                for &(j, v) in links {
                    buf.push(weight(v) * x_col[j]);
                }
                o_col[i] = stable_sum(&mut buf);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{mode_product, Mode};

    fn rng_vals(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn matches_dense_mode_product() {
        let r = Matrix::new(3, 4, rng_vals(12, 1)).unwrap();
        let a = Tensor3::new((4, 2, 3), rng_vals(24, 2)).unwrap();
        let kern = RouteKernel::new(&r);
        let sparse = kern.apply(&a);
        let dense = mode_product(&a, &r, Mode::One).unwrap();
        assert!(sparse.sub(&dense).unwrap().max_abs() < 1e-12);

        let x = Tensor3::new((3, 2, 3), rng_vals(18, 3)).unwrap();
        let proj = kern.project(&x);
        let dense_p = mode_product(&x, &r.transpose(), Mode::One).unwrap();
        assert!(proj.sub(&dense_p).unwrap().max_abs() < 1e-12);

        let proj2 = kern.project_sq(&x);
        let r2t = r.map(|v| v * v).transpose();
        let dense_p2 = mode_product(&x, &r2t, Mode::One).unwrap();
        assert!(proj2.sub(&dense_p2).unwrap().max_abs() < 1e-12);
    }
}
