//! Scenario synthesis and ingestion: random strongly connected topologies,
//! shortest-path routing matrices, low-rank flows with scaling, sparse
//! anomalies, observation masks, measurement noise, time folding, and
//! real-trace windows with injected anomalies.
//!
//! A scenario bundles the ground truth `{O, R, Z, A, N}` together with the
//! derived measurement `Y = O .* ((Z + A) x1 R + N)`, which holds exactly by
//! construction for every generated or loaded scenario.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{mode_product, Matrix, Mode, Tensor3};

/// Directed graph with a per-flow single-path routing matrix.
///
/// Flows are all ordered node pairs `(src, dst)`, `src != dst`, in
/// lexicographic order, so flow `i` maps to a fixed pair and `F = N(N-1)`.
/// Graphs ingested from a raw routing matrix carry no edge list.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingGraph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub routing: Matrix,
}

impl RoutingGraph {
    /// Builds the routing matrix for an explicit edge list by routing every
    /// ordered node pair along a hop-count shortest path, ties broken by the
    /// lexicographically smallest node sequence.
    pub fn from_edges(n_nodes: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::arg("topology needs at least two nodes"));
        }
        edges.sort_unstable();
        edges.dedup();
        if edges.iter().any(|&(s, d)| s == d || s >= n_nodes || d >= n_nodes) {
            return Err(Error::arg("edge endpoints must be distinct nodes in range"));
        }
        let mut fwd = vec![Vec::new(); n_nodes];
        let mut rev = vec![Vec::new(); n_nodes];
        for &(s, d) in &edges {
            fwd[s].push(d);
            rev[d].push(s);
        }
        // Adjacency is sorted because the edge list is.
        let edge_index: HashMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();

        let e = edges.len();
        let f = n_nodes * (n_nodes - 1);
        let mut routing = Matrix::zeros(e, f);
        let mut flow = 0usize;
        for src in 0..n_nodes {
            for dst in 0..n_nodes {
                if src == dst {
                    continue;
                }
                // Distances to dst over the reversed graph.
                let mut dist = vec![usize::MAX; n_nodes];
                dist[dst] = 0;
                let mut queue = std::collections::VecDeque::from([dst]);
                while let Some(u) = queue.pop_front() {
                    for &v in &rev[u] {
                        if dist[v] == usize::MAX {
                            dist[v] = dist[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                if dist[src] == usize::MAX {
                    return Err(Error::arg(format!(
                        "graph is not strongly connected: no path {} -> {}",
                        src, dst
                    )));
                }
                // Greedy forward walk: smallest next node among shortest continuations.
                let mut u = src;
                while u != dst {
                    let next = fwd[u]
                        .iter()
                        .copied()
                        .filter(|&v| dist[v] + 1 == dist[u])
                        .min()
                        .expect("shortest path step exists");
                    *routing.at_mut(edge_index[&(u, next)], flow) = 1.0;
                    u = next;
                }
                flow += 1;
            }
        }
        Ok(Self {
            n_nodes,
            edges,
            routing,
        })
    }

    /// Wraps a raw routing matrix (real-trace ingestion); no edge topology.
    pub fn from_routing_matrix(routing: Matrix) -> Self {
        // Recover the node count when F = n(n-1) has an integer solution.
        let f = routing.cols() as f64;
        let n = ((1.0 + (1.0 + 4.0 * f).sqrt()) / 2.0).round() as usize;
        let n_nodes = if n >= 2 && n * (n - 1) == routing.cols() { n } else { 0 };
        Self {
            n_nodes,
            edges: Vec::new(),
            routing,
        }
    }

    pub fn n_links(&self) -> usize {
        self.routing.rows()
    }

    pub fn n_flows(&self) -> usize {
        self.routing.cols()
    }

    /// The ordered pair served by flow `i`.
    pub fn flow_pair(&self, i: usize) -> (usize, usize) {
        let n = self.n_nodes;
        let (src, rem) = (i / (n - 1), i % (n - 1));
        let dst = if rem < src { rem } else { rem + 1 };
        (src, dst)
    }

    /// Checks that every routing column traces a contiguous directed path
    /// from its flow's source to its destination.
    pub fn validate_paths(&self) -> Result<()> {
        for i in 0..self.n_flows() {
            let (src, dst) = self.flow_pair(i);
            let used: Vec<(usize, usize)> = self
                .edges
                .iter()
                .enumerate()
                .filter(|&(j, _)| self.routing.at(j, i) != 0.0)
                .map(|(_, &e)| e)
                .collect();
            let mut next: HashMap<usize, usize> = HashMap::new();
            for &(s, d) in &used {
                if next.insert(s, d).is_some() {
                    return Err(Error::arg(format!("flow {i} branches at node {s}")));
                }
            }
            let mut u = src;
            let mut hops = 0;
            while u != dst {
                u = *next
                    .get(&u)
                    .ok_or_else(|| Error::arg(format!("flow {i} path breaks at node {u}")))?;
                hops += 1;
                if hops > self.edges.len() {
                    return Err(Error::arg(format!("flow {i} path cycles")));
                }
            }
            if hops != used.len() {
                return Err(Error::arg(format!("flow {i} has disconnected edges")));
            }
        }
        Ok(())
    }
}

/// Generates a random strongly connected digraph with exactly `n_edges`
/// directed edges: a random Hamiltonian cycle plus uniformly random extra
/// edges, routed by shortest paths.  Deterministic per seed.
pub fn gen_topology(n_nodes: usize, n_edges: usize, seed: u64) -> Result<RoutingGraph> {
    if n_nodes < 2 {
        return Err(Error::arg("topology needs at least two nodes"));
    }
    if n_edges < n_nodes || n_edges > n_nodes * (n_nodes - 1) {
        return Err(Error::arg(format!(
            "edge count {} infeasible for {} nodes (need {}..={})",
            n_edges,
            n_nodes,
            n_nodes,
            n_nodes * (n_nodes - 1)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(&mut rng);
    let mut edges: Vec<(usize, usize)> = (0..n_nodes)
        .map(|i| (order[i], order[(i + 1) % n_nodes]))
        .collect();
    let mut extras: Vec<(usize, usize)> = Vec::new();
    for s in 0..n_nodes {
        for d in 0..n_nodes {
            if s != d && !edges.contains(&(s, d)) {
                extras.push((s, d));
            }
        }
    }
    extras.shuffle(&mut rng);
    edges.extend(extras.into_iter().take(n_edges - n_nodes));
    RoutingGraph::from_edges(n_nodes, edges)
}

/// Sampling parameters of a synthetic scenario family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub t1: usize,
    pub t2: usize,
    pub p_obs: f64,
    pub r_gt: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub a_ano: f64,
    pub p_ano: f64,
    pub sigma_noise_sq: f64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_obs > 0.0 && self.p_obs <= 1.0) {
            return Err(Error::arg("p_obs must be in (0, 1]"));
        }
        if !(self.p_ano >= 0.0 && self.p_ano < 1.0) {
            return Err(Error::arg("p_ano must be in [0, 1)"));
        }
        if !(self.s_min > 0.0 && self.s_min <= self.s_max) {
            return Err(Error::arg("need 0 < s_min <= s_max"));
        }
        if self.r_gt < 1 {
            return Err(Error::arg("r_gt must be at least 1"));
        }
        if self.sigma_noise_sq < 0.0 {
            return Err(Error::arg("sigma_noise_sq must be nonnegative"));
        }
        if self.t1 == 0 || self.t2 == 0 {
            return Err(Error::arg("time dimensions must be positive"));
        }
        Ok(())
    }
}

/// One complete ground-truth instance plus its derived measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub graph: RoutingGraph,
    /// Normal flows, `F x T1 x T2`, nonnegative.
    pub z: Tensor3,
    /// Ground-truth anomalies, `F x T1 x T2`.
    pub a_true: Tensor3,
    /// Measurement noise in link space, `E x T1 x T2`.
    pub n_noise: Tensor3,
    /// Observation mask, `E x T1 x T2`, entries in `{0, 1}`.
    pub o: Tensor3,
    /// Measurement, `E x T1 x T2`.
    pub y: Tensor3,
}

/// Borrowed view of the observable part of a scenario.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub y: &'a Tensor3,
    pub o: &'a Tensor3,
    pub r: &'a Matrix,
}

/// An owned observation (used by matrix-mode reshaping).
#[derive(Clone, Debug)]
pub struct ObservationData {
    pub y: Tensor3,
    pub o: Tensor3,
    pub r: Matrix,
}

impl ObservationData {
    pub fn view(&self) -> Observation<'_> {
        Observation {
            y: &self.y,
            o: &self.o,
            r: &self.r,
        }
    }
}

impl<'a> Observation<'a> {
    pub fn n_links(&self) -> usize {
        self.y.dims().0
    }
    pub fn n_flows(&self) -> usize {
        self.r.cols()
    }
    pub fn t1(&self) -> usize {
        self.y.dims().1
    }
    pub fn t2(&self) -> usize {
        self.y.dims().2
    }
    pub fn flow_dims(&self) -> (usize, usize, usize) {
        (self.n_flows(), self.t1(), self.t2())
    }
}

impl Scenario {
    pub fn observation(&self) -> Observation<'_> {
        Observation {
            y: &self.y,
            o: &self.o,
            r: &self.graph.routing,
        }
    }

    /// Binary ground-truth anomaly indicator in flow space.
    pub fn truth_mask(&self) -> Tensor3 {
        self.a_true.map(|v| if v != 0.0 { 1.0 } else { 0.0 })
    }

    pub fn anomaly_count(&self) -> usize {
        self.a_true.data().iter().filter(|&&v| v != 0.0).count()
    }

    fn assemble_y(z: &Tensor3, a: &Tensor3, n: &Tensor3, o: &Tensor3, r: &Matrix) -> Result<Tensor3> {
        let routed = mode_product(&z.add(a)?, r, Mode::One)?;
        o.hadamard(&routed.add(n)?)
    }
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

/// Draws a full synthetic scenario; reproducible bit-for-bit per seed.
///
/// The scaling tensor `S = s1 o s2 o s3` (entries `U(s_min, s_max)`) varies
/// statistics over flows and time; normal flows are `S .* cpd(Z1, Z2, Z3) /
/// R_gt` with `Exp(1)` factor entries (inverse CDF); noise is drawn per-flow,
/// scaled by `S` and routed; anomalies take values `{-A_ano*S, 0, +A_ano*S}`
/// with probabilities `(p/2, 1-p, p/2)`; the mask is Bernoulli(`p_obs`).
pub fn sample_scenario(graph: &RoutingGraph, params: &SynthParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let f = graph.n_flows();
    let e = graph.n_links();
    let (t1, t2) = (params.t1, params.t2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let span = params.s_max - params.s_min;
    let s1: Vec<f64> = (0..f).map(|_| params.s_min + span * uniform01(&mut rng)).collect();
    let s2: Vec<f64> = (0..t1).map(|_| params.s_min + span * uniform01(&mut rng)).collect();
    let s3: Vec<f64> = (0..t2).map(|_| params.s_min + span * uniform01(&mut rng)).collect();
    let scaling = Tensor3::from_fn((f, t1, t2), |i, j, k| s1[i] * s2[j] * s3[k]);

    let exp1 = |rng: &mut ChaCha8Rng| -> f64 { -(1.0 - uniform01(rng)).ln() };
    let factor = |rows: usize, rng: &mut ChaCha8Rng| {
        let data: Vec<f64> = (0..rows * params.r_gt).map(|_| exp1(rng)).collect();
        Matrix::new(rows, params.r_gt, data).expect("factor dims")
    };
    let z1 = factor(f, &mut rng);
    let z2 = factor(t1, &mut rng);
    let z3 = factor(t2, &mut rng);
    let z_lr = crate::tensor::cpd_reconstruct(
        &crate::tensor::FactorTriple::new(z1, z2, z3).expect("shared rank"),
    )
    .scale(1.0 / params.r_gt as f64);
    let z = scaling.hadamard(&z_lr)?;

    let sigma = params.sigma_noise_sq.sqrt();
    let mut noise_flow = Tensor3::zeros((f, t1, t2));
    for v in noise_flow.data_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v = sigma * g;
    }
    let n_noise = mode_product(&scaling.hadamard(&noise_flow)?, &graph.routing, Mode::One)?;

    let mut ano_sign = Tensor3::zeros((f, t1, t2));
    for v in ano_sign.data_mut() {
        let u = uniform01(&mut rng);
        *v = if u < params.p_ano / 2.0 {
            -1.0
        } else if u < params.p_ano {
            1.0
        } else {
            0.0
        };
    }
    let a_true = scaling.hadamard(&ano_sign)?.scale(params.a_ano);

    let mut o = Tensor3::zeros((e, t1, t2));
    for v in o.data_mut() {
        *v = if uniform01(&mut rng) < params.p_obs { 1.0 } else { 0.0 };
    }

    let y = Scenario::assemble_y(&z, &a_true, &n_noise, &o, &graph.routing)?;
    Ok(Scenario {
        graph: graph.clone(),
        z,
        a_true,
        n_noise,
        o,
        y,
    })
}

/// Folds a `rows x (T1*T2)` matrix into a `rows x T1 x T2` tensor with
/// `t = t1 + (t2-1)*T1` (fast time `t1`, slow time `t2`).
pub fn fold_time(m: &Matrix, t1: usize, t2: usize) -> Result<Tensor3> {
    if m.cols() != t1 * t2 {
        return Err(Error::dim(format!(
            "fold_time: {} columns cannot fold into {}x{}",
            m.cols(),
            t1,
            t2
        )));
    }
    Tensor3::refold(m, Mode::One, (m.rows(), t1, t2))
}

/// Inverse of [`fold_time`].
pub fn unfold_time(t: &Tensor3) -> Matrix {
    t.unfold(Mode::One)
}

/// Anomaly injection settings for real traces.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionParams {
    pub a_ano: f64,
    pub p_ano: f64,
    pub p_obs: f64,
}

/// Loads a real flow trace, slices it into `T1 x T2` windows and injects
/// synthetic anomalies scaled per flow by `A_ano * max_t Z[i, t]`.
/// The noise component is zero; the mask is Bernoulli(`p_obs`) per window.
pub fn load_real_dataset(
    flow_file: &Path,
    routing_file: &Path,
    t1: usize,
    t2: usize,
    window_stride: Option<usize>,
    inj: &InjectionParams,
    seed: u64,
) -> Result<Vec<Scenario>> {
    let flows = read_tsv_matrix(flow_file)?;
    let routing = read_tsv_matrix(routing_file)?;
    if flows.data().iter().any(|&v| v < 0.0) {
        return Err(Error::format(format!(
            "{}: negative flow entry",
            flow_file.display()
        )));
    }
    if routing.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(format!(
            "{}: routing entries must be 0 or 1",
            routing_file.display()
        )));
    }
    if routing.cols() != flows.rows() {
        return Err(Error::format(format!(
            "routing has {} flows but the trace has {} flow rows",
            routing.cols(),
            flows.rows()
        )));
    }
    let window = t1 * t2;
    if flows.cols() < window {
        return Err(Error::format(format!(
            "trace length {} is shorter than one {}x{} window",
            flows.cols(),
            t1,
            t2
        )));
    }
    if !(inj.p_obs > 0.0 && inj.p_obs <= 1.0) || !(inj.p_ano >= 0.0 && inj.p_ano < 1.0) {
        return Err(Error::arg("injection probabilities out of range"));
    }
    let stride = window_stride.unwrap_or(window);
    if stride == 0 {
        return Err(Error::arg("window stride must be positive"));
    }
    let graph = RoutingGraph::from_routing_matrix(routing);
    let f = graph.n_flows();
    let e = graph.n_links();

    let mut out = Vec::new();
    let mut start = 0usize;
    let mut window_idx = 0u64;
    while start + window <= flows.cols() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ window_idx.wrapping_mul(0x9E3779B97F4A7C15));
        let z_mat = Matrix::from_fn(f, window, |r, c| flows.at(r, start + c));
        let z = fold_time(&z_mat, t1, t2)?;

        let mut ano_sign = Tensor3::zeros((f, t1, t2));
        for v in ano_sign.data_mut() {
            let u = uniform01(&mut rng);
            *v = if u < inj.p_ano / 2.0 {
                -1.0
            } else if u < inj.p_ano {
                1.0
            } else {
                0.0
            };
        }
        let mut a_true = Tensor3::zeros((f, t1, t2));
        for i in 0..f {
            let peak = (0..window).fold(0.0_f64, |m, c| m.max(z_mat.at(i, c)));
            let scale = inj.a_ano * peak;
            for k in 0..t2 {
                for j in 0..t1 {
                    *a_true.at_mut(i, j, k) = scale * ano_sign.at(i, j, k);
                }
            }
        }
        let mut o = Tensor3::zeros((e, t1, t2));
        for v in o.data_mut() {
            *v = if uniform01(&mut rng) < inj.p_obs { 1.0 } else { 0.0 };
        }
        let n_noise = Tensor3::zeros((e, t1, t2));
        let y = Scenario::assemble_y(&z, &a_true, &n_noise, &o, &graph.routing)?;
        out.push(Scenario {
            graph: graph.clone(),
            z,
            a_true,
            n_noise,
            o,
            y,
        });
        start += stride;
        window_idx += 1;
    }
    Ok(out)
}

/// Reads a header-free whitespace/tab separated numeric matrix.
pub fn read_tsv_matrix(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (colno, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::format(format!(
                    "{}: row {}, col {}: cannot parse {tok:?} as a number",
                    path.display(),
                    lineno + 1,
                    colno + 1
                ))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::format(format!(
                    "{}: row {} has {} columns, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(format!("{}: empty matrix", path.display())));
    }
    Matrix::from_rows(&rows)
}

/// Writes a matrix as header-free TSV with round-trip-exact float formatting.
pub fn write_tsv_matrix(m: &Matrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if c > 0 {
                out.push('\t');
            }
            out.push_str(&format!("{}", m.at(r, c)));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// --- scenario bundle on disk -------------------------------------------------

pub const BUNDLE_FORMAT_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    format_version: String,
    seed: u64,
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    dims: BundleDims,
    params: Option<SynthParams>,
}

#[derive(Serialize, Deserialize)]
struct BundleDims {
    e: usize,
    f: usize,
    t1: usize,
    t2: usize,
}

fn write_f64_slice(path: &Path, data: &[f64]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

fn read_f64_slice(path: &Path, expect: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expect * 8 {
        return Err(Error::format(format!(
            "{}: expected {} values ({} bytes), found {} bytes",
            path.display(),
            expect,
            expect * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes a scenario into `dir` as `meta.json` plus raw little-endian
/// float arrays in the tensor linearization.
pub fn save_bundle(scn: &Scenario, dir: &Path, seed: u64, params: Option<&SynthParams>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (e, t1, t2) = scn.y.dims();
    let f = scn.graph.n_flows();
    let meta = BundleMeta {
        format_version: BUNDLE_FORMAT_VERSION.to_string(),
        seed,
        n_nodes: scn.graph.n_nodes,
        edges: scn.graph.edges.clone(),
        dims: BundleDims { e, f, t1, t2 },
        params: params.cloned(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).unwrap())?;
    write_f64_slice(&dir.join("Y.bin"), scn.y.data())?;
    write_f64_slice(&dir.join("O.bin"), scn.o.data())?;
    write_f64_slice(&dir.join("Z.bin"), scn.z.data())?;
    write_f64_slice(&dir.join("A.bin"), scn.a_true.data())?;
    write_f64_slice(&dir.join("N.bin"), scn.n_noise.data())?;
    write_f64_slice(&dir.join("R.bin"), scn.graph.routing.data())?;
    Ok(())
}

/// Loads a scenario bundle, validating array lengths against the metadata.
pub fn load_bundle(dir: &Path) -> Result<Scenario> {
    let meta_text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: BundleMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::format(format!("{}: bad meta.json: {e}", dir.display())))?;
    if meta.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported bundle format version {:?}",
            dir.display(),
            meta.format_version
        )));
    }
    let BundleDims { e, f, t1, t2 } = meta.dims;
    let link_len = e * t1 * t2;
    let flow_len = f * t1 * t2;
    let y = Tensor3::new((e, t1, t2), read_f64_slice(&dir.join("Y.bin"), link_len)?)?;
    let o = Tensor3::new((e, t1, t2), read_f64_slice(&dir.join("O.bin"), link_len)?)?;
    let z = Tensor3::new((f, t1, t2), read_f64_slice(&dir.join("Z.bin"), flow_len)?)?;
    let a = Tensor3::new((f, t1, t2), read_f64_slice(&dir.join("A.bin"), flow_len)?)?;
    let n = Tensor3::new((e, t1, t2), read_f64_slice(&dir.join("N.bin"), link_len)?)?;
    let routing = Matrix::new(e, f, read_f64_slice(&dir.join("R.bin"), e * f)?)?;
    let graph = RoutingGraph {
        n_nodes: meta.n_nodes,
        edges: meta.edges,
        routing,
    };
    Ok(Scenario {
        graph,
        z,
        a_true: a,
        n_noise: n,
        o,
        y,
    })
}
