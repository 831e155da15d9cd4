//! Submap-level Sim(3) pose graph with Huber-robust Levenberg–Marquardt.

use std::collections::VecDeque;
use std::fmt;
use std::ops::AddAssign;

use nalgebra::{DVector, SMatrix};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};
use crate::geometry::{Matrix7, Pose, Sim3, Sim3Tangent, Vector7};
use crate::metrics::Trajectory;
use crate::oracle::SubmapGeometry;
use crate::partition::Submap;
use crate::registration::{EdgeKind, Sim3Edge};

/// `r_ij = log(Ŝ_ij⁻¹ · X_i⁻¹ · X_j)`.
pub fn edge_residual(x_i: &Sim3, x_j: &Sim3, s_hat: &Sim3) -> Result<Sim3Tangent> {
    s_hat.inverse().compose(&x_i.inverse()).compose(x_j).log()
}

/// Residual with its Jacobians under left perturbations `X ← exp(δ)·X`.
pub fn edge_residual_jacobians(x_i: &Sim3, x_j: &Sim3, s_hat: &Sim3) -> Result<(Sim3Tangent, Matrix7, Matrix7)> {
    let a = s_hat.inverse().compose(&x_i.inverse());
    let r = a.compose(x_j).log()?;
    let j_j = r.left_jacobian_inverse()? * a.adjoint();
    Ok((r, -j_j, j_j))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HuberThreshold {
    /// Threshold on `√(w·‖r‖²)`.
    Fixed(f64),
    /// `k ·` MAD scale of the initial weighted residual norms, never below `floor`.
    MadScaled { k: f64, floor: f64 },
    Off,
}

impl Default for HuberThreshold {
    fn default() -> Self {
        HuberThreshold::Fixed(1.0)
    }
}

impl fmt::Display for HuberThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HuberThreshold::Fixed(d) => write!(f, "fixed:{d}"),
            HuberThreshold::MadScaled { k, floor } => write!(f, "mad:{k}:{floor}"),
            HuberThreshold::Off => f.write_str("off"),
        }
    }
}

impl std::str::FromStr for HuberThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |i: usize, default: f64| -> Result<f64> {
            match parts.get(i) {
                None => Ok(default),
                Some(v) => v.parse::<f64>().map_err(|e| Error::Config(format!("huber threshold `{s}`: {e}"))),
            }
        };
        let t = match parts[0] {
            "fixed" => HuberThreshold::Fixed(num(1, 1.0)?),
            "mad" => HuberThreshold::MadScaled { k: num(1, 1.345)?, floor: num(2, 0.1)? },
            "off" => HuberThreshold::Off,
            _ => return Err(Error::Config(format!("unknown huber threshold `{s}`"))),
        };
        match t {
            HuberThreshold::Fixed(v) | HuberThreshold::MadScaled { k: v, .. } if !(v > 0.0) => {
                Err(Error::Config(format!("huber threshold `{s}` must be positive")))
            }
            t => Ok(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmParams {
    pub max_iters: usize,
    pub rel_cost_tol: f64,
    pub step_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self { max_iters: 100, rel_cost_tol: 1e-10, step_tol: 1e-12, initial_lambda: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub huber_delta: Option<f64>,
    pub edge_residual_norms: Vec<f64>,
}

impl fmt::Display for OptimizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "initial_cost={}", self.initial_cost)?;
        writeln!(f, "final_cost={}", self.final_cost)?;
        writeln!(f, "iterations={}", self.iterations)?;
        writeln!(f, "converged={}", self.converged)?;
        match self.huber_delta {
            Some(d) => writeln!(f, "huber_delta={d}")?,
            None => writeln!(f, "huber_delta=off")?,
        }
        let max = self.edge_residual_norms.iter().copied().fold(0.0, f64::max);
        writeln!(f, "edges={}", self.edge_residual_norms.len())?;
        writeln!(f, "max_edge_residual={max}")
    }
}

/// Nodes are submap poses indexed by submap id; only accepted edges are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    nodes: Vec<Sim3>,
    edges: Vec<Sim3Edge>,
    gauge: usize,
}

impl PoseGraph {
    /// Builds the graph and initializes nodes by chaining odometry edges from the gauge.
    pub fn new(node_count: usize, edges: Vec<Sim3Edge>, gauge: usize) -> Result<Self> {
        if gauge >= node_count {
            return Err(Error::invalid(format!("gauge node {gauge} outside {node_count} nodes")));
        }
        let edges: Vec<Sim3Edge> = edges.into_iter().filter(|e| e.accepted).collect();
        for e in &edges {
            if e.from >= node_count || e.to >= node_count || e.from == e.to {
                return Err(Error::invalid(format!("edge {}->{} references invalid nodes", e.from, e.to)));
            }
            if !(e.inlier_ratio > 0.0 && e.inlier_ratio <= 1.0) {
                return Err(Error::invalid(format!("edge {}->{} has weight {}", e.from, e.to, e.inlier_ratio)));
            }
        }
        let mut graph = Self { nodes: vec![Sim3::identity(); node_count], edges, gauge };
        graph.check_connected()?;
        graph.nodes = graph.chain_initialization();
        Ok(graph)
    }

    /// Replaces the node values; the gauge node is reset to identity.
    pub fn with_initial_values(mut self, nodes: Vec<Sim3>) -> Result<Self> {
        if nodes.len() != self.nodes.len() {
            return Err(Error::invalid("initial value count does not match node count"));
        }
        self.nodes = nodes;
        self.nodes[self.gauge] = Sim3::identity();
        Ok(self)
    }

    pub fn nodes(&self) -> &[Sim3] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Sim3Edge] {
        &self.edges
    }

    pub fn gauge(&self) -> usize {
        self.gauge
    }

    fn neighbors(&self, kinds: &[EdgeKind]) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate().filter(|(_, e)| kinds.contains(&e.kind)) {
            adj[e.from].push((e.to, k));
            adj[e.to].push((e.from, k));
        }
        adj
    }

    fn check_connected(&self) -> Result<()> {
        let adj = self.neighbors(&[EdgeKind::Odometry, EdgeKind::Loop]);
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([self.gauge]);
        seen[self.gauge] = true;
        while let Some(n) = queue.pop_front() {
            for &(m, _) in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(n) => Err(Error::invalid(format!("node {n} is not connected to the gauge node {}", self.gauge))),
            None => Ok(()),
        }
    }

    /// Breadth-first composition over odometry edges, falling back to loop edges
    /// for nodes only they reach.
    fn chain_initialization(&self) -> Vec<Sim3> {
        let mut values: Vec<Option<Sim3>> = vec![None; self.nodes.len()];
        values[self.gauge] = Some(Sim3::identity());
        for kinds in [&[EdgeKind::Odometry][..], &[EdgeKind::Odometry, EdgeKind::Loop][..]] {
            let adj = self.neighbors(kinds);
            let mut queue: VecDeque<usize> = (0..self.nodes.len()).filter(|&n| values[n].is_some()).collect();
            while let Some(n) = queue.pop_front() {
                let x = values[n].unwrap();
                for &(m, k) in &adj[n] {
                    if values[m].is_some() {
                        continue;
                    }
                    let e = &self.edges[k];
                    values[m] = Some(if e.from == n { x.compose(&e.transform) } else { x.compose(&e.transform.inverse()) });
                    queue.push_back(m);
                }
            }
        }
        values.into_iter().map(|v| v.expect("graph is connected")).collect()
    }

    pub fn residual_norms(&self) -> Result<Vec<f64>> {
        self.edges
            .iter()
            .map(|e| edge_residual(&self.nodes[e.from], &self.nodes[e.to], &e.transform).map(|r| r.norm()))
            .collect()
    }

    fn weighted_sq(&self, nodes: &[Sim3]) -> Result<Vec<f64>> {
        self.edges
            .iter()
            .map(|e| {
                let r = edge_residual(&nodes[e.from], &nodes[e.to], &e.transform)?;
                Ok(e.inlier_ratio * r.0.norm_squared())
            })
            .collect()
    }
}

fn robust(e: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if e > d * d => 2.0 * d * e.sqrt() - d * d,
        _ => e,
    }
}

fn robust_weight(e: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if e > d * d => d / e.sqrt(),
        _ => 1.0,
    }
}

fn total_cost(sq: &[f64], delta: Option<f64>) -> f64 {
    sq.iter().map(|&e| robust(e, delta)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn resolve_delta(threshold: HuberThreshold, sq: &[f64]) -> Option<f64> {
    match threshold {
        HuberThreshold::Off => None,
        HuberThreshold::Fixed(d) => Some(d),
        HuberThreshold::MadScaled { k, floor } => {
            let norms: Vec<f64> = sq.iter().map(|e| e.sqrt()).collect();
            Some((k * 1.4826 * median(norms)).max(floor))
        }
    }
}

/// Variable slot of each node (the gauge has none).
fn variable_map(n: usize, gauge: usize) -> Vec<Option<usize>> {
    let mut next = 0;
    (0..n)
        .map(|i| {
            (i != gauge).then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

type Block = SMatrix<f64, 7, 7>;

struct Linearization {
    hessian: Vec<((usize, usize), Block)>,
    gradient: DVector<f64>,
}

fn linearize(graph: &PoseGraph, nodes: &[Sim3], slots: &[Option<usize>], delta: Option<f64>) -> Result<Linearization> {
    let dim = 7 * (nodes.len() - 1);
    let mut gradient = DVector::zeros(dim);
    let mut hessian = Vec::with_capacity(graph.edges.len() * 4 + nodes.len());
    for e in &graph.edges {
        let (r, j_i, j_j) = edge_residual_jacobians(&nodes[e.from], &nodes[e.to], &e.transform)?;
        let sq = e.inlier_ratio * r.0.norm_squared();
        let w = e.inlier_ratio * robust_weight(sq, delta);
        let blocks = [(slots[e.from], j_i), (slots[e.to], j_j)];
        for &(sa, ja) in &blocks {
            let Some(a) = sa else { continue };
            let g: Vector7 = ja.transpose() * r.0 * w;
            gradient.fixed_rows_mut::<7>(7 * a).add_assign(&g);
            for &(sb, jb) in &blocks {
                let Some(b) = sb else { continue };
                hessian.push(((a, b), ja.transpose() * jb * w));
            }
        }
    }
    Ok(Linearization { hessian, gradient })
}

fn solve_damped(lin: &Linearization, dim: usize, lambda: f64) -> Option<DVector<f64>> {
    let mut coo = CooMatrix::new(dim, dim);
    let mut diag = vec![0.0; dim];
    for &((a, b), ref blk) in &lin.hessian {
        for r in 0..7 {
            for c in 0..7 {
                let v = blk[(r, c)];
                if v != 0.0 {
                    coo.push(7 * a + r, 7 * b + c, v);
                }
                if a == b && r == c {
                    diag[7 * a + r] += v;
                }
            }
        }
    }
    for (i, d) in diag.iter().enumerate() {
        coo.push(i, i, lambda * d.max(1e-9));
    }
    let csc = CscMatrix::from(&coo);
    let chol = CscCholesky::factor(&csc).ok()?;
    let rhs = nalgebra::DMatrix::from_column_slice(dim, 1, (-&lin.gradient).as_slice());
    let sol = chol.solve(&rhs);
    let step = DVector::from_column_slice(sol.as_slice());
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn retract(nodes: &[Sim3], slots: &[Option<usize>], step: &DVector<f64>) -> Result<Vec<Sim3>> {
    nodes
        .iter()
        .zip(slots)
        .map(|(x, s)| match s {
            None => Ok(*x),
            Some(k) => {
                let d = Vector7::from_iterator(step.rows(7 * k, 7).iter().copied());
                Ok(Sim3::exp(&Sim3Tangent(d))?.compose(x))
            }
        })
        .collect()
}

/// Minimizes `Σ ρ(η‖r‖²)` over all non-gauge nodes.
pub fn optimize_graph(graph: &PoseGraph, threshold: HuberThreshold, lm: &LmParams) -> Result<(PoseGraph, OptimizeReport)> {
    let n = graph.nodes.len();
    let mut nodes = graph.nodes.clone();
    let initial_sq = graph.weighted_sq(&nodes)?;
    let delta = resolve_delta(threshold, &initial_sq);
    let initial_cost = total_cost(&initial_sq, delta);
    let diagnostic = |what: &str, cost: f64, it: usize| {
        Error::Numerical(format!("{what}: cost={cost} after {it} iterations (initial_cost={initial_cost})"))
    };
    if !initial_cost.is_finite() {
        return Err(diagnostic("non-finite initial cost", initial_cost, 0));
    }
    let mut cost = initial_cost;
    let mut iterations = 0;
    let mut converged = n == 1 || graph.edges.is_empty() || cost == 0.0;
    let slots = variable_map(n, graph.gauge);
    let dim = 7 * (n - 1);
    let mut lambda = lm.initial_lambda;

    while !converged && iterations < lm.max_iters {
        iterations += 1;
        let lin = linearize(graph, &nodes, &slots, delta)?;
        let mut accepted = false;
        while lambda < 1e16 {
            let Some(step) = solve_damped(&lin, dim, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = match retract(&nodes, &slots, &step) {
                Ok(c) => c,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let new_cost = match graph.weighted_sq(&candidate) {
                Ok(sq) => total_cost(&sq, delta),
                Err(Error::Domain(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if new_cost.is_nan() {
                return Err(diagnostic("non-finite cost", new_cost, iterations));
            }
            if new_cost <= cost {
                let change = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                nodes = candidate;
                cost = new_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if change < lm.rel_cost_tol || step.norm() < lm.step_tol || cost <= f64::MIN_POSITIVE {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping level decreases the cost: a numerical minimum.
            converged = true;
        }
    }

    let out = PoseGraph { nodes, edges: graph.edges.clone(), gauge: graph.gauge };
    let edge_residual_norms = out.residual_norms()?;
    Ok((
        out,
        OptimizeReport { initial_cost, final_cost: cost, iterations, converged, huber_delta: delta, edge_residual_norms },
    ))
}

/// `T_w = X_k · T_k` for every base keyframe, taking each frame from its owning submap.
pub fn compose_global_trajectory(
    graph: &PoseGraph,
    submaps: &[(Submap, SubmapGeometry)],
    timestamp: impl Fn(usize) -> f64,
) -> Result<(Vec<usize>, Trajectory)> {
    let mut frames: Vec<(usize, Pose)> = Vec::new();
    for (submap, geometry) in submaps {
        let x = graph.nodes.get(submap.id).ok_or_else(|| {
            Error::DataIntegrity(format!("submap {} has no graph node", submap.id))
        })?;
        let q = x.quaternion();
        for &frame in &submap.base.keyframes {
            let slot = geometry.slot(frame).ok_or_else(|| {
                Error::DataIntegrity(format!("keyframe {frame} has no local pose in submap {}", submap.id))
            })?;
            let local = &geometry.local_poses[slot];
            frames.push((frame, Pose::from_parts(x.apply(&local.translation.vector).into(), q * local.rotation)));
        }
    }
    frames.sort_by_key(|(f, _)| *f);
    if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DataIntegrity(format!("keyframe {} is owned by two submaps", w[0].0)));
    }
    let ids: Vec<usize> = frames.iter().map(|(f, _)| *f).collect();
    let stamps = ids.iter().map(|&f| timestamp(f)).collect();
    let trajectory = Trajectory::new(stamps, frames.into_iter().map(|(_, p)| p).collect())?;
    Ok((ids, trajectory))
}
