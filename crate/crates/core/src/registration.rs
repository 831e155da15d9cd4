//! Anchor-driven Sim(3) registration between submaps using pixel-indexed
//! correspondences and Huber IRLS.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{umeyama, weighted_umeyama, Sim3};
use crate::oracle::SubmapGeometry;

/// Consistency factor turning a median absolute residual into a Gaussian sigma.
const MAD_TO_SIGMA: f64 = 1.4826;
/// Residual magnitude, relative to the point spread, treated as exact agreement.
const EXACT_FIT_REL: f64 = 1e-9;
pub const MIN_CORRESPONDENCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnchorKind {
    Overlap,
    Loop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSpec {
    pub kind: AnchorKind,
    pub frames: Vec<usize>,
}

/// The `window` overlap frames centered on the (lower) midpoint, clipped to the overlap.
pub fn select_overlap_anchor(overlap: &[usize], window: usize) -> Result<AnchorSpec> {
    if overlap.is_empty() {
        return Err(Error::MissingAnchor("overlap window is empty".into()));
    }
    if window == 0 {
        return Err(Error::invalid("anchor window must be at least 1"));
    }
    let center = (overlap.len() as isize - 1) / 2;
    let lo = center - (window as isize - 1) / 2;
    let hi = lo + window as isize;
    let lo = lo.max(0) as usize;
    let hi = (hi.min(overlap.len() as isize)) as usize;
    Ok(AnchorSpec { kind: AnchorKind::Overlap, frames: overlap[lo..hi].to_vec() })
}

pub fn loop_anchor(frames: Vec<usize>) -> Result<AnchorSpec> {
    if frames.is_empty() {
        return Err(Error::MissingAnchor("loop anchor has no frame".into()));
    }
    Ok(AnchorSpec { kind: AnchorKind::Loop, frames })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    pub valid: Vec<bool>,
    pub count: usize,
}

/// Lower-interpolated quantile of an unsorted sample.
pub fn lower_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(q * (v.len() - 1) as f64).floor() as usize])
}

/// Pixels whose joint confidence `min(C_i, C_j)` strictly exceeds its `tau_conf`
/// quantile over non-sky pixels, excluding sky.
pub fn build_valid_mask(conf_i: &[f64], conf_j: &[f64], sky: &[bool], tau_conf: f64) -> Result<ValidMask> {
    if conf_i.len() != conf_j.len() || conf_i.len() != sky.len() {
        return Err(Error::invalid("confidence and sky grids must share dimensions"));
    }
    if !(tau_conf > 0.0 && tau_conf < 1.0) {
        return Err(Error::invalid("tau_conf must lie in (0, 1)"));
    }
    let joint: Vec<f64> = conf_i.iter().zip(conf_j).map(|(a, b)| a.min(*b)).collect();
    let ground: Vec<f64> = joint.iter().zip(sky).filter(|(_, &s)| !s).map(|(&m, _)| m).collect();
    let Some(threshold) = lower_quantile(&ground, tau_conf) else {
        return Ok(ValidMask { valid: vec![false; joint.len()], count: 0 });
    };
    let valid: Vec<bool> = joint.iter().zip(sky).map(|(&m, &s)| !s && m > threshold).collect();
    let count = valid.iter().filter(|&&v| v).count();
    Ok(ValidMask { valid, count })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HuberDelta {
    /// `δ = k · σ̂` with σ̂ the MAD scale of the current residuals.
    MadScaled { k: f64 },
    Fixed(f64),
}

impl Default for HuberDelta {
    fn default() -> Self {
        HuberDelta::MadScaled { k: 1.345 }
    }
}

impl fmt::Display for HuberDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HuberDelta::MadScaled { k } => write!(f, "mad:{k}"),
            HuberDelta::Fixed(d) => write!(f, "fixed:{d}"),
        }
    }
}

impl FromStr for HuberDelta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').unwrap_or((s, ""));
        let parse = |v: &str, default: f64| -> Result<f64> {
            if v.is_empty() {
                return Ok(default);
            }
            v.parse::<f64>().map_err(|e| Error::Config(format!("huber mode `{s}`: {e}")))
        };
        let mode = match kind.trim() {
            "mad" => HuberDelta::MadScaled { k: parse(value.trim(), 1.345)? },
            "fixed" => HuberDelta::Fixed(parse(value.trim(), 1.0)?),
            _ => return Err(Error::Config(format!("unknown huber mode `{s}` (expected mad[:k] or fixed:delta)"))),
        };
        match mode {
            HuberDelta::MadScaled { k: v } | HuberDelta::Fixed(v) if !(v > 0.0 && v.is_finite()) => {
                Err(Error::Config(format!("huber parameter must be positive, got {v}")))
            }
            m => Ok(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    pub tau_conf: f64,
    pub tau_in: f64,
    pub anchor_window: usize,
    pub huber: HuberDelta,
    pub max_iters: usize,
    /// Residual cut, in robust sigmas, for the inlier ratio.
    pub inlier_sigmas: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self { tau_conf: 0.5, tau_in: 0.5, anchor_window: 3, huber: HuberDelta::default(), max_iters: 20, inlier_sigmas: 2.5 }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_conf > 0.0 && self.tau_conf < 1.0) {
            return Err(Error::invalid("registration.tau_conf must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau_in) {
            return Err(Error::invalid("registration.tau_in must lie in [0, 1]"));
        }
        if self.anchor_window == 0 || self.max_iters == 0 {
            return Err(Error::invalid("registration.anchor_window and max_iters must be positive"));
        }
        if !(self.inlier_sigmas > 0.0) {
            return Err(Error::invalid("registration.inlier_sigmas must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit {
    /// Maps source points onto destination points.
    pub transform: Sim3,
    pub inlier_ratio: f64,
    /// Closed-form solves performed, including the unweighted initialization.
    pub iterations: usize,
    /// Huber cost after each solve.
    pub cost_history: Vec<f64>,
    /// Correspondence residual evaluations.
    pub operations: usize,
}

fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if v.len() % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn spread(points: &[Vector3<f64>]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt()
}

/// Huber-IRLS similarity fit of `src` onto `dst` over explicit correspondences.
pub fn robust_sim3(src: &[Vector3<f64>], dst: &[Vector3<f64>], huber_delta: HuberDelta, max_iters: usize) -> Result<RobustFit> {
    robust_sim3_with_cut(src, dst, huber_delta, max_iters, 2.5)
}

pub fn robust_sim3_with_cut(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    huber_delta: HuberDelta,
    max_iters: usize,
    inlier_sigmas: f64,
) -> Result<RobustFit> {
    if src.len() != dst.len() {
        return Err(Error::invalid("correspondence sets differ in length"));
    }
    if src.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences { needed: MIN_CORRESPONDENCES, got: src.len() });
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be positive"));
    }
    let n = src.len();
    let exact = EXACT_FIT_REL * spread(dst).max(f64::MIN_POSITIVE);
    let mut operations = 0usize;
    let mut residuals = |t: &Sim3, out: &mut Vec<f64>| {
        out.clear();
        out.extend(src.iter().zip(dst).map(|(x, y)| (t.apply(x) - y).norm()));
        operations += n;
    };
    let delta_for = |r: &[f64], previous: f64| -> f64 {
        match huber_delta {
            HuberDelta::Fixed(d) => d,
            HuberDelta::MadScaled { k } => (k * MAD_TO_SIGMA * median(r)).max(exact).min(previous),
        }
    };
    let cost_of = |r: &[f64], delta: f64| r.iter().map(|&v| huber(v, delta)).sum::<f64>();

    let mut transform = umeyama(src, dst)?;
    let mut r = Vec::with_capacity(n);
    residuals(&transform, &mut r);
    let mut delta = delta_for(&r, f64::INFINITY);
    let mut cost = cost_of(&r, delta);
    let mut history = vec![cost];
    let mut iterations = 1;
    let converged_exactly = |r: &[f64]| r.iter().all(|&v| v <= exact);

    let mut trial = Vec::with_capacity(n);
    while iterations < max_iters && !converged_exactly(&r) {
        let weights: Vec<f64> = r.iter().map(|&v| if v <= delta { 1.0 } else { delta / v }).collect();
        let candidate = weighted_umeyama(src, dst, &weights)?;
        iterations += 1;
        residuals(&candidate, &mut trial);
        let candidate_cost = cost_of(&trial, delta);
        if candidate_cost > cost {
            break;
        }
        transform = candidate;
        std::mem::swap(&mut r, &mut trial);
        delta = delta_for(&r, delta);
        let next = cost_of(&r, delta);
        history.push(next);
        let change = (cost - next) / cost.max(f64::MIN_POSITIVE);
        cost = next;
        if change < 1e-10 {
            break;
        }
    }

    let sigma = MAD_TO_SIGMA * median(&r);
    let cut = (inlier_sigmas * sigma).max(exact);
    let inliers = r.iter().filter(|&&v| v < cut || v <= exact).count();
    Ok(RobustFit {
        transform,
        inlier_ratio: inliers as f64 / n as f64,
        iterations,
        cost_history: history,
        operations,
    })
}

/// Gathers the masked pixel pairs of two point grids.
pub fn masked_pairs(
    points_src: &[Vector3<f64>],
    points_dst: &[Vector3<f64>],
    mask: &ValidMask,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    if points_src.len() != mask.valid.len() || points_dst.len() != mask.valid.len() {
        return Err(Error::invalid("point grids and mask must share dimensions"));
    }
    let mut src = Vec::with_capacity(mask.count);
    let mut dst = Vec::with_capacity(mask.count);
    for (i, _) in mask.valid.iter().enumerate().filter(|(_, &v)| v) {
        let (a, b) = (points_src[i], points_dst[i]);
        if !(a.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("non-finite point at valid pixel {i}")));
        }
        src.push(a);
        dst.push(b);
    }
    Ok((src, dst))
}

/// Robust fit of `points_i` onto `points_j` (`s·R·x_i + t ≈ x_j`) over masked pixels.
pub fn estimate_robust_sim3(
    points_i: &[Vector3<f64>],
    points_j: &[Vector3<f64>],
    mask: &ValidMask,
    huber_delta: HuberDelta,
    max_iters: usize,
) -> Result<RobustFit> {
    if mask.count < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences { needed: MIN_CORRESPONDENCES, got: mask.count });
    }
    let (src, dst) = masked_pairs(points_i, points_j, mask)?;
    robust_sim3(&src, &dst, huber_delta, max_iters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Odometry => "odometry",
            EdgeKind::Loop => "loop",
        })
    }
}

impl FromStr for EdgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "odometry" => Ok(EdgeKind::Odometry),
            "loop" => Ok(EdgeKind::Loop),
            _ => Err(Error::Data(format!("unknown edge kind `{s}`"))),
        }
    }
}

/// Relative constraint `Ŝ_ij` mapping submap-`j` local coordinates into submap `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sim3Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub transform: Sim3,
    pub inlier_ratio: f64,
    pub accepted: bool,
}

pub fn verify_constraint(edge: Sim3Edge, tau_in: f64) -> Sim3Edge {
    Sim3Edge { accepted: edge.inlier_ratio >= tau_in, ..edge }
}

/// Registers two submap geometries on shared anchor frames, pooling all anchor
/// pixels into one robust problem.
pub fn register_submaps(
    geom_i: &SubmapGeometry,
    geom_j: &SubmapGeometry,
    anchor: &AnchorSpec,
    params: &RegistrationParams,
) -> Result<(Sim3Edge, RobustFit)> {
    if geom_i.pixel_count() != geom_j.pixel_count() {
        return Err(Error::invalid("submap grids differ in size"));
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for &frame in &anchor.frames {
        let (Some(a), Some(b)) = (geom_i.slot(frame), geom_j.slot(frame)) else {
            return Err(Error::MissingAnchor(format!(
                "frame {frame} is not shared by submaps {} and {}",
                geom_i.submap_id, geom_j.submap_id
            )));
        };
        let sky: Vec<bool> = geom_i.sky[a].iter().zip(&geom_j.sky[b]).map(|(x, y)| *x || *y).collect();
        let mask = build_valid_mask(&geom_i.confidence[a], &geom_j.confidence[b], &sky, params.tau_conf)?;
        let (s, d) = masked_pairs(&geom_j.points[b], &geom_i.points[a], &mask)?;
        src.extend(s);
        dst.extend(d);
    }
    if src.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences { needed: MIN_CORRESPONDENCES, got: src.len() });
    }
    let fit = robust_sim3_with_cut(&src, &dst, params.huber, params.max_iters, params.inlier_sigmas)?;
    let kind = match anchor.kind {
        AnchorKind::Overlap => EdgeKind::Odometry,
        AnchorKind::Loop => EdgeKind::Loop,
    };
    let edge = Sim3Edge {
        from: geom_i.submap_id,
        to: geom_j.submap_id,
        kind,
        transform: fit.transform,
        inlier_ratio: fit.inlier_ratio,
        accepted: false,
    };
    Ok((verify_constraint(edge, params.tau_in), fit))
}
