//! Per-frame motion statistics from dense optical flow, temporal smoothing, and the
//! three-way Static / Turning / Linear classifier.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Dense flow between two consecutive frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    fx: Vec<f64>,
    fy: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, fx: Vec<f64>, fy: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if fx.len() != n || fy.len() != n {
            return Err(Error::invalid(format!(
                "flow grids must have {n} entries, got fx={} fy={}",
                fx.len(),
                fy.len()
            )));
        }
        if fx.iter().chain(&fy).any(|v| !v.is_finite()) {
            return Err(Error::invalid("flow field has non-finite entries"));
        }
        Ok(Self { width, height, fx, fy })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.fx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fx.is_empty()
    }

    fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.fx.iter().zip(&self.fy).map(|(x, y)| x.hypot(*y))
    }

    fn ensure_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::invalid("empty flow field"))
        } else {
            Ok(())
        }
    }
}

/// Fraction of pixels whose flow magnitude is strictly below `tau_flow`.
pub fn static_ratio(flow: &FlowField, tau_flow: f64) -> Result<f64> {
    flow.ensure_non_empty()?;
    if !(tau_flow > 0.0) {
        return Err(Error::invalid("tau_flow must be positive"));
    }
    let below = flow.magnitudes().filter(|m| *m < tau_flow).count();
    Ok(below as f64 / flow.len() as f64)
}

/// Mean absolute horizontal flow, in pixels.
pub fn turning_score(flow: &FlowField) -> Result<f64> {
    flow.ensure_non_empty()?;
    Ok(flow.fx.iter().map(|v| v.abs()).sum::<f64>() / flow.len() as f64)
}

pub fn mean_flow_magnitude(flow: &FlowField) -> Result<f64> {
    flow.ensure_non_empty()?;
    Ok(flow.magnitudes().sum::<f64>() / flow.len() as f64)
}

/// One row of the flow-statistics file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameFlowStats {
    pub frame_index: usize,
    pub mean_flow_mag: f64,
    pub static_ratio_raw: f64,
    pub turning_score_raw: f64,
}

impl FrameFlowStats {
    pub fn from_flow(frame_index: usize, flow: &FlowField, tau_flow: f64) -> Result<Self> {
        Ok(Self {
            frame_index,
            mean_flow_mag: mean_flow_magnitude(flow)?,
            static_ratio_raw: static_ratio(flow, tau_flow)?,
            turning_score_raw: turning_score(flow)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionState {
    Static,
    Turning,
    Linear,
}

impl MotionState {
    pub fn letter(self) -> char {
        match self {
            MotionState::Static => 'S',
            MotionState::Turning => 'T',
            MotionState::Linear => 'L',
        }
    }
}

impl fmt::Display for MotionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MotionState::Static => "static",
            MotionState::Turning => "turning",
            MotionState::Linear => "linear",
        };
        f.write_str(name)
    }
}

impl FromStr for MotionState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "static" => Ok(MotionState::Static),
            "t" | "turning" => Ok(MotionState::Turning),
            "l" | "linear" => Ok(MotionState::Linear),
            other => Err(Error::invalid(format!("unknown motion state `{other}`"))),
        }
    }
}

/// Parses a compact state string such as `"LSSSSL"`.
pub fn parse_states(s: &str) -> Result<Vec<MotionState>> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_string().parse())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    /// Flow magnitude (px) below which a pixel counts as quasi-static.
    pub tau_flow: f64,
    /// Smoothed static ratio above which a frame is Static.
    pub tau_static: f64,
    /// Smoothed mean |f_x| (px) above which a non-static frame is Turning.
    pub tau_turn: f64,
    /// Gaussian smoothing std-dev, in frames.
    pub smoothing_sigma: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            tau_flow: 0.7,
            tau_static: 0.6,
            tau_turn: 5.0,
            smoothing_sigma: 2.0,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_flow > 0.0 && self.tau_static > 0.0 && self.tau_turn > 0.0) {
            return Err(Error::invalid("motion thresholds must be positive"));
        }
        if self.tau_static >= 1.0 {
            return Err(Error::invalid("tau_static must be < 1"));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::invalid("smoothing_sigma must be >= 0"));
        }
        Ok(())
    }

    /// Half-width of the smoothing kernel, `⌈3σ⌉`.
    pub fn transition_band(&self) -> usize {
        (3.0 * self.smoothing_sigma).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    pub static_ratio: Vec<f64>,
    pub turning_score: Vec<f64>,
    pub smoothed_static: Vec<f64>,
    pub smoothed_turn: Vec<f64>,
    pub states: Vec<MotionState>,
}

impl MotionProfile {
    pub fn from_stats(stats: &[FrameFlowStats], params: &MotionParams) -> Result<Self> {
        params.validate()?;
        let static_ratio: Vec<f64> = stats.iter().map(|s| s.static_ratio_raw).collect();
        let turning_score: Vec<f64> = stats.iter().map(|s| s.turning_score_raw).collect();
        if static_ratio.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("static ratios must lie in [0, 1]"));
        }
        if turning_score.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::invalid("turning scores must be non-negative"));
        }
        if stats.is_empty() {
            return Ok(Self {
                static_ratio,
                turning_score,
                smoothed_static: vec![],
                smoothed_turn: vec![],
                states: vec![],
            });
        }
        let smoothed_static = smooth_profile(&static_ratio, params.smoothing_sigma);
        let smoothed_turn = smooth_profile(&turning_score, params.smoothing_sigma);
        let states = classify_states(&smoothed_static, &smoothed_turn, params)?;
        Ok(Self {
            static_ratio,
            turning_score,
            smoothed_static,
            smoothed_turn,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Normalized Gaussian kernel truncated at `±⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Discrete Gaussian convolution with reflect padding; `sigma = 0` is the identity.
pub fn smooth_profile(series: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || series.is_empty() {
        return series.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    (0..series.len() as i64)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * series[reflect_index(t + j as i64 - radius, series.len())])
                .sum()
        })
        .collect()
}

/// Static if the smoothed static ratio exceeds `tau_static`, else Turning if the smoothed
/// turning score exceeds `tau_turn`, else Linear.
pub fn classify_states(
    smoothed_static: &[f64],
    smoothed_turn: &[f64],
    params: &MotionParams,
) -> Result<Vec<MotionState>> {
    if smoothed_static.len() != smoothed_turn.len() {
        return Err(Error::invalid("static and turning series differ in length"));
    }
    Ok(smoothed_static
        .iter()
        .zip(smoothed_turn)
        .map(|(&s, &m)| classify_frame(s, m, params))
        .collect())
}

pub fn classify_frame(smoothed_static: f64, smoothed_turn: f64, params: &MotionParams) -> MotionState {
    if smoothed_static > params.tau_static {
        MotionState::Static
    } else if smoothed_turn > params.tau_turn {
        MotionState::Turning
    } else {
        MotionState::Linear
    }
}

/// Parallax proxy between frames `from` and `to`: the sum of per-frame mean flow
/// magnitudes over `(from, to]`.
pub fn parallax_accumulate(flow_means: &[f64], from: usize, to: usize) -> Result<f64> {
    if from > to || to >= flow_means.len() {
        return Err(Error::invalid(format!(
            "parallax interval ({from}, {to}] outside sequence of {} frames",
            flow_means.len()
        )));
    }
    Ok(flow_means[from + 1..=to].iter().sum())
}
