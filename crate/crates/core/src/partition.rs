//! Keyframe selection and motion-aware submap partitioning.
//!
//! Stage one drops redundant frames: inside static intervals only the frames next to a
//! motion transition (and the sequence ends) survive; dynamic frames are admitted once
//! the accumulated parallax since the last keyframe exceeds `tau_palx`. Stage two slices
//! the keyframe stream into base segments, keeping every turning run inside one
//! segment and cutting linear runs at `n_max` keyframes or right after a turn.
//! [`compose_submaps`] then attaches overlap and loop anchors.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::motion::{parallax_accumulate, MotionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopReuseMode {
    /// Historical frames are injected into the current submap only.
    Unidirectional,
    /// Experimental: current frames are also re-inferred in the historical context.
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionParams {
    pub tau_palx: f64,
    pub n_max: usize,
    pub n_ovlp: usize,
    pub omega: usize,
    pub loop_radius: f64,
    pub loop_min_gap: usize,
    pub loop_reuse_mode: LoopReuseMode,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            tau_palx: 15.0,
            n_max: 12,
            n_ovlp: 5,
            omega: 1,
            loop_radius: 10.0,
            loop_min_gap: 100,
            loop_reuse_mode: LoopReuseMode::Unidirectional,
        }
    }
}

impl PartitionParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 2 {
            return Err(Error::invalid("n_max must be >= 2"));
        }
        if self.n_ovlp < 1 || self.n_ovlp >= self.n_max {
            return Err(Error::invalid("n_ovlp must satisfy 1 <= n_ovlp < n_max"));
        }
        if self.omega < 1 {
            return Err(Error::invalid("omega must be >= 1"));
        }
        if !(self.tau_palx > 0.0) {
            return Err(Error::invalid("tau_palx must be positive"));
        }
        if !(self.loop_radius >= 0.0) {
            return Err(Error::invalid("loop_radius must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Turning,
    Linear,
    StaticBridge,
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegmentKind::Turning => "turning",
            SegmentKind::Linear => "linear",
            SegmentKind::StaticBridge => "static_bridge",
        })
    }
}

impl FromStr for SegmentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turning" => Ok(SegmentKind::Turning),
            "linear" => Ok(SegmentKind::Linear),
            "static_bridge" => Ok(SegmentKind::StaticBridge),
            other => Err(Error::invalid(format!("unknown segment kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseSegment {
    pub keyframes: Vec<usize>,
    pub kind: SegmentKind,
}

impl BaseSegment {
    fn from_keyframes(keyframes: Vec<usize>, states: &[MotionState]) -> Self {
        let kinds: Vec<MotionState> = keyframes.iter().map(|&k| states[k]).collect();
        let kind = if kinds.contains(&MotionState::Turning) {
            SegmentKind::Turning
        } else if kinds.iter().all(|s| *s == MotionState::Static) {
            SegmentKind::StaticBridge
        } else {
            SegmentKind::Linear
        };
        Self { keyframes, kind }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn first(&self) -> usize {
        self.keyframes[0]
    }

    pub fn last(&self) -> usize {
        *self.keyframes.last().unwrap()
    }
}

/// A base segment augmented with overlap and loop anchors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submap {
    pub id: usize,
    pub base: BaseSegment,
    /// Leading keyframes of the next segment, shared with the next submap.
    pub overlap_frames: Vec<usize>,
    /// Historical keyframes injected on loop detection.
    pub loop_frames: Vec<usize>,
    /// Bidirectional mode only: frames of this submap to be re-inferred inside the
    /// historical context of the loop frame.
    pub reinfer_in_history: Vec<usize>,
}

impl Submap {
    /// Frames in inference order: base, then overlap, then loop anchors.
    pub fn frames(&self) -> Vec<usize> {
        self.base
            .keyframes
            .iter()
            .chain(&self.overlap_frames)
            .chain(&self.loop_frames)
            .copied()
            .collect()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.base.keyframes.contains(&frame)
            || self.overlap_frames.contains(&frame)
            || self.loop_frames.contains(&frame)
    }
}

/// A non-fatal adjustment made while composing submaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompositionWarning {
    OverlapShrunk { submap: usize, requested: usize, available: usize },
    LoopFrameDropped { submap: usize, frame: usize, reason: &'static str },
}

/// True iff `s(t)` is Static and some non-static frame lies within `omega` frames.
pub fn is_static_boundary(t: usize, states: &[MotionState], omega: usize) -> bool {
    if t >= states.len() || states[t] != MotionState::Static {
        return false;
    }
    let lo = t.saturating_sub(omega);
    let hi = (t + omega).min(states.len() - 1);
    (lo..=hi).any(|u| states[u] != MotionState::Static)
}

/// Stage one: returns the selected keyframe indices in increasing order.
pub fn select_keyframes(states: &[MotionState], flow_means: &[f64], params: &PartitionParams) -> Result<Vec<usize>> {
    if states.len() != flow_means.len() {
        return Err(Error::invalid(format!(
            "{} motion states but {} flow means",
            states.len(),
            flow_means.len()
        )));
    }
    let n = states.len();
    let mut keyframes = Vec::new();
    let mut last = 0usize;
    for t in 0..n {
        let selected = if t == 0 {
            true
        } else if states[t] == MotionState::Static {
            is_static_boundary(t, states, params.omega) || t == n - 1
        } else {
            parallax_accumulate(flow_means, last, t)? > params.tau_palx
        };
        if selected {
            keyframes.push(t);
            // Static boundary keyframes also reset the parallax reference.
            last = t;
        }
    }
    Ok(keyframes)
}

/// Stage two: slices an already selected keyframe stream into base segments.
pub fn slice_keyframes(keyframes: &[usize], states: &[MotionState], params: &PartitionParams) -> Vec<BaseSegment> {
    let mut segments = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut prev_state: Option<MotionState> = None;
    for &k in keyframes {
        let state = states[k];
        if state != MotionState::Turning
            && !current.is_empty()
            && (current.len() >= params.n_max || prev_state == Some(MotionState::Turning))
        {
            segments.push(BaseSegment::from_keyframes(std::mem::take(&mut current), states));
        }
        current.push(k);
        prev_state = Some(state);
    }
    if !current.is_empty() {
        segments.push(BaseSegment::from_keyframes(current, states));
    }
    segments
}

/// Both partitioning stages over a sequence of `states.len()` frames.
pub fn partition_sequence(states: &[MotionState], flow_means: &[f64], params: &PartitionParams) -> Result<Vec<BaseSegment>> {
    params.validate()?;
    let keyframes = select_keyframes(states, flow_means, params)?;
    Ok(slice_keyframes(&keyframes, states, params))
}

/// A loop retrieval result for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopHit {
    pub historical_keyframe: usize,
    /// The keyframe of the current segment whose query produced the hit.
    pub query_keyframe: usize,
}

/// Attaches overlap anchors (first `n_ovlp` keyframes of the next segment) and loop
/// anchors to each segment.
pub fn compose_submaps(
    segments: &[BaseSegment],
    params: &PartitionParams,
    loop_hits: &BTreeMap<usize, LoopHit>,
) -> Result<(Vec<Submap>, Vec<CompositionWarning>)> {
    for w in segments.windows(2) {
        if w[0].is_empty() || w[1].is_empty() || w[0].last() >= w[1].first() {
            return Err(Error::invalid("segments must be non-empty, ordered and disjoint"));
        }
    }
    let mut warnings = Vec::new();
    let mut submaps: Vec<Submap> = Vec::with_capacity(segments.len());
    for (k, segment) in segments.iter().enumerate() {
        let overlap_frames = match segments.get(k + 1) {
            Some(next) => {
                let available = next.len().min(params.n_ovlp);
                if available < params.n_ovlp {
                    warnings.push(CompositionWarning::OverlapShrunk {
                        submap: k,
                        requested: params.n_ovlp,
                        available,
                    });
                }
                next.keyframes[..available].to_vec()
            }
            None => Vec::new(),
        };
        submaps.push(Submap {
            id: k,
            base: segment.clone(),
            overlap_frames,
            loop_frames: Vec::new(),
            reinfer_in_history: Vec::new(),
        });
    }

    for (&k, hit) in loop_hits {
        let Some(submap) = submaps.get(k) else {
            return Err(Error::invalid(format!("loop hit for unknown segment {k}")));
        };
        let h = hit.historical_keyframe;
        let reason = if h >= submap.base.first() {
            Some("historical frame does not precede the segment")
        } else if k > 0 && submaps[k - 1].contains(h) {
            Some("historical frame already shared with the previous submap")
        } else if submaps.get(k + 1).is_some_and(|next| next.contains(h)) {
            Some("historical frame already shared with the next submap")
        } else {
            None
        };
        if let Some(reason) = reason {
            warnings.push(CompositionWarning::LoopFrameDropped { submap: k, frame: h, reason });
            continue;
        }
        let submap = &mut submaps[k];
        submap.loop_frames.push(h);
        if params.loop_reuse_mode == LoopReuseMode::Bidirectional {
            submap.reinfer_in_history.push(hit.query_keyframe);
        }
    }
    Ok((submaps, warnings))
}

/// Ground-truth-proximity loop retrieval: the closest historical keyframe within
/// `loop_radius` whose frame gap exceeds `loop_min_gap`. Ties go to the smaller index.
pub fn retrieve_loop_candidates(
    current_frame: usize,
    current_position: &Vector3<f64>,
    history: &[(usize, Vector3<f64>)],
    params: &PartitionParams,
) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &(frame, position) in history {
        if frame >= current_frame || current_frame - frame <= params.loop_min_gap {
            continue;
        }
        let d = (position - current_position).norm();
        if !(d < params.loop_radius) {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bf)) => d < bd || (d == bd && frame < bf),
        };
        if better {
            best = Some((d, frame));
        }
    }
    best.map(|(_, f)| f)
}
