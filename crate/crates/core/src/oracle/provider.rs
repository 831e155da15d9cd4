//! Geometry provider seam and the synthetic corrupting implementation.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Sim3, Sim3Tangent};

use super::seed_for;
use super::world::{GroundTruthWorld, SKY_DEPTH_FACTOR};

/// Relative error at which confidence halves.
const CONFIDENCE_ERROR_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextRole {
    Preceding,
    Succeeding,
    LoopHistorical,
}

impl ContextRole {
    fn code(self) -> u64 {
        match self {
            ContextRole::Preceding => 1,
            ContextRole::Succeeding => 2,
            ContextRole::LoopHistorical => 3,
        }
    }

    fn bias_sign(self) -> f64 {
        match self {
            ContextRole::Preceding => -1.0,
            ContextRole::Succeeding => 1.0,
            ContextRole::LoopHistorical => 0.0,
        }
    }
}

impl fmt::Display for ContextRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextRole::Preceding => "preceding",
            ContextRole::Succeeding => "succeeding",
            ContextRole::LoopHistorical => "loop_historical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    /// Standard deviation of the log-scale of each submap gauge.
    pub gauge_scale_sigma: f64,
    /// Maximum gauge rotation angle (radians).
    pub gauge_rot_max: f64,
    /// Per-axis standard deviation of the gauge translation (meters).
    pub gauge_trans_sigma: f64,
    /// Per-axis point noise standard deviation as a fraction of depth.
    pub point_noise_rel: f64,
    pub outlier_fraction: f64,
    pub context_bias_beta: f64,
    /// Log-normal jitter applied to confidences.
    pub confidence_noise: f64,
    /// How far a re-inferred historical submap's gauge is pulled toward the
    /// gauge of the contaminating current context (0 = none, 1 = fully).
    pub reinjection_contamination: f64,
}

impl CorruptionConfig {
    pub fn none() -> Self {
        Self {
            gauge_scale_sigma: 0.0,
            gauge_rot_max: 0.0,
            gauge_trans_sigma: 0.0,
            point_noise_rel: 0.0,
            outlier_fraction: 0.0,
            context_bias_beta: 0.0,
            confidence_noise: 0.0,
            reinjection_contamination: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gauge_scale_sigma", self.gauge_scale_sigma),
            ("gauge_rot_max", self.gauge_rot_max),
            ("gauge_trans_sigma", self.gauge_trans_sigma),
            ("point_noise_rel", self.point_noise_rel),
            ("outlier_fraction", self.outlier_fraction),
            ("context_bias_beta", self.context_bias_beta),
            ("confidence_noise", self.confidence_noise),
            ("reinjection_contamination", self.reinjection_contamination),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("corruption.{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.outlier_fraction >= 0.5 {
            return Err(Error::invalid("corruption.outlier_fraction must be below 0.5"));
        }
        if self.reinjection_contamination > 1.0 {
            return Err(Error::invalid("corruption.reinjection_contamination must be at most 1"));
        }
        Ok(())
    }
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            gauge_scale_sigma: 0.05,
            gauge_rot_max: 2f64.to_radians(),
            gauge_trans_sigma: 0.5,
            point_noise_rel: 0.01,
            outlier_fraction: 0.05,
            context_bias_beta: 0.05,
            confidence_noise: 0.1,
            reinjection_contamination: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRequest {
    pub submap_id: usize,
    /// Ordered frame ids; the first one defines the local frame.
    pub frames: Vec<usize>,
    pub role: ContextRole,
    /// Submap whose context leaks into a re-inferred historical submap.
    pub contaminated_by: Option<usize>,
}

impl InferenceRequest {
    pub fn new(submap_id: usize, frames: Vec<usize>, role: ContextRole) -> Self {
        Self { submap_id, frames, role, contaminated_by: None }
    }
}

/// Per-frame point maps, local poses, confidences and sky masks of one submap.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmapGeometry {
    pub submap_id: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<usize>,
    pub local_poses: Vec<Pose>,
    pub points: Vec<Vec<Vector3<f64>>>,
    pub confidence: Vec<Vec<f64>>,
    pub sky: Vec<Vec<bool>>,
}

impl SubmapGeometry {
    pub fn slot(&self, frame: usize) -> Option<usize> {
        self.frames.iter().position(|&f| f == frame)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.local_poses.len() != n || self.points.len() != n || self.confidence.len() != n || self.sky.len() != n {
            return Err(Error::DataIntegrity(format!("submap {} has mismatched per-frame arrays", self.submap_id)));
        }
        let hw = self.pixel_count();
        for i in 0..n {
            if self.points[i].len() != hw || self.confidence[i].len() != hw || self.sky[i].len() != hw {
                return Err(Error::DataIntegrity(format!(
                    "submap {} frame {} grid is not {}x{}",
                    self.submap_id, self.frames[i], self.height, self.width
                )));
            }
            let finite = self.points[i].iter().zip(&self.sky[i]).all(|(p, &s)| s || p.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::DataIntegrity(format!(
                    "submap {} frame {} has non-finite points",
                    self.submap_id, self.frames[i]
                )));
            }
        }
        Ok(())
    }
}

/// Maps an ordered frame set to submap-local geometry.
pub trait GeometryProvider: Sync {
    fn infer(&self, request: &InferenceRequest) -> Result<SubmapGeometry>;
}

pub struct SyntheticProvider<'w> {
    world: &'w GroundTruthWorld,
    corruption: CorruptionConfig,
    gauge_overrides: BTreeMap<usize, Sim3>,
    quantize_f32: bool,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl<'w> SyntheticProvider<'w> {
    pub fn new(world: &'w GroundTruthWorld, corruption: CorruptionConfig) -> Result<Self> {
        corruption.validate()?;
        Ok(Self { world, corruption, gauge_overrides: BTreeMap::new(), quantize_f32: false })
    }

    /// Pins the gauge of one submap instead of drawing it.
    pub fn with_gauge(mut self, submap_id: usize, gauge: Sim3) -> Self {
        self.gauge_overrides.insert(submap_id, gauge);
        self
    }

    /// Rounds emitted points and confidences to single precision, matching what a
    /// point-map container can hold.
    pub fn with_f32_output(mut self, on: bool) -> Self {
        self.quantize_f32 = on;
        self
    }

    pub fn corruption(&self) -> &CorruptionConfig {
        &self.corruption
    }

    /// The gauge drawn for a submap.
    pub fn gauge(&self, submap_id: usize) -> Sim3 {
        if let Some(g) = self.gauge_overrides.get(&submap_id) {
            return *g;
        }
        let c = &self.corruption;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.world.config().seed, &[0x9a09e, submap_id as u64]));
        let scale = (c.gauge_scale_sigma * gaussian(&mut rng)).exp();
        let axis = Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng));
        let angle = c.gauge_rot_max * rng.random::<f64>();
        let rotation = match Unit::try_new(axis, 1e-12) {
            Some(axis) => Rotation3::from_axis_angle(&axis, angle),
            None => Rotation3::identity(),
        };
        let t = Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * c.gauge_trans_sigma;
        Sim3::new(scale, rotation, t).expect("gauge parameters are finite")
    }

    fn effective_gauge(&self, request: &InferenceRequest) -> Result<Sim3> {
        let own = self.gauge(request.submap_id);
        match request.contaminated_by {
            Some(other) if self.corruption.reinjection_contamination > 0.0 => {
                let delta = own.inverse().compose(&self.gauge(other)).log()?;
                let step = Sim3::exp(&Sim3Tangent(delta.0 * self.corruption.reinjection_contamination))?;
                Ok(own.compose(&step))
            }
            _ => Ok(own),
        }
    }

    /// Like [`GeometryProvider::infer`], also returning per-frame outlier masks.
    pub fn infer_traced(&self, request: &InferenceRequest) -> Result<(SubmapGeometry, Vec<Vec<bool>>)> {
        let world = self.world;
        let n_frames = world.len();
        let Some(&origin) = request.frames.first() else {
            return Err(Error::invalid("inference request has no frames"));
        };
        for (i, &f) in request.frames.iter().enumerate() {
            if f >= n_frames {
                return Err(Error::invalid(format!("frame {f} is outside the world ({n_frames} frames)")));
            }
            if request.frames[..i].contains(&f) {
                return Err(Error::invalid(format!("frame {f} requested twice")));
            }
        }
        let cfg = world.config();
        let c = &self.corruption;
        let gauge = self.effective_gauge(request)?;
        let origin_inv = world.pose(origin).inverse();
        let cam = world.pinhole();
        let (w, h) = (cfg.width, cfg.height);
        let half_x = cfg.depth_max * cam.cx / cam.focal;
        let half_y = cfg.depth_max * cam.cy / cam.focal;
        let bias = request.role.bias_sign() * c.context_bias_beta;
        let source = request.contaminated_by.map_or(0, |s| s as u64 + 1);

        let mut geometry = SubmapGeometry {
            submap_id: request.submap_id,
            height: h,
            width: w,
            frames: request.frames.clone(),
            local_poses: Vec::with_capacity(request.frames.len()),
            points: Vec::with_capacity(request.frames.len()),
            confidence: Vec::with_capacity(request.frames.len()),
            sky: Vec::with_capacity(request.frames.len()),
        };
        let mut outliers = Vec::with_capacity(request.frames.len());

        for &frame in &request.frames {
            let local = origin_inv * world.pose(frame);
            let mut rng = ChaCha8Rng::seed_from_u64(seed_for(
                cfg.seed,
                &[0xc022, request.submap_id as u64, request.role.code(), source, frame as u64],
            ));
            let depths = world.depths(frame);
            let mut pts = Vec::with_capacity(w * h);
            let mut conf = Vec::with_capacity(w * h);
            let mut sky = Vec::with_capacity(w * h);
            let mut out = Vec::with_capacity(w * h);
            for (i, &d) in depths.iter().enumerate() {
                let ray = cam.ray(i / w, i % w);
                let truth = ray * d;
                let is_sky = world.is_sky_pixel(i);
                let (p, confidence, is_outlier) = if is_sky {
                    (ray * cfg.depth_max * SKY_DEPTH_FACTOR, 1.0, false)
                } else {
                    let mut p = truth;
                    if c.point_noise_rel > 0.0 {
                        let s = c.point_noise_rel * d;
                        p += Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * s;
                    }
                    if bias != 0.0 {
                        p *= 1.0 + bias * d / cfg.depth_max;
                    }
                    let is_outlier = c.outlier_fraction > 0.0 && rng.random::<f64>() < c.outlier_fraction;
                    if is_outlier {
                        p = Vector3::new(
                            rng.random_range(-half_x..=half_x),
                            rng.random_range(-half_y..=half_y),
                            rng.random_range(cfg.depth_min..=cfg.depth_max),
                        );
                    }
                    let rel_err = (p - truth).norm() / d;
                    let prior = 1.0 - 0.5 * d / cfg.depth_max;
                    let jitter = if c.confidence_noise > 0.0 { (c.confidence_noise * gaussian(&mut rng)).exp() } else { 1.0 };
                    (p, prior / (1.0 + rel_err / CONFIDENCE_ERROR_SCALE) * jitter, is_outlier)
                };
                let mut q = gauge.apply(&(local * Point3::from(p)).coords);
                let mut confidence = confidence;
                if self.quantize_f32 {
                    q = q.map(round_f32);
                    confidence = round_f32(confidence);
                }
                pts.push(q);
                conf.push(confidence);
                sky.push(is_sky);
                out.push(is_outlier);
            }
            let rotation = UnitQuaternion::from_rotation_matrix(&(gauge.rotation() * local.rotation.to_rotation_matrix()));
            let position = gauge.apply(&local.translation.vector);
            geometry.local_poses.push(Pose::from_parts(position.into(), rotation));
            geometry.points.push(pts);
            geometry.confidence.push(conf);
            geometry.sky.push(sky);
            outliers.push(out);
        }
        Ok((geometry, outliers))
    }
}

impl GeometryProvider for SyntheticProvider<'_> {
    fn infer(&self, request: &InferenceRequest) -> Result<SubmapGeometry> {
        self.infer_traced(request).map(|(g, _)| g)
    }
}
