//! Ground-truth world: trajectory integration, per-frame scene sampling and flow
//! statistics through an ideal pinhole camera.

use nalgebra::{Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::motion::{FlowField, FrameFlowStats, MotionState};

use super::seed_for;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Constant-heading motion over `length` meters.
    Straight { length: f64, frames: usize },
    /// Constant-curvature motion; positive `sweep` turns left (counter-clockwise).
    Arc { radius: f64, sweep: f64, frames: usize },
    Stop { frames: usize },
}

impl Primitive {
    pub fn frames(&self) -> usize {
        match *self {
            Primitive::Straight { frames, .. } | Primitive::Arc { frames, .. } | Primitive::Stop { frames } => frames,
        }
    }

    pub fn state(&self) -> MotionState {
        match self {
            Primitive::Straight { .. } => MotionState::Linear,
            Primitive::Arc { .. } => MotionState::Turning,
            Primitive::Stop { .. } => MotionState::Static,
        }
    }

    /// Parses `straight:LEN:FRAMES`, `arc:RADIUS:SWEEP:FRAMES` or `stop:FRAMES`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("primitive `{s}` is missing a field")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("primitive `{s}`: {e}")))
        };
        let count = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("primitive `{s}` is missing a field")))?
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("primitive `{s}`: {e}")))
        };
        let (prim, arity) = match parts[0] {
            "straight" => (Primitive::Straight { length: num(1)?, frames: count(2)? }, 3),
            "arc" => (Primitive::Arc { radius: num(1)?, sweep: num(2)?, frames: count(3)? }, 4),
            "stop" => (Primitive::Stop { frames: count(1)? }, 2),
            other => return Err(Error::Config(format!("unknown trajectory primitive `{other}`"))),
        };
        if parts.len() != arity {
            return Err(Error::Config(format!("primitive `{s}` has {} fields, expected {arity}", parts.len())));
        }
        Ok(prim)
    }
}

impl std::fmt::Display for Primitive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Primitive::Straight { length, frames } => write!(f, "straight:{length}:{frames}"),
            Primitive::Arc { radius, sweep, frames } => write!(f, "arc:{radius}:{sweep}:{frames}"),
            Primitive::Stop { frames } => write!(f, "stop:{frames}"),
        }
    }
}

pub fn format_trajectory(prims: &[Primitive]) -> String {
    prims.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn parse_trajectory(s: &str) -> Result<Vec<Primitive>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(Primitive::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub trajectory: Vec<Primitive>,
    pub depth_min: f64,
    pub depth_max: f64,
    pub height: usize,
    pub width: usize,
    pub sky_band_rows: usize,
    /// Threshold used when recording raw static ratios.
    pub tau_flow: f64,
    /// Seconds between frames (timestamps are `index · frame_interval`).
    pub frame_interval: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trajectory: square_loop(),
            depth_min: 8.0,
            depth_max: 50.0,
            height: 96,
            width: 128,
            sky_band_rows: 8,
            tau_flow: 0.7,
            frame_interval: 0.1,
        }
    }
}

/// Four 250 m sides joined by 90° left arcs of radius 50 m, with one stop.
pub fn square_loop() -> Vec<Primitive> {
    let side = Primitive::Straight { length: 250.0, frames: 150 };
    let arc = Primitive::Arc { radius: 50.0, sweep: std::f64::consts::FRAC_PI_2, frames: 8 };
    vec![
        side,
        arc,
        Primitive::Straight { length: 125.0, frames: 75 },
        Primitive::Stop { frames: 20 },
        Primitive::Straight { length: 125.0, frames: 75 },
        arc,
        side,
        arc,
        side,
        arc,
    ]
}

/// A single straight run.
pub fn straight_line(length: f64, frames: usize) -> Vec<Primitive> {
    vec![Primitive::Straight { length, frames }]
}

/// Fixed synthetic intrinsics: focal length `W` pixels, principal point at the image
/// center. Only the world generator and the geometry oracle use them.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pinhole {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Pinhole {
    pub fn for_image(width: usize, height: usize) -> Self {
        Self { focal: width as f64, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }

    /// Ray through the center of pixel `(row, col)` with unit depth.
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        Vector3::new(
            (col as f64 + 0.5 - self.cx) / self.focal,
            (row as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        )
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.focal * p.x / p.z + self.cx, self.focal * p.y / p.z + self.cy)
    }
}

/// Camera axes (x right, y down, z forward) expressed in a z-up world for heading 0.
fn camera_base() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

fn camera_pose(position: Vector3<f64>, yaw: f64) -> Pose {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix() * camera_base();
    Pose::from_parts(
        Translation3::from(position),
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
    )
}

/// Heading of a camera pose in the horizontal plane.
pub fn heading(pose: &Pose) -> f64 {
    let forward = pose.rotation * Vector3::z();
    forward.y.atan2(forward.x)
}

pub struct GroundTruthWorld {
    config: WorldConfig,
    initial_pose: Pose,
    poses: Vec<Pose>,
    states: Vec<MotionState>,
    flow_stats: Vec<FrameFlowStats>,
}

/// Pseudo-depth multiplier for sky pixels.
pub(crate) const SKY_DEPTH_FACTOR: f64 = 1000.0;

impl GroundTruthWorld {
    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Camera-to-world pose of each frame.
    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn pose(&self, frame: usize) -> &Pose {
        &self.poses[frame]
    }

    pub fn gt_states(&self) -> &[MotionState] {
        &self.states
    }

    pub fn flow_stats(&self) -> &[FrameFlowStats] {
        &self.flow_stats
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 * self.config.frame_interval
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation.vector).collect()
    }

    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].translation.vector - w[0].translation.vector).norm())
            .sum()
    }

    pub(crate) fn pinhole(&self) -> Pinhole {
        Pinhole::for_image(self.config.width, self.config.height)
    }

    /// Per-pixel depth along the optical axis, row-major. Sky rows carry a large
    /// pseudo-depth.
    pub fn depths(&self, frame: usize) -> Vec<f64> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(c.seed, &[0x5ce9e, frame as u64]));
        let mut out = Vec::with_capacity(c.width * c.height);
        for row in 0..c.height {
            for _ in 0..c.width {
                let u: f64 = rng.random();
                out.push(if row < c.sky_band_rows {
                    c.depth_max * SKY_DEPTH_FACTOR
                } else {
                    c.depth_min + (c.depth_max - c.depth_min) * u
                });
            }
        }
        out
    }

    pub fn is_sky_pixel(&self, index: usize) -> bool {
        index / self.config.width < self.config.sky_band_rows
    }

    /// Scene points seen by `frame`, in that camera's coordinates.
    pub fn camera_points(&self, frame: usize) -> Vec<Vector3<f64>> {
        let cam = self.pinhole();
        let w = self.config.width;
        self.depths(frame)
            .into_iter()
            .enumerate()
            .map(|(i, d)| cam.ray(i / w, i % w) * d)
            .collect()
    }

    /// Scene points seen by `frame`, in world coordinates.
    pub fn gt_points(&self, frame: usize) -> Vec<Vector3<f64>> {
        let pose = self.poses[frame];
        self.camera_points(frame).iter().map(|p| pose * nalgebra::Point3::from(*p)).map(|p| p.coords).collect()
    }

    /// Flow from the previous frame (or the initial pose for frame 0) into `frame`.
    pub fn flow_field(&self, frame: usize) -> Result<FlowField> {
        let prev = if frame == 0 { self.initial_pose } else { self.poses[frame - 1] };
        let cam = self.pinhole();
        let w = self.config.width;
        let prev_inv = prev.inverse();
        let mut fx = Vec::with_capacity(w * self.config.height);
        let mut fy = Vec::with_capacity(w * self.config.height);
        for (i, x) in self.gt_points(frame).iter().enumerate() {
            let p = prev_inv * nalgebra::Point3::from(*x);
            if p.z <= 1e-3 {
                continue;
            }
            let (u0, v0) = cam.project(&p.coords);
            let (u1, v1) = (i % w, i / w);
            fx.push(u1 as f64 + 0.5 - u0);
            fy.push(v1 as f64 + 0.5 - v0);
        }
        let n = fx.len();
        FlowField::new(n, 1, fx, fy)
    }
}

pub fn generate_world(config: &WorldConfig) -> Result<GroundTruthWorld> {
    if config.width == 0 || config.height == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    if config.sky_band_rows >= config.height {
        return Err(Error::invalid("sky band must leave at least one ground row"));
    }
    if !(config.depth_min > 0.0 && config.depth_max > config.depth_min) {
        return Err(Error::invalid("depth range must satisfy 0 < min < max"));
    }
    if !(config.frame_interval > 0.0 && config.tau_flow > 0.0) {
        return Err(Error::invalid("frame_interval and tau_flow must be positive"));
    }
    if config.trajectory.is_empty() {
        return Err(Error::invalid("trajectory needs at least one primitive"));
    }
    let total: usize = config.trajectory.iter().map(Primitive::frames).sum();
    if total < 2 {
        return Err(Error::invalid("trajectory must span at least 2 frames"));
    }

    let mut position = Vector3::zeros();
    let mut yaw = 0.0f64;
    let initial_pose = camera_pose(position, yaw);
    let mut poses = Vec::with_capacity(total);
    let mut states = Vec::with_capacity(total);
    for prim in &config.trajectory {
        match *prim {
            Primitive::Straight { length, frames } => {
                if !(length > 0.0) {
                    return Err(Error::invalid("straight length must be positive"));
                }
                let step = length / frames as f64;
                for _ in 0..frames {
                    position += Vector3::new(yaw.cos(), yaw.sin(), 0.0) * step;
                    poses.push(camera_pose(position, yaw));
                }
            }
            Primitive::Arc { radius, sweep, frames } => {
                if !(radius > 0.0) {
                    return Err(Error::invalid("arc radius must be positive"));
                }
                let dyaw = sweep / frames as f64;
                let chord = 2.0 * radius * (dyaw.abs() / 2.0).sin();
                for _ in 0..frames {
                    let mid = yaw + dyaw / 2.0;
                    position += Vector3::new(mid.cos(), mid.sin(), 0.0) * chord;
                    yaw += dyaw;
                    poses.push(camera_pose(position, yaw));
                }
            }
            Primitive::Stop { frames } => {
                for _ in 0..frames {
                    poses.push(camera_pose(position, yaw));
                }
            }
        }
        states.extend(std::iter::repeat_n(prim.state(), prim.frames()));
    }

    let mut world = GroundTruthWorld {
        config: config.clone(),
        initial_pose,
        poses,
        states,
        flow_stats: Vec::new(),
    };
    let stats = (0..world.len())
        .map(|t| FrameFlowStats::from_flow(t, &world.flow_field(t)?, config.tau_flow))
        .collect::<Result<Vec<_>>>()?;
    world.flow_stats = stats;
    Ok(world)
}
