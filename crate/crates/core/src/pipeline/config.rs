//! Flat `section.key = value` pipeline configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::TrajectoryFormat;
use crate::metrics::DEFAULT_SEGMENT_LENGTHS;
use crate::motion::MotionParams;
use crate::oracle::{format_trajectory, parse_trajectory, CorruptionConfig, WorldConfig};
use crate::partition::{LoopReuseMode, PartitionParams};
use crate::posegraph::{HuberThreshold, LmParams};
use crate::registration::{HuberDelta, RegistrationParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Synthetic,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    Off,
    Unidirectional,
    Bidirectional,
}

impl LoopMode {
    pub fn reuse(self) -> Option<LoopReuseMode> {
        match self {
            LoopMode::Off => None,
            LoopMode::Unidirectional => Some(LoopReuseMode::Unidirectional),
            LoopMode::Bidirectional => Some(LoopReuseMode::Bidirectional),
        }
    }
}

impl FromStr for LoopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(LoopMode::Off),
            "uni" => Ok(LoopMode::Unidirectional),
            "bi" => Ok(LoopMode::Bidirectional),
            _ => Err(Error::Config(format!("unknown loop mode `{s}` (expected uni, bi or off)"))),
        }
    }
}

impl fmt::Display for LoopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopMode::Off => "off",
            LoopMode::Unidirectional => "uni",
            LoopMode::Bidirectional => "bi",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayInputs {
    pub flow_stats: Option<PathBuf>,
    pub geometry_dir: Option<PathBuf>,
    pub loop_candidates: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub loop_mode: LoopMode,
    /// Worker threads for geometry and registration (0 = all cores).
    pub threads: usize,
    /// Round synthetic geometry to single precision, as a point-map file would.
    pub f32_geometry: bool,
    pub world: WorldConfig,
    pub replay: ReplayInputs,
    pub motion: MotionParams,
    pub partition: PartitionParams,
    pub registration: RegistrationParams,
    pub graph_huber: HuberThreshold,
    pub lm: LmParams,
    pub corruption: CorruptionConfig,
    pub segment_lengths: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    pub format: TrajectoryFormat,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            loop_mode: LoopMode::Unidirectional,
            threads: 0,
            f32_geometry: false,
            world: WorldConfig::default(),
            replay: ReplayInputs::default(),
            motion: MotionParams::default(),
            partition: PartitionParams::default(),
            registration: RegistrationParams::default(),
            graph_huber: HuberThreshold::default(),
            lm: LmParams::default(),
            corruption: CorruptionConfig::default(),
            segment_lengths: DEFAULT_SEGMENT_LENGTHS.to_vec(),
            out_dir: None,
            format: TrajectoryFormat::Tum,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn path_opt(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.world;
        let m = &self.motion;
        let p = &self.partition;
        let r = &self.registration;
        let c = &self.corruption;
        vec![
            ("pipeline.mode", match self.mode { Mode::Synthetic => "synthetic".into(), Mode::Replay => "replay".into() }),
            ("pipeline.loop_mode", self.loop_mode.to_string()),
            ("pipeline.threads", self.threads.to_string()),
            ("pipeline.f32_geometry", self.f32_geometry.to_string()),
            ("output.dir", path_opt(&self.out_dir)),
            ("output.format", self.format.extension().into()),
            ("world.seed", w.seed.to_string()),
            ("world.trajectory", format_trajectory(&w.trajectory)),
            ("world.depth_min", w.depth_min.to_string()),
            ("world.depth_max", w.depth_max.to_string()),
            ("world.height", w.height.to_string()),
            ("world.width", w.width.to_string()),
            ("world.sky_band_rows", w.sky_band_rows.to_string()),
            ("world.frame_interval", w.frame_interval.to_string()),
            ("motion.tau_flow", m.tau_flow.to_string()),
            ("motion.tau_static", m.tau_static.to_string()),
            ("motion.tau_turn", m.tau_turn.to_string()),
            ("motion.smoothing_sigma", m.smoothing_sigma.to_string()),
            ("partition.tau_palx", p.tau_palx.to_string()),
            ("partition.n_max", p.n_max.to_string()),
            ("partition.n_ovlp", p.n_ovlp.to_string()),
            ("partition.omega", p.omega.to_string()),
            ("partition.loop_radius", p.loop_radius.to_string()),
            ("partition.loop_min_gap", p.loop_min_gap.to_string()),
            ("registration.tau_conf", r.tau_conf.to_string()),
            ("registration.tau_in", r.tau_in.to_string()),
            ("registration.anchor_window", r.anchor_window.to_string()),
            ("registration.huber", r.huber.to_string()),
            ("registration.max_iters", r.max_iters.to_string()),
            ("registration.inlier_sigmas", r.inlier_sigmas.to_string()),
            ("posegraph.huber", self.graph_huber.to_string()),
            ("posegraph.max_iters", self.lm.max_iters.to_string()),
            ("posegraph.rel_cost_tol", self.lm.rel_cost_tol.to_string()),
            ("posegraph.step_tol", self.lm.step_tol.to_string()),
            ("posegraph.initial_lambda", self.lm.initial_lambda.to_string()),
            ("corruption.gauge_scale_sigma", c.gauge_scale_sigma.to_string()),
            ("corruption.gauge_rot_max", c.gauge_rot_max.to_string()),
            ("corruption.gauge_trans_sigma", c.gauge_trans_sigma.to_string()),
            ("corruption.point_noise_rel", c.point_noise_rel.to_string()),
            ("corruption.outlier_fraction", c.outlier_fraction.to_string()),
            ("corruption.context_bias_beta", c.context_bias_beta.to_string()),
            ("corruption.confidence_noise", c.confidence_noise.to_string()),
            ("corruption.reinjection_contamination", c.reinjection_contamination.to_string()),
            ("replay.flow_stats", path_opt(&self.replay.flow_stats)),
            ("replay.geometry_dir", path_opt(&self.replay.geometry_dir)),
            ("replay.loop_candidates", path_opt(&self.replay.loop_candidates)),
            ("replay.reference", path_opt(&self.replay.reference)),
            (
                "eval.segment_lengths",
                self.segment_lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
            ),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "pipeline.mode" => {
                self.mode = match value {
                    "synthetic" => Mode::Synthetic,
                    "replay" => Mode::Replay,
                    _ => return Err(Error::Config(format!("{key}: expected synthetic or replay, got `{value}`"))),
                }
            }
            "pipeline.loop_mode" => self.loop_mode = value.parse()?,
            "pipeline.threads" => self.threads = num(key, value)?,
            "pipeline.f32_geometry" => self.f32_geometry = num(key, value)?,
            "output.dir" => self.out_dir = path(value),
            "output.format" => self.format = value.parse()?,
            "world.seed" => self.world.seed = num(key, value)?,
            "world.trajectory" => self.world.trajectory = parse_trajectory(value)?,
            "world.depth_min" => self.world.depth_min = num(key, value)?,
            "world.depth_max" => self.world.depth_max = num(key, value)?,
            "world.height" => self.world.height = num(key, value)?,
            "world.width" => self.world.width = num(key, value)?,
            "world.sky_band_rows" => self.world.sky_band_rows = num(key, value)?,
            "world.frame_interval" => self.world.frame_interval = num(key, value)?,
            "motion.tau_flow" => self.motion.tau_flow = num(key, value)?,
            "motion.tau_static" => self.motion.tau_static = num(key, value)?,
            "motion.tau_turn" => self.motion.tau_turn = num(key, value)?,
            "motion.smoothing_sigma" => self.motion.smoothing_sigma = num(key, value)?,
            "partition.tau_palx" => self.partition.tau_palx = num(key, value)?,
            "partition.n_max" => self.partition.n_max = num(key, value)?,
            "partition.n_ovlp" => self.partition.n_ovlp = num(key, value)?,
            "partition.omega" => self.partition.omega = num(key, value)?,
            "partition.loop_radius" => self.partition.loop_radius = num(key, value)?,
            "partition.loop_min_gap" => self.partition.loop_min_gap = num(key, value)?,
            "registration.tau_conf" => self.registration.tau_conf = num(key, value)?,
            "registration.tau_in" => self.registration.tau_in = num(key, value)?,
            "registration.anchor_window" => self.registration.anchor_window = num(key, value)?,
            "registration.huber" => self.registration.huber = value.parse::<HuberDelta>()?,
            "registration.max_iters" => self.registration.max_iters = num(key, value)?,
            "registration.inlier_sigmas" => self.registration.inlier_sigmas = num(key, value)?,
            "posegraph.huber" => self.graph_huber = value.parse()?,
            "posegraph.max_iters" => self.lm.max_iters = num(key, value)?,
            "posegraph.rel_cost_tol" => self.lm.rel_cost_tol = num(key, value)?,
            "posegraph.step_tol" => self.lm.step_tol = num(key, value)?,
            "posegraph.initial_lambda" => self.lm.initial_lambda = num(key, value)?,
            "corruption.gauge_scale_sigma" => self.corruption.gauge_scale_sigma = num(key, value)?,
            "corruption.gauge_rot_max" => self.corruption.gauge_rot_max = num(key, value)?,
            "corruption.gauge_trans_sigma" => self.corruption.gauge_trans_sigma = num(key, value)?,
            "corruption.point_noise_rel" => self.corruption.point_noise_rel = num(key, value)?,
            "corruption.outlier_fraction" => self.corruption.outlier_fraction = num(key, value)?,
            "corruption.context_bias_beta" => self.corruption.context_bias_beta = num(key, value)?,
            "corruption.confidence_noise" => self.corruption.confidence_noise = num(key, value)?,
            "corruption.reinjection_contamination" => self.corruption.reinjection_contamination = num(key, value)?,
            "replay.flow_stats" => self.replay.flow_stats = path(value),
            "replay.geometry_dir" => self.replay.geometry_dir = path(value),
            "replay.loop_candidates" => self.replay.loop_candidates = path(value),
            "replay.reference" => self.replay.reference = path(value),
            "eval.segment_lengths" => {
                self.segment_lengths = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply(text)?;
        Ok(config)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (line, content) in crate::io::content_lines(text) {
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse { line, message: format!("expected `section.key = value`, got `{content}`") });
            };
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        }
        Ok(())
    }

    /// Loads a file; relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut config.replay.flow_stats);
        fix(&mut config.replay.geometry_dir);
        fix(&mut config.replay.loop_candidates);
        fix(&mut config.replay.reference);
        fix(&mut config.out_dir);
        Ok(config)
    }

    pub fn to_config_string(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.partition.validate()?;
        self.registration.validate()?;
        self.corruption.validate()?;
        if self.lm.max_iters == 0 {
            return Err(Error::Config("posegraph.max_iters must be positive".into()));
        }
        if self.segment_lengths.is_empty() || self.segment_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("eval.segment_lengths must be a non-empty list of positive lengths".into()));
        }
        if self.mode == Mode::Replay && (self.replay.flow_stats.is_none() || self.replay.geometry_dir.is_none()) {
            return Err(Error::Config("replay mode needs replay.flow_stats and replay.geometry_dir".into()));
        }
        Ok(())
    }
}
