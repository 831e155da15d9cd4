use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{front_end, geometry_requests, infer_all, Inputs, LoopSource, Mode, PipelineConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::oracle::{generate_world, ContextRole, GeometryProvider, InferenceRequest, SubmapGeometry, SyntheticProvider, WorldConfig};

/// File stem under which the geometry answering `request` is stored.
pub fn request_key(request: &InferenceRequest) -> String {
    let role = match request.role {
        ContextRole::Preceding => "prec",
        ContextRole::Succeeding => "succ",
        ContextRole::LoopHistorical => "hist",
    };
    match request.contaminated_by {
        Some(src) => format!("submap{:04}_{role}_from{src:04}", request.submap_id),
        None => format!("submap{:04}_{role}", request.submap_id),
    }
}

fn submap_id_of(key: &str) -> Option<usize> {
    key.strip_prefix("submap")?.get(..4)?.parse().ok()
}

/// Serves geometry previously written by [`generate`].
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    geometries: BTreeMap<String, SubmapGeometry>,
}

impl ReplayProvider {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut geometries = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.extension().and_then(|e| e.to_str()) != Some("pmap") {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else { continue };
            let id = submap_id_of(&key)
                .ok_or_else(|| Error::Data(format!("geometry file `{}` does not follow the naming scheme", path.display())))?;
            geometries.insert(key.clone(), io::read_geometry(dir, &key, id)?);
        }
        Ok(Self { geometries })
    }

    pub fn len(&self) -> usize {
        self.geometries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geometries.is_empty()
    }
}

impl GeometryProvider for ReplayProvider {
    fn infer(&self, request: &InferenceRequest) -> Result<SubmapGeometry> {
        let key = request_key(request);
        let g = self
            .geometries
            .get(&key)
            .ok_or_else(|| Error::DataIntegrity(format!("replay set has no geometry `{key}`")))?;
        if g.frames != request.frames {
            return Err(Error::DataIntegrity(format!(
                "geometry `{key}` covers frames {:?}, request wants {:?}",
                g.frames, request.frames
            )));
        }
        Ok(g.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub frames: usize,
    pub submaps: usize,
    pub geometry_files: usize,
    pub files: Vec<PathBuf>,
    /// Config that replays the written data.
    pub replay_config: PathBuf,
}

/// Renders a synthetic world to disk as a self-contained replay set.
pub fn generate(config: &PipelineConfig, out: &Path) -> Result<GenerateSummary> {
    config.validate()?;
    let world = generate_world(&WorldConfig { tau_flow: config.motion.tau_flow, ..config.world.clone() })?;
    let inputs = Inputs::from_world(&world)?;
    let mut times = Vec::new();
    let front = front_end(&inputs.stats, config, &inputs.loops, &mut times)?;
    let requests = geometry_requests(&front)?;
    let provider = SyntheticProvider::new(&world, config.corruption)?.with_f32_output(true);
    let geometries = infer_all(&provider, &requests, config.threads)?;

    let geo_dir = out.join("geometry");
    std::fs::create_dir_all(&geo_dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let p = out.join(name);
        io::write_text(&p, &contents)?;
        files.push(p);
        Ok(())
    };
    put("flow_stats.csv", io::write_flow_stats(&inputs.stats, &inputs.stamps)?)?;
    put("loop_candidates.csv", io::write_loop_candidates(&front.loop_candidates))?;
    put("partition.csv", io::write_partition(&front.submaps))?;
    let reference = inputs.reference.as_ref().expect("synthetic inputs carry ground truth");
    put("reference.tum", io::to_tum(reference))?;

    let mut replay = config.clone();
    replay.mode = Mode::Replay;
    replay.f32_geometry = true;
    replay.out_dir = None;
    replay.replay.flow_stats = Some("flow_stats.csv".into());
    replay.replay.geometry_dir = Some("geometry".into());
    replay.replay.loop_candidates =
        matches!(inputs.loops, LoopSource::Positions(_)).then(|| "loop_candidates.csv".into());
    replay.replay.reference = Some("reference.tum".into());
    put("replay.conf", replay.to_config_string())?;

    for (key, g) in &geometries {
        io::write_geometry(&geo_dir, key, g)?;
        files.push(geo_dir.join(format!("{key}.pmap")));
        files.push(geo_dir.join(format!("{key}.poses")));
    }
    Ok(GenerateSummary {
        frames: world.len(),
        submaps: front.submaps.len(),
        geometry_files: geometries.len(),
        replay_config: out.join("replay.conf"),
        files,
    })
}
