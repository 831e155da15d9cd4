//! File formats: trajectories, point-map containers and CSV reports.

mod pmap;
mod tables;
mod trajectory;

pub use pmap::{read_pmap, write_pmap, PmapFrame, PointMapContainer, PMAP_VERSION};
pub use tables::{
    read_edges, read_flow_stats, read_geometry, read_loop_candidates, read_pose_sidecar, write_edges, write_flow_stats,
    write_geometry, write_graph, write_loop_candidates, write_partition, write_pose_sidecar, LoopCandidate,
};
pub use trajectory::{load_trajectory, parse_kitti, parse_tum, save_trajectory, to_kitti, to_tum, TrajectoryFormat};

use std::path::Path;

use crate::error::Result;

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

pub(crate) fn parse_field<T: std::str::FromStr>(token: Option<&str>, line: usize, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let token = token.ok_or_else(|| crate::Error::Parse { line, message: format!("missing {what}") })?;
    token
        .trim()
        .parse::<T>()
        .map_err(|e| crate::Error::Parse { line, message: format!("bad {what} `{token}`: {e}") })
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

