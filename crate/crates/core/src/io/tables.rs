use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::pmap::{read_pmap, write_pmap, PmapFrame, PointMapContainer};
use super::trajectory::unit_quaternion;
use super::{content_lines, parse_field};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Sim3};
use crate::motion::FrameFlowStats;
use crate::oracle::SubmapGeometry;
use crate::partition::Submap;
use crate::registration::Sim3Edge;

const FLOW_HEADER: &str = "frame,timestamp,mean_flow_mag,static_ratio_raw,turning_score_raw";
const PARTITION_HEADER: &str = "submap_id,kind,first_kf,last_kf,n_keyframes,n_overlap,loop_frame_or_-1";
const EDGE_HEADER: &str = "from,to,kind,s,qx,qy,qz,qw,tx,ty,tz,inlier_ratio,accepted";
const GRAPH_HEADER: &str = "submap_id,s,qx,qy,qz,qw,tx,ty,tz";
const LOOP_HEADER: &str = "segment,historical_keyframe,query_keyframe";

/// Data rows of a CSV with a mandatory header.
fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((line, h)) => return Err(Error::Parse { line, message: format!("expected header `{header}`, got `{h}`") }),
        None => return Err(Error::Parse { line: 1, message: format!("missing header `{header}`") }),
    }
    let columns = header.split(',').count();
    lines
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != columns {
                return Err(Error::Parse { line, message: format!("expected {columns} columns, got {}", fields.len()) });
            }
            Ok((line, fields))
        })
        .collect()
}

pub fn write_flow_stats(stats: &[FrameFlowStats], stamps: &[f64]) -> Result<String> {
    if stats.len() != stamps.len() {
        return Err(Error::invalid("flow statistics and timestamps differ in length"));
    }
    let mut out = format!("{FLOW_HEADER}\n");
    for (s, t) in stats.iter().zip(stamps) {
        writeln!(out, "{},{t},{},{},{}", s.frame_index, s.mean_flow_mag, s.static_ratio_raw, s.turning_score_raw).unwrap();
    }
    Ok(out)
}

pub fn read_flow_stats(text: &str) -> Result<(Vec<FrameFlowStats>, Vec<f64>)> {
    let mut stats = Vec::new();
    let mut stamps = Vec::new();
    for (line, f) in csv_rows(text, FLOW_HEADER)? {
        let frame_index: usize = parse_field(Some(f[0]), line, "frame")?;
        if frame_index != stats.len() {
            return Err(Error::Parse { line, message: format!("expected frame {}, got {frame_index}", stats.len()) });
        }
        stamps.push(parse_field(Some(f[1]), line, "timestamp")?);
        stats.push(FrameFlowStats {
            frame_index,
            mean_flow_mag: parse_field(Some(f[2]), line, "mean_flow_mag")?,
            static_ratio_raw: parse_field(Some(f[3]), line, "static_ratio_raw")?,
            turning_score_raw: parse_field(Some(f[4]), line, "turning_score_raw")?,
        });
    }
    Ok((stats, stamps))
}

pub fn write_partition(submaps: &[Submap]) -> String {
    let mut out = format!("{PARTITION_HEADER}\n");
    for s in submaps {
        let loop_frame = s.loop_frames.first().map_or(-1, |&f| f as i64);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.id,
            s.base.kind,
            s.base.first(),
            s.base.last(),
            s.base.len(),
            s.overlap_frames.len(),
            loop_frame
        )
        .unwrap();
    }
    out
}

fn sim3_fields(t: &Sim3) -> String {
    let q = t.quaternion();
    let v = t.translation();
    format!("{},{},{},{},{},{},{},{}", t.scale(), q.i, q.j, q.k, q.w, v.x, v.y, v.z)
}

fn parse_sim3(f: &[&str], line: usize) -> Result<Sim3> {
    let v: Vec<f64> = f.iter().map(|t| parse_field(Some(t), line, "transform field")).collect::<Result<_>>()?;
    let q = unit_quaternion(v[1], v[2], v[3], v[4], line)?;
    Sim3::from_quaternion(v[0], q, Vector3::new(v[5], v[6], v[7]))
        .map_err(|e| Error::Parse { line, message: e.to_string() })
}

pub fn write_edges(edges: &[Sim3Edge]) -> String {
    let mut out = format!("{EDGE_HEADER}\n");
    for e in edges {
        writeln!(out, "{},{},{},{},{},{}", e.from, e.to, e.kind, sim3_fields(&e.transform), e.inlier_ratio, e.accepted).unwrap();
    }
    out
}

pub fn read_edges(text: &str) -> Result<Vec<Sim3Edge>> {
    csv_rows(text, EDGE_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(Sim3Edge {
                from: parse_field(Some(f[0]), line, "from")?,
                to: parse_field(Some(f[1]), line, "to")?,
                kind: f[2].parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?,
                transform: parse_sim3(&f[3..11], line)?,
                inlier_ratio: parse_field(Some(f[11]), line, "inlier_ratio")?,
                accepted: parse_field(Some(f[12]), line, "accepted")?,
            })
        })
        .collect()
}

pub fn write_graph(nodes: &[Sim3]) -> String {
    let mut out = format!("{GRAPH_HEADER}\n");
    for (i, n) in nodes.iter().enumerate() {
        writeln!(out, "{i},{}", sim3_fields(n)).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopCandidate {
    pub segment: usize,
    pub historical_keyframe: usize,
    pub query_keyframe: usize,
}

pub fn write_loop_candidates(candidates: &[LoopCandidate]) -> String {
    let mut out = format!("{LOOP_HEADER}\n");
    for c in candidates {
        writeln!(out, "{},{},{}", c.segment, c.historical_keyframe, c.query_keyframe).unwrap();
    }
    out
}

pub fn read_loop_candidates(text: &str) -> Result<Vec<LoopCandidate>> {
    csv_rows(text, LOOP_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(LoopCandidate {
                segment: parse_field(Some(f[0]), line, "segment")?,
                historical_keyframe: parse_field(Some(f[1]), line, "historical_keyframe")?,
                query_keyframe: parse_field(Some(f[2]), line, "query_keyframe")?,
            })
        })
        .collect()
}

/// `frame tx ty tz qx qy qz qw` per local pose; quaternions are stored verbatim.
pub fn write_pose_sidecar(frames: &[usize], poses: &[Pose]) -> String {
    let mut out = String::from("# frame tx ty tz qx qy qz qw\n");
    for (f, p) in frames.iter().zip(poses) {
        let v = p.translation.vector;
        let q = p.rotation.quaternion();
        writeln!(out, "{f} {} {} {} {} {} {} {}", v.x, v.y, v.z, q.i, q.j, q.k, q.w).unwrap();
    }
    out
}

pub fn read_pose_sidecar(text: &str) -> Result<(Vec<usize>, Vec<Pose>)> {
    let mut frames = Vec::new();
    let mut poses = Vec::new();
    for (line, l) in content_lines(text) {
        let mut tok = l.split_whitespace();
        frames.push(parse_field(tok.next(), line, "frame")?);
        let mut v = [0.0; 7];
        for (i, x) in v.iter_mut().enumerate() {
            *x = parse_field(tok.next(), line, &format!("field {}", i + 2))?;
        }
        if tok.next().is_some() {
            return Err(Error::Parse { line, message: "expected 8 fields".into() });
        }
        unit_quaternion(v[3], v[4], v[5], v[6], line)?;
        let q = UnitQuaternion::new_unchecked(Quaternion::new(v[6], v[3], v[4], v[5]));
        poses.push(Pose::from_parts(Vector3::new(v[0], v[1], v[2]).into(), q));
    }
    Ok((frames, poses))
}

fn geometry_paths(dir: &Path, key: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{key}.pmap")), dir.join(format!("{key}.poses")))
}

/// Stores a submap geometry as `<key>.pmap` plus a `<key>.poses` sidecar.
pub fn write_geometry(dir: &Path, key: &str, geometry: &SubmapGeometry) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (pmap, poses) = geometry_paths(dir, key);
    let container = PointMapContainer {
        height: geometry.height,
        width: geometry.width,
        frames: (0..geometry.frames.len())
            .map(|i| PmapFrame {
                points: geometry.points[i].clone(),
                confidence: geometry.confidence[i].clone(),
                sky: geometry.sky[i].clone(),
            })
            .collect(),
    };
    write_pmap(BufWriter::new(File::create(pmap)?), &container)?;
    std::fs::write(poses, write_pose_sidecar(&geometry.frames, &geometry.local_poses))?;
    Ok(())
}

pub fn read_geometry(dir: &Path, key: &str, submap_id: usize) -> Result<SubmapGeometry> {
    let (pmap, poses) = geometry_paths(dir, key);
    let container = read_pmap(BufReader::new(File::open(&pmap)?))?;
    let (frames, local_poses) = read_pose_sidecar(&std::fs::read_to_string(&poses)?)?;
    if frames.len() != container.frames.len() {
        return Err(Error::DataIntegrity(format!(
            "{} holds {} frames but its sidecar lists {}",
            pmap.display(),
            container.frames.len(),
            frames.len()
        )));
    }
    let mut g = SubmapGeometry {
        submap_id,
        height: container.height,
        width: container.width,
        frames,
        local_poses,
        points: Vec::new(),
        confidence: Vec::new(),
        sky: Vec::new(),
    };
    for f in container.frames {
        g.points.push(f.points);
        g.confidence.push(f.confidence);
        g.sky.push(f.sky);
    }
    g.validate()?;
    Ok(g)
}
