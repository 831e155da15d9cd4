use std::io::{Read, Write};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const PMAP_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"PMAP";

#[derive(Debug, Clone, PartialEq)]
pub struct PmapFrame {
    pub points: Vec<Vector3<f64>>,
    pub confidence: Vec<f64>,
    pub sky: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMapContainer {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<PmapFrame>,
}

/// Little-endian layout: magic, u16 version, u32 H, W, F, then per frame the
/// points (f32×3), confidences (f32) and sky flags (u8), each row-major.
pub fn write_pmap<W: Write>(mut out: W, container: &PointMapContainer) -> Result<()> {
    let hw = container.height * container.width;
    let dims = [container.height, container.width, container.frames.len()];
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::invalid("point-map dimensions exceed u32"));
    }
    out.write_all(MAGIC)?;
    out.write_all(&PMAP_VERSION.to_le_bytes())?;
    for d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(hw * 17);
    for (i, f) in container.frames.iter().enumerate() {
        if f.points.len() != hw || f.confidence.len() != hw || f.sky.len() != hw {
            return Err(Error::invalid(format!("frame {i} does not match the {}x{} grid", container.height, container.width)));
        }
        buf.clear();
        for p in &f.points {
            for v in p.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        for c in &f.confidence {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        buf.extend(f.sky.iter().map(|&s| s as u8));
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_pmap<R: Read>(mut input: R) -> Result<PointMapContainer> {
    let mut header = [0u8; 18];
    input.read_exact(&mut header).map_err(|_| Error::Data("point-map header is truncated".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Data("missing PMAP magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != PMAP_VERSION {
        return Err(Error::Data(format!("unsupported PMAP version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (height, width, count) = (u32_at(6), u32_at(10), u32_at(14));
    let hw = height
        .checked_mul(width)
        .ok_or_else(|| Error::Data("point-map dimensions overflow".into()))?;
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    let mut buf = vec![0u8; hw * 17];
    for i in 0..count {
        input.read_exact(&mut buf).map_err(|_| Error::Data(format!("point-map frame {i} is truncated")))?;
        let f32_at = |k: usize| f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let points = (0..hw).map(|p| Vector3::new(f32_at(3 * p), f32_at(3 * p + 1), f32_at(3 * p + 2))).collect();
        let confidence = (0..hw).map(|p| f32_at(3 * hw + p)).collect();
        let sky = buf[16 * hw..].iter().map(|&b| b != 0).collect();
        frames.push(PmapFrame { points, confidence, sky });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Data("trailing bytes after point-map frames".into()));
    }
    Ok(PointMapContainer { height, width, frames })
}
