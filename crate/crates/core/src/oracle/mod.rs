//! Synthetic ground truth and a corrupting stand-in for a learned geometry model.

mod provider;
mod world;

pub use provider::{
    ContextRole, CorruptionConfig, GeometryProvider, InferenceRequest, SubmapGeometry, SyntheticProvider,
};
pub use world::{
    format_trajectory, generate_world, heading, parse_trajectory, square_loop, straight_line, GroundTruthWorld,
    Primitive, WorldConfig,
};

/// Derives a stream seed from a base seed and a tuple of stream identifiers.
pub(crate) fn seed_for(seed: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(seed), |h, &p| splitmix(h ^ splitmix(p)))
}
