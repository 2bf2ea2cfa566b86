//! Stand-ins for the two diffusion priors: a novel-view synthesizer and a
//! detail enhancer, plus the noise schedule they share.

mod enhancer;
mod schedule;
mod synthesizer;

pub use enhancer::{
    enhance_blind, BlindEnhancer, EnhanceContext, EnhancerOracle, GroundTruthEnhancer,
    IdentityEnhancer,
};
pub use schedule::{forward_diffuse, NoiseSchedule};
pub use synthesizer::{BlindSynthesizer, Corruption, GroundTruthSynthesizer, SynthesizerOracle};

/// Mixes a base seed with a call index into an independent stream seed.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
