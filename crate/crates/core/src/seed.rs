//! Seed derivation.
//!
//! Every random stream in a run is derived from a single master seed and a
//! label describing its purpose plus the indices it belongs to (realization,
//! replication, ...). The mixing is a FNV-1a pass over the label followed by
//! SplitMix64 finalization of each index, so the scheme is stable across
//! platforms and toolchain versions.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` for the given purpose and indices.
pub fn derive_seed(master: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut state = splitmix64(master ^ h);
    for &i in indices {
        state = splitmix64(state ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    state
}

/// Well-known purpose labels used by the pipeline.
pub mod purpose {
    pub const ARRIVALS: &str = "arrivals";
    pub const GROUND_TRUTH: &str = "ground-truth";
    pub const REPLICATION: &str = "replication";
    pub const NARX_INIT: &str = "narx-init";
    pub const ANNEAL: &str = "anneal";
}
