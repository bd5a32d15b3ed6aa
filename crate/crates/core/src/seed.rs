//! Stable 64-bit seed derivation.
//!
//! Every random stream in the crate is keyed by a `u64` derived from the run's
//! master seed through these two functions, so ports to other languages can
//! reproduce the same streams:
//!
//! * `label_hash(s)` is 64-bit FNV-1a over the UTF-8 bytes of `s`
//!   (offset basis `0xcbf29ce484222325`, prime `0x100000001b3`).
//! * `mix(a, b) = splitmix64(a ^ splitmix64(b))` where `splitmix64` is the
//!   SplitMix64 output function applied to `x + 0x9e3779b97f4a7c15`.
//!
//! `derive_seed(seed, label) = mix(seed, label_hash(label))`.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    mix(seed, label_hash(label))
}
