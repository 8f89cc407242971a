//! Numerical building blocks: complex grids, the centered FFT, convolution
//! kernels and reverse-mode differentiation.

pub mod conv;
pub mod fft;
pub mod image;
pub mod tape;
pub mod tensor;

pub use fft::{fft2_centered, ifft2_centered};
pub use image::ComplexImage;
pub use tape::{Eager, Gradients, Graph, LinearMap, Tape, Var};
pub use tensor::Tensor;

/// Independent seed for `(stream, index)` under a base seed (SplitMix64
/// finalizer over the combined words).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(31);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
