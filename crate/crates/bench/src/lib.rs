//! Synthetic inputs shared by the benchmarks.

use vessel_agreement::synthetic::{synthetic_image, SynthParams};
use vessel_agreement::AnnotatedImage;

/// One `size`x`size` synthetic image with its two annotations.
pub fn fixture(size: usize) -> AnnotatedImage {
    let p = SynthParams {
        width: size,
        height: size,
        ..SynthParams::default()
    };
    synthetic_image("bench", &p, 1)
        .expect("valid synthetic parameters")
        .0
}
