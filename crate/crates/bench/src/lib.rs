//! Fixtures shared by the benchmarks.

use gdc_core::grid::conv2d_circular;
use gdc_core::tasks::synth;
use gdc_core::{BlurKernel, ImageGrid, SeedStreams};

/// Seeded `size × size` shapes image and its Gaussian-blurred, 2%-noise copy.
pub fn blurred_pair(size: usize, seed: u64) -> (ImageGrid, ImageGrid, BlurKernel) {
    let streams = SeedStreams::new(seed);
    let gt = synth::shapes(size, size, &mut streams.stream("image"));
    let k = BlurKernel::gaussian(5, 1.0).expect("valid kernel");
    let blurred = conv2d_circular(&gt, &k).expect("kernel fits");
    let y = synth::add_noise(&blurred, 2.0, &mut streams.stream("noise")).expect("valid sigma");
    (gt, y, k)
}
