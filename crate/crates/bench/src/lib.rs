//! Benchmark fixtures shared by the criterion targets.

use minivp_core::data::{generate, default_spec, DataKind, Split, VideoBatch};
use minivp_core::SeededRng;
use minivp_core::Tensor;

/// Deterministic [0,1) tensor for kernel benches.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed, "bench");
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.next_f64() as f32).collect();
    Tensor::new(shape, data).unwrap()
}

/// Small bounce batch matching the training shapes.
pub fn bench_videos(count: usize, t: usize, seed: u64) -> VideoBatch {
    let mut spec = default_spec(DataKind::BounceStoch, seed);
    spec.count = count;
    spec.t = t;
    generate(&spec, Split::Train).unwrap().0
}
