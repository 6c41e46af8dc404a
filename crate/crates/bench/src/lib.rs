//! Seeded fixtures shared by the benchmarks.

use hvc_core::data::{ImageSet, PIXELS};
use hvc_core::ensemble::PredictionMatrix;
use hvc_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Blob-shaped digits with varied position and size.
pub fn synthetic_digits(n: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = vec![0u8; n * PIXELS];
    for i in 0..n {
        let (cx, cy) = (rng.gen_range(9.0..19.0), rng.gen_range(9.0..19.0));
        let r: f64 = rng.gen_range(3.0..7.0);
        for y in 0..28 {
            for x in 0..28 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d < r {
                    px[i * PIXELS + y * 28 + x] = (255.0 * (1.0 - d / r)) as u8;
                }
            }
        }
    }
    ImageSet::new(px, (0..n).map(|i| (i % 10) as u8).collect()).expect("sizes")
}

/// `k` strong models whose errors cluster on a few hard samples.
pub fn prediction_fixture(k: usize, n: usize, seed: u64) -> PredictionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    let hard: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.02)).collect();
    let rows = (0..k)
        .map(|_| {
            (0..n)
                .map(|s| {
                    let p = if hard[s] { 0.2 } else { 0.001 };
                    if rng.gen_bool(p) {
                        (labels[s] + rng.gen_range(1..10)) % 10
                    } else {
                        labels[s]
                    }
                })
                .collect()
        })
        .collect();
    PredictionMatrix::unnamed(10, labels, rows).expect("valid fixture")
}
