//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

pub mod grad;

use hvc_core::data::{Image, PIXELS, SIDE};
use hvc_core::ensemble::PredictionMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plurality vote written out directly from the definition.
pub fn oracle_vote(rows: &[&[u8]], s: usize, first_model_ties: bool) -> u8 {
    let mut counts = [0usize; 256];
    for r in rows {
        counts[r[s] as usize] += 1;
    }
    let max = *counts.iter().max().unwrap();
    if first_model_ties && counts[rows[0][s] as usize] == max {
        return rows[0][s];
    }
    (0..256).find(|&c| counts[c] == max).unwrap() as u8
}

/// Histogram of correct counts over every non-empty subset whose size passes `keep`.
pub fn oracle_subset_histogram(
    m: &PredictionMatrix,
    keep: impl Fn(usize) -> bool,
    first_model_ties: bool,
) -> Vec<u64> {
    let k = m.models();
    let mut hist = vec![0u64; m.samples() + 1];
    for mask in 1u64..(1 << k) {
        if !keep(mask.count_ones() as usize) {
            continue;
        }
        let rows: Vec<&[u8]> = (0..k).filter(|j| mask >> j & 1 == 1).map(|j| m.row(j)).collect();
        let correct = (0..m.samples())
            .filter(|&s| oracle_vote(&rows, s, first_model_ties) == m.labels()[s])
            .count();
        hist[correct] += 1;
    }
    hist
}

/// Models of uneven quality with independent errors.
pub fn random_matrix(k: usize, n: usize, classes: usize, seed: u64) -> PredictionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..classes) as u8).collect();
    let rows = (0..k)
        .map(|_| {
            let acc = rng.gen_range(0.55..0.97);
            labels
                .iter()
                .map(|&l| if rng.gen_bool(acc) { l } else { rng.gen_range(0..classes) as u8 })
                .collect()
        })
        .collect();
    PredictionMatrix::unnamed(classes, labels, rows).unwrap()
}

/// Strong models whose mistakes concentrate on a pool of hard samples,
/// resembling repeated training runs of one architecture.
pub fn realistic_matrix(k: usize, n: usize, seed: u64) -> PredictionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    let hard: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.02)).collect();
    let rows = (0..k)
        .map(|_| {
            (0..n)
                .map(|s| {
                    let p_wrong = if hard[s] { 0.2 } else { 0.001 };
                    if rng.gen_bool(p_wrong) {
                        (labels[s] + rng.gen_range(1..10)) % 10
                    } else {
                        labels[s]
                    }
                })
                .collect()
        })
        .collect();
    PredictionMatrix::unnamed(10, labels, rows).unwrap()
}

/// Strokes of random length, position and intensity; sometimes blank or touching an edge.
pub fn random_digit(seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = [0u8; PIXELS];
    if rng.gen_bool(0.02) {
        return img;
    }
    let (x0, x1) = {
        let a = rng.gen_range(0..SIDE);
        (a, rng.gen_range(a..SIDE))
    };
    let (y0, y1) = {
        let a = rng.gen_range(0..SIDE);
        (a, rng.gen_range(a..SIDE))
    };
    for _ in 0..rng.gen_range(1..40) {
        let x = rng.gen_range(x0..=x1);
        let y = rng.gen_range(y0..=y1);
        img[y * SIDE + x] = rng.gen_range(1..=255);
    }
    img
}

pub fn sorted_ink(img: &Image) -> Vec<u8> {
    let mut v: Vec<u8> = img.iter().copied().filter(|&p| p != 0).collect();
    v.sort_unstable();
    v
}
