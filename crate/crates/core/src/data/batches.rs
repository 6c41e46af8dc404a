use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::{augment_pipeline, AugmentConfig, StreamKey};
use super::idx::{pixel_value, ImageSet, PIXELS, SIDE};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// One training batch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// Position of the batch within its epoch.
    pub index: usize,
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Stream used for epoch shuffles; disjoint from every augmentation stream.
fn shuffle_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, w) in [seed, epoch, u64::MAX, u64::MAX].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Sample order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut shuffle_rng(seed, epoch));
    order
}

/// Splits `order` into batches of `batch_size`; a trailing batch of one sample
/// is dropped because batch norm cannot train on it.
pub fn batch_slices(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2)
        .collect()
}

/// Augments and stacks the samples at `indices`. Augmentation streams are keyed
/// by sample index, so the result does not depend on the thread count.
pub fn assemble_batch<T: Element>(
    set: &ImageSet,
    indices: &[usize],
    cfg: &AugmentConfig,
    seed: u64,
    epoch: u64,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let mut data = vec![T::zero(); indices.len() * PIXELS];
    data.par_chunks_mut(PIXELS)
        .zip(indices.par_iter())
        .for_each(|(dst, &i)| {
            let img = augment_pipeline(set.image(i), cfg, StreamKey::new(seed, epoch, i as u64));
            dst.iter_mut().zip(img.iter()).for_each(|(d, &p)| *d = pixel_value(p));
        });
    let labels = indices.iter().map(|&i| set.label(i) as usize).collect();
    Ok((Tensor::new(vec![indices.len(), SIDE, SIDE, 1], data)?, labels))
}

/// Starts a producer thread that assembles the batches of one epoch ahead of
/// the consumer, holding at most `depth` finished batches.
pub fn spawn_epoch<T: Element>(
    set: Arc<ImageSet>,
    cfg: AugmentConfig,
    seed: u64,
    epoch: u64,
    batch_size: usize,
    depth: usize,
) -> (Receiver<Result<Batch<T>>>, JoinHandle<()>) {
    let (tx, rx) = sync_channel(depth.max(1));
    let handle = std::thread::spawn(move || {
        let order = epoch_order(set.len(), seed, epoch);
        for (index, idx) in batch_slices(&order, batch_size).into_iter().enumerate() {
            let batch = assemble_batch(&set, idx, &cfg, seed, epoch).map(|(images, labels)| Batch {
                index,
                images,
                labels,
            });
            if tx.send(batch).is_err() {
                break;
            }
        }
    });
    (rx, handle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set(n: usize) -> ImageSet {
        let mut px = vec![0u8; n * PIXELS];
        for i in 0..n {
            for k in 0..30 {
                px[i * PIXELS + 200 + k * 7 + i % 5] = (40 + i * 3 + k) as u8;
            }
        }
        ImageSet::new(px, (0..n).map(|i| (i % 10) as u8).collect()).unwrap()
    }

    #[test]
    fn order_is_a_seeded_permutation() {
        let a = epoch_order(100, 1, 0);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(100, 1, 0));
        assert_ne!(a, epoch_order(100, 1, 1));
    }

    #[test]
    fn singleton_tail_is_dropped() {
        let order: Vec<usize> = (0..7).collect();
        let b = batch_slices(&order, 3);
        assert_eq!(b.len(), 2);
        assert_eq!(batch_slices(&order[..6], 3).len(), 2);
    }

    #[test]
    fn producer_matches_direct_assembly() {
        let set = Arc::new(tiny_set(23));
        let cfg = AugmentConfig::default();
        let (rx, h) = spawn_epoch::<f32>(set.clone(), cfg.clone(), 4, 2, 5, 2);
        let got: Vec<Batch<f32>> = rx.iter().map(|b| b.unwrap()).collect();
        h.join().unwrap();
        let order = epoch_order(23, 4, 2);
        let slices = batch_slices(&order, 5);
        assert_eq!(got.len(), slices.len());
        for (b, idx) in got.iter().zip(slices) {
            let (img, labels) = assemble_batch::<f32>(&set, idx, &cfg, 4, 2).unwrap();
            assert_eq!(b.images, img);
            assert_eq!(b.labels, labels);
        }
    }

    #[test]
    fn assembly_is_thread_count_independent() {
        let set = tiny_set(40);
        let idx: Vec<usize> = (0..40).rev().collect();
        let cfg = AugmentConfig::default();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| assemble_batch::<f32>(&set, &idx, &cfg, 9, 3).unwrap())
        };
        assert_eq!(run(1).0, run(4).0);
    }
}
