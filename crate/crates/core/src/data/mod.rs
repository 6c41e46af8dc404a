//! MNIST-format data: IDX files, margins, augmentation and batch assembly.

mod augment;
mod batches;
mod idx;
mod margins;
mod pgm;

pub use augment::{
    augment_erase, augment_pipeline, augment_pipeline_traced, augment_rotate, augment_translate,
    augment_width, erase_at, erase_corner_range, rotate_by, shift, squeeze_width, translation,
    AugmentConfig, AugmentOp, Strategy, StreamKey, Traced,
};
pub use batches::{assemble_batch, batch_slices, epoch_order, spawn_epoch, Batch};
pub use idx::{
    encode_images, encode_labels, load_idx, load_mnist_dir, parse_images, parse_labels,
    pixel_value, save_idx, Image, ImageSet, IMAGE_MAGIC, LABEL_MAGIC, MNIST_FILES, PIXELS, SIDE,
};
pub use margins::{compute_margins, ink_box, Margins};
pub use pgm::{encode_pgm, write_pgm};
