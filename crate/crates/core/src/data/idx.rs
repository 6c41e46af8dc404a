//! IDX containers (big-endian headers) for MNIST-style images and labels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// One 28x28 grayscale image, row-major.
pub type Image = [u8; PIXELS];

/// Images and labels of one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(Error::Shape {
                op: "image_set",
                msg: format!(
                    "{} pixel bytes for {} labels (expected {})",
                    pixels.len(),
                    labels.len(),
                    labels.len() * PIXELS
                ),
            });
        }
        Ok(ImageSet { pixels, labels })
    }

    pub fn from_images(images: &[Image], labels: Vec<u8>) -> Result<Self> {
        Self::new(images.iter().flatten().copied().collect(), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        self.pixels[i * PIXELS..(i + 1) * PIXELS]
            .try_into()
            .expect("image slice has PIXELS bytes")
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// The first `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        ImageSet {
            pixels: self.pixels[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// `[N,28,28,1]` tensor of the selected images scaled to `[0, 1]`.
    pub fn tensor<T: Element>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend(self.image(i).iter().map(|&p| pixel_value::<T>(p)));
        }
        Tensor::new(vec![indices.len(), SIDE, SIDE, 1], data)
    }
}

pub fn pixel_value<T: Element>(p: u8) -> T {
    T::of_f64(p as f64 / 255.0)
}

struct Header<'a> {
    what: &'static str,
    bytes: &'a [u8],
}

impl Header<'_> {
    fn u32_at(&self, offset: usize, field: &str) -> Result<u32> {
        let b = self.bytes.get(offset..offset + 4).ok_or_else(|| {
            Error::parse(
                self.what,
                offset as u64,
                format!(
                    "truncated header reading {field}: expected at least {} bytes, got {}",
                    offset + 4,
                    self.bytes.len()
                ),
            )
        })?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn magic(&self, expected: u32) -> Result<()> {
        let magic = self.u32_at(0, "magic")?;
        if magic != expected {
            return Err(Error::parse(
                self.what,
                0,
                format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
            ));
        }
        Ok(())
    }

    fn payload(&self, offset: usize, len: usize) -> Result<&[u8]> {
        let actual = self.bytes.len();
        if actual != offset + len {
            let kind = if actual < offset + len { "truncated" } else { "oversized" };
            return Err(Error::parse(
                self.what,
                actual.min(offset + len) as u64,
                format!("{kind} file: expected {} bytes, got {actual}", offset + len),
            ));
        }
        Ok(&self.bytes[offset..])
    }
}

/// Parses an image file, returning `(count, pixels)`. Only 28x28 images are accepted.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, Vec<u8>)> {
    let h = Header {
        what: "idx images",
        bytes,
    };
    h.magic(IMAGE_MAGIC)?;
    let count = h.u32_at(4, "count")? as usize;
    let rows = h.u32_at(8, "rows")? as usize;
    let cols = h.u32_at(12, "cols")? as usize;
    if rows != SIDE || cols != SIDE {
        let offset = if rows != SIDE { 8 } else { 12 };
        return Err(Error::parse(
            "idx images",
            offset,
            format!("images are {rows}x{cols}, expected {SIDE}x{SIDE}"),
        ));
    }
    Ok((count, h.payload(16, count * PIXELS)?.to_vec()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let h = Header {
        what: "idx labels",
        bytes,
    };
    h.magic(LABEL_MAGIC)?;
    let count = h.u32_at(4, "count")? as usize;
    Ok(h.payload(8, count)?.to_vec())
}

pub fn encode_images(pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, (pixels.len() / PIXELS) as u32, SIDE as u32, SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads and cross-checks an image file and its label file.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<ImageSet> {
    let (count, pixels) = parse_images(&read(images.as_ref())?)?;
    let labels = parse_labels(&read(labels.as_ref())?)?;
    if labels.len() != count {
        return Err(Error::parse(
            "idx labels",
            4,
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    ImageSet::new(pixels, labels)
}

/// Writes `set` as an image file and a label file.
pub fn save_idx(set: &ImageSet, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    std::fs::write(ip, encode_images(set.pixels())).map_err(|e| Error::io(ip, e))?;
    std::fs::write(lp, encode_labels(set.labels())).map_err(|e| Error::io(lp, e))
}

/// Standard file names inside an MNIST directory: `(train images, train labels, test images, test labels)`.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Loads `(train, test)` from a directory holding the four standard files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(ImageSet, ImageSet)> {
    let d = dir.as_ref();
    let train = load_idx(d.join(MNIST_FILES[0]), d.join(MNIST_FILES[1]))?;
    let test = load_idx(d.join(MNIST_FILES[2]), d.join(MNIST_FILES[3]))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageSet {
        let mut pixels = vec![0u8; 3 * PIXELS];
        pixels[5] = 200;
        pixels[PIXELS + 400] = 17;
        ImageSet::new(pixels, vec![4, 0, 9]).unwrap()
    }

    #[test]
    fn encode_parse_round_trip() {
        let s = sample();
        let (count, px) = parse_images(&encode_images(s.pixels())).unwrap();
        assert_eq!(count, 3);
        assert_eq!(px, s.pixels());
        assert_eq!(parse_labels(&encode_labels(s.labels())).unwrap(), s.labels());
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let mut b = encode_labels(&[1, 2]);
        b[3] = 0x03;
        match parse_labels(&b) {
            Err(Error::Parse { offset: 0, msg, .. }) => assert!(msg.contains("0x00000803")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_names_expected_and_actual_length() {
        let b = encode_images(sample().pixels());
        let cut = &b[..b.len() - 10];
        match parse_images(cut) {
            Err(Error::Parse { msg, .. }) => {
                assert!(msg.contains(&format!("expected {} bytes", b.len())), "{msg}");
                assert!(msg.contains(&format!("got {}", cut.len())), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_images(&b[..6]), Err(Error::Parse { offset: 4, .. })));
    }

    #[test]
    fn non_28_extent_is_rejected() {
        let mut b = encode_images(sample().pixels());
        b[15] = 27;
        assert!(matches!(parse_images(&b), Err(Error::Parse { offset: 12, .. })));
    }

    #[test]
    fn tensor_is_scaled() {
        let t = sample().tensor::<f32>(&[0]).unwrap();
        assert_eq!(t.shape(), &[1, 28, 28, 1]);
        assert!((t.data()[5] - 200.0 / 255.0).abs() < 1e-7);
    }
}
