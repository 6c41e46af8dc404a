use super::idx::{Image, SIDE};

/// Counts of all-zero columns/rows flanking the ink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Margins {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
    /// Set for an image with no ink; every margin is then 28.
    pub degenerate: bool,
}

/// Inclusive ink bounding box `(x0, x1, y0, y1)`, or `None` for an empty image.
pub fn ink_box(image: &Image) -> Option<(usize, usize, usize, usize)> {
    let (mut x0, mut x1, mut y0, mut y1) = (SIDE, 0, SIDE, 0);
    for y in 0..SIDE {
        for x in 0..SIDE {
            if image[y * SIDE + x] != 0 {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    (x0 < SIDE).then_some((x0, x1, y0, y1))
}

pub fn compute_margins(image: &Image) -> Margins {
    match ink_box(image) {
        Some((x0, x1, y0, y1)) => Margins {
            left: x0,
            right: SIDE - 1 - x1,
            top: y0,
            bottom: SIDE - 1 - y1,
            degenerate: false,
        },
        None => Margins {
            left: SIDE,
            right: SIDE,
            top: SIDE,
            bottom: SIDE,
            degenerate: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::idx::PIXELS;

    #[test]
    fn single_corner_pixel() {
        let mut img = [0u8; PIXELS];
        img[0] = 1;
        let m = compute_margins(&img);
        assert_eq!((m.left, m.right, m.top, m.bottom), (0, 27, 0, 27));
        assert!(!m.degenerate);
    }

    #[test]
    fn filled_block() {
        let mut img = [0u8; PIXELS];
        for y in 4..=23 {
            for x in 8..=23 {
                img[y * SIDE + x] = 255;
            }
        }
        let m = compute_margins(&img);
        assert_eq!((m.left, m.right, m.top, m.bottom), (8, 4, 4, 4));
    }

    #[test]
    fn empty_image_is_degenerate() {
        let m = compute_margins(&[0u8; PIXELS]);
        assert!(m.degenerate);
        assert_eq!((m.left, m.right, m.top, m.bottom), (28, 28, 28, 28));
    }
}
