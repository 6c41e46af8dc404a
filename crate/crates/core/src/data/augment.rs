//! Label-preserving augmentation of 28x28 digits.
//!
//! The pipeline runs rotation, translation, width squeeze and erasure in
//! that order. Each op draws from its own ChaCha8 stream keyed by
//! `(seed, epoch, image index, op index)`, so output does not depend on
//! scheduling or thread count.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idx::{Image, PIXELS, SIDE};
use super::margins::{compute_margins, ink_box, Margins};
use crate::error::{Error, Result};

/// Canvas centre used as the rotation pivot.
const CENTRE: f64 = (SIDE as f64 - 1.0) / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentOp {
    Rotate = 0,
    Translate = 1,
    Width = 2,
    Erase = 3,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 4] = [
        AugmentOp::Rotate,
        AugmentOp::Translate,
        AugmentOp::Width,
        AugmentOp::Erase,
    ];
}

/// Which ops run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Strategy {
    #[default]
    Full,
    /// Translation only, at most 2 pixels per axis.
    TwoPixelTranslateOnly,
    /// Translation only, anywhere within the margins.
    FullMarginTranslateOnly,
    None,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Full => "full",
            Strategy::TwoPixelTranslateOnly => "translate-2px",
            Strategy::FullMarginTranslateOnly => "translate-margin",
            Strategy::None => "none",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Strategy::Full),
            "translate-2px" => Ok(Strategy::TwoPixelTranslateOnly),
            "translate-margin" => Ok(Strategy::FullMarginTranslateOnly),
            "none" => Ok(Strategy::None),
            other => Err(Error::Config(format!(
                "unknown augmentation strategy `{other}` (full, translate-2px, translate-margin, none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub strategy: Strategy,
    pub rotation_max_deg: f64,
    pub rotation_prob: f64,
    /// Largest fractional width reduction; factors are drawn from `[1 - max, 1]`.
    pub width_squeeze_max: f64,
    pub erase_patch: usize,
    /// Side of the centred square the erase patch must stay inside.
    pub erase_region: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            strategy: Strategy::Full,
            rotation_max_deg: 30.0,
            rotation_prob: 0.5,
            width_squeeze_max: 0.25,
            erase_patch: 4,
            erase_region: 20,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            strategy: Strategy::None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return bad(format!("rotation_max_deg {} out of [0, 180]", self.rotation_max_deg));
        }
        if !(0.0..=1.0).contains(&self.rotation_prob) {
            return bad(format!("rotation_prob {} out of [0, 1]", self.rotation_prob));
        }
        if !(0.0..1.0).contains(&self.width_squeeze_max) {
            return bad(format!("width_squeeze_max {} out of [0, 1)", self.width_squeeze_max));
        }
        if self.erase_region > SIDE || self.erase_patch == 0 || self.erase_patch > self.erase_region
        {
            return bad(format!(
                "erase patch {} must fit inside region {} <= {SIDE}",
                self.erase_patch, self.erase_region
            ));
        }
        Ok(())
    }

    /// `(rotate, translate cap, width, erase)` for the configured strategy.
    /// The translate entry is `None` when translation is off and
    /// `Some(cap)` otherwise.
    fn plan(&self) -> (bool, Option<Option<usize>>, bool, bool) {
        match self.strategy {
            Strategy::Full => (true, Some(None), true, true),
            Strategy::TwoPixelTranslateOnly => (false, Some(Some(2)), false, false),
            Strategy::FullMarginTranslateOnly => (false, Some(None), false, false),
            Strategy::None => (false, None, false, false),
        }
    }
}

/// Key of one augmentation stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub epoch: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, epoch: u64, index: u64) -> Self {
        StreamKey { seed, epoch, index }
    }

    /// Independent stream for `op`.
    pub fn rng(&self, op: AugmentOp) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (i, word) in [self.seed, self.epoch, self.index, op as u64].iter().enumerate() {
            key[i * 8..(i + 1) * 8].copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// Wraps an rng and logs `op` for every draw.
pub struct Traced<'a, R> {
    inner: R,
    op: AugmentOp,
    log: &'a RefCell<Vec<AugmentOp>>,
}

impl<'a, R: RngCore> Traced<'a, R> {
    pub fn new(inner: R, op: AugmentOp, log: &'a RefCell<Vec<AugmentOp>>) -> Self {
        Traced { inner, op, log }
    }
}

impl<R: RngCore> RngCore for Traced<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.log.borrow_mut().push(self.op);
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.log.borrow_mut().push(self.op);
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.log.borrow_mut().push(self.op);
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.log.borrow_mut().push(self.op);
        self.inner.try_fill_bytes(dest)
    }
}

fn sample_bilinear(image: &Image, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= SIDE as f64 || yi >= SIDE as f64 {
            0.0
        } else {
            image[yi as usize * SIDE + xi as usize] as f64
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            let w = wx * wy;
            if w != 0.0 {
                v += w * at(fx + dx, fy + dy);
            }
        }
    }
    v
}

fn to_pixel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Rotates by `degrees` (counter-clockwise on screen) about the canvas
/// centre with bilinear interpolation and zero fill.
pub fn rotate_by(image: &Image, degrees: f64) -> Image {
    let (s, c) = degrees.to_radians().sin_cos();
    let mut out = [0u8; PIXELS];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dx, dy) = (x as f64 - CENTRE, y as f64 - CENTRE);
            // Inverse map: rotate the output position back by -degrees.
            let sx = c * dx - s * dy + CENTRE;
            let sy = s * dx + c * dy + CENTRE;
            out[y * SIDE + x] = to_pixel(sample_bilinear(image, sx, sy));
        }
    }
    out
}

/// With probability `prob` rotates by an angle uniform in `[-max_deg, max_deg]`.
pub fn augment_rotate(image: &Image, rng: &mut impl Rng, prob: f64, max_deg: f64) -> Image {
    if !rng.gen_bool(prob) {
        return *image;
    }
    let angle = rng.gen_range(-max_deg..=max_deg);
    rotate_by(image, angle)
}

/// Shifts by `(dx, dy)` pixels (positive right/down) with zero fill.
pub fn shift(image: &Image, dx: isize, dy: isize) -> Image {
    let mut out = [0u8; PIXELS];
    let n = SIDE as isize;
    for y in 0..n {
        let sy = y - dy;
        if !(0..n).contains(&sy) {
            continue;
        }
        for x in 0..n {
            let sx = x - dx;
            if (0..n).contains(&sx) {
                out[(y * n + x) as usize] = image[(sy * n + sx) as usize];
            }
        }
    }
    out
}

/// Per axis: a fair coin picks the direction, then the magnitude is uniform
/// in `[0, margin]` on that side, clamped to `cap` when given.
pub fn translation(margins: &Margins, rng: &mut impl Rng, cap: Option<usize>) -> (isize, isize) {
    let mut axis = |neg: usize, pos: usize| -> isize {
        let negative = rng.gen_bool(0.5);
        let room = if negative { neg } else { pos };
        let room = room.min(SIDE - 1);
        let mut mag = rng.gen_range(0..=room);
        if let Some(c) = cap {
            mag = mag.min(c);
        }
        if negative {
            -(mag as isize)
        } else {
            mag as isize
        }
    };
    let dx = axis(margins.left, margins.right);
    let dy = axis(margins.top, margins.bottom);
    (dx, dy)
}

pub fn augment_translate(
    image: &Image,
    margins: &Margins,
    rng: &mut impl Rng,
    cap: Option<usize>,
) -> Image {
    let (dx, dy) = translation(margins, rng, cap);
    if margins.degenerate {
        return *image;
    }
    shift(image, dx, dy)
}

/// Squeezes the ink box horizontally by `factor` in `(0, 1]` and re-centres it.
pub fn squeeze_width(image: &Image, factor: f64) -> Image {
    let Some((x0, x1, _, _)) = ink_box(image) else {
        return *image;
    };
    let w = x1 - x0 + 1;
    let target = ((w as f64 * factor).round() as usize).clamp(1, w);
    if target == w {
        return *image;
    }
    let centre = (x0 + x1) as f64 / 2.0;
    let start = (centre - (target as f64 - 1.0) / 2.0).round().max(0.0) as usize;
    let start = start.min(SIDE - target);
    let scale = w as f64 / target as f64;
    let mut out = [0u8; PIXELS];
    for y in 0..SIDE {
        let row = &image[y * SIDE..(y + 1) * SIDE];
        for j in 0..target {
            let sx = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (w - 1) as f64);
            let i = sx.floor() as usize;
            let t = sx - i as f64;
            let a = row[x0 + i] as f64;
            let b = row[x0 + (i + 1).min(w - 1)] as f64;
            out[y * SIDE + start + j] = to_pixel(a + (b - a) * t);
        }
    }
    out
}

pub fn augment_width(image: &Image, rng: &mut impl Rng, squeeze_max: f64) -> Image {
    let factor = rng.gen_range(1.0 - squeeze_max..=1.0);
    squeeze_width(image, factor)
}

/// Zeroes the `patch x patch` square with top-left corner `(x, y)`.
pub fn erase_at(image: &Image, x: usize, y: usize, patch: usize) -> Image {
    let mut out = *image;
    for row in y..y + patch {
        out[row * SIDE + x..row * SIDE + x + patch].fill(0);
    }
    out
}

/// Legal corner range for an erase patch inside the centred region.
pub fn erase_corner_range(patch: usize, region: usize) -> (usize, usize) {
    let lo = (SIDE - region) / 2;
    (lo, lo + region - patch)
}

pub fn augment_erase(image: &Image, rng: &mut impl Rng, patch: usize, region: usize) -> Image {
    let (lo, hi) = erase_corner_range(patch, region);
    let x = rng.gen_range(lo..=hi);
    let y = rng.gen_range(lo..=hi);
    erase_at(image, x, y, patch)
}

/// Runs the configured ops in order, each from its own keyed stream.
pub fn augment_pipeline(image: &Image, cfg: &AugmentConfig, key: StreamKey) -> Image {
    run_pipeline(image, cfg, |op| key.rng(op))
}

/// Like [`augment_pipeline`], also returning the op of every rng draw in order.
pub fn augment_pipeline_traced(
    image: &Image,
    cfg: &AugmentConfig,
    key: StreamKey,
) -> (Image, Vec<AugmentOp>) {
    let log = RefCell::new(Vec::new());
    let out = run_pipeline(image, cfg, |op| Traced::new(key.rng(op), op, &log));
    (out, log.into_inner())
}

fn run_pipeline<R: Rng>(
    image: &Image,
    cfg: &AugmentConfig,
    mut stream: impl FnMut(AugmentOp) -> R,
) -> Image {
    let mut img = *image;
    let (rotate, translate, width, erase) = cfg.plan();
    if rotate {
        img = augment_rotate(
            &img,
            &mut stream(AugmentOp::Rotate),
            cfg.rotation_prob,
            cfg.rotation_max_deg,
        );
    }
    if let Some(cap) = translate {
        // Margins are measured after rotation, which changes the ink extent.
        let m = compute_margins(&img);
        img = augment_translate(&img, &m, &mut stream(AugmentOp::Translate), cap);
    }
    if width {
        img = augment_width(&img, &mut stream(AugmentOp::Width), cfg.width_squeeze_max);
    }
    if erase {
        img = augment_erase(
            &img,
            &mut stream(AugmentOp::Erase),
            cfg.erase_patch,
            cfg.erase_region,
        );
    }
    img
}
