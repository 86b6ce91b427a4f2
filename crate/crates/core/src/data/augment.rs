//! Stochastic image augmentation: independent horizontal and vertical
//! flips (p = 0.5 each), then a random resized crop with side scale drawn
//! from [0.6, 1.0], resampled back to the original dims with
//! nearest-neighbor. Output dims always equal input dims.

use crate::env::Image;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            out.put(y, x, img.get(y, img.w - 1 - x));
        }
    }
    out
}

pub fn vflip(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.h {
        out.rgb[y * img.w * 3..(y + 1) * img.w * 3]
            .copy_from_slice(&img.rgb[(img.h - 1 - y) * img.w * 3..(img.h - y) * img.w * 3]);
    }
    out
}

pub fn crop(img: &Image, top: usize, left: usize, ch: usize, cw: usize) -> Image {
    assert!(top + ch <= img.h && left + cw <= img.w, "crop window out of bounds");
    let mut out = Image::filled(ch, cw, [0, 0, 0]);
    for y in 0..ch {
        for x in 0..cw {
            out.put(y, x, img.get(top + y, left + x));
        }
    }
    out
}

/// Nearest-neighbor resize; source index is floor(out_index * src / dst),
/// which is the identity when dims match.
pub fn resize_nn(img: &Image, oh: usize, ow: usize) -> Image {
    let mut out = Image::filled(oh, ow, [0, 0, 0]);
    for y in 0..oh {
        let sy = y * img.h / oh;
        for x in 0..ow {
            let sx = x * img.w / ow;
            out.put(y, x, img.get(sy, sx));
        }
    }
    out
}

/// Deterministic core of [`augment`]; `scale` is the crop side fraction.
pub fn augment_with(img: &Image, hf: bool, vf: bool, scale: f64, top: usize, left: usize) -> Image {
    let mut work = img.clone();
    if hf {
        work = hflip(&work);
    }
    if vf {
        work = vflip(&work);
    }
    let ch = ((scale * img.h as f64).round() as usize).clamp(1, img.h);
    let cw = ((scale * img.w as f64).round() as usize).clamp(1, img.w);
    let cropped = crop(&work, top, left, ch, cw);
    resize_nn(&cropped, img.h, img.w)
}

/// Draw order is frozen (hflip, vflip, scale, top, left) so augmented
/// views are reproducible from the seed alone.
pub fn augment(img: &Image, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hf = rng.random_bool(0.5);
    let vf = rng.random_bool(0.5);
    let scale: f64 = rng.random_range(0.6..=1.0);
    let ch = ((scale * img.h as f64).round() as usize).clamp(1, img.h);
    let cw = ((scale * img.w as f64).round() as usize).clamp(1, img.w);
    let top = rng.random_range(0..=img.h - ch);
    let left = rng.random_range(0..=img.w - cw);
    augment_with(img, hf, vf, scale, top, left)
}
