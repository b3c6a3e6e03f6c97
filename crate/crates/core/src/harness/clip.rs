//! Synthetic clips with exact ground truth: a static banded background
//! (class 0) plus rigid squares of the remaining classes translating at a
//! fixed per-frame velocity. Every class renders at its own gray level so
//! a small encoder can tell them apart; masks are exact by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MaskSequence;
use crate::tensor::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Label value reserved for "not a class" throughout the harness.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClipSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Total class count including the background class 0.
    pub classes: usize,
    /// Number of moving squares; classes 1..K are assigned round-robin.
    pub objects: usize,
    pub object_side: usize,
    /// (columns, rows) advanced per frame by every object.
    pub velocity: (i64, i64),
    /// Amplitude of per-pixel uniform noise added to each frame.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthClipSpec {
    fn default() -> Self {
        SynthClipSpec {
            frames: 12,
            height: 48,
            width: 48,
            classes: 4,
            objects: 3,
            object_side: 14,
            velocity: (1, 1),
            noise: 0.02,
            seed: 0,
        }
    }
}

/// Grayscale frames plus their exact label masks.
#[derive(Clone, Debug)]
pub struct Clip<T> {
    pub frames: Vec<Tensor<T>>,
    pub masks: MaskSequence,
}

fn intensity(class: usize, classes: usize) -> f64 {
    // Background bands stay below 0.2; object classes spread over
    // [0.35, 0.95] so neighboring classes differ by at least 0.2.
    0.35 + 0.6 * (class - 1) as f64 / (classes.max(3) - 2) as f64
}

/// Start range along one axis such that the whole path stays inside
/// `extent` for `frames` steps of `step`.
fn start_range(extent: usize, side: usize, step: i64, frames: usize) -> Option<(usize, usize)> {
    let travel = step * (frames as i64 - 1);
    let lo = 0.max(-travel);
    let hi = (extent as i64 - side as i64).min(extent as i64 - side as i64 - travel);
    if hi < lo {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

pub fn gen_clip<T: Scalar>(spec: &SynthClipSpec) -> Result<Clip<T>> {
    if spec.frames == 0 || spec.height == 0 || spec.width == 0 {
        return Err(Error::contract("gen_clip", "frames and extents must be >= 1"));
    }
    if spec.classes < 2 || spec.classes as u8 as usize != spec.classes || spec.classes as u8 >= IGNORE_LABEL {
        return Err(Error::contract("gen_clip", format!("unusable class count {}", spec.classes)));
    }
    if spec.object_side > spec.height || spec.object_side > spec.width {
        return Err(Error::contract(
            "gen_clip",
            format!(
                "object side {} exceeds the {}x{} frame",
                spec.object_side, spec.height, spec.width
            ),
        ));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::contract("gen_clip", format!("noise amplitude {}", spec.noise)));
    }
    let rows = start_range(spec.height, spec.object_side, spec.velocity.1, spec.frames);
    let cols = start_range(spec.width, spec.object_side, spec.velocity.0, spec.frames);
    let (Some(rows), Some(cols)) = (rows, cols) else {
        return Err(Error::contract(
            "gen_clip",
            format!("velocity {:?} drives objects out of the frame", spec.velocity),
        ));
    };

    let mut place = Rng::substream(spec.seed, "clip.place");
    let mut noise = Rng::substream(spec.seed, "clip.noise");
    let starts: Vec<(usize, usize)> = (0..spec.objects)
        .map(|_| {
            (
                rows.0 + place.below(rows.1 - rows.0 + 1),
                cols.0 + place.below(cols.1 - cols.0 + 1),
            )
        })
        .collect();

    let (h, w) = (spec.height, spec.width);
    let bands = 3.min(h);
    let mut background = vec![0.0f64; h * w];
    for r in 0..h {
        let band = r * bands / h;
        let level = 0.04 + 0.07 * band as f64;
        for v in &mut background[r * w..(r + 1) * w] {
            *v = level;
        }
    }

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut img = background.clone();
        let mut mask = vec![0u8; h * w];
        for (i, &(r0, c0)) in starts.iter().enumerate() {
            let class = 1 + i % (spec.classes - 1);
            let level = intensity(class, spec.classes);
            let top = (r0 as i64 + spec.velocity.1 * t as i64) as usize;
            let left = (c0 as i64 + spec.velocity.0 * t as i64) as usize;
            for r in top..top + spec.object_side {
                for c in left..left + spec.object_side {
                    img[r * w + c] = level;
                    mask[r * w + c] = class as u8;
                }
            }
        }
        if spec.noise > 0.0 {
            for v in &mut img {
                *v += noise.uniform(-spec.noise, spec.noise);
            }
        }
        let data = img.into_iter().map(T::from_f64).collect();
        frames.push(Tensor::from_vec(&[h, w], data)?);
        masks.push(mask);
    }
    let masks = MaskSequence::new(masks, h, w, spec.classes, IGNORE_LABEL)?;
    Ok(Clip { frames, masks })
}
