//! Minimal image encoder: a linear patch embedding followed by one
//! residual 3x3 local mixing layer. Just enough capacity to turn gray
//! levels into per-cell features the mining stack can work with.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::mining::INIT_SIGMA;
use crate::tensor::graph::{Graph, ParamId, ParamSet, ValueId};
use crate::tensor::rng::Rng;
use crate::tensor::{layout, Scalar};

#[derive(Clone, Copy, Debug)]
pub struct ToyEncoder {
    pub patch: usize,
    pub c: usize,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub mix_w: ParamId,
    pub mix_b: ParamId,
}

/// Gather index mapping an (h, w, c) cell grid to (h*w, 9c) rows of the
/// 3x3 neighborhood around each cell, clamped at the borders.
fn mix_indices(h: usize, w: usize, c: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(h * w * 9 * c);
    for r in 0..h {
        for col in 0..w {
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                    let cc = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    let base = (rr * w + cc) * c;
                    index.extend(base..base + c);
                }
            }
        }
    }
    index
}

impl ToyEncoder {
    pub fn init<T: Scalar>(params: &mut ParamSet<T>, rng: &mut Rng, patch: usize, c: usize) -> Result<Self> {
        if patch == 0 || c == 0 {
            return Err(Error::contract("toy_encoder", "patch size and channels must be >= 1"));
        }
        Ok(ToyEncoder {
            patch,
            c,
            embed_w: params.add("encoder.embed.w", rng.trunc_normal_tensor(&[patch * patch, c], INIT_SIGMA)),
            embed_b: params.add("encoder.embed.b", crate::tensor::Tensor::zeros(&[c])),
            mix_w: params.add("encoder.mix.w", rng.trunc_normal_tensor(&[9 * c, c], INIT_SIGMA)),
            mix_b: params.add("encoder.mix.b", crate::tensor::Tensor::zeros(&[c])),
        })
    }

    /// (H, W) image to (H/patch, W/patch, c) features.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        img: ValueId,
    ) -> Result<ValueId> {
        let shape = g.value(img).shape().to_vec();
        let [ih, iw] = shape[..] else {
            return Err(Error::dimension("toy_encode", format!("expected an (H, W) image, got {shape:?}")));
        };
        let p = self.patch;
        if ih % p != 0 || iw % p != 0 {
            return Err(Error::dimension(
                "toy_encode",
                format!("image extents {ih}x{iw} not divisible by patch {p}"),
            ));
        }
        let (h, w) = (ih / p, iw / p);
        let patch_index = Rc::new(layout::space_to_depth_indices(ih, iw, 1, p)?);
        let patches = g.gather(img, patch_index, &[h * w, p * p])?;
        let (ew, eb) = (g.param(params, self.embed_w), g.param(params, self.embed_b));
        let embedded = g.linear(patches, ew, eb)?;
        let neigh = g.gather(embedded, Rc::new(mix_indices(h, w, self.c)), &[h * w, 9 * self.c])?;
        let (mw, mb) = (g.param(params, self.mix_w), g.param(params, self.mix_b));
        let mixed = g.linear(neigh, mw, mb)?;
        let active = g.gelu(mixed);
        let out = g.add(embedded, active)?;
        g.reshape(out, &[h, w, self.c])
    }
}
