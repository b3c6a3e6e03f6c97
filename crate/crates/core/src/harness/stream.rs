//! Streaming inference: encode each frame exactly once, keep the last few
//! feature maps in a ring buffer, and assemble every target's context
//! from the cache. Early frames whose references do not exist yet clamp
//! to the earliest cached frame, so output extents and shapes never vary.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::harness::model::Model;
use crate::tensor::graph::{Graph, ParamSet, ValueId};
use crate::tensor::{Scalar, Tensor};

/// Ring buffer of per-frame feature maps keyed by frame index. Frames
/// must be inserted in order; older entries fall off the back.
#[derive(Debug)]
pub struct FeatureCache<T> {
    capacity: usize,
    entries: VecDeque<(usize, Tensor<T>)>,
}

impl<T: Scalar> FeatureCache<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "a cache needs room for at least the current frame");
        FeatureCache { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn insert(&mut self, index: usize, features: Tensor<T>) {
        if let Some(&(last, _)) = self.entries.back() {
            assert!(index == last + 1, "frame {index} inserted after {last}");
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((index, features));
    }

    pub fn get(&self, index: usize) -> Option<&Tensor<T>> {
        let &(first, _) = self.entries.front()?;
        if index < first {
            return None;
        }
        self.entries.get(index - first).map(|(_, t)| t)
    }

    pub fn earliest(&self) -> Option<usize> {
        self.entries.front().map(|&(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug)]
pub struct StreamOutput<T> {
    /// (h, w, K) logits per frame, in frame order.
    pub logits: Vec<Tensor<T>>,
    pub encoder_calls: usize,
}

/// Reference frame index for offset `k` at target `t` under the warm-up
/// rule: missing history clamps to the earliest cached frame.
fn clamped_source(t: usize, k: usize, earliest: usize) -> usize {
    t.saturating_sub(k).max(earliest)
}

/// Segments every frame of `frames` in order, encoding each exactly once.
pub fn stream_segment<T: Scalar>(
    model: &Model,
    params: &ParamSet<T>,
    frames: &[Tensor<T>],
) -> Result<StreamOutput<T>> {
    if frames.is_empty() {
        return Err(Error::contract("stream_segment", "no frames"));
    }
    let offsets = model.cfg.schedule.reference_offsets();
    let mut cache = FeatureCache::new(model.cfg.schedule.max_offset() + 1);
    let mut logits = Vec::with_capacity(frames.len());
    let mut encoder_calls = 0usize;
    for (t, frame) in frames.iter().enumerate() {
        let mut g = Graph::new();
        let img = g.input(frame.clone());
        let feat = model.encode(&mut g, params, img)?;
        encoder_calls += 1;
        cache.insert(t, g.value(feat).clone());
        let earliest = cache.earliest().expect("cache is never empty here");
        let refs: Vec<(usize, ValueId)> = offsets
            .iter()
            .map(|&k| {
                let source = clamped_source(t, k, earliest);
                let cached = cache
                    .get(source)
                    .ok_or_else(|| Error::contract("stream_segment", format!("frame {source} not cached")))?;
                Ok((k, g.input(cached.clone())))
            })
            .collect::<Result<_>>()?;
        let out = model.forward_features(&mut g, params, feat, &refs)?;
        logits.push(g.value(out.logits).clone());
    }
    if encoder_calls != frames.len() {
        return Err(Error::contract(
            "stream_segment",
            format!("{encoder_calls} encoder calls for {} frames", frames.len()),
        ));
    }
    Ok(StreamOutput { logits, encoder_calls })
}

/// The no-cache oracle: re-encodes every needed frame from scratch for
/// every target. Output must match [`stream_segment`] bit for bit.
pub fn recompute_segment<T: Scalar>(
    model: &Model,
    params: &ParamSet<T>,
    frames: &[Tensor<T>],
) -> Result<Vec<Tensor<T>>> {
    if frames.is_empty() {
        return Err(Error::contract("recompute_segment", "no frames"));
    }
    let offsets = model.cfg.schedule.reference_offsets();
    let max_offset = model.cfg.schedule.max_offset();
    let mut logits = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        let earliest = (t + 1).saturating_sub(max_offset + 1);
        let mut g = Graph::new();
        let img = g.input(frames[t].clone());
        let feat = model.encode(&mut g, params, img)?;
        let refs: Vec<(usize, ValueId)> = offsets
            .iter()
            .map(|&k| {
                let source = clamped_source(t, k, earliest);
                let src_img = g.input(frames[source].clone());
                Ok((k, model.encode(&mut g, params, src_img)?))
            })
            .collect::<Result<_>>()?;
        let out = model.forward_features(&mut g, params, feat, &refs)?;
        logits.push(g.value(out.logits).clone());
    }
    Ok(logits)
}
