//! Video consistency and segmentation quality over label-mask sequences.
//!
//! VC_n slides a window of n consecutive frames: among the pixels whose
//! ground-truth label does not change inside the window, it measures the
//! fraction whose predicted label does not change either. Stability is
//! read label-agnostically by default (the prediction must be consistent,
//! not correct); the strict variant additionally requires the stable
//! predicted label to equal the stable ground-truth label. IoU metrics are
//! standard confusion-matrix quantities with ignore pixels excluded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An aligned sequence of h x w label maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSequence {
    frames: Vec<Vec<u8>>,
    h: usize,
    w: usize,
    classes: usize,
    ignore: u8,
}

impl MaskSequence {
    pub fn new(frames: Vec<Vec<u8>>, h: usize, w: usize, classes: usize, ignore: u8) -> Result<Self> {
        if classes == 0 || classes > 255 {
            return Err(Error::contract("mask_sequence", "class count must be in 1..=255"));
        }
        if (ignore as usize) < classes {
            return Err(Error::contract(
                "mask_sequence",
                format!("ignore label {ignore} collides with the {classes} classes"),
            ));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.len() != h * w {
                return Err(Error::dimension(
                    "mask_sequence",
                    format!("frame {i} has {} pixels, expected {h}x{w}", f.len()),
                ));
            }
            if let Some(&bad) = f.iter().find(|&&v| v != ignore && v as usize >= classes) {
                return Err(Error::contract(
                    "mask_sequence",
                    format!("frame {i} contains label {bad} outside 0..{classes}"),
                ));
            }
        }
        Ok(MaskSequence { frames, h, w, classes, ignore })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ignore(&self) -> u8 {
        self.ignore
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        &self.frames[i]
    }
}

fn check_aligned(gt: &MaskSequence, pred: &MaskSequence, op: &'static str) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::contract(
            op,
            format!("{} ground-truth frames vs {} predicted", gt.len(), pred.len()),
        ));
    }
    if (gt.h, gt.w) != (pred.h, pred.w) {
        return Err(Error::dimension(
            op,
            format!("extents ({}, {}) vs ({}, {})", gt.h, gt.w, pred.h, pred.w),
        ));
    }
    Ok(())
}

/// Consistency of predictions over windows of n consecutive frames.
///
/// Returns `None` when every window has an empty ground-truth-stable set
/// (the metric is undefined there); otherwise the mean over windows with a
/// non-empty set. `strict` additionally requires the stable predicted
/// label to match the stable ground-truth label.
pub fn vc_n(gt: &MaskSequence, pred: &MaskSequence, n: usize, strict: bool) -> Result<Option<f64>> {
    check_aligned(gt, pred, "vc_n")?;
    if n == 0 {
        return Err(Error::contract("vc_n", "window length must be >= 1"));
    }
    if gt.len() < n {
        return Err(Error::contract(
            "vc_n",
            format!("sequence of {} frames is shorter than the window {n}", gt.len()),
        ));
    }
    let pixels = gt.h * gt.w;
    let mut scores = Vec::new();
    for start in 0..=gt.len() - n {
        let mut stable_gt = 0u64;
        let mut consistent = 0u64;
        'pixel: for p in 0..pixels {
            let g0 = gt.frames[start][p];
            if g0 == gt.ignore {
                continue;
            }
            for f in start + 1..start + n {
                let g = gt.frames[f][p];
                if g == gt.ignore || g != g0 {
                    continue 'pixel;
                }
            }
            stable_gt += 1;
            let p0 = pred.frames[start][p];
            if strict && p0 != g0 {
                continue;
            }
            if (start + 1..start + n).all(|f| pred.frames[f][p] == p0) {
                consistent += 1;
            }
        }
        if stable_gt > 0 {
            scores.push(consistent as f64 / stable_gt as f64);
        }
    }
    if scores.is_empty() {
        return Ok(None);
    }
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Unweighted mean of the defined per-video VC_n values.
pub fn mvc(videos: &[(&MaskSequence, &MaskSequence)], n: usize, strict: bool) -> Result<f64> {
    let mut defined = Vec::new();
    for (gt, pred) in videos {
        if let Some(v) = vc_n(gt, pred, n, strict)? {
            defined.push(v);
        }
    }
    if defined.is_empty() {
        return Err(Error::contract("mvc", "no video has a defined consistency value"));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: u32,
    pub gt_pixels: u64,
    /// None when the class appears in neither ground truth nor prediction.
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: Vec<ClassIou>,
    /// Mean IoU over classes present in the ground truth.
    pub miou: f64,
    /// IoU weighted by each class's share of ground-truth pixels.
    pub weighted_iou: f64,
    pub gt_pixels_total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VcReport {
    pub n: usize,
    pub strict: bool,
    pub per_video: Vec<Option<f64>>,
    pub mvc: Option<f64>,
}

/// Combined metric artifact emitted by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub vc: Vec<VcReport>,
    pub iou: Option<IouReport>,
}

/// Confusion-matrix IoU over all aligned frames. Ground-truth ignore
/// pixels are excluded entirely; predictions must not contain the ignore
/// label at counted pixels.
pub fn iou_report(gt: &MaskSequence, pred: &MaskSequence) -> Result<IouReport> {
    check_aligned(gt, pred, "iou_report")?;
    let k = gt.classes.max(pred.classes);
    let mut confusion = vec![0u64; k * k];
    for (gf, pf) in gt.frames.iter().zip(&pred.frames) {
        for (&g, &p) in gf.iter().zip(pf) {
            if g == gt.ignore {
                continue;
            }
            if p == pred.ignore {
                return Err(Error::contract(
                    "iou_report",
                    "prediction contains the ignore label at a counted pixel",
                ));
            }
            confusion[g as usize * k + p as usize] += 1;
        }
    }
    let gt_count = |cls: usize| -> u64 { (0..k).map(|p| confusion[cls * k + p]).sum() };
    let pred_count = |cls: usize| -> u64 { (0..k).map(|g| confusion[g * k + cls]).sum() };
    let total: u64 = (0..k).map(gt_count).sum();
    let mut per_class = Vec::with_capacity(k);
    let mut miou_sum = 0.0;
    let mut miou_n = 0u32;
    let mut weighted = 0.0;
    for cls in 0..k {
        let tp = confusion[cls * k + cls];
        let (in_gt, in_pred) = (gt_count(cls), pred_count(cls));
        let union = in_gt + in_pred - tp;
        let iou = if union == 0 { None } else { Some(tp as f64 / union as f64) };
        if in_gt > 0 {
            let v = iou.unwrap_or(0.0);
            miou_sum += v;
            miou_n += 1;
            if total > 0 {
                weighted += in_gt as f64 / total as f64 * v;
            }
        }
        per_class.push(ClassIou { class: cls as u32, gt_pixels: in_gt, iou });
    }
    Ok(IouReport {
        per_class,
        miou: if miou_n == 0 { 0.0 } else { miou_sum / miou_n as f64 },
        weighted_iou: weighted,
        gt_pixels_total: total,
    })
}
