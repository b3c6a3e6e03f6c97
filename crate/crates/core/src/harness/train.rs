//! Toy training loop: synthesize clips, segment each clip's last frame
//! with the full pipeline, and descend the combined cross-entropy loss
//! with Adam. Losses and evaluation run at feature resolution against the
//! patch-center labels the model is actually trained on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::clip::{gen_clip, Clip, IGNORE_LABEL};
use crate::harness::config::{OptimizerConfig, RunConfig};
use crate::harness::model::{argmax_classes, feature_labels, save_checkpoint, Model};
use crate::harness::stream::stream_segment;
use crate::metrics::{iou_report, MaskSequence};
use crate::mining::loss;
use crate::tensor::graph::{Graph, ParamSet, ValueId};
use crate::tensor::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Adam with bias correction; moments are kept in 64-bit regardless of
/// the parameter precision.
#[derive(Debug)]
pub struct Adam {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(cfg: OptimizerConfig, params: &ParamSet<T>) -> Self {
        let zeros: Vec<Tensor<f64>> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update from the gradients currently stored on the parameters.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamSet<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let m_corr = 1.0 - b1.powi(t);
        let v_corr = 1.0 - b2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id);
            let md = self.m[slot].data_mut();
            let vd = self.v[slot].data_mut();
            for (i, value) in p.value.data_mut().iter_mut().enumerate() {
                let g = p.grad.data()[i].as_f64();
                md[i] = b1 * md[i] + (1.0 - b1) * g;
                vd[i] = b2 * vd[i] + (1.0 - b2) * g * g;
                let update = self.cfg.lr * (md[i] / m_corr) / ((vd[i] / v_corr).sqrt() + self.cfg.eps);
                *value = T::from_f64(value.as_f64() - update);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPoint {
    pub iteration: usize,
    pub loss: f64,
    pub miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub points: Vec<TrainPoint>,
    pub iterations_run: usize,
    pub final_loss: f64,
    pub final_miou: f64,
    pub reached_target: bool,
}

/// A training run over synthesized clips; exposes its state so tests and
/// the acceptance suite can inspect parameters and predictions.
pub struct Trainer<T: Scalar> {
    pub cfg: RunConfig,
    pub model: Model,
    pub params: ParamSet<T>,
    pub clips: Vec<Clip<T>>,
    labels: Vec<Vec<u32>>,
    opt: Adam,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut clips = Vec::with_capacity(cfg.train.clips);
        for i in 0..cfg.train.clips {
            let spec = crate::harness::clip::SynthClipSpec {
                seed: cfg.clip.seed.wrapping_add(i as u64),
                ..cfg.clip
            };
            clips.push(gen_clip::<T>(&spec)?);
        }
        let labels = clips
            .iter()
            .map(|clip| {
                let t = cfg.clip.frames - 1;
                feature_labels(clip.masks.frame(t), cfg.clip.height, cfg.clip.width, cfg.patch)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut params = ParamSet::new();
        let mut rng = Rng::substream(cfg.seed, "model.init");
        let model = Model::init(&mut params, &mut rng, &cfg)?;
        let opt = Adam::new(cfg.optimizer, &params);
        Ok(Trainer { cfg, model, params, clips, labels, opt })
    }

    /// Forward pass for one clip's final frame in a fresh graph.
    fn forward_clip(&self, g: &mut Graph<T>, clip_idx: usize) -> Result<crate::harness::model::ModelOutput> {
        let clip = &self.clips[clip_idx];
        let t = self.cfg.clip.frames - 1;
        let target = g.input(clip.frames[t].clone());
        let refs: Vec<(usize, ValueId)> = self
            .cfg
            .schedule
            .reference_offsets()
            .into_iter()
            .map(|k| (k, g.input(clip.frames[t - k].clone())))
            .collect();
        self.model.forward_images(g, &self.params, target, &refs)
    }

    /// Confusion IoU over every clip's final frame at feature resolution.
    pub fn evaluate_iou_report(&self) -> Result<crate::metrics::IouReport> {
        let (h, w) = self.cfg.feature_extents();
        let mut gt_frames = Vec::with_capacity(self.clips.len());
        let mut pred_frames = Vec::with_capacity(self.clips.len());
        for i in 0..self.clips.len() {
            let mut g = Graph::new();
            let out = self.forward_clip(&mut g, i)?;
            pred_frames.push(argmax_classes(g.value(out.logits))?);
            gt_frames.push(self.labels[i].iter().map(|&l| l as u8).collect());
        }
        let gt = MaskSequence::new(gt_frames, h, w, self.cfg.classes, IGNORE_LABEL)?;
        let pred = MaskSequence::new(pred_frames, h, w, self.cfg.classes, IGNORE_LABEL)?;
        iou_report(&gt, &pred)
    }

    /// Mean IoU over every clip's final frame at feature resolution.
    pub fn evaluate_miou(&self) -> Result<f64> {
        Ok(self.evaluate_iou_report()?.miou)
    }

    /// Feature-resolution predictions for every frame of one clip.
    pub fn predict_sequence(&self, clip_idx: usize) -> Result<MaskSequence> {
        let (h, w) = self.cfg.feature_extents();
        let streamed = stream_segment(&self.model, &self.params, &self.clips[clip_idx].frames)?;
        let frames = streamed
            .logits
            .iter()
            .map(|l| argmax_classes(l))
            .collect::<Result<Vec<_>>>()?;
        MaskSequence::new(frames, h, w, self.cfg.classes, IGNORE_LABEL)
    }

    /// Feature-resolution ground truth for every frame of one clip.
    pub fn ground_truth_sequence(&self, clip_idx: usize) -> Result<MaskSequence> {
        let (h, w) = self.cfg.feature_extents();
        let clip = &self.clips[clip_idx];
        let frames = (0..self.cfg.clip.frames)
            .map(|t| {
                let labels =
                    feature_labels(clip.masks.frame(t), self.cfg.clip.height, self.cfg.clip.width, self.cfg.patch)?;
                Ok(labels.into_iter().map(|l| l as u8).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        MaskSequence::new(frames, h, w, self.cfg.classes, IGNORE_LABEL)
    }

    /// One optimizer step over all clips; returns the mean loss. Any
    /// numeric failure is tagged with the iteration it happened in.
    fn train_step(&mut self, iteration: usize) -> Result<f64> {
        match self.accumulate_gradients() {
            Ok(mean) if mean.is_finite() => {
                self.opt.step(&mut self.params);
                Ok(mean)
            }
            Ok(mean) => Err(Error::numeric("train_toy", format!("loss {mean} at iteration {iteration}"))),
            Err(Error::Numeric { op, detail }) => Err(Error::numeric(
                "train_toy",
                format!("{op}: {detail} at iteration {iteration}"),
            )),
            Err(other) => Err(other),
        }
    }

    fn accumulate_gradients(&mut self) -> Result<f64> {
        self.params.zero_grads();
        let mut total = 0.0;
        let scale = T::from_f64(1.0 / self.clips.len() as f64);
        for i in 0..self.clips.len() {
            let mut g = Graph::new();
            let out = self.forward_clip(&mut g, i)?;
            let sample_loss = loss(
                &mut g,
                out.logits,
                Some(out.aux),
                &self.labels[i],
                IGNORE_LABEL as u32,
                self.cfg.lambda_aux,
            )?;
            let scaled = g.scale(sample_loss, scale);
            g.backward(scaled, &mut self.params)?;
            total += g.value(sample_loss).item()?.as_f64();
        }
        Ok(total / self.clips.len() as f64)
    }

    pub fn run(&mut self) -> Result<TrainReport> {
        let mut points = Vec::new();
        let mut final_loss = f64::NAN;
        let mut final_miou = 0.0;
        let mut iterations_run = 0;
        for it in 0..self.cfg.train.iterations {
            let loss = self.train_step(it)?;
            iterations_run = it + 1;
            final_loss = loss;
            let evaluate = (it + 1) % self.cfg.train.eval_every == 0 || it + 1 == self.cfg.train.iterations;
            let miou = if evaluate { Some(self.evaluate_miou()?) } else { None };
            points.push(TrainPoint { iteration: it + 1, loss, miou });
            if let (Some(m), Some(target)) = (miou, self.cfg.train.target_miou) {
                final_miou = m;
                if m >= target {
                    break;
                }
            } else if let Some(m) = miou {
                final_miou = m;
            }
        }
        if points.last().map_or(true, |p| p.miou.is_none()) {
            final_miou = self.evaluate_miou()?;
            if let Some(p) = points.last_mut() {
                p.miou = Some(final_miou);
            }
        }
        Ok(TrainReport {
            points,
            iterations_run,
            final_loss,
            final_miou,
            reached_target: self.cfg.train.target_miou.map_or(false, |t| final_miou >= t),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.cfg, &self.params)
    }
}

/// Trains from scratch, optionally checkpointing into `out`.
pub fn train_toy<T: Scalar>(cfg: RunConfig, out: Option<&Path>) -> Result<(TrainReport, Trainer<T>)> {
    let mut trainer = Trainer::new(cfg)?;
    let report = trainer.run()?;
    if let Some(dir) = out {
        trainer.save(dir)?;
    }
    Ok((report, trainer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::model::tests::tiny_config;

    #[test]
    fn adam_single_step_matches_the_closed_form() {
        let mut params = ParamSet::<f64>::new();
        let id = params.add("p", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        params.get_mut(id).grad = Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap();
        let cfg = OptimizerConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut opt = Adam::new(cfg, &params);
        opt.step(&mut params);
        // At t = 1 the bias corrections cancel: update = lr*g/(|g|+eps).
        for (i, (p0, g)) in [(1.0f64, 0.5f64), (-2.0, -0.25)].into_iter().enumerate() {
            let want = p0 - 0.1 * g / (g.abs() + 1e-8);
            let got = params.get(id).value.data()[i];
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn loss_decreases_on_one_clip() {
        let mut cfg = tiny_config();
        cfg.lambda_aux = 0.0;
        cfg.train.iterations = 50;
        cfg.train.eval_every = 50;
        let mut trainer = Trainer::<f64>::new(cfg).unwrap();
        let report = trainer.run().unwrap();
        let first = report.points[0].loss;
        assert!(
            report.final_loss < first,
            "loss went from {first} to {}",
            report.final_loss
        );
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut cfg = tiny_config();
        cfg.optimizer.lr = 0.0;
        cfg.train.iterations = 3;
        let mut trainer = Trainer::<f64>::new(cfg).unwrap();
        let before: Vec<Tensor<f64>> = trainer.params.iter().map(|(_, p)| p.value.clone()).collect();
        trainer.run().unwrap();
        for ((_, p), b) in trainer.params.iter().zip(&before) {
            assert_eq!(&p.value, b, "{} drifted", p.name);
        }
    }

    #[test]
    fn non_finite_loss_names_the_iteration() {
        let mut trainer = Trainer::<f64>::new(tiny_config()).unwrap();
        let first = trainer.params.ids().next().unwrap();
        trainer.params.get_mut(first).value.data_mut()[0] = f64::NAN;
        let err = trainer.run().unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{err}");
        assert!(err.to_string().contains("iteration 0"), "{err}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut cfg = tiny_config();
            cfg.train.iterations = 4;
            let mut trainer = Trainer::<f64>::new(cfg).unwrap();
            let report = trainer.run().unwrap();
            let params: Vec<Tensor<f64>> = trainer.params.iter().map(|(_, p)| p.value.clone()).collect();
            (report, params)
        };
        let (ra, pa) = run();
        let (rb, pb) = run();
        assert_eq!(ra, rb);
        assert_eq!(pa, pb);
    }
}
