//! Central finite-difference verification of the recorded backward pass,
//! run over every parameter of a small but complete pipeline: encoder,
//! pooling projections, attention stack with bias tables, and both heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::clip::{gen_clip, Clip, IGNORE_LABEL};
use crate::harness::config::{Precision, RunConfig, TrainConfig};
use crate::harness::model::{feature_labels, Model};
use crate::mining::loss;
use crate::schedule::{ContextSchedule, ScheduleEntry};
use crate::tensor::graph::{Graph, ParamSet, ValueId};
use crate::tensor::rng::Rng;

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Relative error denominators are floored here so finite-difference
/// noise on analytically-zero gradients is not amplified into failures.
const DENOMINATOR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_rel: f64,
    pub worst_index: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub checks: Vec<ParamCheck>,
    pub max_rel: f64,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

/// The checked pipeline: 32x32 images (8x8 features), 8 channels, two
/// heads, two layers, a 20-token schedule over one reference frame.
pub fn gradcheck_config() -> RunConfig {
    RunConfig {
        schedule: ContextSchedule {
            s: 4,
            entries: vec![
                ScheduleEntry { offset: 1, r: 8, p: 2 },
                ScheduleEntry { offset: 0, r: 2, p: 1 },
            ],
        },
        layers: 2,
        heads: 2,
        channels: 8,
        classes: 3,
        lambda_aux: 0.4,
        patch: 4,
        precision: Precision::F64,
        seed: 0,
        optimizer: Default::default(),
        train: TrainConfig { iterations: 1, clips: 1, eval_every: 1, target_miou: None },
        clip: crate::harness::clip::SynthClipSpec {
            frames: 2,
            height: 32,
            width: 32,
            classes: 3,
            objects: 2,
            object_side: 10,
            velocity: (1, 1),
            noise: 0.05,
            seed: 0,
        },
    }
}

struct Pipeline {
    cfg: RunConfig,
    model: Model,
    clip: Clip<f64>,
    labels: Vec<u32>,
}

impl Pipeline {
    fn new(seed: u64) -> Result<(Self, ParamSet<f64>)> {
        let cfg = gradcheck_config();
        let clip = gen_clip::<f64>(&cfg.clip)?;
        let t = cfg.clip.frames - 1;
        let labels = feature_labels(clip.masks.frame(t), cfg.clip.height, cfg.clip.width, cfg.patch)?;
        let mut params = ParamSet::new();
        let mut rng = Rng::substream(seed, "gradcheck.init");
        let model = Model::init(&mut params, &mut rng, &cfg)?;
        Ok((Pipeline { cfg, model, clip, labels }, params))
    }

    fn loss(&self, params: &ParamSet<f64>) -> Result<(Graph<f64>, ValueId)> {
        let t = self.cfg.clip.frames - 1;
        let mut g = Graph::new();
        let target = g.input(self.clip.frames[t].clone());
        let refs: Vec<(usize, ValueId)> = self
            .cfg
            .schedule
            .reference_offsets()
            .into_iter()
            .map(|k| (k, g.input(self.clip.frames[t - k].clone())))
            .collect();
        let out = self.model.forward_images(&mut g, params, target, &refs)?;
        let l = loss(
            &mut g,
            out.logits,
            Some(out.aux),
            &self.labels,
            IGNORE_LABEL as u32,
            self.cfg.lambda_aux,
        )?;
        Ok((g, l))
    }

    fn loss_value(&self, params: &ParamSet<f64>) -> Result<f64> {
        let (g, l) = self.loss(params)?;
        g.value(l).item()
    }
}

/// Runs the check; `corrupt` optionally perturbs one parameter's analytic
/// gradient first (the negative control used by tests).
fn run_inner(seed: u64, corrupt: Option<&str>) -> Result<GradcheckReport> {
    let (pipe, mut params) = Pipeline::new(seed)?;
    debug_assert!(
        {
            let mut classes: Vec<u32> = pipe.labels.iter().copied().collect();
            classes.sort_unstable();
            classes.dedup();
            classes.len() >= 2
        },
        "degenerate labels make the check vacuous"
    );

    params.zero_grads();
    let (g, l) = pipe.loss(&params)?;
    g.backward(l, &mut params)?;
    if let Some(name) = corrupt {
        let id = params
            .find(name)
            .ok_or_else(|| Error::contract("gradcheck", format!("no parameter named {name}")))?;
        params.get_mut(id).grad.data_mut()[0] += 5e-2;
    }

    let ids: Vec<_> = params.ids().collect();
    let mut checks = Vec::with_capacity(ids.len());
    let mut max_rel = 0.0f64;
    for id in ids {
        let (name, scalars) = {
            let p = params.get(id);
            (p.name.clone(), p.value.len())
        };
        let mut worst = (0.0f64, 0usize);
        for i in 0..scalars {
            let original = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = original + EPSILON;
            let above = pipe.loss_value(&params)?;
            params.get_mut(id).value.data_mut()[i] = original - EPSILON;
            let below = pipe.loss_value(&params)?;
            params.get_mut(id).value.data_mut()[i] = original;
            let fd = (above - below) / (2.0 * EPSILON);
            let an = params.get(id).grad.data()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(DENOMINATOR_FLOOR);
            if rel > worst.0 {
                worst = (rel, i);
            }
        }
        max_rel = max_rel.max(worst.0);
        checks.push(ParamCheck {
            name,
            scalars,
            max_rel: worst.0,
            worst_index: worst.1,
            pass: worst.0 <= TOLERANCE,
        });
    }
    Ok(GradcheckReport {
        epsilon: EPSILON,
        tolerance: TOLERANCE,
        pass: checks.iter().all(|c| c.pass),
        checks,
        max_rel,
    })
}

/// Checks every parameter of the fixed pipeline at the given seed.
pub fn run(seed: u64) -> Result<GradcheckReport> {
    run_inner(seed, None)
}

/// Negative control: corrupts the named parameter's analytic gradient and
/// expects the report to call it out.
pub fn run_corrupted(seed: u64, param: &str) -> Result<GradcheckReport> {
    run_inner(seed, Some(param))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_parameter_passes_at_seed_zero() {
        let report = run(0).unwrap();
        assert!(report.pass, "worst {} ({:?})", report.max_rel, report.failing());
        assert!(report.max_rel <= TOLERANCE);
        // The pipeline must actually cover all parameter groups.
        let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
        for expected in [
            "encoder.embed.w",
            "encoder.mix.w",
            "pool0.w",
            "pool1.b",
            "cfm.layer0.q.w",
            "cfm.layer1.bias",
            "head.hidden.w",
            "head.out.b",
            "aux.w",
        ] {
            assert!(names.contains(&expected), "{expected} missing from {names:?}");
        }
    }

    #[test]
    fn bias_tables_alone_also_pass() {
        let report = run(1).unwrap();
        let tables: Vec<&ParamCheck> =
            report.checks.iter().filter(|c| c.name.ends_with(".bias")).collect();
        assert_eq!(tables.len(), 2);
        for t in tables {
            assert!(t.pass, "{}: {}", t.name, t.max_rel);
        }
    }

    #[test]
    fn corrupted_backward_is_caught_and_named() {
        let report = run_corrupted(0, "cfm.layer0.v.w").unwrap();
        assert!(!report.pass);
        assert_eq!(report.failing(), vec!["cfm.layer0.v.w"]);
        assert!(run_corrupted(0, "no.such.param").is_err());
    }
}
