//! Wall-clock comparison of windowed context mining against joint full
//! self-attention over all frames, on synthesized feature maps with
//! identical channel, head, and layer settings on both sides.
//!
//! The baseline runs the blocked kernel-only forward from the cost
//! module, which is the cheapest faithful implementation available; the
//! mining side pays its full recording overhead. Mining is evaluated in
//! window chunks so a rep's working set stays small at large extents.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_context, partition_windows, ContextTokenSet, WindowGrid};
use crate::cost::{self, BaselineLayer, CostModel, CostReport};
use crate::error::{Error, Result};
use crate::mining::{mine, CFMStack, StackConfig, INIT_SIGMA};
use crate::schedule::{ContextSchedule, ScheduleEntry};
use crate::tensor::graph::{Graph, ParamSet};
use crate::tensor::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Windows mined per recorded graph; bounds peak memory, not results.
const WINDOW_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub heads: usize,
    pub layers: usize,
    /// Clip length l+1; the extra frames feed both sides as references.
    pub frames: usize,
    pub schedule: ContextSchedule,
    pub reps: usize,
    pub seed: u64,
    /// Also count multiplies with the instrumented kernels (slower).
    pub measure_multiplies: bool,
}

impl BenchConfig {
    /// The comparison shape: a 4-frame clip of 64x64x32 feature maps. Both
    /// sides share the single head, so the ordering is unaffected while the
    /// dense baseline's softmax volume stays tractable on one core.
    pub fn standard() -> Self {
        BenchConfig {
            h: 64,
            w: 64,
            c: 32,
            heads: 1,
            layers: 2,
            frames: 4,
            schedule: ContextSchedule {
                s: 8,
                entries: vec![
                    ScheduleEntry { offset: 3, r: 16, p: 4 },
                    ScheduleEntry { offset: 2, r: 8, p: 2 },
                    ScheduleEntry { offset: 1, r: 8, p: 2 },
                    ScheduleEntry { offset: 0, r: 8, p: 1 },
                ],
            },
            reps: 10,
            seed: 0,
            measure_multiplies: false,
        }
    }

    /// Small smoke shape that finishes in milliseconds.
    pub fn smoke() -> Self {
        BenchConfig {
            h: 8,
            w: 8,
            c: 8,
            heads: 2,
            layers: 1,
            frames: 2,
            schedule: ContextSchedule {
                s: 4,
                entries: vec![
                    ScheduleEntry { offset: 1, r: 4, p: 2 },
                    ScheduleEntry { offset: 0, r: 4, p: 1 },
                ],
            },
            reps: 1,
            seed: 0,
            measure_multiplies: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.frames == 0 || self.frames <= self.schedule.max_offset() {
            return Err(Error::contract(
                "bench",
                format!("{} frames cannot cover offset {}", self.frames, self.schedule.max_offset()),
            ));
        }
        if self.reps == 0 {
            return Err(Error::contract("bench", "at least one repetition"));
        }
        if !self.schedule.divides(self.h, self.w) {
            return Err(Error::dimension(
                "bench",
                format!("schedule does not divide the {}x{} extents", self.h, self.w),
            ));
        }
        Ok(())
    }

    fn cost_model(&self) -> CostModel {
        CostModel {
            h: self.h,
            w: self.w,
            c: self.c,
            l: self.frames - 1,
            m: self.schedule.token_count(),
            layers: self.layers,
            heads: self.heads,
            s: self.schedule.s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub cffm_ms: Vec<f64>,
    pub baseline_ms: Vec<f64>,
    pub cffm_median_ms: f64,
    pub baseline_median_ms: f64,
    /// Baseline median over mining median.
    pub speedup: f64,
    pub cost: CostReport,
}

fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Everything one mining rep consumes, built once per benchmark run.
pub struct MiningSetup<T: Scalar> {
    frames: Vec<(usize, Tensor<T>)>,
    pools: Vec<(Tensor<T>, Tensor<T>)>,
    params: ParamSet<T>,
    stack: CFMStack,
    schedule: ContextSchedule,
    h: usize,
    w: usize,
    c: usize,
}

impl<T: Scalar> MiningSetup<T> {
    pub fn new(cfg: &BenchConfig) -> Result<Self> {
        let mut rng = Rng::substream(cfg.seed, "bench.mining");
        let mut frames = vec![(0usize, rng.uniform_tensor(&[cfg.h, cfg.w, cfg.c], -1.0, 1.0))];
        for k in cfg.schedule.reference_offsets() {
            frames.push((k, rng.uniform_tensor(&[cfg.h, cfg.w, cfg.c], -1.0, 1.0)));
        }
        let pools = cfg
            .schedule
            .entries
            .iter()
            .map(|e| {
                (
                    rng.trunc_normal_tensor(&[cfg.c * e.p * e.p, cfg.c], INIT_SIGMA),
                    rng.trunc_normal_tensor(&[cfg.c], INIT_SIGMA),
                )
            })
            .collect();
        let mut params = ParamSet::new();
        let stack = CFMStack::init(
            &mut params,
            &mut rng,
            StackConfig {
                c: cfg.c,
                heads: cfg.heads,
                s: cfg.schedule.s,
                m: cfg.schedule.token_count(),
                layers: cfg.layers,
                classes: 2,
            },
        )?;
        Ok(MiningSetup {
            frames,
            pools,
            params,
            stack,
            schedule: cfg.schedule.clone(),
            h: cfg.h,
            w: cfg.w,
            c: cfg.c,
        })
    }

    /// One full mining forward: assemble every window's context, then
    /// mine the windows in chunks, writing results into an (h, w, c) map.
    pub fn forward(&self) -> Result<Tensor<T>> {
        let s = self.schedule.s;
        let (windows, contexts, segments) = {
            let mut g = Graph::new();
            let frames: Vec<(usize, _)> =
                self.frames.iter().map(|(k, t)| (*k, g.input(t.clone()))).collect();
            let pools: Vec<(_, _)> = self
                .pools
                .iter()
                .map(|(w, b)| (g.input(w.clone()), g.input(b.clone())))
                .collect();
            let grid = partition_windows(&mut g, frames[0].1, s)?;
            let ctx = assemble_context(&mut g, &self.schedule, &frames, &pools, &grid)?;
            let windows: Vec<Tensor<T>> = grid.windows.iter().map(|&id| g.value(id).clone()).collect();
            let contexts: Vec<Tensor<T>> =
                ctx.per_window.iter().map(|&id| g.value(id).clone()).collect();
            (windows, contexts, ctx.segments)
        };
        let mut out = Tensor::zeros(&[self.h, self.w, self.c]);
        let grid_cols = self.w / s;
        for (chunk_idx, chunk) in windows.chunks(WINDOW_CHUNK).enumerate() {
            let base = chunk_idx * WINDOW_CHUNK;
            let mut g = Graph::new();
            let win_ids: Vec<_> = chunk.iter().map(|t| g.input(t.clone())).collect();
            let ctx_ids: Vec<_> = contexts[base..base + chunk.len()]
                .iter()
                .map(|t| g.input(t.clone()))
                .collect();
            let grid = WindowGrid { windows: win_ids, h: s, w: s * chunk.len(), c: self.c, s };
            let ctx = ContextTokenSet {
                per_window: ctx_ids,
                m: self.schedule.token_count(),
                c: self.c,
                segments: segments.clone(),
            };
            let mined = mine(&mut g, &self.params, &self.stack, &grid, &ctx)?;
            for (offset, &id) in mined.windows.iter().enumerate() {
                let win = base + offset;
                let (wr, wc) = (win / grid_cols, win % grid_cols);
                let data = g.value(id).data();
                for r in 0..s {
                    let dst = ((wr * s + r) * self.w + wc * s) * self.c;
                    let src = r * s * self.c;
                    out.data_mut()[dst..dst + s * self.c].copy_from_slice(&data[src..src + s * self.c]);
                }
            }
        }
        Ok(out)
    }
}

/// Joint attention over all frames' cells, built once per run.
pub struct BaselineSetup<T: Scalar> {
    x: Tensor<T>,
    layers: Vec<BaselineLayer<T>>,
    heads: usize,
}

impl<T: Scalar> BaselineSetup<T> {
    pub fn new(cfg: &BenchConfig) -> Self {
        let mut rng = Rng::substream(cfg.seed, "bench.baseline");
        let t = cfg.frames * cfg.h * cfg.w;
        let x = rng.uniform_tensor(&[t, cfg.c], -1.0, 1.0);
        let layers = (0..cfg.layers).map(|_| BaselineLayer::random(&mut rng, cfg.c)).collect();
        BaselineSetup { x, layers, heads: cfg.heads }
    }

    pub fn forward(&self) -> Result<Tensor<T>> {
        cost::full_attention_forward(&self.x, &self.layers, self.heads, 256)
    }
}

/// Times both sides over `reps` repetitions and reports medians together
/// with the analytic (and optionally instrumented) cost model.
pub fn run<T: Scalar>(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let model = cfg.cost_model();
    let cost = if cfg.measure_multiplies {
        cost::measured_report(&model, cfg.seed, true)?
    } else {
        cost::report(&model)?
    };

    let mining = MiningSetup::<T>::new(cfg)?;
    let mut cffm_ms = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        let start = Instant::now();
        let out = mining.forward()?;
        cffm_ms.push(start.elapsed().as_secs_f64() * 1e3);
        debug_assert!(out.all_finite());
    }

    let baseline = BaselineSetup::<T>::new(cfg);
    let mut baseline_ms = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        let start = Instant::now();
        let out = baseline.forward()?;
        baseline_ms.push(start.elapsed().as_secs_f64() * 1e3);
        debug_assert!(out.all_finite());
    }

    let cffm_median_ms = median(&cffm_ms);
    let baseline_median_ms = median(&baseline_ms);
    Ok(BenchReport {
        config: cfg.clone(),
        speedup: baseline_median_ms / cffm_median_ms,
        cffm_ms,
        baseline_ms,
        cffm_median_ms,
        baseline_median_ms,
        cost,
    })
}
