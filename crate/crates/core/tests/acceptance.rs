//! End-to-end acceptance checks, one per shipped guarantee. Every check
//! recomputes its expected values independently (hand arithmetic, plain
//! loops, direct enumeration) instead of trusting the crate's own
//! formulas, runs inside a wall-clock budget, and prints a single
//! PASS/FAIL line. Run with `--nocapture` to watch them stream.

use std::panic::catch_unwind;
use std::time::Instant;

use cffm_core::assemble::{assemble_context, partition_windows};
use cffm_core::cost::{self, CostModel};
use cffm_core::harness::benchmark::{self, BenchConfig};
use cffm_core::harness::clip::{gen_clip, SynthClipSpec};
use cffm_core::harness::config::RunConfig;
use cffm_core::harness::gradcheck;
use cffm_core::harness::model::Model;
use cffm_core::harness::stream::{recompute_segment, stream_segment};
use cffm_core::harness::train::{train_toy, Trainer};
use cffm_core::metrics::{iou_report, mvc, vc_n, MaskSequence};
use cffm_core::mining::{mine, CFMStack, StackConfig};
use cffm_core::schedule::{default_schedule, ContextSchedule, ScheduleEntry};
use cffm_core::tensor::graph::{Graph, ParamSet};
use cffm_core::tensor::rng::Rng;
use cffm_core::tensor::Tensor;

/// Ok carries the one-line summary printed next to PASS.
type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn entry(offset: usize, r: usize, p: usize) -> ScheduleEntry {
    ScheduleEntry { offset, r, p }
}

fn identity(c: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[c, c]);
    for i in 0..c {
        t.data_mut()[i * c + i] = 1.0;
    }
    t
}

/// Four references of shrinking regions: r 20/12/6/4 pooled by 4/3/2/1
/// over a 20x20 map with 5x5 windows.
fn walkthrough_schedule() -> ContextSchedule {
    ContextSchedule {
        s: 5,
        entries: vec![entry(9, 20, 4), entry(6, 12, 3), entry(3, 6, 2), entry(0, 4, 1)],
    }
}

/// Token count and pair counts on the walkthrough shape, against hand
/// arithmetic: m = 25+16+9+16, per-query 66 vs (l+1)^2*hw, per-layer
/// scores hw*m vs ((l+1)*hw)^2.
fn walkthrough_cost_arithmetic() -> Outcome {
    let schedule = walkthrough_schedule();
    let m = schedule.token_count();
    ensure!(m == 66, "token count {m}, expected 25 + 16 + 9 + 16 = 66");

    let model = CostModel::from_schedule(&schedule, 20, 20, 8, 2, 2).map_err(|e| e.to_string())?;
    ensure!(model.l == 3, "reference count {}, expected 3", model.l);
    let report = cost::report(&model).map_err(|e| e.to_string())?;

    let (cffm, base) = (&report.cffm, &report.baseline);
    ensure!(
        cffm.score_pairs_per_layer == 26_400,
        "mining pairs per layer {}, expected 400 * 66 = 26400",
        cffm.score_pairs_per_layer
    );
    ensure!(
        base.score_pairs_per_layer == 2_560_000,
        "baseline pairs per layer {}, expected (4 * 400)^2 = 2560000",
        base.score_pairs_per_layer
    );
    ensure!(cffm.pairs_per_target_query == 66, "mining per-query pairs {}", cffm.pairs_per_target_query);
    ensure!(
        base.pairs_per_target_query == 6_400,
        "baseline per-query pairs {}, expected 16 * 400 = 6400",
        base.pairs_per_target_query
    );
    let want_ratio = 2_560_000.0 / 26_400.0;
    ensure!(
        report.pair_ratio == want_ratio,
        "pair ratio {} vs {want_ratio}",
        report.pair_ratio
    );
    ensure!(
        (report.pair_ratio * 100.0).round() / 100.0 == 96.97,
        "pair ratio {} does not round to 96.97",
        report.pair_ratio
    );
    Ok(format!(
        "m=66; per-layer pairs 26400 vs 2560000; per-query 66 vs 6400; ratio {:.2}",
        report.pair_ratio
    ))
}

/// The full-scale default schedule: 49+25+9+49+49 tokens.
fn default_schedule_token_count() -> Outcome {
    let schedule = default_schedule();
    let per_entry: Vec<usize> = schedule
        .entries
        .iter()
        .map(|e| (e.r / e.p) * (e.r / e.p))
        .collect();
    let by_hand: usize = per_entry.iter().sum();
    ensure!(by_hand == 181, "hand sum {by_hand} from {per_entry:?}, expected 181");
    let m = schedule.token_count();
    ensure!(m == 181, "token count {m}, expected 181");
    Ok(format!("m=181 ({})", per_entry.iter().map(usize::to_string).collect::<Vec<_>>().join("+")))
}

/// Plain-loop multi-head self-attention with residual, written from
/// scratch for this suite: row-wise q.k/sqrt(dh) scores, stabilized
/// softmax, value average, plus the input.
fn plain_self_attention(
    x: &Tensor<f64>,
    proj: &[(&Tensor<f64>, &Tensor<f64>); 3],
    heads: usize,
) -> Vec<f64> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let dh = c / heads;
    let apply = |(w, b): &(&Tensor<f64>, &Tensor<f64>)| -> Vec<f64> {
        (0..n)
            .flat_map(|row| {
                (0..c).map(move |j| {
                    (0..c).map(|i| x.at(&[row, i]) * w.at(&[i, j])).sum::<f64>() + b.at(&[j])
                })
            })
            .collect()
    };
    let (q, k, v) = (apply(&proj[0]), apply(&proj[1]), apply(&proj[2]));
    let mut out = x.data().to_vec();
    for head in 0..heads {
        let lo = head * dh;
        for row in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|t| {
                    (0..dh).map(|d| q[row * c + lo + d] * k[t * c + lo + d]).sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let peak = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let weights: Vec<f64> = scores.iter().map(|&s| (s - peak).exp()).collect();
            let z: f64 = weights.iter().sum();
            for d in 0..dh {
                out[row * c + lo + d] +=
                    (0..n).map(|t| weights[t] / z * v[t * c + lo + d]).sum::<f64>();
            }
        }
    }
    out
}

/// No references, one window covering the whole 8x8 frame, one unpooled
/// full-resolution target entry, zero score offsets: mining must agree
/// with dense self-attention over the frame's 64 cells to 1e-10, for one
/// and for two heads.
fn degenerate_full_attention_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for heads in [1usize, 2] {
        let (h, w, c, s) = (8usize, 8usize, 8usize, 8usize);
        let schedule = ContextSchedule { s, entries: vec![entry(0, 8, 1)] };
        let m = schedule.token_count();
        ensure!(m == 64, "degenerate token count {m}");

        let mut rng = Rng::new(300 + heads as u64);
        let mut params = ParamSet::<f64>::new();
        let stack = CFMStack::init(
            &mut params,
            &mut rng,
            StackConfig { c, heads, s, m, layers: 1, classes: 2 },
        )
        .map_err(|e| e.to_string())?;
        let wq: Tensor<f64> = rng.uniform_tensor(&[c, c], -0.6, 0.6);
        let wk: Tensor<f64> = rng.uniform_tensor(&[c, c], -0.6, 0.6);
        let wv: Tensor<f64> = rng.uniform_tensor(&[c, c], -0.6, 0.6);
        let bq: Tensor<f64> = rng.uniform_tensor(&[c], -0.2, 0.2);
        let bk: Tensor<f64> = rng.uniform_tensor(&[c], -0.2, 0.2);
        let bv: Tensor<f64> = rng.uniform_tensor(&[c], -0.2, 0.2);
        let layer = stack.layers[0];
        params.get_mut(layer.q_w).value = wq.clone();
        params.get_mut(layer.k_w).value = wk.clone();
        params.get_mut(layer.v_w).value = wv.clone();
        params.get_mut(layer.q_b).value = bq.clone();
        params.get_mut(layer.k_b).value = bk.clone();
        params.get_mut(layer.v_b).value = bv.clone();
        let zero_bias = params.get(layer.bias).value.data().iter().all(|&x| x == 0.0);
        ensure!(zero_bias, "score offsets are not zero");
        let pw = params.add("pool.w", identity(c));
        let pb = params.add("pool.b", Tensor::zeros(&[c]));

        let feat: Tensor<f64> = rng.uniform_tensor(&[h, w, c], -1.0, 1.0);
        let mut g = Graph::new();
        let pool_nodes = vec![(g.param(&params, pw), g.param(&params, pb))];
        let fid = g.input(feat.clone());
        let windows = partition_windows(&mut g, fid, s).map_err(|e| e.to_string())?;
        ensure!(windows.count() == 1, "{} windows, expected 1", windows.count());
        let ctx = assemble_context(&mut g, &schedule, &[(0, fid)], &pool_nodes, &windows)
            .map_err(|e| e.to_string())?;
        let mined = mine(&mut g, &params, &stack, &windows, &ctx).map_err(|e| e.to_string())?;
        let got = g.value(mined.windows[0]);

        let x = feat.reshape(&[h * w, c]).map_err(|e| e.to_string())?;
        let want = plain_self_attention(&x, &[(&wq, &bq), (&wk, &bk), (&wv, &bv)], heads);
        let max_diff = got
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        ensure!(max_diff <= 1e-10, "heads={heads}: max |diff| {max_diff:e} > 1e-10");
        worst = worst.max(max_diff);
    }
    Ok(format!("heads 1 and 2 agree with the dense reference, max |diff| {worst:.2e}"))
}

/// Central finite differences over every parameter of the end-to-end toy
/// pipeline: worst relative error at most 1e-4.
fn gradients_match_central_differences() -> Outcome {
    let report = gradcheck::run(0).map_err(|e| e.to_string())?;
    ensure!(report.epsilon == 1e-5, "step {} changed from 1e-5", report.epsilon);
    ensure!(report.tolerance == 1e-4, "tolerance {} changed from 1e-4", report.tolerance);
    ensure!(
        report.pass && report.failing().is_empty(),
        "failing parameters: {:?} (max rel {:.3e})",
        report.failing(),
        report.max_rel
    );
    ensure!(report.max_rel <= 1e-4, "max rel {:.3e} > 1e-4", report.max_rel);
    let scalars: usize = report.checks.iter().map(|c| c.scalars).sum();
    Ok(format!(
        "{} tensors, {} scalars, max rel {:.2e}",
        report.checks.len(),
        scalars,
        report.max_rel
    ))
}

/// With every value projection zeroed, a two-layer stack must return the
/// window features untouched bit for bit, and the context tokens must
/// read back unchanged afterwards.
fn zero_value_projection_identity() -> Outcome {
    let (h, w, c, s, heads) = (8usize, 8usize, 8usize, 4usize, 2usize);
    let schedule = ContextSchedule { s, entries: vec![entry(1, 8, 2), entry(0, 4, 1)] };
    let m = schedule.token_count();
    ensure!(m == 32, "token count {m}");

    let mut rng = Rng::new(41);
    let mut params = ParamSet::<f64>::new();
    let stack = CFMStack::init(
        &mut params,
        &mut rng,
        StackConfig { c, heads, s, m, layers: 2, classes: 3 },
    )
    .map_err(|e| e.to_string())?;
    for layer in &stack.layers {
        params.get_mut(layer.v_w).value = Tensor::zeros(&[c, c]);
        params.get_mut(layer.v_b).value = Tensor::zeros(&[c]);
    }
    let mut pool_nodes_src = Vec::new();
    for (i, e) in schedule.entries.iter().enumerate() {
        let pw = params.add(format!("pool{i}.w"), rng.trunc_normal_tensor(&[c * e.p * e.p, c], 0.2));
        let pb = params.add(format!("pool{i}.b"), Tensor::zeros(&[c]));
        pool_nodes_src.push((pw, pb));
    }

    let mut g = Graph::new();
    let pool_nodes: Vec<_> = pool_nodes_src
        .iter()
        .map(|&(w_, b_)| (g.param(&params, w_), g.param(&params, b_)))
        .collect();
    let target = g.input(rng.uniform_tensor(&[h, w, c], -2.0, 2.0));
    let past = g.input(rng.uniform_tensor(&[h, w, c], -2.0, 2.0));
    let windows = partition_windows(&mut g, target, s).map_err(|e| e.to_string())?;
    let ctx = assemble_context(&mut g, &schedule, &[(0, target), (1, past)], &pool_nodes, &windows)
        .map_err(|e| e.to_string())?;
    let ctx_before: Vec<Vec<u64>> = ctx
        .per_window
        .iter()
        .map(|&id| g.value(id).data().iter().map(|v| v.to_bits()).collect())
        .collect();
    let mined = mine(&mut g, &params, &stack, &windows, &ctx).map_err(|e| e.to_string())?;
    for (i, (win_in, win_out)) in windows.windows.iter().zip(&mined.windows).enumerate() {
        let same = g
            .value(*win_in)
            .data()
            .iter()
            .zip(g.value(*win_out).data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "window {i} changed under a zero value projection");
    }
    for (i, (&id, before)) in ctx.per_window.iter().zip(&ctx_before).enumerate() {
        let now: Vec<u64> = g.value(id).data().iter().map(|v| v.to_bits()).collect();
        ensure!(now == *before, "context tokens of window {i} changed");
    }
    Ok(format!(
        "{} windows and their {}-token contexts bit-identical through 2 layers",
        windows.count(),
        m
    ))
}

/// Instrumented forward passes on three shapes; the counted multiplies
/// must equal the closed-form totals exactly on both sides.
fn instrumented_multiplies_match_closed_forms() -> Outcome {
    let shapes: [(&str, ContextSchedule, usize, usize, usize, usize, usize); 3] = [
        (
            "20x20x8 l=3",
            walkthrough_schedule(),
            20, 20, 8, 2, 2,
        ),
        (
            "8x8x8 l=1",
            ContextSchedule { s: 4, entries: vec![entry(1, 4, 2), entry(0, 4, 1)] },
            8, 8, 8, 1, 2,
        ),
        (
            "16x16x16 l=3",
            ContextSchedule {
                s: 8,
                entries: vec![entry(3, 16, 4), entry(2, 8, 2), entry(1, 8, 2), entry(0, 8, 1)],
            },
            16, 16, 16, 2, 4,
        ),
    ];
    let mut lines = Vec::new();
    for (name, schedule, h, w, c, layers, heads) in shapes {
        let model = CostModel::from_schedule(&schedule, h, w, c, layers, heads).map_err(|e| e.to_string())?;
        let report = cost::measured_report(&model, 7, true).map_err(|e| e.to_string())?;
        let counted = report.cffm.measured_multiplies;
        ensure!(
            counted == Some(report.cffm.total_multiplies),
            "{name}: mining counted {counted:?} vs closed form {}",
            report.cffm.total_multiplies
        );
        let counted = report.baseline.measured_multiplies;
        ensure!(
            counted == Some(report.baseline.total_multiplies),
            "{name}: baseline counted {counted:?} vs closed form {}",
            report.baseline.total_multiplies
        );
        lines.push(format!(
            "{name}: {} and {}",
            report.cffm.total_multiplies, report.baseline.total_multiplies
        ));
    }
    Ok(lines.join("; "))
}

/// Median wall-clock of the mined forward beats dense attention over the
/// same 4-frame clip, 10 reps each, one thread.
fn mining_beats_dense_attention() -> Outcome {
    let cfg = BenchConfig::standard();
    ensure!(
        (cfg.h, cfg.w, cfg.c, cfg.frames, cfg.layers, cfg.reps) == (64, 64, 32, 4, 2, 10),
        "timing shape drifted: {cfg:?}"
    );
    let report = benchmark::run::<f32>(&cfg).map_err(|e| e.to_string())?;
    ensure!(report.cffm_ms.len() == 10 && report.baseline_ms.len() == 10, "rep counts");
    ensure!(
        report.cffm_median_ms < report.baseline_median_ms,
        "mining median {:.1}ms is not below the dense median {:.1}ms",
        report.cffm_median_ms,
        report.baseline_median_ms
    );
    Ok(format!(
        "medians {:.1}ms vs {:.1}ms ({:.0}x)",
        report.cffm_median_ms, report.baseline_median_ms, report.speedup
    ))
}

fn masks(frames: Vec<Vec<u8>>, h: usize, w: usize, classes: usize) -> Result<MaskSequence, String> {
    MaskSequence::new(frames, h, w, classes, 255).map_err(|e| e.to_string())
}

/// Windowed consistency recomputed from scratch: per window start, the
/// fraction of ground-truth-stable pixels whose prediction is stable too,
/// averaged over windows that have any.
fn enumerate_consistency(gt: &[Vec<u8>], pred: &[Vec<u8>], n: usize) -> Option<f64> {
    let mut ratios = Vec::new();
    for start in 0..=gt.len() - n {
        let window = start..start + n;
        let stable: Vec<usize> = (0..gt[0].len())
            .filter(|&p| gt[start][p] != 255)
            .filter(|&p| window.clone().all(|f| gt[f][p] == gt[start][p]))
            .collect();
        let held = stable
            .iter()
            .filter(|&&p| window.clone().all(|f| pred[f][p] == pred[start][p]))
            .count();
        if !stable.is_empty() {
            ratios.push(held as f64 / stable.len() as f64);
        }
    }
    if ratios.is_empty() {
        None
    } else {
        Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
    }
}

/// Six hand-counted metric cases plus windowed consistency on a 16-frame
/// synthetic clip checked against direct enumeration, exactly.
fn metrics_match_hand_counts() -> Outcome {
    // Window of one is always perfectly consistent, even for a prediction
    // that is wrong everywhere; overlap of that prediction is zero.
    let gt = masks(vec![vec![0, 0, 1, 1]], 1, 4, 2)?;
    let pred = masks(vec![vec![1, 1, 0, 0]], 1, 4, 2)?;
    ensure!(vc_n(&gt, &pred, 1, false).map_err(|e| e.to_string())? == Some(1.0), "VC_1 != 1");
    let rep = iou_report(&gt, &pred).map_err(|e| e.to_string())?;
    ensure!(rep.miou == 0.0 && rep.weighted_iou == 0.0, "all-wrong overlap not zero");

    // A prediction equal to the ground truth scores 1 on everything.
    let frames = vec![vec![0, 1, 2, 0], vec![0, 1, 2, 1], vec![2, 1, 2, 1]];
    let gt = masks(frames.clone(), 2, 2, 3)?;
    let pred = masks(frames, 2, 2, 3)?;
    for n in 1..=3 {
        for strict in [false, true] {
            let v = vc_n(&gt, &pred, n, strict).map_err(|e| e.to_string())?;
            ensure!(v == Some(1.0), "identity prediction: VC_{n} strict={strict} = {v:?}");
        }
    }
    let rep = iou_report(&gt, &pred).map_err(|e| e.to_string())?;
    ensure!(rep.miou == 1.0 && rep.weighted_iou == 1.0, "identity overlap not 1");

    // Ground truth stable at 3 of 4 pixels, prediction holds at 2 of
    // those 3, with labels that never match: 2/3 exactly.
    let gt = masks(vec![vec![0, 1, 2, 0], vec![0, 1, 2, 1]], 1, 4, 3)?;
    let pred = masks(vec![vec![1, 2, 0, 0], vec![1, 2, 1, 0]], 1, 4, 3)?;
    let v = vc_n(&gt, &pred, 2, false).map_err(|e| e.to_string())?;
    ensure!(v == Some(2.0 / 3.0), "hand 2/3 case gave {v:?}");

    // Stable but mislabeled: label-agnostic 1, strict 1/2.
    let gt = masks(vec![vec![0, 0], vec![0, 0]], 1, 2, 2)?;
    let pred = masks(vec![vec![1, 0], vec![1, 0]], 1, 2, 2)?;
    ensure!(vc_n(&gt, &pred, 2, false).map_err(|e| e.to_string())? == Some(1.0), "agnostic");
    ensure!(vc_n(&gt, &pred, 2, true).map_err(|e| e.to_string())? == Some(0.5), "strict");

    // Hand confusion matrix, 16 pixels, two classes, three flips:
    // class 0 has TP 7, FP 2, FN 1; class 1 has TP 6, FP 1, FN 2.
    let gt_f = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1];
    let mut pr_f = gt_f.clone();
    pr_f[1] = 1;
    pr_f[9] = 0;
    pr_f[10] = 0;
    let gt = masks(vec![gt_f], 4, 4, 2)?;
    let pred = masks(vec![pr_f], 4, 4, 2)?;
    let rep = iou_report(&gt, &pred).map_err(|e| e.to_string())?;
    ensure!(rep.per_class[0].iou == Some(7.0 / 10.0), "class 0 IoU {:?}", rep.per_class[0].iou);
    ensure!(rep.per_class[1].iou == Some(6.0 / 9.0), "class 1 IoU {:?}", rep.per_class[1].iou);
    ensure!(rep.miou == (7.0 / 10.0 + 6.0 / 9.0) / 2.0, "mean IoU {}", rep.miou);
    ensure!(
        rep.weighted_iou == 0.5 * (7.0 / 10.0) + 0.5 * (6.0 / 9.0),
        "weighted IoU {}",
        rep.weighted_iou
    );

    // Ignore pixels drop out of the counts entirely.
    let gt = masks(vec![vec![0, 255, 1, 1]], 2, 2, 2)?;
    let pred = masks(vec![vec![0, 1, 1, 1]], 2, 2, 2)?;
    let rep = iou_report(&gt, &pred).map_err(|e| e.to_string())?;
    ensure!(rep.miou == 1.0 && rep.gt_pixels_total == 3, "ignore handling");

    // A 16-frame synthetic clip scored against a lagged, flickering copy
    // of its ground truth; windows of 8 and 16 frames must equal the
    // from-scratch enumeration bit for bit.
    let spec = SynthClipSpec {
        frames: 16,
        height: 24,
        width: 48,
        classes: 4,
        objects: 3,
        object_side: 10,
        velocity: (1, 0),
        noise: 0.0,
        seed: 11,
    };
    let clip = gen_clip::<f64>(&spec).map_err(|e| e.to_string())?;
    let gt_frames: Vec<Vec<u8>> = (0..spec.frames).map(|t| clip.masks.frame(t).to_vec()).collect();
    let pred_frames: Vec<Vec<u8>> = (0..spec.frames)
        .map(|t| {
            let mut f = gt_frames[t.saturating_sub(1)].clone();
            if t % 2 == 1 {
                for p in (0..f.len()).step_by(17) {
                    f[p] = (f[p] + 1) % spec.classes as u8;
                }
            }
            f
        })
        .collect();
    let pred = masks(pred_frames.clone(), spec.height, spec.width, spec.classes)?;
    let mut summary = Vec::new();
    for n in [8usize, 16] {
        let got = vc_n(&clip.masks, &pred, n, false).map_err(|e| e.to_string())?;
        let want = enumerate_consistency(&gt_frames, &pred_frames, n);
        ensure!(got == want, "clip VC_{n}: {got:?} vs enumerated {want:?}");
        ensure!(want.is_some_and(|v| 0.0 < v && v < 1.0), "clip VC_{n} degenerate: {want:?}");
        let averaged = mvc(&[(&clip.masks, &pred)], n, false).map_err(|e| e.to_string())?;
        ensure!(Some(averaged) == want, "single-video average VC_{n} {averaged} vs {want:?}");
        summary.push(format!("VC_{n} {:.4}", want.unwrap()));
    }
    Ok(format!("6 hand cases; 16-frame clip {}", summary.join(", ")))
}

/// Streaming over a 16-frame clip encodes each frame once and matches the
/// recompute-everything oracle bit for bit.
fn streaming_matches_recomputation() -> Outcome {
    let mut cfg = RunConfig::toy();
    cfg.clip.frames = 16;
    cfg.validate().map_err(|e| e.to_string())?;
    let mut params = ParamSet::<f64>::new();
    let mut rng = Rng::new(9);
    let model = Model::init(&mut params, &mut rng, &cfg).map_err(|e| e.to_string())?;
    let clip = gen_clip::<f64>(&cfg.clip).map_err(|e| e.to_string())?;

    let streamed = stream_segment(&model, &params, &clip.frames).map_err(|e| e.to_string())?;
    let recomputed = recompute_segment(&model, &params, &clip.frames).map_err(|e| e.to_string())?;
    ensure!(streamed.encoder_calls == 16, "{} encoder calls for 16 frames", streamed.encoder_calls);
    ensure!(streamed.logits.len() == 16 && recomputed.len() == 16, "frame counts");
    for (t, (a, b)) in streamed.logits.iter().zip(&recomputed).enumerate() {
        ensure!(a.shape() == b.shape(), "frame {t}: shapes {:?} vs {:?}", a.shape(), b.shape());
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same, "frame {t}: streamed logits differ from recomputation");
    }
    Ok("16 frames, 16 encoder calls, logits bit-identical".to_string())
}

fn consistency_over_clips(trainer: &Trainer<f64>, n: usize) -> Result<f64, String> {
    let pairs: Vec<(MaskSequence, MaskSequence)> = (0..trainer.cfg.train.clips)
        .map(|i| {
            Ok((
                trainer.ground_truth_sequence(i).map_err(|e| e.to_string())?,
                trainer.predict_sequence(i).map_err(|e| e.to_string())?,
            ))
        })
        .collect::<Result<_, String>>()?;
    let refs: Vec<(&MaskSequence, &MaskSequence)> = pairs.iter().map(|(g, p)| (g, p)).collect();
    mvc(&refs, n, false).map_err(|e| e.to_string())
}

/// Seed-0 toy training on 8 synthetic clips reaches mean IoU 0.85 within
/// 300 iterations. Also trains a no-history ablation (every schedule
/// entry moved to the target frame) and logs both models' 8-frame
/// consistency for inspection without asserting the comparison.
fn toy_training_reaches_target() -> Outcome {
    let cfg = RunConfig::toy();
    ensure!(cfg.seed == 0 && cfg.train.clips == 8, "toy run drifted: {cfg:?}");
    ensure!(
        (cfg.clip.height, cfg.clip.width, cfg.clip.frames, cfg.classes) == (48, 48, 12, 4),
        "toy clips drifted: {:?}",
        cfg.clip
    );
    ensure!(
        cfg.schedule.reference_offsets() == [9, 6, 3],
        "toy offsets drifted: {:?}",
        cfg.schedule.reference_offsets()
    );
    let (report, trainer) = train_toy::<f64>(cfg.clone(), None).map_err(|e| e.to_string())?;
    ensure!(
        report.iterations_run <= 300,
        "{} iterations exceed the 300 budget",
        report.iterations_run
    );
    ensure!(
        report.final_miou >= 0.85,
        "final mean IoU {:.4} < 0.85 after {} iterations (loss {:.4})",
        report.final_miou,
        report.iterations_run,
        report.final_loss
    );
    let vc8 = consistency_over_clips(&trainer, 8)?;

    let mut ablated = cfg;
    for e in &mut ablated.schedule.entries {
        e.offset = 0;
    }
    let (ab_report, ab_trainer) = train_toy::<f64>(ablated, None).map_err(|e| e.to_string())?;
    let ab_vc8 = consistency_over_clips(&ab_trainer, 8)?;
    println!(
        "        note: 8-frame consistency {:.4} with history vs {:.4} target-only \
         (mean IoU {:.4} vs {:.4}); informational, not asserted",
        vc8, ab_vc8, report.final_miou, ab_report.final_miou
    );

    Ok(format!(
        "mean IoU {:.4} in {} iterations, 8-frame consistency {:.4}",
        report.final_miou, report.iterations_run, vc8
    ))
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panicked without a message".to_string())
}

#[test]
fn acceptance() {
    let criteria: [(&str, f64, fn() -> Outcome); 10] = [
        ("walkthrough cost arithmetic", 1.0, walkthrough_cost_arithmetic),
        ("default schedule token count", 1.0, default_schedule_token_count),
        ("degenerate reduction to self-attention", 5.0, degenerate_full_attention_equivalence),
        ("gradients vs central differences", 120.0, gradients_match_central_differences),
        ("zero value-projection identity", 1.0, zero_value_projection_identity),
        ("instrumented multiply counts", 30.0, instrumented_multiplies_match_closed_forms),
        ("mining beats dense attention", 120.0, mining_beats_dense_attention),
        ("metrics vs hand counts", 10.0, metrics_match_hand_counts),
        ("streaming matches recomputation", 60.0, streaming_matches_recomputation),
        ("toy training reaches target", 900.0, toy_training_reaches_target),
    ];
    let mut failures = Vec::new();
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(check).unwrap_or_else(|p| Err(panic_text(p)));
        let elapsed = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(_) if elapsed > budget => Err(format!("took {elapsed:.1}s, budget {budget:.0}s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<42} {elapsed:7.1}s  {detail}"),
            Err(why) => {
                println!("FAIL  {name:<42} {elapsed:7.1}s  {why}");
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "{} of 10 criteria failed: {failures:?}", failures.len());
}
