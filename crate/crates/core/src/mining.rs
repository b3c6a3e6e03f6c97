//! Cross-frame mining: window queries attend to their fixed context tokens.
//!
//! Each of the N layers projects the window features to queries and the
//! context matrix to keys/values (the context itself is never updated),
//! runs multi-head attention with a learned per-(query, token) bias table,
//! and adds the layer input back. A small MLP head turns the concatenation
//! of mined and original features into class logits; an auxiliary linear
//! head on the original features feeds a weighted secondary loss.

use std::rc::Rc;

use crate::assemble::{ContextTokenSet, WindowGrid};
use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, ParamId, ParamSet, ValueId};
use crate::tensor::rng::Rng;
use crate::tensor::{layout, Scalar, Tensor};

pub const DEFAULT_LAMBDA_AUX: f64 = 0.4;
/// Weight initialization scale shared by every learned projection.
pub const INIT_SIGMA: f64 = 0.02;

/// One attention layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct AttentionLayer {
    pub q_w: ParamId,
    pub q_b: ParamId,
    pub k_w: ParamId,
    pub k_b: ParamId,
    pub v_w: ParamId,
    pub v_b: ParamId,
    /// Learned score offsets, one (s*s, m) table per head.
    pub bias: ParamId,
}

impl AttentionLayer {
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut Rng,
        prefix: &str,
        c: usize,
        heads: usize,
        s: usize,
        m: usize,
    ) -> Self {
        let weight = |params: &mut ParamSet<T>, rng: &mut Rng, name: String| {
            params.add(name, rng.trunc_normal_tensor(&[c, c], INIT_SIGMA))
        };
        AttentionLayer {
            q_w: weight(params, rng, format!("{prefix}.q.w")),
            q_b: params.add(format!("{prefix}.q.b"), Tensor::zeros(&[c])),
            k_w: weight(params, rng, format!("{prefix}.k.w")),
            k_b: params.add(format!("{prefix}.k.b"), Tensor::zeros(&[c])),
            v_w: weight(params, rng, format!("{prefix}.v.w")),
            v_b: params.add(format!("{prefix}.v.b"), Tensor::zeros(&[c])),
            bias: params.add(format!("{prefix}.bias"), Tensor::zeros(&[heads, s * s, m])),
        }
    }
}

/// Shape of a mining stack; `m` must match the schedule's token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackConfig {
    pub c: usize,
    pub heads: usize,
    pub s: usize,
    pub m: usize,
    pub layers: usize,
    pub classes: usize,
}

/// N attention layers plus the segmentation and auxiliary heads.
#[derive(Debug, Clone)]
pub struct CFMStack {
    pub layers: Vec<AttentionLayer>,
    pub cfg: StackConfig,
    pub head_hidden_w: ParamId,
    pub head_hidden_b: ParamId,
    pub head_out_w: ParamId,
    pub head_out_b: ParamId,
    pub aux_w: ParamId,
    pub aux_b: ParamId,
}

impl CFMStack {
    pub fn init<T: Scalar>(params: &mut ParamSet<T>, rng: &mut Rng, cfg: StackConfig) -> Result<Self> {
        if cfg.heads == 0 || cfg.c % cfg.heads != 0 {
            return Err(Error::contract(
                "cfm_stack",
                format!("head count {} must divide channels {}", cfg.heads, cfg.c),
            ));
        }
        if cfg.layers == 0 {
            return Err(Error::contract("cfm_stack", "at least one layer required"));
        }
        if cfg.s == 0 || cfg.m == 0 || cfg.classes == 0 {
            return Err(Error::contract("cfm_stack", "s, m and class count must be >= 1"));
        }
        let layers = (0..cfg.layers)
            .map(|n| {
                AttentionLayer::init(params, rng, &format!("cfm.layer{n}"), cfg.c, cfg.heads, cfg.s, cfg.m)
            })
            .collect();
        let (c, k) = (cfg.c, cfg.classes);
        Ok(CFMStack {
            layers,
            cfg,
            head_hidden_w: params.add("head.hidden.w", rng.trunc_normal_tensor(&[2 * c, c], INIT_SIGMA)),
            head_hidden_b: params.add("head.hidden.b", Tensor::zeros(&[c])),
            head_out_w: params.add("head.out.w", rng.trunc_normal_tensor(&[c, k], INIT_SIGMA)),
            head_out_b: params.add("head.out.b", Tensor::zeros(&[k])),
            aux_w: params.add("aux.w", rng.trunc_normal_tensor(&[c, k], INIT_SIGMA)),
            aux_b: params.add("aux.b", Tensor::zeros(&[k])),
        })
    }
}

/// Attention matrices recorded during [`mine_traced`], indexed
/// [layer][window][head]; each is an (s*s, m) node.
#[derive(Debug, Default)]
pub struct MineTrace {
    pub attention: Vec<Vec<Vec<ValueId>>>,
}

fn dims2<T: Scalar>(g: &Graph<T>, x: ValueId, op: &'static str) -> Result<(usize, usize)> {
    match g.value(x).shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::dimension(op, format!("expected a matrix, got {other:?}"))),
    }
}

/// Queries from the window, keys and values from the context tokens.
pub fn project_qkv<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    layer: &AttentionLayer,
    window: ValueId,
    ctx: ValueId,
) -> Result<(ValueId, ValueId, ValueId)> {
    let c = params.get(layer.q_w).value.shape()[0];
    let (_, wc) = dims2(g, window, "project_qkv")?;
    let (_, cc) = dims2(g, ctx, "project_qkv")?;
    if wc != c || cc != c {
        return Err(Error::dimension(
            "project_qkv",
            format!("window width {wc} and context width {cc} must equal channels {c}"),
        ));
    }
    let (qw, qb) = (g.param(params, layer.q_w), g.param(params, layer.q_b));
    let (kw, kb) = (g.param(params, layer.k_w), g.param(params, layer.k_b));
    let (vw, vb) = (g.param(params, layer.v_w), g.param(params, layer.v_b));
    let q = g.linear(window, qw, qb)?;
    let k = g.linear(ctx, kw, kb)?;
    let v = g.linear(ctx, vw, vb)?;
    Ok((q, k, v))
}

/// Per-head column slices and bias rows, shared across windows of a layer.
struct HeadSlices {
    q_cols: Vec<Rc<Vec<usize>>>,
    kv_cols: Vec<Rc<Vec<usize>>>,
    bias_rows: Vec<Rc<Vec<usize>>>,
}

fn head_slices(cfg: &StackConfig, rows_q: usize, m: usize) -> Result<HeadSlices> {
    let dh = cfg.c / cfg.heads;
    let mut q_cols = Vec::with_capacity(cfg.heads);
    let mut kv_cols = Vec::with_capacity(cfg.heads);
    let mut bias_rows = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        q_cols.push(Rc::new(layout::col_slice_indices(rows_q, cfg.c, h * dh, dh)?));
        kv_cols.push(Rc::new(layout::col_slice_indices(m, cfg.c, h * dh, dh)?));
        let start = h * rows_q * m;
        bias_rows.push(Rc::new((start..start + rows_q * m).collect()));
    }
    Ok(HeadSlices { q_cols, kv_cols, bias_rows })
}

fn attention_update_with<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    layer: &AttentionLayer,
    cfg: &StackConfig,
    slices: &HeadSlices,
    win_in: ValueId,
    ctx: ValueId,
) -> Result<(ValueId, Vec<ValueId>)> {
    let (rows_q, _) = dims2(g, win_in, "attention_update")?;
    let (m, _) = dims2(g, ctx, "attention_update")?;
    let dh = cfg.c / cfg.heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let (q, k, v) = project_qkv(g, params, layer, win_in, ctx)?;
    let bias = g.param(params, layer.bias);
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut attns = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.gather(q, slices.q_cols[h].clone(), &[rows_q, dh])?;
        let kh = g.gather(k, slices.kv_cols[h].clone(), &[m, dh])?;
        let vh = g.gather(v, slices.kv_cols[h].clone(), &[m, dh])?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, scale);
        let bh = g.gather(bias, slices.bias_rows[h].clone(), &[rows_q, m])?;
        let biased = g.add(scaled, bh)?;
        let attn = g.softmax_rows(biased)?;
        attns.push(attn);
        outs.push(g.matmul(attn, vh)?);
    }
    let merged = g.concat(&outs, 1)?;
    let out = g.add(merged, win_in)?;
    Ok((out, attns))
}

/// One mining step on one window: multi-head attention from the window's
/// queries to the context tokens (score scale 1/sqrt(c/H), plus the learned
/// bias table), with the layer input added back.
pub fn attention_update<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    layer: &AttentionLayer,
    cfg: &StackConfig,
    win_in: ValueId,
    ctx: ValueId,
) -> Result<ValueId> {
    let (rows_q, _) = dims2(g, win_in, "attention_update")?;
    let (m, _) = dims2(g, ctx, "attention_update")?;
    let slices = head_slices(cfg, rows_q, m)?;
    let (out, _) = attention_update_with(g, params, layer, cfg, &slices, win_in, ctx)?;
    Ok(out)
}

/// Runs all layers over every window and also returns the attention nodes.
///
/// Layer n consumes the windows produced by layer n-1; the context tokens
/// are re-projected by each layer's own K/V parameters but never modified.
pub fn mine_traced<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    stack: &CFMStack,
    windows: &WindowGrid,
    ctx: &ContextTokenSet,
) -> Result<(WindowGrid, MineTrace)> {
    let cfg = &stack.cfg;
    if windows.s != cfg.s || windows.c != cfg.c {
        return Err(Error::dimension(
            "mine",
            format!("window grid (s={}, c={}) does not match stack (s={}, c={})", windows.s, windows.c, cfg.s, cfg.c),
        ));
    }
    if ctx.m != cfg.m || ctx.c != cfg.c {
        return Err(Error::dimension(
            "mine",
            format!("context (m={}, c={}) does not match stack (m={}, c={})", ctx.m, ctx.c, cfg.m, cfg.c),
        ));
    }
    if ctx.per_window.len() != windows.count() {
        return Err(Error::contract(
            "mine",
            format!("{} context sets for {} windows", ctx.per_window.len(), windows.count()),
        ));
    }
    let slices = head_slices(cfg, cfg.s * cfg.s, cfg.m)?;
    let mut current = windows.windows.clone();
    let mut trace = MineTrace::default();
    for layer in &stack.layers {
        let mut next = Vec::with_capacity(current.len());
        let mut layer_attn = Vec::with_capacity(current.len());
        for (win, ctx_i) in current.iter().zip(&ctx.per_window) {
            let (out, attns) = attention_update_with(g, params, layer, cfg, &slices, *win, *ctx_i)?;
            next.push(out);
            layer_attn.push(attns);
        }
        current = next;
        trace.attention.push(layer_attn);
    }
    let mined = WindowGrid { windows: current, h: windows.h, w: windows.w, c: windows.c, s: windows.s };
    Ok((mined, trace))
}

/// As [`mine_traced`] without the attention trace.
pub fn mine<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    stack: &CFMStack,
    windows: &WindowGrid,
    ctx: &ContextTokenSet,
) -> Result<WindowGrid> {
    mine_traced(g, params, stack, windows, ctx).map(|(w, _)| w)
}

fn dims3<T: Scalar>(g: &Graph<T>, x: ValueId, op: &'static str) -> Result<(usize, usize, usize)> {
    match g.value(x).shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::dimension(op, format!("expected a rank-3 map, got {other:?}"))),
    }
}

/// Per-pixel MLP on the channel concatenation of mined and original
/// features: linear (2c -> c), nonlinearity, linear (c -> K).
pub fn segment_head<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    stack: &CFMStack,
    f_mined: ValueId,
    f_orig: ValueId,
) -> Result<ValueId> {
    let a = dims3(g, f_mined, "segment_head")?;
    let b = dims3(g, f_orig, "segment_head")?;
    if a != b || a.2 != stack.cfg.c {
        return Err(Error::dimension(
            "segment_head",
            format!("feature maps {a:?} vs {b:?} must match with {} channels", stack.cfg.c),
        ));
    }
    let (h, w, c) = a;
    let m2 = g.reshape(f_mined, &[h * w, c])?;
    let o2 = g.reshape(f_orig, &[h * w, c])?;
    let cat = g.concat(&[m2, o2], 1)?;
    let (hw_w, hw_b) = (g.param(params, stack.head_hidden_w), g.param(params, stack.head_hidden_b));
    let (ow, ob) = (g.param(params, stack.head_out_w), g.param(params, stack.head_out_b));
    let hidden = g.linear(cat, hw_w, hw_b)?;
    let act = g.gelu(hidden);
    let logits = g.linear(act, ow, ob)?;
    g.reshape(logits, &[h, w, stack.cfg.classes])
}

/// Single linear (c -> K) on the original features.
pub fn aux_head<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    stack: &CFMStack,
    f_orig: ValueId,
) -> Result<ValueId> {
    let (h, w, c) = dims3(g, f_orig, "aux_head")?;
    if c != stack.cfg.c {
        return Err(Error::dimension(
            "aux_head",
            format!("{c} channels do not match stack channels {}", stack.cfg.c),
        ));
    }
    let flat = g.reshape(f_orig, &[h * w, c])?;
    let (aw, ab) = (g.param(params, stack.aux_w), g.param(params, stack.aux_b));
    let logits = g.linear(flat, aw, ab)?;
    g.reshape(logits, &[h, w, stack.cfg.classes])
}

/// Mean cross entropy on the main logits plus `lambda_aux` times the mean
/// cross entropy on the auxiliary logits. `labels` is row-major over the
/// spatial extents; `ignore` pixels are excluded from both means.
pub fn loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: ValueId,
    aux_logits: Option<ValueId>,
    labels: &[u32],
    ignore: u32,
    lambda_aux: f64,
) -> Result<ValueId> {
    let (h, w, k) = dims3(g, logits, "loss")?;
    if labels.len() != h * w {
        return Err(Error::dimension(
            "loss",
            format!("{} labels for {h}x{w} logits", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != ignore && l as usize >= k) {
        return Err(Error::contract(
            "loss",
            format!("label {bad} out of range for {k} classes (ignore = {ignore})"),
        ));
    }
    let labels = Rc::new(labels.to_vec());
    let flat = g.reshape(logits, &[h * w, k])?;
    let main = g.cross_entropy_mean(flat, labels.clone(), ignore)?;
    let Some(aux) = aux_logits else {
        return Ok(main);
    };
    let (ah, aw_, ak) = dims3(g, aux, "loss")?;
    if (ah, aw_, ak) != (h, w, k) {
        return Err(Error::dimension(
            "loss",
            format!("auxiliary logits ({ah}, {aw_}, {ak}) do not match main ({h}, {w}, {k})"),
        ));
    }
    let aux_flat = g.reshape(aux, &[h * w, k])?;
    let aux_ce = g.cross_entropy_mean(aux_flat, labels, ignore)?;
    let weighted = g.scale(aux_ce, T::from_f64(lambda_aux));
    g.add(main, weighted)
}
