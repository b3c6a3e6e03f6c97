//! Builds the per-window context token sets.
//!
//! The target frame is split into s x s windows. For each schedule entry the
//! source frame is pooled down by p (patch flatten + learned projection back
//! to c channels), and each window takes the (r/p) x (r/p) pooled block
//! nearest its own center. Concatenating those blocks over all entries,
//! farthest frame first, gives the window's m x c context matrix. All steps
//! are recorded on the graph so gradients flow back into frame features and
//! pooling projections.

use std::ops::Range;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::schedule::ContextSchedule;
use crate::tensor::graph::{Graph, ValueId};
use crate::tensor::{layout, Scalar};

/// The target frame split into non-overlapping s x s windows.
#[derive(Debug)]
pub struct WindowGrid {
    /// One (s*s, c) matrix per window, row-major over the window grid.
    pub windows: Vec<ValueId>,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub s: usize,
}

impl WindowGrid {
    pub fn grid_rows(&self) -> usize {
        self.h / self.s
    }

    pub fn grid_cols(&self) -> usize {
        self.w / self.s
    }

    pub fn count(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    /// Center cell of window i in full-resolution coordinates.
    pub fn center(&self, i: usize) -> (usize, usize) {
        let (wr, wc) = (i / self.grid_cols(), i % self.grid_cols());
        (wr * self.s + self.s / 2, wc * self.s + self.s / 2)
    }
}

/// A frame pooled by p, carrying the graph node of its (h/p, w/p, c) grid.
#[derive(Debug, Clone, Copy)]
pub struct PooledFrame {
    pub grid: ValueId,
    pub gh: usize,
    pub gw: usize,
    pub c: usize,
    pub p: usize,
}

/// Which rows of a context matrix came from which schedule entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSegment {
    pub entry: usize,
    pub rows: Range<usize>,
}

/// Per-window context matrices plus their row provenance.
#[derive(Debug)]
pub struct ContextTokenSet {
    /// One (m, c) matrix per window, same order as [`WindowGrid::windows`].
    pub per_window: Vec<ValueId>,
    pub m: usize,
    pub c: usize,
    pub segments: Vec<TokenSegment>,
}

fn dims3<T: Scalar>(g: &Graph<T>, f: ValueId, op: &'static str) -> Result<(usize, usize, usize)> {
    let shape = g.value(f).shape();
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::dimension(op, format!("expected a rank-3 feature map, got {other:?}"))),
    }
}

/// Splits an (h, w, c) map into s x s windows, each an (s*s, c) matrix.
pub fn partition_windows<T: Scalar>(g: &mut Graph<T>, f: ValueId, s: usize) -> Result<WindowGrid> {
    let (h, w, c) = dims3(g, f, "partition_windows")?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::dimension(
            "partition_windows",
            format!("window size {s} must divide extents ({h}, {w})"),
        ));
    }
    let mut windows = Vec::with_capacity((h / s) * (w / s));
    for wr in 0..h / s {
        for wc in 0..w / s {
            let index = Rc::new(layout::window_rows_indices(h, w, c, s, wr, wc));
            windows.push(g.gather(f, index, &[s * s, c])?);
        }
    }
    Ok(WindowGrid { windows, h, w, c, s })
}

/// Inverse of [`partition_windows`]: reassembles the (h, w, c) map.
pub fn merge_windows<T: Scalar>(g: &mut Graph<T>, grid: &WindowGrid) -> Result<ValueId> {
    let stacked = g.concat(&grid.windows, 0)?;
    let index = Rc::new(layout::window_merge_indices(grid.h, grid.w, grid.c, grid.s)?);
    g.gather(stacked, index, &[grid.h, grid.w, grid.c])
}

/// Pools an (h, w, c) map by p: each p x p patch is flattened to c*p*p
/// channels and projected back to c by a learned affine map.
pub fn pool_reduce<T: Scalar>(
    g: &mut Graph<T>,
    f: ValueId,
    p: usize,
    proj: ValueId,
    bias: ValueId,
) -> Result<PooledFrame> {
    let (h, w, c) = dims3(g, f, "pool_reduce")?;
    let proj_shape = g.value(proj).shape().to_vec();
    if proj_shape != [c * p * p, c] {
        return Err(Error::dimension(
            "pool_reduce",
            format!("projection shape {proj_shape:?} does not map {} -> {c} channels", c * p * p),
        ));
    }
    let index = Rc::new(layout::space_to_depth_indices(h, w, c, p)?);
    let patches = g.gather(f, index, &[h / p, w / p, c * p * p])?;
    let grid = g.linear(patches, proj, bias)?;
    Ok(PooledFrame { grid, gh: h / p, gw: w / p, c, p })
}

/// The (r/p) x (r/p) pooled block nearest the window's center, as a
/// ((r/p)^2, c) matrix. The full-resolution center maps to pooled
/// coordinates by floor division; blocks overhanging an edge clamp to it.
pub fn gather_context<T: Scalar>(
    g: &mut Graph<T>,
    pooled: &PooledFrame,
    windows: &WindowGrid,
    window_index: usize,
    r: usize,
) -> Result<ValueId> {
    if window_index >= windows.count() {
        return Err(Error::range(
            "gather_context",
            format!("window {window_index} out of {}", windows.count()),
        ));
    }
    if r % pooled.p != 0 {
        return Err(Error::contract(
            "gather_context",
            format!("pool size {} must divide region {r}", pooled.p),
        ));
    }
    let (row_c, col_c) = windows.center(window_index);
    let center = ((row_c / pooled.p) as i64, (col_c / pooled.p) as i64);
    let side = r / pooled.p;
    let index = Rc::new(layout::neighborhood_indices(pooled.gh, pooled.gw, pooled.c, center, side)?);
    g.gather(pooled.grid, index, &[side * side, pooled.c])
}

/// Builds every window's (m, c) context matrix from the scheduled frames.
///
/// `frames` maps offsets (frames back from the target, 0 = target) to
/// feature nodes; supply order does not matter and extra offsets are
/// ignored. `pool_params` pairs one (projection, bias) with each schedule
/// entry. Rows follow schedule order, so the segment map is the same for
/// every window.
pub fn assemble_context<T: Scalar>(
    g: &mut Graph<T>,
    schedule: &ContextSchedule,
    frames: &[(usize, ValueId)],
    pool_params: &[(ValueId, ValueId)],
    windows: &WindowGrid,
) -> Result<ContextTokenSet> {
    schedule.validate()?;
    if pool_params.len() != schedule.entries.len() {
        return Err(Error::contract(
            "assemble_context",
            format!(
                "{} pooling parameter pairs for {} schedule entries",
                pool_params.len(),
                schedule.entries.len()
            ),
        ));
    }
    let (h, w, c) = (windows.h, windows.w, windows.c);
    let mut by_offset = Vec::new();
    for &(offset, f) in frames {
        if by_offset.iter().any(|&(o, _)| o == offset) {
            return Err(Error::contract("assemble_context", format!("offset {offset} supplied twice")));
        }
        let got = dims3(g, f, "assemble_context")?;
        if got != (h, w, c) {
            return Err(Error::dimension(
                "assemble_context",
                format!("frame at offset {offset} has extents {got:?}, target has ({h}, {w}, {c})"),
            ));
        }
        by_offset.push((offset, f));
    }

    let mut pooled = Vec::with_capacity(schedule.entries.len());
    let mut segments = Vec::with_capacity(schedule.entries.len());
    let mut row = 0;
    for (idx, entry) in schedule.entries.iter().enumerate() {
        let &(_, f) = by_offset
            .iter()
            .find(|&&(o, _)| o == entry.offset)
            .ok_or_else(|| {
                Error::contract("assemble_context", format!("no frame supplied for offset {}", entry.offset))
            })?;
        if h % entry.p != 0 || w % entry.p != 0 {
            return Err(Error::dimension(
                "assemble_context",
                format!("entry {idx}: pool size {} must divide extents ({h}, {w})", entry.p),
            ));
        }
        let (proj, bias) = pool_params[idx];
        pooled.push(pool_reduce(g, f, entry.p, proj, bias)?);
        segments.push(TokenSegment { entry: idx, rows: row..row + entry.tokens() });
        row += entry.tokens();
    }

    let m = schedule.token_count();
    debug_assert_eq!(row, m);
    let mut per_window = Vec::with_capacity(windows.count());
    for i in 0..windows.count() {
        let mut parts = Vec::with_capacity(schedule.entries.len());
        for (idx, entry) in schedule.entries.iter().enumerate() {
            parts.push(gather_context(g, &pooled[idx], windows, i, entry.r)?);
        }
        per_window.push(g.concat(&parts, 0)?);
    }
    Ok(ContextTokenSet { per_window, m, c, segments })
}
