//! Index builders for structural rearrangements.
//!
//! Every reshuffle in the crate (patch flattening, window split/merge,
//! neighborhood extraction, slicing, padding) is a gather or scatter driven
//! by an index vector built here. Gather semantics: `out[k] = src[index[k]]`.
//! Scatter semantics: `out[index[k]] = src[k]`, all other cells zero.
//! Keeping the arithmetic in one place means a single exact backward rule
//! (scatter-add / gather) covers all of them.

use crate::error::{Error, Result};

/// Flattens non-overlapping p x p patches of an (h, w, c) map into channels.
///
/// Output shape is (h/p, w/p, p*p*c). Each output cell lists its patch's
/// cells in row-major patch order, each cell contributing its c channels
/// consecutively: output channel (dr*p + dc)*c + ch holds input channel ch
/// of patch cell (dr, dc).
pub fn space_to_depth_indices(h: usize, w: usize, c: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 {
        return Err(Error::contract("space_to_depth", "patch size must be >= 1"));
    }
    if h % p != 0 || w % p != 0 {
        return Err(Error::dimension(
            "space_to_depth",
            format!("patch size {p} must divide extents ({h}, {w})"),
        ));
    }
    let (gh, gw) = (h / p, w / p);
    let mut index = Vec::with_capacity(gh * gw * p * p * c);
    for i in 0..gh {
        for j in 0..gw {
            for dr in 0..p {
                for dc in 0..p {
                    let base = ((i * p + dr) * w + (j * p + dc)) * c;
                    index.extend(base..base + c);
                }
            }
        }
    }
    Ok(index)
}

/// Inverse of [`space_to_depth_indices`]: back to (h, w, c).
pub fn depth_to_space_indices(h: usize, w: usize, c: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 {
        return Err(Error::contract("depth_to_space", "patch size must be >= 1"));
    }
    if h % p != 0 || w % p != 0 {
        return Err(Error::dimension(
            "depth_to_space",
            format!("patch size {p} must divide extents ({h}, {w})"),
        ));
    }
    let gw = w / p;
    let mut index = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let (i, dr) = (r / p, r % p);
            let (j, dc) = (col / p, col % p);
            let base = ((i * gw + j) * p * p + dr * p + dc) * c;
            index.extend(base..base + c);
        }
    }
    Ok(index)
}

/// Rows of one s x s window of an (h, w, c) map, as an (s*s, c) matrix.
/// Token t = dr*s + dc is cell (wr*s + dr, wc*s + dc). Caller guarantees
/// the window coordinates are in range.
pub fn window_rows_indices(h: usize, w: usize, c: usize, s: usize, wr: usize, wc: usize) -> Vec<usize> {
    debug_assert!(h % s == 0 && w % s == 0);
    debug_assert!(wr < h / s && wc < w / s);
    let mut index = Vec::with_capacity(s * s * c);
    for dr in 0..s {
        for dc in 0..s {
            let base = ((wr * s + dr) * w + (wc * s + dc)) * c;
            index.extend(base..base + c);
        }
    }
    index
}

/// Rebuilds an (h, w, c) map from windows concatenated in scan order
/// (window rows outer, window tokens row-major inner), i.e. the inverse of
/// splitting with [`window_rows_indices`] for every (wr, wc).
pub fn window_merge_indices(h: usize, w: usize, c: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::dimension(
            "window_merge",
            format!("window size {s} must divide extents ({h}, {w})"),
        ));
    }
    let ww = w / s;
    let mut index = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let win = (r / s) * ww + col / s;
            let token = (r % s) * s + (col % s);
            let base = (win * s * s + token) * c;
            index.extend(base..base + c);
        }
    }
    Ok(index)
}

/// The g x g block of grid cells nearest `center` on a (gh, gw, c) grid,
/// as a (g*g, c) matrix in row-major block order.
///
/// The block covers offsets `center - g/2 + j` for j in 0..g on each axis
/// (for odd g that is symmetric around the center), and every index is
/// clamped into the grid independently, so blocks that overhang an edge
/// repeat the border cells instead of shrinking.
pub fn neighborhood_indices(
    gh: usize,
    gw: usize,
    c: usize,
    center: (i64, i64),
    g: usize,
) -> Result<Vec<usize>> {
    if g == 0 {
        return Err(Error::contract("neighborhood_gather", "block size must be >= 1"));
    }
    if gh == 0 || gw == 0 {
        return Err(Error::dimension("neighborhood_gather", "empty grid".to_string()));
    }
    let clamp = |v: i64, ext: usize| -> usize { v.clamp(0, ext as i64 - 1) as usize };
    let half = (g / 2) as i64;
    let mut index = Vec::with_capacity(g * g * c);
    for dr in 0..g as i64 {
        let r = clamp(center.0 - half + dr, gh);
        for dc in 0..g as i64 {
            let col = clamp(center.1 - half + dc, gw);
            let base = (r * gw + col) * c;
            index.extend(base..base + c);
        }
    }
    Ok(index)
}

/// Columns [start, start+len) of a (rows, cols) matrix.
pub fn col_slice_indices(rows: usize, cols: usize, start: usize, len: usize) -> Result<Vec<usize>> {
    if start + len > cols {
        return Err(Error::range(
            "col_slice",
            format!("columns [{start}, {}) exceed width {cols}", start + len),
        ));
    }
    let mut index = Vec::with_capacity(rows * len);
    for r in 0..rows {
        let base = r * cols + start;
        index.extend(base..base + len);
    }
    Ok(index)
}

/// Transpose of a (rows, cols) matrix.
pub fn transpose_indices(rows: usize, cols: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            index.push(i * cols + j);
        }
    }
    index
}

/// Scatter index that places an (h, w, c) map at offset (top, left) inside
/// a zeroed (ph, pw, c) map. Entry k gives the destination of source
/// element k.
pub fn pad_hw_scatter_indices(
    h: usize,
    w: usize,
    c: usize,
    top: usize,
    left: usize,
    ph: usize,
    pw: usize,
) -> Result<Vec<usize>> {
    if top + h > ph || left + w > pw {
        return Err(Error::dimension(
            "pad",
            format!("({h}, {w}) at offset ({top}, {left}) exceeds padded extents ({ph}, {pw})"),
        ));
    }
    let mut index = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let base = ((r + top) * pw + (col + left)) * c;
            index.extend(base..base + c);
        }
    }
    Ok(index)
}

/// Gather index for the inverse crop: the (h, w, c) region at (top, left)
/// of a (ph, pw, c) map.
pub fn crop_hw_indices(
    ph: usize,
    pw: usize,
    c: usize,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Result<Vec<usize>> {
    if top + h > ph || left + w > pw {
        return Err(Error::dimension(
            "crop",
            format!("({h}, {w}) at offset ({top}, {left}) exceeds source extents ({ph}, {pw})"),
        ));
    }
    let mut index = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let base = ((r + top) * pw + (col + left)) * c;
            index.extend(base..base + c);
        }
    }
    Ok(index)
}
