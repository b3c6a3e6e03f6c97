//! Forward kernels on plain tensors.
//!
//! These are the only numeric primitives in the crate; the recording graph
//! wraps them and higher modules never touch element buffers directly.
//! `matmul` accumulates each output element in ascending-k order, exactly
//! like the naive triple loop, so oracle tests can demand bit equality.

use super::layout;
use super::{count, Scalar, Tensor};
use crate::error::{Error, Result};

/// Matrix product of (m, k) and (k, p). Adds m*k*p to the multiply counter.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, ka) = a.dims2()?;
    let (kb, p) = b.dims2()?;
    if ka != kb {
        return Err(Error::dimension(
            "matmul",
            format!("inner extents differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    count::record((m * ka * p) as u64);
    // Wide rows are walked in column tiles held in a local accumulator for
    // the whole k loop, cutting output-row traffic; every element still
    // accumulates in ascending-k order from zero, so the result stays
    // bit-identical to the naive triple loop.
    const TILE: usize = 64;
    let mut out = vec![T::zero(); m * p];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let a_row = &ad[i * ka..(i + 1) * ka];
        let out_row = &mut out[i * p..(i + 1) * p];
        if p < TILE {
            for (&aik, b_row) in a_row.iter().zip(bd.chunks_exact(p)) {
                for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                    *o += aik * bkj;
                }
            }
            continue;
        }
        let mut j0 = 0;
        while j0 < p {
            let j1 = (j0 + TILE).min(p);
            let mut acc = [T::zero(); TILE];
            let acc = &mut acc[..j1 - j0];
            for (&aik, b_row) in a_row.iter().zip(bd.chunks_exact(p)) {
                for (o, &bkj) in acc.iter_mut().zip(&b_row[j0..j1]) {
                    *o += aik * bkj;
                }
            }
            out_row[j0..j1].copy_from_slice(acc);
            j0 = j1;
        }
    }
    Tensor::from_vec(&[m, p], out)
}

/// Transpose of a matrix.
pub fn transpose<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.dims2()?;
    let xd = x.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = xd[i * c + j];
        }
    }
    Tensor::from_vec(&[c, r], out)
}

/// Row-wise softmax over the last axis, with the usual max subtraction.
/// Non-finite inputs are rejected rather than silently propagated.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = x.row_view();
    if cols == 0 {
        return Err(Error::dimension("softmax_rows", "empty rows".to_string()));
    }
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for r in 0..rows {
        let row = &xd[r * cols..(r + 1) * cols];
        let mut max = row[0];
        let mut finite = true;
        for &v in row {
            finite &= v.is_finite();
            if v > max {
                max = v;
            }
        }
        if !finite {
            let bad = row.iter().find(|v| !v.is_finite()).unwrap();
            return Err(Error::numeric("softmax_rows", format!("input contains {bad}")));
        }
        let out_row = &mut out[r * cols..(r + 1) * cols];
        let mut sum = T::zero();
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(
            "add",
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Adds a length-c bias vector to every row of an (.., c) tensor.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = x.row_view();
    if bias.len() != cols {
        return Err(Error::dimension(
            "add_bias",
            format!("bias length {} does not match row length {cols}", bias.len()),
        ));
    }
    let mut out = x.data().to_vec();
    let bd = bias.data();
    for r in 0..rows {
        for (o, &b) in out[r * cols..(r + 1) * cols].iter_mut().zip(bd) {
            *o += b;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, k: T) -> Tensor<T> {
    x.map(|v| v * k)
}

/// Affine map on the last axis: rows of `x` times `w` (c_in, c_out) plus
/// `bias`. Leading axes of `x` are preserved.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, c_in) = x.row_view();
    let (wi, c_out) = w.dims2()?;
    if wi != c_in {
        return Err(Error::dimension(
            "linear",
            format!("input row length {c_in} does not match weight {:?}", w.shape()),
        ));
    }
    let flat = x.reshape(&[rows, c_in])?;
    let y = add_bias(&matmul(&flat, w)?, bias)?;
    let mut out_shape: Vec<usize> = x.shape().to_vec();
    if out_shape.is_empty() {
        out_shape.push(c_out);
    } else {
        *out_shape.last_mut().unwrap() = c_out;
    }
    y.reshape(&out_shape)
}

/// Gather: `out[k] = src[index[k]]`.
pub fn gather<T: Scalar>(src: &Tensor<T>, index: &[usize], out_shape: &[usize]) -> Result<Tensor<T>> {
    if index.len() != super::numel(out_shape) {
        return Err(Error::dimension(
            "gather",
            format!("index length {} vs output shape {:?}", index.len(), out_shape),
        ));
    }
    let sd = src.data();
    let mut out = Vec::with_capacity(index.len());
    for &k in index {
        match sd.get(k) {
            Some(&v) => out.push(v),
            None => {
                return Err(Error::range(
                    "gather",
                    format!("index {k} out of range for {} elements", sd.len()),
                ))
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Scatter-add into a zeroed tensor: `out[index[k]] += src[k]`. This is the
/// exact adjoint of [`gather`] with the same index vector.
pub fn scatter_add<T: Scalar>(src: &Tensor<T>, index: &[usize], out_shape: &[usize]) -> Result<Tensor<T>> {
    if index.len() != src.len() {
        return Err(Error::dimension(
            "scatter_add",
            format!("index length {} vs source length {}", index.len(), src.len()),
        ));
    }
    let mut out = vec![T::zero(); super::numel(out_shape)];
    for (&k, &v) in index.iter().zip(src.data()) {
        match out.get_mut(k) {
            Some(o) => *o += v,
            None => {
                return Err(Error::range(
                    "scatter_add",
                    format!("index {k} out of range for {} elements", out.len()),
                ))
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Concatenation of matrices along rows (axis 0) or columns (axis 1).
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::contract("concat", "no inputs"));
    }
    match axis {
        0 => {
            let (_, cols) = parts[0].row_view();
            let mut data = Vec::new();
            let mut rows = 0;
            for part in parts {
                let (r, c) = part.row_view();
                if c != cols {
                    return Err(Error::dimension(
                        "concat",
                        format!("row lengths differ: {cols} vs {c}"),
                    ));
                }
                rows += r;
                data.extend_from_slice(part.data());
            }
            Tensor::from_vec(&[rows, cols], data)
        }
        1 => {
            let (rows, _) = parts[0].dims2()?;
            let mut widths = Vec::with_capacity(parts.len());
            let mut total = 0;
            for part in parts {
                let (r, c) = part.dims2()?;
                if r != rows {
                    return Err(Error::dimension(
                        "concat",
                        format!("row counts differ: {rows} vs {r}"),
                    ));
                }
                widths.push(c);
                total += c;
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (part, &w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&part.data()[r * w..(r + 1) * w]);
                }
            }
            Tensor::from_vec(&[rows, total], data)
        }
        _ => Err(Error::contract("concat", format!("axis {axis} not supported"))),
    }
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().copied().sum())
}

/// Smooth gate nonlinearity (tanh form). Chosen over a hinge because its
/// derivative is continuous, which keeps finite-difference checks clean.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_value)
}

pub(crate) fn gelu_value<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let a = T::from_f64(0.044715);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.7978845608028654);
    let a = T::from_f64(0.044715);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Mean softmax cross-entropy over rows of (rows, classes) logits.
/// Rows whose label equals `ignore` are excluded from the mean; labels
/// must otherwise be < classes, and at least one row must count.
pub fn cross_entropy_mean<T: Scalar>(logits: &Tensor<T>, labels: &[u32], ignore: u32) -> Result<Tensor<T>> {
    let (rows, classes) = logits.row_view();
    if labels.len() != rows {
        return Err(Error::dimension(
            "cross_entropy",
            format!("{} labels for {rows} logit rows", labels.len()),
        ));
    }
    let ld = logits.data();
    let mut total = T::zero();
    let mut valid = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        if label == ignore {
            continue;
        }
        if label as usize >= classes {
            return Err(Error::range(
                "cross_entropy",
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        let row = &ld[r * classes..(r + 1) * classes];
        let mut max = row[0];
        for &v in row {
            if !v.is_finite() {
                return Err(Error::numeric("cross_entropy", format!("logit is {v}")));
            }
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for &v in row {
            sum += (v - max).exp();
        }
        total += sum.ln() - (row[label as usize] - max);
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::contract("cross_entropy", "every label is the ignore value"));
    }
    Ok(Tensor::scalar(total / T::from_f64(valid as f64)))
}

/// Gradient of [`cross_entropy_mean`] with respect to the logits, scaled by
/// the upstream scalar `seed`.
pub(crate) fn cross_entropy_backward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u32],
    ignore: u32,
    seed: T,
) -> Result<Tensor<T>> {
    let (_rows, classes) = logits.row_view();
    let valid = labels.iter().filter(|&&l| l != ignore).count();
    let soft = softmax_rows(logits)?;
    let mut grad = vec![T::zero(); logits.len()];
    let inv = seed / T::from_f64(valid as f64);
    for (r, &label) in labels.iter().enumerate() {
        if label == ignore {
            continue;
        }
        let row = &soft.data()[r * classes..(r + 1) * classes];
        let out = &mut grad[r * classes..(r + 1) * classes];
        for (j, (o, &p)) in out.iter_mut().zip(row).enumerate() {
            let target = if j == label as usize { T::one() } else { T::zero() };
            *o = (p - target) * inv;
        }
    }
    Tensor::from_vec(logits.shape(), grad)
}

/// Patch flattening: (h, w, c) to (h/p, w/p, p*p*c). Layout documented at
/// [`layout::space_to_depth_indices`].
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    let index = layout::space_to_depth_indices(h, w, c, p)?;
    gather(x, &index, &[h / p, w / p, p * p * c])
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (gh, gw, cpp) = x.dims3()?;
    if p == 0 || cpp % (p * p) != 0 {
        return Err(Error::dimension(
            "depth_to_space",
            format!("channel extent {cpp} is not a multiple of {p}*{p}"),
        ));
    }
    let c = cpp / (p * p);
    let (h, w) = (gh * p, gw * p);
    let index = layout::depth_to_space_indices(h, w, c, p)?;
    gather(x, &index, &[h, w, c])
}

/// The g*g cells around `center` of an (gh, gw, c) grid as a (g*g, c)
/// matrix; border cells repeat (see [`layout::neighborhood_indices`]).
pub fn neighborhood_gather<T: Scalar>(x: &Tensor<T>, center: (i64, i64), g: usize) -> Result<Tensor<T>> {
    let (gh, gw, c) = x.dims3()?;
    let index = layout::neighborhood_indices(gh, gw, c, center, g)?;
    gather(x, &index, &[g * g, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::Rng;

    // Independent oracle: textbook triple loop, no shared code with matmul.
    fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = a.dims2().unwrap();
        let (_, p) = b.dims2().unwrap();
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a.data()[i * k + kk] * b.data()[kk * p + j];
                }
                out[i * p + j] = acc;
            }
        }
        Tensor::from_vec(&[m, p], out).unwrap()
    }

    #[test]
    fn matmul_identity_returns_input() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
        let mut eye = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(matmul(&x, &eye).unwrap(), x);
    }

    #[test]
    fn matmul_tiny_case() {
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = Rng::new(11);
        let a = rng.uniform_tensor::<f64>(&[7, 5], -1.0, 1.0);
        let b = rng.uniform_tensor::<f64>(&[5, 3], -1.0, 1.0);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_oracle(&a, &b);
        assert_eq!(got.data(), want.data(), "64-bit results must match exactly");
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_row() {
        let x = Tensor::from_vec(&[1, 3], vec![0.0f64, 0.0, 0.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_gap_saturates() {
        let x = Tensor::from_vec(&[1, 2], vec![1000.0f64, 0.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        // direct evaluation without max subtraction
        let raw: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = raw.iter().sum();
        for (got, want) in y.data().iter().zip(raw.iter().map(|e| e / z)) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Tensor::from_vec(&[1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_rows(&x), Err(Error::Numeric { .. })));
    }

    #[test]
    fn linear_identity_weights() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut eye = Tensor::<f64>::zeros(&[2, 2]);
        eye.data_mut()[0] = 1.0;
        eye.data_mut()[3] = 1.0;
        let b = Tensor::zeros(&[2]);
        assert_eq!(linear(&x, &eye, &b).unwrap(), x);
    }

    #[test]
    fn linear_zero_input_broadcasts_bias() {
        let x = Tensor::<f64>::zeros(&[3, 2]);
        let w = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn linear_matches_per_row_dot_oracle() {
        let mut rng = Rng::new(3);
        let x = rng.uniform_tensor::<f64>(&[3, 4], -2.0, 2.0);
        let w = rng.uniform_tensor::<f64>(&[4, 2], -2.0, 2.0);
        let b = rng.uniform_tensor::<f64>(&[2], -2.0, 2.0);
        let y = linear(&x, &w, &b).unwrap();
        for r in 0..3 {
            for j in 0..2 {
                let mut want = b.data()[j];
                for k in 0..4 {
                    want += x.data()[r * 4 + k] * w.data()[k * 2 + j];
                }
                let got = y.data()[r * 2 + j];
                assert!((got - want).abs() < 1e-12, "row {r} col {j}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn linear_keeps_leading_shape() {
        let x = Tensor::<f64>::zeros(&[2, 3, 4]);
        let w = Tensor::<f64>::zeros(&[4, 5]);
        let b = Tensor::<f64>::zeros(&[5]);
        assert_eq!(linear(&x, &w, &b).unwrap().shape(), &[2, 3, 5]);
    }

    #[test]
    fn space_to_depth_4x4_layout() {
        let x = Tensor::from_vec(&[4, 4, 1], (0..16).map(|i| i as f64).collect()).unwrap();
        let y = space_to_depth(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4]);
        assert_eq!(&y.data()[0..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&y.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn space_to_depth_p1_is_identity() {
        let mut rng = Rng::new(5);
        let x = rng.uniform_tensor::<f64>(&[3, 5, 2], -1.0, 1.0);
        assert_eq!(space_to_depth(&x, 1).unwrap().data(), x.data());
    }

    #[test]
    fn space_to_depth_round_trip() {
        let mut rng = Rng::new(6);
        let x = rng.uniform_tensor::<f64>(&[6, 6, 2], -1.0, 1.0);
        let y = space_to_depth(&x, 3).unwrap();
        let back = depth_to_space(&y, 3).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn neighborhood_gather_full_grid() {
        let x = Tensor::from_vec(&[5, 5, 1], (0..25).map(|i| i as f64).collect()).unwrap();
        let y = neighborhood_gather(&x, (2, 2), 5).unwrap();
        assert_eq!(y.shape(), &[25, 1]);
        let expected: Vec<f64> = (0..25).map(|i| i as f64).collect();
        assert_eq!(y.data(), &expected[..]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_k() {
        let logits = Tensor::<f64>::zeros(&[4, 3]);
        let loss = cross_entropy_mean(&logits, &[0, 1, 2, 0], 255).unwrap();
        assert!((loss.item().unwrap() - (3.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_tiny() {
        let mut logits = Tensor::<f64>::zeros(&[1, 3]);
        logits.data_mut()[1] = 100.0;
        let loss = cross_entropy_mean(&logits, &[1], 255).unwrap();
        assert!(loss.item().unwrap() < 1e-8);
    }

    #[test]
    fn cross_entropy_skips_ignore_label() {
        let mut logits = Tensor::<f64>::zeros(&[2, 2]);
        logits.data_mut()[0] = 50.0; // row 0 confidently class 0
        let full = cross_entropy_mean(&logits, &[0, 1], 255).unwrap().item().unwrap();
        let masked = cross_entropy_mean(&logits, &[0, 255], 255).unwrap().item().unwrap();
        assert!(masked < full, "ignored row must not contribute");
        assert!(masked < 1e-8);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(cross_entropy_mean(&logits, &[3], 255), Err(Error::Range { .. })));
        assert!(matches!(cross_entropy_mean(&logits, &[255], 255), Err(Error::Contract { .. })));
    }

    #[test]
    fn gather_scatter_are_adjoint_shapes() {
        let x = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let idx = [3, 3, 0];
        let g = gather(&x, &idx, &[3]).unwrap();
        assert_eq!(g.data(), &[4.0, 4.0, 1.0]);
        let s = scatter_add(&g, &idx, &[4]).unwrap();
        // duplicated index 3 accumulates
        assert_eq!(s.data(), &[1.0, 0.0, 0.0, 8.0]);
    }

    #[test]
    fn concat_axes() {
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let rows = concat(&[&a, &b], 0).unwrap();
        assert_eq!(rows.shape(), &[2, 2]);
        assert_eq!(rows.data(), &[1.0, 2.0, 3.0, 4.0]);
        let cols = concat(&[&a, &b], 1).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
        let c = Tensor::from_vec(&[2, 1], vec![9.0, 9.0]).unwrap();
        assert!(concat(&[&a, &c], 1).is_err());
    }

    #[test]
    fn counter_counts_matmul_only() {
        let a = Tensor::<f64>::zeros(&[3, 4]);
        let b = Tensor::<f64>::zeros(&[4, 5]);
        let (_, muls) = count::counted(|| {
            let y = matmul(&a, &b).unwrap();
            let _ = softmax_rows(&y).unwrap();
            let _ = add(&y, &y).unwrap();
        });
        assert_eq!(muls, 3 * 4 * 5);
    }
}
