//! Slice-level forward and backward kernels shared by the tape and the
//! tape-free tensor functions in [`super::ops`].

use crate::scalar::Scalar;

#[inline]
fn source_row(p: usize, dk: usize, half: usize, len: usize) -> Option<usize> {
    let q = (p + dk).checked_sub(half)?;
    (q < len).then_some(q)
}

/// Same-padded 1-D convolution. `x` is `len × cin`, `w` is `k × cin × cout`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d<T: Scalar>(
    x: &[T],
    len: usize,
    cin: usize,
    w: &[T],
    k: usize,
    cout: usize,
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let half = k / 2;
    for p in 0..len {
        let row = &mut out[p * cout..(p + 1) * cout];
        match bias {
            Some(b) => row.copy_from_slice(b),
            None => row.fill(T::zero()),
        }
        for dk in 0..k {
            let Some(q) = source_row(p, dk, half, len) else {
                continue;
            };
            let xrow = &x[q * cin..(q + 1) * cin];
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let wrow = &w[(dk * cin + ci) * cout..(dk * cin + ci + 1) * cout];
                for (o, &wv) in row.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<T: Scalar>(
    x: &[T],
    len: usize,
    cin: usize,
    w: &[T],
    k: usize,
    cout: usize,
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let half = k / 2;
    for p in 0..len {
        let grow = &gout[p * cout..(p + 1) * cout];
        for dk in 0..k {
            let Some(q) = source_row(p, dk, half, len) else {
                continue;
            };
            for ci in 0..cin {
                let base = (dk * cin + ci) * cout;
                let wrow = &w[base..base + cout];
                if let Some(gx) = gx.as_deref_mut() {
                    let mut acc = T::zero();
                    for (&g, &wv) in grow.iter().zip(wrow) {
                        acc += g * wv;
                    }
                    gx[q * cin + ci] += acc;
                }
                if let Some(gw) = gw.as_deref_mut() {
                    let xv = x[q * cin + ci];
                    if xv != T::zero() {
                        for (gwv, &g) in gw[base..base + cout].iter_mut().zip(grow) {
                            *gwv += xv * g;
                        }
                    }
                }
            }
        }
    }
    if let Some(gb) = gb {
        for p in 0..len {
            for (b, &g) in gb.iter_mut().zip(&gout[p * cout..(p + 1) * cout]) {
                *b += g;
            }
        }
    }
}

/// Convolution of a one-hot input given by its hot index per position.
pub(crate) fn conv1d_onehot<T: Scalar>(
    hot: &[u32],
    channels: usize,
    w: &[T],
    k: usize,
    cout: usize,
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let len = hot.len();
    let half = k / 2;
    for p in 0..len {
        let row = &mut out[p * cout..(p + 1) * cout];
        match bias {
            Some(b) => row.copy_from_slice(b),
            None => row.fill(T::zero()),
        }
        for dk in 0..k {
            let Some(q) = source_row(p, dk, half, len) else {
                continue;
            };
            let base = (dk * channels + hot[q] as usize) * cout;
            for (o, &wv) in row.iter_mut().zip(&w[base..base + cout]) {
                *o += wv;
            }
        }
    }
}

pub(crate) fn conv1d_onehot_backward<T: Scalar>(
    hot: &[u32],
    channels: usize,
    k: usize,
    cout: usize,
    gout: &[T],
    gw: &mut [T],
    gb: Option<&mut [T]>,
) {
    let len = hot.len();
    let half = k / 2;
    for p in 0..len {
        let grow = &gout[p * cout..(p + 1) * cout];
        for dk in 0..k {
            let Some(q) = source_row(p, dk, half, len) else {
                continue;
            };
            let base = (dk * channels + hot[q] as usize) * cout;
            for (gwv, &g) in gw[base..base + cout].iter_mut().zip(grow) {
                *gwv += g;
            }
        }
    }
    if let Some(gb) = gb {
        for p in 0..len {
            for (b, &g) in gb.iter_mut().zip(&gout[p * cout..(p + 1) * cout]) {
                *b += g;
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Affine map `x · w + b` with `x: n`, `w: n × m`.
pub(crate) fn dense<T: Scalar>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let m = b.len();
    out.copy_from_slice(b);
    for (i, &xv) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(&w[i * m..(i + 1) * m]) {
            *o += xv * wv;
        }
    }
}

/// Column means of a `rows × cols` matrix.
pub(crate) fn mean_rows<T: Scalar>(x: &[T], rows: usize, cols: usize, out: &mut [T]) {
    out.fill(T::zero());
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    let inv = T::one() / T::of(rows as f64);
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Negative log-probability of one branch of a two-way softmax over negated
/// distances, plus the target-branch probability. Evaluated relative to the
/// smaller distance so neither `exp` nor `log` can overflow or hit zero.
pub(crate) fn two_class_nll<T: Scalar>(d_target: T, d_null: T, target_label: bool) -> (T, T) {
    let m = d_target.min(d_null);
    let et = (m - d_target).exp();
    let en = (m - d_null).exp();
    let z = et + en;
    let p_target = et / z;
    let d_label = if target_label { d_target } else { d_null };
    (d_label - m + z.ln(), p_target)
}
