//! Matrix kernels shared by convolution and its gradients.
//!
//! Every output element is a dot product accumulated in `f64` with a
//! summation order that depends only on the inner dimension, never on how
//! many rows are computed together. Pruned and fused subnetworks rely on
//! this to reproduce the source network's arithmetic bit for bit.

/// `out[m][p] = init(m) + sum_k a[m][k] * b[k][p]`, with `k` summed in
/// ascending order.
pub(crate) fn gemm_f64(
    a: &[f32],
    rows: usize,
    inner: usize,
    b: &[f64],
    cols: usize,
    init: impl Fn(usize) -> f64,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for m in 0..rows {
        let arow = &a[m * inner..(m + 1) * inner];
        let acc = &mut out[m * cols..(m + 1) * cols];
        acc.fill(init(m));
        let mut k = 0;
        while k + 4 <= inner {
            let (w0, w1, w2, w3) = (
                arow[k] as f64,
                arow[k + 1] as f64,
                arow[k + 2] as f64,
                arow[k + 3] as f64,
            );
            let r0 = &b[k * cols..(k + 1) * cols];
            let r1 = &b[(k + 1) * cols..(k + 2) * cols];
            let r2 = &b[(k + 2) * cols..(k + 3) * cols];
            let r3 = &b[(k + 3) * cols..(k + 4) * cols];
            for ((((a, x0), x1), x2), x3) in acc.iter_mut().zip(r0).zip(r1).zip(r2).zip(r3) {
                let mut s = *a;
                s += w0 * x0;
                s += w1 * x1;
                s += w2 * x2;
                s += w3 * x3;
                *a = s;
            }
            k += 4;
        }
        while k < inner {
            let w = arow[k] as f64;
            let r = &b[k * cols..(k + 1) * cols];
            for (a, x) in acc.iter_mut().zip(r) {
                *a += w * x;
            }
            k += 1;
        }
    }
}

/// Same as [`gemm_f64`] but rounds the result to `f32`.
pub(crate) fn gemm_f32(
    a: &[f32],
    rows: usize,
    inner: usize,
    b: &[f64],
    cols: usize,
    init: impl Fn(usize) -> f64,
    out: &mut [f32],
) {
    let mut acc = vec![0.0f64; cols];
    for m in 0..rows {
        gemm_f64(
            &a[m * inner..(m + 1) * inner],
            1,
            inner,
            b,
            cols,
            |_| init(m),
            &mut acc,
        );
        for (o, v) in out[m * cols..(m + 1) * cols].iter_mut().zip(&acc) {
            *o = *v as f32;
        }
    }
}

/// Fixed-lane `f64` dot product. The lane split depends only on the length.
pub(crate) fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
