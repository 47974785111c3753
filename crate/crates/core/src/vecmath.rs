//! Dot products and norms with f64 accumulation over f32 storage.
//!
//! Accumulation order is fixed (four independent lanes, then the remainder)
//! so results are bitwise reproducible regardless of thread count.

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let ra = ca.remainder();
    let rb = cb.remainder();
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] as f64 * y[0] as f64;
        acc[1] += x[1] as f64 * y[1] as f64;
        acc[2] += x[2] as f64 * y[2] as f64;
        acc[3] += x[3] as f64 * y[3] as f64;
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += *x as f64 * *y as f64;
    }
    s
}

/// Dot of an f64 working vector against an f32 stored row.
pub(crate) fn dot_mixed(a: &[f64], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        s += x * *y as f64;
    }
    s
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_f64(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit-length f64 copy of an f32 vector; `None` when the norm is zero.
pub(crate) fn unit_f64(v: &[f32]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return None;
    }
    Some(v.iter().map(|x| *x as f64 / n).collect())
}
