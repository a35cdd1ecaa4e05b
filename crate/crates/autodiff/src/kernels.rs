//! Dense matrix kernels used by the tape.
//!
//! Every output row is computed by the same sequential loop whether the rows
//! are distributed over a rayon pool or not, so results are bitwise identical
//! across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the parallel path is not worth the fork.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn matmul_row(a_row: &[f32], b: &[f32], n: usize, out: &mut [f32]) {
    out.fill(0.0);
    for (kk, &aik) in a_row.iter().enumerate() {
        if aik != 0.0 {
            axpy(aik, &b[kk * n..(kk + 1) * n], out);
        }
    }
}

/// `out[m,n] = a[m,k] · b[k,n]`, single-threaded.
pub fn matmul_seq(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        matmul_row(&a[i * k..(i + 1) * k], b, n, &mut out[i * n..(i + 1) * n]);
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let _ = m;
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| matmul_row(&a[i * k..(i + 1) * k], b, n, row));
}

pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        matmul_par(a, b, m, k, n, &mut out);
        return out;
    }
    matmul_seq(a, b, m, k, n, &mut out);
    out
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ` (gradient w.r.t. the left operand).
pub fn matmul_grad_lhs(g: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let row = |i: usize, dst: &mut [f32]| {
        let gi = &g[i * n..(i + 1) * n];
        for (kk, d) in dst.iter_mut().enumerate() {
            *d += dot(gi, &b[kk * n..(kk + 1) * n]);
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(k).enumerate().for_each(|(i, dst)| row(i, dst));
        return;
    }
    for (i, dst) in out.chunks_mut(k).enumerate().take(m) {
        row(i, dst);
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]` (gradient w.r.t. the right operand).
pub fn matmul_grad_rhs(a: &[f32], g: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let row = |kk: usize, dst: &mut [f32]| {
        for i in 0..m {
            let aik = a[i * k + kk];
            if aik != 0.0 {
                axpy(aik, &g[i * n..(i + 1) * n], dst);
            }
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        out.par_chunks_mut(n).enumerate().for_each(|(kk, dst)| row(kk, dst));
        return;
    }
    for (kk, dst) in out.chunks_mut(n).enumerate().take(k) {
        row(kk, dst);
    }
}

/// Sum in f64, returned as f64.
pub fn sum_f64(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64).sum()
}
