//! Small dense matrix kernels backing the convolution and dense layers.
//!
//! Two products are needed:
//!
//! * `gemm_nn`:  C += A(m×k) · B(k×n)
//! * `gemm_nt`:  C += A(m×n) · B(k×n)ᵀ   (row-dot-row, used for kernel grads)
//!
//! All matrices are row-major. Results are accumulated left-to-right over
//! the inner dimension in a fixed order, so repeated runs are bit-identical.
//! On x86-64 with AVX2+FMA an `f32` micro-kernel is selected at runtime; it
//! partitions the output into disjoint tiles and keeps the same per-element
//! accumulation order as the scalar path does within each tile.

use super::Scalar;
use crate::parallel::{fill_chunks, Execution};

const PAR_FLOP_THRESHOLD: usize = 1 << 22;

#[inline]
fn is_f32<T: 'static>() -> bool {
    std::any::TypeId::of::<T>() == std::any::TypeId::of::<f32>()
}

#[cfg(target_arch = "x86_64")]
#[inline]
fn avx2_available() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

/// C(m×n) += A(m×k) · B(k×n)
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, exec: Execution) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if is_f32::<T>() && avx2_available() {
        let (af, bf, cf) = unsafe {
            (
                std::slice::from_raw_parts(a.as_ptr() as *const f32, a.len()),
                std::slice::from_raw_parts(b.as_ptr() as *const f32, b.len()),
                std::slice::from_raw_parts_mut(c.as_mut_ptr() as *mut f32, c.len()),
            )
        };
        gemm_nn_f32_avx2(af, bf, cf, m, k, n, exec);
        return;
    }
    gemm_nn_scalar(a, b, c, m, k, n, exec);
}

/// C(m×k) += A(m×n) · B(k×n)ᵀ
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize, exec: Execution) {
    assert_eq!(a.len(), m * n);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * k);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if is_f32::<T>() && avx2_available() {
        let (af, bf, cf) = unsafe {
            (
                std::slice::from_raw_parts(a.as_ptr() as *const f32, a.len()),
                std::slice::from_raw_parts(b.as_ptr() as *const f32, b.len()),
                std::slice::from_raw_parts_mut(c.as_mut_ptr() as *mut f32, c.len()),
            )
        };
        gemm_nt_f32_avx2(af, bf, cf, m, n, k, exec);
        return;
    }
    gemm_nt_scalar(a, b, c, m, n, k, exec);
}

/// Row-major transpose: `out(cols×rows)` from `a(rows×cols)`.
pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    assert_eq!(a.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn gemm_nn_scalar<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, exec: Execution) {
    let exec = if 2 * m * n * k >= PAR_FLOP_THRESHOLD { exec } else { Execution::Sequential };
    fill_chunks(exec, c, n, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    });
}

fn gemm_nt_scalar<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize, exec: Execution) {
    let exec = if 2 * m * n * k >= PAR_FLOP_THRESHOLD { exec } else { Execution::Sequential };
    fill_chunks(exec, c, k, |i, row| {
        let arow = &a[i * n..(i + 1) * n];
        for (j, cv) in row.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            *cv += acc;
        }
    });
}

#[cfg(target_arch = "x86_64")]
fn gemm_nn_f32_avx2(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize, exec: Execution) {
    // Disjoint blocks of 4 output rows; each block is one task.
    let rows_per_block = 4;
    let blocks = m.div_ceil(rows_per_block);
    let exec = if 2 * m * n * k >= PAR_FLOP_THRESHOLD { exec } else { Execution::Sequential };
    fill_chunks_rows(exec, c, n * rows_per_block, blocks, |blk, cblk| {
        let r0 = blk * rows_per_block;
        let rows = rows_per_block.min(m - r0);
        unsafe {
            gemm_nn_block_avx2(&a[r0 * k..(r0 + rows) * k], b, cblk, rows, k, n);
        }
    });
}

#[cfg(target_arch = "x86_64")]
fn gemm_nt_f32_avx2(a: &[f32], b: &[f32], c: &mut [f32], m: usize, n: usize, k: usize, exec: Execution) {
    let rows_per_block = 4;
    let blocks = m.div_ceil(rows_per_block);
    let exec = if 2 * m * n * k >= PAR_FLOP_THRESHOLD { exec } else { Execution::Sequential };
    fill_chunks_rows(exec, c, k * rows_per_block, blocks, |blk, cblk| {
        let r0 = blk * rows_per_block;
        let rows = rows_per_block.min(m - r0);
        unsafe {
            gemm_nt_block_avx2(&a[r0 * n..(r0 + rows) * n], b, cblk, rows, n, k);
        }
    });
}

/// Like `fill_chunks` but tolerates a ragged final block.
fn fill_chunks_rows<T, F>(exec: Execution, out: &mut [T], chunk_len: usize, blocks: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    match exec {
        Execution::Sequential => {
            for (i, chunk) in out.chunks_mut(chunk_len).take(blocks).enumerate() {
                f(i, chunk);
            }
        }
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                out.par_chunks_mut(chunk_len)
                    .take(blocks)
                    .enumerate()
                    .for_each(|(i, chunk)| f(i, chunk));
                return;
            }
            #[cfg(not(feature = "parallel"))]
            for (i, chunk) in out.chunks_mut(chunk_len).take(blocks).enumerate() {
                f(i, chunk);
            }
        }
    }
}

/// 4×16 FMA micro-kernel: for up to 4 rows of A, accumulate into C row tiles
/// of 16 columns. B rows are streamed once per (row-block, k).
///
/// # Safety
/// Caller must ensure AVX2 and FMA are available.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_nn_block_avx2(a: &[f32], b: &[f32], c: &mut [f32], rows: usize, k: usize, n: usize) {
    use std::arch::x86_64::*;
    debug_assert!(rows >= 1 && rows <= 4);
    debug_assert!(a.len() == rows * k);
    debug_assert!(c.len() >= rows * n);

    let ntiles = n / 16;
    for t in 0..ntiles {
        let col = t * 16;
        // acc[r][0..2] are the two 8-lane halves of C[r][col..col+16]
        let mut acc = [[_mm256_setzero_ps(); 2]; 4];
        for r in 0..rows {
            acc[r][0] = _mm256_loadu_ps(c.as_ptr().add(r * n + col));
            acc[r][1] = _mm256_loadu_ps(c.as_ptr().add(r * n + col + 8));
        }
        for p in 0..k {
            let b0 = _mm256_loadu_ps(b.as_ptr().add(p * n + col));
            let b1 = _mm256_loadu_ps(b.as_ptr().add(p * n + col + 8));
            for r in 0..rows {
                let av = _mm256_set1_ps(*a.get_unchecked(r * k + p));
                acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
                acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
            }
        }
        for r in 0..rows {
            _mm256_storeu_ps(c.as_mut_ptr().add(r * n + col), acc[r][0]);
            _mm256_storeu_ps(c.as_mut_ptr().add(r * n + col + 8), acc[r][1]);
        }
    }

    // Column remainder.
    let col0 = ntiles * 16;
    if col0 < n {
        for r in 0..rows {
            for p in 0..k {
                let av = *a.get_unchecked(r * k + p);
                let brow = &b[p * n..(p + 1) * n];
                for col in col0..n {
                    *c.get_unchecked_mut(r * n + col) += av * brow[col];
                }
            }
        }
    }
}

/// Row-dot-row kernel for C += A·Bᵀ over up to 4 rows of A.
///
/// # Safety
/// Caller must ensure AVX2 and FMA are available.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_nt_block_avx2(a: &[f32], b: &[f32], c: &mut [f32], rows: usize, n: usize, k: usize) {
    use std::arch::x86_64::*;
    debug_assert!(rows >= 1 && rows <= 4);

    for r in 0..rows {
        let arow = &a[r * n..(r + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let lanes = n / 8;
            let mut acc = _mm256_setzero_ps();
            for l in 0..lanes {
                let av = _mm256_loadu_ps(arow.as_ptr().add(l * 8));
                let bv = _mm256_loadu_ps(brow.as_ptr().add(l * 8));
                acc = _mm256_fmadd_ps(av, bv, acc);
            }
            // Horizontal sum of the 8 lanes.
            let hi = _mm256_extractf128_ps(acc, 1);
            let lo = _mm256_castps256_ps128(acc);
            let s = _mm_add_ps(hi, lo);
            let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
            let s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
            let mut dot = _mm_cvtss_f32(s);
            for i in lanes * 8..n {
                dot += arow[i] * brow[i];
            }
            *c.get_unchecked_mut(r * k + j) += dot;
        }
    }
}
