//! Dense matrix kernels on top of `matrixmultiply`. Large products are
//! split into fixed row blocks, so results do not depend on the thread
//! count.

use rayon::prelude::*;

/// Below this many multiply-adds a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 20;
/// Output rows per parallel task.
const ROW_BLOCK: usize = 64;

/// `C = A·B` where element `(i, p)` of `A` sits at `a[i·rsa + p·csa]` and
/// element `(p, j)` of `B` at `b[p·rsb + j·csb]`.
fn gemm(a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let block = |i0: usize, rows: &mut [f64]| {
        let mr = rows.len() / n;
        // SAFETY: every index touched lies inside the slices; the caller
        // guarantees `a` covers `m×k` and `b` covers `k×n` under the strides.
        unsafe {
            matrixmultiply::dgemm(
                mr,
                k,
                n,
                1.0,
                a.as_ptr().add(i0 * rsa),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                rows.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > ROW_BLOCK {
        out.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(c, rows)| block(c * ROW_BLOCK, rows));
    } else {
        out.chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(c, rows)| block(c * ROW_BLOCK, rows));
    }
    out
}

/// `C[M×N] = A[M×K] · B[K×N]`
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert!(a.len() >= m * k && b.len() >= k * n, "matmul_nn operand sizes");
    gemm(a, (k, 1), b, (n, 1), m, k, n)
}

/// `C[M×N] = A[M×K] · B[N×K]ᵀ`
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert!(a.len() >= m * k && b.len() >= k * n, "matmul_nt operand sizes");
    gemm(a, (k, 1), b, (1, k), m, k, n)
}

/// `C[M×N] = A[K×M]ᵀ · B[K×N]`
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    assert!(a.len() >= m * k && b.len() >= k * n, "matmul_tn operand sizes");
    gemm(a, (1, m), b, (n, 1), m, k, n)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the dependency chain short
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Column sums of an `[M×N]` matrix.
pub fn col_sums(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for row in a.chunks(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}
