//! Dense f64 kernels.
//!
//! Every output element is accumulated over the inner index in ascending
//! order regardless of which tile path computes it, so results do not depend
//! on the tiling.

use alloc::vec;
use alloc::vec::Vec;

const MR: usize = 4;
const NR: usize = 16;

/// `c[p×r] += a[p×q] · b[q×r]`
pub fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    assert_eq!(a.len(), p * q);
    assert_eq!(b.len(), q * r);
    assert_eq!(c.len(), p * r);
    let full_cols = r - r % NR;
    let mut i = 0;
    while i + MR <= p {
        let mut j = 0;
        while j < full_cols {
            let mut acc = [[0.0f64; NR]; MR];
            for (ii, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + ii) * r + j..(i + ii) * r + j + NR]);
            }
            let a0 = &a[i * q..(i + 1) * q];
            let a1 = &a[(i + 1) * q..(i + 2) * q];
            let a2 = &a[(i + 2) * q..(i + 3) * q];
            let a3 = &a[(i + 3) * q..(i + 4) * q];
            for k in 0..q {
                let brow: &[f64; NR] = b[k * r + j..k * r + j + NR].try_into().unwrap();
                let (v0, v1, v2, v3) = (a0[k], a1[k], a2[k], a3[k]);
                for jj in 0..NR {
                    acc[0][jj] += v0 * brow[jj];
                    acc[1][jj] += v1 * brow[jj];
                    acc[2][jj] += v2 * brow[jj];
                    acc[3][jj] += v3 * brow[jj];
                }
            }
            for (ii, row) in acc.iter().enumerate() {
                c[(i + ii) * r + j..(i + ii) * r + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        if full_cols < r {
            for ii in i..i + MR {
                row_axpy_range(&a[ii * q..(ii + 1) * q], b, &mut c[ii * r..(ii + 1) * r], r, full_cols);
            }
        }
        i += MR;
    }
    for ii in i..p {
        row_axpy_range(&a[ii * q..(ii + 1) * q], b, &mut c[ii * r..(ii + 1) * r], r, 0);
    }
}

fn row_axpy_range(a_row: &[f64], b: &[f64], c_row: &mut [f64], r: usize, from: usize) {
    for (k, &av) in a_row.iter().enumerate() {
        let brow = &b[k * r + from..(k + 1) * r];
        for (cv, &bv) in c_row[from..].iter_mut().zip(brow) {
            *cv += av * bv;
        }
    }
}

/// `a[p×q] · b[q×r]` into a fresh buffer.
pub fn gemm(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * r];
    gemm_acc(a, b, &mut c, p, q, r);
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `c[q×r] += a[p×q]ᵀ · b[p×r]`
pub fn gemm_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    let at = transpose(a, p, q);
    gemm_acc(&at, b, c, q, p, r);
}

/// `c[p×q] += a[p×r] · b[q×r]ᵀ`
pub fn gemm_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, r: usize, q: usize) {
    let bt = transpose(b, q, r);
    gemm_acc(a, &bt, c, p, r, q);
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
