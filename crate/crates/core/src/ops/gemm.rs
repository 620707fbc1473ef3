//! Blocked `C += A * B` on row-major slices. Every output element adds its
//! products in increasing `p`, so results equal the plain triple loop bit
//! for bit.

use alloc::vec;

const MR: usize = 4;
const NR: usize = 8;
/// Depth of one pass over `p`. Splitting `p` into consecutive passes keeps
/// each element's addition order.
const KC: usize = 256;

/// Read-only matrix view with arbitrary row and column strides.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            rs: 1,
            cs: cols,
        }
    }

    #[inline(always)]
    fn at(&self, i: usize, p: usize) -> f64 {
        self.data[i * self.rs + p * self.cs]
    }
}

/// `c[i*ldc + j] += sum_p a(i, p) * b[p*ldb + j]` for `i < m`, `j < n`, `p < k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    m: usize,
    n: usize,
    k: usize,
    a: View,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    let mut pack = vec![0.0; KC * MR];
    for p0 in (0..k).step_by(KC) {
        let p1 = (p0 + KC).min(k);
        let depth = p1 - p0;
        for i in (0..m).step_by(MR) {
            let rows = MR.min(m - i);
            if n < 2 * NR {
                // too few column tiles to pay for packing
                let mut j = 0;
                while j + NR <= n {
                    match rows {
                        4 => direct::<4>(i, j, p0, p1, a, b, ldb, c, ldc),
                        3 => direct::<3>(i, j, p0, p1, a, b, ldb, c, ldc),
                        2 => direct::<2>(i, j, p0, p1, a, b, ldb, c, ldc),
                        _ => direct::<1>(i, j, p0, p1, a, b, ldb, c, ldc),
                    }
                    j += NR;
                }
                for r in 0..rows {
                    let crow = &mut c[(i + r) * ldc + j..(i + r) * ldc + n];
                    for p in p0..p1 {
                        let av = a.at(i + r, p);
                        for (o, &bv) in crow.iter_mut().zip(&b[p * ldb + j..p * ldb + n]) {
                            *o += av * bv;
                        }
                    }
                }
                continue;
            }
            // rows i..i+rows of the A block, interleaved by p
            for p in 0..depth {
                for r in 0..MR {
                    pack[p * MR + r] = if r < rows { a.at(i + r, p0 + p) } else { 0.0 };
                }
            }
            let mut j = 0;
            while j + NR <= n {
                match rows {
                    4 => tile::<4>(i, j, p0, &pack[..depth * MR], b, ldb, c, ldc),
                    3 => tile::<3>(i, j, p0, &pack[..depth * MR], b, ldb, c, ldc),
                    2 => tile::<2>(i, j, p0, &pack[..depth * MR], b, ldb, c, ldc),
                    _ => tile::<1>(i, j, p0, &pack[..depth * MR], b, ldb, c, ldc),
                }
                j += NR;
            }
            if j < n {
                for r in 0..rows {
                    let crow = &mut c[(i + r) * ldc + j..(i + r) * ldc + n];
                    for p in 0..depth {
                        let av = pack[p * MR + r];
                        let brow = &b[(p0 + p) * ldb + j..(p0 + p) * ldb + n];
                        for (o, &bv) in crow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn tile<const R: usize>(
    i: usize,
    j: usize,
    p0: usize,
    pack: &[f64],
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    let mut acc = [[0.0f64; NR]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i + r) * ldc + j..(i + r) * ldc + j + NR]);
    }
    for (p, ap) in pack.chunks_exact(MR).enumerate() {
        let ap: &[f64; MR] = ap.try_into().expect("MR rows");
        let b0 = (p0 + p) * ldb + j;
        let brow: &[f64; NR] = b[b0..b0 + NR].try_into().expect("NR columns");
        for (row, &av) in acc.iter_mut().zip(ap) {
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i + r) * ldc + j..(i + r) * ldc + j + NR].copy_from_slice(row);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn direct<const R: usize>(
    i: usize,
    j: usize,
    p0: usize,
    p1: usize,
    a: View,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    let mut acc = [[0.0f64; NR]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i + r) * ldc + j..(i + r) * ldc + j + NR]);
    }
    for p in p0..p1 {
        let brow: &[f64; NR] = b[p * ldb + j..p * ldb + j + NR]
            .try_into()
            .expect("NR columns");
        for (r, row) in acc.iter_mut().enumerate() {
            let av = a.at(i + r, p);
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i + r) * ldc + j..(i + r) * ldc + j + NR].copy_from_slice(row);
    }
}
