//! Dense row-major matrices with define-by-run reverse-mode differentiation.
//!
//! Every value is a 2-D `f64` matrix; vectors are `1 x n` and scalars `1 x 1`.

mod adam;
mod graph;
mod params;

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, Parameter, ParameterStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(
                "tensor",
                alloc::format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::row_vector(vec![v])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim("item", alloc::format!("{}x{} is not a scalar", self.rows, self.cols)));
        }
        Ok(self.data[0])
    }
}

/// `out += A * b` where `A[i][p] = a[i * rs + p * cs]`, `b: k x m`.
///
/// Works in blocks of 2 x 8 outputs. Every output element still sums over
/// `p` in increasing order, so results match the plain triple loop exactly.
fn gemm_acc(a: &[f64], rs: usize, cs: usize, b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (n - 1) * rs + (k - 1) * cs && b.len() >= k * m && out.len() >= n * m);
    let mut i0 = 0;
    #[cfg(target_arch = "x86_64")]
    if avx::available() {
        while i0 + 4 <= n {
            let mut j0 = 0;
            while j0 + 8 <= m {
                // SAFETY: AVX was detected; bounds as for block_2x8.
                unsafe { avx::block_4x8(a, rs, cs, b, out, i0, j0, k, m) };
                j0 += 8;
            }
            if j0 < m {
                for r in i0..i0 + 4 {
                    gemm_row(a, rs, cs, b, out, r, k, m, j0);
                }
            }
            i0 += 4;
        }
    }
    while i0 + 2 <= n {
        let mut j0 = 0;
        while j0 + 8 <= m {
            block_2x8(a, rs, cs, b, out, i0, j0, k, m);
            j0 += 8;
        }
        if j0 < m {
            for r in i0..i0 + 2 {
                gemm_row(a, rs, cs, b, out, r, k, m, j0);
            }
        }
        i0 += 2;
    }
    for r in i0..n {
        gemm_row(a, rs, cs, b, out, r, k, m, 0);
    }
}

#[cfg(target_arch = "x86_64")]
#[allow(clippy::too_many_arguments)]
fn block_2x8(a: &[f64], rs: usize, cs: usize, b: &[f64], out: &mut [f64], i0: usize, j0: usize, k: usize, m: usize) {
    use core::arch::x86_64::{__m128d, _mm_add_pd, _mm_loadu_pd, _mm_mul_pd, _mm_set1_pd, _mm_storeu_pd};
    // SAFETY: gemm_acc checked the slice lengths, and the caller keeps
    // i0 + 2 <= n and j0 + 8 <= m. SSE2 is part of the x86_64 baseline.
    unsafe {
        let o = out.as_mut_ptr();
        let mut acc: [[__m128d; 4]; 2] = [[_mm_set1_pd(0.0); 4]; 2];
        for (r, row) in acc.iter_mut().enumerate() {
            let p = o.add((i0 + r) * m + j0);
            for (c, v) in row.iter_mut().enumerate() {
                *v = _mm_loadu_pd(p.add(2 * c));
            }
        }
        let a0 = a.as_ptr().add(i0 * rs);
        let a1 = a0.add(rs);
        for p in 0..k {
            let bp = b.as_ptr().add(p * m + j0);
            let bv = [
                _mm_loadu_pd(bp),
                _mm_loadu_pd(bp.add(2)),
                _mm_loadu_pd(bp.add(4)),
                _mm_loadu_pd(bp.add(6)),
            ];
            let x0 = _mm_set1_pd(*a0.add(p * cs));
            let x1 = _mm_set1_pd(*a1.add(p * cs));
            for c in 0..4 {
                acc[0][c] = _mm_add_pd(acc[0][c], _mm_mul_pd(x0, bv[c]));
                acc[1][c] = _mm_add_pd(acc[1][c], _mm_mul_pd(x1, bv[c]));
            }
        }
        for (r, row) in acc.iter().enumerate() {
            let p = o.add((i0 + r) * m + j0);
            for (c, v) in row.iter().enumerate() {
                _mm_storeu_pd(p.add(2 * c), *v);
            }
        }
    }
}

/// Four-wide kernel used when the CPU has AVX. Products and sums are
/// separate instructions, as in the SSE2 kernel, so the two agree bitwise.
#[cfg(target_arch = "x86_64")]
mod avx {
    use core::arch::x86_64::{
        __cpuid, __m256d, _mm256_add_pd, _mm256_broadcast_sd, _mm256_loadu_pd, _mm256_mul_pd, _mm256_storeu_pd,
        _xgetbv,
    };
    use core::sync::atomic::{AtomicU8, Ordering};

    static STATE: AtomicU8 = AtomicU8::new(0);

    pub(super) fn available() -> bool {
        match STATE.load(Ordering::Relaxed) {
            1 => true,
            2 => false,
            _ => {
                let yes = detect();
                STATE.store(if yes { 1 } else { 2 }, Ordering::Relaxed);
                yes
            }
        }
    }

    fn detect() -> bool {
        // SAFETY: cpuid is always present on x86_64; xgetbv only runs once
        // cpuid reports OS support for it.
        unsafe {
            let ecx = __cpuid(1).ecx;
            let osxsave = ecx & (1 << 27) != 0;
            let avx = ecx & (1 << 28) != 0;
            osxsave && avx && xcr0() & 0b110 == 0b110
        }
    }

    #[target_feature(enable = "xsave")]
    unsafe fn xcr0() -> u64 {
        _xgetbv(0)
    }

    #[target_feature(enable = "avx")]
    #[allow(clippy::too_many_arguments)]
    pub(super) unsafe fn block_4x8(
        a: &[f64],
        rs: usize,
        cs: usize,
        b: &[f64],
        out: &mut [f64],
        i0: usize,
        j0: usize,
        k: usize,
        m: usize,
    ) {
        let o = out.as_mut_ptr();
        let mut acc: [[__m256d; 2]; 4] = [[core::mem::zeroed(); 2]; 4];
        for (r, row) in acc.iter_mut().enumerate() {
            let p = o.add((i0 + r) * m + j0);
            row[0] = _mm256_loadu_pd(p);
            row[1] = _mm256_loadu_pd(p.add(4));
        }
        let a0 = a.as_ptr().add(i0 * rs);
        for p in 0..k {
            let bp = b.as_ptr().add(p * m + j0);
            let b0 = _mm256_loadu_pd(bp);
            let b1 = _mm256_loadu_pd(bp.add(4));
            for (r, row) in acc.iter_mut().enumerate() {
                let x = _mm256_broadcast_sd(&*a0.add(r * rs + p * cs));
                row[0] = _mm256_add_pd(row[0], _mm256_mul_pd(x, b0));
                row[1] = _mm256_add_pd(row[1], _mm256_mul_pd(x, b1));
            }
        }
        for (r, row) in acc.iter().enumerate() {
            let p = o.add((i0 + r) * m + j0);
            _mm256_storeu_pd(p, row[0]);
            _mm256_storeu_pd(p.add(4), row[1]);
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
#[allow(clippy::too_many_arguments)]
fn block_2x8(a: &[f64], rs: usize, cs: usize, b: &[f64], out: &mut [f64], i0: usize, j0: usize, k: usize, m: usize) {
    for r in i0..i0 + 2 {
        for p in 0..k {
            let x = a[r * rs + p * cs];
            for c in j0..j0 + 8 {
                out[r * m + c] += x * b[p * m + c];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_row(a: &[f64], rs: usize, cs: usize, b: &[f64], out: &mut [f64], i: usize, k: usize, m: usize, from: usize) {
    let out_row = &mut out[i * m + from..(i + 1) * m];
    for p in 0..k {
        let x = a[i * rs + p * cs];
        for (o, &y) in out_row.iter_mut().zip(&b[p * m + from..(p + 1) * m]) {
            *o += x * y;
        }
    }
}

/// `out += a * b` for `a: n x k`, `b: k x m`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    gemm_acc(a, k, 1, b, out, n, k, m);
}

/// `out += a * b^T` for `a: n x k`, `b: m x k`.
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    let mut bt = vec![0.0; k * m];
    for j in 0..m {
        for p in 0..k {
            bt[p * m + j] = b[j * k + p];
        }
    }
    gemm_acc(a, k, 1, &bt, out, n, k, m);
}

/// `out += a^T * b` for `a: k x n`, `b: k x m`.
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    gemm_acc(a, 1, n, b, out, n, k, m);
}
