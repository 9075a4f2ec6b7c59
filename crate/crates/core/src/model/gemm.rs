#![allow(clippy::too_many_arguments)]

//! Blocked single-precision GEMM used by the convolution stages.
//!
//! `C[m x n] += A[m x k] * B[k x n]` where A is addressed as
//! `a[i * lda + kk]` (rows may overlap, which lets a convolution read a
//! padded input row directly) and B is pre-packed into column panels of
//! [`NR`] during warm-up.

pub(crate) const MR: usize = 6;
pub(crate) const NR: usize = 16;
const KC: usize = 256;

/// Micro-kernel implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    Portable,
    Avx2Fma,
}

impl Kernel {
    pub fn available() -> Vec<Kernel> {
        let mut v = vec![Kernel::Portable];
        #[cfg(target_arch = "x86_64")]
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            v.push(Kernel::Avx2Fma);
        }
        v
    }
}

/// How a 3x3 convolution row is lowered onto GEMM calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lowering {
    /// Three GEMMs per output row (one per kernel row), K = 3 * c_in,
    /// reading the padded input in place.
    KernelRows,
    /// Nine GEMMs per output row (one per tap), K = c_in.
    Taps,
    /// Copy the row's 3x3 patches into a workspace, one GEMM with
    /// K = 9 * c_in.
    Im2colRow,
}

impl Lowering {
    pub const ALL: [Lowering; 3] = [Lowering::KernelRows, Lowering::Taps, Lowering::Im2colRow];
}

/// B packed as `panels` blocks of `k x NR`, zero-padded past `n`.
#[derive(Debug, Clone)]
pub(crate) struct PackedB {
    pub k: usize,
    pub n: usize,
    data: Vec<f32>,
}

impl PackedB {
    pub fn pack(k: usize, n: usize, get: impl Fn(usize, usize) -> f32) -> Self {
        let panels = n.div_ceil(NR);
        let mut data = vec![0f32; panels * k * NR];
        for p in 0..panels {
            for kk in 0..k {
                let row = &mut data[(p * k + kk) * NR..(p * k + kk + 1) * NR];
                for (j, v) in row.iter_mut().enumerate() {
                    let col = p * NR + j;
                    if col < n {
                        *v = get(kk, col);
                    }
                }
            }
        }
        Self { k, n, data }
    }

    fn panels(&self) -> usize {
        self.n.div_ceil(NR)
    }
}

type MicroKernel = unsafe fn(
    kc: usize,
    a: *const f32,
    lda: usize,
    mr: usize,
    b: *const f32,
    c: *mut f32,
    ldc: usize,
    nr: usize,
);

/// `C += A[:, 0..kl] * B[k_start..k_start + kl, :]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    kernel: Kernel,
    m: usize,
    kl: usize,
    a: &[f32],
    lda: usize,
    b: &PackedB,
    k_start: usize,
    c: &mut [f32],
    ldc: usize,
) {
    if m == 0 || kl == 0 {
        return;
    }
    assert!((m - 1) * lda + kl <= a.len(), "A out of bounds");
    assert!((m - 1) * ldc + b.n <= c.len(), "C out of bounds");
    assert!(k_start + kl <= b.k, "B rows out of bounds");
    assert!(ldc >= b.n);

    let micro: MicroKernel = match kernel {
        Kernel::Portable => micro_portable,
        #[cfg(target_arch = "x86_64")]
        Kernel::Avx2Fma => {
            assert!(is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"));
            micro_avx2
        }
        #[cfg(not(target_arch = "x86_64"))]
        Kernel::Avx2Fma => panic!("AVX2 kernel unavailable on this target"),
    };

    for k0 in (0..kl).step_by(KC) {
        let kc = KC.min(kl - k0);
        for i0 in (0..m).step_by(MR) {
            let mr = MR.min(m - i0);
            for p in 0..b.panels() {
                let nr = NR.min(b.n - p * NR);
                // SAFETY: bounds asserted above; the micro-kernel reads rows
                // i0..i0+mr of A over columns k0..k0+kc, one packed panel
                // slice of kc x NR, and writes rows i0..i0+mr, columns
                // p*NR..p*NR+nr of C.
                unsafe {
                    micro(
                        kc,
                        a.as_ptr().add(i0 * lda + k0),
                        lda,
                        mr,
                        b.data.as_ptr().add((p * b.k + k_start + k0) * NR),
                        c.as_mut_ptr().add(i0 * ldc + p * NR),
                        ldc,
                        nr,
                    )
                }
            }
        }
    }
}

#[inline(always)]
unsafe fn row_ptrs(a: *const f32, lda: usize, mr: usize) -> [*const f32; MR] {
    std::array::from_fn(|r| a.add(r.min(mr - 1) * lda))
}

unsafe fn micro_portable(
    kc: usize,
    a: *const f32,
    lda: usize,
    mr: usize,
    b: *const f32,
    c: *mut f32,
    ldc: usize,
    nr: usize,
) {
    let rows = row_ptrs(a, lda, mr);
    let mut acc = [[0f32; NR]; MR];
    for kk in 0..kc {
        let bp = std::slice::from_raw_parts(b.add(kk * NR), NR);
        for r in 0..MR {
            let av = *rows[r].add(kk);
            for j in 0..NR {
                acc[r][j] += av * bp[j];
            }
        }
    }
    for (r, row) in acc.iter().enumerate().take(mr) {
        let cp = c.add(r * ldc);
        for (j, v) in row.iter().enumerate().take(nr) {
            *cp.add(j) += v;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn micro_avx2(
    kc: usize,
    a: *const f32,
    lda: usize,
    mr: usize,
    b: *const f32,
    c: *mut f32,
    ldc: usize,
    nr: usize,
) {
    use std::arch::x86_64::*;
    let rows = row_ptrs(a, lda, mr);
    let mut acc = [[_mm256_setzero_ps(); 2]; MR];
    for kk in 0..kc {
        let b0 = _mm256_loadu_ps(b.add(kk * NR));
        let b1 = _mm256_loadu_ps(b.add(kk * NR + 8));
        for r in 0..MR {
            let av = _mm256_set1_ps(*rows[r].add(kk));
            acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
        }
    }
    if nr == NR {
        for (r, v) in acc.iter().enumerate().take(mr) {
            let cp = c.add(r * ldc);
            _mm256_storeu_ps(cp, _mm256_add_ps(_mm256_loadu_ps(cp), v[0]));
            _mm256_storeu_ps(cp.add(8), _mm256_add_ps(_mm256_loadu_ps(cp.add(8)), v[1]));
        }
    } else {
        let mut tmp = [0f32; NR];
        for (r, v) in acc.iter().enumerate().take(mr) {
            _mm256_storeu_ps(tmp.as_mut_ptr(), v[0]);
            _mm256_storeu_ps(tmp.as_mut_ptr().add(8), v[1]);
            let cp = c.add(r * ldc);
            for (j, t) in tmp.iter().enumerate().take(nr) {
                *cp.add(j) += t;
            }
        }
    }
}
