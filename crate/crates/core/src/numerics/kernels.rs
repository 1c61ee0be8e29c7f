//! Raw row-major kernels. Each output element is accumulated in a fixed
//! order regardless of how rows are distributed across threads, so results
//! are bit-identical between single- and multi-threaded execution.

use rayon::prelude::*;

use super::scalar::Scalar;

const PAR_THRESHOLD: usize = 1 << 16;
/// Rows per parallel task. Fixed, so the split never depends on thread count.
const ROW_BLOCK: usize = 64;

/// `c[m,n] = A · B` where `A` is `m×k` read with strides `sa` and `B` is
/// `k×n` read with strides `sb`.
fn gemm_strided<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], sa: (usize, usize), b: &[T], sb: (usize, usize)) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    let block = |(i, cblk): (usize, &mut [T])| {
        let r0 = i * ROW_BLOCK;
        let rows = cblk.len() / n;
        let a_off = r0 * sa.0;
        T::gemm_view(rows, k, n, &a[a_off..], sa, b, sb, cblk);
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(block);
    } else {
        c.chunks_mut(ROW_BLOCK * n).enumerate().for_each(block);
    }
    c
}

/// `c[m,n] = a[m,k] · b[k,n]`
pub fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    gemm_strided(m, k, n, a, (k, 1), b, (n, 1))
}

pub fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// `c[m,n] = a[m,k] · b[n,k]ᵀ`
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    gemm_strided(m, k, n, a, (k, 1), b, (1, k))
}

/// `c[k,n] = a[m,k]ᵀ · b[m,n]`
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    gemm_strided(k, m, n, a, (1, k), b, (n, 1))
}

pub fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row-wise log-softmax with max subtraction; log-sum-exp accumulated in f64.
pub fn log_softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, orow) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
        let lse = max + sum.ln();
        for (o, v) in orow.iter_mut().zip(row) {
            *o = T::of(v.f64() - lse);
        }
    }
    out
}

/// Clamp applied to logits before any exponentiation in sigmoid paths.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Logistic sigmoid of the clamped logit. In `f32`, σ(30) rounds to exactly 1,
/// so the result is capped one half-ulp below 1.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    let z = z.f64().clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let cap = T::one() - T::epsilon() / T::of(2.0);
    T::of(1.0 / (1.0 + (-z).exp())).min(cap)
}

/// `ln(1 + e^z)` computed without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let (c, a) = (T::of(GELU_C), T::of(GELU_A));
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + tanh(u))
}

/// `tanh` through a single `exp`, which is markedly cheaper than libm `tanh`.
fn tanh<T: Scalar>(u: T) -> T {
    let two = T::of(2.0);
    let e = (-two * u.abs()).exp();
    ((T::one() - e) / (T::one() + e)).copysign(u)
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a) = (T::of(GELU_C), T::of(GELU_A));
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    let t = tanh(u);
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f32> = (0..6).map(|v| v as f32).collect(); // 2x3
        let b: Vec<f32> = (0..12).map(|v| (v as f32) * 0.5 - 2.0).collect(); // 3x4
        let c = gemm(&a, &b, 2, 3, 4);
        let bt = transpose(&b, 3, 4);
        assert_eq!(gemm_nt(&a, &bt, 2, 3, 4), c);
        let at = transpose(&a, 2, 3);
        assert_eq!(gemm_tn(&at, &b, 3, 2, 4), gemm(&transpose(&at, 3, 2), &b, 2, 3, 4));
    }

    #[test]
    fn strided_products_match_naive_loops() {
        let (m, k, n) = (131, 37, 29);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 13) % 11) as f64 - 5.0).collect();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                want[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        assert_eq!(gemm(&a, &b, m, k, n), want);
        assert_eq!(gemm_nt(&a, &transpose(&b, k, n), m, k, n), want);
        assert_eq!(gemm_tn(&transpose(&a, m, k), &b, k, m, n), want);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn parallel_and_serial_gemm_bit_identical() {
        let (m, k, n) = (203, 48, 40);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 97) as f32 / 97.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104_729) % 89) as f32 / 89.0 - 0.5).collect();
        let big = gemm(&a, &b, m, k, n);
        for i in 0..m {
            let row = gemm(&a[i * k..(i + 1) * k], &b, 1, k, n);
            assert_eq!(&big[i * n..(i + 1) * n], &row[..]);
        }
    }

    #[test]
    fn sigmoid_clamps_extremes() {
        assert!(sigmoid(1e4f32) < 1.0);
        assert!(sigmoid(-1e4f32) > 0.0);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }
}
