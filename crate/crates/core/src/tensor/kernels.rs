//! Dense matrix kernels shared by the linear, matmul and convolution
//! operators. All matrices are row-major slices.

use alloc::vec;
use alloc::vec::Vec;

use super::Element;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
            for j in 0..n {
                let bv = brow[j];
                c0[j] += x0 * bv;
                c1[j] += x1 * bv;
                c2[j] += x2 * bv;
                c3[j] += x3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for p in 0..k {
            let x = arow[p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += x * bv;
            }
        }
        i += 1;
    }
}

/// `c[k×n] += aᵀ · b` for `a[m×k]`, `b[m×n]`.
pub(crate) fn gemm_tn<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    let mut r = 0;
    while r + 4 <= m {
        let b0 = &b[r * n..(r + 1) * n];
        let b1 = &b[(r + 1) * n..(r + 2) * n];
        let b2 = &b[(r + 2) * n..(r + 3) * n];
        let b3 = &b[(r + 3) * n..(r + 4) * n];
        for p in 0..k {
            let (x0, x1, x2, x3) = (a[r * k + p], a[(r + 1) * k + p], a[(r + 2) * k + p], a[(r + 3) * k + p]);
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
            }
        }
        r += 4;
    }
    while r < m {
        let brow = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let x = a[r * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += x * bv;
            }
        }
        r += 1;
    }
}

pub(crate) fn transpose<T: Element>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// `c[m×k] += a[m×n] · bᵀ` for `b[k×n]`.
pub(crate) fn gemm_nt<T: Element>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    let bt = transpose(k, n, b);
    gemm_nn(m, n, k, a, &bt, c);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_variants_match_naive_product() {
        let (m, k, n) = (7, 5, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        // aᵀ·c with a = [k×m] view
        let at = transpose(m, k, &a);
        let mut c2 = vec![0.0; m * n];
        gemm_tn(k, m, n, &at, &b, &mut c2);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let bt = transpose(k, n, &b);
        let mut c3 = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut c3);
        assert!(c3.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
