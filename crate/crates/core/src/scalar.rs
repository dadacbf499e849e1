//! The scalar abstraction every tensor, layer and loss is generic over.
//!
//! `f32` is the training precision, `f64` backs gradient checks, and
//! [`Dual`](crate::Dual) carries a forward-mode tangent through the reverse
//! tape when a mixed second derivative is required.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    /// Primal value as `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Row-major `c = op(a) · op(b)` (or `c += ...` when `accumulate`).
    ///
    /// `a` holds `m×k` (`k×m` when `a_t`), `b` holds `k×n` (`n×k` when `b_t`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    ) {
        naive_gemm(m, k, n, a, a_t, b, b_t, c, accumulate);
    }
}

#[inline]
fn strides(rows: usize, cols: usize, transposed: bool) -> (usize, usize) {
    // (row stride, col stride) of the logical matrix
    if transposed {
        (1, rows)
    } else {
        (cols, 1)
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm<T>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &[T]) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn naive_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    check_gemm(m, k, n, a, b, c);
    if !accumulate {
        c.iter_mut().for_each(|x| *x = T::zero());
    }
    let (rsa, csa) = strides(m, k, a_t);
    let (rsb, csb) = strides(k, n, b_t);
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * rsa + p * csa];
            if av == T::zero() {
                continue;
            }
            let base = p * rsb;
            for (j, out) in row.iter_mut().enumerate() {
                *out += av * b[base + j * csb];
            }
        }
    }
}

macro_rules! blas_like {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            #[allow(clippy::too_many_arguments)]
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                check_gemm(m, k, n, a, b, c);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c.iter_mut().for_each(|x| *x = 0.0);
                    }
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: lengths were checked against (m, k, n) above and the
                // strides describe dense row-major or transposed storage.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

blas_like!(f32, matrixmultiply::sgemm);
blas_like!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blas_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        for &(at, bt) in &[(false, false), (true, false), (false, true), (true, true)] {
            let mut c1 = vec![0.0; m * n];
            let mut c2 = vec![0.0; m * n];
            f64::gemm(m, k, n, &a, at, &b, bt, &mut c1, false);
            naive_gemm(m, k, n, &a, at, &b, bt, &mut c2, false);
            for (x, y) in c1.iter().zip(&c2) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_adds_into_output() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [1.0f32, 0.0, 0.0, 1.0];
        let mut c = [1.0f32; 4];
        f32::gemm(2, 2, 2, &a, false, &b, false, &mut c, true);
        assert_eq!(c, [2.0, 3.0, 4.0, 5.0]);
    }
}
