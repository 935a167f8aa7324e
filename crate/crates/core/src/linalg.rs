//! Dense row-major matrix products on top of `matrixmultiply`.
//!
//! Every helper computes `C = alpha * op(A) * op(B) + beta * C` where `op`
//! is identity or transpose. Shapes are given for the *logical* operands.
//! Products are generic over [`Real`] (`f32` or `f64`).

use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of the networks.
pub trait Real:
    Copy
    + Default
    + PartialOrd
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;

    /// # Safety
    /// Pointers and strides must describe in-bounds matrices; `c` must not
    /// alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:ident, $sqrt:path, $exp:path, $tanh:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn sqrt(self) -> Self {
                $sqrt(self)
            }
            fn exp(self) -> Self {
                $exp(self)
            }
            fn tanh(self) -> Self {
                $tanh(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                matrixmultiply::$gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_real!(f32, sgemm, libm::sqrtf, libm::expf, libm::tanhf);
impl_real!(f64, dgemm, libm::sqrt, libm::exp, libm::tanh);

/// Matrix view: row stride and column stride in elements.
#[derive(Clone, Copy, Debug)]
pub struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Strides {
            row: cols as isize,
            col: 1,
        }
    }

    pub const fn transposed(cols_of_storage: usize) -> Self {
        Strides {
            row: 1,
            col: cols_of_storage as isize,
        }
    }
}

fn max_index(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows as isize - 1) * s.row + (cols as isize - 1) * s.col) as usize
}

/// General strided product. `a` is m×k, `b` is k×n, `c` is m×n.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(sa.row >= 0 && sa.col >= 0 && sb.row >= 0 && sb.col >= 0);
    assert!(k == 0 || max_index(m, k, sa) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || max_index(k, n, sb) < b.len(), "gemm: B out of bounds");
    assert!(max_index(m, n, sc) < c.len(), "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = (i as isize * sc.row + j as isize * sc.col) as usize;
                c[idx] *= beta;
            }
        }
        return;
    }
    // SAFETY: all index extents were checked against the slice lengths above
    // and `c` is exclusively borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.row,
            sa.col,
            b.as_ptr(),
            sb.row,
            sb.col,
            beta,
            c.as_mut_ptr(),
            sc.row,
            sc.col,
        );
    }
}

/// `c (m×n) = a (m×k) · b (k×n)` (+ `c` when `accumulate`).
pub fn matmul<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm(
        m,
        k,
        n,
        T::ONE,
        a,
        Strides::row_major(k),
        b,
        Strides::row_major(n),
        if accumulate { T::ONE } else { T::ZERO },
        c,
        Strides::row_major(n),
    );
}

/// `c (m×n) = a (m×k) · bᵀ` where `b` is stored n×k.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm(
        m,
        k,
        n,
        T::ONE,
        a,
        Strides::row_major(k),
        b,
        Strides::transposed(k),
        if accumulate { T::ONE } else { T::ZERO },
        c,
        Strides::row_major(n),
    );
}

/// `c (m×n) = aᵀ · b` where `a` is stored k×m and `b` is k×n.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm(
        m,
        k,
        n,
        T::ONE,
        a,
        Strides::transposed(m),
        b,
        Strides::row_major(n),
        if accumulate { T::ONE } else { T::ZERO },
        c,
        Strides::row_major(n),
    );
}
