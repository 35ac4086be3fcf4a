//! Scalar abstraction so the network runs in f32 for production and f64 for
//! finite-difference checks, through the same code.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c ← alpha·a·b + beta·c` for strided `a` (m×k) and `b` (k×n) and
    /// row-major contiguous `c` (m×n).
    fn gemm_raw(m: usize, k: usize, n: usize, alpha: Self, a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, c: &mut [Self]);

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major with `cols` columns.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
        assert!(last < self.data.len(), "matrix view out of bounds");
    }
}

impl Real for f32 {
    fn gemm_raw(m: usize, k: usize, n: usize, alpha: f32, a: MatRef<'_, f32>, b: MatRef<'_, f32>, beta: f32, c: &mut [f32]) {
        a.check(m, k);
        b.check(k, n);
        assert!(c.len() >= m * n, "output too small");
        // SAFETY: bounds of every accessed element were checked above.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.data.as_ptr(), a.rs as isize, a.cs as isize,
                b.data.as_ptr(), b.rs as isize, b.cs as isize,
                beta, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Real for f64 {
    fn gemm_raw(m: usize, k: usize, n: usize, alpha: f64, a: MatRef<'_, f64>, b: MatRef<'_, f64>, beta: f64, c: &mut [f64]) {
        a.check(m, k);
        b.check(k, n);
        assert!(c.len() >= m * n, "output too small");
        // SAFETY: bounds of every accessed element were checked above.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.data.as_ptr(), a.rs as isize, a.cs as isize,
                b.data.as_ptr(), b.rs as isize, b.cs as isize,
                beta, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}
