//! Dense row-major matrix helpers over `f32`/`f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a · b + beta * c` on strided views.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds matrices of the given
    /// shapes; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
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

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Borrowed strided matrix view.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    data: &'a [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> Mat<'a, T> {
    /// Row-major `rows × cols` view over `data`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Columns `start..start + len`.
    pub fn cols(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        Self {
            offset: self.offset + start * self.cs,
            cols: len,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

pub struct MatMut<'a, T> {
    data: &'a mut [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn cols(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        Self {
            offset: self.offset + start * self.cs,
            cols: len,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha · a · b + beta · c`.
pub fn gemm<T: Scalar>(alpha: T, a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is a
    // unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Row-major `x · w + b` for `x: rows × din`, `w: din × dout`.
pub fn affine<T: Scalar>(
    x: &[T],
    rows: usize,
    din: usize,
    w: &[T],
    b: &[T],
    dout: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    gemm(
        T::one(),
        Mat::new(x, rows, din),
        Mat::new(w, din, dout),
        T::one(),
        MatMut::new(&mut out, rows, dout),
    );
    out
}

/// Backward of [`affine`]: accumulates `dw += xᵀ·dy`, `db += Σ dy`, and
/// returns `dx = dy · wᵀ` when requested.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    din: usize,
    w: &[T],
    dy: &[T],
    dout: usize,
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    gemm(
        T::one(),
        Mat::new(x, rows, din).t(),
        Mat::new(dy, rows, dout),
        T::one(),
        MatMut::new(dw, din, dout),
    );
    for row in dy.chunks_exact(dout) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![T::zero(); rows * din];
        gemm(
            T::one(),
            Mat::new(dy, rows, dout),
            Mat::new(w, din, dout).t(),
            T::zero(),
            MatMut::new(&mut dx, rows, din),
        );
        dx
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_including_transpose_and_column_views() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; 15];
        gemm(
            1.0,
            Mat::new(&a, 3, 4),
            Mat::new(&b, 4, 5),
            0.0,
            MatMut::new(&mut c, 3, 5),
        );
        let expected = naive(&a, &b, 3, 4, 5);
        for (x, y) in c.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ through strides: (4x3)ᵀ is 3x4.
        let at: Vec<f64> = (0..12).map(|i| a[(i % 3) * 4 + i / 3]).collect();
        let mut c2 = vec![0.0; 15];
        gemm(
            1.0,
            Mat::new(&at, 4, 3).t(),
            Mat::new(&b, 4, 5),
            0.0,
            MatMut::new(&mut c2, 3, 5),
        );
        assert_eq!(c, c2);

        // Column sub-views.
        let mut wide = vec![0.0; 3 * 8];
        gemm(
            1.0,
            Mat::new(&a, 3, 4),
            Mat::new(&b, 4, 5).cols(1, 3),
            0.0,
            MatMut::new(&mut wide, 3, 8).cols(2, 3),
        );
        for i in 0..3 {
            for j in 0..3 {
                assert!((wide[i * 8 + 2 + j] - expected[i * 5 + 1 + j]).abs() < 1e-12);
            }
            assert_eq!(wide[i * 8], 0.0);
        }
    }

    #[test]
    #[should_panic]
    fn gemm_rejects_bad_shapes() {
        let a = vec![0.0f32; 6];
        let mut c = vec![0.0f32; 4];
        gemm(
            1.0,
            Mat::new(&a, 2, 3),
            Mat::new(&a, 2, 3),
            0.0,
            MatMut::new(&mut c, 2, 2),
        );
    }
}
