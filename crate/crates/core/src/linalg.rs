//! Bounds-checked wrapper around the strided GEMM kernels.

use crate::scalar::Scalar;

/// A read-only strided matrix view into a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Scalar> MatRef<'a, T> {
    /// View of a row-major `(rows, cols)` block starting at `offset`.
    pub fn row_major(data: &'a [T], offset: usize, rows: usize, cols: usize) -> Self {
        Self { data, offset, rows, cols, rs: cols, cs: 1 }
    }

    /// View of a stored row-major `(rows, cols)` block, optionally transposed.
    pub fn stored(data: &'a [T], offset: usize, rows: usize, cols: usize, transpose: bool) -> Self {
        let m = Self::row_major(data, offset, rows, cols);
        if transpose {
            m.t()
        } else {
            m
        }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn last_index(&self) -> usize {
        self.offset + (self.rows.saturating_sub(1)) * self.rs + (self.cols.saturating_sub(1)) * self.cs
    }
}

/// `c = alpha * a · b + beta * c` where `c` is a row-major `(a.rows, b.cols)`
/// block at `c_offset` of `c`.
pub(crate) fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T], c_offset: usize) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension mismatch");
    if m == 0 || n == 0 {
        return;
    }
    assert!(c_offset + m * n <= c.len(), "gemm output out of bounds");
    if k == 0 {
        for v in &mut c[c_offset..c_offset + m * n] {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    assert!(a.last_index() < a.data.len(), "gemm lhs out of bounds");
    assert!(b.last_index() < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: every accessed element was bounds-checked above and `c` is a
    // unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            n as isize,
            1,
        );
    }
}
