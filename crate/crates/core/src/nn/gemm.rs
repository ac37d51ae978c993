//! Thin safe wrapper over the strided `dgemm` kernel.

/// Row/column strides of a matrix view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    /// Row-major matrix with `cols` columns.
    pub fn rows(cols: usize) -> Self {
        Self {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self {
            rs: 1,
            cs: cols as isize,
        }
    }
}

fn max_offset(rows: usize, cols: usize, l: Layout) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * l.rs as usize + (cols - 1) * l.cs as usize
}

/// `c = alpha * a(m×k) * b(k×n) + beta * c(m×n)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || max_offset(m, k, la) < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || max_offset(k, n, lb) < b.len(), "gemm: rhs out of bounds");
    assert!(max_offset(m, n, lc) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index touched by the kernel lies within the bounds checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            lc.rs,
            lc.cs,
        );
    }
}
