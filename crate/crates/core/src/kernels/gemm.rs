//! Safe strided wrapper over `matrixmultiply::sgemm`.

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// View of the transpose of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [f32], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_index(&self) -> usize {
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `c = alpha * a * b + beta * c`, where `c` is addressed through raw strides.
///
/// # Safety
///
/// `c` must be valid for reads and writes at every offset
/// `i * c_row_stride + j * c_col_stride` for `i < a.rows`, `j < b.cols`, and no
/// other thread may access those elements for the duration of the call.
pub(crate) unsafe fn gemm_raw(
    alpha: f32,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f32,
    c: *mut f32,
    c_row_stride: usize,
    c_col_stride: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions differ");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        // Degenerate product; only the beta scaling applies.
        for i in 0..a.rows {
            for j in 0..b.cols {
                let p = c.add(i * c_row_stride + j * c_col_stride);
                *p *= beta;
            }
        }
        return;
    }
    assert!(a.max_index() < a.data.len(), "gemm lhs view out of bounds");
    assert!(b.max_index() < b.data.len(), "gemm rhs view out of bounds");
    matrixmultiply::sgemm(
        a.rows,
        a.cols,
        b.cols,
        alpha,
        a.data.as_ptr(),
        a.row_stride as isize,
        a.col_stride as isize,
        b.data.as_ptr(),
        b.row_stride as isize,
        b.col_stride as isize,
        beta,
        c,
        c_row_stride as isize,
        c_col_stride as isize,
    );
}

/// `c = alpha * a * b + beta * c` with `c` a dense row-major buffer.
pub(crate) fn gemm(alpha: f32, a: MatRef<'_>, b: MatRef<'_>, beta: f32, c: &mut [f32]) {
    assert_eq!(c.len(), a.rows * b.cols, "gemm output has the wrong size");
    // SAFETY: `c` is exclusively borrowed and exactly `a.rows * b.cols` long.
    unsafe { gemm_raw(alpha, a, b, beta, c.as_mut_ptr(), b.cols, 1) }
}

/// Raw output pointer that can be shared across rayon tasks writing disjoint
/// regions.
#[derive(Clone, Copy)]
pub(crate) struct SharedMut(pub *mut f32);

// SAFETY: callers guarantee that concurrent users touch disjoint elements.
unsafe impl Send for SharedMut {}
unsafe impl Sync for SharedMut {}
