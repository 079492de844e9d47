//! Safe wrapper over `matrixmultiply::sgemm`.

/// Reductions longer than this are split and the partial products summed in f64.
pub(crate) const F64_ACCUMULATE_ABOVE: usize = 4096;

/// Strided read-only matrix view: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }

    /// Columns `[start, start + len)` (for a left operand) as a view.
    fn col_range(self, start: usize, len: usize) -> Self {
        let off = start * self.cs;
        Self { data: &self.data[off.min(self.data.len())..], rows: self.rows, cols: len, rs: self.rs, cs: self.cs }
    }

    fn row_range(self, start: usize, len: usize) -> Self {
        let off = start * self.rs;
        Self { data: &self.data[off.min(self.data.len())..], rows: len, cols: self.cols, rs: self.rs, cs: self.cs }
    }
}

fn sgemm_raw(a: MatRef, b: MatRef, c: &mut [f32], beta: f32) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    a.check();
    b.check();
    // SAFETY: both views were bounds-checked above and `c` holds m*n elements
    // laid out row-major; the three buffers do not alias.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a * b` (or `c += a * b` when `accumulate`), `c` row-major `[m, n]`.
pub(crate) fn matmul(a: MatRef, b: MatRef, c: &mut [f32], accumulate: bool) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "output buffer too small");
    if k <= F64_ACCUMULATE_ABOVE {
        sgemm_raw(a, b, c, if accumulate { 1.0 } else { 0.0 });
        return;
    }
    let mut acc: Vec<f64> = if accumulate {
        c[..m * n].iter().map(|&v| v as f64).collect()
    } else {
        vec![0.0; m * n]
    };
    let mut part = vec![0.0f32; m * n];
    let mut start = 0;
    while start < k {
        let len = F64_ACCUMULATE_ABOVE.min(k - start);
        sgemm_raw(a.col_range(start, len), b.row_range(start, len), &mut part, 0.0);
        acc.iter_mut().zip(&part).for_each(|(s, &p)| *s += p as f64);
        start += len;
    }
    c[..m * n].iter_mut().zip(&acc).for_each(|(o, &s)| *o = s as f32);
}
