//! Small dense linear algebra: Householder least squares and a safe GEMM
//! wrapper over `matrixmultiply`.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

/// Row-major dense matrix view description used by [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Stored as given (`rows x cols`, row-major).
    Normal,
    /// Use the transpose of the stored row-major matrix.
    Transposed,
}

/// `c = a * b + beta * c` for row-major buffers.
///
/// `a` is logically `m x k`, `b` is `k x n`, `c` is `m x n`. With
/// [`Layout::Transposed`], the buffer holds the transpose (`k x m` for `a`,
/// `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_layout: Layout,
    b: &[T],
    b_layout: Layout,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs buffer too small");
    assert!(b.len() >= k * n, "gemm: rhs buffer too small");
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: bounds checked above; `c` is a unique borrow so it cannot alias
    // `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Householder QR factorization of a tall `rows x cols` matrix.
#[derive(Debug, Clone)]
pub struct Qr {
    rows: usize,
    cols: usize,
    /// Row-major; R in the upper triangle, Householder vectors below.
    qr: Vec<f64>,
    /// Diagonal of R.
    diag: Vec<f64>,
}

impl Qr {
    pub fn new(rows: usize, cols: usize, a: &[f64]) -> Result<Self> {
        if rows < cols {
            return Err(Error::Underdetermined {
                rows,
                degree: cols.saturating_sub(1),
            });
        }
        assert_eq!(a.len(), rows * cols);
        let mut qr = a.to_vec();
        let mut diag = vec![0.0; cols];
        for k in 0..cols {
            let mut norm = 0.0f64;
            for i in k..rows {
                norm = norm.hypot(qr[i * cols + k]);
            }
            if norm == 0.0 {
                return Err(Error::InvalidArgument(
                    "rank-deficient least-squares system",
                ));
            }
            if qr[k * cols + k] < 0.0 {
                norm = -norm;
            }
            for i in k..rows {
                qr[i * cols + k] /= norm;
            }
            qr[k * cols + k] += 1.0;
            for j in k + 1..cols {
                let mut s = 0.0;
                for i in k..rows {
                    s += qr[i * cols + k] * qr[i * cols + j];
                }
                s = -s / qr[k * cols + k];
                for i in k..rows {
                    qr[i * cols + j] += s * qr[i * cols + k];
                }
            }
            diag[k] = -norm;
        }
        Ok(Self {
            rows,
            cols,
            qr,
            diag,
        })
    }

    /// Least-squares solution of `A x = b`.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.rows);
        let (m, n) = (self.rows, self.cols);
        let mut y = b.to_vec();
        for k in 0..n {
            let mut s = 0.0;
            for i in k..m {
                s += self.qr[i * n + k] * y[i];
            }
            s = -s / self.qr[k * n + k];
            for i in k..m {
                y[i] += s * self.qr[i * n + k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..n {
                s -= self.qr[k * n + j] * x[j];
            }
            x[k] = s / self.diag[k];
        }
        x
    }
}
