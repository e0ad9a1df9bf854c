//! Dense LU with partial pivoting for the small `d x d` volatility matrices.

/// Smallest admissible |det(sigma)|.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct Lu {
    n: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
    det: f64,
}

impl Lu {
    pub(crate) fn with_size(n: usize) -> Self {
        Lu {
            n,
            a: vec![0.0; n * n],
            perm: (0..n).collect(),
            det: 0.0,
        }
    }

    /// Factorises the row-major matrix `m`. Returns the determinant.
    pub(crate) fn factor(&mut self, m: &[f64]) -> f64 {
        let n = self.n;
        self.a.copy_from_slice(m);
        for (i, p) in self.perm.iter_mut().enumerate() {
            *p = i;
        }
        let a = &mut self.a;
        let mut det = 1.0;
        for k in 0..n {
            let mut piv = k;
            for i in k + 1..n {
                if a[i * n + k].abs() > a[piv * n + k].abs() {
                    piv = i;
                }
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                self.perm.swap(k, piv);
                det = -det;
            }
            let p = a[k * n + k];
            det *= p;
            if p == 0.0 {
                self.det = 0.0;
                return 0.0;
            }
            for i in k + 1..n {
                let f = a[i * n + k] / p;
                a[i * n + k] = f;
                for j in k + 1..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
            }
        }
        self.det = det;
        det
    }

    /// Solves `M x = b` in place; requires a successful [`Lu::factor`].
    pub(crate) fn solve(&self, b: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        let a = &self.a;
        for i in 0..n {
            scratch[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut s = scratch[i];
            for j in 0..i {
                s -= a[i * n + j] * scratch[j];
            }
            scratch[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = scratch[i];
            for j in i + 1..n {
                s -= a[i * n + j] * scratch[j];
            }
            scratch[i] = s / a[i * n + i];
        }
        b.copy_from_slice(&scratch[..n]);
    }
}
