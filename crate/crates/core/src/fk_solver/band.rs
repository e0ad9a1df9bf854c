//! Banded LU with partial pivoting, column-major band storage.

/// `n x n` matrix with `kl` sub- and `ku` super-diagonals, plus room for the
/// `kl` extra super-diagonals that row interchanges create.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandMatrix {
    pub(crate) fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ld,
            ab: vec![0.0; ld * n],
            piv: vec![0; n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        self.kl + self.ku + i - j + j * self.ld
    }

    pub(crate) fn clear(&mut self) {
        self.ab.fill(0.0);
    }

    /// Sets entry `(i, j)`; must lie inside the declared band.
    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i <= j + self.kl && j <= i + self.ku);
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    /// In-place factorisation. Returns `false` on an exactly zero pivot.
    pub(crate) fn factor(&mut self) -> bool {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ju = 0;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for i in 1..=km {
                let v = self.ab[self.idx(j + i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.piv[j] = j + p;
            if best == 0.0 {
                return false;
            }
            ju = ju.max((j + ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let (a, b) = (self.idx(j, c), self.idx(j + p, c));
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(j, j)];
            for i in 1..=km {
                let k = self.idx(j + i, j);
                self.ab[k] /= pivot;
            }
            for c in j + 1..=ju {
                let top = self.ab[self.idx(j, c)];
                if top == 0.0 {
                    continue;
                }
                for i in 1..=km {
                    let l = self.ab[self.idx(j + i, j)];
                    let k = self.idx(j + i, c);
                    self.ab[k] -= l * top;
                }
            }
        }
        true
    }

    /// Solves `A x = b` in place after [`BandMatrix::factor`].
    pub(crate) fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for j in 0..n {
            b.swap(j, self.piv[j]);
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            for i in 1..=km {
                b[j + i] -= self.ab[self.idx(j + i, j)] * bj;
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[self.idx(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(kl + ku)..j {
                b[i] -= self.ab[self.idx(i, j)] * bj;
            }
        }
    }
}
