//! Banded LU factorization without pivoting, for M-matrix systems.

/// Square matrix with `lower` sub- and `upper` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    /// Row-major; row `i` stores columns `i - lower ..= i + upper`.
    data: Vec<f64>,
}

/// Zero (or vanishing) pivot at the given row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakdown {
    pub row: usize,
    pub pivot: f64,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> BandMatrix {
        BandMatrix {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.upper, "({i}, {j}) outside band");
        i * (self.lower + self.upper + 1) + (j + self.lower - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.lower < i || j > i + self.upper {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.lower);
            let hi = (i + self.upper).min(self.n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.data[self.idx(i, j)] * x[j];
            }
            y[i] = acc;
        }
    }

    /// In-place LU factorization (unit lower triangle stored below the diagonal).
    pub fn factor(&mut self) -> Result<(), Breakdown> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
                return Err(Breakdown { row: k, pivot });
            }
            let row_end = (k + self.upper).min(n - 1);
            for i in k + 1..=(k + self.lower).min(n - 1) {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..=row_end {
                    let kj = self.data[self.idx(k, j)];
                    if kj != 0.0 {
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `LU x = b` in place after [`Self::factor`].
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.lower);
            let mut acc = b[i];
            for j in lo..i {
                acc -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + self.upper).min(n - 1);
            let mut acc = b[i];
            for j in i + 1..=hi {
                acc -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = acc / self.data[self.idx(i, i)];
        }
    }
}
