//! Banded LU with partial pivoting and a small dense LU wrapper.
//!
//! The fine-grid transport Jacobians are pentadiagonal in lexicographic cell
//! order, so a band factorization is exact and cheap. For velocities with
//! nonnegative components the upwind Jacobian is lower triangular and the
//! factorization degenerates to a forward sweep; the per-row extent tracking
//! below keeps that case O(n * kl).

use nalgebra::DMatrix;

/// Raised when a factorization meets a zero (or non-finite) pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularMatrix {
    pub pivot_index: usize,
}

/// A factored linear operator that can solve `A x = b` in place.
pub trait LinearSolve {
    fn dim(&self) -> usize;
    fn solve_in_place(&self, rhs: &mut [f64]);
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage reserves `kl` extra super-diagonals for fill-in from row
/// interchanges, LAPACK-style.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku && i < self.n && j < self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.offset(i, j)]
        } else {
            0.0
        }
    }

    /// Accumulates `value` into entry `(i, j)`; panics outside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.offset(i, j);
        self.data[k] += value;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Factors `P A = L U` in place.
    pub fn factor(mut self) -> Result<BandLu, SingularMatrix> {
        let n = self.n;
        let kl = self.kl;
        let max_upper = kl + self.ku;
        let mut pivots = vec![0usize; n];

        // Last column that may hold a nonzero in each row.
        let mut row_end: Vec<usize> = (0..n)
            .map(|i| {
                let hi = (i + self.ku).min(n - 1);
                (i..=hi)
                    .rev()
                    .find(|&j| self.data[self.offset(i, j)] != 0.0)
                    .unwrap_or(i)
            })
            .collect();

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.offset(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.offset(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best.is_finite() && best > 0.0) {
                return Err(SingularMatrix { pivot_index: k });
            }
            pivots[k] = p;
            if p != k {
                let hi = (k + max_upper).min(n - 1);
                for j in k..=hi {
                    let a = self.offset(k, j);
                    let b = self.offset(p, j);
                    self.data.swap(a, b);
                }
                row_end.swap(k, p);
                row_end[k] = row_end[k].max(k);
            }
            let pivot = self.data[self.offset(k, k)];
            let end = row_end[k];
            let pivot_row = self.offset(k, k);
            for i in k + 1..=last_row {
                let at = self.offset(i, k);
                let entry = self.data[at];
                if entry == 0.0 {
                    continue;
                }
                let l = entry / pivot;
                self.data[at] = l;
                let row_i = self.offset(i, k);
                for step in 1..=end - k {
                    let u = self.data[pivot_row + step];
                    self.data[row_i + step] -= l * u;
                }
                if end > row_end[i] {
                    row_end[i] = end;
                }
            }
        }
        // Nonzero multipliers of each column of L, for sparse forward sweeps.
        let mut lower_start = Vec::with_capacity(n + 1);
        let mut lower = Vec::new();
        for k in 0..n {
            lower_start.push(lower.len());
            for i in k + 1..=(k + kl).min(n - 1) {
                let l = self.data[self.offset(i, k)];
                if l != 0.0 {
                    lower.push((i, l));
                }
            }
        }
        lower_start.push(lower.len());
        Ok(BandLu {
            band: self,
            pivots,
            row_end,
            lower_start,
            lower,
        })
    }
}

/// Result of [`BandMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandLu {
    band: BandMatrix,
    pivots: Vec<usize>,
    row_end: Vec<usize>,
    lower_start: Vec<usize>,
    lower: Vec<(usize, f64)>,
}

impl LinearSolve for BandLu {
    fn dim(&self) -> usize {
        self.band.n
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.band.n;
        assert_eq!(b.len(), n);
        let a = &self.band;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == 0.0 {
                continue;
            }
            for &(i, l) in &self.lower[self.lower_start[k]..self.lower_start[k + 1]] {
                b[i] -= l * bk;
            }
        }
        for k in (0..n).rev() {
            let row = a.offset(k, k);
            let end = self.row_end[k];
            let upper = &a.data[row + 1..row + 1 + (end - k)];
            let s: f64 = upper.iter().zip(&b[k + 1..=end]).map(|(u, x)| u * x).sum();
            b[k] = (b[k] - s) / a.data[row];
        }
    }
}

/// Sparsity pattern of a matrix that is lower triangular after a symmetric
/// permutation, stored by columns. Upwind transport operators on an acyclic
/// flow graph have this form, with the permutation a topological order.
#[derive(Debug, Clone)]
pub struct SweepPattern {
    order: Vec<usize>,
    col_start: Vec<usize>,
    rows: Vec<usize>,
}

impl SweepPattern {
    /// Builds the pattern for off-diagonal positions `(row, col)`. Returns
    /// the pattern and the value slot of each entry, or `None` if the entries
    /// admit no triangular ordering.
    pub fn new(n: usize, entries: &[(usize, usize)]) -> Option<(Self, Vec<usize>)> {
        let mut count = vec![0usize; n + 1];
        for &(_, c) in entries {
            count[c + 1] += 1;
        }
        for k in 0..n {
            count[k + 1] += count[k];
        }
        let col_start = count.clone();
        let mut next = count;
        let mut rows = vec![0; entries.len()];
        let mut slots = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            rows[next[c]] = r;
            slots.push(next[c]);
            next[c] += 1;
        }
        let mut indegree = vec![0usize; n];
        for &r in &rows {
            indegree[r] += 1;
        }
        let mut order: Vec<usize> = (0..n).filter(|&k| indegree[k] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let k = order[head];
            head += 1;
            for &r in &rows[col_start[k]..col_start[k + 1]] {
                indegree[r] -= 1;
                if indegree[r] == 0 {
                    order.push(r);
                }
            }
        }
        (order.len() == n).then_some((Self { order, col_start, rows }, slots))
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }
}

/// Values on a [`SweepPattern`]; solved by one substitution sweep.
#[derive(Debug, Clone)]
pub struct SweepMatrix<'p> {
    pattern: &'p SweepPattern,
    diag: Vec<f64>,
    values: Vec<f64>,
}

impl<'p> SweepMatrix<'p> {
    pub fn zeros(pattern: &'p SweepPattern) -> Self {
        Self {
            pattern,
            diag: vec![0.0; pattern.dim()],
            values: vec![0.0; pattern.rows.len()],
        }
    }

    #[inline]
    pub fn add_diag(&mut self, i: usize, value: f64) {
        self.diag[i] += value;
    }

    #[inline]
    pub fn add_slot(&mut self, slot: usize, value: f64) {
        self.values[slot] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let p = self.pattern;
        (p.col_start[j]..p.col_start[j + 1])
            .filter(|&s| p.rows[s] == i)
            .map(|s| self.values[s])
            .sum()
    }

    /// Checks the diagonal; the matrix is its own factorization.
    pub fn factor(self) -> Result<Self, SingularMatrix> {
        match self.diag.iter().position(|d| !(d.is_finite() && *d != 0.0)) {
            Some(pivot_index) => Err(SingularMatrix { pivot_index }),
            None => Ok(self),
        }
    }
}

impl LinearSolve for SweepMatrix<'_> {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let p = self.pattern;
        assert_eq!(b.len(), self.diag.len());
        for &k in &p.order {
            let x = b[k] / self.diag[k];
            b[k] = x;
            if x != 0.0 {
                for s in p.col_start[k]..p.col_start[k + 1] {
                    b[p.rows[s]] -= self.values[s] * x;
                }
            }
        }
    }
}

/// Dense LU backed by nalgebra, for small systems and test problems.
pub struct DenseLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl DenseLu {
    pub fn factor(matrix: DMatrix<f64>) -> Result<Self, SingularMatrix> {
        let n = matrix.nrows();
        let lu = matrix.lu();
        let u = lu.u();
        for k in 0..n {
            let d = u[(k, k)];
            if !(d.is_finite() && d != 0.0) {
                return Err(SingularMatrix { pivot_index: k });
            }
        }
        Ok(Self { lu, n })
    }
}

impl LinearSolve for DenseLu {
    fn dim(&self) -> usize {
        self.n
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut v = nalgebra::DVector::from_column_slice(rhs);
        let ok = self.lu.solve_mut(&mut v);
        debug_assert!(ok, "factor() rejects singular matrices");
        rhs.copy_from_slice(v.as_slice());
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| {
        if x.is_nan() {
            f64::NAN
        } else {
            m.max(x.abs())
        }
    })
}
