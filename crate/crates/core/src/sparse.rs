//! Coordinate-triplet assembly, compressed storage and a left-looking sparse LU
//! with partial pivoting, generic over real and complex scalars.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;
use thiserror::Error;

/// Field operations needed by the factorization.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn modulus(self) -> f64;
    fn conj(self) -> Self;
    fn from_real(v: f64) -> Self;
    fn re(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn conj(self) -> Self {
        self
    }
    fn from_real(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn from_real(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
}

/// Sparse vector with sorted, unique indices. Explicit zeros are kept so the
/// sparsity structure only depends on the circuit, not on the values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec<T = f64> {
    pub len: usize,
    pub entries: Vec<(usize, T)>,
}

impl<T: Scalar> SparseVec<T> {
    pub fn zeros(len: usize) -> Self {
        Self { len, entries: Vec::new() }
    }

    /// Sorts and sums duplicate indices.
    pub fn from_pairs(len: usize, mut pairs: Vec<(usize, T)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(usize, T)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            debug_assert!(i < len, "index {i} out of range {len}");
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => entries.push((i, v)),
            }
        }
        Self { len, entries }
    }

    pub fn get(&self, i: usize) -> T {
        match self.entries.binary_search_by_key(&i, |&(j, _)| j) {
            Ok(k) => self.entries[k].1,
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.len];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

impl SparseVec<f64> {
    pub fn norm_inf(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, &(_, v)| m.max(v.abs()))
    }
}

/// Compressed coordinate matrix: entries sorted by (row, col), duplicates summed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMat<T = f64> {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> SparseMat<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, T)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols, "({r},{c}) out of {nrows}x{ncols}");
            match entries.last_mut() {
                Some((rr, cc, acc)) if *rr == r && *cc == c => *acc += v,
                _ => entries.push((r, c, v)),
            }
        }
        Self { nrows, ncols, entries }
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        match self.entries.binary_search_by_key(&(r, c), |&(rr, cc, _)| (rr, cc)) {
            Ok(k) => self.entries[k].2,
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.ncols]; self.nrows];
        for &(r, c, v) in &self.entries {
            out[r][c] = v;
        }
        out
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `yᵀ = wᵀ·M`, i.e. `Mᵀ·w`.
    pub fn transpose_mul_vec(&self, w: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.ncols];
        for &(r, c, v) in &self.entries {
            y[c] += v * w[r];
        }
        y
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.2.modulus()))
    }

    pub fn to_csc(&self) -> Csc<T> {
        Csc::from_triplets(self.nrows, self.ncols, self.entries.clone())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> SparseMat<U> {
        SparseMat {
            nrows: self.nrows,
            ncols: self.ncols,
            entries: self.entries.iter().map(|&(r, c, v)| (r, c, f(v))).collect(),
        }
    }
}

/// Compressed sparse column storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Csc<T = f64> {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Scalar> Csc<T> {
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (c, r));
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowidx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("non-empty") += v;
            } else {
                rowidx.push(r);
                vals.push(v);
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        Self { nrows, ncols, colptr, rowidx, vals }
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.colptr[j], self.colptr[j + 1]);
        self.rowidx[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.modulus()))
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        for (j, &xj) in x.iter().enumerate().take(self.ncols) {
            for (i, v) in self.col(j) {
                y[i] += v * xj;
            }
        }
        y
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LuError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix is singular: no acceptable pivot for unknown {column}")]
    Singular { column: usize },
}

const NO_STEP: usize = usize::MAX;
/// Relative pivot threshold against the largest matrix entry.
const PIVOT_RTOL: f64 = 1e-13;

/// `P·A = L·U` with unit-diagonal `L`; `L` and `U` are stored by elimination step.
#[derive(Debug, Clone)]
pub struct SparseLu<T> {
    n: usize,
    /// Original row chosen as pivot at each step.
    pivrow: Vec<usize>,
    /// L column k: (step index, multiplier) for steps > k.
    lcols: Vec<Vec<(usize, T)>>,
    /// U column j: (step index k < j, value), diagonal kept separately.
    ucols: Vec<Vec<(usize, T)>>,
    udiag: Vec<T>,
}

impl<T: Scalar> SparseLu<T> {
    pub fn factor(a: &Csc<T>) -> Result<Self, LuError> {
        if a.nrows != a.ncols {
            return Err(LuError::NotSquare(a.nrows, a.ncols));
        }
        let n = a.ncols;
        let tol = PIVOT_RTOL * a.max_abs();
        let mut work = vec![T::zero(); n];
        let mut touched = vec![false; n];
        let mut touched_list: Vec<usize> = Vec::new();
        let mut rowstep = vec![NO_STEP; n];
        let mut pivrow = Vec::with_capacity(n);
        let mut lcols: Vec<Vec<(usize, T)>> = Vec::with_capacity(n);
        let mut ucols: Vec<Vec<(usize, T)>> = Vec::with_capacity(n);
        let mut udiag = Vec::with_capacity(n);

        for j in 0..n {
            for (i, v) in a.col(j) {
                if !touched[i] {
                    touched[i] = true;
                    touched_list.push(i);
                }
                work[i] += v;
            }
            let mut ucol = Vec::new();
            for k in 0..j {
                let r = pivrow[k];
                let ukj = work[r];
                if ukj == T::zero() {
                    continue;
                }
                ucol.push((k, ukj));
                for &(i, l) in &lcols[k] {
                    if !touched[i] {
                        touched[i] = true;
                        touched_list.push(i);
                    }
                    work[i] -= l * ukj;
                }
            }
            let mut best: Option<(usize, f64)> = None;
            for &i in &touched_list {
                if rowstep[i] == NO_STEP {
                    let m = work[i].modulus();
                    if best.map_or(true, |(_, bm)| m > bm) {
                        best = Some((i, m));
                    }
                }
            }
            let (p, pm) = match best {
                Some(b) => b,
                None => return Err(LuError::Singular { column: j }),
            };
            if !(pm > tol) || pm == 0.0 {
                return Err(LuError::Singular { column: j });
            }
            let piv = work[p];
            let mut lcol = Vec::new();
            for &i in &touched_list {
                if rowstep[i] == NO_STEP && i != p && work[i] != T::zero() {
                    lcol.push((i, work[i] / piv));
                }
            }
            rowstep[p] = j;
            pivrow.push(p);
            udiag.push(piv);
            ucols.push(ucol);
            lcols.push(lcol);
            for &i in &touched_list {
                work[i] = T::zero();
                touched[i] = false;
            }
            touched_list.clear();
        }
        for col in &mut lcols {
            for e in col.iter_mut() {
                e.0 = rowstep[e.0];
            }
        }
        Ok(Self { n, pivrow, lcols, ucols, udiag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut z: Vec<T> = (0..n).map(|k| b[self.pivrow[k]]).collect();
        for k in 0..n {
            let zk = z[k];
            if zk == T::zero() {
                continue;
            }
            for &(s, l) in &self.lcols[k] {
                z[s] -= l * zk;
            }
        }
        let mut x = vec![T::zero(); n];
        for j in (0..n).rev() {
            let xj = z[j] / self.udiag[j];
            x[j] = xj;
            for &(k, u) in &self.ucols[j] {
                z[k] -= u * xj;
            }
        }
        x
    }

    /// Solves `Aᵀ·x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        self.solve_transposed_impl(b, false)
    }

    /// Solves `Aᴴ·x = b`.
    pub fn solve_adjoint(&self, b: &[T]) -> Vec<T> {
        self.solve_transposed_impl(b, true)
    }

    fn solve_transposed_impl(&self, b: &[T], conjugate: bool) -> Vec<T> {
        let n = self.n;
        let c = |v: T| if conjugate { v.conj() } else { v };
        let mut y = vec![T::zero(); n];
        for j in 0..n {
            let mut acc = b[j];
            for &(k, u) in &self.ucols[j] {
                acc -= c(u) * y[k];
            }
            y[j] = acc / c(self.udiag[j]);
        }
        for k in (0..n).rev() {
            let mut acc = y[k];
            for &(s, l) in &self.lcols[k] {
                acc -= c(l) * y[s];
            }
            y[k] = acc;
        }
        let mut x = vec![T::zero(); n];
        for k in 0..n {
            x[self.pivrow[k]] = y[k];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_system(n: usize, seed: u64) -> (Vec<(usize, usize, f64)>, Vec<Vec<f64>>) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut dense = vec![vec![0.0; n]; n];
        let mut trip = Vec::new();
        for i in 0..n {
            // diagonal deliberately weak so pivoting is exercised
            let d = rng.gen_range(-0.1..0.1);
            trip.push((i, i, d));
            dense[i][i] += d;
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                let v = rng.gen_range(-1.0..1.0);
                trip.push((i, j, v));
                dense[i][j] += v;
            }
        }
        (trip, dense)
    }

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn solves_match_dense_products() {
        for seed in 0..20 {
            let n = 12;
            let (trip, dense) = random_system(n, seed);
            let csc = Csc::from_triplets(n, n, trip);
            let lu = match SparseLu::factor(&csc) {
                Ok(lu) => lu,
                Err(_) => continue,
            };
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = dense_mul(&dense, &x);
            let got = lu.solve(&b);
            for i in 0..n {
                assert!((got[i] - x[i]).abs() < 1e-8, "seed {seed}: {} vs {}", got[i], x[i]);
            }
            let at: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dense[j][i]).collect()).collect();
            let bt = dense_mul(&at, &x);
            let got_t = lu.solve_transpose(&bt);
            for i in 0..n {
                assert!((got_t[i] - x[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn detects_structurally_singular() {
        let csc = Csc::from_triplets(3, 3, vec![(0, 0, 1.0), (1, 0, 1.0), (2, 2, 1.0)]);
        assert_eq!(SparseLu::factor(&csc).unwrap_err(), LuError::Singular { column: 1 });
    }

    #[test]
    fn complex_adjoint_solve() {
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let trip = vec![(0, 0, one + i), (0, 1, 2.0 * one), (1, 0, -i), (1, 1, 3.0 * one - i)];
        let csc = Csc::from_triplets(2, 2, trip.clone());
        let lu = SparseLu::factor(&csc).unwrap();
        let b = vec![one, i];
        let x = lu.solve_adjoint(&b);
        // Aᴴ x should reproduce b
        let mut r = vec![Complex64::new(0.0, 0.0); 2];
        for &(row, col, v) in &trip {
            r[col] += v.conj() * x[row];
        }
        for k in 0..2 {
            assert!((r[k] - b[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn triplet_merge_sums_duplicates() {
        let m = SparseMat::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5)]);
        assert_eq!(m.entries, vec![(0, 1, 2.0), (1, 0, 1.5)]);
        let v = SparseVec::from_pairs(3, vec![(2, 1.0), (0, 1.0), (2, -1.0)]);
        assert_eq!(v.entries, vec![(0, 1.0), (2, 0.0)]);
    }
}
