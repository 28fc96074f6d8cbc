//! Dense square-ish matrices and an exact sparse linear solver.

use std::collections::BTreeMap;
use std::fmt;

use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, T::one())
    }

    pub fn scalar(n: usize, x: T) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = x.clone();
        }
        m
    }

    pub fn diagonal(entries: &[T]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, x) in entries.iter().enumerate() {
            m[(i, i)] = x.clone();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged matrix rows");
        Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, r: usize) -> Vec<T> {
        self.data[r * self.cols..(r + 1) * self.cols].to_vec()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|r| self.row(r)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_negligible())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)].clone();
            }
        }
        t
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a.clone() + b.clone()).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a.clone() - b.clone()).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, k: &T) -> Self {
        let data = self.data.iter().map(|a| a.clone() * k.clone()).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn neg(&self) -> Self {
        let data = self.data.iter().map(|a| -a.clone()).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// Adds `k * other` in place.
    pub fn add_scaled(&mut self, k: &T, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            if !b.is_negligible() {
                *a = a.clone() + k.clone() * b.clone();
            }
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matrix product shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_negligible() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = &other[(k, j)];
                    if !b.is_negligible() {
                        out[(i, j)] = out[(i, j)].clone() + a.clone() * b.clone();
                    }
                }
            }
        }
        out
    }

    /// Row vector times matrix.
    pub fn left_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (k, a) in v.iter().enumerate() {
            if a.is_negligible() {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                let b = &self[(k, j)];
                if !b.is_negligible() {
                    *o = o.clone() + a.clone() * b.clone();
                }
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let mut acc = T::zero();
                for (c, x) in v.iter().enumerate() {
                    let a = &self[(r, c)];
                    if !a.is_negligible() && !x.is_negligible() {
                        acc = acc + a.clone() * x.clone();
                    }
                }
                acc
            })
            .collect()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)].clone())
    }

    pub fn symmetric_part(&self) -> Self {
        self.add(&self.transpose()).scale(&T::from_frac(1, 2))
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && self.sub(&self.transpose()).is_zero()
    }

    pub fn inverse(&self) -> Option<Self> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .filter(|&r| !a[(r, col)].is_negligible())
                .max_by(|&x, &y| a[(x, col)].magnitude().total_cmp(&a[(y, col)].magnitude()))?;
            a.swap_rows(col, pivot);
            inv.swap_rows(col, pivot);
            let p = a[(col, col)].clone();
            for c in 0..n {
                a[(col, c)] = a[(col, c)].clone() / p.clone();
                inv[(col, c)] = inv[(col, c)].clone() / p.clone();
            }
            for r in 0..n {
                if r == col || a[(r, col)].is_negligible() {
                    continue;
                }
                let f = a[(r, col)].clone();
                for c in 0..n {
                    let ac = a[(col, c)].clone();
                    if !ac.is_negligible() {
                        a[(r, c)] = a[(r, c)].clone() - f.clone() * ac;
                    }
                    let ic = inv[(col, c)].clone();
                    if !ic.is_negligible() {
                        inv[(r, c)] = inv[(r, c)].clone() - f.clone() * ic;
                    }
                }
            }
        }
        Some(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    /// Principal submatrix on the given index set.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        let mut m = Self::zeros(idx.len(), idx.len());
        for (i, &r) in idx.iter().enumerate() {
            for (j, &c) in idx.iter().enumerate() {
                m[(i, j)] = self[(r, c)].clone();
            }
        }
        m
    }

    /// Writes `block` into the principal positions `idx`.
    pub fn embed(&mut self, idx: &[usize], block: &Self) {
        for (i, &r) in idx.iter().enumerate() {
            for (j, &c) in idx.iter().enumerate() {
                self[(r, c)] = block[(i, j)].clone();
            }
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let cols = self.cols;
        self.data.iter().enumerate().map(move |(k, x)| (k / cols, k % cols, x))
    }

    /// Largest residual height, zero for the zero matrix.
    pub fn max_height(&self) -> f64 {
        self.data.iter().map(|x| x.height()).fold(0.0, f64::max)
    }
}

pub fn vec_is_zero<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_negligible())
}

pub fn vec_add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| x.clone() + y.clone()).collect()
}

pub fn vec_scale<T: Scalar>(a: &[T], k: &T) -> Vec<T> {
    a.iter().map(|x| x.clone() * k.clone()).collect()
}

/// A linear equation `sum coeffs[j] * x_j = rhs`.
#[derive(Clone, Debug)]
pub struct Equation<T> {
    pub coeffs: BTreeMap<usize, T>,
    pub rhs: T,
}

impl<T: Scalar> Equation<T> {
    pub fn new(rhs: T) -> Self {
        Equation { coeffs: BTreeMap::new(), rhs }
    }

    pub fn add_term(&mut self, var: usize, c: T) {
        if c.is_negligible() {
            return;
        }
        let slot = self.coeffs.entry(var).or_insert_with(T::zero);
        *slot = slot.clone() + c;
        if slot.is_negligible() {
            self.coeffs.remove(&var);
        }
    }
}

/// Affine solution set `particular + span(kernel)`.
#[derive(Clone, Debug)]
pub struct SolutionSpace<T> {
    pub particular: Vec<T>,
    pub kernel: Vec<Vec<T>>,
}

/// Exact Gauss-Jordan elimination on sparse rows.
///
/// Returns `None` when the system is inconsistent.
pub fn solve_linear<T: Scalar>(nvars: usize, equations: Vec<Equation<T>>) -> Option<SolutionSpace<T>> {
    let mut pivots: Vec<(usize, Equation<T>)> = Vec::new();
    for mut eq in equations {
        for (pv, prow) in &pivots {
            if let Some(c) = eq.coeffs.get(pv).cloned() {
                for (v, x) in &prow.coeffs {
                    eq.add_term(*v, -(c.clone() * x.clone()));
                }
                eq.rhs = eq.rhs.clone() - c * prow.rhs.clone();
            }
        }
        let Some((&pv, _)) = eq.coeffs.iter().max_by(|a, b| a.1.magnitude().total_cmp(&b.1.magnitude())) else {
            if eq.rhs.is_negligible() {
                continue;
            }
            return None;
        };
        let p = eq.coeffs[&pv].clone();
        let coeffs = eq.coeffs.iter().map(|(v, x)| (*v, x.clone() / p.clone())).collect();
        let norm = Equation { coeffs, rhs: eq.rhs.clone() / p };
        for (_, prow) in pivots.iter_mut() {
            if let Some(c) = prow.coeffs.get(&pv).cloned() {
                for (v, x) in &norm.coeffs {
                    prow.add_term(*v, -(c.clone() * x.clone()));
                }
                prow.rhs = prow.rhs.clone() - c * norm.rhs.clone();
            }
        }
        pivots.push((pv, norm));
    }
    let pivot_vars: BTreeMap<usize, &Equation<T>> = pivots.iter().map(|(v, e)| (*v, e)).collect();
    let free: Vec<usize> = (0..nvars).filter(|v| !pivot_vars.contains_key(v)).collect();
    let mut particular = vec![T::zero(); nvars];
    for (v, e) in &pivot_vars {
        particular[*v] = e.rhs.clone();
    }
    let kernel = free
        .iter()
        .map(|&f| {
            let mut k = vec![T::zero(); nvars];
            k[f] = T::one();
            for (v, e) in &pivot_vars {
                if let Some(c) = e.coeffs.get(&f) {
                    k[*v] = -c.clone();
                }
            }
            k
        })
        .collect();
    Some(SolutionSpace { particular, kernel })
}
