//! Splitting an n-dimensional representation into one-dimensional tensor
//! factors, and assembling product solutions from factor solutions.
//!
//! A basis change `P = S^{-1}` is chosen so that the pairing and every
//! bilinear form of the sl(2) data become diagonal. Generators then act on
//! disjoint sets of variables, one set per basis vector.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fock::{quantize, FockOperator, Monomial, TruncatedSeries};
use crate::heisenberg::{parse_matrix, render_matrix, Pairing, QuadOperator};
use crate::linalg::{solve_linear, Equation, Matrix};
use crate::scalar::Scalar;
use crate::solver::{solve_constraints_1d, verify_solution, SolutionReport};
use crate::virasoro::{Sl2Data, VirasoroRep};

/// Basis change `S` with the ordered blocks it produces and the transformed forms.
#[derive(Clone, Debug, PartialEq)]
pub struct Splitting<T> {
    s: Matrix<T>,
    basis: Matrix<T>,
    blocks: Vec<Vec<usize>>,
    pairing: Matrix<T>,
    qq: Matrix<T>,
    degree_block: Matrix<T>,
    raising_block: Matrix<T>,
}

impl<T: Scalar> Splitting<T> {
    /// Builds the splitting for a given `S`; the forms are transformed by `P^T X P` with `P = S^{-1}`.
    pub fn from_matrix(s: Matrix<T>, blocks: Vec<Vec<usize>>, pairing: &Pairing<T>, a: &Matrix<T>, b: &Matrix<T>, c: &Matrix<T>) -> Result<Self> {
        let n = pairing.dim();
        if s.rows() != n || !s.is_square() {
            return Err(Error::DimensionMismatch(format!("S must be {n}x{n}")));
        }
        let mut seen: Vec<usize> = blocks.iter().flatten().copied().collect();
        seen.sort_unstable();
        if seen != (0..n).collect::<Vec<_>>() {
            return Err(Error::DimensionMismatch(format!("blocks do not partition 0..{n}")));
        }
        let basis = s.inverse().ok_or_else(|| Error::DimensionMismatch("S is singular".into()))?;
        let conj = |m: &Matrix<T>| basis.transpose().mul(m).mul(&basis);
        Ok(Splitting {
            pairing: conj(pairing.eta()),
            qq: conj(&a.symmetric_part()),
            degree_block: conj(b),
            raising_block: conj(&c.symmetric_part()),
            s,
            basis,
            blocks,
        })
    }

    pub fn s(&self) -> &Matrix<T> {
        &self.s
    }

    /// `S^{-1}`; its columns are the new basis vectors.
    pub fn basis(&self) -> &Matrix<T> {
        &self.basis
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn transformed_pairing(&self) -> &Matrix<T> {
        &self.pairing
    }

    pub fn transformed_qq(&self) -> &Matrix<T> {
        &self.qq
    }

    pub fn transformed_degree_block(&self) -> &Matrix<T> {
        &self.degree_block
    }

    pub fn transformed_raising_block(&self) -> &Matrix<T> {
        &self.raising_block
    }

    /// True when every block is a single basis vector.
    pub fn is_full(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 1)
    }

    pub fn to_json(&self) -> Value {
        let blocks: Vec<Vec<usize>> = self.blocks.iter().map(|b| b.iter().map(|i| i + 1).collect()).collect();
        json!({
            "S": render_matrix(&self.s),
            "blocks": blocks,
            "eta": render_matrix(&self.pairing),
            "a": render_matrix(&self.qq),
            "B": render_matrix(&self.degree_block),
            "c": render_matrix(&self.raising_block),
        })
    }

    /// Reads `S` and the 1-based blocks; the forms are recomputed from the given data.
    pub fn from_json(v: &Value, data: &Sl2Data<T>) -> Result<Self> {
        let s = parse_matrix(v.get("S").ok_or_else(|| Error::Parse("splitting field S".into()))?)?;
        let blocks = v
            .get("blocks")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse("splitting field blocks".into()))?
            .iter()
            .map(|b| {
                b.as_array()
                    .ok_or_else(|| Error::Parse("block must be an array".into()))?
                    .iter()
                    .map(|i| match i.as_u64() {
                        Some(i) if i >= 1 => Ok(i as usize - 1),
                        _ => Err(Error::Parse(format!("block index {i}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let a = data_qq(data.lowering());
        Splitting::from_matrix(s, blocks, data.pairing(), &a, data.degree_block(), data.raising_block())
    }
}

fn data_qq<T: Scalar>(f: &QuadOperator<T>) -> Matrix<T> {
    f.qq().cloned().unwrap_or_else(|| Matrix::zeros(f.dim(), f.dim()))
}

/// Common eta-orthogonal eigenbasis of `eta^{-1} a`, `eta^{-1} B` and `eta^{-1} c`.
pub fn simultaneous_diagonalize<T: Scalar>(pairing: &Pairing<T>, a: &Matrix<T>, b: &Matrix<T>, c: &Matrix<T>) -> Result<Splitting<T>> {
    diagonalize_forms(pairing, a, b, c, &[], None)
}

/// [`simultaneous_diagonalize`] on sl(2) data. The lowering blocks join the
/// forms, and inside each common eigenspace the basis is chosen so that
/// every factor keeps a nonzero linear term when one exists.
pub fn split_data<T: Scalar>(data: &Sl2Data<T>) -> Result<Splitting<T>> {
    let f = data.lowering();
    let lowering: Vec<Matrix<T>> = f.qp_blocks().map(|(_, _, m)| m.clone()).collect();
    diagonalize_forms(data.pairing(), &data_qq(f), data.degree_block(), data.raising_block(), &lowering, Some(f.linear()))
}

fn diagonalize_forms<T: Scalar>(
    pairing: &Pairing<T>,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    extra: &[Matrix<T>],
    guide: Option<&[T]>,
) -> Result<Splitting<T>> {
    let n = pairing.dim();
    let eta = pairing.eta();
    let g = pairing.inverse();
    for m in [a, b, c].into_iter().chain(extra) {
        if m.rows() != n || m.cols() != n {
            return Err(Error::DimensionMismatch(format!("forms must be {n}x{n}")));
        }
    }
    let mut spaces: Vec<Vec<Vec<T>>> = vec![(0..n).map(|i| unit(n, i)).collect()];
    let forms = [b.clone(), a.symmetric_part(), c.symmetric_part()].into_iter().chain(extra.iter().cloned());
    for (which, form) in forms.enumerate() {
        let endo = g.mul(&form);
        let mut next = Vec::new();
        for w in &spaces {
            let restricted = restrict_endomorphism(&endo, w).ok_or_else(|| {
                Error::NotSimultaneouslyDiagonalizable(format!("form {which} does not preserve an eigenspace of the previous forms"))
            })?;
            for (_, vecs) in eigenspaces(&restricted)? {
                next.push(vecs.iter().map(|y| combine(w, y)).collect());
            }
        }
        spaces = next;
    }
    for (i, wi) in spaces.iter().enumerate() {
        for wj in &spaces[i + 1..] {
            if wi.iter().any(|x| wj.iter().any(|y| !form_value(eta, x, y).is_negligible())) {
                return Err(Error::NotSimultaneouslyDiagonalizable("common eigenspaces are not orthogonal for eta".into()));
            }
        }
    }
    let mut vectors = Vec::new();
    for w in &spaces {
        vectors.extend(orthogonal_basis(eta, w, guide)?);
    }
    vectors.sort_by_key(|v| v.iter().position(|x| !x.is_negligible()).unwrap_or(n));
    let basis = Matrix::from_rows((0..n).map(|r| vectors.iter().map(|v| v[r].clone()).collect()).collect());
    let s = basis.inverse().ok_or_else(|| Error::NotSimultaneouslyDiagonalizable("common eigenvectors do not span".into()))?;
    let sp = Splitting::from_matrix(s, (0..n).map(|i| vec![i]).collect(), pairing, a, b, c)?;
    for (name, m) in [("eta", &sp.pairing), ("a", &sp.qq), ("B", &sp.degree_block), ("c", &sp.raising_block)] {
        if !is_diagonal(m) {
            return Err(Error::NotSimultaneouslyDiagonalizable(format!("{name} is not diagonal in the common eigenbasis")));
        }
    }
    Ok(sp)
}

fn unit<T: Scalar>(n: usize, i: usize) -> Vec<T> {
    let mut v = vec![T::zero(); n];
    v[i] = T::one();
    v
}

fn is_diagonal<T: Scalar>(m: &Matrix<T>) -> bool {
    m.entries().all(|(r, c, x)| r == c || x.is_negligible())
}

fn form_value<T: Scalar>(m: &Matrix<T>, x: &[T], y: &[T]) -> T {
    dot(x, &m.mul_vec(y))
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
}

/// `sum_j y_j w_j`.
fn combine<T: Scalar>(w: &[Vec<T>], y: &[T]) -> Vec<T> {
    let n = w.first().map_or(0, Vec::len);
    let mut out = vec![T::zero(); n];
    for (wj, yj) in w.iter().zip(y) {
        for (o, x) in out.iter_mut().zip(wj) {
            *o = o.clone() + x.clone() * yj.clone();
        }
    }
    out
}

/// Matrix of `endo` on `span(w)` in the basis `w`, or `None` if the span is not invariant.
fn restrict_endomorphism<T: Scalar>(endo: &Matrix<T>, w: &[Vec<T>]) -> Option<Matrix<T>> {
    let m = w.len();
    let mut cols = Vec::with_capacity(m);
    for wj in w {
        let image = endo.mul_vec(wj);
        let eqs = (0..image.len())
            .map(|r| {
                let mut e = Equation::new(image[r].clone());
                for (i, wi) in w.iter().enumerate() {
                    e.add_term(i, wi[r].clone());
                }
                e
            })
            .collect();
        cols.push(solve_linear(m, eqs)?.particular);
    }
    Some(Matrix::from_rows((0..m).map(|r| cols.iter().map(|c| c[r].clone()).collect()).collect()))
}

fn kernel<T: Scalar>(m: &Matrix<T>) -> Vec<Vec<T>> {
    let eqs = (0..m.rows())
        .map(|r| {
            let mut e = Equation::new(T::zero());
            for (c, x) in m.row(r).into_iter().enumerate() {
                e.add_term(c, x);
            }
            e
        })
        .collect();
    solve_linear(m.cols(), eqs).map(|s| s.kernel).unwrap_or_default()
}

/// Eigenvalues with bases of their eigenspaces, ordered by absolute value.
pub fn eigenspaces<T: Scalar>(m: &Matrix<T>) -> Result<Vec<(T, Vec<Vec<T>>)>> {
    let n = m.rows();
    let roots = rational_roots(&square_free(&characteristic_polynomial(m)))?;
    let mut out = Vec::new();
    let mut total = 0;
    for r in roots {
        let vecs = kernel(&m.sub(&Matrix::scalar(n, r.clone())));
        total += vecs.len();
        out.push((r, vecs));
    }
    if total != n {
        return Err(Error::NotSimultaneouslyDiagonalizable(format!("eigenvectors span only {total} of {n} dimensions")));
    }
    Ok(out)
}

/// Coefficients of `det(x - m)`, lowest degree first (Faddeev-LeVerrier).
pub fn characteristic_polynomial<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    let n = m.rows();
    let mut coeffs = vec![T::zero(); n + 1];
    coeffs[n] = T::one();
    let mut acc = Matrix::zeros(n, n);
    for k in 1..=n {
        acc = m.mul(&acc.add(&Matrix::scalar(n, coeffs[n + 1 - k].clone())));
        coeffs[n - k] = -acc.trace() / T::from_int(k as i64);
    }
    coeffs
}

fn trim<T: Scalar>(mut p: Vec<T>) -> Vec<T> {
    while p.last().is_some_and(|x| x.is_negligible()) {
        p.pop();
    }
    p
}

fn poly_rem<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut r = trim(a.to_vec());
    let lead = b.last().expect("nonzero divisor").clone();
    while r.len() >= b.len() {
        let q = r.last().unwrap().clone() / lead.clone();
        let shift = r.len() - b.len();
        for (i, x) in b.iter().enumerate() {
            r[shift + i] = r[shift + i].clone() - q.clone() * x.clone();
        }
        r.pop();
        r = trim(r);
    }
    r
}

fn poly_div<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut r = trim(a.to_vec());
    let lead = b.last().expect("nonzero divisor").clone();
    let mut q = vec![T::zero(); r.len().saturating_sub(b.len()) + 1];
    while r.len() >= b.len() {
        let c = r.last().unwrap().clone() / lead.clone();
        let shift = r.len() - b.len();
        for (i, x) in b.iter().enumerate() {
            r[shift + i] = r[shift + i].clone() - c.clone() * x.clone();
        }
        q[shift] = c;
        r.pop();
    }
    trim(q)
}

fn poly_gcd<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let (mut x, mut y) = (trim(a.to_vec()), trim(b.to_vec()));
    while !y.is_empty() {
        let r = poly_rem(&x, &y);
        x = y;
        y = r;
    }
    x
}

/// `p / gcd(p, p')`: the same roots, each simple.
fn square_free<T: Scalar>(p: &[T]) -> Vec<T> {
    let deriv: Vec<T> = p.iter().enumerate().skip(1).map(|(i, x)| x.clone() * T::from_int(i as i64)).collect();
    let deriv = trim(deriv);
    if deriv.is_empty() {
        return p.to_vec();
    }
    poly_div(p, &poly_gcd(p, &deriv))
}

fn eval<T: Scalar>(p: &[T], x: &T) -> T {
    p.iter().rev().fold(T::zero(), |acc, c| acc * x.clone() + c.clone())
}

/// Roots of a square-free polynomial, all of which must be rational.
fn rational_roots<T: Scalar>(p: &[T]) -> Result<Vec<T>> {
    let p = trim(p.to_vec());
    let degree = p.len().saturating_sub(1);
    let fracs: Option<Vec<(BigInt, BigInt)>> = p.iter().map(Scalar::as_fraction).collect();
    let fracs = fracs.ok_or_else(|| Error::IrrationalEigenvalue("eigenvalues need an exact field".into()))?;
    let den = fracs.iter().fold(BigInt::one(), |acc, (_, d)| acc.lcm(d));
    let ints: Vec<BigInt> = fracs.iter().map(|(n, d)| n * (&den / d)).collect();
    let mut roots = Vec::new();
    let low = ints.iter().position(|x| !x.is_zero()).unwrap_or(0);
    if low > 0 {
        roots.push(T::zero());
    }
    let (a0, an) = (&ints[low], &ints[ints.len() - 1]);
    for q in divisors(an)? {
        for p_ in divisors(a0)? {
            for sign in [1i64, -1] {
                let x = T::from_bigints(&(&p_ * BigInt::from(sign)), &q);
                if !roots.contains(&x) && eval(&p, &x).is_negligible() {
                    roots.push(x);
                }
            }
        }
    }
    if roots.len() < degree {
        return Err(Error::IrrationalEigenvalue(format!("{} of {degree} eigenvalues are not rational", degree - roots.len())));
    }
    roots.sort_by(|x, y| x.magnitude().total_cmp(&y.magnitude()).then(y.render().cmp(&x.render())));
    Ok(roots)
}

const DIVISOR_SEARCH_LIMIT: u64 = 10_000_000;

fn divisors(x: &BigInt) -> Result<Vec<BigInt>> {
    let x = x.abs();
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = BigInt::one();
    let mut steps = 0u64;
    while &d * &d <= x {
        if x.is_multiple_of(&d) {
            let other = &x / &d;
            if other != d {
                large.push(other);
            }
            small.push(d.clone());
        }
        d += 1;
        steps += 1;
        if steps > DIVISOR_SEARCH_LIMIT {
            return Err(Error::IrrationalEigenvalue(format!("characteristic polynomial coefficient {x} is too large to factor")));
        }
    }
    small.extend(large.into_iter().rev());
    Ok(small)
}

/// An eta-orthogonal basis of `span(w)` with no isotropic vectors.
///
/// With a guiding functional `v`, each chosen vector has `v(p) != 0` and
/// leaves `v` nonzero on its orthogonal complement, whenever `v` is nonzero on the span.
fn orthogonal_basis<T: Scalar>(eta: &Matrix<T>, w: &[Vec<T>], guide: Option<&[T]>) -> Result<Vec<Vec<T>>> {
    let mut rest = w.to_vec();
    let mut out = Vec::new();
    while !rest.is_empty() {
        let guided = guide.filter(|v| rest.iter().any(|x| !dot(v, x).is_negligible()));
        let mut fallback = None;
        let mut chosen = None;
        for p in candidates(&rest) {
            let norm = form_value(eta, &p, &p);
            if norm.is_negligible() {
                continue;
            }
            let complement = project_out(eta, &rest, &p, &norm);
            let fits = match guided {
                None => true,
                Some(v) => !dot(v, &p).is_negligible() && (complement.is_empty() || complement.iter().any(|x| !dot(v, x).is_negligible())),
            };
            if fits {
                chosen = Some((p, complement));
                break;
            }
            if fallback.is_none() {
                fallback = Some((p, complement));
            }
        }
        let (p, complement) = chosen
            .or(fallback)
            .ok_or_else(|| Error::NotSimultaneouslyDiagonalizable("eta is degenerate on a common eigenspace".into()))?;
        out.push(p);
        rest = complement;
    }
    Ok(out)
}

fn candidates<T: Scalar>(w: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = w.to_vec();
    let pairs = [(1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)];
    for (x, y) in pairs {
        for i in 0..w.len() {
            for j in i + 1..w.len() {
                let (cx, cy) = (T::from_int(x), T::from_int(y));
                out.push(w[i].iter().zip(&w[j]).map(|(a, b)| a.clone() * cx.clone() + b.clone() * cy.clone()).collect());
            }
        }
    }
    out
}

/// Independent spanning set of the eta-complement of `p` inside `span(w)`.
fn project_out<T: Scalar>(eta: &Matrix<T>, w: &[Vec<T>], p: &[T], norm: &T) -> Vec<Vec<T>> {
    let mut kept: Vec<Vec<T>> = Vec::new();
    let mut echelon: Vec<(usize, Vec<T>)> = Vec::new();
    for x in w {
        let k = form_value(eta, p, x) / norm.clone();
        let y: Vec<T> = x.iter().zip(p).map(|(a, b)| a.clone() - k.clone() * b.clone()).collect();
        let mut r = y.clone();
        for (piv, row) in &echelon {
            let c = r[*piv].clone() / row[*piv].clone();
            if !c.is_negligible() {
                r = r.iter().zip(row).map(|(a, b)| a.clone() - c.clone() * b.clone()).collect();
            }
        }
        if let Some(piv) = r.iter().position(|x| !x.is_negligible()) {
            echelon.push((piv, r));
            kept.push(y);
        }
    }
    kept
}

fn leak<T: Scalar>(m: &Matrix<T>, owner: &[usize]) -> Option<(usize, usize)> {
    m.entries().find(|(r, c, x)| owner[*r] != owner[*c] && !x.is_negligible()).map(|(r, c, _)| (r, c))
}

/// One representation per block, on the transformed basis.
pub fn split_rep<T: Scalar>(rep: &VirasoroRep<T>, sp: &Splitting<T>) -> Result<Vec<VirasoroRep<T>>> {
    let n = rep.dim();
    if sp.dim() != n {
        return Err(Error::DimensionMismatch(format!("splitting is {}-dim, representation is {n}-dim", sp.dim())));
    }
    let p = sp.basis();
    let data = rep.source();
    let moved_data = Sl2Data::new(
        Pairing::new(sp.pairing.clone())?,
        data.lowering().congruence(p),
        data.constant().clone(),
        sp.degree_block.clone(),
        sp.raising_block.clone(),
    )?;
    let mut owner = vec![0; n];
    for (bi, b) in sp.blocks.iter().enumerate() {
        for &i in b {
            owner[i] = bi;
        }
    }
    let moved: BTreeMap<i32, QuadOperator<T>> = rep.generators().iter().map(|(k, g)| (*k, g.congruence(p))).collect();
    for (k, g) in &moved {
        let parts = g.qq().map(|m| ("q q", m)).into_iter().chain(g.qp_blocks().map(|(_, _, m)| ("q p", m))).chain(g.pp_blocks().map(|(_, _, m)| ("p p", m)));
        for (part, m) in parts {
            if let Some((r, c)) = leak(m, &owner) {
                return Err(Error::BlockLeak { generator: *k, detail: format!("{part} entry ({}, {}) couples two blocks", r + 1, c + 1) });
            }
        }
    }
    let factors: Vec<VirasoroRep<T>> = sp
        .blocks
        .par_iter()
        .map(|idx| {
            let local = moved_data.restrict(idx)?;
            let half = T::from_frac(-1, 2) * local.constant().clone();
            let gens = moved
                .iter()
                .map(|(k, g)| {
                    let mut part = g.restrict(idx);
                    if *k == 0 {
                        part.add_constant(half.clone() - g.constant().clone());
                    }
                    (*k, part)
                })
                .collect();
            VirasoroRep::from_generators(local, gens)
        })
        .collect::<Result<_>>()?;
    if let Some(l0) = moved.get(&0) {
        let total = factors.iter().fold(T::zero(), |acc, f| acc + f.generators()[&0].constant().clone());
        if total != *l0.constant() {
            return Err(Error::BlockLeak { generator: 0, detail: "constant term does not split over the blocks".into() });
        }
    }
    Ok(factors)
}

/// Sum of the factors placed at their blocks: equals the representation in the transformed basis.
pub fn reassemble<T: Scalar>(factors: &[VirasoroRep<T>], sp: &Splitting<T>) -> Result<BTreeMap<i32, QuadOperator<T>>> {
    let n = sp.dim();
    let mut out: BTreeMap<i32, QuadOperator<T>> = BTreeMap::new();
    for (idx, f) in sp.blocks.iter().zip(factors) {
        for (k, g) in f.generators() {
            let placed = g.embed(idx, n);
            let next = match out.remove(k) {
                Some(acc) => crate::heisenberg::scale_add(&T::one(), &acc, &T::one(), &placed)?,
                None => placed,
            };
            out.insert(*k, next);
        }
    }
    Ok(out)
}

/// Solves each one-dimensional factor's constraints through `degree`.
pub fn solve_factors<T: Scalar>(factors: &[VirasoroRep<T>], k_max: i32, degree: usize) -> Result<Vec<TruncatedSeries<T>>> {
    factors
        .par_iter()
        .map(|f| {
            let ops: BTreeMap<i32, FockOperator<T>> = f.generators().iter().map(|(k, g)| (*k, quantize(g, f.pairing()))).collect();
            solve_constraints_1d(&ops, k_max.min(f.k_max()), degree)
        })
        .collect()
}

/// `prod_alpha tau_alpha(t'_alpha)` with `t'_{i,alpha} = sum_beta S_{alpha beta} t_{i,beta}`.
pub fn assemble_product_solution<T: Scalar>(taus: &[TruncatedSeries<T>], sp: &Splitting<T>) -> Result<TruncatedSeries<T>> {
    let n = sp.dim();
    if !sp.is_full() || taus.len() != sp.blocks.len() {
        return Err(Error::DimensionMismatch(format!("need one 1-dim factor per basis vector, got {} factors for {n}", taus.len())));
    }
    let cutoff = taus.first().map_or(0, TruncatedSeries::cutoff);
    if let Some(t) = taus.iter().find(|t| t.cutoff() != cutoff || t.dim() != 1) {
        return Err(Error::CutoffMismatch(format!("factor has cutoff {} and dimension {}, expected cutoff {cutoff}", t.cutoff(), t.dim())));
    }
    let reliable = taus.iter().map(TruncatedSeries::reliable).min().unwrap_or(cutoff);
    let mut product = TruncatedSeries::one(n, cutoff);
    for (block, tau) in sp.blocks.iter().zip(taus) {
        let row = sp.s.row(block[0]);
        product = product.mul(&substitute(tau, &row, n, cutoff)?)?;
    }
    Ok(product.with_reliable(reliable))
}

/// Replaces the single variable family `t_{i,0}` of `tau` by `sum_beta row[beta] t_{i,beta}`.
fn substitute<T: Scalar>(tau: &TruncatedSeries<T>, row: &[T], n: usize, cutoff: usize) -> Result<TruncatedSeries<T>> {
    let mut powers: BTreeMap<(usize, u32), TruncatedSeries<T>> = BTreeMap::new();
    let mut out = TruncatedSeries::zero(n, cutoff);
    for (m, c) in tau.terms() {
        let mut term = TruncatedSeries::constant(n, cutoff, c.clone());
        for &((i, _), e) in m.exps() {
            let pw = match powers.entry((i, e)) {
                std::collections::btree_map::Entry::Occupied(o) => o.into_mut(),
                std::collections::btree_map::Entry::Vacant(slot) => {
                    let form = TruncatedSeries::from_terms(n, cutoff, row.iter().enumerate().map(|(b, x)| (Monomial::var((i, b)), x.clone())));
                    let mut pw = TruncatedSeries::one(n, cutoff);
                    for _ in 0..e {
                        pw = pw.mul(&form)?;
                    }
                    slot.insert(pw)
                }
            };
            term = term.mul(pw)?;
        }
        out = out.add(&term)?;
    }
    Ok(out)
}

/// Residuals of the original quantized generators on the assembled product.
pub fn check_product_annihilation<T: Scalar>(
    rep: &VirasoroRep<T>,
    sp: &Splitting<T>,
    taus: &[TruncatedSeries<T>],
    k_max: i32,
    degree: usize,
) -> Result<SolutionReport<T>> {
    let tau = assemble_product_solution(taus, sp)?;
    let ops: BTreeMap<i32, FockOperator<T>> = rep.generators().range(-1..=k_max).map(|(k, g)| (*k, quantize(g, rep.pairing()))).collect();
    verify_solution(&ops, &tau, k_max, degree)
}
