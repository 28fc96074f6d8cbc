//! Truncated type-i elements of the enveloping Heisenberg algebra.
//!
//! Generators are `q_{i,a}`, `p_{i,a}` for odd modes `i` with
//! `[p_{i,a}, q_{j,b}] = delta_ij * i * G[a][b]`, where `G` is the inverse
//! pairing. A type-i operator is
//!
//! ```text
//! w p_{2i+3} + const + q_1 A q_1^T + sum_j q_j B_j p_{j+2i} + sum_j p_j^T C_j p_{2i-j}
//! ```
//!
//! with the `q_1 A q_1^T` part only for `i = -1` and the constant only for
//! `i = 0`. Terms are kept normal ordered (q left of p). The pp blocks are
//! stored for every `j` in `1..=2i-1` with `C_{2i-j} = C_j^T`, so the
//! operator is the plain sum over all stored keys.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::linalg::{vec_add, vec_is_zero, vec_scale, Matrix};
use crate::scalar::Scalar;

/// Nondegenerate symmetric pairing with cached inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct Pairing<T> {
    eta: Matrix<T>,
    inv: Matrix<T>,
}

impl<T: Scalar> Pairing<T> {
    pub fn new(eta: Matrix<T>) -> Result<Self> {
        if !eta.is_square() || eta.rows() == 0 {
            return Err(Error::Pairing("pairing matrix must be square and nonempty".into()));
        }
        if !eta.is_symmetric() {
            return Err(Error::Pairing("pairing matrix is not symmetric".into()));
        }
        let inv = eta.inverse().ok_or_else(|| Error::Pairing("pairing matrix is singular".into()))?;
        Ok(Pairing { eta, inv })
    }

    pub fn dim(&self) -> usize {
        self.eta.rows()
    }

    pub fn eta(&self) -> &Matrix<T> {
        &self.eta
    }

    /// The inverse pairing, entering every contraction.
    pub fn inverse(&self) -> &Matrix<T> {
        &self.inv
    }

    pub fn restrict(&self, idx: &[usize]) -> Result<Self> {
        Pairing::new(self.eta.restrict(idx))
    }
}

/// Largest mode index at which a bracket result is exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BracketWindow {
    pub reliable_mode: usize,
}

impl BracketWindow {
    pub fn is_empty(&self) -> bool {
        self.reliable_mode < 1
    }
}

/// Coefficient data handed to [`make_typed`].
#[derive(Clone, Debug)]
pub struct OperatorParts<T> {
    pub linear: Option<Vec<T>>,
    pub constant: Option<T>,
    pub qq: Option<Matrix<T>>,
    pub qp: BTreeMap<usize, Matrix<T>>,
    pub pp: BTreeMap<usize, Matrix<T>>,
}

impl<T> Default for OperatorParts<T> {
    fn default() -> Self {
        OperatorParts { linear: None, constant: None, qq: None, qp: BTreeMap::new(), pp: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadOperator<T> {
    type_index: i32,
    mode_cutoff: usize,
    reliable_mode: usize,
    dim: usize,
    linear: Vec<T>,
    constant: T,
    qq: Option<Matrix<T>>,
    qp: BTreeMap<usize, Matrix<T>>,
    pp: BTreeMap<usize, Matrix<T>>,
}

fn is_odd(j: usize) -> bool {
    j % 2 == 1
}

/// Validated constructor. Supplied pp blocks may violate the transpose
/// invariant; they are rearranged so that the denoted operator is preserved.
pub fn make_typed<T: Scalar>(
    i: i32,
    pairing: &Pairing<T>,
    parts: OperatorParts<T>,
    cutoff: usize,
) -> Result<QuadOperator<T>> {
    if i < -1 {
        return Err(Error::TypeShape(format!("type {i} is below -1")));
    }
    if !is_odd(cutoff) {
        return Err(Error::TypeShape(format!("mode cutoff {cutoff} is not odd")));
    }
    let n = pairing.dim();
    let mut op = QuadOperator::zero(i, n, cutoff);
    let check = |m: &Matrix<T>| -> Result<()> {
        if m.rows() != n || m.cols() != n {
            return Err(Error::TypeShape(format!("expected {n}x{n} block")));
        }
        Ok(())
    };
    if let Some(v) = parts.linear {
        if v.len() != n {
            return Err(Error::TypeShape("linear row has wrong length".into()));
        }
        if !vec_is_zero(&v) && op.linear_mode().is_none() {
            return Err(Error::TypeShape("linear mode beyond cutoff".into()));
        }
        op.linear = v;
    }
    if let Some(c) = parts.constant {
        if i != 0 && !c.is_negligible() {
            return Err(Error::TypeShape(format!("constant term on type {i}")));
        }
        op.constant = c;
    }
    if let Some(a) = parts.qq {
        check(&a)?;
        if i != -1 && !a.is_zero() {
            return Err(Error::TypeShape(format!("q1 q1 part on type {i}")));
        }
        op.add_qq(&a);
    }
    for (j, b) in parts.qp {
        check(&b)?;
        let u = j as i64 + 2 * i as i64;
        if !is_odd(j) || j > cutoff || u < 1 || u > cutoff as i64 {
            return Err(Error::TypeShape(format!("qp block at mode {j} is out of shape")));
        }
        op.add_qp(j, u as usize, &b);
    }
    for (j, c) in parts.pp {
        check(&c)?;
        let t = 2 * i as i64 - j as i64;
        if i < 1 || !is_odd(j) || t < 1 || j > cutoff || t > cutoff as i64 {
            return Err(Error::TypeShape(format!("pp block at mode {j} is out of shape")));
        }
        op.add_pp(j, t as usize, &c);
    }
    Ok(op)
}

impl<T: Scalar> QuadOperator<T> {
    pub fn zero(type_index: i32, dim: usize, cutoff: usize) -> Self {
        QuadOperator {
            type_index,
            mode_cutoff: cutoff,
            reliable_mode: cutoff,
            dim,
            linear: vec![T::zero(); dim],
            constant: T::zero(),
            qq: None,
            qp: BTreeMap::new(),
            pp: BTreeMap::new(),
        }
    }

    pub fn type_index(&self) -> i32 {
        self.type_index
    }

    pub fn mode_cutoff(&self) -> usize {
        self.mode_cutoff
    }

    pub fn reliable_mode(&self) -> usize {
        self.reliable_mode
    }

    pub fn window(&self) -> BracketWindow {
        BracketWindow { reliable_mode: self.reliable_mode }
    }

    pub fn with_window(mut self, reliable: usize) -> Self {
        self.reliable_mode = reliable.min(self.mode_cutoff);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mode of the linear term, if it fits under the cutoff.
    pub fn linear_mode(&self) -> Option<usize> {
        let m = 2 * self.type_index + 3;
        (m >= 1 && m as usize <= self.mode_cutoff).then_some(m as usize)
    }

    pub fn linear(&self) -> &[T] {
        &self.linear
    }

    pub fn constant(&self) -> &T {
        &self.constant
    }

    pub fn qq(&self) -> Option<&Matrix<T>> {
        self.qq.as_ref()
    }

    pub fn qp(&self, j: usize) -> Option<&Matrix<T>> {
        self.qp.get(&j)
    }

    pub fn pp(&self, j: usize) -> Option<&Matrix<T>> {
        self.pp.get(&j)
    }

    /// `(j, j+2i, B_j)` for every stored `q_j B_j p_{j+2i}`.
    pub fn qp_blocks(&self) -> impl Iterator<Item = (usize, usize, &Matrix<T>)> {
        let shift = 2 * self.type_index as i64;
        self.qp.iter().map(move |(j, b)| (*j, (*j as i64 + shift) as usize, b))
    }

    /// `(j, 2i-j, C_j)` for every stored key; both halves are listed.
    pub fn pp_blocks(&self) -> impl Iterator<Item = (usize, usize, &Matrix<T>)> {
        let total = 2 * self.type_index.max(0) as usize;
        self.pp.iter().map(move |(j, c)| (*j, total - *j, c))
    }

    fn fits(&self, mode: i64) -> bool {
        mode >= 1 && mode as usize <= self.mode_cutoff && is_odd(mode as usize)
    }

    pub(crate) fn add_linear(&mut self, v: &[T]) {
        if self.linear_mode().is_some() {
            self.linear = vec_add(&self.linear, v);
        }
    }

    pub(crate) fn add_constant(&mut self, c: T) {
        self.constant = self.constant.clone() + c;
    }

    pub(crate) fn add_qq(&mut self, a: &Matrix<T>) {
        let s = a.symmetric_part();
        match &mut self.qq {
            Some(x) => *x = x.add(&s),
            None => self.qq = Some(s),
        }
        if self.qq.as_ref().is_some_and(|x| x.is_zero()) {
            self.qq = None;
        }
    }

    pub(crate) fn add_qp(&mut self, j: usize, u: usize, b: &Matrix<T>) {
        debug_assert_eq!(u as i64, j as i64 + 2 * self.type_index as i64);
        if !self.fits(j as i64) || !self.fits(u as i64) || b.is_zero() {
            return;
        }
        accumulate(&mut self.qp, j, b);
    }

    /// Adds the operator `p_s^T C p_t`.
    pub(crate) fn add_pp(&mut self, s: usize, t: usize, c: &Matrix<T>) {
        debug_assert_eq!(s + t, 2 * self.type_index as usize);
        if !self.fits(s as i64) || !self.fits(t as i64) || c.is_zero() {
            return;
        }
        let half = T::from_frac(1, 2);
        accumulate(&mut self.pp, s, &c.scale(&half));
        accumulate(&mut self.pp, t, &c.transpose().scale(&half));
    }

    pub fn is_zero(&self) -> bool {
        vec_is_zero(&self.linear)
            && self.constant.is_negligible()
            && self.qq.is_none()
            && self.qp.is_empty()
            && self.pp.is_empty()
    }

    pub fn scaled(&self, k: &T) -> Self {
        let mut out = QuadOperator::zero(self.type_index, self.dim, self.mode_cutoff).with_window(self.reliable_mode);
        if k.is_negligible() {
            return out;
        }
        out.linear = vec_scale(&self.linear, k);
        out.constant = self.constant.clone() * k.clone();
        out.qq = self.qq.as_ref().map(|a| a.scale(k));
        out.qp = self.qp.iter().map(|(j, b)| (*j, b.scale(k))).collect();
        out.pp = self.pp.iter().map(|(j, c)| (*j, c.scale(k))).collect();
        out
    }

    /// Drops every coefficient involving a mode above `mode`.
    pub fn truncated(&self, mode: usize) -> Self {
        let mut out = self.clone();
        if self.linear_mode().is_some_and(|m| m > mode) {
            out.linear = vec![T::zero(); self.dim];
        }
        let shift = 2 * self.type_index as i64;
        out.qp.retain(|j, _| *j <= mode && (*j as i64 + shift) as usize <= mode);
        let total = 2 * self.type_index.max(0) as usize;
        out.pp.retain(|j, _| *j <= mode && total - *j <= mode);
        out.reliable_mode = out.reliable_mode.min(mode);
        out
    }

    /// Largest residual height of `self - other` at modes up to `mode`.
    pub fn difference_height(&self, other: &Self, mode: usize) -> Result<f64> {
        let d = scale_add(&T::one(), self, &-T::one(), other)?;
        Ok(d.truncated(mode).max_height())
    }

    pub fn max_height(&self) -> f64 {
        let mut h = self.linear.iter().map(|x| x.height()).fold(self.constant.height(), f64::max);
        if let Some(a) = &self.qq {
            h = h.max(a.max_height());
        }
        for m in self.qp.values().chain(self.pp.values()) {
            h = h.max(m.max_height());
        }
        h
    }

    /// Coefficients restricted to the basis vectors in `idx`.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        let mut out = QuadOperator::zero(self.type_index, idx.len(), self.mode_cutoff).with_window(self.reliable_mode);
        out.linear = idx.iter().map(|&a| self.linear[a].clone()).collect();
        out.constant = self.constant.clone();
        out.qq = self.qq.as_ref().map(|a| a.restrict(idx)).filter(|a| !a.is_zero());
        out.qp = self.qp.iter().map(|(j, b)| (*j, b.restrict(idx))).filter(|(_, b)| !b.is_zero()).collect();
        out.pp = self.pp.iter().map(|(j, c)| (*j, c.restrict(idx))).filter(|(_, c)| !c.is_zero()).collect();
        out
    }

    /// Places a block operator at the basis positions `idx` of an `n`-dim space.
    pub fn embed(&self, idx: &[usize], n: usize) -> Self {
        let mut out = QuadOperator::zero(self.type_index, n, self.mode_cutoff).with_window(self.reliable_mode);
        for (k, &a) in idx.iter().enumerate() {
            out.linear[a] = self.linear[k].clone();
        }
        out.constant = self.constant.clone();
        let lift = |m: &Matrix<T>| {
            let mut full = Matrix::zeros(n, n);
            full.embed(idx, m);
            full
        };
        out.qq = self.qq.as_ref().map(lift);
        out.qp = self.qp.iter().map(|(j, b)| (*j, lift(b))).collect();
        out.pp = self.pp.iter().map(|(j, c)| (*j, lift(c))).collect();
        out
    }

    /// Image under `q -> q P^T`, `p -> P p`: bilinear blocks go to `P^T X P`.
    pub fn congruence(&self, p: &Matrix<T>) -> Self {
        let pt = p.transpose();
        let conj = |m: &Matrix<T>| pt.mul(m).mul(p);
        let mut out = self.clone();
        out.linear = p.left_mul_vec(&self.linear);
        out.qq = self.qq.as_ref().map(conj);
        out.qp = self.qp.iter().map(|(j, b)| (*j, conj(b))).collect();
        out.pp = self.pp.iter().map(|(j, c)| (*j, conj(c))).collect();
        out
    }

    pub fn to_json(&self) -> Value {
        let mat = |m: &Matrix<T>| Value::Array(m.to_rows().iter().map(|r| render_row(r)).collect());
        let blocks = |b: &BTreeMap<usize, Matrix<T>>| {
            Value::Object(b.iter().map(|(j, m)| (j.to_string(), mat(m))).collect::<Map<_, _>>())
        };
        json!({
            "type_index": self.type_index,
            "mode_cutoff": self.mode_cutoff,
            "reliable_mode": self.reliable_mode,
            "dim": self.dim,
            "linear_vec": render_row(&self.linear),
            "const_term": self.constant.render(),
            "qq": self.qq.as_ref().map(mat).unwrap_or(Value::Null),
            "qp": blocks(&self.qp),
            "pp": blocks(&self.pp),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let perr = |what: &str| Error::Parse(format!("operator field {what}"));
        let int = |k: &str| v.get(k).and_then(Value::as_i64).ok_or_else(|| perr(k));
        let type_index = int("type_index")? as i32;
        let mode_cutoff = int("mode_cutoff")? as usize;
        let reliable_mode = int("reliable_mode").unwrap_or(mode_cutoff as i64) as usize;
        let dim = int("dim")? as usize;
        let linear = parse_row(v.get("linear_vec").ok_or_else(|| perr("linear_vec"))?)?;
        let constant = parse_scalar_value(v.get("const_term").ok_or_else(|| perr("const_term"))?)?;
        let qq = match v.get("qq") {
            None | Some(Value::Null) => None,
            Some(m) => Some(parse_matrix(m)?),
        };
        let blocks = |k: &str| -> Result<BTreeMap<usize, Matrix<T>>> {
            let obj = v.get(k).and_then(Value::as_object).ok_or_else(|| perr(k))?;
            obj.iter()
                .map(|(j, m)| Ok((j.parse::<usize>().map_err(|_| perr(k))?, parse_matrix(m)?)))
                .collect()
        };
        let op = QuadOperator {
            type_index,
            mode_cutoff,
            reliable_mode,
            dim,
            linear,
            constant,
            qq,
            qp: blocks("qp")?,
            pp: blocks("pp")?,
        };
        if op.linear.len() != dim {
            return Err(perr("linear_vec"));
        }
        Ok(op)
    }
}

/// One independent scalar coefficient of a type-i operator.
///
/// `Qq` uses `x <= y` (the part is stored symmetric), `Pp(s, x, y)` uses
/// the lower key `s <= 2i - s` and for `s = 2i - s` also `x <= y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Coord {
    Linear(usize),
    Constant,
    Qq(usize, usize),
    Qp(usize, usize, usize),
    Pp(usize, usize, usize),
}

impl Coord {
    /// Largest mode touched by the coefficient.
    pub fn mode(&self, type_index: i32) -> usize {
        let shift = 2 * type_index as i64;
        match *self {
            Coord::Linear(_) => (2 * type_index + 3).max(0) as usize,
            Coord::Constant => 0,
            Coord::Qq(..) => 1,
            Coord::Qp(j, ..) => j.max((j as i64 + shift) as usize),
            Coord::Pp(s, ..) => s.max((shift - s as i64) as usize),
        }
    }
}

impl<T: Scalar> QuadOperator<T> {
    /// Every admissible coefficient slot with all modes at most `mode`.
    pub fn coordinate_slots(type_index: i32, dim: usize, cutoff: usize, mode: usize) -> Vec<Coord> {
        let top = mode.min(cutoff) as i64;
        let mut out = Vec::new();
        let lin = 2 * type_index as i64 + 3;
        if lin >= 1 && lin <= top {
            out.extend((0..dim).map(Coord::Linear));
        }
        if type_index == 0 {
            out.push(Coord::Constant);
        }
        if type_index == -1 && top >= 1 {
            for x in 0..dim {
                out.extend((x..dim).map(|y| Coord::Qq(x, y)));
            }
        }
        for j in (1..=top).step_by(2) {
            let u = j + 2 * type_index as i64;
            if u >= 1 && u <= top {
                for x in 0..dim {
                    out.extend((0..dim).map(|y| Coord::Qp(j as usize, x, y)));
                }
            }
        }
        let total = 2 * type_index as i64;
        for s in (1..=top).step_by(2) {
            let t = total - s;
            if t < s || t > top {
                continue;
            }
            for x in 0..dim {
                let from = if t == s { x } else { 0 };
                out.extend((from..dim).map(|y| Coord::Pp(s as usize, x, y)));
            }
        }
        out
    }

    /// Nonzero coefficients in [`Coord`] form, restricted to modes at most `mode`.
    pub fn coordinates(&self, mode: usize) -> Vec<(Coord, T)> {
        let mut out = Vec::new();
        let mut push = |c: Coord, x: &T| {
            if !x.is_negligible() && c.mode(self.type_index) <= mode {
                out.push((c, x.clone()));
            }
        };
        if self.linear_mode().is_some() {
            for (a, x) in self.linear.iter().enumerate() {
                push(Coord::Linear(a), x);
            }
        }
        push(Coord::Constant, &self.constant);
        if let Some(a) = &self.qq {
            for (x, y, v) in a.entries() {
                if x <= y {
                    push(Coord::Qq(x, y), &(if x == y { v.clone() } else { v.clone() + v.clone() }));
                }
            }
        }
        for (j, b) in &self.qp {
            for (x, y, v) in b.entries() {
                push(Coord::Qp(*j, x, y), v);
            }
        }
        for (s, t, c) in self.pp_blocks() {
            if s > t {
                continue;
            }
            for (x, y, v) in c.entries() {
                if s < t {
                    push(Coord::Pp(s, x, y), &(v.clone() + v.clone()));
                } else if x <= y {
                    push(Coord::Pp(s, x, y), &(if x == y { v.clone() } else { v.clone() + v.clone() }));
                }
            }
        }
        out
    }

    /// Adds `value` times the monomial addressed by `coord`.
    pub fn add_coordinate(&mut self, coord: Coord, value: &T) {
        let n = self.dim;
        let unit = |x: usize, y: usize| {
            let mut m = Matrix::zeros(n, n);
            m[(x, y)] = value.clone();
            m
        };
        match coord {
            Coord::Linear(a) => {
                let mut v = vec![T::zero(); n];
                v[a] = value.clone();
                self.add_linear(&v);
            }
            Coord::Constant => self.add_constant(value.clone()),
            Coord::Qq(x, y) => self.add_qq(&unit(x, y)),
            Coord::Qp(j, x, y) => {
                let u = (j as i64 + 2 * self.type_index as i64) as usize;
                self.add_qp(j, u, &unit(x, y));
            }
            Coord::Pp(s, x, y) => {
                let t = 2 * self.type_index as usize - s;
                self.add_pp(s, t, &unit(x, y));
            }
        }
    }
}

fn accumulate<T: Scalar>(map: &mut BTreeMap<usize, Matrix<T>>, key: usize, m: &Matrix<T>) {
    let updated = match map.get(&key) {
        Some(x) => x.add(m),
        None => m.clone(),
    };
    if updated.is_zero() {
        map.remove(&key);
    } else {
        map.insert(key, updated);
    }
}

pub fn render_row<T: Scalar>(r: &[T]) -> Value {
    Value::Array(r.iter().map(|x| Value::String(x.render())).collect())
}

pub fn parse_scalar_value<T: Scalar>(v: &Value) -> Result<T> {
    match v {
        Value::String(s) => T::parse_scalar(s).ok_or_else(|| Error::Parse(format!("scalar {s:?}"))),
        Value::Number(n) => T::parse_scalar(&n.to_string()).ok_or_else(|| Error::Parse(format!("scalar {n}"))),
        _ => Err(Error::Parse(format!("scalar {v}"))),
    }
}

pub fn parse_row<T: Scalar>(v: &Value) -> Result<Vec<T>> {
    v.as_array().ok_or_else(|| Error::Parse("row".into()))?.iter().map(parse_scalar_value).collect()
}

pub fn parse_matrix<T: Scalar>(v: &Value) -> Result<Matrix<T>> {
    let rows: Vec<Vec<T>> =
        v.as_array().ok_or_else(|| Error::Parse("matrix".into()))?.iter().map(parse_row).collect::<Result<_>>()?;
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(Error::Parse("matrix must be square".into()));
    }
    Ok(Matrix::from_rows(rows))
}

pub fn render_matrix<T: Scalar>(m: &Matrix<T>) -> Value {
    Value::Array(m.to_rows().iter().map(|r| render_row(r)).collect())
}

/// `alpha * a + beta * b`.
pub fn scale_add<T: Scalar>(alpha: &T, a: &QuadOperator<T>, beta: &T, b: &QuadOperator<T>) -> Result<QuadOperator<T>> {
    if a.type_index != b.type_index || a.mode_cutoff != b.mode_cutoff || a.dim != b.dim {
        return Err(Error::IncompatibleOperands(format!(
            "scale_add of type {} (M={}) with type {} (M={})",
            a.type_index, a.mode_cutoff, b.type_index, b.mode_cutoff
        )));
    }
    let mut out = a.scaled(alpha).with_window(a.reliable_mode.min(b.reliable_mode));
    let sb = b.scaled(beta);
    out.add_linear(&sb.linear);
    out.constant = out.constant.clone() + sb.constant;
    if let Some(x) = &sb.qq {
        out.add_qq(x);
    }
    for (j, m) in &sb.qp {
        accumulate(&mut out.qp, *j, m);
    }
    for (j, m) in &sb.pp {
        accumulate(&mut out.pp, *j, m);
    }
    Ok(out)
}

/// Sum of several operators of the same type.
pub fn sum_ops<T: Scalar>(ops: &[QuadOperator<T>]) -> Result<QuadOperator<T>> {
    let mut it = ops.iter();
    let first = it.next().ok_or_else(|| Error::IncompatibleOperands("empty sum".into()))?.clone();
    it.try_fold(first, |acc, x| scale_add(&T::one(), &acc, &T::one(), x))
}

enum Term<'a, T> {
    Lin(usize, &'a [T]),
    Qq(&'a Matrix<T>),
    Qp(usize, usize, &'a Matrix<T>),
    Pp(usize, usize, &'a Matrix<T>),
}

fn terms<T: Scalar>(op: &QuadOperator<T>) -> Vec<Term<'_, T>> {
    let mut out = Vec::new();
    if let Some(m) = op.linear_mode() {
        if !vec_is_zero(&op.linear) {
            out.push(Term::Lin(m, &op.linear[..]));
        }
    }
    if let Some(a) = &op.qq {
        out.push(Term::Qq(a));
    }
    for (j, u, b) in op.qp_blocks() {
        out.push(Term::Qp(j, u, b));
    }
    for (s, t, c) in op.pp_blocks() {
        out.push(Term::Pp(s, t, c));
    }
    out
}

enum Piece<T> {
    Lin(Vec<T>),
    Const(T),
    Qq(Matrix<T>),
    Qp(usize, usize, Matrix<T>),
    Pp(usize, usize, Matrix<T>),
}

fn neg_piece<T: Scalar>(p: Piece<T>) -> Piece<T> {
    match p {
        Piece::Lin(v) => Piece::Lin(v.into_iter().map(|x| -x).collect()),
        Piece::Const(c) => Piece::Const(-c),
        Piece::Qq(a) => Piece::Qq(a.neg()),
        Piece::Qp(j, u, b) => Piece::Qp(j, u, b.neg()),
        Piece::Pp(s, t, c) => Piece::Pp(s, t, c.neg()),
    }
}

/// Closed-form commutator of two single terms.
fn term_bracket<T: Scalar>(x: &Term<'_, T>, y: &Term<'_, T>, g: &Matrix<T>) -> Vec<Piece<T>> {
    let int = |k: usize| T::from_int(k as i64);
    match (x, y) {
        // [w p_m, q_j B p_u] = delta_{mj} m (w G B) p_u
        (Term::Lin(m, w), Term::Qp(j, u, b)) => {
            if m != j {
                return vec![];
            }
            let _ = u;
            vec![Piece::Lin(vec_scale(&g.mul(b).left_mul_vec(w), &int(*m)))]
        }
        (Term::Qp(..), Term::Lin(..)) => term_bracket(y, x, g).into_iter().map(neg_piece).collect(),
        // [q_1 A q_1^T, q_j B p_u] = -delta_{u1} q_j B G (A + A^T) q_1^T
        (Term::Qq(a), Term::Qp(_, u, b)) => {
            if *u != 1 {
                return vec![];
            }
            let sa = a.add(&a.transpose());
            vec![Piece::Qq(b.mul(g).mul(&sa).neg())]
        }
        (Term::Qp(..), Term::Qq(..)) => term_bracket(y, x, g).into_iter().map(neg_piece).collect(),
        // [q_1 A q_1^T, p_s^T C p_t]
        (Term::Qq(a), Term::Pp(s, t, c)) => {
            let sa = a.add(&a.transpose());
            let sag = sa.mul(g);
            let mut out = Vec::new();
            if *s == 1 {
                out.push(Piece::Qp(1, *t, sag.mul(c).neg()));
            }
            if *t == 1 {
                out.push(Piece::Qp(1, *s, sag.mul(&c.transpose()).neg()));
            }
            if *s == 1 && *t == 1 {
                out.push(Piece::Const(-sag.mul(c).mul(g).trace()));
            }
            out
        }
        (Term::Pp(..), Term::Qq(..)) => term_bracket(y, x, g).into_iter().map(neg_piece).collect(),
        // [q_r B p_u, q_s B' p_v] = d_{us} u q_r B G B' p_v - d_{vr} r q_s B' G B p_u
        (Term::Qp(r, u, b), Term::Qp(s, v, b2)) => {
            let mut out = Vec::new();
            if u == s {
                out.push(Piece::Qp(*r, *v, b.mul(g).mul(b2).scale(&int(*u))));
            }
            if v == r {
                out.push(Piece::Qp(*s, *u, b2.mul(g).mul(b).scale(&-int(*r))));
            }
            out
        }
        // [q_r B p_u, p_s^T C p_t] = -r d_{rs} p_t^T C^T G B p_u - r d_{rt} p_s^T C G B p_u
        (Term::Qp(r, u, b), Term::Pp(s, t, c)) => {
            let mut out = Vec::new();
            let gb = g.mul(b);
            if r == s {
                out.push(Piece::Pp(*t, *u, c.transpose().mul(&gb).scale(&-int(*r))));
            }
            if r == t {
                out.push(Piece::Pp(*s, *u, c.mul(&gb).scale(&-int(*r))));
            }
            out
        }
        (Term::Pp(..), Term::Qp(..)) => term_bracket(y, x, g).into_iter().map(neg_piece).collect(),
        // Lin-Lin, Lin-Pp, Pp-Pp, Qq-Qq commute; Lin-Qq only pairs two type -1 operators.
        _ => vec![],
    }
}

/// Lie bracket of two typed operators, with the window of exact modes.
pub fn bracket<T: Scalar>(
    a: &QuadOperator<T>,
    b: &QuadOperator<T>,
    pairing: &Pairing<T>,
) -> Result<(QuadOperator<T>, BracketWindow)> {
    if a.mode_cutoff != b.mode_cutoff || a.dim != b.dim || a.dim != pairing.dim() {
        return Err(Error::IncompatibleOperands(format!(
            "cutoffs {} / {} and dims {} / {} / {}",
            a.mode_cutoff,
            b.mode_cutoff,
            a.dim,
            b.dim,
            pairing.dim()
        )));
    }
    let k = a.type_index + b.type_index;
    if k < -1 {
        return Err(Error::TypeShape(format!("bracket lands in type {k}")));
    }
    let g = pairing.inverse();
    let ta = terms(a);
    let tb = terms(b);
    let pairs: Vec<(usize, usize)> = (0..ta.len()).flat_map(|x| (0..tb.len()).map(move |y| (x, y))).collect();
    let pieces: Vec<Vec<Piece<T>>> = pairs.par_iter().map(|&(x, y)| term_bracket(&ta[x], &tb[y], g)).collect();

    let loss = if a.type_index == -1 || b.type_index == -1 { 2 } else { 0 };
    let reliable = a.reliable_mode.min(b.reliable_mode).saturating_sub(loss);
    let mut out = QuadOperator::zero(k, a.dim, a.mode_cutoff).with_window(reliable);
    for piece in pieces.into_iter().flatten() {
        match piece {
            Piece::Lin(v) => out.add_linear(&v),
            Piece::Const(c) => out.add_constant(c),
            Piece::Qq(m) => out.add_qq(&m),
            Piece::Qp(j, u, m) => out.add_qp(j, u, &m),
            Piece::Pp(s, t, m) => out.add_pp(s, t, &m),
        }
    }
    let window = out.window();
    Ok((out, window))
}

/// Bracket discarding the window (it stays attached to the result).
pub fn br<T: Scalar>(a: &QuadOperator<T>, b: &QuadOperator<T>, pairing: &Pairing<T>) -> Result<QuadOperator<T>> {
    bracket(a, b, pairing).map(|(op, _)| op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{q, Rational};

    fn one() -> Pairing<Rational> {
        Pairing::new(Matrix::from_rows(vec![vec![q(1, 1)]])).unwrap()
    }

    fn m1(x: Rational) -> Matrix<Rational> {
        Matrix::from_rows(vec![vec![x]])
    }

    #[test]
    fn rejects_shape_violations() {
        let p = one();
        let parts = OperatorParts { qq: Some(m1(q(1, 1))), ..Default::default() };
        assert!(matches!(make_typed(1, &p, parts, 11), Err(Error::TypeShape(_))));
        let parts = OperatorParts { constant: Some(q(1, 1)), ..Default::default() };
        assert!(matches!(make_typed(1, &p, parts, 11), Err(Error::TypeShape(_))));
        let mut qp = BTreeMap::new();
        qp.insert(2, m1(q(1, 1)));
        let parts = OperatorParts { qp, ..Default::default() };
        assert!(matches!(make_typed(0, &p, parts, 11), Err(Error::TypeShape(_))));
        assert!(make_typed(0, &p, OperatorParts::default(), 11).unwrap().is_zero());
    }

    #[test]
    fn pp_blocks_are_rearranged() {
        let p = Pairing::new(Matrix::identity(2)).unwrap();
        let c = Matrix::from_rows(vec![vec![q(1, 1), q(2, 1)], vec![q(0, 1), q(3, 1)]]);
        let mut pp = BTreeMap::new();
        pp.insert(1, c.clone());
        let op = make_typed(2, &p, OperatorParts { pp, ..Default::default() }, 11).unwrap();
        assert_eq!(op.pp(1).unwrap(), &c.scale(&q(1, 2)));
        assert_eq!(op.pp(3).unwrap(), &c.transpose().scale(&q(1, 2)));
    }

    #[test]
    fn qq_meets_linear_top_mode_only_in_type_zero() {
        // [q_1 a q_1^T, w p_{2i+3}] vanishes for i >= 0: the modes never meet.
        let p = one();
        let f = make_typed(-1, &p, OperatorParts { qq: Some(m1(q(1, 1))), ..Default::default() }, 11).unwrap();
        let lin = make_typed(0, &p, OperatorParts { linear: Some(vec![q(5, 1)]), ..Default::default() }, 11).unwrap();
        assert!(br(&f, &lin, &p).unwrap().is_zero());
    }

    #[test]
    fn json_round_trip() {
        let p = one();
        let mut qp = BTreeMap::new();
        qp.insert(1, m1(q(-1, 3)));
        qp.insert(3, m1(q(5, 7)));
        let op = make_typed(
            0,
            &p,
            OperatorParts { linear: Some(vec![q(2, 1)]), constant: Some(q(1, 16)), qp, ..Default::default() },
            7,
        )
        .unwrap();
        let back = QuadOperator::<Rational>::from_json(&op.to_json()).unwrap();
        assert_eq!(back, op);
    }
}
