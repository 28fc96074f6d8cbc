//! Truncated power series in the odd times `t_{i,a}` and second-order
//! differential operators acting on them.
//!
//! The grading is `deg t_{i,a} = i`. A series with cutoff `D` stores every
//! monomial of degree at most `D`; `reliable` records up to which degree
//! the stored coefficients are exact.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::heisenberg::{make_typed, parse_scalar_value, OperatorParts, Pairing, QuadOperator};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// A time variable `t_{mode, index}`; `mode` is odd.
pub type Var = (usize, usize);

fn var_key(v: Var) -> String {
    format!("{},{}", v.0, v.1 + 1)
}

fn parse_var(s: &str) -> Result<Var> {
    let err = || Error::Parse(format!("variable key {s:?}"));
    let (i, a) = s.split_once(',').ok_or_else(err)?;
    let i: usize = i.trim().parse().map_err(|_| err())?;
    let a: usize = a.trim().parse().map_err(|_| err())?;
    if i.is_multiple_of(2) || a == 0 {
        return Err(err());
    }
    Ok((i, a - 1))
}

/// Product of powers of time variables, ordered by weighted degree first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    degree: usize,
    exps: Vec<(Var, u32)>,
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree.cmp(&other.degree).then_with(|| self.exps.cmp(&other.exps))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Monomial {
    pub fn one() -> Self {
        Monomial::default()
    }

    pub fn from_exps(pairs: impl IntoIterator<Item = (Var, u32)>) -> Self {
        let mut map: BTreeMap<Var, u32> = BTreeMap::new();
        for (v, e) in pairs {
            *map.entry(v).or_default() += e;
        }
        map.retain(|_, e| *e > 0);
        let degree = map.iter().map(|(v, e)| v.0 * *e as usize).sum();
        Monomial { degree, exps: map.into_iter().collect() }
    }

    pub fn var(v: Var) -> Self {
        Monomial::from_exps([(v, 1)])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn exps(&self) -> &[(Var, u32)] {
        &self.exps
    }

    pub fn exponent(&self, v: Var) -> u32 {
        self.exps.iter().find(|(w, _)| *w == v).map(|(_, e)| *e).unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial::from_exps(self.exps.iter().chain(&other.exps).cloned())
    }

    /// `d/dv` of the monomial as `(multiplicity, result)`.
    pub fn derive(&self, v: Var) -> Option<(u32, Monomial)> {
        let e = self.exponent(v);
        if e == 0 {
            return None;
        }
        let rest = self.exps.iter().map(|(w, x)| if *w == v { (*w, x - 1) } else { (*w, *x) });
        Some((e, Monomial::from_exps(rest)))
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.exps.iter().map(|(v, e)| (var_key(*v), json!(e))).collect::<Map<_, _>>())
    }

    fn from_json(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::Parse("monomial".into()))?;
        let pairs = obj
            .iter()
            .map(|(k, e)| Ok((parse_var(k)?, e.as_u64().ok_or_else(|| Error::Parse("exponent".into()))? as u32)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Monomial::from_exps(pairs))
    }
}

/// Element of `C[[t_{i,a}]]` truncated at weighted degree `cutoff`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSeries<T> {
    dim: usize,
    cutoff: usize,
    reliable: usize,
    terms: BTreeMap<Monomial, T>,
}

impl<T: Scalar> TruncatedSeries<T> {
    pub fn zero(dim: usize, cutoff: usize) -> Self {
        TruncatedSeries { dim, cutoff, reliable: cutoff, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, cutoff: usize, c: T) -> Self {
        let mut s = Self::zero(dim, cutoff);
        s.add_term(Monomial::one(), c);
        s
    }

    pub fn one(dim: usize, cutoff: usize) -> Self {
        Self::constant(dim, cutoff, T::one())
    }

    pub fn variable(dim: usize, cutoff: usize, v: Var) -> Self {
        let mut s = Self::zero(dim, cutoff);
        s.add_term(Monomial::var(v), T::one());
        s
    }

    pub fn from_terms(dim: usize, cutoff: usize, terms: impl IntoIterator<Item = (Monomial, T)>) -> Self {
        let mut s = Self::zero(dim, cutoff);
        for (m, c) in terms {
            s.add_term(m, c);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn reliable(&self) -> usize {
        self.reliable
    }

    pub fn with_reliable(mut self, reliable: usize) -> Self {
        self.reliable = reliable.min(self.cutoff);
        self
    }

    pub fn terms(&self) -> &BTreeMap<Monomial, T> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, m: &Monomial) -> T {
        self.terms.get(m).cloned().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coefficient(&Monomial::one())
    }

    /// Adds `c * m`, dropping it if `m` lies above the cutoff.
    pub fn add_term(&mut self, m: Monomial, c: T) {
        if c.is_negligible() || m.degree > self.cutoff {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(x) => {
                *x = x.clone() + c;
                if x.is_negligible() {
                    self.terms.remove(&m);
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!("series of dimension {} and {}", self.dim, other.dim)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        out.cutoff = self.cutoff.min(other.cutoff);
        out.terms.retain(|m, _| m.degree <= out.cutoff);
        out.reliable = self.reliable.min(other.reliable).min(out.cutoff);
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(&-T::one()))
    }

    pub fn scale(&self, k: &T) -> Self {
        let mut out = Self::zero(self.dim, self.cutoff).with_reliable(self.reliable);
        if k.is_negligible() {
            return out;
        }
        out.terms = self.terms.iter().map(|(m, c)| (m.clone(), c.clone() * k.clone())).collect();
        out
    }

    /// Product; the reliable degree accounts for the lowest degree present in each factor.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let cutoff = self.cutoff.min(other.cutoff);
        let low = |s: &Self| s.terms.keys().next().map(|m| m.degree).unwrap_or(0);
        let reliable = (self.reliable + low(other)).min(other.reliable + low(self)).min(cutoff);
        let mut out = Self::zero(self.dim, cutoff).with_reliable(reliable);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                if m1.degree + m2.degree > cutoff {
                    break;
                }
                out.add_term(m1.mul(m2), c1.clone() * c2.clone());
            }
        }
        Ok(out)
    }

    pub fn derivative(&self, v: Var) -> Self {
        let mut out = Self::zero(self.dim, self.cutoff).with_reliable(self.reliable.saturating_sub(v.0));
        for (m, c) in &self.terms {
            if let Some((e, rest)) = m.derive(v) {
                out.add_term(rest, c.clone() * T::from_int(e as i64));
            }
        }
        out
    }

    /// Drops every monomial of degree above `d` and lowers the cutoff to `d`.
    pub fn truncated(&self, d: usize) -> Self {
        let mut out = self.clone();
        out.cutoff = d.min(self.cutoff);
        out.reliable = out.reliable.min(out.cutoff);
        out.terms.retain(|m, _| m.degree <= out.cutoff);
        out
    }

    /// Homogeneous component of degree `d`.
    pub fn homogeneous(&self, d: usize) -> Self {
        let mut out = Self::zero(self.dim, self.cutoff).with_reliable(self.reliable);
        out.terms = self.terms.iter().filter(|(m, _)| m.degree == d).map(|(m, c)| (m.clone(), c.clone())).collect();
        out
    }

    /// Largest height among coefficients of degree at most `d`.
    pub fn max_height_through(&self, d: usize) -> f64 {
        self.terms.iter().filter(|(m, _)| m.degree <= d).map(|(_, c)| c.height()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Value {
        let terms: Vec<Value> =
            self.terms.iter().map(|(m, c)| json!({"monomial": m.to_json(), "coeff": c.render()})).collect();
        json!({"n": self.dim, "D": self.cutoff, "reliable": self.reliable, "terms": terms})
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let int = |k: &str| v.get(k).and_then(Value::as_u64).ok_or_else(|| Error::Parse(format!("series field {k}")));
        let mut s = Self::zero(int("n")? as usize, int("D")? as usize);
        s.reliable = int("reliable").unwrap_or(s.cutoff as u64) as usize;
        let terms = v.get("terms").and_then(Value::as_array).ok_or_else(|| Error::Parse("series terms".into()))?;
        for t in terms {
            let m = Monomial::from_json(t.get("monomial").ok_or_else(|| Error::Parse("monomial".into()))?)?;
            s.add_term(m, parse_scalar_value(t.get("coeff").ok_or_else(|| Error::Parse("coeff".into()))?)?);
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpLog {
    Exp,
    Log,
}

/// Truncated `exp` (input without constant term) or `log` (input with constant term 1).
pub fn exp_log<T: Scalar>(f: &TruncatedSeries<T>, direction: ExpLog) -> Result<TruncatedSeries<T>> {
    let c0 = f.constant_term();
    let g = match direction {
        ExpLog::Exp if !c0.is_negligible() => return Err(Error::BadConstantTerm("exp needs f(0) = 0".into())),
        ExpLog::Log if c0 != T::one() => return Err(Error::BadConstantTerm("log needs f(0) = 1".into())),
        ExpLog::Exp => f.clone(),
        ExpLog::Log => f.sub(&TruncatedSeries::one(f.dim, f.cutoff))?,
    };
    let mut out = match direction {
        ExpLog::Exp => TruncatedSeries::one(f.dim, f.cutoff),
        ExpLog::Log => TruncatedSeries::zero(f.dim, f.cutoff),
    };
    let mut power = TruncatedSeries::one(f.dim, f.cutoff);
    for k in 1..=f.cutoff.max(1) {
        power = power.mul(&g)?;
        if power.is_zero() {
            break;
        }
        let coef = match direction {
            ExpLog::Exp => T::one() / factorial::<T>(k),
            ExpLog::Log => T::from_frac(if k % 2 == 1 { 1 } else { -1 }, k as i64),
        };
        out = out.add(&power.scale(&coef))?;
    }
    Ok(out.with_reliable(f.reliable))
}

fn factorial<T: Scalar>(k: usize) -> T {
    (1..=k).fold(T::one(), |acc, j| acc * T::from_int(j as i64))
}

/// Normal-ordered monomial `t_{v1} ... t_{vk} d_{w1} ... d_{wl}` (sorted lists).
pub type WeylMono = (Vec<Var>, Vec<Var>);

/// A differential operator with polynomial coefficients, normal ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct FockOperator<T> {
    dim: usize,
    degree_shift: i32,
    terms: BTreeMap<WeylMono, T>,
}

fn mono_shift(m: &WeylMono) -> i64 {
    m.0.iter().map(|v| v.0 as i64).sum::<i64>() - m.1.iter().map(|v| v.0 as i64).sum::<i64>()
}

impl<T: Scalar> FockOperator<T> {
    pub fn zero(dim: usize, degree_shift: i32) -> Self {
        FockOperator { dim, degree_shift, terms: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nominal degree change, `-2k` for an operator built from type k.
    pub fn degree_shift(&self) -> i32 {
        self.degree_shift
    }

    pub fn terms(&self) -> &BTreeMap<WeylMono, T> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, mut ts: Vec<Var>, mut ds: Vec<Var>, c: T) {
        if c.is_negligible() {
            return;
        }
        ts.sort();
        ds.sort();
        let key = (ts, ds);
        match self.terms.get_mut(&key) {
            Some(x) => {
                *x = x.clone() + c;
                if x.is_negligible() {
                    self.terms.remove(&key);
                }
            }
            None => {
                self.terms.insert(key, c);
            }
        }
    }

    pub fn coefficient(&self, ts: &[Var], ds: &[Var]) -> T {
        let mut key = (ts.to_vec(), ds.to_vec());
        key.0.sort();
        key.1.sort();
        self.terms.get(&key).cloned().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coefficient(&[], &[])
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!("operators of dimension {} and {}", self.dim, other.dim)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for ((ts, ds), c) in &other.terms {
            out.add_term(ts.clone(), ds.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn scale(&self, k: &T) -> Self {
        let mut out = Self::zero(self.dim, self.degree_shift);
        if !k.is_negligible() {
            out.terms = self.terms.iter().map(|(m, c)| (m.clone(), c.clone() * k.clone())).collect();
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(&-T::one()))
    }

    /// Largest mode of any variable in the operator.
    pub fn max_mode(&self) -> usize {
        self.terms.keys().flat_map(|(ts, ds)| ts.iter().chain(ds)).map(|v| v.0).max().unwrap_or(0)
    }

    /// Keeps only terms whose variables all have mode at most `mode`.
    pub fn truncated_modes(&self, mode: usize) -> Self {
        let mut out = self.clone();
        out.terms.retain(|(ts, ds), _| ts.iter().chain(ds).all(|v| v.0 <= mode));
        out
    }

    /// Largest number of input degrees consumed by a single term.
    pub fn max_lowering(&self) -> i64 {
        self.terms.keys().map(|m| -mono_shift(m)).max().unwrap_or(0)
    }

    pub fn max_height(&self) -> f64 {
        self.terms.values().map(|c| c.height()).fold(0.0, f64::max)
    }

    /// The type `i` whose term shapes every non-constant term matches, if unique.
    pub fn type_shape(&self) -> Option<i32> {
        let mut found: Option<i32> = None;
        for (ts, ds) in self.terms.keys() {
            let i = match (ts.as_slice(), ds.as_slice()) {
                ([], []) => continue,
                ([], [d]) if d.0 >= 1 => (d.0 as i32 - 3) / 2,
                ([a, b], []) if a.0 == 1 && b.0 == 1 => -1,
                ([t], [d]) if (d.0 as i32 - t.0 as i32) % 2 == 0 => (d.0 as i32 - t.0 as i32) / 2,
                ([], [a, b]) if (a.0 + b.0) % 2 == 0 && a.0 + b.0 >= 2 => (a.0 + b.0) as i32 / 2,
                _ => return None,
            };
            if ds.len() == 1 && ts.is_empty() && (ds[0].0 as i32 - 3) % 2 != 0 {
                return None;
            }
            if i < -1 || found.is_some_and(|f| f != i) {
                return None;
            }
            found = Some(i);
        }
        found
    }

    /// Rescales every variable: `t_v -> lambda(v) t_v`, so `d_v -> d_v / lambda(v)`.
    pub fn rescaled(&self, lambda: impl Fn(Var) -> Result<T>) -> Result<Self> {
        let mut out = Self::zero(self.dim, self.degree_shift);
        for ((ts, ds), c) in &self.terms {
            let mut k = c.clone();
            for v in ts {
                k = k * lambda(*v)?;
            }
            for v in ds {
                k = k / lambda(*v)?;
            }
            out.add_term(ts.clone(), ds.clone(), k);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Value {
        let render = |vs: &[Var]| Value::Array(vs.iter().map(|v| Value::String(var_key(*v))).collect());
        let terms: Vec<Value> = self
            .terms
            .iter()
            .map(|((ts, ds), c)| json!({"t": render(ts), "d": render(ds), "coeff": c.render()}))
            .collect();
        json!({"n": self.dim, "degree_shift": self.degree_shift, "terms": terms})
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let dim = v.get("n").and_then(Value::as_u64).ok_or_else(|| Error::Parse("operator field n".into()))? as usize;
        let shift = v.get("degree_shift").and_then(Value::as_i64).unwrap_or(0) as i32;
        let mut out = Self::zero(dim, shift);
        let vars = |x: Option<&Value>| -> Result<Vec<Var>> {
            x.and_then(Value::as_array)
                .ok_or_else(|| Error::Parse("variable list".into()))?
                .iter()
                .map(|s| parse_var(s.as_str().ok_or_else(|| Error::Parse("variable".into()))?))
                .collect()
        };
        for t in v.get("terms").and_then(Value::as_array).ok_or_else(|| Error::Parse("operator terms".into()))? {
            let c = parse_scalar_value(t.get("coeff").ok_or_else(|| Error::Parse("coeff".into()))?)?;
            out.add_term(vars(t.get("t"))?, vars(t.get("d"))?, c);
        }
        Ok(out)
    }
}

/// Substitutes `p_{i,a} -> G^{ab} d/dt_{i,b}` and `q_{i,a} -> i t_{i,a}`, keeping normal order.
pub fn quantize<T: Scalar>(op: &QuadOperator<T>, pairing: &Pairing<T>) -> FockOperator<T> {
    let n = pairing.dim();
    let g = pairing.inverse();
    let mut out = FockOperator::zero(n, -2 * op.type_index());
    out.add_term(vec![], vec![], op.constant().clone());
    if let Some(m) = op.linear_mode() {
        for (b, x) in g.left_mul_vec(op.linear()).into_iter().enumerate() {
            out.add_term(vec![], vec![(m, b)], x);
        }
    }
    if let Some(a) = op.qq() {
        for (x, y, c) in a.entries() {
            out.add_term(vec![(1, x), (1, y)], vec![], c.clone());
        }
    }
    for (j, u, b) in op.qp_blocks() {
        let bg = b.mul(g);
        let jj = T::from_int(j as i64);
        for (x, y, c) in bg.entries() {
            out.add_term(vec![(j, x)], vec![(u, y)], c.clone() * jj.clone());
        }
    }
    for (s, t, c) in op.pp_blocks() {
        let gcg = g.mul(c).mul(g);
        for (x, y, v) in gcg.entries() {
            out.add_term(vec![], vec![(s, x), (t, y)], v.clone());
        }
    }
    out
}

/// Inverse of [`quantize`]: reads a differential operator of type `k` back into
/// the enveloping algebra, using `d/dt_{i,b} = eta_{ba} p_{i,a}` and `t_{i,a} = q_{i,a}/i`.
pub fn dequantize<T: Scalar>(op: &FockOperator<T>, pairing: &Pairing<T>, k: i32, cutoff: usize) -> Result<QuadOperator<T>> {
    let n = pairing.dim();
    if op.dim != n {
        return Err(Error::DimensionMismatch(format!("operator of dimension {} against pairing of dimension {n}", op.dim)));
    }
    let eta = pairing.eta();
    let mut parts = OperatorParts::<T>::default();
    let bump = |m: &mut Matrix<T>, r: usize, c: usize, x: T| m[(r, c)] = m[(r, c)].clone() + x;
    let shape = |what: &str| Error::TypeShape(format!("{what} does not fit type {k}"));
    for ((ts, ds), c) in &op.terms {
        match (ts.as_slice(), ds.as_slice()) {
            ([], []) => parts.constant = Some(c.clone()),
            ([], [d]) => {
                if d.0 as i32 != 2 * k + 3 {
                    return Err(shape("linear term"));
                }
                let row = parts.linear.get_or_insert_with(|| vec![T::zero(); n]);
                for (a, x) in row.iter_mut().enumerate() {
                    *x = x.clone() + c.clone() * eta[(d.1, a)].clone();
                }
            }
            ([x, y], []) if x.0 == 1 && y.0 == 1 => {
                let m = parts.qq.get_or_insert_with(|| Matrix::zeros(n, n));
                bump(m, x.1, y.1, c.clone());
            }
            ([t], [d]) => {
                let m = parts.qp.entry(t.0).or_insert_with(|| Matrix::zeros(n, n));
                let scale = c.clone() / T::from_int(t.0 as i64);
                for g in 0..n {
                    bump(m, t.1, g, scale.clone() * eta[(d.1, g)].clone());
                }
                if d.0 as i32 - t.0 as i32 != 2 * k {
                    return Err(shape("t d term"));
                }
            }
            ([], [x, y]) => {
                let m = parts.pp.entry(x.0).or_insert_with(|| Matrix::zeros(n, n));
                for a in 0..n {
                    for g in 0..n {
                        bump(m, a, g, c.clone() * eta[(x.1, a)].clone() * eta[(y.1, g)].clone());
                    }
                }
            }
            _ => return Err(shape("term")),
        }
    }
    make_typed(k, pairing, parts, cutoff)
}

/// Applies `op` to `f`. Output degree `e` is exact when every term's
/// input degree `e + lowering` is within `f`'s reliable degree.
pub fn apply<T: Scalar>(op: &FockOperator<T>, f: &TruncatedSeries<T>) -> Result<TruncatedSeries<T>> {
    if op.dim != f.dim {
        return Err(Error::DimensionMismatch(format!("operator of dimension {} on series of dimension {}", op.dim, f.dim)));
    }
    let lowering = op.max_lowering();
    let reliable = (f.reliable as i64 - lowering.max(0)).clamp(0, f.cutoff as i64) as usize;
    let parts: Vec<TruncatedSeries<T>> = op
        .terms
        .par_iter()
        .map(|((ts, ds), c)| {
            let mut acc = f.clone();
            for v in ds {
                acc = acc.derivative(*v);
            }
            let mono = Monomial::from_exps(ts.iter().map(|v| (*v, 1)));
            let mut out = TruncatedSeries::zero(f.dim, f.cutoff);
            for (m, x) in acc.terms {
                out.add_term(m.mul(&mono), x * c.clone());
            }
            out
        })
        .collect();
    let mut out = TruncatedSeries::zero(f.dim, f.cutoff);
    for p in parts {
        for (m, x) in p.terms {
            out.add_term(m, x);
        }
    }
    Ok(out.with_reliable(reliable))
}

/// `d_{ds} * t_{ts}` rewritten as a sum of normal-ordered monomials.
fn reorder(ds: &[Var], ts: &[Var]) -> Vec<(i64, Vec<Var>, Vec<Var>)> {
    if ds.is_empty() || ts.is_empty() {
        return vec![(1, ts.to_vec(), ds.to_vec())];
    }
    let (last, rest) = ds.split_last().unwrap();
    let mut moved = vec![(1i64, ts.to_vec(), vec![*last])];
    for k in 0..ts.len() {
        if ts[k] == *last {
            let mut remaining = ts.to_vec();
            remaining.remove(k);
            moved.push((1, remaining, vec![]));
        }
    }
    let mut out = Vec::new();
    for (c, t_rest, d_tail) in moved {
        for (c2, t2, mut d2) in reorder(rest, &t_rest) {
            d2.extend(d_tail.iter().cloned());
            out.push((c * c2, t2, d2));
        }
    }
    out
}

fn product<T: Scalar>(a: &FockOperator<T>, b: &FockOperator<T>) -> FockOperator<T> {
    let mut out = FockOperator::zero(a.dim, a.degree_shift + b.degree_shift);
    for ((t1, d1), c1) in &a.terms {
        for ((t2, d2), c2) in &b.terms {
            for (k, ts, ds) in reorder(d1, t2) {
                let mut all_t = t1.clone();
                all_t.extend(ts);
                let mut all_d = ds;
                all_d.extend(d2.iter().cloned());
                out.add_term(all_t, all_d, c1.clone() * c2.clone() * T::from_int(k));
            }
        }
    }
    out
}

/// Exact commutator `[a, b]` as differential operators.
pub fn bracket_fock<T: Scalar>(a: &FockOperator<T>, b: &FockOperator<T>) -> Result<FockOperator<T>> {
    a.check(b)?;
    product(a, b).sub(&product(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{q, Rational};

    #[test]
    fn monomial_order_is_by_degree_first() {
        let a = Monomial::var((3, 0));
        let b = Monomial::from_exps([((1, 0), 2)]);
        assert!(b < a);
        assert_eq!(a.degree(), 3);
        assert_eq!(b.degree(), 2);
    }

    #[test]
    fn derivative_of_square() {
        let t1 = TruncatedSeries::<Rational>::variable(1, 6, (1, 0));
        let half_sq = t1.mul(&t1).unwrap().scale(&q(1, 2));
        assert_eq!(half_sq.derivative((1, 0)).coefficient(&Monomial::var((1, 0))), q(1, 1));
    }

    #[test]
    fn weyl_commutator_of_basic_pair() {
        let mut d = FockOperator::<Rational>::zero(1, 0);
        d.add_term(vec![], vec![(1, 0)], q(1, 1));
        let mut t = FockOperator::<Rational>::zero(1, 0);
        t.add_term(vec![(1, 0)], vec![], q(1, 1));
        let c = bracket_fock(&d, &t).unwrap();
        assert_eq!(c.constant_term(), q(1, 1));
        assert_eq!(c.terms().len(), 1);
    }
}
