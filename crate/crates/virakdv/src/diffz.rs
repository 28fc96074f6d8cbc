//! First-order differential operators on `C((z))`, the Witt family they
//! carry, and their bosonization on the odd Fock space.
//!
//! Operators are stored on the basis `M_m = z^m` and
//! `V_m = z^m (z d/dz + (m+1)/2)`, for which
//! `[V_m, M_l] = l M_{m+l}` and `[V_m, V_l] = (l - m) V_{m+l}`.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::fock::{bracket_fock, FockOperator};
use crate::heisenberg::parse_scalar_value;
use crate::scalar::Scalar;

fn add_to<T: Scalar>(map: &mut BTreeMap<i64, T>, m: i64, c: T) {
    if c.is_negligible() {
        return;
    }
    let e = map.entry(m).or_insert_with(T::zero);
    *e = e.clone() + c;
    if e.is_negligible() {
        map.remove(&m);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffOp1<T> {
    mult: BTreeMap<i64, T>,
    vf: BTreeMap<i64, T>,
    constant: T,
}

impl<T: Scalar> DiffOp1<T> {
    pub fn zero() -> Self {
        DiffOp1 { mult: BTreeMap::new(), vf: BTreeMap::new(), constant: T::zero() }
    }

    /// `c z^m`; `z^0` is folded into the constant.
    pub fn mult_term(m: i64, c: T) -> Self {
        let mut d = Self::zero();
        d.add_mult(m, c);
        d
    }

    /// `c z^m (z d/dz + (m+1)/2)`.
    pub fn vf_term(m: i64, c: T) -> Self {
        let mut d = Self::zero();
        add_to(&mut d.vf, m, c);
        d
    }

    fn add_mult(&mut self, m: i64, c: T) {
        if m == 0 {
            self.constant = self.constant.clone() + c;
        } else {
            add_to(&mut self.mult, m, c);
        }
    }

    pub fn mult(&self) -> &BTreeMap<i64, T> {
        &self.mult
    }

    pub fn vf(&self) -> &BTreeMap<i64, T> {
        &self.vf
    }

    pub fn constant(&self) -> &T {
        &self.constant
    }

    pub fn is_zero(&self) -> bool {
        self.mult.is_empty() && self.vf.is_empty() && self.constant.is_negligible()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.mult {
            add_to(&mut out.mult, *m, c.clone());
        }
        for (m, c) in &other.vf {
            add_to(&mut out.vf, *m, c.clone());
        }
        out.constant = out.constant + other.constant.clone();
        out
    }

    pub fn scale(&self, k: &T) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.mult {
            add_to(&mut out.mult, *m, c.clone() * k.clone());
        }
        for (m, c) in &self.vf {
            add_to(&mut out.vf, *m, c.clone() * k.clone());
        }
        out.constant = self.constant.clone() * k.clone();
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-T::one()))
    }

    /// Commutator from the structure constants of the basis.
    pub fn commutator(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (m, a) in &self.vf {
            for (l, b) in &other.vf {
                add_to(&mut out.vf, m + l, a.clone() * b.clone() * T::from_int(l - m));
            }
            for (l, b) in &other.mult {
                out.add_mult(m + l, a.clone() * b.clone() * T::from_int(*l));
            }
        }
        for (l, b) in &other.vf {
            for (m, a) in &self.mult {
                out.add_mult(m + l, -(a.clone() * b.clone() * T::from_int(*m)));
            }
        }
        out
    }

    /// Image of `z^k` as a map exponent -> coefficient.
    pub fn act_on_power(&self, k: i64) -> BTreeMap<i64, T> {
        let mut out = BTreeMap::new();
        add_to(&mut out, k, self.constant.clone());
        for (m, c) in &self.mult {
            add_to(&mut out, k + m, c.clone());
        }
        for (m, c) in &self.vf {
            add_to(&mut out, k + m, c.clone() * T::from_frac(2 * k + m + 1, 2));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let map = |m: &BTreeMap<i64, T>| {
            Value::Object(m.iter().map(|(k, c)| (k.to_string(), Value::String(c.render()))).collect::<Map<_, _>>())
        };
        serde_json::json!({"mult": map(&self.mult), "vf": map(&self.vf), "const": self.constant.render()})
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let mut out = Self::zero();
        let read = |key: &str| -> Result<Vec<(i64, T)>> {
            let obj = v.get(key).and_then(Value::as_object).ok_or_else(|| Error::Parse(format!("field {key}")))?;
            obj.iter()
                .map(|(k, c)| Ok((k.parse().map_err(|_| Error::Parse(format!("exponent {k}")))?, parse_scalar_value(c)?)))
                .collect()
        };
        for (m, c) in read("mult")? {
            out.add_mult(m, c);
        }
        for (m, c) in read("vf")? {
            add_to(&mut out.vf, m, c);
        }
        out.constant = out.constant + parse_scalar_value(v.get("const").ok_or_else(|| Error::Parse("field const".into()))?)?;
        Ok(out)
    }
}

/// `t^i ((1/2) z^{-2i} (z d/dz + (1-2i)/2) + s z^{-2i-3})`.
pub fn sigma_family<T: Scalar>(i: i32, s: &T, t: &T) -> Result<DiffOp1<T>> {
    if t.is_negligible() {
        return Err(Error::ZeroCoefficient("scale t must be nonzero".into()));
    }
    let mut power = T::one();
    for _ in 0..i.unsigned_abs() {
        power = power * t.clone();
    }
    if i < 0 {
        power = T::one() / power;
    }
    let m = -2 * i as i64;
    Ok(DiffOp1::vf_term(m, power.clone() * T::from_frac(1, 2)).add(&DiffOp1::mult_term(m - 3, power * s.clone())))
}

/// Laurent series known up to and including the exponent `precision`.
#[derive(Clone, Debug, PartialEq)]
pub struct Laurent<T> {
    terms: BTreeMap<i64, T>,
    precision: i64,
}

impl<T: Scalar> Laurent<T> {
    pub fn new(terms: impl IntoIterator<Item = (i64, T)>, precision: i64) -> Self {
        let mut map = BTreeMap::new();
        for (m, c) in terms {
            if m <= precision {
                add_to(&mut map, m, c);
            }
        }
        Laurent { terms: map, precision }
    }

    pub fn monomial(m: i64, c: T, precision: i64) -> Self {
        Self::new([(m, c)], precision)
    }

    pub fn terms(&self) -> &BTreeMap<i64, T> {
        &self.terms
    }

    pub fn precision(&self) -> i64 {
        self.precision
    }

    fn valuation(&self) -> i64 {
        self.terms.keys().next().copied().unwrap_or(self.precision + 1)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let precision = (self.precision + other.valuation()).min(other.precision + self.valuation());
        let mut out = BTreeMap::new();
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                if a + b <= precision {
                    add_to(&mut out, a + b, x.clone() * y.clone());
                }
            }
        }
        Laurent { terms: out, precision }
    }

    pub fn derivative(&self) -> Self {
        Self::new(self.terms.iter().map(|(m, c)| (m - 1, c.clone() * T::from_int(*m))), self.precision - 1)
    }

    pub fn inverse(&self) -> Result<Self> {
        let (&v, lead) = self
            .terms
            .iter()
            .next()
            .ok_or_else(|| Error::NonInvertibleDerivative("no nonzero coefficient within precision".into()))?;
        let relative = self.precision - v;
        let precision = relative - v;
        // 1/(lead z^v (1 + u)) = z^{-v}/lead * sum (-u)^k
        let u = Laurent::new(self.terms.iter().skip(1).map(|(m, c)| (m - v, c.clone() / lead.clone())), relative);
        let minus_u = u.scale(&-T::one());
        let mut sum = Laurent::monomial(0, T::one(), relative);
        let mut power = sum.clone();
        for _ in 0..relative.max(0) {
            power = power.mul(&minus_u);
            power.precision = relative;
            if power.terms.is_empty() {
                break;
            }
            sum = sum.add(&power);
        }
        Ok(Laurent::new(sum.terms.into_iter().map(|(m, c)| (m - v, c / lead.clone())), precision))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = Laurent { terms: self.terms.clone(), precision: self.precision.min(other.precision) };
        out.terms.retain(|m, _| *m <= out.precision);
        for (m, c) in &other.terms {
            if *m <= out.precision {
                add_to(&mut out.terms, *m, c.clone());
            }
        }
        out
    }

    pub fn scale(&self, k: &T) -> Self {
        Self::new(self.terms.iter().map(|(m, c)| (*m, c.clone() * k.clone())), self.precision)
    }

    /// Integer power; negative exponents go through the inverse.
    pub fn pow(&self, e: i64) -> Result<Self> {
        let base = if e < 0 { self.inverse()? } else { self.clone() };
        let mut out = Laurent::monomial(0, T::one(), i64::MAX / 4);
        for _ in 0..e.unsigned_abs() {
            out = out.mul(&base);
        }
        Ok(out)
    }
}

/// `-h^{i+1}/h' d/dz - (i+1) c h^i + (h^{i+1}/h') b`, truncated to known exponents.
pub fn from_triple<T: Scalar>(h: &Laurent<T>, c: &T, b: &Laurent<T>, i: i32) -> Result<DiffOp1<T>> {
    let dh = h.derivative();
    if dh.terms.is_empty() {
        return Err(Error::NonInvertibleDerivative("h' vanishes within precision".into()));
    }
    let ratio = h.pow(i as i64 + 1)?.mul(&dh.inverse()?);
    let potential = h.pow(i as i64)?.scale(&(-T::from_int(i as i64 + 1) * c.clone())).add(&ratio.mul(b));
    let mut out = DiffOp1::zero();
    // f(z) d/dz with f = sum f_m z^m equals sum f_m (V_{m-1} - (m/2) M_{m-1})
    for (m, f) in &ratio.terms {
        let f = -f.clone();
        add_to(&mut out.vf, m - 1, f.clone());
        out.add_mult(m - 1, -(f * T::from_frac(*m, 2)));
    }
    for (m, g) in &potential.terms {
        out.add_mult(*m, g.clone());
    }
    Ok(out)
}

/// Bosonic image of `D` on the odd variables with modes up to `cutoff`.
/// The constant part maps to zero.
///
/// Terms containing a derivative in an even variable annihilate the odd
/// subspace and are dropped; surviving even variables raise `EvenModeLeak`.
pub fn bosonize<T: Scalar>(d: &DiffOp1<T>, cutoff: usize) -> Result<FockOperator<T>> {
    let mut full: Vec<(Vec<usize>, Vec<usize>, T)> = Vec::new();
    let top = cutoff as i64;
    for (&m, c) in &d.mult {
        if m > 0 && m <= top {
            full.push((vec![m as usize], vec![], c.clone() * T::from_int(m)));
        } else if m < 0 && -m <= top {
            full.push((vec![], vec![(-m) as usize], c.clone()));
        }
    }
    for (&m, c) in &d.vf {
        let a = m.abs();
        for j in 1..=top {
            if m > 0 {
                if j < a && a - j <= top {
                    let k = c.clone() * T::from_frac(j * (a - j), 2);
                    full.push((vec![j as usize, (a - j) as usize], vec![], k));
                }
                if a + j <= top {
                    full.push((vec![(a + j) as usize], vec![j as usize], c.clone() * T::from_int(a + j)));
                }
            } else {
                if a + j <= top {
                    full.push((vec![j as usize], vec![(a + j) as usize], c.clone() * T::from_int(j)));
                }
                if m < 0 && j < a && a - j <= top {
                    full.push((vec![], vec![j as usize, (a - j) as usize], c.clone() * T::from_frac(1, 2)));
                }
            }
        }
    }
    // the identity is diagonal, so its regularized image vanishes
    let mut out = FockOperator::zero(1, 0);
    for (ts, ds, c) in full {
        if ds.iter().any(|m| m % 2 == 0) {
            continue;
        }
        if let Some(m) = ts.iter().find(|m| *m % 2 == 0) {
            return Err(Error::EvenModeLeak(format!("t_{m} survives")));
        }
        out.add_term(ts.into_iter().map(|m| (m, 0)).collect(), ds.into_iter().map(|m| (m, 0)).collect(), c);
    }
    Ok(out)
}

fn with_shift<T: Scalar>(op: FockOperator<T>, shift: i32) -> FockOperator<T> {
    let mut out = FockOperator::zero(op.dim(), shift);
    for ((ts, ds), c) in op.terms() {
        out.add_term(ts.clone(), ds.clone(), c.clone());
    }
    out
}

/// Constant left over in `[b s(L_-1), b s(L_1)] - b([s(L_-1), s(L_1)])`.
pub fn cocycle_defect<T: Scalar>(s: &T) -> Result<T> {
    let cutoff = 15;
    let one = T::one();
    let lower = sigma_family(-1, s, &one)?;
    let raise = sigma_family(1, s, &one)?;
    let lhs = bracket_fock(&bosonize(&lower, cutoff)?, &bosonize(&raise, cutoff)?)?;
    let rhs = bosonize(&lower.commutator(&raise), cutoff)?;
    let defect = lhs.sub(&rhs)?.truncated_modes(cutoff - 4);
    let constant = defect.constant_term();
    let rest = defect.sub(&{
        let mut c = FockOperator::zero(1, 0);
        c.add_term(vec![], vec![], constant.clone());
        c
    })?;
    if !rest.is_zero() {
        return Err(Error::ConstraintViolation(format!("non-scalar cocycle {:?}", rest.terms().keys().next())));
    }
    Ok(constant)
}

/// `rho(L_i) = b(s(L_i)) + delta_{i,0}/16` for `-1 <= i <= k_max`.
pub fn lift_to_rep<T: Scalar>(s: &T, t: &T, k_max: i32, cutoff: usize) -> Result<BTreeMap<i32, FockOperator<T>>> {
    let mut out = BTreeMap::new();
    for i in -1..=k_max {
        let mut op = with_shift(bosonize(&sigma_family(i, s, t)?, cutoff)?, -2 * i);
        if i == 0 {
            op.add_term(vec![], vec![], T::from_frac(1, 16));
        }
        out.insert(i, op);
    }
    Ok(out)
}
