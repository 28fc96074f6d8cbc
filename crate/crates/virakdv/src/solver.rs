//! Constraint solving for one-dimensional representations, rescaling to
//! canonical form, and Hirota residuals.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fock::{apply, exp_log, ExpLog, FockOperator, Monomial, TruncatedSeries, Var};
use crate::linalg::{solve_linear, Equation};
use crate::scalar::{double_factorial, Scalar};

/// Nonzero factors `lambda_i` for odd modes, acting by `t_i -> lambda_i t_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleVector<T> {
    lambdas: BTreeMap<usize, T>,
}

impl<T: Scalar> ScaleVector<T> {
    pub fn new(lambdas: BTreeMap<usize, T>) -> Result<Self> {
        if let Some((i, _)) = lambdas.iter().find(|(_, l)| l.is_negligible()) {
            return Err(Error::ZeroCoefficient(format!("scale factor for mode {i}")));
        }
        Ok(ScaleVector { lambdas })
    }

    /// All factors equal to one up to `cutoff`.
    pub fn ones(cutoff: usize) -> Self {
        ScaleVector { lambdas: (1..=cutoff).step_by(2).map(|i| (i, T::one())).collect() }
    }

    /// `lambda_i = i!!`, so that `t_{(i-1)/2} = i!! T_i` in the Witten-Kontsevich normalization.
    pub fn double_factorials(cutoff: usize) -> Self {
        ScaleVector { lambdas: (1..=cutoff).step_by(2).map(|i| (i, double_factorial(i as i64))).collect() }
    }

    pub fn get(&self, mode: usize) -> Option<&T> {
        self.lambdas.get(&mode)
    }

    pub fn lambdas(&self) -> &BTreeMap<usize, T> {
        &self.lambdas
    }

    pub fn inverse(&self) -> Self {
        ScaleVector { lambdas: self.lambdas.iter().map(|(i, l)| (*i, T::one() / l.clone())).collect() }
    }

    fn factor(&self, v: Var) -> Result<T> {
        self.lambdas.get(&v.0).cloned().ok_or(Error::MissingScale(v.0))
    }

    /// `Lambda L Lambda^{-1}` with `(Lambda f)(t) = f(lambda t)`.
    pub fn conjugate(&self, op: &FockOperator<T>) -> Result<FockOperator<T>> {
        op.rescaled(|v| self.factor(v))
    }

    pub fn to_json(&self) -> Value {
        json!(self.lambdas.iter().map(|(i, l)| (i.to_string(), Value::String(l.render()))).collect::<serde_json::Map<_, _>>())
    }
}

/// Multiplies each monomial by `prod lambda_i^{n_i}`, or by the inverse powers.
pub fn rescale_series<T: Scalar>(f: &TruncatedSeries<T>, lambda: &ScaleVector<T>, invert: bool) -> Result<TruncatedSeries<T>> {
    let mut out = TruncatedSeries::zero(f.dim(), f.cutoff()).with_reliable(f.reliable());
    for (m, c) in f.terms() {
        let mut k = c.clone();
        for (v, e) in m.exps() {
            let l = lambda.factor(*v)?;
            let l = if invert { T::one() / l } else { l };
            for _ in 0..*e {
                k = k * l.clone();
            }
        }
        out.add_term(m.clone(), k);
    }
    Ok(out)
}

/// Finds `lambda` and `s` with `lambda L_{-1} lambda^{-1} = s d_1 + t_1^2/4 + sum ((i+2)/2) t_{i+2} d_i`.
pub fn canonical_rescale<T: Scalar>(lowering: &FockOperator<T>) -> Result<(ScaleVector<T>, T)> {
    if lowering.dim() != 1 {
        return Err(Error::DimensionMismatch(format!("canonical form needs a 1-dim operator, got {}", lowering.dim())));
    }
    let a = lowering.coefficient(&[(1, 0), (1, 0)], &[]);
    if a.is_negligible() {
        return Err(Error::ZeroCoefficient("t_1^2 coefficient of L_{-1}".into()));
    }
    let l1 = (T::one() / (T::from_int(4) * a.clone()))
        .sqrt_exact()
        .ok_or_else(|| Error::NonRationalScale(format!("lambda_1 = sqrt(1/(4 * {}))", a.render())))?;
    let s = lowering.coefficient(&[], &[(1, 0)]) / l1.clone();
    let mut lambdas = BTreeMap::from([(1usize, l1)]);
    let top = lowering.max_mode();
    for i in (1..).step_by(2).take_while(|i| i + 2 <= top) {
        let d = lowering.coefficient(&[(i + 2, 0)], &[(i, 0)]);
        if d.is_negligible() {
            return Err(Error::ZeroCoefficient(format!("t_{} d_{} coefficient of L_{{-1}}", i + 2, i)));
        }
        let next = lambdas[&i].clone() * T::from_frac(i as i64 + 2, 2) / d;
        lambdas.insert(i + 2, next);
    }
    Ok((ScaleVector { lambdas }, s))
}

/// `e^{-F} L e^{F}` for an operator with at most two derivatives per term.
fn conjugated_action<T: Scalar>(op: &FockOperator<T>, f: &TruncatedSeries<T>) -> Result<TruncatedSeries<T>> {
    let mut firsts: BTreeMap<Var, TruncatedSeries<T>> = BTreeMap::new();
    for (_, ds) in op.terms().keys() {
        for v in ds {
            firsts.entry(*v).or_insert_with(|| f.derivative(*v));
        }
    }
    let pieces: Vec<TruncatedSeries<T>> = op
        .terms()
        .par_iter()
        .map(|((ts, ds), c)| -> Result<TruncatedSeries<T>> {
            let base = match ds.as_slice() {
                [] => TruncatedSeries::one(f.dim(), f.cutoff()),
                [x] => firsts[x].clone(),
                [x, y] => firsts[x].derivative(*y).add(&firsts[x].mul(&firsts[y])?)?,
                _ => return Err(Error::TypeShape("solver handles at most second-order operators".into())),
            };
            let mono = Monomial::from_exps(ts.iter().map(|v| (*v, 1)));
            let mut out = TruncatedSeries::zero(f.dim(), f.cutoff()).with_reliable(base.reliable());
            for (m, x) in base.terms() {
                let m = m.mul(&mono);
                if m.degree() <= f.cutoff() {
                    out.add_term(m, x.clone() * c.clone());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    pieces.into_iter().try_fold(TruncatedSeries::zero(f.dim(), f.cutoff()), |acc, p| acc.add(&p))
}

/// Monomials of weighted degree `d` in the odd variables `t_{i,a}`, `a < dim`.
pub fn monomials_of_degree(dim: usize, d: usize) -> Vec<Monomial> {
    fn go(vars: &[Var], start: usize, left: usize, acc: &mut Vec<(Var, u32)>, out: &mut Vec<Monomial>) {
        if left == 0 {
            out.push(Monomial::from_exps(acc.iter().cloned()));
            return;
        }
        for (k, v) in vars.iter().enumerate().skip(start) {
            if v.0 <= left {
                acc.push((*v, 1));
                go(vars, k, left - v.0, acc, out);
                acc.pop();
            }
        }
    }
    let vars: Vec<Var> = (1..=d.max(1)).step_by(2).flat_map(|i| (0..dim).map(move |a| (i, a))).collect();
    let mut out = Vec::new();
    go(&vars, 0, d, &mut Vec::new(), &mut out);
    out.sort();
    out.dedup();
    out
}

/// The unique `tau = exp(F)`, `tau(0) = 1`, with `L_k tau = 0` for `-1 <= k <= k_max`, through degree `degree`.
///
/// Degrees are swept upwards. At degree `d` the unknown part of `F` enters
/// the degree `d - 2k - 3` component of `L_k tau` only through the linear
/// derivative term; every other contribution is already known.
pub fn solve_constraints_1d<T: Scalar>(ops: &BTreeMap<i32, FockOperator<T>>, k_max: i32, degree: usize) -> Result<TruncatedSeries<T>> {
    solve_constraints_1d_ordered(ops, k_max, degree, EquationOrder::Ascending)
}

/// Order in which the generators' equations enter each degree's linear system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EquationOrder {
    Ascending,
    Descending,
}

/// [`solve_constraints_1d`] with an explicit equation order.
pub fn solve_constraints_1d_ordered<T: Scalar>(
    ops: &BTreeMap<i32, FockOperator<T>>,
    k_max: i32,
    degree: usize,
    order: EquationOrder,
) -> Result<TruncatedSeries<T>> {
    let dim = ops.values().next().map(|o| o.dim()).unwrap_or(1);
    if dim != 1 {
        return Err(Error::DimensionMismatch(format!("expected a 1-dim family, got dimension {dim}")));
    }
    let family: Vec<(i32, &FockOperator<T>)> = (-1..=k_max)
        .map(|k| ops.get(&k).map(|o| (k, o)).ok_or_else(|| Error::TypeShape(format!("missing generator {k}"))))
        .collect::<Result<_>>()?;
    let lowering = family[0].1;
    if lowering.max_mode() + 1 < degree {
        return Err(Error::WindowExhausted(format!("L_{{-1}} stops at mode {}, degree {degree} needs more", lowering.max_mode())));
    }
    for &(k, op) in &family {
        let linear = |ts: &Vec<Var>, ds: &Vec<Var>| ts.is_empty() && ds.len() == 1;
        let deep = op.terms().keys().any(|(ts, ds)| {
            let lowering: i64 = ds.iter().map(|v| v.0 as i64).sum::<i64>() - ts.iter().map(|v| v.0 as i64).sum::<i64>();
            lowering >= 2 * k as i64 + 3 && !linear(ts, ds)
        });
        if deep {
            return Err(Error::TypeShape(format!("L_{k} has a nonlinear term lowering degree by 2k+3 or more")));
        }
    }
    let mut schedule = family.clone();
    if order == EquationOrder::Descending {
        schedule.reverse();
    }
    let mut f = TruncatedSeries::zero(dim, degree);
    // A free coefficient is only reported once the sweep has shown no inconsistency.
    let mut free: Option<String> = None;
    for d in 1..=degree {
        let unknowns = monomials_of_degree(dim, d);
        let index: BTreeMap<&Monomial, usize> = unknowns.iter().enumerate().map(|(j, m)| (m, j)).collect();
        let mut equations = Vec::new();
        for &(k, op) in &schedule {
            let e = d as i64 - 2 * k as i64 - 3;
            if e < 0 {
                continue;
            }
            let known = conjugated_action(op, &f)?.homogeneous(e as usize);
            let mut rows: BTreeMap<Monomial, Equation<T>> = BTreeMap::new();
            for (m, x) in known.terms() {
                rows.insert(m.clone(), Equation::new(-x.clone()));
            }
            for ((ts, ds), c) in op.terms() {
                if !ts.is_empty() || ds.len() != 1 || ds[0].0 as i64 != 2 * k as i64 + 3 {
                    continue;
                }
                for (m, j) in &index {
                    if let Some((p, rest)) = m.derive(ds[0]) {
                        rows.entry(rest).or_insert_with(|| Equation::new(T::zero())).add_term(*j, c.clone() * T::from_int(p as i64));
                    }
                }
            }
            equations.extend(rows.into_values());
        }
        let space = solve_linear(unknowns.len(), equations).ok_or_else(|| {
            let note = free.as_ref().map(|f| format!(" (earlier free coefficient held at zero: {f})")).unwrap_or_default();
            Error::NoSolution(format!("constraints are inconsistent at degree {d}{note}"))
        })?;
        if let (None, Some(kernel)) = (&free, space.kernel.first()) {
            let j = kernel.iter().position(|x| !x.is_negligible()).unwrap_or(0);
            free = Some(format!("degree {d}: coefficient of {} is free", describe(&unknowns[j])));
        }
        for (m, x) in unknowns.iter().zip(space.particular) {
            f.add_term(m.clone(), x);
        }
    }
    match free {
        Some(msg) => Err(Error::UnderdeterminedDegree(msg)),
        None => exp_log(&f, ExpLog::Exp),
    }
}

fn describe(m: &Monomial) -> String {
    if m.exps().is_empty() {
        return "1".into();
    }
    m.exps()
        .iter()
        .map(|((i, a), e)| {
            let var = if *a == 0 { format!("t_{i}") } else { format!("t_{{{i},{}}}", a + 1) };
            if *e == 1 {
                var
            } else {
                format!("{var}^{e}")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Coefficient of `t_1^a t_3^b t_5^c ...` (exponents listed by increasing odd mode).
pub fn coefficient_of<T: Scalar>(f: &TruncatedSeries<T>, exponents: &[u32]) -> T {
    let m = Monomial::from_exps(exponents.iter().enumerate().filter(|(_, e)| **e > 0).map(|(j, e)| ((2 * j + 1, 0), *e)));
    f.coefficient(&m)
}

/// A Hirota bilinear operator `sum c D_1^a D_3^b D_5^c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HirotaEquation {
    /// `(D_1^4 - 4 D_1 D_3) tau.tau`
    Kdv,
    /// `(D_1^6 + 4 D_1^3 D_3 - 32 D_3^2) tau.tau`
    Weight6,
    /// `(D_1^3 D_3 + 2 D_3^2 - 6 D_1 D_5) tau.tau`
    Flow5,
}

impl HirotaEquation {
    fn terms(self) -> &'static [(i64, [u32; 3])] {
        match self {
            HirotaEquation::Kdv => &[(1, [4, 0, 0]), (-4, [1, 1, 0])],
            HirotaEquation::Weight6 => &[(1, [6, 0, 0]), (4, [3, 1, 0]), (-32, [0, 2, 0])],
            HirotaEquation::Flow5 => &[(1, [3, 1, 0]), (2, [0, 2, 0]), (-6, [1, 0, 1])],
        }
    }

    pub fn weight(self) -> usize {
        match self {
            HirotaEquation::Kdv => 4,
            _ => 6,
        }
    }
}

fn binomial(n: u32, k: u32) -> i64 {
    (0..k).fold(1i64, |acc, j| acc * (n - j) as i64 / (j + 1) as i64)
}

/// `P(D) tau.tau` through degree `degree - weight`.
pub fn hirota_residual<T: Scalar>(tau: &TruncatedSeries<T>, eq: HirotaEquation, degree: usize) -> Result<TruncatedSeries<T>> {
    let tau = tau.truncated(degree);
    let mut cache: BTreeMap<[u32; 3], TruncatedSeries<T>> = BTreeMap::new();
    let mut deriv = |orders: [u32; 3]| -> TruncatedSeries<T> {
        cache
            .entry(orders)
            .or_insert_with(|| {
                let mut s = tau.clone();
                for (j, n) in orders.iter().enumerate() {
                    for _ in 0..*n {
                        s = s.derivative((2 * j + 1, 0));
                    }
                }
                s
            })
            .clone()
    };
    let top = degree.saturating_sub(eq.weight());
    let mut out = TruncatedSeries::zero(tau.dim(), top);
    for (c, [a, b, e]) in eq.terms() {
        for i in 0..=*a {
            for j in 0..=*b {
                for l in 0..=*e {
                    let sign = if (i + j + l) % 2 == 0 { 1 } else { -1 };
                    let k = c * sign * binomial(*a, i) * binomial(*b, j) * binomial(*e, l);
                    let left = deriv([a - i, b - j, e - l]).truncated(top);
                    let right = deriv([i, j, l]).truncated(top);
                    out = out.add(&left.mul(&right)?.scale(&T::from_int(k)))?;
                }
            }
        }
    }
    Ok(out.truncated(top).with_reliable(top))
}

/// `(D_1^4 - 4 D_1 D_3) tau.tau` through degree `degree - 4`.
pub fn hirota_kdv_residual<T: Scalar>(tau: &TruncatedSeries<T>, degree: usize) -> Result<TruncatedSeries<T>> {
    hirota_residual(tau, HirotaEquation::Kdv, degree)
}

/// Residual of one constraint inside its reliable degree.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintResidual<T> {
    pub k: i32,
    pub degree: usize,
    pub residual: TruncatedSeries<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionReport<T> {
    pub residuals: Vec<ConstraintResidual<T>>,
}

impl<T: Scalar> SolutionReport<T> {
    pub fn is_clean(&self) -> bool {
        self.residuals.iter().all(|r| r.residual.is_zero())
    }

    pub fn to_json(&self) -> Value {
        json!(self
            .residuals
            .iter()
            .map(|r| json!({
                "k": r.k,
                "degree": r.degree,
                "residual_monomials": r.residual.to_json()["terms"].clone(),
            }))
            .collect::<Vec<_>>())
    }
}

/// `L_k tau` for each `k <= k_max`, truncated to its reliable degree and to `degree`.
pub fn verify_solution<T: Scalar>(
    ops: &BTreeMap<i32, FockOperator<T>>,
    tau: &TruncatedSeries<T>,
    k_max: i32,
    degree: usize,
) -> Result<SolutionReport<T>> {
    let tau = tau.truncated(degree);
    let residuals = ops
        .range(-1..=k_max)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(k, op)| {
            let out = apply(op, &tau)?;
            let reliable = out.reliable();
            Ok(ConstraintResidual { k: **k, degree: reliable, residual: out.truncated(reliable) })
        })
        .collect::<Result<_>>()?;
    Ok(SolutionReport { residuals })
}
