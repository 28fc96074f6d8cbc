//! sl(2) triples inside the Heisenberg enveloping algebra and their
//! extension to representations of the positive Witt algebra.
//!
//! The lowering operator `F` (type -1) together with `(b, B, c)` fixes
//! `H` (type 0) and `E` (type 1) in closed form. Higher generators come
//! from one solve of `[F, T] = L_1` followed by repeated brackets with `E`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::heisenberg::{
    br, make_typed, parse_matrix, parse_scalar_value, render_matrix, scale_add, Coord, OperatorParts, Pairing,
    QuadOperator,
};
use crate::linalg::{solve_linear, Equation, Matrix};
use crate::scalar::Scalar;

/// Data determining an sl(2) triple: lowering operator, constant and
/// identity-mode block of `H`, and the `p_1 p_1` block of `E`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sl2Data<T> {
    pairing: Pairing<T>,
    lowering: QuadOperator<T>,
    constant: T,
    degree_block: Matrix<T>,
    raising_block: Matrix<T>,
}

impl<T: Scalar> Sl2Data<T> {
    /// Validates every solvability condition eagerly. `raising_block` is
    /// replaced by its symmetric part, which is all that matters.
    pub fn new(
        pairing: Pairing<T>,
        lowering: QuadOperator<T>,
        constant: T,
        degree_block: Matrix<T>,
        raising_block: Matrix<T>,
    ) -> Result<Self> {
        if lowering.type_index() != -1 {
            return Err(Error::TypeShape(format!("lowering operator has type {}", lowering.type_index())));
        }
        let n = pairing.dim();
        if lowering.dim() != n || degree_block.rows() != n || raising_block.rows() != n {
            return Err(Error::DimensionMismatch(format!("sl(2) data must be {n}-dimensional")));
        }
        check_lowering_blocks(&lowering)?;
        check_degree_block(&pairing, &lowering, &degree_block)?;
        let raising_block = raising_block.symmetric_part();
        check_raising_block(&pairing, &degree_block, &raising_block)?;
        check_trace(&pairing, &lowering, &raising_block, &constant)?;
        Ok(Sl2Data { pairing, lowering, constant, degree_block, raising_block })
    }

    /// One-dimensional data whose quantized lowering operator is
    /// `s d/dt_1 + t_1^2/4 + sum ((i+2)/2) t_{i+2} d/dt_i`.
    pub fn canonical(s: T, cutoff: usize) -> Result<Self> {
        let one = Matrix::identity(1);
        let pairing = Pairing::new(one.clone())?;
        let f = lowering_operator(&pairing, &[s], &Matrix::scalar(1, T::from_frac(1, 4)), &Matrix::scalar(1, T::from_frac(1, 2)), cutoff)?;
        Sl2Data::new(pairing, f, T::from_frac(-1, 8), one.neg(), Matrix::scalar(1, T::from_frac(-1, 4)))
    }

    pub fn pairing(&self) -> &Pairing<T> {
        &self.pairing
    }

    pub fn lowering(&self) -> &QuadOperator<T> {
        &self.lowering
    }

    pub fn constant(&self) -> &T {
        &self.constant
    }

    pub fn degree_block(&self) -> &Matrix<T> {
        &self.degree_block
    }

    pub fn raising_block(&self) -> &Matrix<T> {
        &self.raising_block
    }

    pub fn mode_cutoff(&self) -> usize {
        self.lowering.mode_cutoff()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "n": self.pairing.dim(),
            "M": self.mode_cutoff(),
            "eta": render_matrix(self.pairing.eta()),
            "b": self.constant.render(),
            "B": render_matrix(&self.degree_block),
            "c": render_matrix(&self.raising_block),
            "F": self.lowering.to_json(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let get = |k: &str| v.get(k).ok_or_else(|| Error::Parse(format!("sl(2) data field {k}")));
        let pairing = Pairing::new(parse_matrix(get("eta")?)?)?;
        let lowering = QuadOperator::from_json(get("F")?)?;
        Sl2Data::new(pairing, lowering, parse_scalar_value(get("b")?)?, parse_matrix(get("B")?)?, parse_matrix(get("c")?)?)
    }
}

/// `v p_1 + q_1 a q_1^T + sum_i q_{i+2} d p_i` with the same block `d` at every mode.
pub fn lowering_operator<T: Scalar>(
    pairing: &Pairing<T>,
    v: &[T],
    a: &Matrix<T>,
    d: &Matrix<T>,
    cutoff: usize,
) -> Result<QuadOperator<T>> {
    let mut parts = OperatorParts { linear: Some(v.to_vec()), qq: Some(a.clone()), ..Default::default() };
    for j in (3..=cutoff).step_by(2) {
        parts.qp.insert(j, d.clone());
    }
    make_typed(-1, pairing, parts, cutoff)
}

/// `a + a^T` for the `q_1 q_1` part of a lowering operator.
fn qq_sym<T: Scalar>(f: &QuadOperator<T>) -> Matrix<T> {
    match f.qq() {
        Some(a) => a.scale(&T::from_int(2)),
        None => Matrix::zeros(f.dim(), f.dim()),
    }
}

/// The block `D_y` of `q_{y+2} D_y p_y` in the lowering operator.
fn lowering_block<T: Scalar>(f: &QuadOperator<T>, y: usize) -> Result<Matrix<T>> {
    f.qp(y + 2).cloned().ok_or_else(|| Error::SingularMatrix(format!("lowering block at mode {y} is zero")))
}

fn check_lowering_blocks<T: Scalar>(f: &QuadOperator<T>) -> Result<()> {
    for y in (1..).step_by(2).take_while(|y| y + 2 <= f.mode_cutoff()) {
        if lowering_block(f, y)?.inverse().is_none() {
            return Err(Error::SingularMatrix(format!("lowering block at mode {y} is not invertible")));
        }
    }
    Ok(())
}

fn check_degree_block<T: Scalar>(pairing: &Pairing<T>, f: &QuadOperator<T>, b: &Matrix<T>) -> Result<()> {
    let sa = qq_sym(f);
    let bg = b.mul(pairing.inverse());
    let lhs = bg.mul(&sa).add(&sa.mul(&bg.transpose())).add(&sa.scale(&T::from_int(2)));
    if !lhs.is_zero() {
        return Err(Error::ConstraintViolation("FyieldsH:2".into()));
    }
    Ok(())
}

fn check_raising_block<T: Scalar>(pairing: &Pairing<T>, b: &Matrix<T>, c: &Matrix<T>) -> Result<()> {
    let sc = c.add(&c.transpose());
    let gb = pairing.inverse().mul(b);
    let lhs = sc.mul(&gb).add(&gb.transpose().mul(&sc)).add(&sc.scale(&T::from_int(2)));
    if !lhs.is_zero() {
        return Err(Error::ConstraintViolation("HF-2F:2".into()));
    }
    Ok(())
}

fn check_trace<T: Scalar>(pairing: &Pairing<T>, f: &QuadOperator<T>, c: &Matrix<T>, b: &T) -> Result<()> {
    let g = pairing.inverse();
    let tr = c.mul(g).mul(&qq_sym(f)).mul(&g.transpose()).trace();
    if &tr != b {
        return Err(Error::ConstraintViolation("EFH:1".into()));
    }
    Ok(())
}

fn inverse_of<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    m.inverse().ok_or_else(|| Error::SingularMatrix(what.to_string()))
}

/// The unique type-0 `H` with `[H, F] = -2F`, constant `b` and `q_1 B p_1` block `B`.
pub fn build_h<T: Scalar>(f: &QuadOperator<T>, b: &T, degree_block: &Matrix<T>, pairing: &Pairing<T>) -> Result<QuadOperator<T>> {
    if f.type_index() != -1 {
        return Err(Error::TypeShape(format!("lowering operator has type {}", f.type_index())));
    }
    check_lowering_blocks(f)?;
    check_degree_block(pairing, f, degree_block)?;
    let g = pairing.inverse();
    let n = pairing.dim();
    let cutoff = f.mode_cutoff();
    let two = Matrix::scalar(n, T::from_int(2));
    let mut parts = OperatorParts { constant: Some(b.clone()), ..Default::default() };
    if cutoff >= 3 {
        let d1 = lowering_block(f, 1)?;
        let w = g.mul(degree_block).sub(&two).left_mul_vec(f.linear());
        let w = inverse_of(&g.mul(&d1), "lowering block at mode 1")?.left_mul_vec(&w);
        parts.linear = Some(w.iter().map(|x| x.clone() * T::from_frac(1, 3)).collect());
    }
    let mut prev = degree_block.clone();
    parts.qp.insert(1, prev.clone());
    for y in (1..).step_by(2).take_while(|y| y + 2 <= cutoff) {
        let d = lowering_block(f, y)?;
        let inv = inverse_of(&g.mul(&d), "lowering block")?;
        let next = d.mul(&g.mul(&prev).scale(&T::from_int(y as i64)).sub(&two)).mul(&inv);
        prev = next.scale(&T::from_frac(1, y as i64 + 2));
        parts.qp.insert(y + 2, prev.clone());
    }
    make_typed(0, pairing, parts, cutoff)
}

/// The unique type-1 `E` with `[E, F] = H`, `[H, E] = 2E` and `p_1 c p_1` block `c`.
pub fn build_e<T: Scalar>(f: &QuadOperator<T>, h: &QuadOperator<T>, c: &Matrix<T>, pairing: &Pairing<T>) -> Result<QuadOperator<T>> {
    if h.type_index() != 0 {
        return Err(Error::TypeShape(format!("degree operator has type {}", h.type_index())));
    }
    let n = pairing.dim();
    let cutoff = f.mode_cutoff();
    let c = c.symmetric_part();
    let degree_block = h.qp(1).cloned().unwrap_or_else(|| Matrix::zeros(n, n));
    check_raising_block(pairing, &degree_block, &c)?;
    check_trace(pairing, f, &c, h.constant())?;
    let g = pairing.inverse();
    let sa = qq_sym(f);
    let sc = c.scale(&T::from_int(2));
    let mut parts = OperatorParts::default();
    parts.pp.insert(1, c.clone());
    if cutoff < 3 {
        return make_typed(1, pairing, parts, cutoff);
    }
    let inv = |y: usize| -> Result<Matrix<T>> { inverse_of(&g.mul(&lowering_block(f, y)?), "lowering block") };
    let mut prev = degree_block.sub(&sa.mul(&g.transpose()).mul(&sc)).mul(&inv(1)?).scale(&T::from_frac(1, 3));
    let first = prev.clone();
    parts.qp.insert(1, prev.clone());
    for r in (3..).step_by(2).take_while(|r| r + 2 <= cutoff) {
        let hr = h.qp(r).cloned().unwrap_or_else(|| Matrix::zeros(n, n));
        let carried = lowering_block(f, r - 2)?.mul(g).mul(&prev).scale(&T::from_int(r as i64 - 2));
        prev = hr.add(&carried).mul(&inv(r)?).scale(&T::from_frac(1, r as i64 + 2));
        parts.qp.insert(r, prev.clone());
    }
    if cutoff >= 5 {
        let top = h.linear().to_vec();
        let carried = g.mul(&first).left_mul_vec(f.linear());
        let w: Vec<T> = top.iter().zip(&carried).map(|(x, y)| x.clone() + y.clone()).collect();
        let w = inv(3)?.left_mul_vec(&w);
        parts.linear = Some(w.iter().map(|x| x.clone() * T::from_frac(1, 5)).collect());
    }
    make_typed(1, pairing, parts, cutoff)
}

/// Solutions of `[F, T] = S`, `[H, T] = 2i T` for `T` of type `i`.
#[derive(Clone, Debug)]
pub struct AdFSolution<T> {
    pub particular: QuadOperator<T>,
    pub kernel: Vec<QuadOperator<T>>,
}

struct DisjointSets(Vec<usize>);

impl DisjointSets {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Solves a sparse system by splitting it into independent components.
fn solve_components<T: Scalar>(nvars: usize, equations: Vec<Equation<T>>) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    let mut sets = DisjointSets((0..nvars).collect());
    for eq in &equations {
        if eq.coeffs.is_empty() && !eq.rhs.is_negligible() {
            return Err(Error::NoSolution("right-hand side outside the image of ad F".into()));
        }
        let mut vars = eq.coeffs.keys();
        if let Some(&first) = vars.next() {
            for &v in vars {
                sets.union(first, v);
            }
        }
    }
    let mut groups: BTreeMap<usize, (Vec<usize>, Vec<Equation<T>>)> = BTreeMap::new();
    for v in 0..nvars {
        groups.entry(sets.find(v)).or_default().0.push(v);
    }
    for eq in equations {
        if let Some(&first) = eq.coeffs.keys().next() {
            let root = sets.find(first);
            groups.get_mut(&root).unwrap().1.push(eq);
        }
    }
    let solved: Vec<_> = groups
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(vars, eqs)| {
            let local: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(k, v)| (*v, k)).collect();
            let eqs = eqs
                .into_iter()
                .map(|e| Equation { coeffs: e.coeffs.into_iter().map(|(v, x)| (local[&v], x)).collect(), rhs: e.rhs })
                .collect();
            solve_linear(vars.len(), eqs).map(|s| (vars, s))
        })
        .collect();
    let mut particular = vec![T::zero(); nvars];
    let mut kernel = Vec::new();
    for item in solved {
        let (vars, space) = item.ok_or_else(|| Error::NoSolution("inconsistent ad F system".into()))?;
        for (k, v) in vars.iter().enumerate() {
            particular[*v] = space.particular[k].clone();
        }
        for kv in space.kernel {
            let mut full = vec![T::zero(); nvars];
            for (k, v) in vars.iter().enumerate() {
                full[*v] = kv[k].clone();
            }
            kernel.push(full);
        }
    }
    Ok((particular, kernel))
}

fn assemble<T: Scalar>(type_index: i32, dim: usize, cutoff: usize, slots: &[Coord], values: &[T]) -> QuadOperator<T> {
    let mut op = QuadOperator::zero(type_index, dim, cutoff);
    for (c, x) in slots.iter().zip(values) {
        if !x.is_negligible() {
            op.add_coordinate(*c, x);
        }
    }
    op
}

/// All `T` of type `s.type_index() + 1` with `[F, T] = S` and `[H, T] = 2iT`
/// inside the window. Unknowns above the determined window are set to zero.
pub fn solve_ad_f<T: Scalar>(
    f: &QuadOperator<T>,
    h: &QuadOperator<T>,
    s: &QuadOperator<T>,
    pairing: &Pairing<T>,
) -> Result<AdFSolution<T>> {
    let i = s.type_index() + 1;
    if i < 2 {
        return Err(Error::TypeShape(format!("ad F is only inverted onto type >= 2, got {i}")));
    }
    let cutoff = f.mode_cutoff();
    if s.mode_cutoff() != cutoff || h.mode_cutoff() != cutoff {
        return Err(Error::CutoffMismatch("F, H and S must share the mode cutoff".into()));
    }
    let source_window = s.reliable_mode().min(f.reliable_mode().saturating_sub(2)).min(h.reliable_mode());
    if source_window < 1 {
        return Err(Error::WindowExhausted(format!("no reliable modes left for type {i}")));
    }
    let target_window = cutoff.min(source_window + 2);
    let n = pairing.dim();
    let slots = QuadOperator::<T>::coordinate_slots(i, n, cutoff, target_window);
    let eigen = T::from_int(2 * i as i64);
    let columns: Vec<Vec<((u8, Coord), T)>> = slots
        .par_iter()
        .map(|c| -> Result<Vec<((u8, Coord), T)>> {
            let mut unit = QuadOperator::zero(i, n, cutoff);
            unit.add_coordinate(*c, &T::one());
            let fu = br(f, &unit, pairing)?;
            let hu = scale_add(&T::one(), &br(h, &unit, pairing)?, &-eigen.clone(), &unit)?;
            let mut col: Vec<_> = fu.coordinates(source_window).into_iter().map(|(k, x)| ((0u8, k), x)).collect();
            col.extend(hu.coordinates(target_window).into_iter().map(|(k, x)| ((1u8, k), x)));
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut rows: BTreeMap<(u8, Coord), Equation<T>> = BTreeMap::new();
    for (k, x) in s.coordinates(source_window) {
        rows.insert((0, k), Equation::new(x));
    }
    for (v, col) in columns.into_iter().enumerate() {
        for (key, x) in col {
            rows.entry(key).or_insert_with(|| Equation::new(T::zero())).add_term(v, x);
        }
    }
    let (particular, kernel) = solve_components(slots.len(), rows.into_values().collect())?;
    let build = |vals: &[T]| assemble(i, n, cutoff, &slots, vals).with_window(target_window);
    Ok(AdFSolution { particular: build(&particular), kernel: kernel.iter().map(|k| build(k)).collect() })
}

/// Like [`solve_ad_f`] but insists on a unique solution.
pub fn solve_ad_f_unique<T: Scalar>(
    f: &QuadOperator<T>,
    h: &QuadOperator<T>,
    s: &QuadOperator<T>,
    pairing: &Pairing<T>,
) -> Result<QuadOperator<T>> {
    let sol = solve_ad_f(f, h, s, pairing)?;
    if !sol.kernel.is_empty() {
        return Err(Error::Underdetermined(format!("ad F has a {}-dimensional kernel", sol.kernel.len())));
    }
    Ok(sol.particular)
}

/// `[L, ad_E L] + (1/6) ad_E^3 L`, which vanishes for `L = rho(L_2)`
/// since both terms equal `-rho(L_5)` up to sign.
pub fn level_five_relation<T: Scalar>(l2: &QuadOperator<T>, raising: &QuadOperator<T>, pairing: &Pairing<T>) -> Result<QuadOperator<T>> {
    let l3 = br(raising, l2, pairing)?;
    let e3 = br(raising, &br(raising, &l3, pairing)?, pairing)?;
    scale_add(&T::one(), &br(l2, &l3, pairing)?, &T::from_frac(1, 6), &e3)
}

/// Picks the element of `particular + span(kernel)` whose image
/// `L = -3T` is a critical point of the level-five relation, then checks
/// that the relation itself vanishes there.
pub fn select_by_level_five<T: Scalar>(sol: &AdFSolution<T>, raising: &QuadOperator<T>, pairing: &Pairing<T>) -> Result<QuadOperator<T>> {
    if sol.kernel.is_empty() {
        return Ok(sol.particular.clone());
    }
    let minus_three = T::from_int(-3);
    let base = sol.particular.scaled(&minus_three);
    let dirs: Vec<QuadOperator<T>> = sol.kernel.iter().map(|k| k.scaled(&minus_three)).collect();
    let ad = |x: &QuadOperator<T>| br(raising, x, pairing);
    let base_up = ad(&base)?;
    let dirs_up: Vec<QuadOperator<T>> = dirs.par_iter().map(&ad).collect::<Result<_>>()?;
    let sixth = T::from_frac(1, 6);
    let linear: Vec<QuadOperator<T>> = dirs
        .par_iter()
        .zip(&dirs_up)
        .map(|(d, du)| {
            let cubed = ad(&ad(du)?)?;
            let a = scale_add(&T::one(), &br(d, &base_up, pairing)?, &T::one(), &br(&base, du, pairing)?)?;
            scale_add(&T::one(), &a, &sixth, &cubed)
        })
        .collect::<Result<_>>()?;
    let k = dirs.len();
    let quadratic: Vec<Vec<QuadOperator<T>>> = (0..k)
        .into_par_iter()
        .map(|a| {
            (0..k)
                .map(|b| scale_add(&T::one(), &br(&dirs[a], &dirs_up[b], pairing)?, &T::one(), &br(&dirs[b], &dirs_up[a], pairing)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let window = linear.iter().chain(quadratic.iter().flatten()).map(|x| x.reliable_mode()).min().unwrap_or(0);
    let mut equations = Vec::new();
    for a in 0..k {
        let mut rows: BTreeMap<Coord, Equation<T>> = BTreeMap::new();
        for (c, x) in linear[a].coordinates(window) {
            rows.insert(c, Equation::new(-x));
        }
        for (b, q) in quadratic[a].iter().enumerate() {
            for (c, x) in q.coordinates(window) {
                rows.entry(c).or_insert_with(|| Equation::new(T::zero())).add_term(b, x);
            }
        }
        equations.extend(rows.into_values());
    }
    let space = solve_linear(k, equations)
        .ok_or_else(|| Error::Underdetermined("no critical point of the level-five relation".into()))?;
    if !space.kernel.is_empty() {
        return Err(Error::Underdetermined(format!(
            "{} kernel directions survive the level-five selection",
            space.kernel.len()
        )));
    }
    let mut t = sol.particular.clone();
    for (kappa, dir) in space.particular.iter().zip(&sol.kernel) {
        t = scale_add(&T::one(), &t, kappa, dir)?;
    }
    let rel = level_five_relation(&t.scaled(&minus_three), raising, pairing)?;
    if !rel.truncated(rel.reliable_mode()).is_zero() {
        return Err(Error::Underdetermined("level-five relation does not vanish at the critical point".into()));
    }
    Ok(t)
}

/// A family `k -> rho(L_k)` for `-1 <= k <= K`.
#[derive(Clone, Debug, PartialEq)]
pub struct VirasoroRep<T> {
    source: Sl2Data<T>,
    gens: BTreeMap<i32, QuadOperator<T>>,
    k_max: i32,
}

impl<T: Scalar> VirasoroRep<T> {
    /// Wraps an explicit family; generator types and cutoffs are checked.
    pub fn from_generators(source: Sl2Data<T>, gens: BTreeMap<i32, QuadOperator<T>>) -> Result<Self> {
        let cutoff = source.mode_cutoff();
        let k_max = gens.keys().max().copied().unwrap_or(-1);
        for k in -1..=k_max {
            let g = gens.get(&k).ok_or_else(|| Error::TypeShape(format!("missing generator {k}")))?;
            if g.type_index() != k {
                return Err(Error::TypeShape(format!("generator {k} has type {}", g.type_index())));
            }
            if g.mode_cutoff() != cutoff || g.dim() != source.pairing.dim() {
                return Err(Error::CutoffMismatch(format!("generator {k} does not match the family")));
            }
        }
        Ok(VirasoroRep { source, gens, k_max })
    }

    pub fn source(&self) -> &Sl2Data<T> {
        &self.source
    }

    pub fn pairing(&self) -> &Pairing<T> {
        &self.source.pairing
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    pub fn mode_cutoff(&self) -> usize {
        self.source.mode_cutoff()
    }

    pub fn dim(&self) -> usize {
        self.source.pairing.dim()
    }

    pub fn generator(&self, k: i32) -> Option<&QuadOperator<T>> {
        self.gens.get(&k)
    }

    pub fn generators(&self) -> &BTreeMap<i32, QuadOperator<T>> {
        &self.gens
    }

    pub fn to_json(&self) -> Value {
        let gens: Map<String, Value> = self.gens.iter().map(|(k, g)| (k.to_string(), g.to_json())).collect();
        let mut out = self.source.to_json();
        out["K"] = json!(self.k_max);
        out["gens"] = Value::Object(gens);
        out
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let source = Sl2Data::from_json(v)?;
        let obj = v.get("gens").and_then(Value::as_object).ok_or_else(|| Error::Parse("field gens".into()))?;
        let gens = obj
            .iter()
            .map(|(k, g)| Ok((k.parse::<i32>().map_err(|_| Error::Parse(format!("generator key {k}")))?, QuadOperator::from_json(g)?)))
            .collect::<Result<_>>()?;
        VirasoroRep::from_generators(source, gens)
    }
}

/// Basis indices grouped by the coupling of `eta`, the lowering blocks, `B` and `c`.
pub fn coupling_blocks<T: Scalar>(data: &Sl2Data<T>) -> Vec<Vec<usize>> {
    let n = data.pairing.dim();
    let mut sets = DisjointSets((0..n).collect());
    let f = &data.lowering;
    let mats = [data.pairing.eta(), &data.degree_block, &data.raising_block]
        .into_iter()
        .chain(f.qq())
        .chain(f.qp_blocks().map(|(_, _, m)| m));
    for m in mats {
        for (a, b, x) in m.entries() {
            if !x.is_negligible() {
                sets.union(a, b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..n {
        groups.entry(sets.find(a)).or_default().push(a);
    }
    groups.into_values().collect()
}

impl<T: Scalar> Sl2Data<T> {
    /// The data on the basis vectors `idx`, which must be a union of coupling blocks.
    pub fn restrict(&self, idx: &[usize]) -> Result<Self> {
        let pairing = self.pairing.restrict(idx)?;
        let lowering = self.lowering.restrict(idx);
        let raising = self.raising_block.restrict(idx);
        let g = pairing.inverse();
        let constant = raising.mul(g).mul(&qq_sym(&lowering)).mul(&g.transpose()).trace();
        Sl2Data::new(pairing, lowering, constant, self.degree_block.restrict(idx), raising)
    }
}

/// Extends the sl(2) triple to generators `L_{-1}, ..., L_K`.
///
/// Decoupled blocks of the data are extended separately and summed.
pub fn extend_to_w<T: Scalar>(data: &Sl2Data<T>, k_max: i32) -> Result<VirasoroRep<T>> {
    let blocks = coupling_blocks(data);
    if blocks.len() == 1 {
        return extend_to_w_unsplit(data, k_max);
    }
    let n = data.pairing.dim();
    let parts: Vec<VirasoroRep<T>> =
        blocks.par_iter().map(|idx| extend_to_w_unsplit(&data.restrict(idx)?, k_max)).collect::<Result<_>>()?;
    let mut gens = BTreeMap::new();
    for k in -1..=k_max {
        let mut total = QuadOperator::zero(k, n, data.mode_cutoff());
        for (idx, part) in blocks.iter().zip(&parts) {
            total = scale_add(&T::one(), &total, &T::one(), &part.gens[&k].embed(idx, n))?;
        }
        gens.insert(k, total);
    }
    VirasoroRep::from_generators(data.clone(), gens)
}

/// [`extend_to_w`] without the block split; every kernel direction of
/// `ad F` across blocks enters the type-2 selection.
pub fn extend_to_w_unsplit<T: Scalar>(data: &Sl2Data<T>, k_max: i32) -> Result<VirasoroRep<T>> {
    let cutoff = data.mode_cutoff();
    if k_max < 1 {
        return Err(Error::TypeShape(format!("K must be at least 1, got {k_max}")));
    }
    if (cutoff as i64) < 2 * k_max as i64 + 3 {
        return Err(Error::WindowExhausted(format!("mode cutoff {cutoff} is below 2K+3 = {}", 2 * k_max + 3)));
    }
    let pairing = &data.pairing;
    let f = data.lowering.clone();
    let h = build_h(&f, &data.constant, &data.degree_block, pairing)?;
    let e = build_e(&f, &h, &data.raising_block, pairing)?;
    let mut gens = BTreeMap::new();
    gens.insert(-1, f.clone());
    gens.insert(0, h.scaled(&T::from_frac(-1, 2)));
    gens.insert(1, e.scaled(&-T::one()));
    if k_max >= 2 {
        let sol = solve_ad_f(&f, &h, &gens[&1], pairing)?;
        let t = select_by_level_five(&sol, &e, pairing)?;
        gens.insert(2, t.scaled(&T::from_int(-3)));
    }
    for k in 3..=k_max {
        let next = br(&e, &gens[&(k - 1)], pairing)?.scaled(&T::from_frac(1, k as i64 - 2));
        gens.insert(k, next);
    }
    VirasoroRep::from_generators(data.clone(), gens)
}

/// Residual of one bracket relation.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationResidual {
    pub i: i32,
    pub j: i32,
    pub window: usize,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepReport {
    pub residuals: Vec<RelationResidual>,
}

impl RepReport {
    pub fn max_height(&self) -> f64 {
        self.residuals.iter().map(|r| r.height).fold(0.0, f64::max)
    }

    pub fn is_clean(&self) -> bool {
        self.residuals.iter().all(|r| r.height == 0.0)
    }
}

/// Checks `[L_i, L_j] = (i - j) L_{i+j}` for `-1 <= i < j <= jmax`,
/// `i <= imax`, `i + j <= K`, each inside its reliable window.
pub fn verify_rep<T: Scalar>(rep: &VirasoroRep<T>, imax: i32, jmax: i32) -> RepReport {
    let mut pairs = Vec::new();
    for i in -1..=imax {
        for j in (i + 1)..=jmax {
            if i + j <= rep.k_max && rep.gens.contains_key(&i) && rep.gens.contains_key(&j) {
                pairs.push((i, j));
            }
        }
    }
    let residuals = pairs
        .par_iter()
        .map(|&(i, j)| {
            let lhs = br(&rep.gens[&i], &rep.gens[&j], rep.pairing());
            let diff = lhs.and_then(|l| scale_add(&T::one(), &l, &T::from_int((j - i) as i64), &rep.gens[&(i + j)]));
            match diff {
                Ok(d) => {
                    let window = d.reliable_mode();
                    RelationResidual { i, j, window, height: d.truncated(window).max_height() }
                }
                Err(_) => RelationResidual { i, j, window: 0, height: f64::INFINITY },
            }
        })
        .collect();
    RepReport { residuals }
}

/// Height of `[L_0, L_k] + k L_k` inside the window.
pub fn eigen_defect<T: Scalar>(rep: &VirasoroRep<T>, k: i32) -> Result<f64> {
    let g = rep.gens.get(&k).ok_or_else(|| Error::TypeShape(format!("missing generator {k}")))?;
    let d = scale_add(&T::one(), &br(&rep.gens[&0], g, rep.pairing())?, &T::from_int(k as i64), g)?;
    Ok(d.truncated(d.reliable_mode()).max_height())
}
