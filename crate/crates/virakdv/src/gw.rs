//! Virasoro operators of a variety with trivial odd cohomology and
//! vanishing first Chern class, written in the odd times `t_{2i+1}`
//! through `tbar_i = sqrt(2 hbar) (2i+1)!! t_{2i+1}`.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fock::{dequantize, quantize, FockOperator};
use crate::heisenberg::{parse_matrix, parse_scalar_value, render_matrix, Pairing};
use crate::linalg::Matrix;
use crate::scalar::{double_factorial, Scalar};
use crate::virasoro::{extend_to_w, lowering_operator, Sl2Data, VirasoroRep};

#[derive(Clone, Debug, PartialEq)]
pub struct VarietyData<T> {
    r: u32,
    hodge: BTreeMap<(u32, u32), u32>,
    basis: Vec<(u32, u32)>,
    pairing: Pairing<T>,
    mu: Vec<T>,
    hbar: T,
}

impl<T: Scalar> VarietyData<T> {
    pub fn new(r: u32, hodge: BTreeMap<(u32, u32), u32>, basis: Vec<(u32, u32)>, eta: Matrix<T>, hbar: T) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidVariety(m));
        if let Some(((p, q), _)) = hodge.iter().find(|((p, q), h)| (p + q) % 2 == 1 && **h > 0) {
            return bad(format!("odd cohomology h^({p},{q}) is nonzero"));
        }
        if let Some(((p, q), _)) = hodge.keys().map(|k| (k, ())).find(|((p, q), _)| *p > r || *q > r) {
            return bad(format!("h^({p},{q}) exceeds dimension {r}"));
        }
        let total: u32 = hodge.values().sum();
        if basis.len() != total as usize {
            return bad(format!("basis has {} classes, Hodge numbers sum to {total}", basis.len()));
        }
        for (pq, h) in &hodge {
            let count = basis.iter().filter(|b| *b == pq).count();
            if count != *h as usize {
                return bad(format!("basis has {count} classes of type {pq:?}, expected {h}"));
            }
        }
        if basis.first() != Some(&(0, 0)) {
            return bad("first basis class must be the unit in H^0".into());
        }
        if hbar.magnitude().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || hbar.is_negligible() {
            return bad("hbar must be positive".into());
        }
        let pairing = Pairing::new(eta)?;
        if pairing.dim() != basis.len() {
            return Err(Error::DimensionMismatch(format!("pairing of size {} for {} classes", pairing.dim(), basis.len())));
        }
        let half = T::from_frac(r as i64, 2);
        let mu: Vec<T> = basis.iter().map(|(p, _)| T::from_int(*p as i64) - half.clone()).collect();
        for (a, b, x) in pairing.eta().entries() {
            if !x.is_negligible() && !(mu[a].clone() + mu[b].clone()).is_negligible() {
                return bad(format!("pairing entry ({}, {}) joins weights that do not cancel", a + 1, b + 1));
            }
        }
        Ok(VarietyData { r, hodge, basis, pairing, mu, hbar })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn complex_dim(&self) -> u32 {
        self.r
    }

    pub fn pairing(&self) -> &Pairing<T> {
        &self.pairing
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn hbar(&self) -> &T {
        &self.hbar
    }

    pub fn basis(&self) -> &[(u32, u32)] {
        &self.basis
    }

    pub fn with_hbar(&self, hbar: T) -> Result<Self> {
        Self::new(self.r, self.hodge.clone(), self.basis.clone(), self.pairing.eta().clone(), hbar)
    }

    /// Topological Euler characteristic from the Hodge numbers.
    pub fn euler_characteristic(&self) -> i64 {
        self.hodge.iter().map(|((p, q), h)| if (p + q) % 2 == 0 { *h as i64 } else { -(*h as i64) }).sum()
    }

    /// A single point.
    pub fn point(hbar: T) -> Result<Self> {
        Self::new(0, [((0, 0), 1)].into(), vec![(0, 0)], Matrix::identity(1), hbar)
    }

    /// Two points, in the basis `(unit, first point)`.
    pub fn two_points(hbar: T) -> Result<Self> {
        let i = |x: i64| T::from_int(x);
        let eta = Matrix::from_rows(vec![vec![i(2), i(1)], vec![i(1), i(1)]]);
        Self::new(0, [((0, 0), 2)].into(), vec![(0, 0), (0, 0)], eta, hbar)
    }

    /// A K3 surface with a diagonal model of the intersection form on `H^{1,1}`.
    pub fn k3(hbar: T) -> Result<Self> {
        let mut basis = vec![(0, 0), (2, 0)];
        basis.extend(std::iter::repeat_n((1, 1), 20));
        basis.extend([(0, 2), (2, 2)]);
        let n = basis.len();
        let mut eta = Matrix::zeros(n, n);
        eta[(0, n - 1)] = T::one();
        eta[(n - 1, 0)] = T::one();
        eta[(1, n - 2)] = T::one();
        eta[(n - 2, 1)] = T::one();
        for k in 2..n - 2 {
            eta[(k, k)] = if k == 2 { T::one() } else { -T::one() };
        }
        let hodge = [((0, 0), 1), ((2, 0), 1), ((0, 2), 1), ((1, 1), 20), ((2, 2), 1)].into();
        Self::new(2, hodge, basis, eta, hbar)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "r": self.r,
            "hbar": self.hbar.render(),
            "hodge": self.hodge.iter().map(|((p, q), h)| json!({"p": p, "q": q, "h": h})).collect::<Vec<_>>(),
            "basis": self.basis.iter().map(|(p, q)| json!({"p": p, "q": q})).collect::<Vec<_>>(),
            "eta": render_matrix(self.pairing.eta()),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let err = |f: &str| Error::Parse(format!("variety field {f}"));
        let uint = |x: &Value, f: &str| x.get(f).and_then(Value::as_u64).map(|u| u as u32).ok_or_else(|| err(f));
        let r = uint(v, "r")?;
        let hbar = parse_scalar_value(v.get("hbar").ok_or_else(|| err("hbar"))?)?;
        let mut hodge = BTreeMap::new();
        for h in v.get("hodge").and_then(Value::as_array).ok_or_else(|| err("hodge"))? {
            hodge.insert((uint(h, "p")?, uint(h, "q")?), uint(h, "h")?);
        }
        let basis = v
            .get("basis")
            .and_then(Value::as_array)
            .ok_or_else(|| err("basis"))?
            .iter()
            .map(|b| Ok((uint(b, "p")?, uint(b, "q")?)))
            .collect::<Result<Vec<_>>>()?;
        let eta = parse_matrix(v.get("eta").ok_or_else(|| err("eta"))?)?;
        Self::new(r, hodge, basis, eta, hbar)
    }
}

/// `Gamma(x + k) / Gamma(x) = x (x+1) ... (x+k-1)`.
pub fn pochhammer_ratio<T: Scalar>(x: &T, k: u32) -> T {
    (0..k).fold(T::one(), |acc, j| acc * (x.clone() + T::from_int(j as i64)))
}

/// `sqrt(2 hbar) (2i+1)!!`, the factor in `tbar_i = kappa_i t_{2i+1}`.
fn kappa<T: Scalar>(root: &T, i: usize) -> T {
    root.clone() * double_factorial::<T>(2 * i as i64 + 1)
}

fn root_two_hbar<T: Scalar>(hbar: &T) -> Result<T> {
    let two = T::from_int(2) * hbar.clone();
    two.sqrt_exact().ok_or_else(|| Error::NonSquareHbar(two.render()))
}

/// The operators `Lbar_k`, `-1 <= k <= k_max`, in the variables `t_m` with odd `m <= cutoff`.
pub fn build_gw_operators<T: Scalar>(v: &VarietyData<T>, k_max: i32, cutoff: usize) -> Result<BTreeMap<i32, FockOperator<T>>> {
    let n = v.dim();
    let root = root_two_hbar(&v.hbar)?;
    let g = v.pairing.inverse();
    let eta = v.pairing.eta();
    let top = (cutoff.saturating_sub(1)) / 2;
    let half = T::from_frac(1, 2);
    let shift = T::from_frac(3 - v.r as i64, 2);
    let mode = |i: usize| 2 * i + 1;
    let mut out = BTreeMap::new();
    for k in -1..=k_max {
        let mut op = FockOperator::zero(n, -2 * k);
        match k {
            -1 => {
                op.add_term(vec![], vec![(1, 0)], -(T::one() / kappa(&root, 0)));
                let factor = kappa::<T>(&root, 0) * kappa(&root, 0) / (T::from_int(2) * v.hbar.clone());
                for (a, b, x) in eta.entries() {
                    op.add_term(vec![(1, a), (1, b)], vec![], x.clone() * factor.clone());
                }
                for i in 0..top {
                    let ratio = kappa::<T>(&root, i + 1) / kappa(&root, i);
                    for a in 0..n {
                        op.add_term(vec![(mode(i + 1), a)], vec![(mode(i), a)], ratio.clone());
                    }
                }
            }
            0 => {
                if top >= 1 {
                    op.add_term(vec![], vec![(3, 0)], -(shift.clone() / kappa(&root, 1)));
                }
                for i in 0..=top {
                    for a in 0..n {
                        let c = v.mu[a].clone() + T::from_int(i as i64) + half.clone();
                        op.add_term(vec![(mode(i), a)], vec![(mode(i), a)], c);
                    }
                }
                op.add_term(vec![], vec![], T::from_frac((3 - v.r as i64) * v.euler_characteristic(), 48));
            }
            _ => {
                let k = k as usize;
                if k < top {
                    let c = pochhammer_ratio(&shift, k as u32 + 1) / kappa(&root, k + 1);
                    op.add_term(vec![], vec![(mode(k + 1), 0)], -c);
                }
                for i in 0..=top.saturating_sub(k) {
                    for a in 0..n {
                        let c = pochhammer_ratio(&(v.mu[a].clone() + T::from_int(i as i64) + half.clone()), k as u32 + 1);
                        op.add_term(vec![(mode(i), a)], vec![(mode(k + i), a)], c * kappa(&root, i) / kappa(&root, k + i));
                    }
                }
                // (hbar/2) sum_{i=-k}^{-1} (-1)^i Gamma-ratio eta^{ab} d_{-1-i,a} d_{k+i,b}
                for j in 0..k {
                    let (x, y) = (j, k - 1 - j);
                    if x > top || y > top {
                        continue;
                    }
                    let sign = if j % 2 == 0 { -T::one() } else { T::one() };
                    let scale = sign * v.hbar.clone() * half.clone() / (kappa::<T>(&root, x) * kappa(&root, y));
                    for (a, b, gab) in g.entries() {
                        let ratio = pochhammer_ratio(&(v.mu[b].clone() - T::from_int(j as i64) - half.clone()), k as u32 + 1);
                        op.add_term(vec![], vec![(mode(x), a), (mode(y), b)], ratio * gab.clone() * scale.clone());
                    }
                }
            }
        }
        out.insert(k, op);
    }
    Ok(out)
}

/// The `L_0` constant computed from the weights and from the Euler characteristic.
pub fn libgober_wood_constant<T: Scalar>(v: &VarietyData<T>) -> (T, T) {
    let r = v.r as i64;
    let via_mu = v.basis.iter().fold(T::zero(), |acc, (p, _)| {
        let p = *p as i64;
        acc + T::from_int((2 * p - r + 1) * (2 * p - r - 1))
    }) * T::from_frac(-1, 16);
    let via_chern = T::from_frac((3 - r) * v.euler_characteristic(), 48);
    (via_mu, via_chern)
}

/// sl(2) data with `v = -eta_{1,.}/sqrt(2 hbar)`, `B = -(2 mu + 1) eta`,
/// `c = (1/16) eta B G (B G + 2)` and all lowering blocks equal to `eta`.
pub fn gw_sl2_data<T: Scalar>(v: &VarietyData<T>, cutoff: usize) -> Result<Sl2Data<T>> {
    let root = root_two_hbar(&v.hbar)?;
    let n = v.dim();
    let eta = v.pairing.eta().clone();
    let g = v.pairing.inverse().clone();
    let linear: Vec<T> = eta.row(0).into_iter().map(|x| -x / root.clone()).collect();
    let f = lowering_operator(&v.pairing, &linear, &eta, &eta, cutoff)?;
    let weight = Matrix::diagonal(&v.mu).scale(&T::from_int(2)).add(&Matrix::identity(n));
    let degree_block = weight.mul(&eta).neg();
    let bg = degree_block.mul(&g);
    let raising = eta.mul(&bg).mul(&bg.add(&Matrix::scalar(n, T::from_int(2)))).scale(&T::from_frac(1, 16));
    let constant = T::from_int(2) * raising.mul(&g).trace();
    Sl2Data::new(v.pairing.clone(), f, constant, degree_block, raising)
}

/// Per-generator outcome of comparing two operator families inside a mode window.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorComparison {
    pub k: i32,
    pub window: usize,
    pub mismatches: usize,
    pub max_height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbarReport {
    pub generators: Vec<GeneratorComparison>,
}

impl LbarReport {
    pub fn all_equal(&self) -> bool {
        self.generators.iter().all(|g| g.mismatches == 0)
    }

    pub fn to_json(&self) -> Value {
        json!(self
            .generators
            .iter()
            .map(|g| json!({"k": g.k, "window": g.window, "mismatches": g.mismatches}))
            .collect::<Vec<_>>())
    }
}

/// Compares quantized generators of `rep` with `expected`, mode by mode up to `window`.
pub fn compare_with_rep<T: Scalar>(rep: &VirasoroRep<T>, expected: &BTreeMap<i32, FockOperator<T>>, window: usize) -> Result<LbarReport> {
    let mut generators = Vec::new();
    for (k, want) in expected {
        let op = rep.generator(*k).ok_or_else(|| Error::WindowExhausted(format!("generator {k} missing")))?;
        let w = window.min(op.reliable_mode());
        let got = quantize(op, rep.pairing()).truncated_modes(w);
        let diff = got.sub(&want.truncated_modes(w))?;
        generators.push(GeneratorComparison { k: *k, window: w, mismatches: diff.terms().len(), max_height: diff.max_height() });
    }
    Ok(LbarReport { generators })
}

/// Extends the sl(2) data built from `v` and compares with the Getzler operators.
pub fn check_lbar_equals_lhat<T: Scalar>(v: &VarietyData<T>, k_max: i32, cutoff: usize) -> Result<LbarReport> {
    check_lbar_against(&gw_sl2_data(v, cutoff + 4)?, v, k_max, cutoff)
}

/// As [`check_lbar_equals_lhat`] but with caller-supplied sl(2) data.
pub fn check_lbar_against<T: Scalar>(data: &Sl2Data<T>, v: &VarietyData<T>, k_max: i32, cutoff: usize) -> Result<LbarReport> {
    let rep = extend_to_w(data, k_max)?;
    let expected = build_gw_operators(v, k_max, cutoff)?;
    compare_with_rep(&rep, &expected, cutoff)
}

/// Rebuilds the sl(2) data from `Lbar_{-1}`, `Lbar_0`, `Lbar_1` alone and extends it.
pub fn regenerate_from_low_operators<T: Scalar>(v: &VarietyData<T>, k_max: i32, cutoff: usize) -> Result<VirasoroRep<T>> {
    let low = build_gw_operators(v, 1, cutoff)?;
    let p = &v.pairing;
    let f = dequantize(&low[&-1], p, -1, cutoff)?;
    let h = dequantize(&low[&0].scale(&T::from_int(-2)), p, 0, cutoff)?;
    let e = dequantize(&low[&1].scale(&-T::one()), p, 1, cutoff)?;
    let degree_block = h.qp(1).cloned().unwrap_or_else(|| Matrix::zeros(p.dim(), p.dim()));
    let raising = e.pp(1).cloned().unwrap_or_else(|| Matrix::zeros(p.dim(), p.dim()));
    let data = Sl2Data::new(p.clone(), f, h.constant().clone(), degree_block, raising)?;
    extend_to_w(&data, k_max)
}
