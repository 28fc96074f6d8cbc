//! Bracket engine against a naive normal-ordering oracle, plus
//! antisymmetry and Jacobi on random typed operators.

use std::collections::BTreeMap;

use proptest::prelude::*;
use virakdv::heisenberg::{br, make_typed, scale_add, OperatorParts, Pairing, QuadOperator};
use virakdv::linalg::Matrix;
use virakdv::scalar::{q, Rational};
use num_traits::Zero;

type Gen = (usize, usize);

/// Normal-ordered monomial: sorted q generators then sorted p generators.
type Mono = (Vec<Gen>, Vec<Gen>);

#[derive(Clone, Debug, Default, PartialEq)]
struct Weyl(BTreeMap<Mono, Rational>);

impl Weyl {
    fn add(&mut self, m: Mono, c: Rational) {
        if c.is_zero() {
            return;
        }
        let e = self.0.entry(m.clone()).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.0.remove(&m);
        }
    }

    fn scale(&self, k: &Rational) -> Weyl {
        let mut out = Weyl::default();
        for (m, c) in &self.0 {
            out.add(m.clone(), c * k);
        }
        out
    }

    fn plus(&self, other: &Weyl) -> Weyl {
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add(m.clone(), c.clone());
        }
        out
    }

    fn mul(&self, other: &Weyl, g: &Matrix<Rational>) -> Weyl {
        let mut out = Weyl::default();
        for ((q1, p1), c1) in &self.0 {
            for ((q2, p2), c2) in &other.0 {
                for (c, qs, ps) in reorder(p1, q2, g) {
                    let mut qq: Vec<Gen> = q1.iter().chain(&qs).cloned().collect();
                    let mut pp: Vec<Gen> = ps.iter().chain(p2).cloned().collect();
                    qq.sort();
                    pp.sort();
                    out.add((qq, pp), c * c1 * c2);
                }
            }
        }
        out
    }

    fn commutator(&self, other: &Weyl, g: &Matrix<Rational>) -> Weyl {
        self.mul(other, g).plus(&other.mul(self, g).scale(&q(-1, 1)))
    }

    fn max_mode(m: &Mono) -> usize {
        m.0.iter().chain(&m.1).map(|g| g.0).max().unwrap_or(0)
    }

    fn truncated(&self, mode: usize) -> Weyl {
        Weyl(self.0.iter().filter(|(m, _)| Weyl::max_mode(m) <= mode).map(|(m, c)| (m.clone(), c.clone())).collect())
    }
}

/// Rewrites `ps * qs` with every p moved to the right of every q.
fn reorder(ps: &[Gen], qs: &[Gen], g: &Matrix<Rational>) -> Vec<(Rational, Vec<Gen>, Vec<Gen>)> {
    if ps.is_empty() || qs.is_empty() {
        return vec![(q(1, 1), qs.to_vec(), ps.to_vec())];
    }
    let (last, rest) = ps.split_last().unwrap();
    // p * Q = Q * p + sum_k [p, q_k] * (Q without q_k)
    let mut moved: Vec<(Rational, Vec<Gen>, Vec<Gen>)> = vec![(q(1, 1), qs.to_vec(), vec![*last])];
    for k in 0..qs.len() {
        if qs[k].0 == last.0 {
            let c = Rational::from_integer((last.0 as i64).into()) * g[(last.1, qs[k].1)].clone();
            let mut remaining = qs.to_vec();
            remaining.remove(k);
            moved.push((c, remaining, vec![]));
        }
    }
    let mut out = Vec::new();
    for (c, qrest, ptail) in moved {
        for (c2, q2, p2) in reorder(rest, &qrest, g) {
            let mut p = p2;
            p.extend(ptail.iter().cloned());
            out.push((c.clone() * c2, q2, p));
        }
    }
    out
}

fn to_weyl(op: &QuadOperator<Rational>) -> Weyl {
    let n = op.dim();
    let mut w = Weyl::default();
    w.add((vec![], vec![]), op.constant().clone());
    if let Some(m) = op.linear_mode() {
        for a in 0..n {
            w.add((vec![], vec![(m, a)]), op.linear()[a].clone());
        }
    }
    let mut pair = |qs: Vec<Gen>, ps: Vec<Gen>, c: Rational| {
        let mut qs = qs;
        let mut ps = ps;
        qs.sort();
        ps.sort();
        w.add((qs, ps), c);
    };
    if let Some(a) = op.qq() {
        for x in 0..n {
            for y in 0..n {
                pair(vec![(1, x), (1, y)], vec![], a[(x, y)].clone());
            }
        }
    }
    for (j, u, b) in op.qp_blocks() {
        for x in 0..n {
            for y in 0..n {
                pair(vec![(j, x)], vec![(u, y)], b[(x, y)].clone());
            }
        }
    }
    for (s, t, c) in op.pp_blocks() {
        for x in 0..n {
            for y in 0..n {
                pair(vec![], vec![(s, x), (t, y)], c[(x, y)].clone());
            }
        }
    }
    w
}

fn pairings() -> Vec<Pairing<Rational>> {
    let m = |r: Vec<Vec<i64>>| Matrix::from_rows(r.into_iter().map(|x| x.into_iter().map(|v| q(v, 1)).collect()).collect());
    vec![
        Pairing::new(m(vec![vec![1]])).unwrap(),
        Pairing::new(m(vec![vec![-2]])).unwrap(),
        Pairing::new(m(vec![vec![1, 0], vec![0, 1]])).unwrap(),
        Pairing::new(m(vec![vec![0, 1], vec![1, 0]])).unwrap(),
        Pairing::new(m(vec![vec![2, 1], vec![1, 1]])).unwrap(),
    ]
}

fn entries(n: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-3i64..=3, n * n)
}

fn mat(n: usize, v: &[i64]) -> Matrix<Rational> {
    Matrix::from_rows((0..n).map(|r| (0..n).map(|c| q(v[r * n + c], 1)).collect()).collect())
}

/// Random operator of type `i` with all admissible blocks filled.
fn random_op(i: i32, p: &Pairing<Rational>, cutoff: usize, seed: &[i64]) -> QuadOperator<Rational> {
    let n = p.dim();
    let mut it = seed.iter().cycle();
    let mut next = |k: usize| -> Vec<i64> { (0..k).map(|_| *it.next().unwrap()).collect() };
    let mut parts = OperatorParts::default();
    if 2 * i + 3 <= cutoff as i32 {
        parts.linear = Some(next(n).into_iter().map(|x| q(x, 1)).collect());
    }
    if i == 0 {
        parts.constant = Some(q(next(1)[0], 2));
    }
    if i == -1 {
        parts.qq = Some(mat(n, &next(n * n)));
    }
    for j in (1..=cutoff).step_by(2) {
        let u = j as i32 + 2 * i;
        if u >= 1 && u as usize <= cutoff {
            parts.qp.insert(j, mat(n, &next(n * n)));
        }
    }
    if i >= 1 {
        for j in (1..2 * i as usize).step_by(2) {
            if j <= cutoff && 2 * i as usize - j <= cutoff {
                parts.pp.insert(j, mat(n, &next(n * n)));
            }
        }
    }
    make_typed(i, p, parts, cutoff).unwrap()
}

fn case() -> impl Strategy<Value = (usize, i32, i32, i32, usize, Vec<i64>)> {
    (0usize..5, -1i32..=2, 0i32..=2, 0i32..=2, prop::sample::select(vec![5usize, 7, 9]))
        .prop_flat_map(|(pi, a, b, c, m)| (Just(pi), Just(a), Just(b), Just(c), Just(m), entries(7)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bracket_matches_normal_ordering((pi, i, j, _, cutoff, seed) in case()) {
        let p = &pairings()[pi];
        let a = random_op(i, p, cutoff, &seed);
        let b = random_op(j, p, cutoff, &seed[2..]);
        let got = to_weyl(&br(&a, &b, p).unwrap());
        let want = to_weyl(&a).commutator(&to_weyl(&b), p.inverse()).truncated(cutoff);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn bracket_is_antisymmetric((pi, i, j, _, cutoff, seed) in case()) {
        let p = &pairings()[pi];
        let a = random_op(i, p, cutoff, &seed);
        let b = random_op(j, p, cutoff, &seed[3..]);
        let ab = br(&a, &b, p).unwrap();
        let ba = br(&b, &a, p).unwrap();
        let sum = scale_add(&q(1, 1), &ab, &q(1, 1), &ba).unwrap();
        prop_assert!(sum.is_zero());
    }

    #[test]
    fn jacobi_within_window((pi, i, j, k, cutoff, seed) in case()) {
        let p = &pairings()[pi];
        let a = random_op(i, p, cutoff, &seed);
        let b = random_op(j, p, cutoff, &seed[1..]);
        let c = random_op(k, p, cutoff, &seed[4..]);
        let t1 = br(&a, &br(&b, &c, p).unwrap(), p).unwrap();
        let t2 = br(&b, &br(&c, &a, p).unwrap(), p).unwrap();
        let t3 = br(&c, &br(&a, &b, p).unwrap(), p).unwrap();
        let window = t1.reliable_mode().min(t2.reliable_mode()).min(t3.reliable_mode());
        let total = scale_add(&q(1, 1), &scale_add(&q(1, 1), &t1, &q(1, 1), &t2).unwrap(), &q(1, 1), &t3).unwrap();
        prop_assert!(total.truncated(window).is_zero(), "window {}", window);
    }

    #[test]
    fn bracket_lands_in_sum_type((pi, i, j, _, cutoff, seed) in case()) {
        let p = &pairings()[pi];
        let r = br(&random_op(i, p, cutoff, &seed), &random_op(j, p, cutoff, &seed[5..]), p).unwrap();
        prop_assert_eq!(r.type_index(), i + j);
        prop_assert!(r.qq().is_none() || i + j == -1);
        prop_assert!(r.constant().is_zero() || i + j == 0);
    }
}

#[test]
fn degree_operator_example() {
    // n = 1: [H, F] = -2F with H = -b p_3 + b0 - q_i eta p_i and F = b p_1 + q_1 eta q_1 + q_{i+2} eta p_i.
    for eta in [q(1, 1), q(3, 2), q(-2, 1)] {
        let p = Pairing::new(Matrix::from_rows(vec![vec![eta.clone()]])).unwrap();
        let b = q(5, 7);
        let cutoff = 13;
        let e = Matrix::from_rows(vec![vec![eta.clone()]]);
        let mut f = OperatorParts { linear: Some(vec![b.clone()]), qq: Some(e.clone()), ..Default::default() };
        let mut h = OperatorParts { linear: Some(vec![-b.clone()]), constant: Some(q(-1, 8)), ..Default::default() };
        for i in (1..=cutoff).step_by(2) {
            if i + 2 <= cutoff {
                f.qp.insert(i + 2, e.clone());
            }
            h.qp.insert(i, e.scale(&q(-1, 1)));
        }
        let f = make_typed(-1, &p, f, cutoff).unwrap();
        let h = make_typed(0, &p, h, cutoff).unwrap();
        let hf = br(&h, &f, &p).unwrap();
        let window = hf.reliable_mode();
        let diff = scale_add(&q(1, 1), &hf, &q(2, 1), &f).unwrap();
        assert!(diff.truncated(window).is_zero(), "{diff:?}");
    }
}

#[test]
fn qq_with_top_linear_term_vanishes() {
    let p = &pairings()[2];
    let a = make_typed(-1, p, OperatorParts { qq: Some(mat(2, &[1, 2, 2, -1])), ..Default::default() }, 9).unwrap();
    for i in 0..3 {
        let lin = make_typed(i, p, OperatorParts { linear: Some(vec![q(1, 1), q(-3, 1)]), ..Default::default() }, 9).unwrap();
        assert!(br(&a, &lin, p).unwrap().is_zero());
    }
}

#[test]
fn scale_add_examples() {
    let p = &pairings()[4];
    let t = random_op(1, p, 9, &[1, -2, 3, 0, 2, -1, 1]);
    assert!(scale_add(&q(1, 1), &t, &q(-1, 1), &t).unwrap().is_zero());
    let doubled = scale_add(&q(2, 1), &t, &q(0, 1), &t).unwrap();
    assert_eq!(doubled, t.scaled(&q(2, 1)));
    let other = random_op(2, p, 9, &[1]);
    assert!(scale_add(&q(1, 1), &t, &q(1, 1), &other).is_err());
}
