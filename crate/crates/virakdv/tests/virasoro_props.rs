use std::collections::BTreeMap;

use proptest::prelude::*;
use virakdv::heisenberg::{br, make_typed, scale_add, Coord, OperatorParts, Pairing, QuadOperator};
use virakdv::linalg::Matrix;
use virakdv::scalar::{q, Rational, Scalar};
use virakdv::virasoro::*;
use virakdv::Error;

fn m(rows: Vec<Vec<Rational>>) -> Matrix<Rational> {
    Matrix::from_rows(rows)
}

fn mi(rows: &[&[i64]]) -> Matrix<Rational> {
    m(rows.iter().map(|r| r.iter().map(|&x| q(x, 1)).collect()).collect())
}

fn s1(x: Rational) -> Matrix<Rational> {
    Matrix::scalar(1, x)
}

fn assert_zero_in_window(op: &QuadOperator<Rational>, what: &str) {
    let w = op.reliable_mode();
    assert!(op.truncated(w).is_zero(), "{what} nonzero within window {w}: {op:?}");
}

fn diff(a: &QuadOperator<Rational>, b: &QuadOperator<Rational>) -> QuadOperator<Rational> {
    scale_add(&q(1, 1), a, &q(-1, 1), b).unwrap()
}

/// Generator `k` of the canonical family written out by hand:
/// `s p_{2k+3} + (1/4) sum_j p_j p_{2k-j} + (1/2) sum_j q_j p_{j+2k}` with
/// `t_1^2/4` for `k = -1` and `+1/16` for `k = 0`.
fn canonical_generator(k: i32, s: &Rational, cutoff: usize) -> QuadOperator<Rational> {
    let p = Pairing::new(s1(q(1, 1))).unwrap();
    let mut parts = OperatorParts { linear: Some(vec![s.clone()]), ..Default::default() };
    if k == -1 {
        parts.qq = Some(s1(q(1, 4)));
    }
    if k == 0 {
        parts.constant = Some(q(1, 16));
    }
    for j in (1..=cutoff as i32).step_by(2) {
        let u = j + 2 * k;
        if u >= 1 && u as usize <= cutoff {
            parts.qp.insert(j as usize, s1(q(1, 2)));
        }
        let t = 2 * k - j;
        if k >= 1 && t >= 1 {
            parts.pp.insert(j as usize, s1(q(1, 4)));
        }
    }
    make_typed(k, &p, parts, cutoff).unwrap()
}

#[test]
fn canonical_family_matches_closed_form() {
    for s in [q(-1, 2), q(1, 1), q(7, 3)] {
        let cutoff = 17;
        let rep = extend_to_w(&Sl2Data::canonical(s.clone(), cutoff).unwrap(), 5).unwrap();
        for k in -1..=5 {
            let g = rep.generator(k).unwrap();
            let want = canonical_generator(k, &s, cutoff);
            assert_zero_in_window(&diff(g, &want), &format!("generator {k}"));
            assert_eq!(g.reliable_mode(), cutoff);
        }
    }
}

#[test]
fn dim_one_example_gives_minus_eta() {
    // F = v p_1 + q_1 eta q_1 + q_{i+2} eta p_i, B = -eta gives
    // H = -v p_3 + b - q_i eta p_i.
    for eta in [q(1, 1), q(3, 2), q(-2, 5)] {
        let p = Pairing::new(s1(eta.clone())).unwrap();
        let v = q(5, 7);
        let f = lowering_operator(&p, std::slice::from_ref(&v), &s1(eta.clone()), &s1(eta.clone()), 13).unwrap();
        let h = build_h(&f, &q(1, 3), &s1(-eta.clone()), &p).unwrap();
        assert_eq!(h.linear(), &[-v.clone()]);
        assert_eq!(h.constant(), &q(1, 3));
        for i in (1..=13).step_by(2) {
            assert_eq!(h.qp(i), Some(&s1(-eta.clone())), "mode {i}");
        }
        assert_zero_in_window(&scale_add(&q(1, 1), &br(&h, &f, &p).unwrap(), &q(2, 1), &f).unwrap(), "[H,F]+2F");
    }
}

#[test]
fn orthonormal_example_formula() {
    // eta = 1, unit lowering blocks: H = (1/3) v (B - 2) p_3 + b + (1/i) q_i (B - (i-1)) p_i.
    // With a = 0 the constraint on B is empty, so B can be any matrix.
    let p = Pairing::new(Matrix::identity(2)).unwrap();
    let b = mi(&[&[1, 2], &[-3, 5]]);
    let v = vec![q(1, 1), q(-2, 1)];
    let f = lowering_operator(&p, &v, &Matrix::zeros(2, 2), &Matrix::identity(2), 11).unwrap();
    let h = build_h(&f, &q(0, 1), &b, &p).unwrap();
    let lin = b.sub(&Matrix::scalar(2, q(2, 1))).left_mul_vec(&v);
    assert_eq!(h.linear(), lin.iter().map(|x| x * q(1, 3)).collect::<Vec<_>>().as_slice());
    for i in (1..=11i64).step_by(2) {
        let want = b.sub(&Matrix::scalar(2, q(i - 1, 1))).scale(&q(1, i));
        assert_eq!(h.qp(i as usize), Some(&want), "mode {i}");
    }
}

#[test]
fn degree_operator_example_holds_at_half_pairing() {
    // Lowering blocks (i+2)/2 with B = -1/2 close only for eta = 1/2, where every
    // identity-mode block is -1/2 and the quantized part is -i t_i d/dt_i.
    let eta = q(1, 2);
    let p = Pairing::new(s1(eta.clone())).unwrap();
    let v = q(3, 1);
    let mut parts = OperatorParts { linear: Some(vec![v.clone()]), qq: Some(s1(eta.clone())), ..Default::default() };
    for j in (3..=13i64).step_by(2) {
        parts.qp.insert(j as usize, s1(q(j, 2)));
    }
    let f = make_typed(-1, &p, parts, 13).unwrap();
    let h = build_h(&f, &q(0, 1), &s1(q(-1, 2)), &p).unwrap();
    for i in (1..=13).step_by(2) {
        assert_eq!(h.qp(i), Some(&s1(q(-1, 2))));
    }
    assert_eq!(h.linear(), &[q(-1, 1)]);
    assert_zero_in_window(&scale_add(&q(1, 1), &br(&h, &f, &p).unwrap(), &q(2, 1), &f).unwrap(), "[H,F]+2F");
}

#[test]
fn raising_block_example() {
    // n = 1, eta = a = 1, B = -1, c = -1/16: the q_1 p_3 block of E is (B - 4c)/3 = -1/4.
    let p = Pairing::new(s1(q(1, 1))).unwrap();
    let f = lowering_operator(&p, &[q(2, 1)], &s1(q(1, 1)), &s1(q(1, 1)), 11).unwrap();
    let h = build_h(&f, &q(-1, 8), &s1(q(-1, 1)), &p).unwrap();
    let e = build_e(&f, &h, &s1(q(-1, 16)), &p).unwrap();
    assert_eq!(e.qp(1), Some(&s1(q(-1, 4))));
    for r in (3..=9).step_by(2) {
        assert_eq!(e.qp(r), Some(&s1(q(-1, 4))));
    }
    assert_eq!(e.linear(), &[q(-1, 2)]);
    assert_zero_in_window(&diff(&br(&e, &f, &p).unwrap(), &h), "[E,F]-H");
}

#[test]
fn raising_block_symmetric_part_only() {
    let eta = mi(&[&[0, 1], &[1, 0]]);
    let p = Pairing::new(eta.clone()).unwrap();
    let f = lowering_operator(&p, &[q(0, 1), q(-1, 1)], &eta, &eta, 9).unwrap();
    let b = eta.neg();
    let c = eta.scale(&q(-1, 16));
    let tweak = mi(&[&[0, 3], &[-3, 0]]);
    let h = build_h(&f, &q(-1, 4), &b, &p).unwrap();
    let e1 = build_e(&f, &h, &c, &p).unwrap();
    let e2 = build_e(&f, &h, &c.add(&tweak), &p).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn constraint_errors_name_their_equation() {
    let p = Pairing::new(s1(q(1, 1))).unwrap();
    let f = lowering_operator(&p, &[q(1, 1)], &s1(q(1, 4)), &s1(q(1, 2)), 9).unwrap();
    assert_eq!(build_h(&f, &q(0, 1), &s1(q(1, 1)), &p).unwrap_err(), Error::ConstraintViolation("FyieldsH:2".into()));
    let h = build_h(&f, &q(-1, 8), &s1(q(-1, 1)), &p).unwrap();
    assert_eq!(build_e(&f, &h, &s1(q(1, 4)), &p).unwrap_err(), Error::ConstraintViolation("EFH:1".into()));
    let singular = lowering_operator(&p, &[q(1, 1)], &s1(q(1, 4)), &s1(q(0, 1)), 9).unwrap();
    assert!(matches!(build_h(&singular, &q(0, 1), &s1(q(-1, 1)), &p), Err(Error::SingularMatrix(_))));
    let eta = mi(&[&[1, 0], &[0, 1]]);
    let p2 = Pairing::new(eta.clone()).unwrap();
    let f2 = lowering_operator(&p2, &[q(1, 1), q(0, 1)], &eta, &eta, 9).unwrap();
    // B = -eta is admissible; c must then satisfy -S_c B - B^T S_c = 2 S_c, which holds for every c.
    let h2 = build_h(&f2, &q(0, 1), &eta.neg(), &p2).unwrap();
    assert!(build_e(&f2, &h2, &mi(&[&[1, 0], &[0, -1]]), &p2).is_ok());
    // With a = 0 any B passes FyieldsH:2, so HF-2F:2 becomes the binding check.
    let f3 = lowering_operator(&p2, &[q(1, 1), q(0, 1)], &Matrix::zeros(2, 2), &eta, 9).unwrap();
    let h3 = build_h(&f3, &q(0, 1), &mi(&[&[1, 0], &[0, 0]]), &p2).unwrap();
    assert_eq!(build_e(&f3, &h3, &mi(&[&[1, 0], &[0, 0]]), &p2).unwrap_err(), Error::ConstraintViolation("HF-2F:2".into()));
}

#[test]
fn ad_f_of_zero_is_zero() {
    let data = Sl2Data::<Rational>::canonical(q(-1, 2), 15).unwrap();
    let f = data.lowering();
    let h = build_h(f, data.constant(), data.degree_block(), data.pairing()).unwrap();
    let t = solve_ad_f_unique(f, &h, &QuadOperator::zero(1, 1, 15), data.pairing()).unwrap();
    assert!(t.is_zero());
}

#[test]
fn ad_f_has_a_kernel_on_type_three() {
    let data = Sl2Data::<Rational>::canonical(q(-1, 2), 15).unwrap();
    let p = data.pairing();
    let f = data.lowering();
    let h = build_h(f, data.constant(), data.degree_block(), p).unwrap();
    let sol = solve_ad_f(f, &h, &QuadOperator::zero(2, 1, 15), p).unwrap();
    assert!(sol.particular.is_zero());
    assert_eq!(sol.kernel.len(), 1);
    let k = &sol.kernel[0];
    assert!(k.pp(3).is_some());
    assert_zero_in_window(&br(f, k, p).unwrap(), "[F,K]");
    assert_zero_in_window(&scale_add(&q(1, 1), &br(&h, k, p).unwrap(), &q(-6, 1), k).unwrap(), "[H,K]-6K");
    assert!(matches!(solve_ad_f_unique(f, &h, &QuadOperator::zero(2, 1, 15), p), Err(Error::Underdetermined(_))));
}

#[test]
fn ad_f_inverts_brackets() {
    let data = Sl2Data::<Rational>::canonical(q(7, 3), 19).unwrap();
    let rep = extend_to_w(&data, 4).unwrap();
    let p = rep.pairing();
    let f = rep.generator(-1).unwrap();
    let h = rep.generator(0).unwrap().scaled(&q(-2, 1));
    for k in 2..=4 {
        // [F, L_k] = (-1 - k) L_{k-1}
        let s = rep.generator(k - 1).unwrap().scaled(&q(-1 - k as i64, 1));
        let sol = solve_ad_f(f, &h, &s, p).unwrap();
        let gap = diff(&sol.particular, &rep.generator(k).unwrap().truncated(sol.particular.reliable_mode()));
        if k == 2 {
            assert!(sol.kernel.is_empty());
            assert_zero_in_window(&gap, "L_2");
        } else {
            assert_zero_in_window(&br(f, &gap, p).unwrap(), &format!("[F, L_{k} - T]"));
        }
    }
}

#[test]
fn ad_f_window_is_honest() {
    let data = Sl2Data::<Rational>::canonical(q(1, 1), 11).unwrap();
    let f = data.lowering();
    let h = build_h(f, data.constant(), data.degree_block(), data.pairing()).unwrap();
    let s = build_e(f, &h, data.raising_block(), data.pairing()).unwrap().scaled(&q(-1, 1)).with_window(5);
    let t = solve_ad_f_unique(f, &h, &s, data.pairing()).unwrap();
    assert_eq!(t.reliable_mode(), 7);
    let s = QuadOperator::zero(1, 1, 11).with_window(0);
    assert!(matches!(solve_ad_f(f, &h, &s, data.pairing()), Err(Error::WindowExhausted(_))));
}

#[test]
fn extension_requires_room_for_top_generator() {
    let data = Sl2Data::<Rational>::canonical(q(1, 1), 11).unwrap();
    assert!(matches!(extend_to_w(&data, 5), Err(Error::WindowExhausted(_))));
    let rep = extend_to_w(&data, 1).unwrap();
    assert_eq!(rep.generators().len(), 3);
}

#[test]
fn verify_rep_detects_perturbation() {
    let data = Sl2Data::<Rational>::canonical(q(-1, 2), 17).unwrap();
    let rep = extend_to_w(&data, 4).unwrap();
    assert!(verify_rep(&rep, 4, 4).is_clean());
    let mut gens = rep.generators().clone();
    gens.get_mut(&2).unwrap().add_coordinate(Coord::Qp(3, 0, 0), &q(1, 1));
    let bad = VirasoroRep::from_generators(data.clone(), gens).unwrap();
    let report = verify_rep(&bad, 4, 4);
    let slot = report.residuals.iter().find(|r| r.i == -1 && r.j == 3).unwrap();
    assert!(slot.height > 0.0);
}

#[test]
fn trivial_family_passes() {
    let data = Sl2Data::<Rational>::canonical(q(-1, 2), 11).unwrap();
    let gens: BTreeMap<i32, QuadOperator<Rational>> = (-1..=3).map(|k| (k, QuadOperator::zero(k, 1, 11))).collect();
    let rep = VirasoroRep::from_generators(data, gens).unwrap();
    assert!(verify_rep(&rep, 3, 3).is_clean());
}

#[test]
fn degree_eigenspaces_and_products() {
    let data = Sl2Data::<Rational>::canonical(q(-1, 2), 19).unwrap();
    let rep = extend_to_w(&data, 5).unwrap();
    for k in -1..=5 {
        assert_eq!(eigen_defect(&rep, k).unwrap(), 0.0, "generator {k}");
    }
    // [H, T1] = 4 T1 and [H, T2] = 6 T2 force [H, [T1, T2]] = 10 [T1, T2].
    let p = rep.pairing();
    let h = rep.generator(0).unwrap().scaled(&q(-2, 1));
    let prod = br(rep.generator(2).unwrap(), rep.generator(3).unwrap(), p).unwrap();
    let d = scale_add(&q(1, 1), &br(&h, &prod, p).unwrap(), &q(-10, 1), &prod).unwrap();
    assert_zero_in_window(&d, "[H,[T1,T2]] - 10[T1,T2]");
}

#[test]
fn truncation_is_consistent() {
    let small = extend_to_w(&Sl2Data::<Rational>::canonical(q(2, 5), 15).unwrap(), 5).unwrap();
    let large = extend_to_w(&Sl2Data::<Rational>::canonical(q(2, 5), 23).unwrap(), 5).unwrap();
    for k in -1..=5 {
        let a = small.generator(k).unwrap();
        let w = a.reliable_mode();
        let b = large.generator(k).unwrap().truncated(w);
        assert_eq!(a.coordinates(w), b.coordinates(w), "generator {k}");
    }
}

#[test]
fn rep_json_round_trip() {
    let rep = extend_to_w(&Sl2Data::<Rational>::canonical(q(-1, 2), 11).unwrap(), 3).unwrap();
    let back = VirasoroRep::from_json(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn float_scalar_smoke() {
    let data = Sl2Data::<f64>::canonical(-0.5, 15).unwrap();
    let rep = extend_to_w(&data, 4).unwrap();
    let report = verify_rep(&rep, 4, 4);
    assert!(report.max_height() < 1e-9, "{report:?}");
    assert!((rep.generator(0).unwrap().constant() - 0.0625).abs() < 1e-12);
    assert_eq!(f64::from_frac(1, 4), 0.25);
}

/// Weight-graded data: eta pairs weights mu and -mu, a = D_1 = eta,
/// B = -(2 mu + 1) eta, c a multiple of eta B G (B G + 2).
fn graded_data(weight: Rational, scale: Rational, v: [i64; 2], lower: Vec<Matrix<Rational>>, cutoff: usize) -> Result<Sl2Data<Rational>, Error> {
    let (eta, mu) = if weight == q(0, 1) {
        (mi(&[&[2, 1], &[1, 1]]), Matrix::zeros(2, 2))
    } else {
        (mi(&[&[0, 1], &[1, 0]]), Matrix::diagonal(&[-weight.clone(), weight]))
    };
    let p = Pairing::new(eta.clone())?;
    let g = p.inverse().clone();
    let b = Matrix::identity(2).add(&mu.scale(&q(2, 1))).mul(&eta).neg();
    let bg = b.mul(&g);
    let c = eta.mul(&bg).mul(&bg.add(&Matrix::scalar(2, q(2, 1)))).scale(&scale);
    let constant = c.mul(&g).mul(&eta.scale(&q(2, 1))).mul(&g).trace();
    let mut parts = OperatorParts { linear: Some(v.iter().map(|&x| q(x, 1)).collect()), qq: Some(eta.clone()), ..Default::default() };
    for j in (3..=cutoff).step_by(2) {
        let d = if j == 3 { eta.clone() } else { lower[(j / 2) % lower.len()].clone() };
        parts.qp.insert(j, d);
    }
    let f = make_typed(-1, &p, parts, cutoff)?;
    Sl2Data::new(p, f, constant, b, c)
}

fn invertible() -> impl Strategy<Value = Matrix<Rational>> {
    prop::collection::vec(-3i64..=3, 4)
        .prop_filter("invertible", |e| e[0] * e[3] - e[1] * e[2] != 0)
        .prop_map(|e| mi(&[&[e[0], e[1]], &[e[2], e[3]]]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sl2_triple_relations(
        weight in prop::sample::select(vec![q(0, 1), q(1, 2), q(1, 1), q(3, 2)]),
        scale in prop::sample::select(vec![q(1, 16), q(-1, 3), q(2, 1)]),
        v in prop::array::uniform2(-2i64..=2),
        lower in prop::collection::vec(invertible(), 1..3),
    ) {
        let data = graded_data(weight, scale, v, lower, 11).unwrap();
        let p = data.pairing();
        let f = data.lowering();
        let h = build_h(f, data.constant(), data.degree_block(), p).unwrap();
        let e = build_e(f, &h, data.raising_block(), p).unwrap();
        let hf = scale_add(&q(1, 1), &br(&h, f, p).unwrap(), &q(2, 1), f).unwrap();
        let ef = diff(&br(&e, f, p).unwrap(), &h);
        let he = scale_add(&q(1, 1), &br(&h, &e, p).unwrap(), &q(-2, 1), &e).unwrap();
        for (x, what) in [(&hf, "[H,F]+2F"), (&ef, "[E,F]-H"), (&he, "[H,E]-2E")] {
            prop_assert!(x.truncated(x.reliable_mode()).is_zero(), "{}", what);
        }
    }

    #[test]
    fn graded_extensions_close(
        weight in prop::sample::select(vec![q(0, 1), q(1, 2), q(1, 1)]),
        v in prop::array::uniform2(-2i64..=2),
    ) {
        let data = graded_data(weight, q(1, 16), v, vec![mi(&[&[0, 1], &[1, 0]])], 13).unwrap();
        let rep = extend_to_w(&data, 4).unwrap();
        let report = verify_rep(&rep, 4, 4);
        prop_assert!(report.is_clean(), "{:?}", report);
        for k in -1..=4 {
            prop_assert_eq!(eigen_defect(&rep, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn canonical_extensions_satisfy_jacobi(snum in -5i64..=5, sden in 1i64..=4) {
        prop_assume!(snum != 0);
        let rep = extend_to_w(&Sl2Data::canonical(q(snum, sden), 13).unwrap(), 5).unwrap();
        let p = rep.pairing();
        let g = |k: i32| rep.generator(k).unwrap();
        for (a, b, c) in [(-1, 1, 2), (0, 1, 3), (1, 2, 2), (-1, 2, 3)] {
            let t1 = br(g(a), &br(g(b), g(c), p).unwrap(), p).unwrap();
            let t2 = br(g(b), &br(g(c), g(a), p).unwrap(), p).unwrap();
            let t3 = br(g(c), &br(g(a), g(b), p).unwrap(), p).unwrap();
            let total = scale_add(&q(1, 1), &scale_add(&q(1, 1), &t1, &q(1, 1), &t2).unwrap(), &q(1, 1), &t3).unwrap();
            prop_assert!(total.truncated(total.reliable_mode()).is_zero());
        }
    }
}
