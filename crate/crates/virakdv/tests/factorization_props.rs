use std::collections::BTreeMap;

use proptest::prelude::*;
use virakdv::factorization::*;
use virakdv::fock::{Monomial, TruncatedSeries};
use virakdv::gw::{gw_sl2_data, VarietyData};
use virakdv::heisenberg::{br, Pairing};
use virakdv::linalg::Matrix;
use virakdv::scalar::{q, Rational};
use virakdv::virasoro::{extend_to_w, lowering_operator, verify_rep, Sl2Data, VirasoroRep};
use virakdv::Error;

fn m(rows: &[&[i64]]) -> Matrix<Rational> {
    Matrix::from_rows(rows.iter().map(|r| r.iter().map(|&x| q(x, 1)).collect()).collect())
}

fn two_point_rep(k_max: i32, cutoff: usize) -> VirasoroRep<Rational> {
    let v = VarietyData::two_points(q(1, 2)).unwrap();
    extend_to_w(&gw_sl2_data(&v, cutoff).unwrap(), k_max).unwrap()
}

/// GW-shaped data with every form proportional to `eta` and the given linear term.
fn proportional_data(eta: Matrix<Rational>, v: &[Rational], cutoff: usize) -> Sl2Data<Rational> {
    let n = eta.rows();
    let pairing = Pairing::new(eta.clone()).unwrap();
    let f = lowering_operator(&pairing, v, &eta, &eta, cutoff).unwrap();
    Sl2Data::new(pairing, f, q(-(n as i64), 8), eta.neg(), eta.scale(&q(-1, 16))).unwrap()
}

#[test]
fn diagonal_input_keeps_the_identity() {
    let eta = m(&[&[2, 0], &[0, 3]]);
    let p = Pairing::new(eta.clone()).unwrap();
    let sp = simultaneous_diagonalize(&p, &eta, &eta.neg(), &eta.scale(&q(-1, 16))).unwrap();
    assert_eq!(sp.s(), &Matrix::identity(2));
    assert_eq!(sp.blocks(), &[vec![0], vec![1]]);
    assert_eq!(sp.transformed_pairing(), &eta);
}

#[test]
fn isotropic_eigenvectors_do_not_split() {
    let eta = m(&[&[0, 1], &[1, 0]]);
    let p = Pairing::new(eta.clone()).unwrap();
    // mu = diag(1/2, -1/2): B = -(2 mu + 1) eta
    let b = Matrix::diagonal(&[q(-2, 1), q(0, 1)]).mul(&eta);
    let err = simultaneous_diagonalize(&p, &eta, &b, &Matrix::zeros(2, 2)).unwrap_err();
    assert!(matches!(err, Error::NotSimultaneouslyDiagonalizable(_)), "{err:?}");
}

#[test]
fn irrational_spectrum_is_rejected() {
    let p = Pairing::new(Matrix::identity(2)).unwrap();
    let b = m(&[&[0, 2], &[1, 0]]);
    let err = simultaneous_diagonalize(&p, &Matrix::identity(2), &b, &Matrix::zeros(2, 2)).unwrap_err();
    assert!(matches!(err, Error::IrrationalEigenvalue(_)), "{err:?}");
}

#[test]
fn defective_endomorphism_is_rejected() {
    let p = Pairing::new(Matrix::identity(2)).unwrap();
    let b = m(&[&[1, 1], &[0, 1]]);
    let err = simultaneous_diagonalize(&p, &Matrix::identity(2), &b, &Matrix::zeros(2, 2)).unwrap_err();
    assert!(matches!(err, Error::NotSimultaneouslyDiagonalizable(_)), "{err:?}");
}

#[test]
fn two_points_split_into_idempotents() {
    let rep = two_point_rep(3, 13);
    let sp = split_data(rep.source()).unwrap();
    assert!(sp.is_full());
    // the unit is e_1 + e_2 and the pairing becomes the identity
    assert_eq!(sp.transformed_pairing(), &Matrix::identity(2));
    let lin = sp.basis().left_mul_vec(rep.source().lowering().linear());
    assert!(lin.iter().all(|x| *x != q(0, 1)));
}

#[test]
fn one_dimensional_split_is_trivial() {
    let data = Sl2Data::canonical(q(-1, 2), 13).unwrap();
    let rep = extend_to_w(&data, 4).unwrap();
    let sp = split_data(&data).unwrap();
    assert_eq!(sp.s(), &Matrix::identity(1));
    let factors = split_rep(&rep, &sp).unwrap();
    assert_eq!(factors, vec![rep]);
}

#[test]
fn factors_are_representations_and_reassemble() {
    let rep = two_point_rep(5, 23);
    let sp = split_data(rep.source()).unwrap();
    let factors = split_rep(&rep, &sp).unwrap();
    assert_eq!(factors.len(), 2);
    for f in &factors {
        assert_eq!(f.dim(), 1);
        assert!(verify_rep(f, 5, 6).is_clean());
        for (k, g) in f.generators() {
            assert_eq!(g.type_index(), *k);
        }
    }
    let whole = reassemble(&factors, &sp).unwrap();
    for (k, g) in rep.generators() {
        assert_eq!(whole[k], g.congruence(sp.basis()), "generator {k}");
    }
}

#[test]
fn factors_commute_with_each_other() {
    let rep = two_point_rep(3, 13);
    let sp = split_data(rep.source()).unwrap();
    let factors = split_rep(&rep, &sp).unwrap();
    let moved = Pairing::new(sp.transformed_pairing().clone()).unwrap();
    for (i, j) in [(-1, 3), (0, 2), (1, 1), (2, -1)] {
        let a = factors[0].generator(i).unwrap().embed(&sp.blocks()[0], 2);
        let b = factors[1].generator(j).unwrap().embed(&sp.blocks()[1], 2);
        let c = br(&a, &b, &moved).unwrap();
        assert_eq!(c.truncated(c.reliable_mode()).max_height(), 0.0, "[{i}, {j}]");
    }
}

#[test]
fn leaking_generator_is_named() {
    let rep = two_point_rep(3, 13);
    let sp = split_data(rep.source()).unwrap();
    let mut gens = rep.generators().clone();
    let l2 = gens.remove(&2).unwrap();
    let mut extra = BTreeMap::new();
    extra.insert(3usize, Matrix::diagonal(&[q(0, 1), q(1, 1)]));
    let bump = virakdv::heisenberg::make_typed(
        2,
        rep.pairing(),
        virakdv::heisenberg::OperatorParts { pp: extra, ..Default::default() },
        13,
    )
    .unwrap();
    gens.insert(2, virakdv::heisenberg::scale_add(&q(1, 1), &l2, &q(1, 1), &bump).unwrap());
    let broken = VirasoroRep::from_generators(rep.source().clone(), gens).unwrap();
    match split_rep(&broken, &sp).unwrap_err() {
        Error::BlockLeak { generator, .. } => assert_eq!(generator, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unit_factors_assemble_to_one() {
    let sp = split_data(two_point_rep(1, 9).source()).unwrap();
    let ones = vec![TruncatedSeries::<Rational>::one(1, 8); 2];
    assert_eq!(assemble_product_solution(&ones, &sp).unwrap(), TruncatedSeries::one(2, 8));
    let mixed = vec![TruncatedSeries::<Rational>::one(1, 8), TruncatedSeries::one(1, 6)];
    assert!(matches!(assemble_product_solution(&mixed, &sp), Err(Error::CutoffMismatch(_))));
}

#[test]
fn one_factor_product_is_the_factor() {
    let data = Sl2Data::canonical(q(-1, 2), 11).unwrap();
    let rep = extend_to_w(&data, 3).unwrap();
    let sp = split_data(&data).unwrap();
    let taus = solve_factors(&split_rep(&rep, &sp).unwrap(), 3, 9).unwrap();
    assert_eq!(assemble_product_solution(&taus, &sp).unwrap(), taus[0]);
}

#[test]
fn product_of_factor_solutions_on_a_diagonal_space() {
    let data = proportional_data(m(&[&[1, 0], &[0, 1]]), &[q(-1, 2), q(3, 1)], 13);
    let rep = extend_to_w(&data, 3).unwrap();
    let sp = split_data(&data).unwrap();
    assert_eq!(sp.s(), &Matrix::identity(2));
    let taus = solve_factors(&split_rep(&rep, &sp).unwrap(), 3, 10).unwrap();
    assert!(check_product_annihilation(&rep, &sp, &taus, 3, 10).unwrap().is_clean());
}

#[test]
fn two_point_product_is_annihilated() {
    let rep = two_point_rep(3, 13);
    let sp = split_data(rep.source()).unwrap();
    let taus = solve_factors(&split_rep(&rep, &sp).unwrap(), 3, 10).unwrap();
    let report = check_product_annihilation(&rep, &sp, &taus, 3, 10).unwrap();
    assert_eq!(report.residuals.len(), 5);
    assert!(report.is_clean());
}

#[test]
fn perturbed_factor_leaves_a_residual() {
    let rep = two_point_rep(3, 13);
    let sp = split_data(rep.source()).unwrap();
    let mut taus = solve_factors(&split_rep(&rep, &sp).unwrap(), 3, 10).unwrap();
    taus[1].add_term(Monomial::from_exps([((1, 0), 3)]), q(1, 1));
    let report = check_product_annihilation(&rep, &sp, &taus, 3, 10).unwrap();
    let lower = report.residuals.iter().find(|r| r.k == -1).unwrap();
    assert!(!lower.residual.is_zero());
}

#[test]
fn sign_flipped_basis_also_works() {
    let rep = two_point_rep(3, 13);
    let data = rep.source();
    let sp = split_data(data).unwrap();
    for signs in [[-1, 1], [1, -1], [-1, -1]] {
        let flip = Matrix::diagonal(&signs.map(|x| q(x, 1)));
        let qq = data.lowering().qq().unwrap();
        let flipped = Splitting::from_matrix(flip.mul(sp.s()), sp.blocks().to_vec(), data.pairing(), qq, data.degree_block(), data.raising_block()).unwrap();
        assert_eq!(flipped.transformed_pairing(), sp.transformed_pairing());
        let taus = solve_factors(&split_rep(&rep, &flipped).unwrap(), 3, 10).unwrap();
        assert!(check_product_annihilation(&rep, &flipped, &taus, 3, 10).unwrap().is_clean(), "{signs:?}");
    }
}

#[test]
fn splitting_json_round_trip() {
    let rep = two_point_rep(1, 9);
    let sp = split_data(rep.source()).unwrap();
    let json = sp.to_json();
    assert_eq!(json["blocks"], serde_json::json!([[1], [2]]));
    assert_eq!(Splitting::from_json(&json, rep.source()).unwrap(), sp);
}

fn mixing(entries: &[i64]) -> Option<Matrix<Rational>> {
    let p = m(&[&[entries[0], entries[1]], &[entries[2], entries[3]]]);
    p.inverse().map(|_| p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mixed_diagonal_data_splits_and_solves(
        e1 in prop_oneof![-3i64..=-1, 1i64..=3],
        e2 in prop_oneof![-3i64..=-1, 1i64..=3],
        v1 in prop_oneof![-3i64..=-1, 1i64..=3],
        v2 in prop_oneof![-3i64..=-1, 1i64..=3],
        mix in prop::collection::vec(-2i64..=2, 4),
    ) {
        let Some(p0) = mixing(&mix) else { return Ok(()) };
        let eta = Matrix::diagonal(&[q(e1, 1), q(e2, 2)]);
        // the same data written in the basis with transition matrix p0^{-1}
        let back = p0.inverse().unwrap();
        let moved_eta = back.transpose().mul(&eta).mul(&back);
        let moved_v = back.left_mul_vec(&[q(v1, 1), q(v2, 1)]);
        let data = proportional_data(moved_eta, &moved_v, 11);
        let rep = extend_to_w(&data, 3).unwrap();
        let sp = split_data(&data).unwrap();
        let factors = split_rep(&rep, &sp).unwrap();
        let whole = reassemble(&factors, &sp).unwrap();
        for (k, g) in rep.generators() {
            prop_assert_eq!(&whole[k], &g.congruence(sp.basis()));
        }
        let taus = solve_factors(&factors, 3, 9).unwrap();
        prop_assert!(check_product_annihilation(&rep, &sp, &taus, 3, 9).unwrap().is_clean());
    }
}
