//! Representations of the positive half of the Witt algebra inside a
//! truncated Heisenberg enveloping algebra, their quantization on the
//! bosonic Fock space, and the tau functions they determine.

pub mod diffz;
pub mod error;
pub mod factorization;
pub mod fock;
pub mod gw;
pub mod heisenberg;
pub mod linalg;
pub mod scalar;
pub mod solver;
pub mod virasoro;

pub use error::{Error, Result};
pub use scalar::{Rational, Scalar};

pub type Matrix = linalg::Matrix<Rational>;
pub type Pairing = heisenberg::Pairing<Rational>;
pub type Operator = heisenberg::QuadOperator<Rational>;
pub type Series = fock::TruncatedSeries<Rational>;
pub type FockOperator = fock::FockOperator<Rational>;
pub type DiffOp1 = diffz::DiffOp1<Rational>;
pub type Sl2Data = virasoro::Sl2Data<Rational>;
pub type VirasoroRep = virasoro::VirasoroRep<Rational>;
