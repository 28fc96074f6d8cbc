use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("type shape error: {0}")]
    TypeShape(String),
    #[error("incompatible operands: {0}")]
    IncompatibleOperands(String),
    #[error("{0} violated")]
    ConstraintViolation(String),
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("window exhausted: {0}")]
    WindowExhausted(String),
    #[error("extension not determined: {0}")]
    Underdetermined(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-invertible derivative: {0}")]
    NonInvertibleDerivative(String),
    #[error("even mode leak: {0}")]
    EvenModeLeak(String),
    #[error("irrational eigenvalue: {0}")]
    IrrationalEigenvalue(String),
    #[error("not simultaneously diagonalizable: {0}")]
    NotSimultaneouslyDiagonalizable(String),
    #[error("block leak in generator {generator}: {detail}")]
    BlockLeak { generator: i32, detail: String },
    #[error("cutoff mismatch: {0}")]
    CutoffMismatch(String),
    #[error("NoSolution: {0}")]
    NoSolution(String),
    #[error("underdetermined degree: first free monomial {0}")]
    UnderdeterminedDegree(String),
    #[error("zero coefficient: {0}")]
    ZeroCoefficient(String),
    #[error("non-rational scale: {0}")]
    NonRationalScale(String),
    #[error("missing scale for mode {0}")]
    MissingScale(usize),
    #[error("2*hbar is not a rational square: {0}")]
    NonSquareHbar(String),
    #[error("invalid variety data: {0}")]
    InvalidVariety(String),
    #[error("bad constant term: {0}")]
    BadConstantTerm(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
