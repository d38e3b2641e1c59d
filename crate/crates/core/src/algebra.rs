//! Finite-dimensional tracial matrix algebras.
//!
//! A [`TracialAlgebra`] is a full matrix algebra `M_d` together with a trace
//! that assigns the weight `w` to every rank-one projection. The normalized
//! trace has `w = 1/d`, the usual trace has `w = 1`, and tensor products
//! multiply weights, so mixed products such as `(M_N, τ_N) ⊗ (M_N, tr_N)`
//! are represented exactly.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector, C64, ONE, ZERO};

/// Tolerance used to validate projections and Hermitian inputs.
pub const PROJECTION_TOL: f64 = 1e-9;

/// Default cap on the side length of tensor-product algebras.
pub const DEFAULT_DIM_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceMode {
    /// `τ(1) = 1`.
    Normalized,
    /// `tr(1) = d`.
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracialAlgebra {
    dim: usize,
    unit_weight: f64,
}

impl TracialAlgebra {
    pub fn new(dim: usize, mode: TraceMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::MalformedAlgebra("dimension must be positive".into()));
        }
        let unit_weight = match mode {
            TraceMode::Normalized => 1.0 / dim as f64,
            TraceMode::Unnormalized => 1.0,
        };
        Ok(Self { dim, unit_weight })
    }

    /// `(M_d, τ_d)`. Panics on `dim == 0`.
    pub fn normalized(dim: usize) -> Self {
        Self::new(dim, TraceMode::Normalized).expect("positive dimension")
    }

    /// `(M_d, tr_d)`. Panics on `dim == 0`.
    pub fn unnormalized(dim: usize) -> Self {
        Self::new(dim, TraceMode::Unnormalized).expect("positive dimension")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Trace of a rank-one projection.
    pub fn unit_weight(&self) -> f64 {
        self.unit_weight
    }

    /// The trace convention, or `None` for a mixed tensor product.
    pub fn trace_mode(&self) -> Option<TraceMode> {
        let d = self.dim as f64;
        if (self.unit_weight - 1.0).abs() <= 1e-15 {
            Some(TraceMode::Unnormalized)
        } else if (self.unit_weight * d - 1.0).abs() <= 1e-12 {
            Some(TraceMode::Normalized)
        } else {
            None
        }
    }

    pub fn tensor(&self, other: &TracialAlgebra, cap: usize) -> Result<TracialAlgebra> {
        let dim = self
            .dim
            .checked_mul(other.dim)
            .ok_or(Error::DimensionCap { dim: usize::MAX, cap })?;
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        Ok(TracialAlgebra {
            dim,
            unit_weight: self.unit_weight * other.unit_weight,
        })
    }
}

/// A dense operator in a tracial algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    alg: TracialAlgebra,
    mat: CMatrix,
}

impl Operator {
    pub fn new(alg: TracialAlgebra, mat: CMatrix) -> Result<Self> {
        if mat.nrows() != alg.dim || mat.ncols() != alg.dim {
            return Err(Error::DimensionMismatch {
                expected: alg.dim,
                found: if mat.nrows() != alg.dim {
                    mat.nrows()
                } else {
                    mat.ncols()
                },
            });
        }
        Ok(Self { alg, mat })
    }

    pub fn from_fn(alg: TracialAlgebra, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self {
            alg,
            mat: CMatrix::from_fn(alg.dim, alg.dim, f),
        }
    }

    pub fn identity(alg: TracialAlgebra) -> Self {
        Self {
            alg,
            mat: CMatrix::identity(alg.dim, alg.dim),
        }
    }

    pub fn zero(alg: TracialAlgebra) -> Self {
        Self {
            alg,
            mat: CMatrix::zeros(alg.dim, alg.dim),
        }
    }

    pub fn diagonal(alg: TracialAlgebra, diag: &[f64]) -> Result<Self> {
        if diag.len() != alg.dim {
            return Err(Error::DimensionMismatch {
                expected: alg.dim,
                found: diag.len(),
            });
        }
        Ok(Self::from_fn(alg, |i, j| if i == j { c(diag[i]) } else { ZERO }))
    }

    pub fn algebra(&self) -> &TracialAlgebra {
        &self.alg
    }

    pub fn dim(&self) -> usize {
        self.alg.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    /// Same matrix, reinterpreted in another algebra of equal size.
    pub fn in_algebra(&self, alg: TracialAlgebra) -> Result<Self> {
        Self::new(alg, self.mat.clone())
    }

    pub fn adjoint(&self) -> Self {
        Self {
            alg: self.alg,
            mat: self.mat.adjoint(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            alg: self.alg,
            mat: self.mat.map(|z| z * s),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(c(s))
    }

    pub fn hermitian_defect(&self) -> f64 {
        linalg::hermitian_defect(&self.mat)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace() * self.alg.unit_weight
    }

    /// Largest entrywise distance to `other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        linalg::max_abs_diff(&self.mat, &other.mat)
    }

    /// `|A| = (A*A)^{1/2}`.
    pub fn abs(&self) -> Self {
        Self {
            alg: self.alg,
            mat: linalg::abs(&self.mat),
        }
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        linalg::eigvalsh(&self.mat).first().copied().unwrap_or(0.0)
    }
}

fn check_same_dim(a: &Operator, b: &Operator) {
    assert_eq!(
        a.alg.dim, b.alg.dim,
        "operator dimension mismatch: {} vs {}",
        a.alg.dim, b.alg.dim
    );
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        check_same_dim(self, rhs);
        Operator {
            alg: self.alg,
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        check_same_dim(self, rhs);
        Operator {
            alg: self.alg,
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        check_same_dim(self, rhs);
        Operator {
            alg: self.alg,
            mat: &self.mat * &rhs.mat,
        }
    }
}

impl Add for Operator {
    type Output = Operator;
    fn add(self, rhs: Operator) -> Operator {
        &self + &rhs
    }
}

impl Sub for Operator {
    type Output = Operator;
    fn sub(self, rhs: Operator) -> Operator {
        &self - &rhs
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        &self * &rhs
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_real(-1.0)
    }
}

/// An orthogonal projection with certified spectrum in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    op: Operator,
    rank: usize,
}

impl Projection {
    /// Validates `e = e*`, `e² = e` and the spectrum, all within
    /// [`PROJECTION_TOL`].
    pub fn new(op: Operator) -> Result<Self> {
        let herm = op.hermitian_defect();
        if herm > PROJECTION_TOL {
            return Err(Error::NotProjection(format!("not self-adjoint ({herm:e})")));
        }
        let idem = linalg::max_abs_diff(&(&op.mat * &op.mat), &op.mat);
        if idem > PROJECTION_TOL {
            return Err(Error::NotProjection(format!("not idempotent ({idem:e})")));
        }
        let vals = linalg::eigvalsh(&op.mat);
        let mut rank = 0;
        for &l in &vals {
            if (l - 1.0).abs() <= PROJECTION_TOL {
                rank += 1;
            } else if l.abs() > PROJECTION_TOL {
                return Err(Error::NotProjection(format!("eigenvalue {l} not in {{0,1}}")));
            }
        }
        Ok(Self { op, rank })
    }

    /// Symmetrize, round the spectrum to `{0, 1}` at 1/2 and rebuild.
    pub fn round(op: &Operator) -> Self {
        let (vals, vecs) = linalg::eigh(&op.mat);
        let keep: Vec<CVector> = vals
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.5)
            .map(|(j, _)| vecs.column(j).into_owned())
            .collect();
        Self::from_orthonormal(op.alg, &keep)
    }

    /// Projection onto the span of `cols`, which are orthonormalized first.
    pub fn from_columns(alg: TracialAlgebra, cols: &[CVector]) -> Result<Self> {
        if let Some(v) = cols.iter().find(|v| v.len() != alg.dim) {
            return Err(Error::DimensionMismatch {
                expected: alg.dim,
                found: v.len(),
            });
        }
        let basis = linalg::orthonormalize(cols, 1e-10);
        Ok(Self::from_orthonormal(alg, &basis))
    }

    fn from_orthonormal(alg: TracialAlgebra, basis: &[CVector]) -> Self {
        let d = alg.dim;
        let v = linalg::columns_to_matrix(d, basis);
        let mat = linalg::hermitian_part(&(&v * v.adjoint()));
        Self {
            op: Operator { alg, mat },
            rank: basis.len(),
        }
    }

    /// Projection onto the column span of a `d × r` matrix with orthonormal
    /// columns.
    pub fn from_frame(alg: TracialAlgebra, frame: &CMatrix) -> Result<Self> {
        let cols: Vec<CVector> = frame.column_iter().map(|c| c.into_owned()).collect();
        Self::from_columns(alg, &cols)
    }

    pub fn identity(alg: TracialAlgebra) -> Self {
        Self {
            op: Operator::identity(alg),
            rank: alg.dim,
        }
    }

    pub fn zero(alg: TracialAlgebra) -> Self {
        Self {
            op: Operator::zero(alg),
            rank: 0,
        }
    }

    /// Diagonal 0/1 projection keeping the coordinates where `keep` is true.
    pub fn diagonal(alg: TracialAlgebra, keep: &[bool]) -> Result<Self> {
        let diag: Vec<f64> = keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        let op = Operator::diagonal(alg, &diag)?;
        Ok(Self {
            op,
            rank: keep.iter().filter(|&&k| k).count(),
        })
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.op.mat
    }

    pub fn algebra(&self) -> &TracialAlgebra {
        &self.op.alg
    }

    pub fn dim(&self) -> usize {
        self.op.alg.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn corank(&self) -> usize {
        self.dim() - self.rank
    }

    /// `corank / d`, equal to `τ(1 - e)` for the normalized trace.
    pub fn normalized_corank(&self) -> f64 {
        self.corank() as f64 / self.dim() as f64
    }

    /// `1 - e`.
    pub fn complement(&self) -> Projection {
        let alg = self.op.alg;
        Projection {
            op: &Operator::identity(alg) - &self.op,
            rank: self.corank(),
        }
    }

    /// Trace of `1 - e` in the ambient algebra.
    pub fn complement_trace(&self) -> f64 {
        self.corank() as f64 * self.op.alg.unit_weight
    }

    /// Orthonormal basis of the range as a `d × rank` matrix.
    pub fn range_frame(&self) -> CMatrix {
        let (vals, vecs) = linalg::eigh(&self.op.mat);
        let cols: Vec<CVector> = vals
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.5)
            .map(|(j, _)| vecs.column(j).into_owned())
            .collect();
        linalg::columns_to_matrix(self.dim(), &cols)
    }

    /// `self ≤ other` in the positive-operator order.
    pub fn is_dominated_by(&self, other: &Projection, tol: f64) -> bool {
        (&other.op - &self.op).min_eigenvalue() >= -tol
    }
}

/// The matrix unit `e_{i,j}` with 1-based indices, matching the usual
/// notation.
pub fn matrix_unit(alg: TracialAlgebra, i: usize, j: usize) -> Result<Operator> {
    let d = alg.dim;
    if i == 0 || j == 0 || i > d || j > d {
        return Err(Error::IndexOutOfRange { i, j, dim: d });
    }
    Ok(Operator::from_fn(alg, |r, s| {
        if r + 1 == i && s + 1 == j {
            ONE
        } else {
            ZERO
        }
    }))
}

/// Trace of `a` under the convention of `alg`.
pub fn trace(alg: &TracialAlgebra, a: &Operator) -> Result<C64> {
    if a.dim() != alg.dim {
        return Err(Error::DimensionMismatch {
            expected: alg.dim,
            found: a.dim(),
        });
    }
    Ok(a.mat.trace() * alg.unit_weight)
}

/// Kronecker product in the product algebra, with the default cap.
pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    tensor_with_cap(a, b, DEFAULT_DIM_CAP)
}

pub fn tensor_with_cap(a: &Operator, b: &Operator, cap: usize) -> Result<Operator> {
    let alg = a.alg.tensor(&b.alg, cap)?;
    Ok(Operator {
        alg,
        mat: a.mat.kronecker(&b.mat),
    })
}

/// Spectral projection of a Hermitian operator onto the closed interval
/// `[lo, hi]`. Eigenvalues within [`PROJECTION_TOL`] of an endpoint are
/// counted as inside.
pub fn spectral_projection(h: &Operator, lo: f64, hi: f64) -> Result<Projection> {
    let defect = h.hermitian_defect();
    if defect > PROJECTION_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let (vals, vecs) = linalg::eigh(&h.mat);
    let cols: Vec<CVector> = vals
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= lo - PROJECTION_TOL && l <= hi + PROJECTION_TOL)
        .map(|(j, _)| vecs.column(j).into_owned())
        .collect();
    Ok(Projection::from_orthonormal(h.alg, &cols))
}

/// `e1 ∧ e2`: the projection onto `range(e1) ∩ range(e2)`.
///
/// Vectors `V y` in the range of `e1` lie in the range of `e2` iff
/// `y* V*(1 - e2)V y = 0`, so the meet is spanned by `V` times the null
/// space of the compressed complement.
pub fn projection_meet(e1: &Projection, e2: &Projection) -> Result<Projection> {
    if e1.dim() != e2.dim() {
        return Err(Error::DimensionMismatch {
            expected: e1.dim(),
            found: e2.dim(),
        });
    }
    let alg = e1.op.alg;
    let v = e1.range_frame();
    if v.ncols() == 0 {
        return Ok(Projection::zero(alg));
    }
    let comp = CMatrix::identity(alg.dim, alg.dim) - e2.matrix();
    let compressed = v.adjoint() * comp * &v;
    let (vals, vecs) = linalg::eigh(&compressed);
    let cols: Vec<CVector> = vals
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= PROJECTION_TOL)
        .map(|(j, _)| &v * vecs.column(j))
        .collect();
    Projection::from_columns(alg, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(alg: TracialAlgebra, rows: &[&[f64]]) -> Operator {
        Operator::from_fn(alg, |i, j| c(rows[i][j]))
    }

    #[test]
    fn matrix_units_small_cases() {
        let alg = TracialAlgebra::normalized(2);
        assert_eq!(matrix_unit(alg, 1, 1).unwrap(), op(alg, &[&[1.0, 0.0], &[0.0, 0.0]]));
        assert_eq!(matrix_unit(alg, 1, 2).unwrap(), op(alg, &[&[0.0, 1.0], &[0.0, 0.0]]));
        assert!(matches!(matrix_unit(alg, 3, 1), Err(Error::IndexOutOfRange { .. })));
        assert!(matrix_unit(alg, 0, 1).is_err());
    }

    #[test]
    fn matrix_unit_multiplication_table() {
        let alg = TracialAlgebra::normalized(3);
        for i in 1..=3 {
            for j in 1..=3 {
                for k in 1..=3 {
                    for l in 1..=3 {
                        let prod = &matrix_unit(alg, i, j).unwrap() * &matrix_unit(alg, k, l).unwrap();
                        let expected = if j == k {
                            matrix_unit(alg, i, l).unwrap()
                        } else {
                            Operator::zero(alg)
                        };
                        assert_eq!(prod, expected);
                    }
                }
            }
        }
    }

    #[test]
    fn trace_conventions() {
        let n = 7;
        let norm = TracialAlgebra::normalized(n);
        let un = TracialAlgebra::unnormalized(n);
        assert_eq!(trace(&norm, &Operator::identity(norm)).unwrap(), ONE);
        assert_eq!(trace(&un, &Operator::identity(un)).unwrap(), c(7.0));
        let alg4 = TracialAlgebra::normalized(4);
        let ones = Operator::from_fn(alg4, |_, _| ONE);
        assert!((trace(&alg4, &ones).unwrap() - ONE).norm() < 1e-15);
        assert!(matches!(
            trace(&alg4, &Operator::identity(norm)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(norm.trace_mode(), Some(TraceMode::Normalized));
        assert_eq!(un.trace_mode(), Some(TraceMode::Unnormalized));
    }

    #[test]
    fn tensor_of_identities_and_cap() {
        let a = Operator::identity(TracialAlgebra::normalized(2));
        let b = Operator::identity(TracialAlgebra::normalized(3));
        let ab = tensor(&a, &b).unwrap();
        assert_eq!(ab, Operator::identity(TracialAlgebra::normalized(6)));
        assert!(matches!(
            tensor_with_cap(&a, &b, 5),
            Err(Error::DimensionCap { dim: 6, cap: 5 })
        ));
        let mixed = tensor(
            &Operator::identity(TracialAlgebra::normalized(4)),
            &Operator::identity(TracialAlgebra::unnormalized(4)),
        )
        .unwrap();
        assert_eq!(mixed.algebra().trace_mode(), None);
        assert!((mixed.trace() - c(4.0)).norm() < 1e-12);
    }

    #[test]
    fn spectral_projection_diagonal_cases() {
        let alg = TracialAlgebra::normalized(3);
        let h = Operator::diagonal(alg, &[0.5, 2.0, 3.0]).unwrap();
        let e = spectral_projection(&h, 0.0, 1.0).unwrap();
        assert!(
            e.operator()
                .max_abs_diff(&Operator::diagonal(alg, &[1.0, 0.0, 0.0]).unwrap())
                < 1e-12
        );
        let all = spectral_projection(&h, -10.0, 10.0).unwrap();
        assert!(all.operator().max_abs_diff(&Operator::identity(alg)) < 1e-12);
        // closed endpoints
        let edge = spectral_projection(&h, 2.0, 3.0).unwrap();
        assert_eq!(edge.rank(), 2);
        let bad = Operator::from_fn(alg, |i, j| if i == 0 && j == 1 { ONE } else { ZERO });
        assert!(matches!(
            spectral_projection(&bad, 0.0, 1.0),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn meet_diagonal_case() {
        let alg = TracialAlgebra::normalized(3);
        let e1 = Projection::diagonal(alg, &[true, true, false]).unwrap();
        let e2 = Projection::diagonal(alg, &[false, true, true]).unwrap();
        let m = projection_meet(&e1, &e2).unwrap();
        assert_eq!(m.rank(), 1);
        assert!(
            m.operator()
                .max_abs_diff(&Operator::diagonal(alg, &[0.0, 1.0, 0.0]).unwrap())
                < 1e-12
        );
        let same = projection_meet(&e1, &e1).unwrap();
        assert!(same.operator().max_abs_diff(e1.operator()) < 1e-12);
        let other = Projection::identity(TracialAlgebra::normalized(4));
        assert!(projection_meet(&e1, &other).is_err());
    }

    #[test]
    fn projection_validation() {
        let alg = TracialAlgebra::normalized(2);
        assert!(Projection::new(Operator::diagonal(alg, &[1.0, 0.5]).unwrap()).is_err());
        let ok = Projection::new(Operator::diagonal(alg, &[1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(ok.rank(), 1);
        assert!((ok.normalized_corank() - ok.complement().operator().trace().re).abs() < 1e-15);
        let rounded = Projection::round(&Operator::diagonal(alg, &[0.9999999, 1e-7]).unwrap());
        assert!(rounded.operator().max_abs_diff(ok.operator()) < 1e-14);
    }
}
