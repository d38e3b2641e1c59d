//! Dense complex kernels shared by the algebraic modules.
//!
//! Hermitian eigendecomposition is the only spectral primitive: singular
//! values, absolute values, spectral projections and meets are all derived
//! from it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest entrywise modulus of `a - a*`.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// The input is symmetrized first so round-off in the lower triangle
/// cannot leak into the result.
pub fn eigh(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Rebuild `V diag(f(λ)) V*` from an eigendecomposition.
pub fn spectral_apply(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (j, &lam) in values.iter().enumerate() {
        let w = f(lam);
        for i in 0..n {
            scaled[(i, j)] *= w;
        }
    }
    &scaled * vectors.adjoint()
}

/// `(A*A)^{1/2}`.
pub fn abs(a: &CMatrix) -> CMatrix {
    let (vals, vecs) = eigh(&(a.adjoint() * a));
    spectral_apply(&vals, &vecs, |l| l.max(0.0).sqrt())
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn random_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

pub fn random_real_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| c(rng.sample(StandardNormal)))
}

/// Haar-distributed unitary (QR of a Ginibre matrix with the phase fix).
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = random_gaussian(d, d, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Columns whose
/// residual falls below `tol` are dropped.
pub fn orthonormalize(cols: &[CVector], tol: f64) -> Vec<CVector> {
    let mut basis: Vec<CVector> = Vec::with_capacity(cols.len());
    for v in cols {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let coef = b.dotc(&w);
                w.axpy(-coef, b, ONE);
            }
        }
        let n = w.norm();
        if n > tol {
            basis.push(w.unscale(n));
        }
    }
    basis
}

pub fn columns_to_matrix(d: usize, cols: &[CVector]) -> CMatrix {
    let mut m = CMatrix::zeros(d, cols.len());
    for (j, v) in cols.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Largest eigenpair of a Hermitian operator given by its action, via
/// Lanczos with full re-orthogonalization. Returns `None` when the start
/// vector is annihilated.
///
/// The Ritz value is a lower bound on the true top eigenvalue.
pub fn lanczos_top(
    mut apply: impl FnMut(&CVector) -> CVector,
    start: &CVector,
    steps: usize,
) -> Option<(f64, CVector)> {
    let n0 = start.norm();
    if n0 == 0.0 || steps == 0 {
        return None;
    }
    let mut q: Vec<CVector> = vec![start.unscale(n0)];
    let mut alphas: Vec<f64> = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut scale = 0.0f64;
    for k in 0..steps {
        let mut w = apply(&q[k]);
        let a = q[k].dotc(&w).re;
        alphas.push(a);
        scale = scale.max(a.abs());
        for _ in 0..2 {
            for b in &q {
                let coef = b.dotc(&w);
                w.axpy(-coef, b, ONE);
            }
        }
        let beta = w.norm();
        scale = scale.max(beta);
        if k + 1 == steps || beta <= 1e-13 * scale.max(1e-300) {
            break;
        }
        betas.push(beta);
        q.push(w.unscale(beta));
    }
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (best, &theta) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let mut ritz = CVector::zeros(start.len());
    for (i, qi) in q.iter().take(m).enumerate() {
        ritz.axpy(c(eig.eigenvectors[(i, best)]), qi, ONE);
    }
    let rn = ritz.norm();
    if rn == 0.0 {
        return None;
    }
    Some((theta, ritz.unscale(rn)))
}
