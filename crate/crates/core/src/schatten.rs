//! Schatten (noncommutative `L_p`) norms and quasi-norms, `0 < p ≤ ∞`.
//!
//! For a tracial algebra whose rank-one projections have trace `w`,
//! `‖A‖_p = (w Σ_k σ_k(A)^p)^{1/p}` and `‖A‖_∞ = σ_1(A)`.

use serde::{Deserialize, Serialize};

use crate::algebra::{Operator, TracialAlgebra};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

/// Relative cut-off below which singular values are reported as zero.
pub const SINGULAR_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PExponent {
    Finite(f64),
    Infinity,
}

impl PExponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p <= 0.0 {
            Err(Error::InvalidExponent(p))
        } else if p.is_infinite() {
            Ok(PExponent::Infinity)
        } else {
            Ok(PExponent::Finite(p))
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            PExponent::Finite(p) => p,
            PExponent::Infinity => f64::INFINITY,
        }
    }

    /// `1/p`, zero at infinity.
    pub fn reciprocal(&self) -> f64 {
        match *self {
            PExponent::Finite(p) => 1.0 / p,
            PExponent::Infinity => 0.0,
        }
    }

    /// `p < 1`: only the p-triangle inequality holds.
    pub fn is_quasi_norm(&self) -> bool {
        self.value() < 1.0
    }

    /// `p < 1/2`, the range where the chain constants are defined.
    pub fn is_chain_admissible(&self) -> bool {
        self.value() < 0.5
    }
}

// Singular values come from a direct SVD: going through the Gram matrix
// leaves zero singular values at ~sqrt(eps)·σ_1, which p ≤ 1 amplifies.
pub(crate) fn singular_values_of(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let top = s.first().copied().unwrap_or(0.0);
    for v in s.iter_mut() {
        if *v < SINGULAR_CUTOFF * top {
            *v = 0.0;
        }
    }
    s
}

/// Singular values in descending order; values below `1e-12 · σ_1` are
/// reported as exactly zero.
pub fn singular_values(a: &Operator) -> Vec<f64> {
    singular_values_of(a.matrix())
}

/// Operator norm `σ_1(A)`.
pub fn op_norm(a: &Operator) -> f64 {
    op_norm_of(a.matrix())
}

pub(crate) fn op_norm_of(m: &CMatrix) -> f64 {
    let gram = m.adjoint() * m;
    linalg::eigvalsh(&gram).last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

fn weighted_norm(sv: &[f64], weight: f64, p: PExponent) -> f64 {
    let top = sv.first().copied().unwrap_or(0.0);
    match p {
        PExponent::Infinity => top,
        PExponent::Finite(p) => {
            if top == 0.0 {
                return 0.0;
            }
            // factor out σ_1 so huge p cannot overflow
            let s: f64 = sv.iter().filter(|&&x| x > 0.0).map(|&x| (x / top).powf(p)).sum();
            top * (weight * s).powf(1.0 / p)
        }
    }
}

/// `‖A‖_p` under the trace of `alg`.
pub fn lp_norm(alg: &TracialAlgebra, a: &Operator, p: PExponent) -> f64 {
    weighted_norm(&singular_values(a), alg.unit_weight(), p)
}

/// `‖A‖_p` under the operator's own algebra.
pub fn norm(a: &Operator, p: PExponent) -> f64 {
    lp_norm(a.algebra(), a, p)
}

/// `‖A‖_p^p = w Σ σ_k^p` for finite `p`; zero singular values contribute 0.
pub fn lp_norm_pow(alg: &TracialAlgebra, a: &Operator, p: f64) -> f64 {
    alg.unit_weight()
        * singular_values(a)
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x.powf(p))
            .sum::<f64>()
}

/// Hölder's inequality `‖AB‖_p ≤ ‖A‖_r ‖B‖_q` for `1/p = 1/r + 1/q`.
///
/// Returns `(‖AB‖_p, ‖A‖_r ‖B‖_q)`; fails if the exponents do not match or
/// if the inequality is violated beyond a relative `1e-9`.
pub fn holder_split_bound(a: &Operator, b: &Operator, p: PExponent, r: PExponent, q: PExponent) -> Result<(f64, f64)> {
    if (p.reciprocal() - r.reciprocal() - q.reciprocal()).abs() > 1e-12 {
        return Err(Error::ExponentMismatch {
            p: p.value(),
            r: r.value(),
            q: q.value(),
        });
    }
    let lhs = norm(&(a * b), p);
    let rhs = norm(a, r) * norm(b, q);
    if lhs > rhs * (1.0 + 1e-9) + 1e-300 {
        return Err(Error::InequalityViolated {
            what: "Hölder".into(),
            lhs,
            rhs,
        });
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Operator, Projection, TracialAlgebra};
    use crate::linalg::{random_gaussian, ONE, ZERO};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64) -> PExponent {
        PExponent::new(x).unwrap()
    }

    #[test]
    fn exponent_flags() {
        assert!(PExponent::new(0.0).is_err());
        assert!(PExponent::new(-1.0).is_err());
        assert_eq!(PExponent::new(f64::INFINITY).unwrap(), PExponent::Infinity);
        assert!(p(0.75).is_quasi_norm() && !p(0.75).is_chain_admissible());
        assert!(p(0.25).is_chain_admissible());
        assert!(!p(1.0).is_quasi_norm());
    }

    #[test]
    fn singular_values_of_reference_matrices() {
        let alg = TracialAlgebra::normalized(3);
        assert_eq!(singular_values(&Operator::identity(alg)), vec![1.0, 1.0, 1.0]);

        let alg4 = TracialAlgebra::normalized(4);
        let ones = Operator::from_fn(alg4, |_, _| ONE);
        let s = singular_values(&ones);
        assert!((s[0] - 4.0).abs() < 1e-12);
        assert_eq!(&s[1..], &[0.0, 0.0, 0.0]);

        let alg2 = TracialAlgebra::unnormalized(2);
        let t2 = Operator::from_fn(alg2, |i, j| if i <= j { ONE } else { ZERO });
        let s = singular_values(&t2);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s[0] - phi).abs() < 1e-12);
        assert!((s[1] - 1.0 / phi).abs() < 1e-12);
    }

    #[test]
    fn identity_norms_under_both_traces() {
        for d in [1usize, 3, 5] {
            for &q in &[0.3, 1.0, 2.5] {
                let n = TracialAlgebra::normalized(d);
                let u = TracialAlgebra::unnormalized(d);
                assert!((norm(&Operator::identity(n), p(q)) - 1.0).abs() < 1e-12);
                let expected = (d as f64).powf(1.0 / q);
                assert!((norm(&Operator::identity(u), p(q)) - expected).abs() < 1e-12 * expected);
            }
        }
    }

    #[test]
    fn zero_singular_values_do_not_produce_nan() {
        let alg = TracialAlgebra::normalized(4);
        let ones = Operator::from_fn(alg, |_, _| ONE);
        let v = norm(&ones, p(0.2));
        assert!(v.is_finite());
        // rank one with σ = 4: (4^p / 4)^{1/p} = 4^{1 - 1/p}
        assert!((v - 4f64.powf(1.0 - 5.0)).abs() < 1e-15);
        assert_eq!(norm(&Operator::zero(alg), p(0.2)), 0.0);
    }

    #[test]
    fn holder_identity_and_random() {
        let alg = TracialAlgebra::normalized(4);
        let id = Operator::identity(alg);
        let (l, r) = holder_split_bound(&id, &id, p(1.0), p(2.0), p(2.0)).unwrap();
        assert!((l - 1.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Operator::new(alg, random_gaussian(4, 4, &mut rng)).unwrap();
        let b = Operator::new(alg, random_gaussian(4, 4, &mut rng)).unwrap();
        let (l, r) = holder_split_bound(&a, &b, p(1.0), p(2.0), p(2.0)).unwrap();
        assert!(l <= r);
        assert!(matches!(
            holder_split_bound(&a, &b, p(1.0), p(2.0), p(3.0)),
            Err(Error::ExponentMismatch { .. })
        ));
    }

    #[test]
    fn holder_with_small_projection() {
        // ‖eB‖_p ≤ τ(e)^{1/r} ‖B‖_q with τ(e) = 1/4, d = 8
        let alg = TracialAlgebra::normalized(8);
        let keep: Vec<bool> = (0..8).map(|i| i < 2).collect();
        let e = Projection::diagonal(alg, &keep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Operator::new(alg, random_gaussian(8, 8, &mut rng)).unwrap();
        let (pp, qq) = (0.4, 0.8);
        let rr = 1.0 / (1.0 / pp - 1.0 / qq);
        let (lhs, rhs) = holder_split_bound(e.operator(), &b, p(pp), p(rr), p(qq)).unwrap();
        let t: f64 = 0.25;
        assert!((rhs - t.powf(1.0 / rr) * norm(&b, p(qq))).abs() < 1e-12 * rhs);
        assert!(lhs <= rhs);
    }

    #[test]
    fn lp_norm_pow_matches_norm() {
        let alg = TracialAlgebra::normalized(3);
        let a = Operator::diagonal(alg, &[3.0, 1.0, 0.0]).unwrap();
        let v = lp_norm_pow(&alg, &a, 0.5);
        assert!((v - (3f64.sqrt() + 1.0) / 3.0).abs() < 1e-15);
        assert!((norm(&a, p(0.5)).powf(0.5) - v).abs() < 1e-14);
    }
}
