//! The explicit objects behind the counterexample: `ξ_N`, `X_N`, the
//! martingale `𝔼_n(X_N) = Y_n + D_n`, the triangular matrices `T_n`, the
//! decomposition `A_N = B_N + C_N`, the chain of norm estimates with its
//! certified constants, and the truncated `𝒳_p` with the sign flip.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{Operator, Projection, TracialAlgebra, DEFAULT_DIM_CAP};
use crate::condexp::{big_cond_exp, factor_cond_exp, FactorFiltrationLevel, TruncatedBigAlgebra};
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, ONE, ZERO};
use crate::schatten::{self, PExponent};

/// Tolerance for membership and martingale checks.
pub const MARTINGALE_TOL: f64 = 1e-9;

fn require_positive(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::OutOfRange("N must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// `ξ_N = Σ_k e_{k,1}`: first column all ones, as an element of `(M_N, τ_N)`.
pub fn build_xi(n: usize) -> Result<Operator> {
    require_positive(n)?;
    Ok(Operator::from_fn(TracialAlgebra::normalized(n), |_, j| {
        if j == 0 {
            ONE
        } else {
            ZERO
        }
    }))
}

/// `X_N = ξ_N ξ_N*`, the all-ones matrix in `(M_N, τ_N)`.
pub fn build_xn(n: usize) -> Result<Operator> {
    require_positive(n)?;
    Ok(Operator::from_fn(TracialAlgebra::normalized(n), |_, _| ONE))
}

/// `X_{p,N} = N^{1/p−1} X_N`, normalized so that `‖X_{p,N}‖_p = 1`.
pub fn build_xpn(p: PExponent, n: usize) -> Result<Operator> {
    let x = build_xn(n)?;
    Ok(x.scale_real((n as f64).powf(p.reciprocal() - 1.0)))
}

/// `Y_n = Σ_{k,l ≤ n} e_{k,l}` inside `M_N`.
pub fn build_yn(big_n: usize, n: usize) -> Result<Operator> {
    FactorFiltrationLevel::new(big_n, n)?;
    Ok(Operator::from_fn(TracialAlgebra::normalized(big_n), |i, j| {
        if i < n && j < n {
            ONE
        } else {
            ZERO
        }
    }))
}

/// `D_n = Σ_{k > n} e_{k,k}` inside `M_N`.
pub fn build_dn(big_n: usize, n: usize) -> Result<Operator> {
    FactorFiltrationLevel::new(big_n, n)?;
    let diag: Vec<f64> = (0..big_n).map(|k| if k >= n { 1.0 } else { 0.0 }).collect();
    Operator::diagonal(TracialAlgebra::normalized(big_n), &diag)
}

/// `η_n = Σ_{k ≤ n} e_{k,1}` inside `M_N`.
pub fn build_eta(big_n: usize, n: usize) -> Result<Operator> {
    FactorFiltrationLevel::new(big_n, n)?;
    Ok(Operator::from_fn(TracialAlgebra::normalized(big_n), |i, j| {
        if j == 0 && i < n {
            ONE
        } else {
            ZERO
        }
    }))
}

/// Which conditional expectations a [`MartingaleSequence`] is adapted to.
#[derive(Debug, Clone, PartialEq)]
pub enum Filtration {
    /// `𝔼_n` on a single factor `M_N`.
    Factor { ambient: usize },
    /// `ℰ_n` on a truncated big algebra.
    Big(TruncatedBigAlgebra),
    /// A plain list of operators with no filtration attached.
    Unspecified,
}

#[derive(Debug, Clone)]
pub struct MartingaleSequence {
    ambient: TracialAlgebra,
    terms: Vec<Operator>,
    levels: Vec<usize>,
    filtration: Filtration,
}

impl MartingaleSequence {
    /// A sequence adapted to the factor filtration of `M_N`, with term `k`
    /// at level `levels[k]`. Adaptedness and the martingale property are
    /// checked.
    pub fn factor(ambient: usize, terms: Vec<Operator>, levels: Vec<usize>) -> Result<Self> {
        let seq = Self::assemble(
            TracialAlgebra::normalized(ambient),
            terms,
            levels,
            Filtration::Factor { ambient },
        )?;
        seq.check_adapted(MARTINGALE_TOL)?;
        seq.check_martingale(MARTINGALE_TOL)?;
        Ok(seq)
    }

    /// A sequence adapted to `ℰ_n` on a truncated big algebra.
    pub fn big(alg: TruncatedBigAlgebra, terms: Vec<Operator>, levels: Vec<usize>) -> Result<Self> {
        let seq = Self::assemble(alg.algebra(), terms, levels, Filtration::Big(alg))?;
        seq.check_adapted(MARTINGALE_TOL)?;
        seq.check_martingale(MARTINGALE_TOL)?;
        Ok(seq)
    }

    /// `(ℰ_n x)_{n = 0..=top}` on a truncated big algebra.
    pub fn of_big(alg: TruncatedBigAlgebra, x: &Operator) -> Result<Self> {
        let levels: Vec<usize> = (0..=alg.top_level()).collect();
        let terms = levels
            .iter()
            .map(|&n| big_cond_exp(&alg, n, x))
            .collect::<Result<Vec<_>>>()?;
        Self::big(alg, terms, levels)
    }

    /// Any finite list of operators in a common algebra; levels are the
    /// indices `1..=len`.
    pub fn from_terms(ambient: TracialAlgebra, terms: Vec<Operator>) -> Result<Self> {
        let levels = (1..=terms.len()).collect();
        Self::assemble(ambient, terms, levels, Filtration::Unspecified)
    }

    fn assemble(
        ambient: TracialAlgebra,
        terms: Vec<Operator>,
        levels: Vec<usize>,
        filtration: Filtration,
    ) -> Result<Self> {
        if terms.len() != levels.len() {
            return Err(Error::DimensionMismatch {
                expected: terms.len(),
                found: levels.len(),
            });
        }
        if let Some(t) = terms.iter().find(|t| t.dim() != ambient.dim()) {
            return Err(Error::DimensionMismatch {
                expected: ambient.dim(),
                found: t.dim(),
            });
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::OutOfRange("levels must increase strictly".into()));
        }
        let terms = terms
            .into_iter()
            .map(|t| t.in_algebra(ambient))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ambient,
            terms,
            levels,
            filtration,
        })
    }

    pub fn ambient(&self) -> &TracialAlgebra {
        &self.ambient
    }

    pub fn terms(&self) -> &[Operator] {
        &self.terms
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn filtration(&self) -> &Filtration {
        &self.filtration
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The level-`n` conditional expectation of the attached filtration.
    pub fn cond_exp(&self, n: usize, x: &Operator) -> Result<Operator> {
        match &self.filtration {
            Filtration::Factor { ambient } => factor_cond_exp(&FactorFiltrationLevel::new(*ambient, n.max(1))?, x),
            Filtration::Big(alg) => big_cond_exp(alg, n, x),
            Filtration::Unspecified => Ok(x.clone()),
        }
    }

    /// Worst deviation `max_k ‖E_{n_k}(term_k) − term_k‖_max`.
    pub fn adaptedness_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (t, &n) in self.terms.iter().zip(&self.levels) {
            worst = worst.max(self.cond_exp(n, t)?.max_abs_diff(t));
        }
        Ok(worst)
    }

    /// Worst deviation `max_k ‖E_{n_k}(term_{k+1}) − term_k‖_max`.
    pub fn martingale_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for k in 0..self.terms.len().saturating_sub(1) {
            let down = self.cond_exp(self.levels[k], &self.terms[k + 1])?;
            worst = worst.max(down.max_abs_diff(&self.terms[k]));
        }
        Ok(worst)
    }

    pub fn check_adapted(&self, tol: f64) -> Result<()> {
        let d = self.adaptedness_defect()?;
        if d > tol {
            return Err(Error::InequalityViolated {
                what: "adaptedness".into(),
                lhs: d,
                rhs: tol,
            });
        }
        Ok(())
    }

    pub fn check_martingale(&self, tol: f64) -> Result<()> {
        let d = self.martingale_defect()?;
        if d > tol {
            return Err(Error::InequalityViolated {
                what: "martingale property".into(),
                lhs: d,
                rhs: tol,
            });
        }
        Ok(())
    }
}

/// `(𝔼_n X_N)_{n=1..N}` built from the closed form `Y_n + D_n` and
/// cross-checked against the factor conditional expectation.
pub fn martingale_of_xn(n: usize) -> Result<MartingaleSequence> {
    let x = build_xn(n)?;
    let mut terms = Vec::with_capacity(n);
    for k in 1..=n {
        let closed = &build_yn(n, k)? + &build_dn(n, k)?;
        let direct = factor_cond_exp(&FactorFiltrationLevel::new(n, k)?, &x)?;
        let dev = closed.max_abs_diff(&direct);
        if dev > MARTINGALE_TOL {
            return Err(Error::InequalityViolated {
                what: format!("closed form of E_{k}(X_{n})"),
                lhs: dev,
                rhs: MARTINGALE_TOL,
            });
        }
        terms.push(closed);
    }
    MartingaleSequence::factor(n, terms, (1..=n).collect())
}

/// `T_n = Σ_{i ≤ j} e_{i,j}` in `(M_n, tr_n)`.
pub fn build_tn(n: usize) -> Result<Operator> {
    require_positive(n)?;
    Ok(Operator::from_fn(TracialAlgebra::unnormalized(n), |i, j| {
        if i <= j {
            ONE
        } else {
            ZERO
        }
    }))
}

/// Relative slack used when asserting the analytic norm bounds.
pub const BOUND_RTOL: f64 = 1e-9;

fn le(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + BOUND_RTOL * rhs.abs().max(lhs.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnBoundsReport {
    pub n: usize,
    pub p: f64,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub holds: bool,
}

/// `(n/2)^{1/p} ≤ ‖T_n‖_p ≤ (2n/(1−2^{p−1}))^{1/p}` under the unnormalized
/// trace, for `0 < p < 1`.
pub fn tn_bounds_check(n: usize, p: f64) -> Result<TnBoundsReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidExponent(p));
    }
    let t = build_tn(n)?;
    let value = schatten::norm(&t, PExponent::new(p)?);
    let nf = n as f64;
    let lower = (nf / 2.0).powf(1.0 / p);
    let upper = (2.0 * nf / (1.0 - 2f64.powf(p - 1.0))).powf(1.0 / p);
    Ok(TnBoundsReport {
        n,
        p,
        lower,
        value,
        upper,
        holds: le(lower, value) && le(value, upper),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VkReport {
    pub p: f64,
    /// `v_k = 2^{−k} ‖T_{2^k}‖_p^p` for `k = 0..=kmax`.
    pub v: Vec<f64>,
    /// `v_{k+1} ≤ v_k + 2^{k(p−1)−1}` for each consecutive pair.
    pub recursion: Vec<bool>,
    pub bound: f64,
    pub holds: bool,
}

/// The dyadic recursion behind the upper bound on `‖T_n‖_p`.
pub fn vk_recursion_check(kmax: usize, p: f64) -> Result<VkReport> {
    vk_recursion_check_with_cap(kmax, p, DEFAULT_DIM_CAP)
}

pub fn vk_recursion_check_with_cap(kmax: usize, p: f64, cap: usize) -> Result<VkReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidExponent(p));
    }
    let dim = 1usize
        .checked_shl(kmax as u32)
        .filter(|&d| d <= cap)
        .ok_or(Error::DimensionCap {
            dim: 1usize.checked_shl(kmax as u32).unwrap_or(usize::MAX),
            cap,
        })?;
    debug_assert!(dim >= 1);
    let v: Vec<f64> = (0..=kmax)
        .map(|k| {
            let t = build_tn(1 << k)?;
            Ok(schatten::lp_norm_pow(t.algebra(), &t, p) / (1u64 << k) as f64)
        })
        .collect::<Result<_>>()?;
    let recursion: Vec<bool> = v
        .windows(2)
        .enumerate()
        .map(|(k, w)| le(w[1], w[0] + 2f64.powf(k as f64 * (p - 1.0) - 1.0)))
        .collect();
    let bound = 1.0 / (1.0 - 2f64.powf(p - 1.0));
    let holds = (v[0] - 1.0).abs() < BOUND_RTOL && recursion.iter().all(|&b| b) && v.iter().all(|&x| le(x, bound));
    Ok(VkReport {
        p,
        v,
        recursion,
        bound,
        holds,
    })
}

/// `(M_N, τ_N) ⊗ (M_N, tr_N)`: rank-one projections have trace `1/N`.
pub fn chain_algebra(n: usize) -> Result<TracialAlgebra> {
    TracialAlgebra::normalized(n).tensor(&TracialAlgebra::unnormalized(n), DEFAULT_DIM_CAP)
}

fn first_row_unit(n: usize, col: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(0, col)] = ONE;
    m
}

fn assemble_chain(n: usize, mut slot: impl FnMut(usize) -> Result<CMatrix>) -> Result<Operator> {
    let alg = chain_algebra(n)?;
    let mut total = CMatrix::zeros(n * n, n * n);
    for k in 1..=n {
        total += slot(k)?.kronecker(&first_row_unit(n, k - 1));
    }
    Operator::new(alg, total)
}

/// `A_N = Σ_n n η_n ⊗ e_{1,n}`.
pub fn build_a(n: usize) -> Result<Operator> {
    require_positive(n)?;
    assemble_chain(n, |k| Ok(build_eta(n, k)?.into_matrix() * c(k as f64)))
}

/// `sup_n ‖Y_n e‖ / 2`, the smallest admissible `m` for [`build_b`].
pub fn half_sup_norm(n: usize, e: &Projection) -> Result<f64> {
    if e.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: e.dim(),
        });
    }
    let mut worst = 0.0f64;
    for k in 1..=n {
        let y = build_yn(n, k)?;
        worst = worst.max(schatten::op_norm_of(&(y.matrix() * e.matrix())));
    }
    Ok(worst / 2.0)
}

/// `B_N = 2m (e ⊗ e_{1,1}) (Σ_n U_n η_n ⊗ e_{1,n})` with the contractions
/// `U_n = e Y_n / (2m)`.
pub fn build_b(n: usize, e: &Projection, m: f64) -> Result<Operator> {
    if e.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: e.dim(),
        });
    }
    let em = e.matrix();
    let mut us = Vec::with_capacity(n);
    for k in 1..=n {
        let ey = em * build_yn(n, k)?.matrix();
        let u = if m > 0.0 {
            ey / c(2.0 * m)
        } else if schatten::op_norm_of(&ey) == 0.0 {
            ey
        } else {
            return Err(Error::ContractionViolation {
                n: k,
                norm: f64::INFINITY,
            });
        };
        let norm = schatten::op_norm_of(&u);
        if norm > 1.0 + 1e-9 {
            return Err(Error::ContractionViolation { n: k, norm });
        }
        us.push(u);
    }
    let sum = assemble_chain(n, |k| Ok(&us[k - 1] * build_eta(n, k)?.matrix()))?;
    let left = em.kronecker(&unit_11(n)) * c(2.0 * m);
    Operator::new(*sum.algebra(), left * sum.matrix())
}

fn unit_11(n: usize) -> CMatrix {
    first_row_unit(n, 0)
}

/// `C_N = ((1 − e) ⊗ e_{1,1}) A_N`.
pub fn build_c(n: usize, e: &Projection) -> Result<Operator> {
    let a = build_a(n)?;
    let comp = e.complement();
    let left = comp.matrix().kronecker(&unit_11(n));
    Operator::new(*a.algebra(), left * a.matrix())
}

/// The constants `c_p`, `C_p`, `t′` and `δ` for `0 < p < 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConstants {
    pub p: f64,
    /// `2^{−(1+2/p)}`, the lower constant for `‖A_N‖_p`.
    pub c_p: f64,
    /// `(2/(1−2^{2p−1}))^{1/(2p)}`, the upper constant for `‖C_N‖_p`.
    pub big_c_p: f64,
    /// `(c_p^p / (2 C_p^p))²`.
    pub t_prime: f64,
    /// `(c_p^p / 2)^{1/p} / 2`.
    pub delta: f64,
}

impl ChainConstants {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::InvalidExponent(p));
        }
        let c_p = 2f64.powf(-(1.0 + 2.0 / p));
        let big_c_p = (2.0 / (1.0 - 2f64.powf(2.0 * p - 1.0))).powf(1.0 / (2.0 * p));
        let t_prime = (c_p.powf(p) / (2.0 * big_c_p.powf(p))).powi(2);
        let delta = (c_p.powf(p) / 2.0).powf(1.0 / p) / 2.0;
        Ok(Self {
            p,
            c_p,
            big_c_p,
            t_prime,
            delta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    pub t_prime: f64,
    pub delta: f64,
    /// `t ≤ t′`: only then is `δ√N` a certified lower bound.
    pub applies: bool,
}

pub fn certified_lower_bound(p: f64, t: f64) -> Result<CertifiedBound> {
    let k = ChainConstants::new(p)?;
    Ok(CertifiedBound {
        t_prime: k.t_prime,
        delta: k.delta,
        applies: t <= k.t_prime,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub n: usize,
    pub p: f64,
    pub t: f64,
    pub corank: f64,
    /// `sup_n ‖Y_n e‖ / 2`.
    pub m: f64,
    pub norm_a: f64,
    pub norm_b: f64,
    pub norm_c: f64,
    /// `max |A − B − C|` entrywise.
    pub decomposition_error: f64,
    /// `‖A‖_p ≥ c_p N`.
    pub lower_a: f64,
    pub holds_a: bool,
    /// `‖B‖_p ≤ 2m √N`.
    pub upper_b: f64,
    pub holds_b: bool,
    /// `‖C‖_p ≤ C_p t^{1/(2p)} N`.
    pub upper_c: f64,
    pub holds_c: bool,
    /// `‖A‖_p^p ≤ ‖B‖_p^p + ‖C‖_p^p`.
    pub holds_triangle: bool,
    pub holds_decomposition: bool,
    pub delta: f64,
    pub t_prime: f64,
    /// `t ≤ t′`.
    pub implied_applies: bool,
    /// `m ≥ δ √N`; only meaningful when `implied_applies`.
    pub holds_implied: bool,
}

impl ChainReport {
    /// All assertions, with the implied bound counted only when it applies.
    pub fn passed(&self) -> bool {
        self.holds_a
            && self.holds_b
            && self.holds_c
            && self.holds_triangle
            && self.holds_decomposition
            && (!self.implied_applies || self.holds_implied)
    }
}

/// Verify the chain of estimates for the projection `e` with corank budget
/// `t`, using `m = sup_n ‖Y_n e‖ / 2`.
pub fn chain_verify(n: usize, p: f64, t: f64, e: &Projection) -> Result<ChainReport> {
    let k = ChainConstants::new(p)?;
    if e.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: e.dim(),
        });
    }
    let corank = e.corank() as f64 / n as f64;
    if corank > t + 1e-12 {
        return Err(Error::CorankViolation { corank, t });
    }
    let m = half_sup_norm(n, e)?;
    let a = build_a(n)?;
    let b = build_b(n, e, m)?;
    let cc = build_c(n, e)?;
    let pe = PExponent::new(p)?;
    let (norm_a, norm_b, norm_c) = (schatten::norm(&a, pe), schatten::norm(&b, pe), schatten::norm(&cc, pe));
    let decomposition_error = a.max_abs_diff(&(&b + &cc));
    let nf = n as f64;
    let lower_a = k.c_p * nf;
    let upper_b = 2.0 * m * nf.sqrt();
    let upper_c = k.big_c_p * t.powf(1.0 / (2.0 * p)) * nf;
    let holds_triangle = le(norm_a.powf(p), norm_b.powf(p) + norm_c.powf(p));
    let implied_applies = t <= k.t_prime;
    Ok(ChainReport {
        n,
        p,
        t,
        corank,
        m,
        norm_a,
        norm_b,
        norm_c,
        decomposition_error,
        lower_a,
        holds_a: le(lower_a, norm_a),
        upper_b,
        holds_b: le(norm_b, upper_b),
        upper_c,
        holds_c: le(norm_c, upper_c),
        holds_triangle,
        holds_decomposition: decomposition_error <= 1e-9,
        delta: k.delta,
        t_prime: k.t_prime,
        implied_applies,
        holds_implied: le(k.delta * nf.sqrt(), m),
    })
}

fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

/// `Σ_{N ∈ terms} ε_{N!} N^{−2} X_{p,N!}` on a truncation that retains the
/// sign coordinates `N!` and factors of side `N!`.
pub fn build_truncated_xp(alg: &TruncatedBigAlgebra, p: PExponent, terms: &[usize]) -> Result<Operator> {
    let mut total = Operator::zero(alg.algebra());
    for &n in terms {
        require_positive(n)?;
        let f = factorial(n).ok_or(Error::MissingFactor(usize::MAX))?;
        let slot = alg.factor_slot(f).ok_or(Error::MissingFactor(f))?;
        let eps = alg.epsilon(f)?;
        let x = alg.embed_factor(slot, build_xpn(p, f)?.matrix())?;
        total = total + (&eps * &x).scale_real(1.0 / (n * n) as f64);
    }
    Ok(total)
}

/// `π_N`: conjugation by the permutation flipping sign coordinate `N`.
pub fn sign_flip(alg: &TruncatedBigAlgebra, n: usize, x: &Operator) -> Result<Operator> {
    if n == 0 || n > alg.sign_count() {
        return Err(Error::MissingSign(n));
    }
    if x.dim() != alg.dim() {
        return Err(Error::DimensionMismatch {
            expected: alg.dim(),
            found: x.dim(),
        });
    }
    let inner = alg.dim() / alg.sign_dim();
    let flip = 1usize << (alg.sign_count() - n);
    let perm = |r: usize| ((r / inner) ^ flip) * inner + r % inner;
    let m = x.matrix();
    Ok(Operator::from_fn(*x.algebra(), |i, j| m[(perm(i), perm(j))]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub n: usize,
    /// The `N` values whose factorials are present in the truncation.
    pub terms: Vec<usize>,
    /// `max |(2/N²) X_{p,N!} − ε_{N!}(𝒳 − π_{N!} 𝒳)|`.
    pub identity_error: f64,
    /// `max_n |π ℰ_n Z − ℰ_n π Z|` over `𝒳` and seeded random elements.
    pub commutation_error: f64,
    pub passed: bool,
}

/// Check `(2/N²) X_{p,N!} = ε_{N!}(𝒳_p − π_{N!}(𝒳_p))` on the partial sum
/// of every admissible term, and that `π_{N!}` commutes with each `ℰ_n`.
pub fn flip_identity_check(alg: &TruncatedBigAlgebra, p: PExponent, n: usize) -> Result<FlipReport> {
    let f = factorial(n).ok_or(Error::MissingFactor(usize::MAX))?;
    let slot = alg.factor_slot(f).ok_or(Error::MissingFactor(f))?;
    if f > alg.sign_count() {
        return Err(Error::MissingSign(f));
    }
    let terms: Vec<usize> = (1..)
        .map_while(|k| factorial(k).filter(|&fk| fk <= alg.sign_count()).map(|fk| (k, fk)))
        .filter(|&(_, fk)| alg.factor_slot(fk).is_some())
        .map(|(k, _)| k)
        .collect();
    let x = build_truncated_xp(alg, p, &terms)?;
    let lhs = alg
        .embed_factor(slot, build_xpn(p, f)?.matrix())?
        .scale_real(2.0 / (n * n) as f64);
    let flipped = sign_flip(alg, f, &x)?;
    let rhs = &alg.epsilon(f)? * &(&x - &flipped);
    let identity_error = lhs.max_abs_diff(&rhs);

    let mut rng = ChaCha8Rng::seed_from_u64(f as u64);
    let mut samples = vec![x];
    samples.extend((0..4).map(|_| alg.random_element(&mut rng)));
    let mut commutation_error = 0.0f64;
    for z in &samples {
        for level in 0..=alg.top_level() {
            let a = sign_flip(alg, f, &big_cond_exp(alg, level, z)?)?;
            let b = big_cond_exp(alg, level, &sign_flip(alg, f, z)?)?;
            commutation_error = commutation_error.max(a.max_abs_diff(&b));
        }
    }
    Ok(FlipReport {
        n,
        terms,
        identity_error,
        commutation_error,
        passed: identity_error <= 1e-10 && commutation_error <= 1e-10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::matrix_unit;

    fn pe(x: f64) -> PExponent {
        PExponent::new(x).unwrap()
    }

    #[test]
    fn basic_objects() {
        let xi = build_xi(3).unwrap();
        assert!((0..3).all(|i| xi.matrix()[(i, 0)] == ONE && xi.matrix()[(i, 1)] == ZERO));
        let x2 = build_xn(2).unwrap();
        assert!(x2.matrix().iter().all(|&z| z == ONE));
        let xx = &xi * &xi.adjoint();
        assert!(xx.max_abs_diff(&build_xn(3).unwrap()) == 0.0);
        let v = schatten::norm(&build_xn(8).unwrap(), pe(1.0));
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        assert!((schatten::norm(&build_xpn(pe(1.2), 6).unwrap(), pe(1.2)) - 1.0).abs() < 1e-12);
        assert!(build_xn(0).is_err());
    }

    #[test]
    fn martingale_of_x4() {
        let seq = martingale_of_xn(4).unwrap();
        let e2 = seq.terms()[1].matrix();
        let expected = [
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(e2[(i, j)], c(expected[i][j]));
            }
        }
        assert_eq!(seq.terms()[3].max_abs_diff(&build_xn(4).unwrap()), 0.0);
    }

    #[test]
    fn martingale_norms_equal_level() {
        let seq = martingale_of_xn(6).unwrap();
        for (k, t) in seq.terms().iter().enumerate() {
            assert!((schatten::op_norm(t) - (k + 1) as f64).abs() < 1e-10);
            let y = build_yn(6, k + 1).unwrap();
            let eta = build_eta(6, k + 1).unwrap();
            assert!((&y * &eta).max_abs_diff(&eta.scale_real((k + 1) as f64)) < 1e-14);
        }
    }

    #[test]
    fn non_martingale_rejected() {
        let terms = vec![build_xn(3).unwrap(), build_xn(3).unwrap()];
        assert!(MartingaleSequence::factor(3, terms, vec![1, 3]).is_err());
    }

    #[test]
    fn t2_closed_form_and_bounds() {
        let r = tn_bounds_check(2, 0.5).unwrap();
        assert!((r.value - (2.0 + 5f64.sqrt())).abs() < 1e-9);
        assert!(r.holds && (r.lower - 1.0).abs() < 1e-12);
        assert!((r.upper - 186.51).abs() < 0.01);
        let r1 = tn_bounds_check(1, 0.3).unwrap();
        assert!((r1.value - 1.0).abs() < 1e-12 && r1.holds);
        assert!(tn_bounds_check(4, 1.0).is_err());
        assert!(tn_bounds_check(4, 0.0).is_err());
    }

    #[test]
    fn vk_recursion() {
        for p in [0.25, 0.49] {
            let r = vk_recursion_check(5, p).unwrap();
            assert_eq!(r.v[0], 1.0);
            assert!(r.holds, "{r:?}");
        }
        assert!(vk_recursion_check(3, 1.5).is_err());
    }

    #[test]
    fn a_equals_b_plus_c_trivial_and_corner() {
        let alg = TracialAlgebra::normalized(2);
        let id = Projection::identity(alg);
        let a = build_a(2).unwrap();
        let b = build_b(2, &id, 1.0).unwrap();
        let cc = build_c(2, &id).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert_eq!(cc.max_abs_diff(&Operator::zero(*cc.algebra())), 0.0);

        // A_2 = 1·η_1⊗e_11 + 2·η_2⊗e_12, assembled by hand
        let eta1 = build_eta(2, 1).unwrap().into_matrix();
        let eta2 = build_eta(2, 2).unwrap().into_matrix();
        let e11 = matrix_unit(alg, 1, 1).unwrap().into_matrix();
        let e12 = matrix_unit(alg, 1, 2).unwrap().into_matrix();
        let by_hand = eta1.kronecker(&e11) + eta2.kronecker(&e12) * c(2.0);
        assert_eq!(crate::linalg::max_abs_diff(a.matrix(), &by_hand), 0.0);

        let alg4 = TracialAlgebra::normalized(4);
        let e = Projection::diagonal(alg4, &[true, true, true, false]).unwrap();
        let m = half_sup_norm(4, &e).unwrap();
        let a = build_a(4).unwrap();
        let sum = &build_b(4, &e, m).unwrap() + &build_c(4, &e).unwrap();
        assert!(a.max_abs_diff(&sum) < 1e-9);
        assert!(matches!(
            build_b(4, &e, m * 0.5),
            Err(Error::ContractionViolation { .. })
        ));
    }

    #[test]
    fn chain_constants_at_quarter() {
        let k = ChainConstants::new(0.25).unwrap();
        assert!((k.c_p - 2f64.powi(-9)).abs() < 1e-18);
        assert!((k.big_c_p - (2.0 / (1.0 - 2f64.powf(-0.5))).powi(2)).abs() < 1e-9);
        assert!(k.t_prime > 0.0 && k.t_prime < 1.0 && k.delta > 0.0);
        assert!(!certified_lower_bound(0.25, 1.0).unwrap().applies);
        assert!(ChainConstants::new(0.5).is_err());
        for i in 1..=9 {
            let k = ChainConstants::new(0.05 * i as f64).unwrap();
            assert!(k.t_prime > 0.0 && k.delta > 0.0 && k.t_prime.is_finite());
        }
    }

    #[test]
    fn chain_with_identity_projection() {
        let id = Projection::identity(TracialAlgebra::normalized(8));
        let r = chain_verify(8, 0.25, 0.0, &id).unwrap();
        assert_eq!(r.norm_c, 0.0);
        assert!(r.implied_applies && r.passed(), "{r:?}");
        assert!((r.m - 4.0).abs() < 1e-12);
    }

    #[test]
    fn chain_rejects_excess_corank() {
        let e = Projection::diagonal(TracialAlgebra::normalized(4), &[true, true, false, false]).unwrap();
        assert!(matches!(
            chain_verify(4, 0.25, 0.25, &e),
            Err(Error::CorankViolation { .. })
        ));
        assert!(matches!(chain_verify(4, 0.6, 0.5, &e), Err(Error::InvalidExponent(_))));
    }

    #[test]
    fn truncated_xp_single_and_pair() {
        let alg = TruncatedBigAlgebra::new(1, vec![1]).unwrap();
        let x = build_truncated_xp(&alg, pe(1.0), &[1]).unwrap();
        assert!(x.max_abs_diff(&alg.epsilon(1).unwrap()) < 1e-15);
        assert!((schatten::norm(&x, pe(1.0)) - 1.0).abs() < 1e-12);

        let alg = TruncatedBigAlgebra::new(2, vec![1, 2]).unwrap();
        let x = build_truncated_xp(&alg, pe(1.5), &[1, 2]).unwrap();
        assert!(x.hermitian_defect() < 1e-15);
        assert!(schatten::norm(&x, pe(1.5)) <= 1.25 + 1e-12);
        assert!(matches!(
            build_truncated_xp(&alg, pe(1.0), &[3]),
            Err(Error::MissingFactor(6))
        ));
    }

    #[test]
    fn sign_flip_negates_epsilon() {
        let alg = TruncatedBigAlgebra::new(2, vec![1, 2]).unwrap();
        let e1 = alg.epsilon(1).unwrap();
        let flipped = sign_flip(&alg, 1, &e1).unwrap();
        assert!(flipped.max_abs_diff(&(-&e1)) == 0.0);
        let e2 = alg.epsilon(2).unwrap();
        assert!(sign_flip(&alg, 1, &e2).unwrap().max_abs_diff(&e2) == 0.0);
        assert!(matches!(sign_flip(&alg, 3, &e1), Err(Error::MissingSign(3))));
    }

    #[test]
    fn flip_identity_for_two() {
        let alg = TruncatedBigAlgebra::new(2, vec![1, 2]).unwrap();
        let r = flip_identity_check(&alg, pe(1.0), 2).unwrap();
        assert_eq!(r.terms, vec![1, 2]);
        assert!(r.passed, "{r:?}");
    }
}
