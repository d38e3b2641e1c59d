//! Markov operators built from the filtration, their Cesàro averages, the
//! subsequence approximating the conditional expectations, Markov-inequality
//! truncations with projection meets, and averages of conjugation by a
//! diagonal unitary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{projection_meet, spectral_projection, Operator, Projection, TracialAlgebra};
use crate::condexp::{big_cond_exp, diagonal_compression, factor_cond_exp, FactorFiltrationLevel, TruncatedBigAlgebra};
use crate::counterexample::MartingaleSequence;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector, C64, ONE};
use crate::rearrangement::mu_eval;
use crate::schatten::{self, PExponent};

/// Largest algebra dimension for which the superoperator matrix is built.
pub const MAX_MARKOV_DIM: usize = 64;

/// Default number of iterations scanned by [`find_subsequence`].
pub const DEFAULT_SCAN_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum MarkovParams {
    Identity,
    /// `Σ (α_{n+1} − α_n) ℰ_n + (1 − α_K) id` on a truncation.
    Convex {
        alphas: Vec<f64>,
        filtration: TruncatedBigAlgebra,
    },
    /// `x ↦ U x U*`.
    Conjugation {
        unitary: CMatrix,
    },
    Custom,
}

/// A linear map on `M_d`, stored as the `d² × d²` matrix acting on
/// column-major vectorizations.
#[derive(Debug, Clone)]
pub struct MarkovOperator {
    alg: TracialAlgebra,
    matrix: CMatrix,
    params: MarkovParams,
}

fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

fn unvectorize(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

impl MarkovOperator {
    /// Tabulate `map` on the matrix units.
    pub fn from_map(
        alg: TracialAlgebra,
        map: impl Fn(&Operator) -> Result<Operator>,
        params: MarkovParams,
    ) -> Result<Self> {
        let d = alg.dim();
        if d > MAX_MARKOV_DIM {
            return Err(Error::DimensionCap {
                dim: d,
                cap: MAX_MARKOV_DIM,
            });
        }
        let mut matrix = CMatrix::zeros(d * d, d * d);
        for j in 0..d {
            for i in 0..d {
                let unit = Operator::from_fn(alg, |a, b| if a == i && b == j { ONE } else { C64::new(0.0, 0.0) });
                let image = map(&unit)?;
                matrix.set_column(j * d + i, &vectorize(image.matrix()));
            }
        }
        Ok(Self { alg, matrix, params })
    }

    pub fn identity(alg: TracialAlgebra) -> Result<Self> {
        Self::from_map(alg, |x| Ok(x.clone()), MarkovParams::Identity)
    }

    pub fn conjugation(u: &Operator) -> Result<Self> {
        let um = u.matrix().clone();
        let params = MarkovParams::Conjugation { unitary: um.clone() };
        Self::from_map(
            *u.algebra(),
            |x| Operator::new(*x.algebra(), &um * x.matrix() * um.adjoint()),
            params,
        )
    }

    pub fn algebra(&self) -> &TracialAlgebra {
        &self.alg
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn params(&self) -> &MarkovParams {
        &self.params
    }

    pub fn apply(&self, x: &Operator) -> Result<Operator> {
        let d = self.alg.dim();
        if x.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.dim(),
            });
        }
        Operator::new(self.alg, unvectorize(&(&self.matrix * vectorize(x.matrix())), d))
    }

    /// Unitality, trace preservation and positivity on `trials` random
    /// inputs.
    pub fn check_invariants(&self, trials: usize, rng: &mut impl Rng) -> MarkovReport {
        let d = self.alg.dim();
        let one = Operator::identity(self.alg);
        let unital_defect = self.apply(&one).map(|y| y.max_abs_diff(&one)).unwrap_or(f64::INFINITY);
        let mut trace_defect = 0.0f64;
        let mut min_eigenvalue = f64::INFINITY;
        for _ in 0..trials {
            let x = Operator::new(self.alg, linalg::random_gaussian(d, d, rng)).expect("square");
            let tx = self.apply(&x).expect("same algebra");
            let scale = schatten::op_norm(&x).max(1.0);
            trace_defect = trace_defect.max((tx.trace() - x.trace()).norm() / scale);
            let pos = &x.adjoint() * &x;
            let img = self.apply(&pos).expect("same algebra");
            min_eigenvalue = min_eigenvalue.min(img.min_eigenvalue() / schatten::op_norm(&pos).max(1.0));
        }
        MarkovReport {
            trials,
            unital_defect,
            trace_defect,
            min_eigenvalue,
            passed: unital_defect <= 1e-9 && trace_defect <= 1e-9 && min_eigenvalue >= -1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub trials: usize,
    pub unital_defect: f64,
    pub trace_defect: f64,
    /// Smallest eigenvalue of `T(A*A)` relative to `‖A*A‖`.
    pub min_eigenvalue: f64,
    pub passed: bool,
}

/// `α_n = 1 − 2^{−n}` for `n = 0..=levels`.
pub fn geometric_alphas(levels: usize) -> Vec<f64> {
    (0..=levels).map(|n| 1.0 - 0.5f64.powi(n as i32)).collect()
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    let ok = alphas.first() == Some(&0.0)
        && alphas.windows(2).all(|w| w[0] < w[1])
        && alphas.iter().all(|&a| (0.0..=1.0).contains(&a));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidAlphas)
    }
}

/// `T = Σ_{n<K} (α_{n+1} − α_n) ℰ_n + (1 − α_K) id` for `alphas = (α_0, …, α_K)`.
///
/// The map is tabulated on all of `M_d`, with each `ℰ_n` preceded by the
/// compression onto the sign-diagonal blocks.
pub fn convex_markov(alphas: &[f64], filtration: &TruncatedBigAlgebra) -> Result<MarkovOperator> {
    check_alphas(alphas)?;
    let alg = filtration.algebra();
    let weights: Vec<f64> = alphas.windows(2).map(|w| w[1] - w[0]).collect();
    let rest = 1.0 - alphas[alphas.len() - 1];
    MarkovOperator::from_map(
        alg,
        |x| {
            let mut acc = x.scale_real(rest);
            let inside = filtration.compress(x)?;
            for (n, &w) in weights.iter().enumerate() {
                acc = acc + big_cond_exp(filtration, n, &inside)?.scale_real(w);
            }
            Ok(acc)
        },
        MarkovParams::Convex {
            alphas: alphas.to_vec(),
            filtration: filtration.clone(),
        },
    )
}

/// `(1/n) Σ_{k<n} T^k x` by repeated application.
pub fn ergodic_average(t: &MarkovOperator, x: &Operator, n: usize) -> Result<Operator> {
    if n == 0 {
        return Err(Error::OutOfRange("average length must be at least 1".into()));
    }
    let d = t.alg.dim();
    if x.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.dim(),
        });
    }
    let mut power = vectorize(x.matrix());
    let mut sum = power.clone();
    for _ in 1..n {
        power = &t.matrix * &power;
        sum += &power;
    }
    Operator::new(t.alg, unvectorize(&sum, d) / c(n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsequenceEntry {
    pub level: usize,
    /// First `m` with `‖M_m(T) x − ℰ_n x‖_p ≤ tol`.
    pub m: Option<usize>,
    /// The `m` realizing `error` (the hit, or the best checkpoint).
    pub best_m: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsequenceReport {
    pub p: f64,
    pub tol: f64,
    pub scan_cap: usize,
    pub entries: Vec<SubsequenceEntry>,
    pub total_error: f64,
    pub all_found: bool,
}

fn next_checkpoint(m: usize) -> usize {
    if m < 64 {
        m + 1
    } else {
        ((m as f64 * 1.05).ceil() as usize).max(m + 1)
    }
}

/// For each level `n` of the filtration behind `t`, the first `m` at
/// which `M_m(T) x` is within `tol` of `ℰ_n x` in `L_p`.
pub fn find_subsequence(t: &MarkovOperator, x: &Operator, p: PExponent, tol: f64) -> Result<SubsequenceReport> {
    find_subsequence_with_cap(t, x, p, tol, DEFAULT_SCAN_CAP)
}

/// Like [`find_subsequence`] with an explicit scan cap. Averages are
/// compared at every `m ≤ 64` and then at geometrically spaced
/// checkpoints.
pub fn find_subsequence_with_cap(
    t: &MarkovOperator,
    x: &Operator,
    p: PExponent,
    tol: f64,
    cap: usize,
) -> Result<SubsequenceReport> {
    if !(tol > 0.0) {
        return Err(Error::OutOfRange(format!("tolerance {tol} must be positive")));
    }
    let MarkovParams::Convex { filtration, .. } = &t.params else {
        return Err(Error::MalformedAlgebra("operator carries no filtration".into()));
    };
    let d = t.alg.dim();
    let targets: Vec<Operator> = (0..=filtration.top_level())
        .map(|n| big_cond_exp(filtration, n, x))
        .collect::<Result<_>>()?;
    let mut entries: Vec<SubsequenceEntry> = (0..targets.len())
        .map(|level| SubsequenceEntry {
            level,
            m: None,
            best_m: 0,
            error: f64::INFINITY,
        })
        .collect();

    let mut power = vectorize(x.matrix());
    let mut sum = power.clone();
    let mut m = 1usize;
    let mut checkpoint = 1usize;
    loop {
        if m == checkpoint {
            let avg = Operator::new(t.alg, unvectorize(&sum, d) / c(m as f64))?;
            for (entry, target) in entries.iter_mut().zip(&targets) {
                if entry.m.is_some() {
                    continue;
                }
                let err = schatten::norm(&(&avg - target), p);
                if err < entry.error {
                    entry.error = err;
                    entry.best_m = m;
                }
                if err <= tol {
                    entry.m = Some(m);
                }
            }
            if entries.iter().all(|e| e.m.is_some()) {
                break;
            }
            checkpoint = next_checkpoint(checkpoint).min(cap);
        }
        if m >= cap {
            break;
        }
        power = &t.matrix * &power;
        sum += &power;
        m += 1;
    }
    let total_error = entries.iter().map(|e| e.error).sum();
    let all_found = entries.iter().all(|e| e.m.is_some());
    Ok(SubsequenceReport {
        p: p.value(),
        tol,
        scan_cap: cap,
        entries,
        total_error,
        all_found,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    /// `τ(1 − e_n)`.
    pub corank_trace: f64,
    /// `λ^{−p} ‖Z_n‖_p^p = t ‖Z_n‖_p^p`.
    pub markov_bound: f64,
    /// `‖Z_n e_n‖`.
    pub truncated_norm: f64,
    /// `‖Z_n e‖` for the meet `e`.
    pub meet_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub t: f64,
    pub p: f64,
    /// `t^{−1/p}`.
    pub lambda: f64,
    pub rows: Vec<TruncationRow>,
    /// `τ(1 − e)` for the meet.
    pub meet_corank_trace: f64,
    pub corank_sum: f64,
    /// `sup_n ‖Z_n e‖`, an upper bound for `μ^c` of the sequence.
    pub mu_bound: f64,
    pub markov_holds: bool,
    pub norms_hold: bool,
    pub subadditive: bool,
}

impl TruncationReport {
    pub fn passed(&self) -> bool {
        self.markov_holds && self.norms_hold && self.subadditive
    }
}

/// `e_n = 1_{[0, λ]}(|Z_n|)` with `λ = t^{−1/p}`, and their meet.
pub fn truncate_and_meet(zs: &[Operator], t: f64, p: f64) -> Result<(Projection, TruncationReport)> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::OutOfRange(format!("t = {t} must lie in (0, 1)")));
    }
    if !(p >= 1.0) || p.is_infinite() {
        return Err(Error::InvalidExponent(p));
    }
    let first = zs
        .first()
        .ok_or_else(|| Error::OutOfRange("no operators given".into()))?;
    let alg = *first.algebra();
    let lambda = t.powf(-1.0 / p);
    let slack = |bound: f64| bound * (1.0 + 1e-9) + 1e-12;

    let mut projections = Vec::with_capacity(zs.len());
    let mut rows = Vec::with_capacity(zs.len());
    for z in zs {
        if z.dim() != alg.dim() {
            return Err(Error::DimensionMismatch {
                expected: alg.dim(),
                found: z.dim(),
            });
        }
        let en = spectral_projection(&z.abs(), 0.0, lambda)?;
        rows.push(TruncationRow {
            corank_trace: en.complement_trace(),
            markov_bound: t * schatten::lp_norm_pow(&alg, z, p),
            truncated_norm: schatten::op_norm(&(z * en.operator())),
            meet_norm: 0.0,
        });
        projections.push(en);
    }
    let mut e = projections[0].clone();
    for en in &projections[1..] {
        e = projection_meet(&e, en)?;
    }
    for (row, z) in rows.iter_mut().zip(zs) {
        row.meet_norm = schatten::op_norm(&(z * e.operator()));
    }
    let seq = MartingaleSequence::from_terms(alg, zs.to_vec())?;
    let mu_bound = mu_eval(&seq, &e)?;
    let corank_sum: f64 = rows.iter().map(|r| r.corank_trace).sum();
    let meet_corank_trace = e.complement_trace();
    let report = TruncationReport {
        t,
        p,
        lambda,
        markov_holds: rows.iter().all(|r| r.corank_trace <= slack(r.markov_bound)),
        norms_hold: rows
            .iter()
            .all(|r| r.truncated_norm <= slack(lambda) && r.meet_norm <= slack(lambda))
            && mu_bound <= slack(lambda),
        subadditive: meet_corank_trace <= slack(corank_sum),
        rows,
        meet_corank_trace,
        corank_sum,
        mu_bound,
    };
    Ok((e, report))
}

/// How the phases of the diagonal unitary are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    /// `φ_k = K^{−(N−k+1)}`: averages of length `K^n` approximate `𝔼_{N−n}`.
    Shifted,
    /// `φ_k = K^{−(N−k)}`: the last phase is `1`, i.e. trivial.
    Reciprocal,
}

/// `U = Σ_k exp(2πi φ_k) e_{k,k}` with `φ_k = K^{−e_k}` stored exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalUnitary {
    pub n: usize,
    pub k: u64,
    pub convention: PhaseConvention,
    /// `e_k` for `k = 1..=N`.
    pub exponents: Vec<u32>,
}

fn checked_pow(k: u64, e: u32) -> Option<u128> {
    (k as u128).checked_pow(e)
}

impl DiagonalUnitary {
    pub fn phases(&self) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|&e| (self.k as f64).powi(-(e as i32)))
            .collect()
    }

    pub fn algebra(&self) -> TracialAlgebra {
        TracialAlgebra::normalized(self.n)
    }

    pub fn operator(&self) -> Operator {
        let diag: Vec<C64> = self
            .phases()
            .iter()
            .map(|&phi| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * phi))
            .collect();
        Operator::from_fn(self.algebra(), |i, j| if i == j { diag[i] } else { C64::new(0.0, 0.0) })
    }

    /// `‖U − 1‖ = max_k 2|sin(π φ_k)|`.
    pub fn distance_to_identity(&self) -> f64 {
        self.phases()
            .iter()
            .map(|&phi| 2.0 * (std::f64::consts::PI * phi).sin().abs())
            .fold(0.0, f64::max)
    }

    /// `(1/L) Σ_{j<L} exp(2πi j (φ_a − φ_b))` in closed form, with the
    /// fractional part of `L (φ_a − φ_b)` computed in exact arithmetic.
    pub fn dirichlet_factor(&self, a: usize, b: usize, l: u64) -> Result<C64> {
        let (ea, eb) = (self.exponents[a], self.exponents[b]);
        let top = ea.max(eb);
        let den = checked_pow(self.k, top).ok_or_else(|| Error::OutOfRange(format!("K^{top} overflows")))?;
        let num_a = den / checked_pow(self.k, ea).expect("smaller power");
        let num_b = den / checked_pow(self.k, eb).expect("smaller power");
        let num = num_a as i128 - num_b as i128;
        let den_i = den as i128;
        if l == 1 || num.rem_euclid(den_i) == 0 {
            return Ok(ONE);
        }
        let frac_num = ((l as u128 % den) * num.rem_euclid(den_i) as u128) % den;
        let pi = std::f64::consts::PI;
        let delta = num as f64 / den as f64;
        let f = frac_num as f64 / den as f64;
        let ratio = (pi * f).sin() / (l as f64 * (pi * delta).sin());
        Ok(C64::from_polar(1.0, pi * (f - delta)) * ratio)
    }
}

/// The diagonal unitary with the default [`PhaseConvention::Shifted`].
pub fn diagonal_unitary(n: usize, k: u64) -> Result<DiagonalUnitary> {
    diagonal_unitary_with(n, k, PhaseConvention::Shifted)
}

pub fn diagonal_unitary_with(n: usize, k: u64, convention: PhaseConvention) -> Result<DiagonalUnitary> {
    if n == 0 {
        return Err(Error::OutOfRange("N must be at least 1".into()));
    }
    if k < 2 {
        return Err(Error::OutOfRange(format!("K = {k} must be at least 2")));
    }
    let exponents: Vec<u32> = (1..=n)
        .map(|idx| match convention {
            PhaseConvention::Shifted => (n - idx + 1) as u32,
            PhaseConvention::Reciprocal => (n - idx) as u32,
        })
        .collect();
    let top = exponents.iter().copied().max().unwrap_or(0);
    if checked_pow(k, top).is_none() {
        return Err(Error::OutOfRange(format!("K^{top} overflows")));
    }
    Ok(DiagonalUnitary {
        n,
        k,
        convention,
        exponents,
    })
}

/// `(1/L) Σ_{j<L} U^j x U^{−j}` via per-entry Dirichlet factors.
pub fn conj_average(u: &DiagonalUnitary, x: &Operator, l: u64) -> Result<Operator> {
    if l == 0 {
        return Err(Error::OutOfRange("average length must be at least 1".into()));
    }
    if x.dim() != u.n {
        return Err(Error::DimensionMismatch {
            expected: u.n,
            found: x.dim(),
        });
    }
    let mut m = x.matrix().clone();
    for j in 0..u.n {
        for i in 0..u.n {
            if i != j {
                m[(i, j)] *= u.dirichlet_factor(i, j, l)?;
            }
        }
    }
    Operator::new(*x.algebra(), m)
}

/// The same average computed by `L` explicit conjugations.
pub fn conj_average_explicit(u: &DiagonalUnitary, x: &Operator, l: u64) -> Result<Operator> {
    let t = MarkovOperator::conjugation(&u.operator().in_algebra(*x.algebra())?)?;
    ergodic_average(&t, x, l as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitarySweepRow {
    pub k: u64,
    /// `max_x Σ_n ‖𝔼_{N−n}(x) − M_{K^n}(x)‖_p / ‖x‖_p` over the trials.
    pub worst_ratio: f64,
    pub holds: bool,
    pub distance_to_identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitaryReport {
    pub n: usize,
    pub p: f64,
    pub trials: usize,
    pub seed: u64,
    pub convention: PhaseConvention,
    pub rows: Vec<UnitarySweepRow>,
    pub minimal_k: Option<u64>,
    /// `2^{−N}`, the target for `‖U − 1‖`.
    pub distance_target: f64,
}

/// `𝔼_m` on `M_N` with `𝔼_0` read as the diagonal.
fn factor_level(n: usize, level: usize, x: &Operator) -> Result<Operator> {
    if level == 0 {
        Ok(diagonal_compression(x))
    } else {
        factor_cond_exp(&FactorFiltrationLevel::new(n, level)?, x)
    }
}

/// `Σ_{n=0}^N ‖𝔼_{N−n}(x) − M_{K^n}(x)‖_p` for one `x`.
pub fn unitary_approx_lhs(u: &DiagonalUnitary, x: &Operator, p: PExponent) -> Result<f64> {
    let mut total = 0.0;
    let mut l: u64 = 1;
    for n in 0..=u.n {
        let target = factor_level(u.n, u.n - n, x)?;
        let avg = conj_average(u, x, l)?;
        total += schatten::norm(&(&target - &avg), p);
        if n < u.n {
            l = l
                .checked_mul(u.k)
                .ok_or_else(|| Error::OutOfRange(format!("K^{} overflows", n + 1)))?;
        }
    }
    Ok(total)
}

/// Sweep `K` over `k_range` and report the smallest `K` for which
/// `Σ_n ‖𝔼_{N−n}(x) − M_{K^n}(x)‖_p ≤ ‖x‖_p` holds on every trial.
pub fn unitary_approx_check(
    n: usize,
    k_range: &[u64],
    p: PExponent,
    trials: usize,
    seed: u64,
    convention: PhaseConvention,
) -> Result<UnitaryReport> {
    let alg = TracialAlgebra::normalized(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Operator> = (0..trials)
        .map(|_| Operator::new(alg, linalg::random_gaussian(n, n, &mut rng)).expect("square"))
        .collect();
    let rows = k_range
        .par_iter()
        .map(|&k| {
            let u = diagonal_unitary_with(n, k, convention)?;
            let mut worst = 0.0f64;
            for x in &xs {
                let lhs = unitary_approx_lhs(&u, x, p)?;
                worst = worst.max(lhs / schatten::norm(x, p));
            }
            Ok(UnitarySweepRow {
                k,
                worst_ratio: worst,
                holds: worst <= 1.0,
                distance_to_identity: u.distance_to_identity(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let minimal_k = rows.iter().filter(|r| r.holds).map(|r| r.k).min();
    Ok(UnitaryReport {
        n,
        p: p.value(),
        trials,
        seed,
        convention,
        rows,
        minimal_k,
        distance_target: 0.5f64.powi(n as i32),
    })
}
