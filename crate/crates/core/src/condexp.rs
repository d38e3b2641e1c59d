//! Conditional expectations for the block filtration of `M_N` and for
//! finite truncations of the infinite tensor-product algebra.
//!
//! Inside a single factor the level-`n` subalgebra is `M_n ⊕ ℓ_∞^{N-n}`;
//! its expectation is the Schur multiplier that keeps the upper-left
//! `n × n` block and the diagonal.
//!
//! A [`TruncatedBigAlgebra`] is laid out as
//! `D_{2^m} ⊗ M_{N_1} ⊗ … ⊗ M_{N_F}` (sign component first, then the factors
//! in the order given). Sign coordinate `ε_k` is `±1` according to bit
//! `m - k` of the sign index, so `ε_1` is the most significant bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{Operator, TracialAlgebra, DEFAULT_DIM_CAP};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, ZERO};
use crate::schatten::{self, PExponent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorFiltrationLevel {
    ambient: usize,
    level: usize,
}

impl FactorFiltrationLevel {
    pub fn new(ambient: usize, level: usize) -> Result<Self> {
        if level == 0 || level > ambient {
            return Err(Error::LevelOutOfRange { level, ambient });
        }
        Ok(Self { ambient, level })
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn level(&self) -> usize {
        self.level
    }
}

/// Keep entries inside the leading `keep × keep` block and on the diagonal.
pub(crate) fn block_diag_compress(m: &CMatrix, keep: usize) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if (i < keep && j < keep) || i == j {
            m[(i, j)]
        } else {
            ZERO
        }
    })
}

/// `𝔼_n` on `M_N` onto `M_n ⊕ ℓ_∞^{N-n}`.
pub fn factor_cond_exp(lvl: &FactorFiltrationLevel, x: &Operator) -> Result<Operator> {
    if x.dim() != lvl.ambient {
        return Err(Error::DimensionMismatch {
            expected: lvl.ambient,
            found: x.dim(),
        });
    }
    Operator::new(*x.algebra(), block_diag_compress(x.matrix(), lvl.level))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedBigAlgebra {
    sign_count: usize,
    factors: Vec<usize>,
}

impl TruncatedBigAlgebra {
    pub fn new(sign_count: usize, factors: Vec<usize>) -> Result<Self> {
        Self::with_cap(sign_count, factors, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(sign_count: usize, factors: Vec<usize>, cap: usize) -> Result<Self> {
        if factors.contains(&0) {
            return Err(Error::MalformedAlgebra("factor sizes must be positive".into()));
        }
        if sign_count >= usize::BITS as usize - 1 {
            return Err(Error::MalformedAlgebra(format!("{sign_count} sign coordinates")));
        }
        let mut dim: usize = 1 << sign_count;
        for &n in &factors {
            dim = dim.checked_mul(n).filter(|&d| d <= cap).ok_or(Error::DimensionCap {
                dim: dim.saturating_mul(n),
                cap,
            })?;
        }
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        Ok(Self { sign_count, factors })
    }

    pub fn sign_count(&self) -> usize {
        self.sign_count
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn sign_dim(&self) -> usize {
        1 << self.sign_count
    }

    pub fn dim(&self) -> usize {
        self.sign_dim() * self.factors.iter().product::<usize>()
    }

    /// The ambient algebra; its trace is the normalized trace of the
    /// whole matrix algebra, which restricts to the product trace.
    pub fn algebra(&self) -> TracialAlgebra {
        TracialAlgebra::normalized(self.dim())
    }

    fn slot_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.factors.len() + 1);
        dims.push(self.sign_dim());
        dims.extend_from_slice(&self.factors);
        dims
    }

    /// Smallest level at which every factor is left untouched.
    pub fn top_level(&self) -> usize {
        self.factors.iter().copied().max().unwrap_or(0)
    }

    /// Position of the first factor of side `n`.
    pub fn factor_slot(&self, n: usize) -> Option<usize> {
        self.factors.iter().position(|&f| f == n)
    }

    /// `ε_k(s)` for sign index `s`, with `1 ≤ k ≤ m`.
    pub fn sign_value(&self, k: usize, s: usize) -> f64 {
        let bit = (s >> (self.sign_count - k)) & 1;
        if bit == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// The classical coordinate `ε_k` as a diagonal operator.
    pub fn epsilon(&self, k: usize) -> Result<Operator> {
        if k == 0 || k > self.sign_count {
            return Err(Error::MissingSign(k));
        }
        let inner = self.dim() / self.sign_dim();
        let diag: Vec<f64> = (0..self.dim()).map(|r| self.sign_value(k, r / inner)).collect();
        Operator::diagonal(self.algebra(), &diag)
    }

    /// Embed `x ∈ M_{N_slot}` as `1 ⊗ … ⊗ x ⊗ … ⊗ 1`.
    pub fn embed_factor(&self, slot: usize, x: &CMatrix) -> Result<Operator> {
        let n = *self
            .factors
            .get(slot)
            .ok_or_else(|| Error::MalformedAlgebra(format!("no factor slot {slot}")))?;
        if x.nrows() != n || x.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.nrows(),
            });
        }
        let dims = self.slot_dims();
        let pos = slot + 1;
        let outer: usize = dims[..pos].iter().product();
        let inner: usize = dims[pos + 1..].iter().product();
        let left = CMatrix::identity(outer, outer);
        let right = CMatrix::identity(inner, inner);
        Operator::new(self.algebra(), left.kronecker(x).kronecker(&right))
    }

    /// Largest entry outside the sign-diagonal blocks; zero for members of
    /// the algebra.
    pub fn off_algebra_mass(&self, x: &CMatrix) -> f64 {
        let inner = self.dim() / self.sign_dim();
        let mut worst = 0.0f64;
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if i / inner != j / inner {
                    worst = worst.max(x[(i, j)].norm());
                }
            }
        }
        worst
    }

    pub fn check_member(&self, x: &Operator) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        let scale = x.matrix().iter().map(|z| z.norm()).fold(1.0, f64::max);
        let off = self.off_algebra_mass(x.matrix());
        if off > 1e-9 * scale {
            return Err(Error::NotInAlgebra(off));
        }
        Ok(())
    }

    /// The trace-preserving compression of `M_d` onto the algebra: entries
    /// outside the sign-diagonal blocks are dropped.
    pub fn compress(&self, x: &Operator) -> Result<Operator> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        let inner = self.dim() / self.sign_dim();
        let m = x.matrix();
        Ok(Operator::from_fn(*x.algebra(), |i, j| {
            if i / inner == j / inner {
                m[(i, j)]
            } else {
                ZERO
            }
        }))
    }

    /// A random element: complex Gaussian entries on the sign-diagonal
    /// blocks.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> Operator {
        let d = self.dim();
        let inner = d / self.sign_dim();
        let mut m = linalg::random_gaussian(d, d, rng);
        for j in 0..d {
            for i in 0..d {
                if i / inner != j / inner {
                    m[(i, j)] = ZERO;
                }
            }
        }
        Operator::new(self.algebra(), m).expect("dimensions agree")
    }
}

/// Apply `f` to every `D × D` block of tensor slot `slot`, where the
/// Kronecker layout is given by `dims` (slot 0 most significant).
pub(crate) fn apply_slot_map(m: &CMatrix, dims: &[usize], slot: usize, f: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let d = dims[slot];
    let outer: usize = dims[..slot].iter().product();
    let inner: usize = dims[slot + 1..].iter().product();
    let idx = |o: usize, a: usize, u: usize| (o * d + a) * inner + u;
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    let mut block = CMatrix::zeros(d, d);
    for o in 0..outer {
        for u in 0..inner {
            for o2 in 0..outer {
                for u2 in 0..inner {
                    for a in 0..d {
                        for b in 0..d {
                            block[(a, b)] = m[(idx(o, a, u), idx(o2, b, u2))];
                        }
                    }
                    let mapped = f(&block);
                    for a in 0..d {
                        for b in 0..d {
                            out[(idx(o, a, u), idx(o2, b, u2))] = mapped[(a, b)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `ℰ_n` on a truncated big algebra.
///
/// Level 0 replaces every factor by its normalized trace; level `n ≥ 1`
/// applies `𝔼_n` to each factor larger than `n` and leaves the rest
/// alone. The sign component is always untouched.
pub fn big_cond_exp(alg: &TruncatedBigAlgebra, n: usize, x: &Operator) -> Result<Operator> {
    alg.check_member(x)?;
    let dims = alg.slot_dims();
    let mut m = x.matrix().clone();
    for (k, &size) in alg.factors.iter().enumerate() {
        let slot = k + 1;
        if n == 0 {
            if size > 1 {
                m = apply_slot_map(&m, &dims, slot, |b| {
                    let tau = b.trace() / c(size as f64);
                    CMatrix::from_diagonal_element(size, size, tau)
                });
            }
        } else if size > n {
            m = apply_slot_map(&m, &dims, slot, |b| block_diag_compress(b, n));
        }
    }
    Operator::new(x.algebra().to_owned(), m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Axiom {
    TracePreservation,
    Unitality,
    Idempotence,
    Positivity,
    Bimodule,
    SelfAdjointness,
    Contractivity(PExponent),
}

#[derive(Debug, Clone)]
pub struct AxiomFailure {
    pub axiom: Axiom,
    pub trial: usize,
    pub deviation: f64,
    pub witness: Operator,
}

#[derive(Debug, Clone)]
pub struct AxiomReport {
    pub trials: usize,
    pub tolerance: f64,
    /// Worst observed deviation per axiom.
    pub worst: Vec<(Axiom, f64)>,
    /// First failing witness per axiom.
    pub failures: Vec<AxiomFailure>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn failed(&self, axiom: Axiom) -> bool {
        self.failures.iter().any(|f| f.axiom == axiom)
    }
}

const CONTRACTIVITY_EXPONENTS: [PExponent; 3] = [PExponent::Finite(1.0), PExponent::Finite(2.0), PExponent::Infinity];

/// Check the conditional-expectation axioms on random inputs drawn from
/// the full matrix algebra.
pub fn check_condexp_axioms(
    map: impl Fn(&Operator) -> Operator,
    alg: &TracialAlgebra,
    trials: usize,
    rng: &mut impl Rng,
) -> AxiomReport {
    let alg = *alg;
    check_condexp_axioms_with(
        map,
        alg,
        |r| Operator::new(alg, linalg::random_gaussian(alg.dim(), alg.dim(), r)).unwrap(),
        trials,
        1e-8,
        rng,
    )
}

/// Like [`check_condexp_axioms`] with a caller-supplied sampler of
/// elements of the domain and an explicit tolerance.
///
/// Deviations are measured relative to `max(1, ‖X‖_∞)`.
pub fn check_condexp_axioms_with<R: Rng>(
    map: impl Fn(&Operator) -> Operator,
    alg: TracialAlgebra,
    mut sample: impl FnMut(&mut R) -> Operator,
    trials: usize,
    tol: f64,
    rng: &mut R,
) -> AxiomReport {
    let mut worst: Vec<(Axiom, f64)> = Vec::new();
    let mut failures: Vec<AxiomFailure> = Vec::new();
    let mut record = |axiom: Axiom, trial: usize, dev: f64, witness: &Operator| {
        match worst.iter_mut().find(|(a, _)| *a == axiom) {
            Some(entry) => entry.1 = entry.1.max(dev),
            None => worst.push((axiom, dev)),
        }
        if !(dev <= tol) && !failures.iter().any(|f| f.axiom == axiom) {
            failures.push(AxiomFailure {
                axiom,
                trial,
                deviation: dev,
                witness: witness.clone(),
            });
        }
    };

    let one = Operator::identity(alg);
    let unit_dev = map(&one).max_abs_diff(&one);
    record(Axiom::Unitality, 0, unit_dev, &one);

    for trial in 0..trials {
        let x = sample(rng);
        let scale = schatten::op_norm(&x).max(1.0);
        let ex = map(&x);

        let dt = (ex.trace() - x.trace()).norm() / scale;
        record(Axiom::TracePreservation, trial, dt, &x);

        let eex = map(&ex);
        record(Axiom::Idempotence, trial, eex.max_abs_diff(&ex) / scale, &x);

        let adj = map(&x.adjoint()).max_abs_diff(&ex.adjoint()) / scale;
        record(Axiom::SelfAdjointness, trial, adj, &x);

        let a = sample(rng);
        let pos = map(&(&a.adjoint() * &a));
        let lowest = pos.min_eigenvalue();
        let pscale = schatten::op_norm(&a).powi(2).max(1.0);
        record(Axiom::Positivity, trial, (-lowest).max(0.0) / pscale, &a);

        let left = map(&sample(rng));
        let right = map(&sample(rng));
        let inside = map(&(&(&left * &x) * &right));
        let outside = &(&left * &ex) * &right;
        let bscale = scale * schatten::op_norm(&left).max(1.0) * schatten::op_norm(&right).max(1.0);
        record(Axiom::Bimodule, trial, inside.max_abs_diff(&outside) / bscale, &x);

        for p in CONTRACTIVITY_EXPONENTS {
            let before = schatten::norm(&x, p);
            let after = schatten::norm(&ex, p);
            let dev = ((after - before) / before.max(1e-300)).max(0.0);
            record(Axiom::Contractivity(p), trial, dev, &x);
        }
    }
    AxiomReport {
        trials,
        tolerance: tol,
        worst,
        failures,
    }
}

/// Diagonal compression on `M_d`, i.e. the expectation onto the diagonal
/// subalgebra.
pub fn diagonal_compression(x: &Operator) -> Operator {
    let m = x.matrix();
    Operator::from_fn(*x.algebra(), |i, j| if i == j { m[(i, j)] } else { ZERO })
}

/// `τ(X) · 1`.
pub fn trace_expectation(x: &Operator) -> Operator {
    let alg = *x.algebra();
    let t = x.trace() / c(alg.unit_weight() * alg.dim() as f64);
    Operator::identity(alg).scale(t)
}
