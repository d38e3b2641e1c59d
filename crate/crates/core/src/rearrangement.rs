//! The maximal rearrangement `μ_t^c((Y_n)) = inf_{τ(1−e) ≤ t} sup_n ‖Y_n e‖`.
//!
//! Every feasible projection gives an upper bound. We compute the exact
//! minimum over diagonal projections by enumeration, search over general
//! projections by plane rotations of an orthonormal frame, and report the
//! certified lower bounds that come from the chain constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{Projection, TracialAlgebra};
use crate::counterexample::{martingale_of_xn, ChainConstants, MartingaleSequence};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector, ONE, ZERO};

/// Largest dimension accepted by [`mu_diag_exhaustive`].
pub const MAX_EXHAUSTIVE_DIM: usize = 20;

/// Default number of objective evaluations for [`mu_search`].
pub const DEFAULT_BUDGET: usize = 2000;

/// Number of independent descents the budget is split into.
pub const RESTARTS: usize = 10;

/// At most this many single-term spectral starts are generated.
const MAX_SPECTRAL_STARTS: usize = 16;

const COLD_LANCZOS_STEPS: usize = 8;
const WARM_LANCZOS_STEPS: usize = 4;
const RANKING_LANCZOS_STEPS: usize = 24;
const DENSE_RANKING_DIM: usize = 40;
const GOLDEN_STEPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    UpperBound,
    CertifiedLowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DiagExhaustive,
    GrassmannSearch,
    SpectralHeuristic,
    AnalyticCertificate,
}

#[derive(Debug, Clone)]
pub struct MuEstimate {
    pub t: f64,
    /// `+∞` is used as the unbounded marker.
    pub value: f64,
    pub witness: Option<Projection>,
    pub direction: Direction,
    pub method: Method,
    pub iterations: usize,
    pub seed: u64,
}

/// Largest corank allowed by the budget `t`, never exceeding it.
pub fn corank_budget(dim: usize, t: f64) -> usize {
    let mut k = (dim as f64 * t).floor() as usize;
    while k > 0 && k as f64 > dim as f64 * t {
        k -= 1;
    }
    k.min(dim)
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("t = {t} must lie in (0, 1)")))
    }
}

/// `max_n ‖Y_n e‖`.
pub fn mu_eval(seq: &MartingaleSequence, e: &Projection) -> Result<f64> {
    if e.dim() != seq.ambient().dim() {
        return Err(Error::DimensionMismatch {
            expected: seq.ambient().dim(),
            found: e.dim(),
        });
    }
    let grams: Vec<CMatrix> = seq.terms().iter().map(|y| y.matrix().adjoint() * y.matrix()).collect();
    Ok(exact_objective(&grams, &norms_sq(&grams), e.matrix()).sqrt())
}

fn norms_sq(grams: &[CMatrix]) -> Vec<f64> {
    grams
        .iter()
        .map(|g| linalg::eigvalsh(g).last().copied().unwrap_or(0.0).max(0.0))
        .collect()
}

/// `max_n λ_max(e G_n e)` by dense eigensolves. Terms whose norm cannot
/// exceed the running maximum are skipped.
fn exact_objective(grams: &[CMatrix], norms: &[f64], e: &CMatrix) -> f64 {
    let mut order: Vec<usize> = (0..grams.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut best = 0.0f64;
    for n in order {
        if norms[n] <= best {
            break;
        }
        let compressed = e * &grams[n] * e;
        best = best.max(linalg::eigvalsh(&compressed).last().copied().unwrap_or(0.0));
    }
    best.max(0.0)
}

/// Exact minimum of `mu_eval` over diagonal projections of normalized
/// corank at most `t`.
pub fn mu_diag_exhaustive(seq: &MartingaleSequence, t: f64) -> Result<MuEstimate> {
    check_t(t)?;
    let d = seq.ambient().dim();
    if d > MAX_EXHAUSTIVE_DIM {
        return Err(Error::EnumerationTooLarge {
            dim: d,
            max: MAX_EXHAUSTIVE_DIM,
        });
    }
    let k = corank_budget(d, t);
    let grams: Vec<CMatrix> = seq.terms().iter().map(|y| y.matrix().adjoint() * y.matrix()).collect();
    let norms = norms_sq(&grams);
    let mut order: Vec<usize> = (0..grams.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    // Dropping more coordinates never increases ‖Y e‖, so only subsets of
    // size exactly k need to be visited.
    let mut best = f64::INFINITY;
    let mut best_mask = 0u32;
    let mut visited = 0usize;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        visited += 1;
        let dropped: u32 = subset.iter().map(|&i| 1u32 << i).sum();
        let kept: Vec<usize> = (0..d).filter(|i| dropped & (1 << i) == 0).collect();
        let mut value = 0.0f64;
        for &n in &order {
            if norms[n] <= value {
                break;
            }
            let g = &grams[n];
            let sub = CMatrix::from_fn(kept.len(), kept.len(), |a, b| g[(kept[a], kept[b])]);
            value = value.max(linalg::eigvalsh(&sub).last().copied().unwrap_or(0.0));
            if value >= best {
                break;
            }
        }
        if value < best {
            best = value;
            best_mask = dropped;
        }
        if !next_combination(&mut subset, d) {
            break;
        }
    }
    let keep: Vec<bool> = (0..d).map(|i| best_mask & (1 << i) == 0).collect();
    let witness = Projection::diagonal(*seq.ambient(), &keep)?;
    let value = mu_eval(seq, &witness)?;
    Ok(MuEstimate {
        t,
        value,
        witness: Some(witness),
        direction: Direction::UpperBound,
        method: Method::DiagExhaustive,
        iterations: visited,
        seed: 0,
    })
}

/// Advance to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Objective state for the frame search. `W` is an orthonormal `d × k`
/// frame of the complement, so `e = 1 − W W*`.
struct Landscape {
    d: usize,
    k: usize,
    grams: Vec<CMatrix>,
    norms: Vec<f64>,
    order: Vec<usize>,
}

/// Result of one approximate evaluation.
struct Probe {
    value: f64,
    /// `(term, top vector, value)` for terms within a few percent of the
    /// maximum, largest first.
    active: Vec<(usize, CVector, f64)>,
    evaluated: Vec<(usize, f64)>,
}

struct Walker<'a> {
    land: &'a Landscape,
    warm: Vec<Option<CVector>>,
    cached: Vec<f64>,
    drift: Vec<f64>,
    rng: ChaCha8Rng,
    evals: usize,
}

fn project_out(w: &CMatrix, x: &CVector) -> CVector {
    if w.ncols() == 0 {
        return x.clone();
    }
    x - w * (w.adjoint() * x)
}

impl Landscape {
    fn new(seq: &MartingaleSequence, k: usize) -> Self {
        let grams: Vec<CMatrix> = seq.terms().iter().map(|y| y.matrix().adjoint() * y.matrix()).collect();
        let norms = norms_sq(&grams);
        let mut order: Vec<usize> = (0..grams.len()).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        Self {
            d: seq.ambient().dim(),
            k,
            grams,
            norms,
            order,
        }
    }

    fn complement(&self, w: &CMatrix) -> CMatrix {
        CMatrix::identity(self.d, self.d) - w * w.adjoint()
    }

    fn exact(&self, w: &CMatrix) -> f64 {
        exact_objective(&self.grams, &self.norms, &self.complement(w))
    }

    /// Ranking value for candidate frames: exact for small dimensions,
    /// otherwise a long cold-start Lanczos run per term.
    fn estimate(&self, w: &CMatrix) -> f64 {
        if self.d <= DENSE_RANKING_DIM {
            return self.exact(w);
        }
        let mut best = 0.0f64;
        for &n in &self.order {
            if self.norms[n] <= best {
                break;
            }
            let g = &self.grams[n];
            let start = project_out(w, &seed_vector(self.d, n));
            let top = linalg::lanczos_top(
                |x| project_out(w, &(g * project_out(w, x))),
                &start,
                RANKING_LANCZOS_STEPS.min(self.d - self.k),
            );
            if let Some((val, _)) = top {
                best = best.max(val);
            }
        }
        best
    }

    fn top_eigvecs(&self, n: usize, count: usize) -> Vec<CVector> {
        let (_, vecs) = linalg::eigh(&self.grams[n]);
        (0..count).map(|j| vecs.column(self.d - 1 - j).into_owned()).collect()
    }
}

impl<'a> Walker<'a> {
    fn new(land: &'a Landscape, seed: u64) -> Self {
        Self {
            land,
            warm: vec![None; land.grams.len()],
            cached: vec![0.0; land.grams.len()],
            drift: vec![f64::INFINITY; land.grams.len()],
            rng: ChaCha8Rng::seed_from_u64(seed),
            evals: 0,
        }
    }

    /// Lanczos lower estimate of `max_n λ_max(e G_n e)` with warm starts.
    ///
    /// `radius` bounds `‖e − e_0‖` for the frame the cache refers to, so
    /// `‖Y_n e‖ ≤ ‖Y_n e_0‖ + ‖Y_n‖ (drift + radius)` lets terms that cannot
    /// reach the running maximum be skipped. The scan stops once the
    /// maximum exceeds `cutoff`.
    fn probe(&mut self, w: &CMatrix, radius: f64, cutoff: f64) -> Probe {
        self.evals += 1;
        let land = self.land;
        let bound = |n: usize| {
            let r = self.drift[n] + radius;
            if r.is_finite() {
                let b = self.cached[n].sqrt() + land.norms[n].sqrt() * r;
                (b * b).min(land.norms[n])
            } else {
                land.norms[n]
            }
        };
        let mut order: Vec<(usize, f64)> = (0..land.norms.len()).map(|n| (n, bound(n))).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut best = 0.0f64;
        let mut found: Vec<(usize, CVector, f64)> = Vec::new();
        for (n, ub) in order {
            if ub <= best * 0.98 {
                break;
            }
            let (start, steps) = match &self.warm[n] {
                Some(v) => (project_out(w, v), WARM_LANCZOS_STEPS),
                None => (project_out(w, &seed_vector(land.d, n)), COLD_LANCZOS_STEPS),
            };
            let start = if start.norm() < 1e-8 {
                project_out(w, &seed_vector(land.d, n + 7919))
            } else {
                start
            };
            let g = &land.grams[n];
            let top = linalg::lanczos_top(
                |x| {
                    let y = g * project_out(w, x);
                    project_out(w, &y)
                },
                &start,
                steps.min(land.d - land.k),
            );
            if let Some((val, vec)) = top {
                self.warm[n] = Some(vec.clone());
                best = best.max(val);
                found.push((n, vec, val));
                if best > cutoff {
                    break;
                }
            }
        }
        let evaluated = found.iter().map(|(n, _, v)| (*n, *v)).collect();
        found.retain(|(_, _, v)| *v >= best * 0.98);
        found.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        Probe {
            value: best.max(0.0),
            active: found,
            evaluated,
        }
    }

    /// Make `probe` (taken at distance `radius` from the cached frame) the
    /// new reference for the bounds.
    fn commit(&mut self, probe: &Probe, radius: f64) {
        for d in self.drift.iter_mut() {
            *d += radius;
        }
        for &(n, v) in &probe.evaluated {
            self.cached[n] = v;
            self.drift[n] = 0.0;
        }
    }

    /// Rotate in the plane spanned by `W b` and `x` (with `x ⊥ range W`).
    fn rotate(w: &CMatrix, b: &CVector, x: &CVector, theta: f64) -> CMatrix {
        let wb = w * b;
        let delta = wb * c(theta.cos() - 1.0) + x * c(theta.sin());
        w + delta * b.adjoint()
    }

    /// Golden-section search of the angle in `[lo, hi]`; returns the best
    /// angle and value seen, including the unrotated frame.
    fn line_search(&mut self, w: &CMatrix, b: &CVector, x: &CVector, lo: f64, hi: f64, f0: f64) -> (f64, f64) {
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut z) = (lo, hi);
        let mut p = z - phi * (z - a);
        let mut q = a + phi * (z - a);
        let mut fp = self.probe(&Self::rotate(w, b, x, p), p.sin().abs(), f0).value;
        let mut fq = self.probe(&Self::rotate(w, b, x, q), q.sin().abs(), f0).value;
        let (mut best_t, mut best_f) = (0.0, f0);
        for (th, f) in [(p, fp), (q, fq)] {
            if f < best_f {
                best_t = th;
                best_f = f;
            }
        }
        for _ in 0..GOLDEN_STEPS {
            if fp <= fq {
                z = q;
                q = p;
                fq = fp;
                p = z - phi * (z - a);
                fp = self.probe(&Self::rotate(w, b, x, p), p.sin().abs(), f0).value;
                if fp < best_f {
                    best_t = p;
                    best_f = fp;
                }
            } else {
                a = p;
                p = q;
                fp = fq;
                q = a + phi * (z - a);
                fq = self.probe(&Self::rotate(w, b, x, q), q.sin().abs(), f0).value;
                if fq < best_f {
                    best_t = q;
                    best_f = fq;
                }
            }
        }
        (best_t, best_f)
    }

    /// Descent from `w0` until `budget` evaluations are spent.
    fn descend(&mut self, w0: CMatrix, budget: usize) -> CMatrix {
        let land = self.land;
        let stop = self.evals + budget;
        let mut w = w0;
        let mut current = self.probe(&w, f64::INFINITY, f64::INFINITY);
        self.commit(&current, 0.0);
        let mut reach = std::f64::consts::FRAC_PI_2;
        let mut moves = 0usize;
        let mut cursor = 0usize;
        while self.evals + GOLDEN_STEPS + 2 <= stop && !current.active.is_empty() {
            moves += 1;
            let plane = if moves.is_multiple_of(4) {
                self.random_plane(&w)
            } else if moves % 4 == 1 {
                combined_plane(land, &w, &current.active)
            } else {
                let (n, v, _) = &current.active[cursor % current.active.len()];
                cursor += 1;
                descent_plane(land, &w, *n, v)
            };
            let Some((b, x, symmetric)) = plane else {
                if moves > 8 * budget {
                    break;
                }
                continue;
            };
            let lo = if symmetric { -reach } else { 0.0 };
            let (theta, value) = self.line_search(&w, &b, &x, lo, reach, current.value);
            if theta != 0.0 && value < current.value * (1.0 - 1e-12) {
                w = Self::rotate(&w, &b, &x, theta);
                if moves.is_multiple_of(32) {
                    w = orthonormal_columns(&w);
                }
                let radius = theta.sin().abs();
                current = self.probe(&w, radius, f64::INFINITY);
                self.commit(&current, radius);
                reach = (3.0 * theta.abs()).clamp(1e-6, std::f64::consts::FRAC_PI_2);
            } else {
                reach = (reach * 0.5).max(1e-6);
                if reach <= 1e-6 {
                    reach = std::f64::consts::FRAC_PI_2;
                }
            }
        }
        orthonormal_columns(&w)
    }

    fn random_plane(&mut self, w: &CMatrix) -> Option<(CVector, CVector, bool)> {
        let d = self.land.d;
        let k = self.land.k;
        let g = linalg::random_gaussian(d, 1, &mut self.rng).column(0).into_owned();
        let x = project_out(w, &g);
        let nx = x.norm();
        let bvec = linalg::random_gaussian(k, 1, &mut self.rng).column(0).into_owned();
        let nb = bvec.norm();
        if nx < 1e-10 || nb < 1e-10 {
            return None;
        }
        Some((bvec.unscale(nb), x.unscale(nx), true))
    }
}

/// Steepest plane for one active term: with `v` its top vector in the
/// range and `a = W* G v`, rotating `W a/|a|` towards `v` decreases the
/// term to first order.
fn descent_plane(land: &Landscape, w: &CMatrix, n: usize, v: &CVector) -> Option<(CVector, CVector, bool)> {
    let a = w.adjoint() * (&land.grams[n] * v);
    let na = a.norm();
    let x = project_out(w, v);
    let nx = x.norm();
    if na < 1e-14 || nx < 1e-10 {
        return None;
    }
    Some((a.unscale(na), x.unscale(nx), false))
}

/// Best rank-one plane for the summed descent directions of all active
/// terms.
fn combined_plane(land: &Landscape, w: &CMatrix, active: &[(usize, CVector, f64)]) -> Option<(CVector, CVector, bool)> {
    if active.len() < 2 {
        let (n, v, _) = active.first()?;
        return descent_plane(land, w, *n, v);
    }
    let mut dir = CMatrix::zeros(land.d, land.k);
    for (n, v, _) in active {
        let a = w.adjoint() * (&land.grams[*n] * v);
        let na = a.norm();
        if na > 1e-14 {
            dir += project_out(w, v) * a.adjoint().unscale(na);
        }
    }
    // top right singular vector of dir gives the frame combination
    let (_, vecs) = linalg::eigh(&(dir.adjoint() * &dir));
    let b = vecs.column(land.k - 1).into_owned();
    let x = &dir * &b;
    let nx = x.norm();
    if nx < 1e-12 {
        return None;
    }
    Some((b, x.unscale(nx), true))
}

fn seed_vector(d: usize, salt: usize) -> CVector {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ salt as u64);
    linalg::random_gaussian(d, 1, &mut rng).column(0).into_owned()
}

fn orthonormal_columns(m: &CMatrix) -> CMatrix {
    let cols: Vec<CVector> = (0..m.ncols()).map(|j| m.column(j).into_owned()).collect();
    let basis = linalg::orthonormalize(&cols, 1e-10);
    linalg::columns_to_matrix(m.nrows(), &basis)
}

fn frame_from_vectors(d: usize, k: usize, vecs: &[CVector], rng: &mut ChaCha8Rng) -> CMatrix {
    let mut basis = linalg::orthonormalize(vecs, 1e-8);
    basis.truncate(k);
    while basis.len() < k {
        let g = linalg::random_gaussian(d, 1, rng).column(0).into_owned();
        let mut more = basis.clone();
        more.push(g);
        basis = linalg::orthonormalize(&more, 1e-8);
    }
    linalg::columns_to_matrix(d, &basis)
}

fn unit(d: usize, i: usize) -> CVector {
    let mut v = CVector::from_element(d, ZERO);
    v[i] = ONE;
    v
}

/// Randomized minimization of `sup_n ‖Y_n e‖` over projections of corank
/// `floor(d·t)`.
///
/// Starts: the best diagonal projection, single-term spectral projections,
/// greedy deflation and random frames. The budget of objective
/// evaluations is split across [`RESTARTS`] independent descents that run
/// in parallel and are merged in restart order, so the result depends only
/// on `(seq, t, budget, seed)`.
pub fn mu_search(seq: &MartingaleSequence, t: f64, budget: usize, seed: u64) -> Result<MuEstimate> {
    check_t(t)?;
    let d = seq.ambient().dim();
    let alg = *seq.ambient();
    let k = corank_budget(d, t);
    if k == 0 || seq.is_empty() {
        let e = Projection::identity(alg);
        return Ok(MuEstimate {
            t,
            value: mu_eval(seq, &e)?,
            witness: Some(e),
            direction: Direction::UpperBound,
            method: Method::GrassmannSearch,
            iterations: 1,
            seed,
        });
    }
    let land = Landscape::new(seq, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<CMatrix> = Vec::new();

    // best diagonal projection
    if d <= MAX_EXHAUSTIVE_DIM {
        let est = mu_diag_exhaustive(seq, t)?;
        let e = est.witness.expect("exhaustive search returns a witness");
        let dropped: Vec<CVector> = (0..d)
            .filter(|&i| e.matrix()[(i, i)].re < 0.5)
            .map(|i| unit(d, i))
            .collect();
        starts.push(frame_from_vectors(d, k, &dropped, &mut rng));
    } else {
        let mut walker = Walker::new(&land, seed);
        let mut dropped: Vec<usize> = Vec::new();
        while dropped.len() < k {
            let frame = linalg::columns_to_matrix(d, &dropped.iter().map(|&i| unit(d, i)).collect::<Vec<_>>());
            let probe = walker.probe(&frame, f64::INFINITY, f64::INFINITY);
            let v = &probe.active[0].1;
            let pick = (0..d)
                .filter(|i| !dropped.contains(i))
                .max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm()).then(b.cmp(&a)))
                .expect("corank below dimension");
            dropped.push(pick);
        }
        let cols: Vec<CVector> = dropped.iter().map(|&i| unit(d, i)).collect();
        starts.push(linalg::columns_to_matrix(d, &cols));
    }

    // spectral starts: discard the top eigenvectors of one term
    let nterms = land.order.len();
    let picks = nterms.min(MAX_SPECTRAL_STARTS);
    for j in 0..picks {
        let n = land.order[j * nterms / picks];
        starts.push(frame_from_vectors(d, k, &land.top_eigvecs(n, k), &mut rng));
    }

    // greedy deflation
    {
        let mut walker = Walker::new(&land, seed ^ 1);
        let mut cols: Vec<CVector> = Vec::new();
        while cols.len() < k {
            let frame = linalg::columns_to_matrix(d, &cols);
            let probe = walker.probe(&frame, f64::INFINITY, f64::INFINITY);
            match probe.active.first() {
                Some((_, v, _)) => cols.push(v.clone()),
                None => break,
            }
            cols = linalg::orthonormalize(&cols, 1e-10);
        }
        starts.push(frame_from_vectors(d, k, &cols, &mut rng));
    }

    while starts.len() < RESTARTS {
        let g = linalg::random_gaussian(d, k, &mut rng);
        starts.push(orthonormal_columns(&g));
    }

    // rank the starts; they also stay candidates for the final answer
    let mut scored: Vec<(f64, usize)> = starts.iter().enumerate().map(|(i, w)| (land.estimate(w), i)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let used = starts.len();
    let per_restart = budget.saturating_sub(used) / RESTARTS;

    let chosen: Vec<(usize, CMatrix)> = (0..RESTARTS)
        .map(|r| (r, starts[scored[r % scored.len()].1].clone()))
        .collect();
    let results: Vec<(f64, CMatrix, usize)> = chosen
        .into_par_iter()
        .map(|(r, w0)| {
            let mut walker = Walker::new(
                &land,
                seed.wrapping_add(1 + r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let w = walker.descend(w0, per_restart);
            (land.estimate(&w), w, walker.evals)
        })
        .collect();

    let mut best_value = scored[0].0;
    let mut best_frame = starts[scored[0].1].clone();
    let mut evals = used;
    for (value, w, n) in results {
        evals += n;
        if value < best_value {
            best_value = value;
            best_frame = w;
        }
    }
    let witness = Projection::from_frame(alg, &best_frame)?.complement();
    let value = mu_eval(seq, &witness)?;
    Ok(MuEstimate {
        t,
        value,
        witness: Some(witness),
        direction: Direction::UpperBound,
        method: Method::GrassmannSearch,
        iterations: evals,
        seed,
    })
}

/// `δ√N`, a certified lower bound for `μ_t^c((𝔼_n X_N)_n)` when `t ≤ t′`.
pub fn certified_estimate(p: f64, t: f64, n: usize) -> Result<(MuEstimate, bool)> {
    let k = ChainConstants::new(p)?;
    Ok((
        MuEstimate {
            t,
            value: k.delta * (n as f64).sqrt(),
            witness: None,
            direction: Direction::CertifiedLowerBound,
            method: Method::AnalyticCertificate,
            iterations: 0,
            seed: 0,
        },
        t <= k.t_prime,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub n: usize,
    pub corank: usize,
    pub certified: f64,
    pub certificate_applies: bool,
    pub searched: f64,
    pub diagonal: Option<f64>,
    pub evaluations: usize,
    pub ordering_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub p: f64,
    pub t: f64,
    pub t_prime: f64,
    pub delta: f64,
    pub budget: usize,
    pub seed: u64,
    pub rows: Vec<GrowthRow>,
    /// Least-squares slope of `ln(searched)` against `ln N`.
    pub slope: f64,
}

impl GrowthReport {
    pub fn ordering_holds(&self) -> bool {
        self.rows.iter().all(|r| r.ordering_holds)
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// For each `N`: the certified lower bound `δ√N`, the searched upper bound
/// and, when `N ≤ 20`, the exact diagonal value, on `(𝔼_n X_N)_{n ≤ N}`.
pub fn growth_experiment(p: f64, t: f64, n_list: &[usize], budget: usize, seed: u64) -> Result<GrowthReport> {
    check_t(t)?;
    let k = ChainConstants::new(p)?;
    let rows = n_list
        .iter()
        .map(|&n| {
            let seq = martingale_of_xn(n)?;
            let searched = mu_search(&seq, t, budget, seed)?;
            let diagonal = if n <= MAX_EXHAUSTIVE_DIM {
                Some(mu_diag_exhaustive(&seq, t)?.value)
            } else {
                None
            };
            let certified = k.delta * (n as f64).sqrt();
            let ordering_holds =
                certified <= searched.value && diagonal.is_none_or(|dv| searched.value <= dv * (1.0 + 1e-9));
            Ok(GrowthRow {
                n,
                corank: corank_budget(n, t),
                certified,
                certificate_applies: t <= k.t_prime,
                searched: searched.value,
                diagonal,
                evaluations: searched.iterations,
                ordering_holds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.searched.ln()).collect();
    let slope = if rows.len() >= 2 { fit_slope(&xs, &ys) } else { f64::NAN };
    Ok(GrowthReport {
        p,
        t,
        t_prime: k.t_prime,
        delta: k.delta,
        budget,
        seed,
        rows,
        slope,
    })
}

/// Exponent used for the chain constants in [`au_obstruction_report`].
pub const DEFAULT_CHAIN_EXPONENT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionRow {
    pub n: usize,
    /// `ln(δ (N!)^{1/p−1/2} N^{−2})`.
    pub ln_bound: f64,
    /// The bound itself; `+∞` once it overflows.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub p: f64,
    pub chain_exponent: f64,
    pub t: f64,
    pub delta: f64,
    pub t_prime: f64,
    pub certificate_applies: bool,
    /// `1/p − 1/2`.
    pub exponent: f64,
    pub rows: Vec<ObstructionRow>,
    /// Smallest `N` from which the bounds increase strictly up to the end.
    pub increasing_from: Option<usize>,
    pub diverges: bool,
    pub conclusion: String,
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Certified lower bounds `δ (N!)^{1/p−1/2} N^{−2}` for `N = 1..=n_max`,
/// evaluated in the log domain.
pub fn au_obstruction_report(p: f64, t: f64, n_max: usize) -> Result<ObstructionReport> {
    au_obstruction_report_with(p, DEFAULT_CHAIN_EXPONENT, t, n_max)
}

pub fn au_obstruction_report_with(p: f64, chain_exponent: f64, t: f64, n_max: usize) -> Result<ObstructionReport> {
    if !(1.0..2.0).contains(&p) {
        return Err(Error::InvalidExponent(p));
    }
    if n_max == 0 {
        return Err(Error::OutOfRange("n_max must be at least 1".into()));
    }
    let k = ChainConstants::new(chain_exponent)?;
    let exponent = 1.0 / p - 0.5;
    let rows: Vec<ObstructionRow> = (1..=n_max)
        .map(|n| {
            let ln_bound = k.delta.ln() + exponent * ln_factorial(n) - 2.0 * (n as f64).ln();
            ObstructionRow {
                n,
                ln_bound,
                bound: ln_bound.exp(),
            }
        })
        .collect();
    let mut increasing_from = Some(n_max);
    for i in (1..rows.len()).rev() {
        if rows[i].ln_bound > rows[i - 1].ln_bound {
            increasing_from = Some(rows[i - 1].n);
        } else {
            break;
        }
    }
    if rows.len() < 2 {
        increasing_from = None;
    }
    let diverges = exponent > 0.0
        && increasing_from.is_some()
        && rows.last().map(|r| r.ln_bound) > rows.first().map(|r| r.ln_bound);
    let conclusion = if diverges {
        format!(
            "lower bounds on mu^c_(t/2) grow like (N!)^{exponent:.4}/N^2 without bound; the maximal rearrangement of the \
             martingale is infinite, so it cannot converge almost uniformly in L_{p}"
        )
    } else {
        format!("no divergence detected up to N = {n_max}")
    };
    Ok(ObstructionReport {
        p,
        chain_exponent,
        t,
        delta: k.delta,
        t_prime: k.t_prime,
        certificate_applies: t <= k.t_prime,
        exponent,
        rows,
        increasing_from,
        diverges,
        conclusion,
    })
}

/// A Haar-random projection of the given corank.
pub fn random_projection_of_corank<R: Rng>(alg: TracialAlgebra, corank: usize, rng: &mut R) -> Result<Projection> {
    let g = linalg::random_gaussian(alg.dim(), corank, rng);
    Ok(Projection::from_frame(alg, &orthonormal_columns(&g))?.complement())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Operator;

    #[test]
    fn eval_reference_values() {
        let seq = martingale_of_xn(4).unwrap();
        let alg = *seq.ambient();
        assert!((mu_eval(&seq, &Projection::identity(alg)).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(mu_eval(&seq, &Projection::zero(alg)).unwrap(), 0.0);
        let e = Projection::diagonal(alg, &[false, true, true, true]).unwrap();
        assert!((mu_eval(&seq, &e).unwrap() - 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_reference() {
        let seq = martingale_of_xn(4).unwrap();
        let est = mu_diag_exhaustive(&seq, 0.25).unwrap();
        assert!((est.value - 12f64.sqrt()).abs() < 1e-9);
        assert_eq!(est.witness.as_ref().unwrap().corank(), 1);
        assert_eq!(est.iterations, 4);

        let none = mu_diag_exhaustive(&seq, 0.2).unwrap();
        assert!((none.value - 4.0).abs() < 1e-12);

        let seq8 = martingale_of_xn(8).unwrap();
        let vals: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .map(|k| mu_diag_exhaustive(&seq8, k / 8.0).unwrap().value)
            .collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-12));

        let big = martingale_of_xn(21).unwrap();
        assert!(matches!(
            mu_diag_exhaustive(&big, 0.1),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn corank_budget_never_exceeds_t() {
        assert_eq!(corank_budget(10, 0.1), 1);
        assert_eq!(corank_budget(128, 0.1), 12);
        assert_eq!(corank_budget(8, 0.1), 0);
        for d in 1..50 {
            for i in 1..20 {
                let t = i as f64 / 20.0;
                assert!(corank_budget(d, t) as f64 <= d as f64 * t);
            }
        }
    }

    #[test]
    fn search_single_term() {
        let alg = TracialAlgebra::normalized(2);
        let y = Operator::diagonal(alg, &[3.0, 1.0]).unwrap();
        let seq = MartingaleSequence::from_terms(alg, vec![y]).unwrap();
        let est = mu_search(&seq, 0.5, 200, 1).unwrap();
        assert!((est.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn search_beats_diagonal_and_is_deterministic() {
        let seq = martingale_of_xn(8).unwrap();
        let diag = mu_diag_exhaustive(&seq, 0.25).unwrap();
        let a = mu_search(&seq, 0.25, 400, 7).unwrap();
        let b = mu_search(&seq, 0.25, 400, 7).unwrap();
        assert!(a.value <= diag.value + 1e-12);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let w = a.witness.unwrap();
        assert!(w.normalized_corank() <= 0.25 + 1e-12);
        assert!((mu_eval(&seq, &w).unwrap() - a.value).abs() < 1e-9);
    }

    #[test]
    fn obstruction_reference_values() {
        let r = au_obstruction_report(1.0, 1e-3, 12).unwrap();
        let tenth = &r.rows[9];
        let expected = r.delta * (ln_factorial(10) / 2.0).exp() / 100.0;
        assert!((tenth.bound - expected).abs() < 1e-12);
        assert!(r.increasing_from.unwrap() <= 5 && r.diverges);
        assert!(au_obstruction_report(2.0, 1e-3, 10).is_err());
        let r = au_obstruction_report(1.5, 1e-3, 100).unwrap();
        assert!(r.diverges && r.rows[99].ln_bound > r.rows[0].ln_bound);
    }

    #[test]
    fn slope_fit() {
        let x: Vec<f64> = (1..6).map(|i| (i as f64).ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + 2.0).collect();
        assert!((fit_slope(&x, &y) - 0.5).abs() < 1e-12);
    }
}
