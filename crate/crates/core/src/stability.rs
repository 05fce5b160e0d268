//! Asymptotic stability of guarded cores and the resulting detectability verdict.
//!
//! Stability of switched systems is undecidable in general, so the engine
//! searches for certificates in both directions and answers `Unknown` when
//! neither search succeeds. Analysis runs per strongly connected component of
//! the transition graph: an execution eventually stays in one component, so the
//! core is stable when every component is.

use nalgebra::{Cholesky, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::{
    self, autonomous_part, build_abstractions, build_core, restrict, unobservable_modes, DecompositionError,
    GuardedCore,
};
use crate::location::{location_observability_test, loop_reset_condition, LocationReport, LoopResetReport};
use crate::ode::flow_map;
use crate::subspace::{self, Matrix, DEFAULT_TOL};
use crate::system::SwitchingSystem;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("Lyapunov family has mixed dimensions ({0} and {1})")]
    DimensionMismatch(usize, usize),
    #[error("witness refers to a missing mode or edge: {0}")]
    BadWitness(String),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Stable,
    Unstable,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Abstraction {
    H1,
    H2,
}

/// A periodic execution whose state grows by `growth` every period.
///
/// `modes[k]` is held for `dwell[k]` and then left along `edges[k]`. An empty
/// edge list means the first mode is held forever.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub modes: Vec<String>,
    pub dwell: Vec<f64>,
    pub edges: Vec<(String, String)>,
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    CommonLyapunov {
        #[serde(serialize_with = "crate::ser::matrix")]
        p: Matrix,
    },
    /// Every mode Hurwitz and every cycle uses an edge that resets to the origin.
    PerModeHurwitzWithZeroResetCycle,
    /// Single Hurwitz mode whose self-loops can only fire at the origin.
    GuardAtOrigin,
    /// Single Hurwitz mode without self-loops.
    Hurwitz,
    AbstractionStable {
        which: Abstraction,
        inner: Box<Certificate>,
    },
    DivergentWitness(Witness),
    /// Verdict assembled from the strongly connected components.
    ComponentWise,
    /// Empty core.
    Trivial,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentVerdict {
    pub members: Vec<String>,
    pub transient: bool,
    pub verdict: StabilityVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub status: Status,
    pub certificate: Certificate,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentVerdict>,
}

impl StabilityVerdict {
    fn leaf(status: Status, certificate: Certificate) -> Self {
        Self { status, certificate, components: Vec::new() }
    }

    pub fn stable(certificate: Certificate) -> Self {
        Self::leaf(Status::Stable, certificate)
    }

    pub fn unstable(witness: Witness) -> Self {
        Self::leaf(Status::Unstable, Certificate::DivergentWitness(witness))
    }

    pub fn unknown() -> Self {
        Self::leaf(Status::Unknown, Certificate::None)
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.certificate {
            Certificate::DivergentWitness(w) => Some(w),
            _ => self.components.iter().find_map(|c| c.verdict.witness()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub tol: f64,
    pub dwell_grid: Vec<f64>,
    /// Dwell combinations closest to this value are tried first.
    pub reference_dwell: f64,
    pub max_cycle_len: usize,
    pub max_witness_evaluations: usize,
    pub lyapunov_margin: f64,
    pub lyapunov_max_iter: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            dwell_grid: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            reference_dwell: 0.1,
            max_cycle_len: 6,
            max_witness_evaluations: 200_000,
            lyapunov_margin: 1e-3,
            lyapunov_max_iter: 500,
        }
    }
}

impl StabilityConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

fn spectral_abscissa(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// All eigenvalues strictly in the half-plane `Re < −tol`.
pub fn hurwitz(a: &Matrix, tol: f64) -> bool {
    spectral_abscissa(a) < -tol
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn sym(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn max_eig(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.max()
}

fn min_eig(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

fn clip_below(m: &Matrix, floor: f64) -> Matrix {
    let eig = SymmetricEigen::new(sym(m));
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    &eig.eigenvectors * Matrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Jump constraint `V(R x) ≤ V(x)` for `x` in the span of `basis`.
#[derive(Debug, Clone)]
struct JumpConstraint {
    reset: Matrix,
    basis: Matrix,
}

/// `A'P + PA ≺ 0` for every flow, `P ≻ 0` and jumps non-increasing.
pub fn verify_lyapunov(p: &Matrix, flows: &[Matrix], tol: f64) -> bool {
    verify_with_jumps(p, flows, &[], tol)
}

fn verify_with_jumps(p: &Matrix, flows: &[Matrix], jumps: &[JumpConstraint], tol: f64) -> bool {
    let scale = p.amax().max(1.0);
    min_eig(p) > tol
        && flows.iter().all(|a| max_eig(&(a.transpose() * p + p * a)) < -tol * scale)
        && jumps.iter().all(|j| {
            let w = &j.basis;
            let rw = &j.reset * w;
            max_eig(&(rw.transpose() * p * &rw - w.transpose() * p * w)) <= tol * scale
        })
}

/// Orthonormal basis of symmetric `d×d` matrices under the Frobenius product.
fn sym_basis(d: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            let mut e = Matrix::zeros(d, d);
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                e[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                e[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
            }
            out.push(e);
        }
    }
    out
}

fn sym_coords(m: &Matrix, basis: &[Matrix]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(basis.len(), basis.iter().map(|e| m.dot(e)))
}

fn sym_from_coords(c: &nalgebra::DVector<f64>, basis: &[Matrix], d: usize) -> Matrix {
    basis.iter().zip(c.iter()).fold(Matrix::zeros(d, d), |acc, (e, &x)| acc + e * x)
}

/// A linear map from `P` to a symmetric matrix that must dominate `floor · I`.
struct ConeMap {
    out_dim: usize,
    floor: f64,
    matrix: Matrix,
}

fn lyapunov_search(
    flows: &[Matrix],
    jumps: &[JumpConstraint],
    margin: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Option<Matrix>, StabilityError> {
    let Some(first) = flows.first() else { return Ok(None) };
    let d = first.nrows();
    if let Some(bad) = flows.iter().find(|a| a.nrows() != d || a.ncols() != d) {
        return Err(StabilityError::DimensionMismatch(d, bad.nrows()));
    }
    // Cheap candidates first: the identity, each mode's own Lyapunov solution
    // and their sum. The sum also seeds the projection iteration below.
    let identity = Matrix::identity(d, d);
    let own: Vec<Matrix> = flows.iter().filter_map(|a| lyapunov_solve(a, &identity)).collect();
    let seed = own.iter().fold(Matrix::zeros(d, d), |acc, p| acc + p);
    let scale = seed.amax().max(f64::MIN_POSITIVE);
    let seed = if own.len() == flows.len() { seed / scale } else { identity.clone() };
    for candidate in std::iter::once(&identity).chain(&own).chain(std::iter::once(&seed)) {
        if verify_with_jumps(candidate, flows, jumps, tol) {
            return Ok(Some(candidate.clone()));
        }
    }
    Ok(alternating_projections(flows, jumps, &seed, margin, tol, max_iter))
}

/// Alternating projections between the affine graph `{(P, L_k(P))}` and the
/// product of shifted PSD cones `{P ⪰ I, L_k(P) ⪰ floor_k I}`.
fn alternating_projections(
    flows: &[Matrix],
    jumps: &[JumpConstraint],
    start: &Matrix,
    margin: f64,
    tol: f64,
    max_iter: usize,
) -> Option<Matrix> {
    let d = start.nrows();
    let basis = sym_basis(d);
    let s = basis.len();
    let build = |f: &dyn Fn(&Matrix) -> Matrix, out_dim: usize, floor: f64| {
        let out_basis = sym_basis(out_dim);
        let mut matrix = Matrix::zeros(out_basis.len(), s);
        for (col, e) in basis.iter().enumerate() {
            matrix.set_column(col, &sym_coords(&f(e), &out_basis));
        }
        ConeMap { out_dim, floor, matrix }
    };
    let mut maps = Vec::new();
    for a in flows {
        maps.push(build(&|p: &Matrix| -(a.transpose() * p + p * a), d, margin));
    }
    for j in jumps.iter().filter(|j| j.basis.ncols() > 0) {
        let w = j.basis.clone();
        let rw = &j.reset * &w;
        // aim strictly inside so the limit point verifies; an identity-like
        // reset makes this target unreachable but leaves the check satisfied
        maps.push(build(&|p: &Matrix| w.transpose() * p * &w - rw.transpose() * p * &rw, w.ncols(), margin));
    }
    let mut normal = Matrix::identity(s, s);
    for m in &maps {
        normal += m.matrix.transpose() * &m.matrix;
    }
    let chol = Cholesky::new(normal).expect("identity plus Gram matrix is positive definite");
    let out_bases: Vec<Vec<Matrix>> = maps.iter().map(|m| sym_basis(m.out_dim)).collect();

    let start = clip_below(start, 1e-3);
    let mut p = sym_coords(&(&start / min_eig(&start)), &basis);
    for _ in 0..max_iter {
        let p_mat = sym_from_coords(&p, &basis, d);
        let mut rhs = sym_coords(&clip_below(&p_mat, 1.0), &basis);
        for (m, ob) in maps.iter().zip(&out_bases) {
            let q = sym_from_coords(&(&m.matrix * &p), ob, m.out_dim);
            rhs += m.matrix.transpose() * sym_coords(&clip_below(&q, m.floor), ob);
        }
        p = chol.solve(&rhs);
        let candidate = sym_from_coords(&p, &basis, d);
        if verify_with_jumps(&candidate, flows, jumps, tol) {
            return Some(candidate);
        }
    }
    None
}

/// Solves `A'P + PA = −Q` through the Kronecker form; `None` when singular.
pub fn lyapunov_solve(a: &Matrix, q: &Matrix) -> Option<Matrix> {
    let d = a.nrows();
    let eye = Matrix::identity(d, d);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = nalgebra::DVector::from_column_slice((-q).as_slice());
    let x = op.lu().solve(&rhs)?;
    Some(sym(&Matrix::from_column_slice(d, d, x.as_slice())))
}

/// Common quadratic Lyapunov function for a family of flows; `None` is inconclusive.
pub fn common_quadratic_lyapunov(
    flows: &[Matrix],
    margin: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Option<Matrix>, StabilityError> {
    lyapunov_search(flows, &[], margin, tol, max_iter)
}

fn negligible(m: &Matrix, reference: &Matrix, tol: f64) -> bool {
    m.amax() <= tol * reference.amax().max(1.0)
}

fn all_hurwitz(core: &GuardedCore, tol: f64) -> bool {
    core.a22.iter().all(|a| hurwitz(a, tol))
}

fn single_mode_certificate(core: &GuardedCore, tol: f64) -> Option<Certificate> {
    if core.len() != 1 || !hurwitz(&core.a22[0], tol) {
        return None;
    }
    let loops: Vec<_> = core.edges.iter().filter(|e| e.from == 0 && e.to == 0).collect();
    if loops.is_empty() {
        return Some(Certificate::Hurwitz);
    }
    loops.iter().all(|e| negligible(&e.effective_reset(), &e.reset, tol)).then_some(Certificate::GuardAtOrigin)
}

fn lyapunov_certificate(core: &GuardedCore, cfg: &StabilityConfig) -> Option<Certificate> {
    if !all_hurwitz(core, cfg.tol) {
        return None;
    }
    let d = core.dim(0);
    if core.a22.iter().any(|a| a.nrows() != d) {
        return None;
    }
    let jumps: Vec<JumpConstraint> =
        core.edges.iter().map(|e| JumpConstraint { reset: e.reset.clone(), basis: e.guard.basis().clone() }).collect();
    lyapunov_search(&core.a22, &jumps, cfg.lyapunov_margin, cfg.tol, cfg.lyapunov_max_iter)
        .ok()
        .flatten()
        .map(|p| Certificate::CommonLyapunov { p })
}

/// Every mode Hurwitz and the edges with a nonzero effective reset form no cycle.
fn zero_reset_cycle_certificate(core: &GuardedCore, tol: f64) -> Option<Certificate> {
    if !all_hurwitz(core, tol) {
        return None;
    }
    let live: Vec<(usize, usize)> = core
        .edges
        .iter()
        .filter(|e| !negligible(&e.effective_reset(), &e.reset, tol))
        .map(|e| (e.from, e.to))
        .collect();
    let acyclic = decomposition::scc_decomposition(core.len(), &live).iter().all(|c| c.transient);
    acyclic.then_some(Certificate::PerModeHurwitzWithZeroResetCycle)
}

fn stable_certificate(core: &GuardedCore, cfg: &StabilityConfig) -> Option<Certificate> {
    single_mode_certificate(core, cfg.tol)
        .or_else(|| lyapunov_certificate(core, cfg))
        .or_else(|| zero_reset_cycle_certificate(core, cfg.tol))
}

/// Composed map of one period: `R(e_L) e^{A τ_L} ⋯ R(e_1) e^{A τ_1}`, plus the
/// pre-jump prefixes used for guard admissibility.
fn cycle_maps(core: &GuardedCore, modes: &[usize], edges: &[usize], dwell: &[f64]) -> (Matrix, Vec<Matrix>) {
    let start = modes[0];
    let mut acc = Matrix::identity(core.dim(start), core.dim(start));
    let mut prefixes = Vec::with_capacity(edges.len());
    for (k, &q) in modes.iter().enumerate() {
        acc = flow_map(&core.a22[q], dwell[k]) * acc;
        if let Some(&e) = edges.get(k) {
            prefixes.push(acc.clone());
            acc = &core.edges[e].reset * acc;
        }
    }
    (acc, prefixes)
}

/// Largest `|λ| > 1 + tol` among eigenvalues of the period map that some
/// admissible execution can realize.
fn admissible_growth(core: &GuardedCore, edges: &[usize], map: &Matrix, prefixes: &[Matrix], tol: f64) -> Option<f64> {
    let rho = spectral_radius(map);
    if rho <= 1.0 + tol {
        return None;
    }
    if edges.iter().all(|&e| core.edges[e].guard.is_full()) {
        return Some(rho);
    }
    let n = map.nrows();
    let mut real: Vec<f64> = map
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * z.norm().max(1.0) && z.re.abs() > 1.0 + tol)
        .map(|z| z.re)
        .collect();
    real.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    real.into_iter().find_map(|lambda| {
        let shifted = map - Matrix::identity(n, n) * lambda;
        let mut admissible = subspace::kernel(&shifted, 1e-7);
        for (&e, prefix) in edges.iter().zip(prefixes) {
            let guard = &core.edges[e].guard;
            if guard.is_full() {
                continue;
            }
            let pulled = subspace::preimage(prefix, guard).ok()?;
            admissible = subspace::intersect(&admissible, &pulled).ok()?;
        }
        (!admissible.is_zero()).then_some(lambda.abs())
    })
}

/// Simple cycles as edge-index lists, each rooted at its smallest mode.
fn simple_cycles(core: &GuardedCore, max_len: usize) -> Vec<Vec<usize>> {
    fn walk(
        core: &GuardedCore,
        root: usize,
        at: usize,
        path: &mut Vec<usize>,
        on_path: &mut Vec<bool>,
        max_len: usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        for (idx, e) in core.edges.iter().enumerate().filter(|(_, e)| e.from == at) {
            if e.to == root {
                path.push(idx);
                out.push(path.clone());
                path.pop();
            } else if e.to > root && !on_path[e.to] && path.len() + 1 < max_len {
                on_path[e.to] = true;
                path.push(idx);
                walk(core, root, e.to, path, on_path, max_len, out);
                path.pop();
                on_path[e.to] = false;
            }
        }
    }
    let mut out = Vec::new();
    for root in 0..core.len() {
        let mut on_path = vec![false; core.len()];
        on_path[root] = true;
        walk(core, root, root, &mut Vec::new(), &mut on_path, max_len, &mut out);
    }
    out.sort_by_key(Vec::len);
    out
}

/// Dwell vectors of length `len` over the grid, nearest to the reference first.
fn dwell_combinations(cfg: &StabilityConfig, len: usize) -> Vec<Vec<f64>> {
    let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..len {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                cfg.dwell_grid.iter().map(move |&t| {
                    let mut next = c.clone();
                    next.push(t);
                    next
                })
            })
            .collect();
    }
    let spread = |c: &[f64]| c.iter().map(|t| (t / cfg.reference_dwell).ln().abs()).fold(0.0, f64::max);
    combos.sort_by(|a, b| spread(a).total_cmp(&spread(b)));
    combos
}

/// Bounded search for a diverging periodic execution.
pub fn find_divergent_witness(core: &GuardedCore, cfg: &StabilityConfig) -> Option<Witness> {
    for (q, a) in core.a22.iter().enumerate() {
        if spectral_abscissa(a) > cfg.tol {
            return Some(Witness {
                modes: vec![core.labels[q].clone()],
                dwell: vec![1.0],
                edges: Vec::new(),
                growth: spectral_radius(&flow_map(a, 1.0)),
            });
        }
    }
    let mut budget = cfg.max_witness_evaluations;
    for cycle in simple_cycles(core, cfg.max_cycle_len) {
        let modes: Vec<usize> = cycle.iter().map(|&e| core.edges[e].from).collect();
        for dwell in dwell_combinations(cfg, cycle.len()) {
            if budget == 0 {
                return None;
            }
            budget -= 1;
            let (map, prefixes) = cycle_maps(core, &modes, &cycle, &dwell);
            if let Some(growth) = admissible_growth(core, &cycle, &map, &prefixes, cfg.tol) {
                return Some(Witness {
                    modes: modes.iter().map(|&q| core.labels[q].clone()).collect(),
                    dwell,
                    edges: cycle
                        .iter()
                        .map(|&e| (core.labels[core.edges[e].from].clone(), core.labels[core.edges[e].to].clone()))
                        .collect(),
                    growth,
                });
            }
        }
    }
    None
}

/// Period map of a witness, recomputed from the core.
pub fn witness_map(core: &GuardedCore, w: &Witness) -> Result<Matrix, StabilityError> {
    let modes = w
        .modes
        .iter()
        .map(|l| core.index_of(l).ok_or_else(|| StabilityError::BadWitness(format!("mode {l:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let edges = w
        .edges
        .iter()
        .map(|(f, t)| {
            let (fi, ti) = (core.index_of(f), core.index_of(t));
            core.edges
                .iter()
                .position(|e| Some(e.from) == fi && Some(e.to) == ti)
                .ok_or_else(|| StabilityError::BadWitness(format!("edge ({f},{t})")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if w.dwell.len() != modes.len() || (!edges.is_empty() && edges.len() != modes.len()) {
        return Err(StabilityError::BadWitness("length mismatch".into()));
    }
    for (k, &e) in edges.iter().enumerate() {
        let next = modes[(k + 1) % modes.len()];
        if core.edges[e].from != modes[k] || core.edges[e].to != next {
            return Err(StabilityError::BadWitness(format!("edge {k} does not continue the cycle")));
        }
    }
    Ok(cycle_maps(core, &modes, &edges, &w.dwell).0)
}

/// Spectral radius of the recomputed period map.
pub fn replay_witness(core: &GuardedCore, w: &Witness) -> Result<f64, StabilityError> {
    witness_map(core, w).map(|m| spectral_radius(&m))
}

fn analyze_component(core: &GuardedCore, cfg: &StabilityConfig) -> StabilityVerdict {
    if let Some(cert) = single_mode_certificate(core, cfg.tol).or_else(|| lyapunov_certificate(core, cfg)) {
        return StabilityVerdict::stable(cert);
    }
    if core.is_unguarded() {
        if let Some(cert) = zero_reset_cycle_certificate(core, cfg.tol) {
            return StabilityVerdict::stable(cert);
        }
    } else {
        let (h1, h2) = build_abstractions(core);
        for (which, h) in [(Abstraction::H1, &h1), (Abstraction::H2, &h2)] {
            if let Some(inner) = stable_certificate(h, cfg) {
                return StabilityVerdict::stable(Certificate::AbstractionStable { which, inner: Box::new(inner) });
            }
        }
    }
    match find_divergent_witness(core, cfg) {
        Some(w) => StabilityVerdict::unstable(w),
        None => StabilityVerdict::unknown(),
    }
}

/// Tri-state stability of a guarded core, analyzed per strongly connected component.
pub fn guarded_stability(core: &GuardedCore, cfg: &StabilityConfig) -> StabilityVerdict {
    if core.is_empty() {
        return StabilityVerdict::stable(Certificate::Trivial);
    }
    let components: Vec<ComponentVerdict> = decomposition::scc_decomposition(core.len(), &core.edge_pairs())
        .into_iter()
        .map(|c| ComponentVerdict {
            members: c.members.iter().map(|&i| core.labels[i].clone()).collect(),
            transient: c.transient,
            verdict: analyze_component(&core.restrict(&c.members), cfg),
        })
        .collect();
    let (status, certificate) = if let Some(w) = components.iter().find_map(|c| c.verdict.witness()) {
        (Status::Unstable, Certificate::DivergentWitness(w.clone()))
    } else if components.iter().all(|c| c.verdict.status == Status::Stable) {
        (Status::Stable, Certificate::ComponentWise)
    } else {
        (Status::Unknown, Certificate::None)
    };
    StabilityVerdict { status, certificate, components }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DetectabilityStatus {
    Detectable,
    NotDetectable,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct DetectabilityVerdict {
    pub status: DetectabilityStatus,
    pub cond_i: bool,
    pub cond_ii: bool,
    pub cond_iii: StabilityVerdict,
    pub location: LocationReport,
    pub loop_reset: LoopResetReport,
    pub unobservable_modes: Vec<String>,
    /// Core of the autonomous part restricted to the unobservable modes.
    pub core: Option<GuardedCore>,
    /// Input had non-trivial guards, so only the sufficient direction applies.
    pub guarded_input: bool,
}

pub fn unobservable_core(sys: &SwitchingSystem, tol: f64) -> Result<Option<GuardedCore>, StabilityError> {
    let qhat = unobservable_modes(sys, tol);
    if qhat.is_empty() {
        return Ok(None);
    }
    let restricted = restrict(&autonomous_part(sys), &qhat).map_err(DecompositionError::from)?;
    Ok(Some(build_core(&restricted, tol)?))
}

pub fn detectability(sys: &SwitchingSystem, cfg: &StabilityConfig) -> Result<DetectabilityVerdict, StabilityError> {
    let location = location_observability_test(sys, cfg.tol);
    let loop_reset = loop_reset_condition(sys, cfg.tol);
    let core = unobservable_core(sys, cfg.tol)?;
    let cond_iii = match &core {
        Some(core) => guarded_stability(core, cfg),
        None => StabilityVerdict::stable(Certificate::Trivial),
    };
    let guarded_input = !sys.is_unguarded();
    let (cond_i, cond_ii) = (location.location_observable, loop_reset.holds);
    let status = if cond_i && cond_ii && cond_iii.status == Status::Stable {
        DetectabilityStatus::Detectable
    } else if !guarded_input && (!cond_i || cond_iii.status == Status::Unstable) {
        DetectabilityStatus::NotDetectable
    } else {
        DetectabilityStatus::Unknown
    };
    Ok(DetectabilityVerdict {
        status,
        cond_i,
        cond_ii,
        cond_iii,
        location,
        loop_reset,
        unobservable_modes: unobservable_modes(sys, cfg.tol),
        core,
        guarded_input,
    })
}

/// Location observable and every mode observable.
pub fn observability(sys: &SwitchingSystem, tol: f64) -> bool {
    location_observability_test(sys, tol).location_observable && sys.modes().iter().all(|m| m.is_observable(tol))
}
