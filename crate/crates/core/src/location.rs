//! Location observability: deciding whether the active mode can be recovered
//! from input/output data, and constructing an exponential input that
//! distinguishes every pair of modes.
//!
//! For a pair of modes `(i, h)` the augmented system `S_ih` runs both modes
//! side by side and outputs the difference of their outputs. The pair is
//! indistinguishable under an input exactly when that difference can be kept
//! at zero, which geometric control describes through the maximal controlled
//! invariant subspace `𝒱_ih ⊆ ker C_ih` and a friend gain `K_ih`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::rk4_step;
use crate::subspace::{self, Matrix, Subspace, SubspaceError, Vector};
use crate::system::{ModelError, SwitchingSystem};

#[derive(Debug, Error)]
pub enum LocationError {
    #[error("augmented pair needs two distinct modes, got {0:?} twice")]
    SameMode(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error("subspace is not controlled invariant for the pair")]
    NotControlledInvariant,
    #[error("system is not location observable; unwitnessed pairs: {0:?}")]
    LocationUnobservable(Vec<(String, String)>),
    #[error("no distinguishing input found within the search budget ({lambdas} exponents x {samples} directions)")]
    NoWitnessFound { lambdas: usize, samples: usize },
}

/// The side-by-side system `ż = A_ih z + B_ih u`, `y_ih = C_ih z`.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub i: usize,
    pub h: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl AugmentedPair {
    pub fn new(sys: &SwitchingSystem, i: usize, h: usize) -> Result<Self, LocationError> {
        if i == h {
            return Err(LocationError::SameMode(sys.label(i).to_string()));
        }
        let (mi, mh) = (sys.mode(i), sys.mode(h));
        let (ni, nh) = (mi.state_dim(), mh.state_dim());
        let n = ni + nh;
        let (m, l) = (sys.input_dim(), sys.output_dim());
        let mut a = Matrix::zeros(n, n);
        a.view_mut((0, 0), (ni, ni)).copy_from(&mi.a);
        a.view_mut((ni, ni), (nh, nh)).copy_from(&mh.a);
        let mut b = Matrix::zeros(n, m);
        b.view_mut((0, 0), (ni, m)).copy_from(&mi.b);
        b.view_mut((ni, 0), (nh, m)).copy_from(&mh.b);
        let mut c = Matrix::zeros(l, n);
        c.view_mut((0, 0), (l, ni)).copy_from(&mi.c);
        c.view_mut((0, ni), (l, nh)).copy_from(&(-&mh.c));
        Ok(Self { i, h, a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Builds the augmented pair from mode labels.
pub fn augmented_pair(sys: &SwitchingSystem, i: &str, h: &str) -> Result<AugmentedPair, LocationError> {
    AugmentedPair::new(sys, sys.index_of(i)?, sys.index_of(h)?)
}

/// Iterates `V₀ = ker C`, `V_{k+1} = ker C ∩ A⁻¹(V_k + Im B)` and returns
/// every iterate, ending with the fixed point.
pub fn isa_iterates(pair: &AugmentedPair, tol: f64) -> Vec<Subspace> {
    let ker_c = subspace::kernel(&pair.c, tol);
    let im_b = subspace::image(&pair.b, tol);
    let mut chain = vec![ker_c.clone()];
    loop {
        let current = chain.last().expect("chain is nonempty");
        let widened = subspace::sum(current, &im_b).expect("same ambient");
        let pre = subspace::preimage(&pair.a, &widened).expect("same ambient");
        let next = subspace::intersect(&ker_c, &pre).expect("same ambient");
        let done = next.dim() == current.dim();
        chain.push(next);
        if done || chain.len() > pair.state_dim() + 2 {
            break;
        }
    }
    chain
}

/// Maximal `(A_ih, B_ih)`-controlled invariant subspace contained in `ker C_ih`.
pub fn max_controlled_invariant(pair: &AugmentedPair, tol: f64) -> Subspace {
    isa_iterates(pair, tol).pop().expect("chain is nonempty")
}

/// Whether `A·V ⊆ V + Im B`.
pub fn is_controlled_invariant(a: &Matrix, b: &Matrix, v: &Subspace, tol: f64) -> bool {
    let widened = subspace::sum(v, &subspace::image(b, tol)).expect("same ambient");
    subspace::contains(&widened, &subspace::map(a, v)).expect("same ambient")
}

/// A feedback `K` with `(A + BK)·V ⊆ V`, minimal-norm on `V` and zero on `V^⊥`.
pub fn friend_gain(pair: &AugmentedPair, v: &Subspace, tol: f64) -> Result<Matrix, LocationError> {
    let (n, m) = (pair.state_dim(), pair.input_dim());
    if v.is_zero() || m == 0 {
        return Ok(Matrix::zeros(m, n));
    }
    if !is_controlled_invariant(&pair.a, &pair.b, v, tol) {
        return Err(LocationError::NotControlledInvariant);
    }
    let k = v.dim();
    let mut lhs = Matrix::zeros(n, k + m);
    lhs.columns_mut(0, k).copy_from(v.basis());
    lhs.columns_mut(k, m).copy_from(&pair.b);
    let pinv = lhs.pseudo_inverse(subspace::ABS_FLOOR).expect("pseudo-inverse with nonnegative eps");
    // A v_j = V α_j + B β_j  ⇒  K v_j = −β_j
    let coeffs = pinv * (&pair.a * v.basis());
    let beta = coeffs.rows(k, m).into_owned();
    Ok(-beta * v.basis().transpose())
}

/// Result of checking one ordered pair of modes.
#[derive(Debug, Clone)]
pub struct PairCertificate {
    pub i: usize,
    pub h: usize,
    pub distinguishable: bool,
    /// Least `k < n_i + n_h` with `C_i A_i^k B_i ≠ C_h A_h^k B_h`.
    pub witness_k: Option<usize>,
    pub v_ih: Subspace,
    pub friend: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct LocationReport {
    pub pairs: Vec<PairCertificate>,
    pub location_observable: bool,
}

impl LocationReport {
    pub fn unwitnessed(&self, sys: &SwitchingSystem) -> Vec<(String, String)> {
        self.pairs
            .iter()
            .filter(|p| !p.distinguishable)
            .map(|p| (sys.label(p.i).to_string(), sys.label(p.h).to_string()))
            .collect()
    }

    pub fn pair(&self, i: usize, h: usize) -> Option<&PairCertificate> {
        self.pairs.iter().find(|p| p.i == i && p.h == h)
    }
}

/// Entrywise comparison with tolerance `tol · max(1, largest entry)`.
pub fn markov_differs(x: &Matrix, y: &Matrix, tol: f64) -> bool {
    let scale = x.iter().chain(y.iter()).fold(1.0f64, |acc, v| acc.max(v.abs()));
    x.iter().zip(y.iter()).any(|(a, b)| (a - b).abs() > tol * scale)
}

/// Least `k < n_i + n_h` at which the Markov parameters of modes `i` and `h` differ.
pub fn markov_witness(sys: &SwitchingSystem, i: usize, h: usize, tol: f64) -> Option<usize> {
    let (mi, mh) = (sys.mode(i), sys.mode(h));
    (0..mi.state_dim() + mh.state_dim())
        .find(|&k| markov_differs(&mi.markov_parameter(k), &mh.markov_parameter(k), tol))
}

/// Checks every ordered pair of distinct modes for a Markov-parameter witness.
pub fn location_observability_test(sys: &SwitchingSystem, tol: f64) -> LocationReport {
    let mut pairs = Vec::new();
    for i in 0..sys.len() {
        for h in 0..sys.len() {
            if i == h {
                continue;
            }
            let pair = AugmentedPair::new(sys, i, h).expect("distinct modes");
            let v_ih = max_controlled_invariant(&pair, tol);
            let friend = friend_gain(&pair, &v_ih, tol).ok();
            let witness_k = markov_witness(sys, i, h, tol);
            pairs.push(PairCertificate { i, h, distinguishable: witness_k.is_some(), witness_k, v_ih, friend });
        }
    }
    let location_observable = pairs.iter().all(|p| p.distinguishable);
    LocationReport { pairs, location_observable }
}

/// Outcome for one in-loop edge `(i, i)`.
#[derive(Debug, Clone, Serialize)]
pub struct LoopEdgeCheck {
    pub edge: usize,
    pub mode: String,
    /// Dimension of `Im(R − I) ∩ ker 𝒪_i`.
    pub intersection_dim: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopResetReport {
    pub edges: Vec<LoopEdgeCheck>,
    pub holds: bool,
}

/// For every self-loop, whether the reset can move the state along an
/// unobservable direction: `Im(R(e) − I) ∩ ker 𝒪_i = {0}`.
pub fn loop_reset_condition(sys: &SwitchingSystem, tol: f64) -> LoopResetReport {
    let edges: Vec<LoopEdgeCheck> = sys
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_loop())
        .map(|(idx, e)| {
            let mode = sys.mode(e.from);
            let n = mode.state_dim();
            let jump = subspace::image(&(&e.reset - Matrix::identity(n, n)), tol);
            let unobs = mode.unobservable_subspace(tol);
            let meet = subspace::intersect(&jump, &unobs).expect("same ambient");
            LoopEdgeCheck { edge: idx, mode: mode.label.clone(), intersection_dim: meet.dim(), holds: meet.is_zero() }
        })
        .collect();
    let holds = edges.iter().all(|c| c.holds);
    LoopResetReport { edges, holds }
}

/// Stacked maps from `(z̄, v, v̇, …)` to `(u, u̇, …, u^{(N̄)})` for inputs of
/// the form `u = K z + v` that keep `S_ih` inside `𝒱_ih`:
/// `M̄` stacks `K Â^j`, and `F̄` is unit lower block-triangular with blocks
/// `K Â^{r−c−1} B`, where `Â = A + BK`.
pub fn appendix_blocks(pair: &AugmentedPair, k: &Matrix, nbar: usize) -> (Matrix, Matrix) {
    let (n, m) = (pair.state_dim(), pair.input_dim());
    let a_hat = &pair.a + &pair.b * k;
    let blocks = nbar + 1;
    let mut k_powers = Vec::with_capacity(blocks);
    let mut cur = k.clone();
    for _ in 0..blocks {
        k_powers.push(cur.clone());
        cur = &cur * &a_hat;
    }
    let mut mbar = Matrix::zeros(m * blocks, n);
    for (j, kp) in k_powers.iter().enumerate() {
        mbar.view_mut((j * m, 0), (m, n)).copy_from(kp);
    }
    let mut fbar = Matrix::identity(m * blocks, m * blocks);
    for r in 0..blocks {
        for c in 0..r {
            let block = &k_powers[r - c - 1] * &pair.b;
            fbar.view_mut((r * m, c * m), (m, m)).copy_from(&block);
        }
    }
    (mbar, fbar)
}

/// Input `u(t) = z·e^{λt}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentialInput {
    pub z: Vec<f64>,
    pub lambda: f64,
}

impl ExponentialInput {
    pub fn new(z: Vector, lambda: f64) -> Self {
        Self { z: z.iter().copied().collect(), lambda }
    }

    pub fn z(&self) -> Vector {
        Vector::from_vec(self.z.clone())
    }

    pub fn eval(&self, t: f64) -> Vector {
        self.z() * (self.lambda * t).exp()
    }

    /// `(z, λz, …, λ^N̄ z)`.
    pub fn stacked(&self, nbar: usize) -> Vector {
        let m = self.z.len();
        let mut out = Vector::zeros(m * (nbar + 1));
        let mut scale = 1.0;
        for j in 0..=nbar {
            for (r, zr) in self.z.iter().enumerate() {
                out[j * m + r] = scale * zr;
            }
            scale *= self.lambda;
        }
        out
    }
}

/// Search budget for [`distinguishing_input`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSearch {
    pub lambdas: usize,
    pub samples_per_lambda: usize,
    pub seed: u64,
    /// Minimum relative distance of the stacked input from each avoided subspace.
    pub separation: f64,
}

impl Default for InputSearch {
    fn default() -> Self {
        Self { lambdas: 32, samples_per_lambda: 64, seed: 0x5eed, separation: 1e-6 }
    }
}

/// The subspace of stacked input derivatives that can hold `y_ih ≡ 0`.
#[derive(Debug, Clone)]
pub struct AvoidedSet {
    pub i: usize,
    pub h: usize,
    pub nbar: usize,
    /// `dim B_ih⁻¹(𝒱_ih)`.
    pub nu: usize,
    pub subspace: Subspace,
}

/// Smallest integer `N̄ > n/(m − ν) − 1`, capped at `n + 2`.
pub fn appendix_horizon(n: usize, m: usize, nu: usize) -> usize {
    assert!(nu < m, "F_ih must be a proper subspace of the input space");
    let bound = n as f64 / (m - nu) as f64 - 1.0;
    let nbar = if bound < 0.0 { 0 } else { bound.floor() as usize + 1 };
    nbar.min(n + 2)
}

/// Builds `M̄ 𝒱_ih + F̄ (F_ih × … × F_ih)` for one pair.
pub fn avoided_set(pair: &AugmentedPair, tol: f64) -> Result<AvoidedSet, LocationError> {
    let (n, m) = (pair.state_dim(), pair.input_dim());
    let v = max_controlled_invariant(pair, tol);
    let k = friend_gain(pair, &v, tol)?;
    let f = subspace::preimage(&pair.b, &v)?;
    let nu = f.dim();
    if nu >= m {
        return Err(LocationError::NoWitnessFound { lambdas: 0, samples: 0 });
    }
    let mut nbar = appendix_horizon(n, m, nu);
    loop {
        let (mbar, fbar) = appendix_blocks(pair, &k, nbar);
        let blocks = nbar + 1;
        let mut gens = Matrix::zeros(m * blocks, v.dim() + nu * blocks);
        gens.columns_mut(0, v.dim()).copy_from(&(&mbar * v.basis()));
        let mut diag = Matrix::zeros(m * blocks, nu * blocks);
        for j in 0..blocks {
            diag.view_mut((j * m, j * nu), (m, nu)).copy_from(f.basis());
        }
        gens.columns_mut(v.dim(), nu * blocks).copy_from(&(&fbar * diag));
        let avoided = subspace::image(&gens, tol);
        if !avoided.is_full() || nbar >= n + 2 {
            return Ok(AvoidedSet { i: pair.i, h: pair.h, nbar, nu, subspace: avoided });
        }
        nbar += 1;
    }
}

fn lambda_sequence(count: usize) -> impl Iterator<Item = f64> {
    (0..count).map(|j| {
        let step = j.div_ceil(2) as f64;
        if j == 0 {
            0.0
        } else if j % 2 == 1 {
            step
        } else {
            -step
        }
    })
}

/// Relative distance of `u`'s stacked derivatives from each avoided set.
pub fn input_margins(sets: &[AvoidedSet], u: &ExponentialInput) -> Vec<f64> {
    sets.iter()
        .map(|s| {
            let zb = u.stacked(s.nbar);
            s.subspace.distance(&zb) / zb.norm().max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Finds `(z, λ)` whose stacked derivative vector avoids every pair's
/// output-nulling subspace, trying `λ = 0, 1, −1, 2, −2, …`.
pub fn distinguishing_input(
    sys: &SwitchingSystem,
    tol: f64,
    search: &InputSearch,
) -> Result<ExponentialInput, LocationError> {
    let report = location_observability_test(sys, tol);
    if !report.location_observable {
        return Err(LocationError::LocationUnobservable(report.unwitnessed(sys)));
    }
    let m = sys.input_dim();
    let mut sets = Vec::new();
    for p in &report.pairs {
        sets.push(avoided_set(&AugmentedPair::new(sys, p.i, p.h)?, tol)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    for lambda in lambda_sequence(search.lambdas) {
        for _ in 0..search.samples_per_lambda {
            let mut z = Vector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            let norm = z.norm();
            if norm == 0.0 {
                continue;
            }
            z /= norm;
            let candidate = ExponentialInput::new(z, lambda);
            if input_margins(&sets, &candidate).iter().all(|&d| d > search.separation) {
                return Ok(candidate);
            }
        }
    }
    Err(LocationError::NoWitnessFound { lambdas: search.lambdas, samples: search.samples_per_lambda })
}

/// Per-pair simulation outcome of [`verify_distinguishing_input_detailed`].
#[derive(Debug, Clone, Serialize)]
pub struct PairReplay {
    pub i: String,
    pub h: String,
    /// Smallest, over the probe initial states, of `max_t ‖y_ih(t)‖`.
    pub weakest_peak: f64,
    pub passed: bool,
}

/// Simulates every augmented pair under `u` from the zero state and each
/// basis vector, recording the weakest output peak over `[0, horizon]`.
pub fn verify_distinguishing_input_detailed(
    sys: &SwitchingSystem,
    u: &ExponentialInput,
    horizon: f64,
    dt: f64,
    threshold: f64,
) -> Vec<PairReplay> {
    let steps = (horizon / dt).round() as usize;
    let input = |t: f64| u.eval(t);
    let mut out = Vec::new();
    for i in 0..sys.len() {
        for h in 0..sys.len() {
            if i == h {
                continue;
            }
            let pair = AugmentedPair::new(sys, i, h).expect("distinct modes");
            let n = pair.state_dim();
            let probes = std::iter::once(Vector::zeros(n)).chain((0..n).map(|k| {
                let mut e = Vector::zeros(n);
                e[k] = 1.0;
                e
            }));
            let mut weakest = f64::INFINITY;
            for z0 in probes {
                let mut z = z0;
                let mut peak = (&pair.c * &z).norm();
                for s in 0..steps {
                    z = rk4_step(&pair.a, &pair.b, &z, s as f64 * dt, dt, &input);
                    peak = peak.max((&pair.c * &z).norm());
                }
                weakest = weakest.min(peak);
            }
            out.push(PairReplay {
                i: sys.label(i).to_string(),
                h: sys.label(h).to_string(),
                weakest_peak: weakest,
                passed: weakest > threshold,
            });
        }
    }
    out
}

/// Whether every pair's output stays away from zero under `u` for all probes.
pub fn verify_distinguishing_input(
    sys: &SwitchingSystem,
    u: &ExponentialInput,
    horizon: f64,
    dt: f64,
    threshold: f64,
) -> bool {
    verify_distinguishing_input_detailed(sys, u, horizon, dt, threshold).iter().all(|p| p.passed)
}
