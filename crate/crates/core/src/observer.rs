//! Hybrid state reconstruction from sampled input/output data.
//!
//! At each sample the observer estimates `Y = (y, ẏ, …)` and `U = (u, u̇, …)`
//! by finite differences, keeps the modes whose `Y − ℱ U` lies in `Im 𝒪`, and
//! recovers the continuous state by least squares.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::location::location_observability_test;
use crate::simulate::{Execution, Sample};
use crate::subspace::{self, Matrix, Vector, DEFAULT_TOL};
use crate::system::{ModelError, SwitchingSystem};

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("need {needed} samples around the estimation time, only {available} available")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("invalid observer configuration: {0}")]
    Config(String),
    #[error("stack height {found} is below the mode dimension {needed}")]
    StackHeight { needed: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverConfig {
    /// Points in the finite-difference stencil (odd).
    pub derivative_stencil: usize,
    /// Samples spanned by the stencil; points are spaced evenly across it.
    pub window: usize,
    /// Relative residual below which a mode is consistent with the data.
    pub residual_tol: f64,
    /// Time after each switch during which no estimate is attempted.
    pub dwell_grace: f64,
    /// Estimate every `stride`-th sample.
    pub stride: usize,
    /// Distance used in place of `ε = 0`.
    pub exact_tol: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { derivative_stencil: 9, window: 9, residual_tol: 1e-4, dwell_grace: 0.0, stride: 1, exact_tol: 1e-9 }
    }
}

impl ObserverConfig {
    fn spacing(&self) -> usize {
        (self.window - 1) / (self.derivative_stencil - 1)
    }

    /// Checks the stencil against the stack height the observer will need.
    pub fn validate(&self, height: usize) -> Result<(), ObserverError> {
        let s = self.derivative_stencil;
        if s < 3 || s.is_multiple_of(2) {
            return Err(ObserverError::Config(format!("derivative_stencil must be odd and at least 3, got {s}")));
        }
        if self.window < s || !(self.window - 1).is_multiple_of(s - 1) {
            return Err(ObserverError::Config(format!(
                "window ({}) must be at least the stencil ({s}) with window-1 a multiple of stencil-1",
                self.window
            )));
        }
        if s < height {
            return Err(ObserverError::Config(format!("stencil of {s} points cannot estimate {height} derivatives")));
        }
        if self.stride == 0 || self.residual_tol.is_nan() || self.residual_tol <= 0.0 || self.dwell_grace < 0.0 {
            return Err(ObserverError::Config(
                "stride, residual_tol must be positive and dwell_grace nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Finite-difference weights for derivatives `0..=order` at `x0` on the
/// points `z` (Fornberg's recursion). Row `k` holds the weights of `d^k/dx^k`.
pub fn fd_weights(x0: f64, z: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = z.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    if n == 0 {
        return c;
    }
    let mut c1 = 1.0;
    let mut c4 = z[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = z[i] - x0;
        for j in 0..i {
            let c3 = z[i] - z[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Stacked derivative estimates `(Y, U)` of height `n` at `samples[center]`.
pub fn stacked_output(
    samples: &[Sample],
    center: usize,
    n: usize,
    cfg: &ObserverConfig,
) -> Result<(Vector, Vector), ObserverError> {
    let half = cfg.window / 2;
    if center < half || center + half >= samples.len() {
        return Err(ObserverError::InsufficientSamples { needed: cfg.window, available: samples.len() });
    }
    let idx: Vec<usize> = (0..cfg.derivative_stencil).map(|k| center - half + k * cfg.spacing()).collect();
    let times: Vec<f64> = idx.iter().map(|&i| samples[i].t).collect();
    let w = fd_weights(samples[center].t, &times, n.saturating_sub(1));
    let stack = |get: &dyn Fn(&Sample) -> &[f64]| {
        let dim = get(&samples[center]).len();
        let mut out = Vector::zeros(n * dim);
        for k in 0..n {
            for (weight, &i) in w[k].iter().zip(&idx) {
                for (c, v) in get(&samples[i]).iter().enumerate() {
                    out[k * dim + c] += weight * v;
                }
            }
        }
        out
    };
    Ok((stack(&|s| &s.y), stack(&|s| &s.u)))
}

/// Common stack height that separates modes: `max (n_i + n_h)` over pairs.
pub fn identification_height(sys: &SwitchingSystem) -> usize {
    let mut dims: Vec<usize> = sys.modes().iter().map(|m| m.state_dim()).collect();
    dims.sort_unstable_by(|a, b| b.cmp(a));
    match dims.as_slice() {
        [only] => *only,
        [a, b, ..] => a + b,
        [] => 0,
    }
}

/// Per-mode matrices at a fixed stack height.
#[derive(Debug, Clone)]
pub struct ModeBank {
    pub height: usize,
    entries: Vec<BankEntry>,
}

#[derive(Debug, Clone)]
struct BankEntry {
    obs: Matrix,
    forced: Matrix,
    image: Matrix,
    pinv: Matrix,
    observable_part: Matrix,
    observable: bool,
}

impl BankEntry {
    fn new(mode: &crate::system::LtiMode, height: usize) -> Result<Self, ObserverError> {
        if height < mode.state_dim() {
            return Err(ObserverError::StackHeight { needed: mode.state_dim(), found: height });
        }
        let obs = mode.observability_matrix_of_height(height);
        let image = subspace::image(&obs, DEFAULT_TOL).basis().clone();
        let pinv = obs.clone().pseudo_inverse(DEFAULT_TOL * obs.norm().max(1.0)).expect("nonnegative epsilon");
        Ok(Self {
            forced: mode.forced_response_matrix_of_height(height),
            observable: mode.is_observable(DEFAULT_TOL),
            observable_part: subspace::projector(&mode.unobservable_subspace(DEFAULT_TOL).complement()),
            obs,
            image,
            pinv,
        })
    }

    fn reconstruct(&self, y: &Vector, u: &Vector, residual_tol: f64) -> StateEstimate {
        let r = y - &self.forced * u;
        let state = &self.pinv * &r;
        let residual = (&self.obs * &state - &r).norm();
        StateEstimate {
            low_confidence: residual > residual_tol * y.norm(),
            state,
            residual,
            observable: self.observable,
        }
    }
}

impl ModeBank {
    pub fn new(sys: &SwitchingSystem, height: usize) -> Result<Self, ObserverError> {
        let entries = sys.modes().iter().map(|m| BankEntry::new(m, height)).collect::<Result<_, _>>()?;
        Ok(Self { height, entries })
    }

    fn relative_residual(&self, mode: usize, y: &Vector, u: &Vector) -> f64 {
        let e = &self.entries[mode];
        let r = y - &e.forced * u;
        let off = &r - &e.image * (e.image.transpose() * &r);
        off.norm()
    }

    /// Modes consistent with `(Y, U)`.
    pub fn identify(&self, y: &Vector, u: &Vector, residual_tol: f64) -> Vec<usize> {
        let scale = y.norm();
        (0..self.entries.len()).filter(|&i| self.relative_residual(i, y, u) <= residual_tol * scale).collect()
    }

    pub fn reconstruct(&self, mode: usize, y: &Vector, u: &Vector, residual_tol: f64) -> StateEstimate {
        self.entries[mode].reconstruct(y, u, residual_tol)
    }

    /// `‖x̂ − x‖` restricted to the observable coordinates of the mode.
    pub fn observable_error(&self, mode: usize, estimate: &Vector, truth: &Vector) -> f64 {
        (&self.entries[mode].observable_part * (estimate - truth)).norm()
    }
}

fn check_stack(sys: &SwitchingSystem, y: &Vector, u: &Vector) -> Result<usize, ObserverError> {
    let (l, m) = (sys.output_dim(), sys.input_dim());
    let h = y.len().checked_div(l).unwrap_or(0);
    if h * l != y.len() || h * m != u.len() {
        return Err(ObserverError::Config(format!(
            "stacked vectors of length {} and {} do not match output/input dimensions {l}/{m}",
            y.len(),
            u.len()
        )));
    }
    Ok(h)
}

/// Labels of the modes consistent with the stacked data.
pub fn identify_mode(
    y: &Vector,
    u: &Vector,
    sys: &SwitchingSystem,
    cfg: &ObserverConfig,
) -> Result<Vec<String>, ObserverError> {
    let bank = ModeBank::new(sys, check_stack(sys, y, u)?)?;
    Ok(bank.identify(y, u, cfg.residual_tol).into_iter().map(|i| sys.label(i).to_string()).collect())
}

#[derive(Debug, Clone)]
pub struct StateEstimate {
    pub state: Vector,
    pub residual: f64,
    /// `false` when only the observable coordinates are determined.
    pub observable: bool,
    pub low_confidence: bool,
}

/// Least-squares state `pinv(𝒪_i)(Y − ℱ_i U)` at the height of the supplied stack.
pub fn reconstruct_state(
    mode: &str,
    y: &Vector,
    u: &Vector,
    sys: &SwitchingSystem,
    cfg: &ObserverConfig,
) -> Result<StateEstimate, ObserverError> {
    let entry = BankEntry::new(sys.mode(sys.index_of(mode)?), check_stack(sys, y, u)?)?;
    Ok(entry.reconstruct(y, u, cfg.residual_tol))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridPoint {
    pub mode: String,
    pub state: Vec<f64>,
}

impl HybridPoint {
    pub fn new(mode: impl Into<String>, state: &Vector) -> Self {
        Self { mode: mode.into(), state: state.iter().copied().collect() }
    }
}

/// Euclidean distance within a mode, infinite across modes.
pub fn hybrid_distance(a: &HybridPoint, b: &HybridPoint) -> f64 {
    if a.mode != b.mode || a.state.len() != b.state.len() {
        return f64::INFINITY;
    }
    a.state.iter().zip(&b.state).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRecord {
    pub t: f64,
    pub interval: usize,
    pub true_mode: String,
    pub candidates: Vec<String>,
    pub estimate: Option<HybridPoint>,
    /// Hybrid distance to the truth; infinite without a unique mode.
    pub error: f64,
    pub observable_error: f64,
    pub observable: bool,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalReport {
    pub index: usize,
    pub mode: String,
    pub start: f64,
    pub end: f64,
    pub evaluated: usize,
    pub first_estimate: Option<f64>,
    pub max_error: Option<f64>,
    pub max_observable_error: Option<f64>,
    pub observable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub epsilon: f64,
    pub effective_epsilon: f64,
    /// First time after which every evaluated sample is within `ε`.
    pub t_hat: Option<f64>,
    pub mode_accuracy: f64,
    pub evaluated: usize,
    pub ambiguous: usize,
    pub misidentified: usize,
    pub skipped: usize,
    pub low_confidence: usize,
    pub stack_height: usize,
    pub intervals: Vec<IntervalReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObserverRun {
    pub report: ConvergenceReport,
    pub estimates: Vec<EstimateRecord>,
}

fn first_after_last_failure(records: &[EstimateRecord], eps: f64) -> Option<f64> {
    let last_bad = records.iter().rposition(|r| r.error.is_nan() || r.error > eps);
    match last_bad {
        None => records.first().map(|r| r.t),
        Some(k) => records.get(k + 1).map(|r| r.t),
    }
}

/// Runs the observer over an execution and measures convergence to within `epsilon`.
pub fn run_observer(
    sys: &SwitchingSystem,
    exec: &Execution,
    cfg: &ObserverConfig,
    epsilon: f64,
) -> Result<ObserverRun, ObserverError> {
    let height = identification_height(sys);
    cfg.validate(height)?;
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(ObserverError::Config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let bank = ModeBank::new(sys, height)?;
    let mut warnings = Vec::new();
    let location = location_observability_test(sys, DEFAULT_TOL);
    if !location.location_observable {
        warnings.push(format!(
            "system is not location observable; indistinguishable pairs {:?}",
            location.unwitnessed(sys)
        ));
    }
    if let Some(bad) = sys.modes().iter().find(|m| !m.is_observable(DEFAULT_TOL)) {
        warnings.push(format!(
            "mode {:?} is not observable; its estimates are exact only in observable coordinates",
            bad.label
        ));
    }

    let mut estimates = Vec::new();
    let mut intervals = Vec::new();
    let (mut skipped, mut ambiguous, mut misidentified, mut low_confidence) = (0, 0, 0, 0);
    for (ii, interval) in exec.intervals.iter().enumerate() {
        let q = sys.index_of(&interval.mode)?;
        let end = exec.switch_times.get(ii + 1).copied().unwrap_or(exec.horizon);
        let mut report = IntervalReport {
            index: ii,
            mode: interval.mode.clone(),
            start: interval.start,
            end,
            evaluated: 0,
            first_estimate: None,
            max_error: None,
            max_observable_error: None,
            observable: sys.mode(q).is_observable(DEFAULT_TOL),
        };
        for (k, s) in interval.samples.iter().enumerate().step_by(cfg.stride) {
            if s.t < interval.start + cfg.dwell_grace {
                skipped += 1;
                continue;
            }
            let Ok((y, u)) = stacked_output(&interval.samples, k, height, cfg) else {
                skipped += 1;
                continue;
            };
            let candidates = bank.identify(&y, &u, cfg.residual_tol);
            let truth = HybridPoint::new(interval.mode.clone(), &s.state());
            let mut record = EstimateRecord {
                t: s.t,
                interval: ii,
                true_mode: interval.mode.clone(),
                candidates: candidates.iter().map(|&i| sys.label(i).to_string()).collect(),
                estimate: None,
                error: f64::INFINITY,
                observable_error: f64::INFINITY,
                observable: false,
                low_confidence: false,
            };
            match candidates.as_slice() {
                [only] => {
                    let est = bank.reconstruct(*only, &y, &u, cfg.residual_tol);
                    let point = HybridPoint::new(sys.label(*only), &est.state);
                    record.error = hybrid_distance(&point, &truth);
                    if *only == q {
                        record.observable_error = bank.observable_error(q, &est.state, &s.state());
                    } else {
                        misidentified += 1;
                    }
                    record.observable = est.observable;
                    record.low_confidence = est.low_confidence;
                    low_confidence += usize::from(est.low_confidence);
                    record.estimate = Some(point);
                }
                _ => ambiguous += 1,
            }
            report.evaluated += 1;
            report.first_estimate.get_or_insert(s.t);
            report.max_error = Some(report.max_error.map_or(record.error, |m: f64| m.max(record.error)));
            report.max_observable_error = Some(
                report.max_observable_error.map_or(record.observable_error, |m: f64| m.max(record.observable_error)),
            );
            estimates.push(record);
        }
        intervals.push(report);
    }
    let evaluated = estimates.len();
    let correct = estimates.iter().filter(|r| r.candidates == [r.true_mode.clone()]).count();
    if ambiguous > 0 {
        warnings.push(format!("{ambiguous} samples did not single out a mode"));
    }
    let effective_epsilon = epsilon.max(cfg.exact_tol);
    Ok(ObserverRun {
        report: ConvergenceReport {
            epsilon,
            effective_epsilon,
            t_hat: first_after_last_failure(&estimates, effective_epsilon),
            mode_accuracy: if evaluated == 0 { 0.0 } else { correct as f64 / evaluated as f64 },
            evaluated,
            ambiguous,
            misidentified,
            skipped,
            low_confidence,
            stack_height: height,
            intervals,
            warnings,
        },
        estimates,
    })
}

impl ObserverRun {
    /// Estimate trace aligned with the simulator CSV: `t, interval, true_mode,
    /// mode, error, observable_error, low_confidence, xhat1…`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let width = self.estimates.iter().filter_map(|r| r.estimate.as_ref()).map(|p| p.state.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut head: Vec<String> =
            ["t", "interval", "true_mode", "mode", "error", "observable_error", "low_confidence"]
                .map(String::from)
                .into();
        head.extend((1..=width).map(|i| format!("xhat{i}")));
        w.write_record(&head)?;
        for r in &self.estimates {
            let mode = r.estimate.as_ref().map(|p| p.mode.clone()).unwrap_or_default();
            let mut row = vec![
                format!("{:?}", r.t),
                r.interval.to_string(),
                r.true_mode.clone(),
                mode,
                format!("{:?}", r.error),
                format!("{:?}", r.observable_error),
                r.low_confidence.to_string(),
            ];
            let state = r.estimate.as_ref().map(|p| p.state.as_slice()).unwrap_or(&[]);
            row.extend((0..width).map(|k| state.get(k).map(|v| format!("{v:?}")).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
