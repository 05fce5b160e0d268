//! Executions of switching systems: fixed-step RK4 inside each mode, jumps
//! chosen by a switching policy and checked against the guards.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::rk4_step;
use crate::subspace::{Matrix, Vector, DEFAULT_TOL};
use crate::system::{ModelError, SwitchingSystem};

pub const DEFAULT_GUARD_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("initial state has dimension {found}, mode {mode:?} expects {expected}")]
    InitialState { mode: String, expected: usize, found: usize },
    #[error("input has dimension {found}, system expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("edge ({from},{to}) is not a transition of the system")]
    UnknownEdge { from: String, to: String },
    #[error("jump {index}: scheduled from {scheduled:?} but the execution is in {current:?}")]
    ScheduleMismatch { index: usize, scheduled: String, current: String },
    #[error("jump {index} on ({from},{to}) at t={time}: pre-jump state is {distance:e} away from the guard")]
    GuardViolation { index: usize, from: String, to: String, time: f64, distance: f64 },
    #[error("jump {index} at t={time} follows the previous one by less than one step")]
    ZenoSchedule { index: usize, time: f64 },
}

/// Input signal `u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    Zero,
    /// `u(t) = z e^{λt}`.
    Exponential {
        z: Vec<f64>,
        lambda: f64,
    },
    /// Linear interpolation between samples, held constant outside their range.
    Sampled {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl InputSignal {
    pub fn exponential(z: &Vector, lambda: f64) -> Self {
        InputSignal::Exponential { z: z.iter().copied().collect(), lambda }
    }

    fn check(&self, m: usize) -> Result<(), SimulationError> {
        let dim_err = |found| Err(SimulationError::InputDimension { expected: m, found });
        match self {
            InputSignal::Zero => Ok(()),
            InputSignal::Exponential { z, lambda } => {
                if !lambda.is_finite() || z.iter().any(|v| !v.is_finite()) {
                    return Err(SimulationError::InvalidParameter("non-finite exponential input".into()));
                }
                if z.len() != m {
                    return dim_err(z.len());
                }
                Ok(())
            }
            InputSignal::Sampled { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(SimulationError::InvalidParameter(
                        "sampled input needs matching, nonempty times and values".into(),
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(SimulationError::InvalidParameter("sampled input times must increase".into()));
                }
                if let Some(v) = values.iter().find(|v| v.len() != m) {
                    return dim_err(v.len());
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: f64, m: usize) -> Vector {
        match self {
            InputSignal::Zero => Vector::zeros(m),
            InputSignal::Exponential { z, lambda } => Vector::from_column_slice(z) * (lambda * t).exp(),
            InputSignal::Sampled { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    return Vector::from_column_slice(&values[0]);
                }
                if k == times.len() {
                    return Vector::from_column_slice(&values[k - 1]);
                }
                let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                Vector::from_column_slice(&values[k - 1]) * (1.0 - w) + Vector::from_column_slice(&values[k]) * w
            }
        }
    }

    /// Exact `k`-th derivative where the signal is smooth in closed form.
    pub fn derivative(&self, t: f64, k: usize, m: usize) -> Option<Vector> {
        match self {
            InputSignal::Zero => Some(Vector::zeros(m)),
            InputSignal::Exponential { lambda, .. } => Some(self.eval(t, m) * lambda.powi(k as i32)),
            InputSignal::Sampled { .. } => None,
        }
    }

    /// `(u, u̇, …, u^{(h−1)})` stacked, when available in closed form.
    pub fn stacked_derivatives(&self, t: f64, h: usize, m: usize) -> Option<Vector> {
        let mut out = Vector::zeros(h * m);
        for k in 0..h {
            out.rows_mut(k * m, m).copy_from(&self.derivative(t, k, m)?);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledJump {
    pub time: f64,
    pub from: String,
    pub to: String,
}

impl ScheduledJump {
    pub fn new(time: f64, from: impl Into<String>, to: impl Into<String>) -> Self {
        Self { time, from: from.into(), to: to.into() }
    }
}

/// When to jump. Guards only enable transitions, so the timing is a choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchingPolicy {
    Schedule {
        jumps: Vec<ScheduledJump>,
    },
    /// Dwell uniformly in `[min_dwell, max_dwell]`, then take a uniformly chosen
    /// enabled outgoing edge (or keep dwelling if none is enabled).
    RandomDwell {
        min_dwell: f64,
        max_dwell: f64,
        seed: u64,
    },
}

impl SwitchingPolicy {
    pub fn none() -> Self {
        SwitchingPolicy::Schedule { jumps: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

impl Sample {
    pub fn state(&self) -> Vector {
        Vector::from_column_slice(&self.x)
    }

    pub fn output(&self) -> Vector {
        Vector::from_column_slice(&self.y)
    }

    pub fn input(&self) -> Vector {
        Vector::from_column_slice(&self.u)
    }
}

/// Samples on `[t_j, t_{j+1})` in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mode: String,
    pub start: f64,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    pub time: f64,
    /// `x⁻(t_j)`, the left limit of the state.
    pub pre: Vec<f64>,
    /// `x(t_j) = R(e) x⁻(t_j)`.
    pub post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub system: Option<String>,
    pub dt: f64,
    pub horizon: f64,
    pub input: InputSignal,
    pub initial_mode: String,
    pub initial_state: Vec<f64>,
    /// `t_0 < t_1 < …`, starting with the initial time.
    pub switch_times: Vec<f64>,
    pub intervals: Vec<Interval>,
    pub transitions: Vec<Transition>,
}

impl Execution {
    pub fn mode_sequence(&self) -> Vec<&str> {
        self.intervals.iter().map(|i| i.mode.as_str()).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.intervals.iter().map(|i| i.samples.len()).sum()
    }

    pub fn final_sample(&self) -> &Sample {
        self.intervals.last().and_then(|i| i.samples.last()).expect("executions have at least one sample")
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub dt: f64,
    pub guard_tol: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { horizon: 1.0, dt: 1e-3, guard_tol: DEFAULT_GUARD_TOL }
    }
}

fn guard_distance(sys: &SwitchingSystem, edge: usize, x: &Vector) -> f64 {
    let e = &sys.edges()[edge];
    if e.guard.is_full() {
        return 0.0;
    }
    let n = sys.mode(e.from).state_dim();
    e.guard.subspace(n, DEFAULT_TOL).distance(x)
}

fn guard_admits(sys: &SwitchingSystem, edge: usize, x: &Vector, guard_tol: f64) -> (bool, f64) {
    let d = guard_distance(sys, edge, x);
    (d <= guard_tol * x.norm(), d)
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn sample(sys: &SwitchingSystem, mode: usize, t: f64, x: &Vector, u: &Vector) -> Sample {
    let y = &sys.mode(mode).c * x;
    Sample { t, x: to_vec(x), y: to_vec(&y), u: to_vec(u) }
}

enum Planner<'a> {
    Schedule { jumps: Vec<(usize, usize, &'a ScheduledJump)>, next: usize },
    Random { rng: Box<ChaCha8Rng>, min: f64, max: f64, due: usize },
}

/// Generates an execution from `(mode, x0)`.
pub fn simulate(
    sys: &SwitchingSystem,
    initial_mode: &str,
    x0: &Vector,
    input: &InputSignal,
    policy: &SwitchingPolicy,
    cfg: &SimulationConfig,
) -> Result<Execution, SimulationError> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(SimulationError::InvalidParameter(format!("dt must be positive, got {}", cfg.dt)));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return Err(SimulationError::InvalidParameter(format!("horizon must be positive, got {}", cfg.horizon)));
    }
    let m = sys.input_dim();
    input.check(m)?;
    let mut q = sys.index_of(initial_mode)?;
    let n0 = sys.mode(q).state_dim();
    if x0.len() != n0 {
        return Err(SimulationError::InitialState { mode: initial_mode.to_string(), expected: n0, found: x0.len() });
    }
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let step_of = |time: f64| (time / cfg.dt).round() as usize;

    let mut planner = match policy {
        SwitchingPolicy::Schedule { jumps } => {
            let mut resolved = Vec::with_capacity(jumps.len());
            let mut last_step = 0usize;
            for (index, j) in jumps.iter().enumerate() {
                let (from, to) = (sys.index_of(&j.from)?, sys.index_of(&j.to)?);
                let edge = sys
                    .find_edge(from, to)
                    .ok_or_else(|| SimulationError::UnknownEdge { from: j.from.clone(), to: j.to.clone() })?;
                if !(j.time.is_finite() && j.time >= 0.0) {
                    return Err(SimulationError::InvalidParameter(format!("jump {index} has time {}", j.time)));
                }
                let step = step_of(j.time);
                if step <= last_step {
                    return Err(SimulationError::ZenoSchedule { index, time: j.time });
                }
                last_step = step;
                resolved.push((step, edge, j));
            }
            Planner::Schedule { jumps: resolved, next: 0 }
        }
        SwitchingPolicy::RandomDwell { min_dwell, max_dwell, seed } => {
            if !(*min_dwell >= cfg.dt && max_dwell >= min_dwell && max_dwell.is_finite()) {
                return Err(SimulationError::InvalidParameter(format!(
                    "random dwell needs dt <= min_dwell <= max_dwell, got [{min_dwell}, {max_dwell}] with dt {}",
                    cfg.dt
                )));
            }
            let mut rng = Box::new(ChaCha8Rng::seed_from_u64(*seed));
            let due = step_of(rng.random_range(*min_dwell..=*max_dwell)).max(1);
            Planner::Random { rng, min: *min_dwell, max: *max_dwell, due }
        }
    };

    let mut x = x0.clone();
    let mut intervals = vec![Interval {
        mode: sys.label(q).to_string(),
        start: 0.0,
        samples: vec![sample(sys, q, 0.0, &x, &input.eval(0.0, m))],
    }];
    let mut transitions = Vec::new();
    let mut switch_times = vec![0.0];

    for k in 0..steps {
        let mode = sys.mode(q);
        let t = k as f64 * cfg.dt;
        let u_fn = |s: f64| input.eval(s, m);
        let next = rk4_step(&mode.a, &mode.b, &x, t, cfg.dt, &u_fn);
        let step = k + 1;
        let t_next = step as f64 * cfg.dt;
        let jump = if step == steps {
            None
        } else {
            match &mut planner {
                Planner::Schedule { jumps, next: idx } => match jumps.get(*idx) {
                    Some(&(s, edge, j)) if s == step => {
                        if sys.edges()[edge].from != q {
                            return Err(SimulationError::ScheduleMismatch {
                                index: *idx,
                                scheduled: j.from.clone(),
                                current: sys.label(q).to_string(),
                            });
                        }
                        let (ok, distance) = guard_admits(sys, edge, &next, cfg.guard_tol);
                        if !ok {
                            return Err(SimulationError::GuardViolation {
                                index: *idx,
                                from: j.from.clone(),
                                to: j.to.clone(),
                                time: t_next,
                                distance,
                            });
                        }
                        *idx += 1;
                        Some(edge)
                    }
                    _ => None,
                },
                Planner::Random { rng, min, max, due } if *due == step => {
                    let enabled: Vec<usize> = (0..sys.edges().len())
                        .filter(|&e| sys.edges()[e].from == q && guard_admits(sys, e, &next, cfg.guard_tol).0)
                        .collect();
                    *due = step + step_of(rng.random_range(*min..=*max)).max(1);
                    (!enabled.is_empty()).then(|| enabled[rng.random_range(0..enabled.len())])
                }
                Planner::Random { .. } => None,
            }
        };
        let u_next = input.eval(t_next, m);
        match jump {
            Some(edge) => {
                let e = &sys.edges()[edge];
                let post = &e.reset * &next;
                transitions.push(Transition {
                    from: sys.label(e.from).to_string(),
                    to: sys.label(e.to).to_string(),
                    time: t_next,
                    pre: to_vec(&next),
                    post: to_vec(&post),
                });
                q = e.to;
                x = post;
                switch_times.push(t_next);
                intervals.push(Interval {
                    mode: sys.label(q).to_string(),
                    start: t_next,
                    samples: vec![sample(sys, q, t_next, &x, &u_next)],
                });
            }
            None => {
                x = next;
                intervals.last_mut().expect("nonempty").samples.push(sample(sys, q, t_next, &x, &u_next));
            }
        }
    }

    Ok(Execution {
        system: sys.name().map(str::to_string),
        dt: cfg.dt,
        horizon: steps as f64 * cfg.dt,
        input: input.clone(),
        initial_mode: initial_mode.to_string(),
        initial_state: to_vec(x0),
        switch_times,
        intervals,
        transitions,
    })
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("execution has no intervals")]
    Empty,
    #[error("switch times are not strictly increasing at index {0}")]
    SwitchTimes(usize),
    #[error("interval/transition bookkeeping mismatch: {0}")]
    Shape(String),
    #[error("jump {index}: ({from},{to}) is not an edge of the system")]
    EdgeNotInSystem { index: usize, from: String, to: String },
    #[error("jump {index}: pre-jump state is {distance:e} away from the guard")]
    GuardViolation { index: usize, distance: f64 },
    #[error("jump {index}: post-jump state differs from R x⁻ by {error:e}")]
    ResetMismatch { index: usize, error: f64 },
    #[error("interval {interval} sample {sample}: output differs from C x by {error:e}")]
    OutputMismatch { interval: usize, sample: usize, error: f64 },
    #[error("interval {interval} sample {sample}: state has dimension {found}, mode expects {expected}")]
    StateDimension { interval: usize, sample: usize, expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

/// Replays the jump conditions and the output equation of an execution.
pub fn validate_execution(sys: &SwitchingSystem, exec: &Execution, guard_tol: f64) -> Result<(), ValidationError> {
    const TOL: f64 = 1e-9;
    if exec.intervals.is_empty() {
        return Err(ValidationError::Empty);
    }
    if let Some(i) = exec.switch_times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(ValidationError::SwitchTimes(i + 1));
    }
    if exec.switch_times.len() != exec.intervals.len() || exec.transitions.len() + 1 != exec.intervals.len() {
        return Err(ValidationError::Shape(format!(
            "{} switch times, {} intervals, {} transitions",
            exec.switch_times.len(),
            exec.intervals.len(),
            exec.transitions.len()
        )));
    }
    for (j, tr) in exec.transitions.iter().enumerate() {
        let (prev, next) = (&exec.intervals[j], &exec.intervals[j + 1]);
        if tr.from != prev.mode || tr.to != next.mode {
            return Err(ValidationError::Shape(format!("transition {j} does not join intervals {j} and {}", j + 1)));
        }
        let (from, to) = (sys.index_of(&tr.from)?, sys.index_of(&tr.to)?);
        let edge = sys.find_edge(from, to).ok_or_else(|| ValidationError::EdgeNotInSystem {
            index: j,
            from: tr.from.clone(),
            to: tr.to.clone(),
        })?;
        let e = &sys.edges()[edge];
        let (pre, post) = (Vector::from_column_slice(&tr.pre), Vector::from_column_slice(&tr.post));
        if pre.len() != e.reset.ncols() || post.len() != e.reset.nrows() {
            return Err(ValidationError::Shape(format!("transition {j} state dimensions")));
        }
        let (ok, distance) = guard_admits(sys, edge, &pre, guard_tol);
        if !ok {
            return Err(ValidationError::GuardViolation { index: j, distance });
        }
        let error = rel_err(&(&e.reset * &pre), &post);
        if error > TOL {
            return Err(ValidationError::ResetMismatch { index: j, error });
        }
        let first = next.samples.first().map(Sample::state);
        if first.as_ref().is_none_or(|x| rel_err(x, &post) > TOL) {
            return Err(ValidationError::ResetMismatch { index: j, error: f64::NAN });
        }
    }
    for (ii, interval) in exec.intervals.iter().enumerate() {
        let mode = sys.mode(sys.index_of(&interval.mode)?);
        for (si, s) in interval.samples.iter().enumerate() {
            if s.x.len() != mode.state_dim() {
                return Err(ValidationError::StateDimension {
                    interval: ii,
                    sample: si,
                    expected: mode.state_dim(),
                    found: s.x.len(),
                });
            }
            let error = rel_err(&(&mode.c * s.state()), &s.output());
            if error > TOL {
                return Err(ValidationError::OutputMismatch { interval: ii, sample: si, error });
            }
        }
    }
    Ok(())
}

/// Execution metadata without the samples; pairs with the CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub system: Option<String>,
    pub dt: f64,
    pub horizon: f64,
    pub input: InputSignal,
    pub initial_mode: String,
    pub initial_state: Vec<f64>,
    pub switch_times: Vec<f64>,
    pub modes: Vec<String>,
    pub transitions: Vec<Transition>,
    pub state_columns: usize,
    pub output_columns: usize,
    pub input_columns: usize,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("trace row {row}: {message}")]
    Row { row: usize, message: String },
}

impl Execution {
    pub fn header(&self) -> TraceHeader {
        let first = &self.intervals[0].samples[0];
        TraceHeader {
            system: self.system.clone(),
            dt: self.dt,
            horizon: self.horizon,
            input: self.input.clone(),
            initial_mode: self.initial_mode.clone(),
            initial_state: self.initial_state.clone(),
            switch_times: self.switch_times.clone(),
            modes: self.intervals.iter().map(|i| i.mode.clone()).collect(),
            transitions: self.transitions.clone(),
            state_columns: self.intervals.iter().flat_map(|i| i.samples.first()).map(|s| s.x.len()).max().unwrap_or(0),
            output_columns: first.y.len(),
            input_columns: first.u.len(),
        }
    }

    /// Columnar trace: `t, interval, mode, x1…, y1…, u1…`. States shorter than
    /// the widest mode leave trailing state cells empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let h = self.header();
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["t".to_string(), "interval".to_string(), "mode".to_string()];
        head.extend((1..=h.state_columns).map(|i| format!("x{i}")));
        head.extend((1..=h.output_columns).map(|i| format!("y{i}")));
        head.extend((1..=h.input_columns).map(|i| format!("u{i}")));
        w.write_record(&head)?;
        for (ii, interval) in self.intervals.iter().enumerate() {
            for s in &interval.samples {
                let mut row = vec![format!("{:?}", s.t), ii.to_string(), interval.mode.clone()];
                row.extend((0..h.state_columns).map(|k| s.x.get(k).map(|v| format!("{v:?}")).unwrap_or_default()));
                row.extend(s.y.iter().map(|v| format!("{v:?}")));
                row.extend(s.u.iter().map(|v| format!("{v:?}")));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Rebuilds an execution from a header and its CSV trace.
    pub fn from_trace<R: Read>(header: TraceHeader, csv_in: R) -> Result<Self, TraceError> {
        let mut intervals: Vec<Interval> = header
            .modes
            .iter()
            .zip(&header.switch_times)
            .map(|(mode, &start)| Interval { mode: mode.clone(), start, samples: Vec::new() })
            .collect();
        let mut rdr = csv::Reader::from_reader(csv_in);
        let (nx, ny, nu) = (header.state_columns, header.output_columns, header.input_columns);
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |message: String| TraceError::Row { row: row + 1, message };
            if rec.len() != 3 + nx + ny + nu {
                return Err(bad(format!("expected {} columns, found {}", 3 + nx + ny + nu, rec.len())));
            }
            let num = |k: usize| rec[k].trim().parse::<f64>().map_err(|e| bad(format!("column {}: {e}", k + 1)));
            let t = num(0)?;
            let ii: usize = rec[1].trim().parse().map_err(|e| bad(format!("interval: {e}")))?;
            let interval = intervals.get_mut(ii).ok_or_else(|| bad(format!("interval {ii} not in header")))?;
            if interval.mode != rec[2].trim() {
                return Err(bad(format!("mode {:?} but header says {:?}", &rec[2], interval.mode)));
            }
            let mut x = Vec::new();
            for k in 3..3 + nx {
                if !rec[k].trim().is_empty() {
                    x.push(num(k)?);
                }
            }
            let y = (3 + nx..3 + nx + ny).map(num).collect::<Result<Vec<_>, _>>()?;
            let u = (3 + nx + ny..3 + nx + ny + nu).map(num).collect::<Result<Vec<_>, _>>()?;
            interval.samples.push(Sample { t, x, y, u });
        }
        if intervals.iter().any(|i| i.samples.is_empty()) {
            return Err(TraceError::Row { row: 0, message: "an interval of the header has no samples".into() });
        }
        Ok(Execution {
            system: header.system,
            dt: header.dt,
            horizon: header.horizon,
            input: header.input,
            initial_mode: header.initial_mode,
            initial_state: header.initial_state,
            switch_times: header.switch_times,
            intervals,
            transitions: header.transitions,
        })
    }
}

/// Exact states of a single mode under zero input, for cross-checks.
pub fn free_response(a: &Matrix, x0: &Vector, t: f64) -> Vector {
    crate::ode::flow_map(a, t) * x0
}
