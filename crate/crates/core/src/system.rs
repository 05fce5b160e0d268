//! Linear switching systems with guards: per-mode LTI dynamics, transition
//! edges with linear resets, and subspace guards.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::subspace::{self, Matrix, Subspace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("system has no modes")]
    NoModes,
    #[error("duplicate mode label {0:?}")]
    DuplicateMode(String),
    #[error("edge ({0},{1}) listed more than once")]
    DuplicateEdge(String, String),
    #[error("{context}: expected {expected}, found {found}")]
    DimensionMismatch { context: String, expected: String, found: String },
    #[error("{context}: ragged matrix rows")]
    Ragged { context: String },
    #[error("{context}: non-finite entry")]
    NonFinite { context: String },
    #[error("edge ({0},{0}): in-loop transition with identity reset")]
    InLoopIdentityReset(String),
    #[error("edge ({from},{to}): unknown endpoint {missing:?}")]
    DanglingEdge { from: String, to: String, missing: String },
    #[error("unknown mode label {0:?}")]
    UnknownLabel(String),
    #[error("mode set must be nonempty")]
    EmptyRestriction,
}

impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

fn dim_err(context: impl Into<String>, expected: impl fmt::Display, found: impl fmt::Display) -> ModelError {
    ModelError::DimensionMismatch { context: context.into(), expected: expected.to_string(), found: found.to_string() }
}

fn shape(m: &Matrix) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn check_finite(m: &Matrix, context: &str) -> Result<(), ModelError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { context: context.to_string() })
    }
}

/// One discrete state's continuous dynamics `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone)]
pub struct LtiMode {
    pub label: String,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl LtiMode {
    pub fn new(label: impl Into<String>, a: Matrix, b: Matrix, c: Matrix) -> Result<Self, ModelError> {
        let label = label.into();
        let ctx = |what: &str| format!("mode {label:?} {what}");
        check_finite(&a, &ctx("A"))?;
        check_finite(&b, &ctx("B"))?;
        check_finite(&c, &ctx("C"))?;
        if !a.is_square() {
            return Err(dim_err(ctx("A"), "square matrix", shape(&a)));
        }
        let n = a.nrows();
        if b.nrows() != n {
            return Err(dim_err(ctx("B rows"), n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(dim_err(ctx("C columns"), n, c.ncols()));
        }
        Ok(Self { label, a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// `C A^k B`.
    pub fn markov_parameter(&self, k: usize) -> Matrix {
        let mut ca = self.c.clone();
        for _ in 0..k {
            ca = &ca * &self.a;
        }
        ca * &self.b
    }

    /// Stacks `C, CA, …, CA^{height−1}`.
    pub fn observability_matrix_of_height(&self, height: usize) -> Matrix {
        let (n, l) = (self.state_dim(), self.output_dim());
        let mut out = Matrix::zeros(height * l, n);
        let mut block = self.c.clone();
        for k in 0..height {
            out.view_mut((k * l, 0), (l, n)).copy_from(&block);
            block = &block * &self.a;
        }
        out
    }

    /// Observability matrix with `n_i` block rows.
    pub fn observability_matrix(&self) -> Matrix {
        self.observability_matrix_of_height(self.state_dim())
    }

    pub fn is_observable(&self, tol: f64) -> bool {
        subspace::rank(&self.observability_matrix(), tol) == self.state_dim()
    }

    /// Unobservable subspace `ker 𝒪`.
    pub fn unobservable_subspace(&self, tol: f64) -> Subspace {
        subspace::kernel(&self.observability_matrix(), tol)
    }

    /// Strictly lower block-triangular Toeplitz map from stacked input
    /// derivatives `(u, u̇, …)` to the forced part of `(y, ẏ, …)`:
    /// block `(r, c)` is `C A^{r−c−1} B` for `r > c`.
    pub fn forced_response_matrix_of_height(&self, height: usize) -> Matrix {
        let (l, m) = (self.output_dim(), self.input_dim());
        let mut out = Matrix::zeros(height * l, height * m);
        let markov: Vec<Matrix> = (0..height.saturating_sub(1)).map(|k| self.markov_parameter(k)).collect();
        for r in 0..height {
            for c in 0..r {
                out.view_mut((r * l, c * m), (l, m)).copy_from(&markov[r - c - 1]);
            }
        }
        out
    }

    pub fn forced_response_matrix(&self) -> Matrix {
        self.forced_response_matrix_of_height(self.state_dim())
    }

    /// Same mode with `B = 0`.
    pub fn autonomous(&self) -> LtiMode {
        LtiMode {
            label: self.label.clone(),
            a: self.a.clone(),
            b: Matrix::zeros(self.b.nrows(), self.b.ncols()),
            c: self.c.clone(),
        }
    }
}

/// Region of the source mode's state space in which a transition is enabled.
#[derive(Debug, Clone, PartialEq)]
pub enum Guard {
    Full,
    KernelOf(Matrix),
    /// Column span of the given matrix.
    Span(Matrix),
}

impl Guard {
    pub fn is_full(&self) -> bool {
        matches!(self, Guard::Full)
    }

    pub fn subspace(&self, ambient_dim: usize, tol: f64) -> Subspace {
        match self {
            Guard::Full => Subspace::full(ambient_dim, tol),
            Guard::KernelOf(m) => subspace::kernel(m, tol),
            Guard::Span(m) => subspace::image(m, tol),
        }
    }
}

/// Transition between modes, stored by mode index.
#[derive(Debug, Clone)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub reset: Matrix,
    pub guard: Guard,
}

impl Edge {
    pub fn is_loop(&self) -> bool {
        self.from == self.to
    }
}

/// Edge description by label, used when building a system.
#[derive(Debug, Clone)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub reset: Matrix,
    pub guard: Guard,
}

impl EdgeSpec {
    pub fn new(from: impl Into<String>, to: impl Into<String>, reset: Matrix) -> Self {
        Self { from: from.into(), to: to.into(), reset, guard: Guard::Full }
    }

    pub fn with_guard(mut self, guard: Guard) -> Self {
        self.guard = guard;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SwitchingSystem {
    name: Option<String>,
    modes: Vec<LtiMode>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    input_dim: usize,
    output_dim: usize,
}

impl SwitchingSystem {
    pub fn new(name: Option<String>, modes: Vec<LtiMode>, edges: Vec<EdgeSpec>) -> Result<Self, ModelError> {
        let first = modes.first().ok_or(ModelError::NoModes)?;
        let (input_dim, output_dim) = (first.input_dim(), first.output_dim());
        let mut index = HashMap::new();
        for (i, mode) in modes.iter().enumerate() {
            if index.insert(mode.label.clone(), i).is_some() {
                return Err(ModelError::DuplicateMode(mode.label.clone()));
            }
            if mode.input_dim() != input_dim {
                return Err(dim_err(format!("mode {:?} input dimension", mode.label), input_dim, mode.input_dim()));
            }
            if mode.output_dim() != output_dim {
                return Err(dim_err(format!("mode {:?} output dimension", mode.label), output_dim, mode.output_dim()));
            }
        }
        let mut built = Vec::with_capacity(edges.len());
        for spec in edges {
            let lookup = |label: &str| {
                index.get(label).copied().ok_or_else(|| ModelError::DanglingEdge {
                    from: spec.from.clone(),
                    to: spec.to.clone(),
                    missing: label.to_string(),
                })
            };
            let from = lookup(&spec.from)?;
            let to = lookup(&spec.to)?;
            if built.iter().any(|e: &Edge| e.from == from && e.to == to) {
                return Err(ModelError::DuplicateEdge(spec.from.clone(), spec.to.clone()));
            }
            let ctx = format!("edge ({},{})", spec.from, spec.to);
            check_finite(&spec.reset, &format!("{ctx} reset"))?;
            let (n_from, n_to) = (modes[from].state_dim(), modes[to].state_dim());
            if spec.reset.shape() != (n_to, n_from) {
                return Err(dim_err(format!("{ctx} reset"), format!("{n_to}x{n_from}"), shape(&spec.reset)));
            }
            match &spec.guard {
                Guard::Full => {}
                Guard::KernelOf(g) => {
                    check_finite(g, &format!("{ctx} guard"))?;
                    if g.ncols() != n_from {
                        return Err(dim_err(format!("{ctx} guard columns"), n_from, g.ncols()));
                    }
                }
                Guard::Span(g) => {
                    check_finite(g, &format!("{ctx} guard"))?;
                    if g.nrows() != n_from {
                        return Err(dim_err(format!("{ctx} guard rows"), n_from, g.nrows()));
                    }
                }
            }
            if from == to && spec.reset == Matrix::identity(n_from, n_from) {
                return Err(ModelError::InLoopIdentityReset(spec.from.clone()));
            }
            built.push(Edge { from, to, reset: spec.reset, guard: spec.guard });
        }
        Ok(Self { name, modes, edges: built, index, input_dim, output_dim })
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn modes(&self) -> &[LtiMode] {
        &self.modes
    }

    pub fn mode(&self, idx: usize) -> &LtiMode {
        &self.modes[idx]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.modes[idx].label
    }

    pub fn labels(&self) -> Vec<String> {
        self.modes.iter().map(|m| m.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Result<usize, ModelError> {
        self.index.get(label).copied().ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    pub fn find_edge(&self, from: usize, to: usize) -> Option<usize> {
        self.edges.iter().position(|e| e.from == from && e.to == to)
    }

    pub fn edge_labels(&self, edge: &Edge) -> (String, String) {
        (self.label(edge.from).to_string(), self.label(edge.to).to_string())
    }

    /// True when every guard is the full space (LSw-system).
    pub fn is_unguarded(&self) -> bool {
        self.edges.iter().all(|e| e.guard.is_full())
    }

    pub fn max_state_dim(&self) -> usize {
        self.modes.iter().map(LtiMode::state_dim).max().unwrap_or(0)
    }

    pub(crate) fn edge_specs(&self) -> Vec<EdgeSpec> {
        self.edges
            .iter()
            .map(|e| EdgeSpec {
                from: self.label(e.from).to_string(),
                to: self.label(e.to).to_string(),
                reset: e.reset.clone(),
                guard: e.guard.clone(),
            })
            .collect()
    }

    /// Reads a system document (see [`SystemDocument`]).
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: SystemDocument = serde_json::from_str(text)?;
        doc.into_system()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SystemDocument::from_system(self)).expect("document serializes")
    }
}

/// A matrix written as nested row arrays; a bare number is read as 1×1.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixDoc {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixDoc {
    pub fn from_matrix(m: &Matrix) -> Self {
        MatrixDoc::Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// `cols_if_empty` fixes the column count of a matrix with zero rows.
    pub fn to_matrix(&self, context: &str, cols_if_empty: usize) -> Result<Matrix, ModelError> {
        match self {
            MatrixDoc::Scalar(x) => Ok(Matrix::from_element(1, 1, *x)),
            MatrixDoc::Rows(rows) => {
                if rows.is_empty() {
                    return Ok(Matrix::zeros(0, cols_if_empty));
                }
                let cols = rows[0].len();
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(ModelError::Ragged { context: context.to_string() });
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeDoc {
    #[serde(rename = "A")]
    pub a: MatrixDoc,
    #[serde(rename = "B")]
    pub b: MatrixDoc,
    #[serde(rename = "C")]
    pub c: MatrixDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GuardDoc {
    #[default]
    Full,
    Kernel {
        matrix: MatrixDoc,
    },
    Span {
        matrix: MatrixDoc,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    pub reset: MatrixDoc,
    #[serde(default)]
    pub guard: GuardDoc,
}

/// On-disk system format: `{"name": ..., "modes": {label: {A, B, C}}, "edges": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub modes: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub edges: Vec<EdgeDoc>,
}

impl SystemDocument {
    pub fn into_system(self) -> Result<SwitchingSystem, ModelError> {
        let mut modes = Vec::with_capacity(self.modes.len());
        for (label, value) in self.modes {
            let doc: ModeDoc = serde_json::from_value(value).map_err(|e| ModelError::Parse {
                line: 0,
                column: 0,
                message: format!("mode {label:?}: {e}"),
            })?;
            let a = doc.a.to_matrix(&format!("mode {label:?} A"), 0)?;
            let n = a.nrows();
            let b = doc.b.to_matrix(&format!("mode {label:?} B"), 0)?;
            let c = doc.c.to_matrix(&format!("mode {label:?} C"), n)?;
            let b = if b.nrows() == 0 && n > 0 { Matrix::zeros(n, 0) } else { b };
            modes.push(LtiMode::new(label, a, b, c)?);
        }
        let dims: HashMap<&str, usize> = modes.iter().map(|m| (m.label.as_str(), m.state_dim())).collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in self.edges {
            let ctx = format!("edge ({},{})", e.from, e.to);
            let n_from = dims.get(e.from.as_str()).copied().unwrap_or(0);
            let reset = e.reset.to_matrix(&format!("{ctx} reset"), n_from)?;
            let guard = match e.guard {
                GuardDoc::Full => Guard::Full,
                GuardDoc::Kernel { matrix } => Guard::KernelOf(matrix.to_matrix(&format!("{ctx} guard"), n_from)?),
                GuardDoc::Span { matrix } => Guard::Span(matrix.to_matrix(&format!("{ctx} guard"), 0)?),
            };
            edges.push(EdgeSpec { from: e.from, to: e.to, reset, guard });
        }
        SwitchingSystem::new(self.name, modes, edges)
    }

    pub fn from_system(sys: &SwitchingSystem) -> Self {
        let modes = sys
            .modes()
            .iter()
            .map(|m| {
                let doc = ModeDoc {
                    a: MatrixDoc::from_matrix(&m.a),
                    b: MatrixDoc::from_matrix(&m.b),
                    c: MatrixDoc::from_matrix(&m.c),
                };
                (m.label.clone(), serde_json::to_value(doc).expect("mode serializes"))
            })
            .collect();
        let edges = sys
            .edges()
            .iter()
            .map(|e| EdgeDoc {
                from: sys.label(e.from).to_string(),
                to: sys.label(e.to).to_string(),
                reset: MatrixDoc::from_matrix(&e.reset),
                guard: match &e.guard {
                    Guard::Full => GuardDoc::Full,
                    Guard::KernelOf(m) => GuardDoc::Kernel { matrix: MatrixDoc::from_matrix(m) },
                    Guard::Span(m) => GuardDoc::Span { matrix: MatrixDoc::from_matrix(m) },
                },
            })
            .collect();
        SystemDocument { name: sys.name().map(str::to_string), modes, edges }
    }
}
