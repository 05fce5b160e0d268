//! Observability decomposition of a switching system.
//!
//! Each unobservable mode is brought to observability canonical form
//! `T A T⁻¹ = [[A11, 0], [A21, A22]]`, `C T⁻¹ = [C1, 0]`. Restricted to the
//! unobservable coordinates, the autonomous system becomes a guarded system
//! (the "core") with dynamics `A22`, resets `R22` and guards `ker R12`; its
//! asymptotic stability is equivalent to detectability of the autonomous part.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;
use thiserror::Error;

use crate::subspace::{self, Matrix, Subspace};
use crate::system::{EdgeSpec, LtiMode, ModelError, SwitchingSystem};

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("mode {0:?} is observable; restrict to the unobservable modes first")]
    ObservableMode(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A mode in observability canonical form.
#[derive(Debug, Clone)]
pub struct CanonicalMode {
    pub label: String,
    /// Orthogonal change of basis; identity when the mode is already in form.
    pub t: Matrix,
    pub a11: Matrix,
    pub a21: Matrix,
    pub a22: Matrix,
    pub c1: Matrix,
    /// Dimension of the unobservable subspace.
    pub d: usize,
}

impl CanonicalMode {
    pub fn state_dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn is_identity_transform(&self) -> bool {
        self.t == Matrix::identity(self.state_dim(), self.state_dim())
    }

    /// `T A T⁻¹` reassembled from the blocks.
    pub fn transformed_a(&self) -> Matrix {
        let n = self.state_dim();
        let r = n - self.d;
        let mut a = Matrix::zeros(n, n);
        a.view_mut((0, 0), (r, r)).copy_from(&self.a11);
        a.view_mut((r, 0), (self.d, r)).copy_from(&self.a21);
        a.view_mut((r, r), (self.d, self.d)).copy_from(&self.a22);
        a
    }
}

fn block_is_zero(block: &Matrix, scale: f64, tol: f64) -> bool {
    block.iter().all(|x| x.abs() <= tol * scale.max(1.0))
}

/// Observability canonical form of one mode.
pub fn canonical_form(mode: &LtiMode, tol: f64) -> CanonicalMode {
    let n = mode.state_dim();
    let obs = mode.observability_matrix();
    let r = subspace::rank(&obs, tol);
    let d = n - r;
    let scale = mode.a.amax().max(mode.c.amax());
    let in_form = block_is_zero(&mode.a.view((0, r), (r, d)).into_owned(), scale, tol)
        && block_is_zero(&mode.c.columns(r, d).into_owned(), scale, tol);
    let t = if in_form {
        Matrix::identity(n, n)
    } else {
        let v = subspace::svd(&obs).v;
        let unobservable = subspace::kernel(&obs, tol);
        let mut t = Matrix::zeros(n, n);
        for row in 0..r {
            t.set_row(row, &v.column(row).transpose());
        }
        for j in 0..d {
            t.set_row(r + j, &unobservable.basis().column(j).transpose());
        }
        t
    };
    let a_t = &t * &mode.a * t.transpose();
    let c_t = &mode.c * t.transpose();
    CanonicalMode {
        label: mode.label.clone(),
        a11: a_t.view((0, 0), (r, r)).into_owned(),
        a21: a_t.view((r, 0), (d, r)).into_owned(),
        a22: a_t.view((r, r), (d, d)).into_owned(),
        c1: c_t.columns(0, r).into_owned(),
        t,
        d,
    }
}

/// The same system with every `B_i` set to zero.
pub fn autonomous_part(sys: &SwitchingSystem) -> SwitchingSystem {
    let modes = sys.modes().iter().map(LtiMode::autonomous).collect();
    SwitchingSystem::new(sys.name().map(str::to_string), modes, sys.edge_specs()).expect("valid source system")
}

/// Sub-system on the given modes, keeping only edges with both endpoints inside.
pub fn restrict(sys: &SwitchingSystem, keep: &[String]) -> Result<SwitchingSystem, ModelError> {
    if keep.is_empty() {
        return Err(ModelError::EmptyRestriction);
    }
    for label in keep {
        sys.index_of(label)?;
    }
    let inside = |idx: usize| keep.iter().any(|l| l == sys.label(idx));
    let modes = sys.modes().iter().enumerate().filter(|(i, _)| inside(*i)).map(|(_, m)| m.clone()).collect();
    let edges = sys
        .edges()
        .iter()
        .filter(|e| inside(e.from) && inside(e.to))
        .map(|e| EdgeSpec {
            from: sys.label(e.from).to_string(),
            to: sys.label(e.to).to_string(),
            reset: e.reset.clone(),
            guard: e.guard.clone(),
        })
        .collect();
    SwitchingSystem::new(sys.name().map(str::to_string), modes, edges)
}

/// Labels of modes whose observability matrix is rank deficient.
pub fn unobservable_modes(sys: &SwitchingSystem, tol: f64) -> Vec<String> {
    sys.modes().iter().filter(|m| !m.is_observable(tol)).map(|m| m.label.clone()).collect()
}

/// Reset partitioned conformally with source and target canonical coordinates.
#[derive(Debug, Clone)]
pub struct ResetBlocks {
    pub r11: Matrix,
    pub r12: Matrix,
    pub r21: Matrix,
    pub r22: Matrix,
}

#[derive(Debug, Clone)]
pub struct CoreEdge {
    pub from: usize,
    pub to: usize,
    pub guard: Subspace,
    pub reset: Matrix,
}

impl CoreEdge {
    /// Reset composed with the guard projector; zero exactly when every
    /// admissible jump lands at the origin.
    pub fn effective_reset(&self) -> Matrix {
        &self.reset * subspace::projector(&self.guard)
    }
}

/// Autonomous guarded system on the unobservable coordinates.
#[derive(Debug, Clone)]
pub struct GuardedCore {
    pub labels: Vec<String>,
    pub a22: Vec<Matrix>,
    pub edges: Vec<CoreEdge>,
    /// Present on cores built from a system; absent on abstractions and restrictions.
    pub forms: Vec<CanonicalMode>,
    pub blocks: Vec<ResetBlocks>,
}

impl GuardedCore {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.a22[mode].nrows()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn edge(&self, from: &str, to: &str) -> Option<&CoreEdge> {
        let (f, t) = (self.index_of(from)?, self.index_of(to)?);
        self.edges.iter().find(|e| e.from == f && e.to == t)
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    pub fn is_unguarded(&self) -> bool {
        self.edges.iter().all(|e| e.guard.is_full())
    }

    /// The core on a subset of modes (by index), keeping internal edges only.
    pub fn restrict(&self, members: &[usize]) -> GuardedCore {
        let pos = |i: usize| members.iter().position(|&m| m == i);
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                Some(CoreEdge { from: pos(e.from)?, to: pos(e.to)?, guard: e.guard.clone(), reset: e.reset.clone() })
            })
            .collect();
        GuardedCore {
            labels: members.iter().map(|&i| self.labels[i].clone()).collect(),
            a22: members.iter().map(|&i| self.a22[i].clone()).collect(),
            edges,
            forms: Vec::new(),
            blocks: Vec::new(),
        }
    }

    fn with_resets(&self, reset: impl Fn(&CoreEdge) -> Matrix) -> GuardedCore {
        GuardedCore {
            labels: self.labels.clone(),
            a22: self.a22.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| CoreEdge {
                    from: e.from,
                    to: e.to,
                    guard: Subspace::full(e.guard.ambient_dim(), e.guard.tol()),
                    reset: reset(e),
                })
                .collect(),
            forms: Vec::new(),
            blocks: Vec::new(),
        }
    }
}

/// Builds the guarded core of a system whose modes are all unobservable.
pub fn build_core(sys: &SwitchingSystem, tol: f64) -> Result<GuardedCore, DecompositionError> {
    let forms: Vec<CanonicalMode> = sys.modes().iter().map(|m| canonical_form(m, tol)).collect();
    if let Some(f) = forms.iter().find(|f| f.d == 0) {
        return Err(DecompositionError::ObservableMode(f.label.clone()));
    }
    let mut edges = Vec::with_capacity(sys.edges().len());
    let mut blocks = Vec::with_capacity(sys.edges().len());
    for e in sys.edges() {
        let (src, dst) = (&forms[e.from], &forms[e.to]);
        let r = &dst.t * &e.reset * src.t.transpose();
        let (ri, di) = (src.state_dim() - src.d, src.d);
        let (rh, dh) = (dst.state_dim() - dst.d, dst.d);
        let b = ResetBlocks {
            r11: r.view((0, 0), (rh, ri)).into_owned(),
            r12: r.view((0, ri), (rh, di)).into_owned(),
            r21: r.view((rh, 0), (dh, ri)).into_owned(),
            r22: r.view((rh, ri), (dh, di)).into_owned(),
        };
        edges.push(CoreEdge { from: e.from, to: e.to, guard: subspace::kernel(&b.r12, tol), reset: b.r22.clone() });
        blocks.push(b);
    }
    Ok(GuardedCore { labels: sys.labels(), a22: forms.iter().map(|f| f.a22.clone()).collect(), edges, forms, blocks })
}

/// Guard-free abstractions: `H1` keeps `R22`, `H2` uses `R22 · π_{ker R12}`.
pub fn build_abstractions(core: &GuardedCore) -> (GuardedCore, GuardedCore) {
    let h1 = core.with_resets(|e| e.reset.clone());
    let h2 = core.with_resets(CoreEdge::effective_reset);
    (h1, h2)
}

/// A strongly connected component of the transition graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Component {
    pub members: Vec<usize>,
    /// Singleton without a self-loop: executions pass through it at most once.
    pub transient: bool,
}

/// Strongly connected components in reverse topological order of the condensation.
pub fn scc_decomposition(node_count: usize, edges: &[(usize, usize)]) -> Vec<Component> {
    let mut g = DiGraph::<(), ()>::with_capacity(node_count, edges.len());
    let nodes: Vec<_> = (0..node_count).map(|_| g.add_node(())).collect();
    for &(a, b) in edges {
        g.add_edge(nodes[a], nodes[b], ());
    }
    tarjan_scc(&g)
        .into_iter()
        .map(|comp| {
            let mut members: Vec<usize> = comp.into_iter().map(|n| n.index()).collect();
            members.sort_unstable();
            let transient = members.len() == 1 && !edges.contains(&(members[0], members[0]));
            Component { members, transient }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;
    use nalgebra::Complex;
    use rand::{Rng, SeedableRng};

    const TOL: f64 = 1e-9;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    fn mode<'a>(sys: &'a SwitchingSystem, label: &str) -> &'a LtiMode {
        sys.mode(sys.index_of(label).unwrap())
    }

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn canonical_forms_of_worked_modes() {
        let sys = fixtures::worked_example();
        let f1 = canonical_form(mode(&sys, "1"), TOL);
        assert!(f1.is_identity_transform());
        assert_eq!(f1.d, 2);
        assert_eq!(f1.a22, m(2, 2, &[-2.0, 1.0, 1.0, -2.0]));
        let f6 = canonical_form(mode(&sys, "6"), TOL);
        assert!(f6.is_identity_transform());
        assert_eq!(f6.a22, m(1, 1, &[-3.0]));
        let f4 = canonical_form(mode(&sys, "4"), TOL);
        assert_eq!(f4.d, 0);
        assert_eq!(f4.a22.shape(), (0, 0));
    }

    fn random_unobservable_mode(rng: &mut impl Rng) -> LtiMode {
        // build in canonical form, then rotate by a random orthogonal matrix
        let n = rng.random_range(2..=5);
        let d = rng.random_range(1..n);
        let r = n - d;
        let mut a = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        a.view_mut((0, r), (r, d)).fill(0.0);
        let mut c = Matrix::from_fn(1, n, |_, _| rng.random_range(-2.0..2.0));
        c.columns_mut(r, d).fill(0.0);
        let q = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        LtiMode::new("r", q.transpose() * a * &q, Matrix::zeros(n, 1), c * &q).unwrap()
    }

    fn sorted_eigs(a: &Matrix) -> Vec<Complex<f64>> {
        let mut e: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
        e.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
        e
    }

    #[test]
    fn canonical_form_properties_on_random_modes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let mode = random_unobservable_mode(&mut rng);
            let f = canonical_form(&mode, TOL);
            let n = mode.state_dim();
            let obs_rank = subspace::rank(&mode.observability_matrix(), TOL);
            assert_eq!(f.d, n - obs_rank);
            let back = f.t.transpose() * f.transformed_a() * &f.t;
            assert!((back - &mode.a).norm() <= 10.0 * TOL * mode.a.norm().max(1.0));
            let ct = &mode.c * f.t.transpose();
            assert!(ct.columns(n - f.d, f.d).amax() <= 10.0 * TOL);
            let upper = (&f.t * &mode.a * f.t.transpose()).view((0, n - f.d), (n - f.d, f.d)).amax();
            assert!(upper <= 1e-8);
            let whole = sorted_eigs(&mode.a);
            let mut parts: Vec<Complex<f64>> = sorted_eigs(&f.a11);
            parts.extend(sorted_eigs(&f.a22));
            parts.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
            for (x, y) in whole.iter().zip(&parts) {
                assert!((x - y).norm() < 1e-6, "{x} vs {y}");
            }
            assert_eq!(
                subspace::rank(
                    &LtiMode::new("o", f.a11.clone(), Matrix::zeros(n - f.d, 1), f.c1.clone())
                        .unwrap()
                        .observability_matrix(),
                    TOL
                ),
                n - f.d
            );
        }
    }

    #[test]
    fn autonomous_part_zeroes_inputs() {
        let sys = fixtures::worked_example();
        let auto = autonomous_part(&sys);
        assert!(auto.modes().iter().all(|m| m.b.iter().all(|&x| x == 0.0)));
        let again = autonomous_part(&auto);
        for (a, b) in auto.modes().iter().zip(again.modes()) {
            assert_eq!(a.b, b.b);
            assert_eq!(a.a, b.a);
        }
        let single = autonomous_part(&fixtures::self_loop());
        assert_eq!(single.mode(0).b, Matrix::zeros(2, 1));
    }

    #[test]
    fn restrict_cases() {
        let sys = fixtures::worked_example();
        let qhat = unobservable_modes(&sys, TOL);
        assert_eq!(qhat, labels(&["1", "2", "3", "5", "6"]));
        let r = restrict(&autonomous_part(&sys), &qhat).unwrap();
        assert_eq!(r.edges().len(), 8);
        let all = restrict(&sys, &sys.labels()).unwrap();
        assert_eq!(all.edges().len(), sys.edges().len());
        let four = restrict(&sys, &labels(&["4"])).unwrap();
        assert_eq!(four.len(), 1);
        assert!(four.edges().is_empty());
        assert!(matches!(restrict(&sys, &[]), Err(ModelError::EmptyRestriction)));
        assert!(matches!(restrict(&sys, &labels(&["9"])), Err(ModelError::UnknownLabel(_))));
    }

    #[test]
    fn unobservable_mode_extremes() {
        assert!(unobservable_modes(&fixtures::observable_pair(), TOL).is_empty());
        let doc =
            r#"{"modes": {"a": {"A": 1, "B": 1, "C": 0}, "b": {"A": [[1,0],[0,2]], "B": [[1],[1]], "C": [[0,0]]}}}"#;
        let sys = SwitchingSystem::from_json(doc).unwrap();
        assert_eq!(unobservable_modes(&sys, TOL), sys.labels());
    }

    fn worked_core() -> GuardedCore {
        let sys = fixtures::worked_example();
        let qhat = unobservable_modes(&sys, TOL);
        build_core(&restrict(&autonomous_part(&sys), &qhat).unwrap(), TOL).unwrap()
    }

    #[test]
    fn core_blocks_of_worked_example() {
        let core = worked_core();
        let blocks = |f: &str, t: &str| {
            let sys_idx = core.edges.iter().position(|e| core.labels[e.from] == f && core.labels[e.to] == t).unwrap();
            core.blocks[sys_idx].clone()
        };
        assert_eq!(blocks("1", "2").r12, m(1, 2, &[2.0, -3.0]));
        assert_eq!(blocks("2", "3").r22, m(1, 2, &[1.0, 1.0]));
        assert_eq!(blocks("6", "5").r22, m(2, 1, &[10.0, 10.0]));
        assert_eq!(blocks("3", "6").r12, m(1, 1, &[0.0]));
        assert!(core.edge("3", "6").unwrap().guard.is_full());
        assert!(core.edge("3", "3").unwrap().guard.is_zero());
    }

    #[test]
    fn invertible_r12_gives_origin_guard() {
        let doc = r#"{"modes": {"a": {"A": [[1,0],[0,-1]], "B": [[0],[0]], "C": [[1,0]]}},
                      "edges": [{"from": "a", "to": "a", "reset": [[1, 3],[0, 2]]}]}"#;
        let core = build_core(&SwitchingSystem::from_json(doc).unwrap(), TOL).unwrap();
        assert!(core.edges[0].guard.is_zero());
    }

    #[test]
    fn build_core_rejects_observable_modes() {
        assert!(matches!(
            build_core(&fixtures::worked_example(), TOL),
            Err(DecompositionError::ObservableMode(l)) if l == "4"
        ));
    }

    #[test]
    fn abstractions_of_worked_core() {
        let core = worked_core();
        let (h1, h2) = build_abstractions(&core);
        assert!(h1.is_unguarded() && h2.is_unguarded());
        let r2 = &h2.edge("5", "6").unwrap().reset;
        assert_eq!(r2.shape(), (1, 2));
        assert_abs_diff_eq!(r2.amax(), 0.0, epsilon = 1e-15);
        assert_eq!(h1.edge("5", "6").unwrap().reset, m(1, 2, &[10.0, 0.0]));
        // R12 = 0 leaves the reset untouched
        assert_eq!(h2.edge("3", "6").unwrap().reset, m(1, 1, &[1.0]));
    }

    #[test]
    fn zero_r22_gives_zero_r2() {
        let doc = r#"{"modes": {"a": {"A": [[1,0],[0,-1]], "B": [[0],[0]], "C": [[1,0]]}},
                      "edges": [{"from": "a", "to": "a", "reset": [[1, 0],[0, 0]]}]}"#;
        let core = build_core(&SwitchingSystem::from_json(doc).unwrap(), TOL).unwrap();
        let (_, h2) = build_abstractions(&core);
        assert_eq!(h2.edges[0].reset, Matrix::zeros(1, 1));
    }

    #[test]
    fn scc_of_worked_core() {
        let core = worked_core();
        let comps = scc_decomposition(core.len(), &core.edge_pairs());
        let sets: Vec<Vec<String>> =
            comps.iter().map(|c| c.members.iter().map(|&i| core.labels[i].clone()).collect()).collect();
        assert_eq!(sets.len(), 3);
        for want in [labels(&["1", "2"]), labels(&["3"]), labels(&["5", "6"])] {
            assert!(sets.contains(&want), "{want:?} missing from {sets:?}");
        }
        assert!(comps.iter().all(|c| !c.transient));
        // sinks first
        assert_eq!(sets[0], labels(&["5", "6"]));
    }

    #[test]
    fn scc_small_graphs() {
        let comps = scc_decomposition(1, &[]);
        assert_eq!(comps, vec![Component { members: vec![0], transient: true }]);
        let comps = scc_decomposition(3, &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(comps, vec![Component { members: vec![0, 1, 2], transient: false }]);
    }

    #[test]
    fn scc_partition_and_acyclic_condensation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(1..9);
            let edges: Vec<(usize, usize)> =
                (0..rng.random_range(0..20)).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
            let comps = scc_decomposition(n, &edges);
            let mut seen: Vec<usize> = comps.iter().flat_map(|c| c.members.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let comp_of = |v: usize| comps.iter().position(|c| c.members.contains(&v)).unwrap();
            // reverse topological: every inter-component edge goes to an earlier component
            for &(a, b) in &edges {
                assert!(comp_of(b) <= comp_of(a));
            }
        }
    }
}
