//! The full analysis pipeline and its JSON report.

use serde::Serialize;

use crate::decomposition::{scc_decomposition, GuardedCore};
use crate::location::{distinguishing_input, ExponentialInput, InputSearch, LocationError, LoopResetReport};
use crate::simulate::InputSignal;
use crate::stability::{
    detectability, observability, Certificate, DetectabilityStatus, StabilityConfig, StabilityError, StabilityVerdict,
    Status,
};
use crate::system::SwitchingSystem;

#[derive(Debug, Clone, Default)]
pub struct AnalysisConfig {
    pub stability: StabilityConfig,
    pub find_input: bool,
    pub input_search: InputSearch,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairSummary {
    pub i: String,
    pub h: String,
    pub distinguishable: bool,
    pub witness_k: Option<usize>,
    /// `dim 𝒱_ih`.
    pub v_dim: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocationSummary {
    pub location_observable: bool,
    pub pairs: Vec<PairSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub label: String,
    /// Dimension of the unobservable part.
    pub d: usize,
    pub identity_transform: bool,
    #[serde(serialize_with = "crate::ser::matrix")]
    pub a22: crate::subspace::Matrix,
    /// Eigenvalues of `A22` as `[re, im]`.
    pub a22_spectrum: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoreEdgeSummary {
    pub from: String,
    pub to: String,
    pub guard_dim: usize,
    #[serde(serialize_with = "crate::ser::subspace")]
    pub guard_basis: crate::subspace::Subspace,
    #[serde(serialize_with = "crate::ser::matrix")]
    pub r12: crate::subspace::Matrix,
    #[serde(serialize_with = "crate::ser::matrix")]
    pub r22: crate::subspace::Matrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentSummary {
    pub members: Vec<String>,
    pub transient: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionSummary {
    pub modes: Vec<ModeSummary>,
    pub edges: Vec<CoreEdgeSummary>,
    pub sccs: Vec<ComponentSummary>,
}

/// Eigenvalues of `A'P + PA` for a Lyapunov certificate, one list per mode.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReplay {
    pub members: Vec<String>,
    pub spectra: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectabilitySummary {
    pub status: DetectabilityStatus,
    pub cond_i: bool,
    pub cond_ii: bool,
    pub cond_iii: Status,
    /// Only the sufficient direction of the criterion applies to guarded systems.
    pub guarded_input: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub system: Option<String>,
    pub location_observability: LocationSummary,
    pub observability: bool,
    pub loop_reset_condition: LoopResetReport,
    pub qhat: Vec<String>,
    pub decomposition: Option<DecompositionSummary>,
    pub stability: StabilityVerdict,
    pub lyapunov_replay: Vec<LyapunovReplay>,
    pub detectability: DetectabilitySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinguishing_input: Option<ExponentialInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinguishing_input_error: Option<String>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is serializable")
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let name = self.system.as_deref().unwrap_or("(unnamed)");
        out.push_str(&format!("system: {name}\n"));
        let loc = &self.location_observability;
        out.push_str(&format!(
            "location observable: {} ({} ordered pairs)\n",
            loc.location_observable,
            loc.pairs.len()
        ));
        for p in loc.pairs.iter().filter(|p| !p.distinguishable) {
            out.push_str(&format!("  indistinguishable pair ({}, {})\n", p.i, p.h));
        }
        out.push_str(&format!("observable: {}\n", self.observability));
        out.push_str(&format!("loop reset condition: {}\n", self.loop_reset_condition.holds));
        out.push_str(&format!("unobservable modes: {{{}}}\n", self.qhat.join(", ")));
        for c in &self.stability.components {
            out.push_str(&format!(
                "  component {{{}}}{}: {:?} via {}\n",
                c.members.join(", "),
                if c.transient { " (transient)" } else { "" },
                c.verdict.status,
                certificate_name(&c.verdict.certificate)
            ));
        }
        out.push_str(&format!("core stability: {:?}\n", self.stability.status));
        out.push_str(&format!("detectability: {:?}\n", self.detectability.status));
        if let Some(u) = &self.distinguishing_input {
            out.push_str(&format!("distinguishing input: z = {:?}, lambda = {}\n", u.z, u.lambda));
        }
        if let Some(e) = &self.distinguishing_input_error {
            out.push_str(&format!("distinguishing input: {e}\n"));
        }
        out
    }

    /// The input found by the search, as a simulator signal.
    pub fn input_signal(&self) -> Option<InputSignal> {
        self.distinguishing_input.as_ref().map(|u| InputSignal::Exponential { z: u.z.clone(), lambda: u.lambda })
    }
}

/// Provenance string of a certificate.
pub fn certificate_name(c: &Certificate) -> String {
    match c {
        Certificate::CommonLyapunov { .. } => "CommonLyapunov".into(),
        Certificate::PerModeHurwitzWithZeroResetCycle => "PerModeHurwitzWithZeroResetCycle".into(),
        Certificate::GuardAtOrigin => "GuardAtOrigin".into(),
        Certificate::Hurwitz => "Hurwitz".into(),
        Certificate::AbstractionStable { which, inner } => {
            format!("AbstractionStable({which:?}, {})", certificate_name(inner))
        }
        Certificate::DivergentWitness(w) => {
            format!("DivergentWitness({} -> growth {:.4})", w.modes.join("->"), w.growth)
        }
        Certificate::ComponentWise => "ComponentWise".into(),
        Certificate::Trivial => "Trivial".into(),
        Certificate::None => "None".into(),
    }
}

fn decomposition_summary(core: &GuardedCore) -> DecompositionSummary {
    let modes = core
        .forms
        .iter()
        .map(|f| ModeSummary {
            label: f.label.clone(),
            d: f.d,
            identity_transform: f.is_identity_transform(),
            a22: f.a22.clone(),
            a22_spectrum: f.a22.complex_eigenvalues().iter().map(|z| [z.re, z.im]).collect(),
        })
        .collect();
    let edges = core
        .edges
        .iter()
        .zip(&core.blocks)
        .map(|(e, b)| CoreEdgeSummary {
            from: core.labels[e.from].clone(),
            to: core.labels[e.to].clone(),
            guard_dim: e.guard.dim(),
            guard_basis: e.guard.clone(),
            r12: b.r12.clone(),
            r22: b.r22.clone(),
        })
        .collect();
    let sccs = scc_decomposition(core.len(), &core.edge_pairs())
        .into_iter()
        .map(|c| ComponentSummary {
            members: c.members.iter().map(|&i| core.labels[i].clone()).collect(),
            transient: c.transient,
        })
        .collect();
    DecompositionSummary { modes, edges, sccs }
}

fn lyapunov_replays(core: &GuardedCore, verdict: &StabilityVerdict) -> Vec<LyapunovReplay> {
    verdict
        .components
        .iter()
        .filter_map(|c| match &c.verdict.certificate {
            Certificate::CommonLyapunov { p } => Some(LyapunovReplay {
                members: c.members.clone(),
                spectra: c
                    .members
                    .iter()
                    .map(|l| {
                        let a = &core.a22[core.index_of(l).expect("component member")];
                        let q = a.transpose() * p + p * a;
                        let mut e: Vec<f64> = nalgebra::SymmetricEigen::new(q).eigenvalues.iter().copied().collect();
                        e.sort_by(f64::total_cmp);
                        e
                    })
                    .collect(),
            }),
            _ => None,
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

/// Runs every analysis on `sys` and assembles the report.
pub fn analyze(sys: &SwitchingSystem, cfg: &AnalysisConfig) -> Result<AnalysisReport, AnalysisError> {
    let tol = cfg.stability.tol;
    let det = detectability(sys, &cfg.stability)?;
    let location_observability = LocationSummary {
        location_observable: det.location.location_observable,
        pairs: det
            .location
            .pairs
            .iter()
            .map(|p| PairSummary {
                i: sys.label(p.i).to_string(),
                h: sys.label(p.h).to_string(),
                distinguishable: p.distinguishable,
                witness_k: p.witness_k,
                v_dim: p.v_ih.dim(),
            })
            .collect(),
    };
    let (distinguishing, input_error) = if cfg.find_input {
        match distinguishing_input(sys, tol, &cfg.input_search) {
            Ok(u) => (Some(u), None),
            Err(e @ (LocationError::LocationUnobservable(_) | LocationError::NoWitnessFound { .. })) => {
                (None, Some(e.to_string()))
            }
            Err(e) => (None, Some(format!("input search failed: {e}"))),
        }
    } else {
        (None, None)
    };
    Ok(AnalysisReport {
        system: sys.name().map(str::to_string),
        location_observability,
        observability: observability(sys, tol),
        loop_reset_condition: det.loop_reset.clone(),
        qhat: det.unobservable_modes.clone(),
        decomposition: det.core.as_ref().map(decomposition_summary),
        lyapunov_replay: det.core.as_ref().map(|c| lyapunov_replays(c, &det.cond_iii)).unwrap_or_default(),
        stability: det.cond_iii.clone(),
        detectability: DetectabilitySummary {
            status: det.status,
            cond_i: det.cond_i,
            cond_ii: det.cond_ii,
            cond_iii: det.cond_iii.status,
            guarded_input: det.guarded_input,
        },
        distinguishing_input: distinguishing,
        distinguishing_input_error: input_error,
    })
}
