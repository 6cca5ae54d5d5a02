use serde::{Deserialize, Serialize};

use super::params::coupling_term;
use super::trace::{IterDiagnostics, SolverTrace};

/// Absolute slack allowed before an inequality counts as violated.
pub const DIAGNOSTIC_SLACK: f64 = 1e-9;

/// Outcome of one inequality over all recorded iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest observed `rhs − lhs` (negative means violated).
    pub worst_slack: f64,
    /// Iteration of the worst slack.
    pub worst_k: Option<usize>,
    pub first_violation: Option<usize>,
}

impl CheckOutcome {
    fn new(name: &str) -> Self {
        CheckOutcome {
            name: name.into(),
            evaluated: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            worst_k: None,
            first_violation: None,
        }
    }

    fn observe(&mut self, k: usize, slack: f64) {
        self.evaluated += 1;
        if slack < self.worst_slack || slack.is_nan() {
            self.worst_slack = slack;
            self.worst_k = Some(k);
        }
        if !(slack >= -DIAGNOSTIC_SLACK) {
            self.violations += 1;
            self.first_violation.get_or_insert(k);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Result of [`diagnostics_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// False when the trace carries no diagnostic records.
    pub recorded: bool,
    pub checks: Vec<CheckOutcome>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.recorded && self.checks.iter().all(CheckOutcome::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Right-hand side of the one-step recursion bounding `‖X_{k+1} − p‖²_Ψ`.
pub fn recursion_bound(d: &IterDiagnostics, nu: f64, ell_v_psi: f64) -> f64 {
    let (a, r) = (d.alpha, d.rho);
    let q = (3.0 - nu) / (2.0 * r * (1.0 + ell_v_psi));
    (1.0 + a) * d.dist_cur - a * d.dist_prev + d.d_m + d.d_n - nu * r / 2.0 * d.r_psi_z.powi(2)
        + a * d.step_cur * (2.0 * a + q * (1.0 - a))
        - (1.0 - a) * (q - 1.0) * d.step_next
}

/// Evaluates, at every recorded iteration:
///
/// * `recursion`: `‖X_{k+1} − p‖²_Ψ` against [`recursion_bound`];
/// * `residual-bound`: `−‖Z_k − Y_k‖²_Ψ ≤ ‖U_k‖²_{Ψ⁻¹} − ½ r²_Ψ(Z_k)`;
/// * `lyapunov-nonnegative`: `H_k ≥ 0`;
/// * `coupling`: `2α_k² + (1−α_k)(1 − (3−ν)(1−α_k)/(2ρ_k(1+ℓ_{V,Ψ}))) ≤ 0`;
/// * `decrease-nonnegative`: `δ_k ≥ 0`.
pub fn diagnostics_check(trace: &SolverTrace) -> DiagnosticsReport {
    if !trace.has_diagnostics() {
        return DiagnosticsReport {
            recorded: false,
            checks: Vec::new(),
        };
    }
    let (nu, ell) = (trace.nu, trace.ell_v_psi);
    let mut rec = CheckOutcome::new("recursion");
    let mut yzg = CheckOutcome::new("residual-bound");
    let mut h = CheckOutcome::new("lyapunov-nonnegative");
    let mut coup = CheckOutcome::new("coupling");
    let mut delta = CheckOutcome::new("decrease-nonnegative");
    for r in &trace.records {
        let d = r.diag.as_ref().expect("checked above");
        rec.observe(r.k, recursion_bound(d, nu, ell) - d.dist_next);
        yzg.observe(r.k, d.u_err - 0.5 * d.r_psi_z.powi(2) + d.zy_dist);
        h.observe(r.k, d.h);
        coup.observe(r.k, -coupling_term(nu, d.alpha, d.rho, ell));
        delta.observe(r.k, d.delta);
    }
    DiagnosticsReport {
        recorded: true,
        checks: vec![rec, yzg, h, coup, delta],
    }
}
