use std::sync::Arc;
use std::time::Instant;

use crate::blockvec::{psi_dist_sq, Preconditioner, PrimalDualState};
use crate::error::{Error, Result};
use crate::operators::{residual_res, ExtendedOperator};
use crate::stochastic::{ExactOracle, Phase, SamplingOracle, StreamKey};

use super::kernel::{self, AgentSteps};
use super::params::{
    alpha_schedule, coupled_rho, coupling_term, rho_schedule, RhoRule, SolverParams, StepSizes,
    Variant,
};
use super::trace::{IterDiagnostics, IterRecord, SolverTrace};

/// Everything one iteration produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub alpha: f64,
    pub rho: f64,
    /// Inertial point `Z_k` (equal to `X_k` without inertia).
    pub z: PrimalDualState,
    /// `A_k = V̂(Z_k, ξ_k)`.
    pub a: PrimalDualState,
    /// `Y_k = J_{Ψ⁻¹T}(Z_k − Ψ⁻¹A_k)`.
    pub y: PrimalDualState,
    /// `B_k = V̂(Y_k, η_k)`; absent for the forward-backward variant.
    pub b: Option<PrimalDualState>,
    pub next: PrimalDualState,
}

/// Why a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// `r_Ψ` fell below the tolerance after the given iteration.
    Converged { iteration: usize },
    IterationLimit,
    /// A numeric failure; the returned state is the last finite iterate.
    Aborted(Error),
}

impl StopReason {
    pub fn label(&self) -> &'static str {
        match self {
            StopReason::Converged { .. } => "converged",
            StopReason::IterationLimit => "iteration-limit",
            StopReason::Aborted(_) => "aborted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: PrimalDualState,
    pub trace: SolverTrace,
    pub stop: StopReason,
    pub wall_time_secs: f64,
}

/// A validated solver configuration bound to one problem.
#[derive(Debug, Clone)]
pub struct Solver {
    op: ExtendedOperator,
    oracle: Arc<dyn SamplingOracle>,
    params: SolverParams,
    psi: Preconditioner,
    ell_v_psi: f64,
}

impl Solver {
    /// Validates `params` against the problem: step-size admissibility,
    /// batch summability, and the inertia/relaxation coupling over the
    /// whole iteration budget.
    pub fn new(op: ExtendedOperator, oracle: Arc<dyn SamplingOracle>, params: SolverParams) -> Result<Self> {
        params.validate()?;
        let part = op.problem().partition().clone();
        let ell_v = op.lipschitz_v();
        let bound = max_admissible_step(params.nu, ell_v);
        let psi = match &params.steps {
            StepSizes::Auto => Preconditioner::uniform(part, bound.min(1.0))?,
            StepSizes::Uniform(v) => Preconditioner::uniform(part, *v)?,
            StepSizes::PerAgent { gamma, sigma, tau } => {
                Preconditioner::new(part, gamma.clone(), sigma.clone(), tau.clone())?
            }
        };
        if psi.max_step() > bound * (1.0 + 1e-12) {
            return Err(Error::param(
                "steps",
                format!(
                    "every step size must be at most (1 - nu)/(2 l_V) = {bound:e}, got {:e}",
                    psi.max_step()
                ),
            ));
        }
        let ell_v_psi = ell_v * psi.max_step();
        let solver = Solver {
            op,
            oracle,
            params,
            psi,
            ell_v_psi,
        };
        solver.audit_schedules();
        Ok(solver)
    }

    fn audit_schedules(&self) {
        let p = &self.params;
        if p.variant != Variant::Risfbf {
            return;
        }
        let mut clamped = false;
        let mut first_bad = None;
        for k in 0..p.max_iters {
            let a = self.alpha(k);
            if p.rho == RhoRule::Coupled && coupled_rho(p.nu, p.alpha_bar, a, self.ell_v_psi) > 1.0 {
                clamped = true;
            }
            if first_bad.is_none() && coupling_term(p.nu, a, self.rho(k), self.ell_v_psi) > 0.0 {
                first_bad = Some(k);
            }
        }
        if clamped {
            log::warn!(
                "relaxation parameter exceeds 1 for l_V,Psi = {:.4}; clamped to 1 (smaller steps avoid this)",
                self.ell_v_psi
            );
        }
        if let Some(k) = first_bad {
            log::warn!("inertia/relaxation coupling inequality fails from iteration {k}; convergence is not guaranteed");
        }
    }

    pub fn operator(&self) -> &ExtendedOperator {
        &self.op
    }

    pub fn oracle(&self) -> &Arc<dyn SamplingOracle> {
        &self.oracle
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn psi(&self) -> &Preconditioner {
        &self.psi
    }

    /// `ℓ_{V,Ψ} = ℓ_V / λ_min(Ψ)`.
    pub fn ell_v_psi(&self) -> f64 {
        self.ell_v_psi
    }

    pub fn alpha(&self, k: usize) -> f64 {
        alpha_schedule(&self.params, k)
    }

    pub fn rho(&self, k: usize) -> f64 {
        rho_schedule(&self.params, self.alpha(k), self.ell_v_psi)
    }

    pub fn batch_size(&self, k: usize) -> usize {
        self.params.batch.batch_size(k)
    }

    pub(crate) fn agent_steps(&self, agent: usize) -> AgentSteps {
        AgentSteps {
            gamma: self.psi.gamma()[agent],
            sigma: self.psi.sigma()[agent],
            tau: self.psi.tau()[agent],
        }
    }

    /// One iteration of the configured variant; `x_prev` is ignored without inertia.
    pub fn step(&self, x: &PrimalDualState, x_prev: &PrimalDualState, k: usize, seed: u64) -> Result<StepOutput> {
        match self.params.variant {
            Variant::Sfb => self.sfb_step(x, k, seed),
            Variant::Risfbf | Variant::Sfbf => self.risfbf_step(x, x_prev, k, seed),
        }
    }

    /// Inertia, forward-backward, forward correction and relaxation.
    pub fn risfbf_step(
        &self,
        x: &PrimalDualState,
        x_prev: &PrimalDualState,
        k: usize,
        seed: u64,
    ) -> Result<StepOutput> {
        let part = x.partition().clone();
        let n = part.num_agents();
        let (alpha, rho, batch) = (self.alpha(k), self.rho(k), self.batch_size(k));
        let mut z = x.clone();
        for i in 0..n {
            z.set_agent(i, &kernel::inertia(&x.agent_state(i), &x_prev.agent_state(i), alpha));
        }
        if !z.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                phase: "inertia".into(),
            });
        }
        let (a, y) = self.forward_all(&z, k, seed, batch)?;
        let key = StreamKey {
            seed,
            iteration: k,
            phase: Phase::Eta,
        };
        let mut b = PrimalDualState::zeros(part.clone());
        let mut next = PrimalDualState::zeros(part);
        for i in 0..n {
            let (bi, ni) = kernel::correct(
                &self.op,
                &*self.oracle,
                i,
                self.agent_steps(i),
                &y,
                &z.agent_state(i),
                &a.agent_state(i),
                rho,
                batch,
                key,
            )?;
            b.set_agent(i, &bi);
            next.set_agent(i, &ni);
        }
        Ok(StepOutput {
            alpha,
            rho,
            z,
            a,
            y,
            b: Some(b),
            next,
        })
    }

    /// `X_{k+1} = J_{Ψ⁻¹T}(X_k − Ψ⁻¹V̂(X_k, ξ_k))`.
    pub fn sfb_step(&self, x: &PrimalDualState, k: usize, seed: u64) -> Result<StepOutput> {
        let (a, y) = self.forward_all(x, k, seed, self.batch_size(k))?;
        Ok(StepOutput {
            alpha: 0.0,
            rho: 1.0,
            z: x.clone(),
            a,
            next: y.clone(),
            y,
            b: None,
        })
    }

    fn forward_all(
        &self,
        z: &PrimalDualState,
        k: usize,
        seed: u64,
        batch: usize,
    ) -> Result<(PrimalDualState, PrimalDualState)> {
        let part = z.partition().clone();
        let key = StreamKey {
            seed,
            iteration: k,
            phase: Phase::Xi,
        };
        let mut a = PrimalDualState::zeros(part.clone());
        let mut y = PrimalDualState::zeros(part.clone());
        for i in 0..part.num_agents() {
            let (ai, yi) = kernel::forward(&self.op, &*self.oracle, i, self.agent_steps(i), z, batch, key)?;
            a.set_agent(i, &ai);
            y.set_agent(i, &yi);
        }
        Ok((a, y))
    }

    /// Trace record for iteration `k` (without `res`).
    pub fn observe(
        &self,
        k: usize,
        x_prev: &PrimalDualState,
        x: &PrimalDualState,
        out: &StepOutput,
        reference: Option<&PrimalDualState>,
    ) -> Result<IterRecord> {
        let problem = self.op.problem();
        let next = &out.next;
        let r_psi = self.op.residual_r_psi(next, &self.psi)?;
        let step_norm = psi_dist_sq(next, x, &self.psi)?.sqrt();
        let diag = match (reference, &out.b) {
            (Some(p), Some(b)) if self.params.diagnostics => {
                Some(self.diagnostics(x_prev, x, out, b, p)?)
            }
            _ => None,
        };
        Ok(IterRecord {
            k,
            r_psi,
            res: None,
            consensus_gap: next.consensus_gap(),
            feas_gap: problem.feasibility_gap(next.u()),
            step_norm,
            diag,
        })
    }

    fn diagnostics(
        &self,
        x_prev: &PrimalDualState,
        x: &PrimalDualState,
        out: &StepOutput,
        b: &PrimalDualState,
        p: &PrimalDualState,
    ) -> Result<IterDiagnostics> {
        let psi = &self.psi;
        let (nu, ell, alpha, rho) = (self.params.nu, self.ell_v_psi, out.alpha, out.rho);
        let vz = self.op.apply_v(&out.z)?;
        let vy = self.op.apply_v(&out.y)?;
        let u_k: Vec<f64> = out.a.as_slice().iter().zip(vz.as_slice()).map(|(a, v)| a - v).collect();
        let w_k: Vec<f64> = b.as_slice().iter().zip(vy.as_slice()).map(|(b, v)| b - v).collect();
        let e_k: Vec<f64> = w_k.iter().zip(&u_k).map(|(w, u)| w - u).collect();
        let u_err = psi.inv_norm_sq(&u_k);
        let e_err = psi.inv_norm_sq(&e_k);
        let d_m = (3.0 - nu) * rho / (1.0 + ell) * e_err + nu * rho * u_err;
        let d_n = 2.0
            * rho
            * w_k
                .iter()
                .zip(p.as_slice())
                .zip(out.y.as_slice())
                .map(|((w, p), y)| w * (p - y))
                .sum::<f64>();
        let dist_next = psi_dist_sq(&out.next, p, psi)?;
        let dist_cur = psi_dist_sq(x, p, psi)?;
        let dist_prev = psi_dist_sq(x_prev, p, psi)?;
        let step_cur = psi_dist_sq(x, x_prev, psi)?;
        let step_next = psi_dist_sq(&out.next, x, psi)?;
        let zy_dist = psi_dist_sq(&out.z, &out.y, psi)?;
        let r_psi_z = self.op.displacement(&out.z, &vz, psi)?;
        let c = (3.0 - nu) / (2.0 * rho * (1.0 + ell)) - 1.0;
        let h = dist_cur - alpha * dist_prev + (1.0 - alpha) * c * step_cur;
        let delta = nu * rho / 2.0 * r_psi_z * r_psi_z - coupling_term(nu, alpha, rho, ell) * step_cur;
        Ok(IterDiagnostics {
            alpha,
            rho,
            dist_next,
            dist_cur,
            dist_prev,
            step_cur,
            step_next,
            zy_dist,
            r_psi_z,
            u_err,
            e_err,
            d_m,
            d_n,
            h,
            delta,
        })
    }

    pub(crate) fn empty_trace(&self) -> SolverTrace {
        SolverTrace {
            records: Vec::new(),
            iterations: 0,
            nu: self.params.nu,
            ell_v_psi: self.ell_v_psi,
        }
    }

    pub(crate) fn check_start(&self, x0: &PrimalDualState, reference: Option<&PrimalDualState>) -> Result<()> {
        let part = self.op.problem().partition();
        if **x0.partition() != **part {
            return Err(Error::dim("initial state", part.state_len(), x0.len()));
        }
        if !x0.is_finite() {
            return Err(Error::Validation("initial state has non-finite entries".into()));
        }
        if self.params.diagnostics {
            match reference {
                None => {
                    return Err(Error::param(
                        "diagnostics",
                        "requires a reference solution",
                    ))
                }
                Some(p) if **p.partition() != **part => {
                    return Err(Error::dim("reference", part.state_len(), p.len()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Whether record `k` survives decimation.
    pub(crate) fn keeps(&self, k: usize, last: bool) -> bool {
        last || k % self.params.decimation == 0
    }

    /// Fills in `res` at iterations that are multiples of `res_every`, and at the last one.
    pub(crate) fn compute_res(&self, rec: &mut IterRecord, next: &PrimalDualState, last: bool) {
        let every = self.params.res_every;
        if !(last || (every > 0 && rec.k % every == 0)) {
            return;
        }
        match residual_res(self.op.problem(), &next.u_vector()) {
            Ok(v) => rec.res = Some(v),
            Err(e) => log::warn!("res unavailable at iteration {}: {e}", rec.k),
        }
    }

    /// Iterates from `X_0 = X_{−1} = x0` until `r_Ψ < tol` or the budget runs out.
    pub fn run(&self, x0: &PrimalDualState, seed: u64, reference: Option<&PrimalDualState>) -> Result<RunOutput> {
        self.check_start(x0, reference)?;
        let start = Instant::now();
        let mut trace = self.empty_trace();
        let mut x_prev = x0.clone();
        let mut x = x0.clone();
        let mut stop = StopReason::IterationLimit;
        for k in 0..self.params.max_iters {
            let out = match self.step(&x, &x_prev, k, seed) {
                Ok(o) => o,
                Err(e) => {
                    stop = StopReason::Aborted(e);
                    break;
                }
            };
            let mut rec = match self.observe(k, &x_prev, &x, &out, reference) {
                Ok(r) => r,
                Err(e) => {
                    stop = StopReason::Aborted(e);
                    break;
                }
            };
            trace.iterations = k + 1;
            let converged = rec.r_psi < self.params.tol;
            let last = converged || k + 1 == self.params.max_iters;
            if self.keeps(k, last) {
                self.compute_res(&mut rec, &out.next, last);
                trace.records.push(rec);
            }
            x_prev = x;
            x = out.next;
            if converged {
                stop = StopReason::Converged { iteration: k };
                break;
            }
        }
        Ok(RunOutput {
            state: x,
            trace,
            stop,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }
}

/// `(1 − ν)/(2ℓ_V)`, the largest admissible step size.
pub fn max_admissible_step(nu: f64, ell_v: f64) -> f64 {
    if ell_v > 0.0 {
        (1.0 - nu) / (2.0 * ell_v)
    } else {
        f64::INFINITY
    }
}

/// Convenience wrapper: validate and run once.
pub fn run(
    op: &ExtendedOperator,
    oracle: Arc<dyn SamplingOracle>,
    params: &SolverParams,
    x0: &PrimalDualState,
    seed: u64,
) -> Result<RunOutput> {
    Solver::new(op.clone(), oracle, params.clone())?.run(x0, seed, None)
}

/// A zero of `V + T` from a noise-free forward-backward-forward run started at 0.
pub fn reference_solution(op: &ExtendedOperator, tol: f64, max_iters: usize) -> Result<PrimalDualState> {
    let params = SolverParams {
        variant: Variant::Sfbf,
        tol,
        max_iters,
        decimation: max_iters,
        res_every: 0,
        ..SolverParams::default()
    };
    let oracle = Arc::new(ExactOracle::new(op.problem().gradient().clone()));
    let solver = Solver::new(op.clone(), oracle, params)?;
    let x0 = PrimalDualState::zeros(op.problem().partition().clone());
    let out = solver.run_quiet(&x0)?;
    match out.stop {
        StopReason::Converged { .. } => Ok(out.state),
        StopReason::Aborted(e) => Err(e),
        StopReason::IterationLimit => Err(Error::Tolerance {
            routine: "reference solution".into(),
            achieved: out.trace.last().map_or(f64::NAN, |r| r.r_psi),
            iterations: max_iters,
        }),
    }
}

impl Solver {
    /// Like [`Solver::run`] but records nothing except the final row, without `res`.
    fn run_quiet(&self, x0: &PrimalDualState) -> Result<RunOutput> {
        let mut trace = self.empty_trace();
        let mut x_prev = x0.clone();
        let mut x = x0.clone();
        for k in 0..self.params.max_iters {
            let out = self.step(&x, &x_prev, k, 0)?;
            let r = self.op.residual_r_psi(&out.next, &self.psi)?;
            x_prev = x;
            x = out.next;
            trace.iterations = k + 1;
            if r < self.params.tol || k + 1 == self.params.max_iters {
                trace.records.push(IterRecord {
                    k,
                    r_psi: r,
                    res: None,
                    consensus_gap: x.consensus_gap(),
                    feas_gap: self.op.problem().feasibility_gap(x.u()),
                    step_norm: psi_dist_sq(&x, &x_prev, &self.psi)?.sqrt(),
                    diag: None,
                });
                let stop = if r < self.params.tol {
                    StopReason::Converged { iteration: k }
                } else {
                    StopReason::IterationLimit
                };
                return Ok(RunOutput {
                    state: x,
                    trace,
                    stop,
                    wall_time_secs: 0.0,
                });
            }
        }
        unreachable!("max_iters is at least 1")
    }
}
