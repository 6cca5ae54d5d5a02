//! The extended operators `V` and `T` on primal-dual states, their
//! resolvent, residual maps and KKT verification.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blockvec::{BlockKind, BlockVector, Preconditioner, PrimalDualState, StrategyProfile};
use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::linalg::{dot, norm};
use crate::problem::GameProblem;

/// Read access to per-agent blocks of a primal-dual state.
pub trait StateView {
    fn u_block(&self, agent: usize) -> &[f64];
    fn mu_block(&self, agent: usize) -> &[f64];
    fn lambda_block(&self, agent: usize) -> &[f64];
}

impl StateView for PrimalDualState {
    fn u_block(&self, agent: usize) -> &[f64] {
        PrimalDualState::u_block(self, agent)
    }
    fn mu_block(&self, agent: usize) -> &[f64] {
        PrimalDualState::mu_block(self, agent)
    }
    fn lambda_block(&self, agent: usize) -> &[f64] {
        PrimalDualState::lambda_block(self, agent)
    }
}

/// The strategy part of a [`StateView`].
pub struct Strategies<'a, S: ?Sized>(pub &'a S);

impl<S: StateView + ?Sized> StrategyProfile for Strategies<'_, S> {
    fn block(&self, agent: usize) -> &[f64] {
        self.0.u_block(agent)
    }
}

/// `V` and `T` for a game on a communication graph.
///
/// ```text
/// V(u, μ, λ) = ( F(u) + Dᵀλ ; L̄λ ; b̄ + L̄(λ − μ) − Du )
/// T(u, μ, λ) = G(u) × {0} × N_{≥0}(λ)
/// ```
#[derive(Debug, Clone)]
pub struct ExtendedOperator {
    problem: Arc<GameProblem>,
    graph: Arc<CommGraph>,
    lipschitz_v: f64,
}

impl ExtendedOperator {
    pub fn new(problem: Arc<GameProblem>, graph: Arc<CommGraph>) -> Result<Self> {
        if problem.num_agents() != graph.num_agents() {
            return Err(Error::dim(
                "communication graph",
                problem.num_agents(),
                graph.num_agents(),
            ));
        }
        let lipschitz_v = problem.lipschitz() + 2.0 * graph.kappa() + problem.coupling_norm();
        Ok(ExtendedOperator {
            problem,
            graph,
            lipschitz_v,
        })
    }

    pub fn problem(&self) -> &Arc<GameProblem> {
        &self.problem
    }

    pub fn graph(&self) -> &Arc<CommGraph> {
        &self.graph
    }

    /// `ℓ_V = ℓ + 2κ + ‖D‖`.
    pub fn lipschitz_v(&self) -> f64 {
        self.lipschitz_v
    }

    /// Agent `i`'s three rows of `V`, given its (exact or sampled) gradient block `f_i`.
    ///
    /// Reads only agent `i`'s blocks and the dual blocks of its graph
    /// neighbors, in ascending neighbor order.
    pub fn agent_rows(
        &self,
        agent: usize,
        x: &dyn StateView,
        f_i: &[f64],
        out_u: &mut [f64],
        out_mu: &mut [f64],
        out_lambda: &mut [f64],
    ) {
        let data = self.problem.agent(agent);
        let d_i = &data.coupling;
        let lam = x.lambda_block(agent);
        let mu = x.mu_block(agent);
        let u = x.u_block(agent);
        for (c, o) in out_u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (r, l) in lam.iter().enumerate() {
                acc += d_i.get(r, c) * l;
            }
            *o = f_i[c] + acc;
        }
        self.graph
            .laplacian_block(agent, lam, |j| x.lambda_block(j), out_mu);
        let neighbors = self.graph.neighbors(agent);
        for (r, o) in out_lambda.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(j, w) in neighbors {
                acc += w * ((lam[r] - mu[r]) - (x.lambda_block(j)[r] - x.mu_block(j)[r]));
            }
            *o = data.offset[r] + acc - dot(d_i.row(r), u);
        }
    }

    /// `V(x)` with the first row's `F(u)` replaced by `f`.
    pub fn apply_v_with(&self, x: &PrimalDualState, f: &[f64]) -> PrimalDualState {
        let p = x.partition().clone();
        let mut out = PrimalDualState::zeros(p.clone());
        let mut u_out = vec![0.0; p.total_dim()];
        let mut mu_out = vec![0.0; p.dual_len()];
        let mut lam_out = vec![0.0; p.dual_len()];
        for i in 0..p.num_agents() {
            let (pr, dr) = (p.primal_range(i), p.dual_range(i));
            self.agent_rows(
                i,
                x,
                &f[pr.clone()],
                &mut u_out[pr],
                &mut mu_out[dr.clone()],
                &mut lam_out[dr],
            );
        }
        out.u_mut().copy_from_slice(&u_out);
        out.mu_mut().copy_from_slice(&mu_out);
        out.lambda_mut().copy_from_slice(&lam_out);
        out
    }

    pub fn apply_v(&self, x: &PrimalDualState) -> Result<PrimalDualState> {
        self.check_state(x)?;
        let mut f = vec![0.0; x.partition().total_dim()];
        self.problem.apply_f_into(&x.u_view(), &mut f)?;
        Ok(self.apply_v_with(x, &f))
    }

    /// Agent `i`'s part of `J_{Ψ⁻¹T}`: prox on `u_i`, identity on `μ_i`, `max(λ_i, 0)`.
    pub fn agent_resolvent(
        &self,
        agent: usize,
        gamma: f64,
        u: &[f64],
        lambda: &[f64],
        out_u: &mut [f64],
        out_lambda: &mut [f64],
    ) -> Result<()> {
        self.problem.prox(agent, u, gamma, out_u)?;
        for (o, l) in out_lambda.iter_mut().zip(lambda) {
            *o = if *l > 0.0 { *l } else { 0.0 };
        }
        Ok(())
    }

    /// `J_{Ψ⁻¹T}(x)`.
    pub fn resolvent(&self, x: &PrimalDualState, psi: &Preconditioner) -> Result<PrimalDualState> {
        self.check_state(x)?;
        let p = x.partition().clone();
        let mut out = x.clone();
        let mut u_out = vec![0.0; p.total_dim()];
        let mut lam_out = vec![0.0; p.dual_len()];
        for i in 0..p.num_agents() {
            let (pr, dr) = (p.primal_range(i), p.dual_range(i));
            self.agent_resolvent(
                i,
                psi.gamma()[i],
                x.u_block(i),
                x.lambda_block(i),
                &mut u_out[pr],
                &mut lam_out[dr],
            )?;
        }
        out.u_mut().copy_from_slice(&u_out);
        out.lambda_mut().copy_from_slice(&lam_out);
        Ok(out)
    }

    /// `J_{Ψ⁻¹T}(x − Ψ⁻¹v)`.
    pub fn forward_backward(
        &self,
        x: &PrimalDualState,
        v: &PrimalDualState,
        psi: &Preconditioner,
    ) -> Result<PrimalDualState> {
        let mut w = x.clone();
        forward_into(x.as_slice(), v.as_slice(), psi.steps(), w.as_mut_slice());
        self.resolvent(&w, psi)
    }

    /// `r_Ψ(x) = ‖x − J_{Ψ⁻¹T}(x − Ψ⁻¹V(x))‖`, Euclidean.
    pub fn residual_r_psi(&self, x: &PrimalDualState, psi: &Preconditioner) -> Result<f64> {
        let v = self.apply_v(x)?;
        self.displacement(x, &v, psi)
    }

    /// `‖x − J_{Ψ⁻¹T}(x − Ψ⁻¹v)‖` for a precomputed `v = V(x)`.
    pub fn displacement(
        &self,
        x: &PrimalDualState,
        v: &PrimalDualState,
        psi: &Preconditioner,
    ) -> Result<f64> {
        let t = self.forward_backward(x, v, psi)?;
        Ok(x.as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    fn check_state(&self, x: &PrimalDualState) -> Result<()> {
        let p = self.problem.partition();
        if **x.partition() != **p {
            return Err(Error::dim("state", p.state_len(), x.len()));
        }
        Ok(())
    }
}

/// `out = x − s ∘ v`.
pub(crate) fn forward_into(x: &[f64], v: &[f64], steps: &[f64], out: &mut [f64]) {
    for (((o, a), b), s) in out.iter_mut().zip(x).zip(v).zip(steps) {
        *o = a - s * b;
    }
}

const DYKSTRA_TOL: f64 = 1e-10;
const DYKSTRA_MAX_SWEEPS: usize = 10_000;

/// Euclidean projection onto `C = {u ∈ U : Du ≤ b}` by Dykstra's method over
/// the box `U` and the halfspaces of the rows of `D`.
pub fn proj_shared_set(problem: &GameProblem, v: &BlockVector) -> Result<BlockVector> {
    let p = problem.partition();
    if v.kind() != BlockKind::Primal || v.len() != p.total_dim() {
        return Err(Error::dim("v", p.total_dim(), v.len()));
    }
    let (lo, hi) = problem.domain_box();
    let d = problem.stacked_coupling();
    let b = problem.offset_total();
    let mut rows = Vec::new();
    for r in 0..d.rows() {
        let a = d.row(r);
        let nn = dot(a, a);
        if nn == 0.0 {
            if b[r] < 0.0 {
                return Err(Error::Validation(format!(
                    "coupling row {r} is zero with negative offset: shared set is empty"
                )));
            }
            continue;
        }
        rows.push((a, b[r], nn));
    }
    let n = v.len();
    let mut x = v.as_slice().to_vec();
    let mut incr = vec![vec![0.0; n]; rows.len() + 1];
    let mut y = vec![0.0; n];
    let mut prev = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        prev.copy_from_slice(&x);
        for (j, (o, inc)) in y.iter_mut().zip(&incr[0]).enumerate() {
            *o = (x[j] + inc).clamp(lo[j], hi[j]);
        }
        for j in 0..n {
            incr[0][j] += x[j] - y[j];
            x[j] = y[j];
        }
        for (s, &(a, bs, nn)) in rows.iter().enumerate() {
            let inc = &mut incr[s + 1];
            for j in 0..n {
                y[j] = x[j] + inc[j];
            }
            let excess = dot(a, &y) - bs;
            if excess > 0.0 {
                let t = excess / nn;
                for j in 0..n {
                    y[j] -= t * a[j];
                }
            }
            for j in 0..n {
                inc[j] += x[j] - y[j];
                x[j] = y[j];
            }
        }
        change = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if change < DYKSTRA_TOL {
            return BlockVector::new(p.clone(), BlockKind::Primal, x);
        }
    }
    Err(Error::Tolerance {
        routine: "Dykstra projection".into(),
        achieved: change,
        iterations: DYKSTRA_MAX_SWEEPS,
    })
}

/// `res(u) = ‖u − proj_C(u − F(u))‖`.
pub fn residual_res(problem: &GameProblem, u: &BlockVector) -> Result<f64> {
    let f = problem.apply_f(u)?;
    let mut w = u.clone();
    for (o, g) in w.as_mut_slice().iter_mut().zip(f.as_slice()) {
        *o -= g;
    }
    let pw = proj_shared_set(problem, &w)?;
    Ok(u.as_slice()
        .iter()
        .zip(pw.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Outcome of [`kkt_check`], with the worst observed gap of each condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: bool,
    pub feasibility: bool,
    pub complementarity: bool,
    pub stationarity_gap: f64,
    pub feasibility_violation: f64,
    pub complementarity_gap: f64,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.stationarity && self.feasibility && self.complementarity
    }
}

/// Checks the KKT system of the variational GNE at `(u, λ)` with one shared multiplier.
pub fn kkt_check(problem: &GameProblem, u: &BlockVector, lambda: &[f64], tol: f64) -> Result<KktReport> {
    let p = problem.partition();
    if lambda.len() != p.constraint_dim() {
        return Err(Error::dim("lambda", p.constraint_dim(), lambda.len()));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let f = problem.apply_f(u)?;
    let mut stationarity_gap: f64 = 0.0;
    for i in 0..p.num_agents() {
        let data = problem.agent(i);
        let ui = u.agent_block(i);
        let mut w = vec![0.0; ui.len()];
        data.coupling.mul_t_vec(lambda, &mut w);
        for ((wj, uj), fj) in w.iter_mut().zip(ui).zip(f.agent_block(i)) {
            *wj = uj - (fj + *wj);
        }
        let mut pw = vec![0.0; ui.len()];
        problem.prox(i, &w, 1.0, &mut pw)?;
        let gap: Vec<f64> = ui.iter().zip(&pw).map(|(a, b)| a - b).collect();
        stationarity_gap = stationarity_gap.max(norm(&gap));
    }
    let slack = problem.coupling_residual(u.as_slice());
    let feasibility_violation = slack.iter().fold(0.0_f64, |m, s| m.max(*s));
    let mut complementarity_gap: f64 = 0.0;
    let mut sign_ok = true;
    for (l, s) in lambda.iter().zip(&slack) {
        complementarity_gap = complementarity_gap.max((l * s).abs());
        sign_ok &= *l >= -tol;
    }
    Ok(KktReport {
        stationarity: stationarity_gap <= tol,
        feasibility: feasibility_violation <= tol,
        complementarity: sign_ok && complementarity_gap <= tol,
        stationarity_gap,
        feasibility_violation,
        complementarity_gap,
    })
}
