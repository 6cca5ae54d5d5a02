//! Per-agent pieces of one iteration. The monolithic and the distributed
//! executors both call these, so they agree bit for bit.

use crate::blockvec::AgentState;
use crate::error::{Error, Result};
use crate::operators::{ExtendedOperator, StateView, Strategies};
use crate::stochastic::{sample_agent, SamplingOracle, StreamKey};

/// Agent `i`'s entries of `Ψ⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AgentSteps {
    pub gamma: f64,
    pub sigma: f64,
    pub tau: f64,
}

/// `x + α(x − x_prev)`.
pub(crate) fn inertia(x: &AgentState, x_prev: &AgentState, alpha: f64) -> AgentState {
    let f = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, p)| x + alpha * (x - p)).collect()
    };
    AgentState {
        u: f(&x.u, &x_prev.u),
        mu: f(&x.mu, &x_prev.mu),
        lambda: f(&x.lambda, &x_prev.lambda),
    }
}

/// Forward step from `z` followed by the resolvent: returns `(A_i, Y_i)`.
pub(crate) fn forward(
    op: &ExtendedOperator,
    orc: &dyn SamplingOracle,
    agent: usize,
    steps: AgentSteps,
    z: &dyn StateView,
    batch: usize,
    key: StreamKey,
) -> Result<(AgentState, AgentState)> {
    let (du, m) = (z.u_block(agent).len(), z.lambda_block(agent).len());
    let mut f = vec![0.0; du];
    sample_agent(orc, agent, &Strategies(z), batch, key, &mut f)?;
    let mut a = AgentState::zeros(du, m);
    op.agent_rows(agent, z, &f, &mut a.u, &mut a.mu, &mut a.lambda);
    let step = |x: &[f64], v: &[f64], s: f64| -> Vec<f64> {
        x.iter().zip(v).map(|(x, v)| x - s * v).collect()
    };
    let wu = step(z.u_block(agent), &a.u, steps.gamma);
    let wmu = step(z.mu_block(agent), &a.mu, steps.sigma);
    let wl = step(z.lambda_block(agent), &a.lambda, steps.tau);
    let mut y = AgentState::zeros(du, m);
    op.agent_resolvent(agent, steps.gamma, &wu, &wl, &mut y.u, &mut y.lambda)?;
    y.mu = wmu;
    if !(y.is_finite() && wl.iter().all(|v| v.is_finite())) {
        return Err(Error::Diverged {
            iteration: key.iteration,
            phase: "forward".into(),
        });
    }
    Ok((a, y))
}

/// Second evaluation at `y`, correction and relaxation: returns `(B_i, X_{k+1,i})`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn correct(
    op: &ExtendedOperator,
    orc: &dyn SamplingOracle,
    agent: usize,
    steps: AgentSteps,
    y: &dyn StateView,
    z_own: &AgentState,
    a_own: &AgentState,
    rho: f64,
    batch: usize,
    key: StreamKey,
) -> Result<(AgentState, AgentState)> {
    let (du, m) = (z_own.u.len(), z_own.lambda.len());
    let mut f = vec![0.0; du];
    sample_agent(orc, agent, &Strategies(y), batch, key, &mut f)?;
    let mut b = AgentState::zeros(du, m);
    op.agent_rows(agent, y, &f, &mut b.u, &mut b.mu, &mut b.lambda);
    let relax = |y: &[f64], a: &[f64], b: &[f64], z: &[f64], s: f64| -> Vec<f64> {
        y.iter()
            .zip(a)
            .zip(b)
            .zip(z)
            .map(|(((y, a), b), z)| {
                let r = y + s * (a - b);
                (1.0 - rho) * z + rho * r
            })
            .collect()
    };
    let next = AgentState {
        u: relax(y.u_block(agent), &a_own.u, &b.u, &z_own.u, steps.gamma),
        mu: relax(y.mu_block(agent), &a_own.mu, &b.mu, &z_own.mu, steps.sigma),
        lambda: relax(y.lambda_block(agent), &a_own.lambda, &b.lambda, &z_own.lambda, steps.tau),
    };
    if !next.is_finite() {
        return Err(Error::Diverged {
            iteration: key.iteration,
            phase: "correction".into(),
        });
    }
    Ok((b, next))
}
