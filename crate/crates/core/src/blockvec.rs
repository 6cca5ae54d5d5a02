//! Block-partitioned vectors for primal-dual states.
//!
//! A state `x = (u, μ, λ)` is stored as one flat array laid out as
//! `[u_1 … u_N | μ_1 … μ_N | λ_1 … λ_N]`, where `u_i ∈ R^{d_i}` and
//! `μ_i, λ_i ∈ R^m`. Block views are computed from an [`AgentPartition`]
//! rather than copied.
//!
//! The preconditioner `Ψ = diag(γ⁻¹, σ⁻¹, τ⁻¹)` defines the weighted inner
//! product `⟨x, y⟩_Ψ = ⟨Ψx, y⟩` used throughout the solver.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of agents, their action dimensions and the coupling-constraint dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionDoc", into = "PartitionDoc")]
pub struct AgentPartition {
    dims: Vec<usize>,
    constraint_dim: usize,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionDoc {
    dims: Vec<usize>,
    constraint_dim: usize,
}

impl TryFrom<PartitionDoc> for AgentPartition {
    type Error = Error;
    fn try_from(doc: PartitionDoc) -> Result<Self> {
        AgentPartition::new(doc.dims, doc.constraint_dim)
    }
}

impl From<AgentPartition> for PartitionDoc {
    fn from(p: AgentPartition) -> Self {
        PartitionDoc {
            dims: p.dims,
            constraint_dim: p.constraint_dim,
        }
    }
}

impl AgentPartition {
    pub fn new(dims: Vec<usize>, constraint_dim: usize) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::param("num_agents", "at least one agent is required"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::param("dims", format!("agent {i} has an empty action space")));
        }
        if constraint_dim == 0 {
            return Err(Error::param("constraint_dim", "must be at least 1"));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        for d in &dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        Ok(AgentPartition {
            dims,
            constraint_dim,
            offsets,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, agent: usize) -> usize {
        self.dims[agent]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `m`, the number of coupling constraints.
    pub fn constraint_dim(&self) -> usize {
        self.constraint_dim
    }

    /// `d = Σ d_i`.
    pub fn total_dim(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    /// Length `N·m` of a stacked dual vector.
    pub fn dual_len(&self) -> usize {
        self.dims.len() * self.constraint_dim
    }

    /// Length `d + 2Nm` of a full primal-dual state.
    pub fn state_len(&self) -> usize {
        self.total_dim() + 2 * self.dual_len()
    }

    /// Range of agent `i`'s strategy inside a primal vector (and inside a state).
    pub fn primal_range(&self, agent: usize) -> Range<usize> {
        self.offsets[agent]..self.offsets[agent + 1]
    }

    /// Range of agent `i`'s block inside a dual stack.
    pub fn dual_range(&self, agent: usize) -> Range<usize> {
        let m = self.constraint_dim;
        agent * m..(agent + 1) * m
    }

    pub fn mu_range(&self, agent: usize) -> Range<usize> {
        let r = self.dual_range(agent);
        let off = self.total_dim();
        r.start + off..r.end + off
    }

    pub fn lambda_range(&self, agent: usize) -> Range<usize> {
        let r = self.dual_range(agent);
        let off = self.total_dim() + self.dual_len();
        r.start + off..r.end + off
    }

    pub fn expected_len(&self, kind: BlockKind) -> usize {
        match kind {
            BlockKind::Primal => self.total_dim(),
            BlockKind::DualStack => self.dual_len(),
        }
    }
}

/// Which layout a [`BlockVector`] follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// `col(u_1, …, u_N)`, length `d`.
    Primal,
    /// `col(v_1, …, v_N)` with `v_i ∈ R^m`, length `N·m`.
    DualStack,
}

/// Read access to the strategy blocks of an action profile.
///
/// Gradient oracles see the profile only through this trait, so the
/// distributed executor can hand them a view that contains nothing but
/// the blocks an agent has received.
pub trait StrategyProfile {
    fn block(&self, agent: usize) -> &[f64];
}

/// Borrowed primal vector with its partition.
#[derive(Debug, Clone, Copy)]
pub struct PrimalView<'a> {
    partition: &'a AgentPartition,
    data: &'a [f64],
}

impl<'a> PrimalView<'a> {
    pub fn new(partition: &'a AgentPartition, data: &'a [f64]) -> Self {
        debug_assert_eq!(data.len(), partition.total_dim());
        PrimalView { partition, data }
    }
}

impl StrategyProfile for PrimalView<'_> {
    fn block(&self, agent: usize) -> &[f64] {
        &self.data[self.partition.primal_range(agent)]
    }
}

/// A primal vector or a stacked dual vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    partition: Arc<AgentPartition>,
    kind: BlockKind,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(partition: Arc<AgentPartition>, kind: BlockKind, data: Vec<f64>) -> Result<Self> {
        let expected = partition.expected_len(kind);
        if data.len() != expected {
            let name = match kind {
                BlockKind::Primal => "primal vector",
                BlockKind::DualStack => "dual stack",
            };
            return Err(Error::dim(name, expected, data.len()));
        }
        Ok(BlockVector {
            partition,
            kind,
            data,
        })
    }

    pub fn zeros(partition: Arc<AgentPartition>, kind: BlockKind) -> Self {
        let n = partition.expected_len(kind);
        BlockVector {
            partition,
            kind,
            data: vec![0.0; n],
        }
    }

    pub fn partition(&self) -> &Arc<AgentPartition> {
        &self.partition
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn range(&self, agent: usize) -> Range<usize> {
        match self.kind {
            BlockKind::Primal => self.partition.primal_range(agent),
            BlockKind::DualStack => self.partition.dual_range(agent),
        }
    }

    pub fn agent_block(&self, agent: usize) -> &[f64] {
        &self.data[self.range(agent)]
    }

    pub fn agent_block_mut(&mut self, agent: usize) -> &mut [f64] {
        let r = self.range(agent);
        &mut self.data[r]
    }

    /// Strategy view of a primal vector.
    pub fn view(&self) -> PrimalView<'_> {
        debug_assert_eq!(self.kind, BlockKind::Primal);
        PrimalView::new(&self.partition, &self.data)
    }
}

impl StrategyProfile for BlockVector {
    fn block(&self, agent: usize) -> &[f64] {
        self.agent_block(agent)
    }
}

/// The triple `x = (u, μ, λ)` in one flat array.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    partition: Arc<AgentPartition>,
    data: Vec<f64>,
}

impl PrimalDualState {
    pub fn zeros(partition: Arc<AgentPartition>) -> Self {
        let n = partition.state_len();
        PrimalDualState {
            partition,
            data: vec![0.0; n],
        }
    }

    /// Wraps a flat array laid out as `[u | μ | λ]`.
    pub fn from_flat(partition: Arc<AgentPartition>, data: Vec<f64>) -> Result<Self> {
        if data.len() != partition.state_len() {
            return Err(Error::dim("state", partition.state_len(), data.len()));
        }
        Ok(PrimalDualState { partition, data })
    }

    pub fn from_parts(u: &BlockVector, mu: &BlockVector, lambda: &BlockVector) -> Result<Self> {
        let p = u.partition().clone();
        for (name, v, kind) in [
            ("u", u, BlockKind::Primal),
            ("mu", mu, BlockKind::DualStack),
            ("lambda", lambda, BlockKind::DualStack),
        ] {
            if v.kind() != kind || **v.partition() != *p {
                return Err(Error::dim(name, p.expected_len(kind), v.len()));
            }
        }
        let mut data = Vec::with_capacity(p.state_len());
        data.extend_from_slice(u.as_slice());
        data.extend_from_slice(mu.as_slice());
        data.extend_from_slice(lambda.as_slice());
        Ok(PrimalDualState { partition: p, data })
    }

    pub fn partition(&self) -> &Arc<AgentPartition> {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn u(&self) -> &[f64] {
        &self.data[..self.partition.total_dim()]
    }

    pub fn mu(&self) -> &[f64] {
        let d = self.partition.total_dim();
        &self.data[d..d + self.partition.dual_len()]
    }

    pub fn lambda(&self) -> &[f64] {
        let off = self.partition.total_dim() + self.partition.dual_len();
        &self.data[off..]
    }

    pub fn u_mut(&mut self) -> &mut [f64] {
        let d = self.partition.total_dim();
        &mut self.data[..d]
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        let d = self.partition.total_dim();
        let n = self.partition.dual_len();
        &mut self.data[d..d + n]
    }

    pub fn lambda_mut(&mut self) -> &mut [f64] {
        let off = self.partition.total_dim() + self.partition.dual_len();
        &mut self.data[off..]
    }

    pub fn u_block(&self, agent: usize) -> &[f64] {
        &self.data[self.partition.primal_range(agent)]
    }

    pub fn mu_block(&self, agent: usize) -> &[f64] {
        &self.data[self.partition.mu_range(agent)]
    }

    pub fn lambda_block(&self, agent: usize) -> &[f64] {
        &self.data[self.partition.lambda_range(agent)]
    }

    /// Copies out agent `i`'s three blocks.
    pub fn agent_state(&self, agent: usize) -> AgentState {
        AgentState {
            u: self.u_block(agent).to_vec(),
            mu: self.mu_block(agent).to_vec(),
            lambda: self.lambda_block(agent).to_vec(),
        }
    }

    /// Overwrites agent `i`'s three blocks.
    pub fn set_agent(&mut self, agent: usize, s: &AgentState) {
        let p = self.partition.clone();
        self.data[p.primal_range(agent)].copy_from_slice(&s.u);
        self.data[p.mu_range(agent)].copy_from_slice(&s.mu);
        self.data[p.lambda_range(agent)].copy_from_slice(&s.lambda);
    }

    pub fn u_view(&self) -> PrimalView<'_> {
        PrimalView::new(&self.partition, self.u())
    }

    pub fn u_vector(&self) -> BlockVector {
        BlockVector {
            partition: self.partition.clone(),
            kind: BlockKind::Primal,
            data: self.u().to_vec(),
        }
    }

    pub fn mu_vector(&self) -> BlockVector {
        BlockVector {
            partition: self.partition.clone(),
            kind: BlockKind::DualStack,
            data: self.mu().to_vec(),
        }
    }

    pub fn lambda_vector(&self) -> BlockVector {
        BlockVector {
            partition: self.partition.clone(),
            kind: BlockKind::DualStack,
            data: self.lambda().to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies agent `i`'s three blocks from `other`.
    pub fn copy_agent_from(&mut self, agent: usize, other: &PrimalDualState) {
        for r in [
            self.partition.primal_range(agent),
            self.partition.mu_range(agent),
            self.partition.lambda_range(agent),
        ] {
            self.data[r.clone()].copy_from_slice(&other.data[r]);
        }
    }

    /// Maximum pairwise Euclidean distance between the agents' dual copies `λ_i`.
    pub fn consensus_gap(&self) -> f64 {
        let n = self.partition.num_agents();
        let mut gap: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d2: f64 = self
                    .lambda_block(i)
                    .iter()
                    .zip(self.lambda_block(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                gap = gap.max(d2.sqrt());
            }
        }
        gap
    }
}

/// One agent's blocks `(u_i, μ_i, λ_i)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentState {
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl AgentState {
    pub fn zeros(dim: usize, m: usize) -> Self {
        AgentState {
            u: vec![0.0; dim],
            mu: vec![0.0; m],
            lambda: vec![0.0; m],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u
            .iter()
            .chain(&self.mu)
            .chain(&self.lambda)
            .all(|v| v.is_finite())
    }
}

/// `Ψ = diag(γ⁻¹, σ⁻¹, τ⁻¹)`, stored through the per-agent step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    partition: Arc<AgentPartition>,
    gamma: Vec<f64>,
    sigma: Vec<f64>,
    tau: Vec<f64>,
    /// Step size for every coordinate of the state layout.
    expanded: Vec<f64>,
}

impl Preconditioner {
    pub fn new(
        partition: Arc<AgentPartition>,
        gamma: Vec<f64>,
        sigma: Vec<f64>,
        tau: Vec<f64>,
    ) -> Result<Self> {
        let n = partition.num_agents();
        for (name, v) in [("gamma", &gamma), ("sigma", &sigma), ("tau", &tau)] {
            if v.len() != n {
                return Err(Error::dim(name, n, v.len()));
            }
            if let Some(i) = v.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::param(
                    name,
                    format!("step size of agent {i} must be positive and finite, got {}", v[i]),
                ));
            }
        }
        let mut expanded = Vec::with_capacity(partition.state_len());
        for (i, g) in gamma.iter().enumerate() {
            expanded.extend(std::iter::repeat_n(*g, partition.dim(i)));
        }
        let m = partition.constraint_dim();
        for steps in [&sigma, &tau] {
            for s in steps.iter() {
                expanded.extend(std::iter::repeat_n(*s, m));
            }
        }
        Ok(Preconditioner {
            partition,
            gamma,
            sigma,
            tau,
            expanded,
        })
    }

    /// All step sizes equal to `step`.
    pub fn uniform(partition: Arc<AgentPartition>, step: f64) -> Result<Self> {
        let n = partition.num_agents();
        Self::new(partition, vec![step; n], vec![step; n], vec![step; n])
    }

    pub fn partition(&self) -> &Arc<AgentPartition> {
        &self.partition
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Step size (`Ψ⁻¹` diagonal entry) for each state coordinate.
    pub fn steps(&self) -> &[f64] {
        &self.expanded
    }

    pub fn max_step(&self) -> f64 {
        self.expanded.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn min_step(&self) -> f64 {
        self.expanded.iter().copied().fold(f64::MAX, f64::min)
    }

    /// Smallest eigenvalue of `Ψ`, i.e. the reciprocal of the largest step.
    pub fn lambda_min(&self) -> f64 {
        1.0 / self.max_step()
    }

    pub fn lambda_max(&self) -> f64 {
        1.0 / self.min_step()
    }

    /// `‖v‖²_{Ψ⁻¹}` for a vector in the state layout.
    pub fn inv_norm_sq(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.expanded).map(|(x, s)| s * x * x).sum()
    }

    /// `‖v‖²_Ψ` for a raw vector in the state layout.
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.expanded).map(|(x, s)| x * x / s).sum()
    }

    fn check(&self, name: &str, x: &PrimalDualState) -> Result<()> {
        check_same_layout(name, &self.partition, x)
    }
}

fn check_same_layout(name: &str, p: &AgentPartition, x: &PrimalDualState) -> Result<()> {
    let q = x.partition();
    if **q == *p {
        return Ok(());
    }
    if q.total_dim() != p.total_dim() {
        return Err(Error::dim(format!("{name}.u"), p.total_dim(), q.total_dim()));
    }
    if q.dual_len() != p.dual_len() {
        return Err(Error::dim(format!("{name}.mu"), p.dual_len(), q.dual_len()));
    }
    Err(Error::Validation(format!(
        "{name}: agent partition {:?} does not match {:?}",
        q.dims(),
        p.dims()
    )))
}

/// `⟨x, y⟩_Ψ = Σ_j Ψ_jj x_j y_j`.
pub fn psi_inner(x: &PrimalDualState, y: &PrimalDualState, psi: &Preconditioner) -> Result<f64> {
    psi.check("x", x)?;
    psi.check("y", y)?;
    Ok(x.data
        .iter()
        .zip(&y.data)
        .zip(psi.steps())
        .map(|((a, b), s)| a * b / s)
        .sum())
}

pub fn psi_norm(x: &PrimalDualState, psi: &Preconditioner) -> Result<f64> {
    psi_inner(x, x, psi).map(f64::sqrt)
}

/// `‖x − y‖²_Ψ` without materializing the difference.
pub fn psi_dist_sq(x: &PrimalDualState, y: &PrimalDualState, psi: &Preconditioner) -> Result<f64> {
    psi.check("x", x)?;
    psi.check("y", y)?;
    Ok(x.data
        .iter()
        .zip(&y.data)
        .zip(psi.steps())
        .map(|((a, b), s)| (a - b) * (a - b) / s)
        .sum())
}

/// `(1 − ρ)·z + ρ·r`, for `ρ ∈ (0, 1]`.
pub fn relaxed_combine(
    z: &PrimalDualState,
    r: &PrimalDualState,
    rho: f64,
) -> Result<PrimalDualState> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::param("rho", format!("must lie in (0, 1], got {rho}")));
    }
    check_same_layout("r", z.partition(), r)?;
    Ok(affine_combine(z, r, rho))
}

/// Unchecked `(1 − ρ)·z + ρ·r`. Over-relaxation is only reachable through
/// explicitly inadmissible solver settings.
pub(crate) fn affine_combine(z: &PrimalDualState, r: &PrimalDualState, rho: f64) -> PrimalDualState {
    let data = z
        .data
        .iter()
        .zip(&r.data)
        .map(|(a, b)| (1.0 - rho) * a + rho * b)
        .collect();
    PrimalDualState {
        partition: z.partition.clone(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> Arc<AgentPartition> {
        Arc::new(AgentPartition::new(vec![1], 1).unwrap())
    }

    #[test]
    fn partition_layout() {
        let p = AgentPartition::new(vec![2, 1, 3], 2).unwrap();
        assert_eq!(p.total_dim(), 6);
        assert_eq!(p.dual_len(), 6);
        assert_eq!(p.state_len(), 18);
        assert_eq!(p.primal_range(1), 2..3);
        assert_eq!(p.mu_range(2), 10..12);
        assert_eq!(p.lambda_range(0), 12..14);
    }

    #[test]
    fn partition_rejects_degenerate() {
        assert!(AgentPartition::new(vec![], 1).is_err());
        assert!(AgentPartition::new(vec![1, 0], 1).is_err());
        assert!(AgentPartition::new(vec![1], 0).is_err());
    }

    #[test]
    fn psi_inner_zero_state() {
        let p = single();
        let psi = Preconditioner::new(p.clone(), vec![0.5], vec![0.25], vec![0.25]).unwrap();
        let x = PrimalDualState::zeros(p);
        assert_eq!(psi_inner(&x, &x, &psi).unwrap(), 0.0);
    }

    #[test]
    fn psi_inner_identity() {
        // N=1, d=1, m=2 gives n_X = 5
        let p = Arc::new(AgentPartition::new(vec![1], 2).unwrap());
        let psi = Preconditioner::uniform(p.clone(), 1.0).unwrap();
        let x = PrimalDualState::from_flat(p, vec![1.0; 5]).unwrap();
        assert_eq!(psi_inner(&x, &x, &psi).unwrap(), 5.0);
    }

    #[test]
    fn psi_inner_weighted() {
        let p = single();
        let psi = Preconditioner::new(p.clone(), vec![0.5], vec![0.25], vec![0.25]).unwrap();
        let x = PrimalDualState::from_flat(p, vec![1.0; 3]).unwrap();
        assert_eq!(psi_inner(&x, &x, &psi).unwrap(), 10.0);
        assert_eq!(psi.lambda_min(), 2.0);
        assert_eq!(psi.lambda_max(), 4.0);
    }

    #[test]
    fn psi_inner_names_offending_block() {
        let p = single();
        let q = Arc::new(AgentPartition::new(vec![2], 1).unwrap());
        let psi = Preconditioner::uniform(p.clone(), 1.0).unwrap();
        let x = PrimalDualState::zeros(p);
        let y = PrimalDualState::zeros(q);
        match psi_inner(&x, &y, &psi) {
            Err(Error::Dimension { block, .. }) => assert_eq!(block, "y.u"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn preconditioner_rejects_nonpositive() {
        let p = single();
        assert!(Preconditioner::new(p.clone(), vec![0.0], vec![1.0], vec![1.0]).is_err());
        assert!(Preconditioner::new(p, vec![1.0, 1.0], vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn relaxed_combine_cases() {
        let p = single();
        let z = PrimalDualState::from_flat(p.clone(), vec![0.0; 3]).unwrap();
        let r = PrimalDualState::from_flat(p, vec![2.0; 3]).unwrap();
        assert_eq!(relaxed_combine(&z, &r, 1.0).unwrap(), r);
        assert_eq!(relaxed_combine(&r, &r, 0.3).unwrap(), r);
        assert_eq!(relaxed_combine(&z, &r, 0.25).unwrap().as_slice(), &[0.5; 3]);
        assert!(relaxed_combine(&z, &r, 0.0).is_err());
        assert!(relaxed_combine(&z, &r, 1.5).is_err());
    }

    #[test]
    fn consensus_gap_of_equal_blocks_is_zero() {
        let p = Arc::new(AgentPartition::new(vec![1, 1], 2).unwrap());
        let mut x = PrimalDualState::zeros(p);
        x.lambda_mut().copy_from_slice(&[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(x.consensus_gap(), 0.0);
        x.lambda_mut()[3] = 5.0;
        assert_eq!(x.consensus_gap(), 3.0);
    }
}
