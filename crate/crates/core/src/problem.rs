//! Game data: smooth pseudogradients, nonsmooth local terms and the affine
//! coupling constraints `Du − b ≤ 0`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blockvec::{AgentPartition, BlockKind, BlockVector, StrategyProfile};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// The stacked pseudogradient `F(u) = col(∇_{u_1} f_1(u), …, ∇_{u_N} f_N(u))`.
///
/// Implementations must read only the blocks of `agent` and of its
/// interaction neighborhood, in a fixed order; the distributed executor
/// hands them a view that contains nothing else.
pub trait PseudoGradient: Send + Sync + fmt::Debug {
    fn partial_gradient(&self, agent: usize, u: &dyn StrategyProfile, out: &mut [f64]);

    /// `N_i^A`: agents other than `agent` whose strategies enter `f_agent`, ascending.
    fn interaction_neighbors(&self, agent: usize) -> Vec<usize>;
}

/// Proximal map of a nonsmooth local term `g_i` whose domain is a box.
pub trait ProxTerm: Send + Sync + fmt::Debug {
    /// `argmin_w g(w) + ‖w − v‖² / (2·step)`.
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]);

    /// Lower and upper corners of the (compact) domain `U_i`.
    fn bounds(&self) -> (&[f64], &[f64]);
}

/// `g(w) = ι_{[lower, upper]}(w) + Σ_j l1_j |w_j| + Σ_j linear_j w_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPenalty {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub l1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub linear: Vec<f64>,
}

impl BoxPenalty {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoxPenalty {
            lower,
            upper,
            l1: Vec::new(),
            linear: Vec::new(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if self.upper.len() != d {
            return Err(Error::dim("box upper", d, self.upper.len()));
        }
        for (name, v) in [("l1", &self.l1), ("linear", &self.linear)] {
            if !v.is_empty() && v.len() != d {
                return Err(Error::dim(name, d, v.len()));
            }
        }
        for j in 0..d {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Validation(format!(
                    "box [{lo}, {hi}] in coordinate {j} must be finite and nonempty"
                )));
            }
        }
        if self.l1.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Validation("l1 weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

impl ProxTerm for BoxPenalty {
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]) {
        for j in 0..v.len() {
            let mut w = v[j];
            if let Some(c) = self.linear.get(j) {
                w -= step * c;
            }
            if let Some(c) = self.l1.get(j) {
                let t = step * c;
                w = if w > t {
                    w - t
                } else if w < -t {
                    w + t
                } else {
                    0.0
                };
            }
            out[j] = w.clamp(self.lower[j], self.upper[j]);
        }
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }
}

/// Data owned by a single agent.
#[derive(Debug, Clone)]
pub struct AgentData {
    /// `D_i ∈ R^{m×d_i}`.
    pub coupling: Matrix,
    /// `b_i ∈ R^m`.
    pub offset: Vec<f64>,
    /// `g_i`.
    pub local: Arc<dyn ProxTerm>,
}

/// A generalized Nash equilibrium problem with affine coupling constraints.
#[derive(Debug, Clone)]
pub struct GameProblem {
    partition: Arc<AgentPartition>,
    gradient: Arc<dyn PseudoGradient>,
    agents: Vec<AgentData>,
    lipschitz: f64,
    interaction: Vec<Vec<usize>>,
    stacked: Matrix,
    offset_total: Vec<f64>,
    stacked_norm: f64,
}

impl GameProblem {
    pub fn new(
        partition: Arc<AgentPartition>,
        gradient: Arc<dyn PseudoGradient>,
        agents: Vec<AgentData>,
        lipschitz: f64,
    ) -> Result<Self> {
        let n = partition.num_agents();
        let m = partition.constraint_dim();
        if agents.len() != n {
            return Err(Error::dim("agent data", n, agents.len()));
        }
        if !(lipschitz.is_finite() && lipschitz >= 0.0) {
            return Err(Error::param("lipschitz", format!("{lipschitz} must be finite and >= 0")));
        }
        for (i, a) in agents.iter().enumerate() {
            let di = partition.dim(i);
            if a.coupling.rows() != m || a.coupling.cols() != di {
                return Err(Error::dim(
                    format!("D_{i}"),
                    m * di,
                    a.coupling.rows() * a.coupling.cols(),
                ));
            }
            if !a.coupling.is_finite() {
                return Err(Error::Validation(format!("D_{i} has non-finite entries")));
            }
            if a.offset.len() != m {
                return Err(Error::dim(format!("b_{i}"), m, a.offset.len()));
            }
            let (lo, hi) = a.local.bounds();
            if lo.len() != di || hi.len() != di {
                return Err(Error::dim(format!("U_{i}"), di, lo.len()));
            }
        }
        let interaction = (0..n).map(|i| gradient.interaction_neighbors(i)).collect();
        let d = partition.total_dim();
        let mut stacked = Matrix::zeros(m, d);
        let mut offset_total = vec![0.0; m];
        for (i, a) in agents.iter().enumerate() {
            let r = partition.primal_range(i);
            for row in 0..m {
                for (c, col) in r.clone().enumerate() {
                    stacked.set(row, col, a.coupling.get(row, c));
                }
                offset_total[row] += a.offset[row];
            }
        }
        let stacked_norm = stacked.spectral_norm();
        Ok(GameProblem {
            partition,
            gradient,
            agents,
            lipschitz,
            interaction,
            stacked,
            offset_total,
            stacked_norm,
        })
    }

    pub fn partition(&self) -> &Arc<AgentPartition> {
        &self.partition
    }

    pub fn num_agents(&self) -> usize {
        self.partition.num_agents()
    }

    pub fn agent(&self, i: usize) -> &AgentData {
        &self.agents[i]
    }

    pub fn gradient(&self) -> &Arc<dyn PseudoGradient> {
        &self.gradient
    }

    /// `ℓ`, the Lipschitz constant of `F`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `N_i^A`.
    pub fn interaction_neighbors(&self, agent: usize) -> &[usize] {
        &self.interaction[agent]
    }

    /// `D = [D_1 | … | D_N]`.
    pub fn stacked_coupling(&self) -> &Matrix {
        &self.stacked
    }

    /// `b = Σ_i b_i`.
    pub fn offset_total(&self) -> &[f64] {
        &self.offset_total
    }

    /// Spectral norm of the stacked `D`.
    pub fn coupling_norm(&self) -> f64 {
        self.stacked_norm
    }

    /// `∇_{u_i} f_i(u)`, rejecting non-finite output.
    pub fn agent_gradient(&self, agent: usize, u: &dyn StrategyProfile, out: &mut [f64]) -> Result<()> {
        self.gradient.partial_gradient(agent, u, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric {
                source_name: "gradient oracle".into(),
                agent,
                draw: None,
            })
        }
    }

    /// The stacked pseudogradient `F(u)`.
    pub fn apply_f(&self, u: &BlockVector) -> Result<BlockVector> {
        if u.kind() != BlockKind::Primal || **u.partition() != *self.partition {
            return Err(Error::dim("u", self.partition.total_dim(), u.len()));
        }
        let mut out = BlockVector::zeros(self.partition.clone(), BlockKind::Primal);
        self.apply_f_into(&u.view(), out.as_mut_slice())?;
        Ok(out)
    }

    pub(crate) fn apply_f_into(&self, u: &dyn StrategyProfile, out: &mut [f64]) -> Result<()> {
        for i in 0..self.num_agents() {
            let r = self.partition.primal_range(i);
            self.agent_gradient(i, u, &mut out[r])?;
        }
        Ok(())
    }

    /// `prox_{step·g_i}(v)`.
    pub fn prox(&self, agent: usize, v: &[f64], step: f64, out: &mut [f64]) -> Result<()> {
        self.agents[agent].local.prox(v, step, out);
        if out.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric {
                source_name: "prox oracle".into(),
                agent,
                draw: None,
            })
        }
    }

    /// `Du − b`.
    pub fn coupling_residual(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.partition.constraint_dim()];
        self.stacked.mul_vec(u, &mut out);
        for (o, b) in out.iter_mut().zip(&self.offset_total) {
            *o -= b;
        }
        out
    }

    /// `‖max(Du − b, 0)‖`.
    pub fn feasibility_gap(&self, u: &[f64]) -> f64 {
        self.coupling_residual(u)
            .iter()
            .map(|v| v.max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Lower and upper corners of `U = U_1 × … × U_N`, flattened.
    pub fn domain_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.partition.total_dim());
        let mut hi = Vec::with_capacity(self.partition.total_dim());
        for a in &self.agents {
            let (l, h) = a.local.bounds();
            lo.extend_from_slice(l);
            hi.extend_from_slice(h);
        }
        (lo, hi)
    }
}

/// `F(u) = Mu + q`, evaluated sparsely over the nonzero agent blocks of `M`.
#[derive(Debug, Clone)]
pub struct AffineGradient {
    partition: Arc<AgentPartition>,
    matrix: Matrix,
    offset: Vec<f64>,
    /// For each agent, the agents (itself included) whose columns are nonzero in its rows.
    support: Vec<Vec<usize>>,
}

impl AffineGradient {
    pub fn new(partition: Arc<AgentPartition>, matrix: Matrix, offset: Vec<f64>) -> Result<Self> {
        let d = partition.total_dim();
        if matrix.rows() != d || matrix.cols() != d {
            return Err(Error::dim("affine matrix", d * d, matrix.rows() * matrix.cols()));
        }
        if offset.len() != d {
            return Err(Error::dim("affine offset", d, offset.len()));
        }
        let n = partition.num_agents();
        let support = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| {
                        j == i
                            || partition.primal_range(i).any(|r| {
                                partition.primal_range(j).any(|c| matrix.get(r, c) != 0.0)
                            })
                    })
                    .collect()
            })
            .collect();
        Ok(AffineGradient {
            partition,
            matrix,
            offset,
            support,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }
}

impl PseudoGradient for AffineGradient {
    fn partial_gradient(&self, agent: usize, u: &dyn StrategyProfile, out: &mut [f64]) {
        let rows = self.partition.primal_range(agent);
        for (o, r) in out.iter_mut().zip(rows) {
            let row = self.matrix.row(r);
            let mut acc = self.offset[r];
            for &j in &self.support[agent] {
                let cols = self.partition.primal_range(j);
                for (a, x) in row[cols].iter().zip(u.block(j)) {
                    acc += a * x;
                }
            }
            *o = acc;
        }
    }

    fn interaction_neighbors(&self, agent: usize) -> Vec<usize> {
        self.support[agent]
            .iter()
            .copied()
            .filter(|&j| j != agent)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_prox_clamps() {
        let g = BoxPenalty::new(vec![0.0], vec![2.0]).unwrap();
        let mut out = [0.0];
        g.prox(&[3.0], 0.7, &mut out);
        assert_eq!(out, [2.0]);
        g.prox(&[-1.0], 0.7, &mut out);
        assert_eq!(out, [0.0]);
        g.prox(&[1.25], 0.7, &mut out);
        assert_eq!(out, [1.25]);
    }

    #[test]
    fn box_prox_with_l1_and_linear() {
        // argmin_w |w| + 0.5 w + (w - 2)^2 / 2 on [-5, 5]: soft-threshold(2 - 0.5, 1) = 0.5
        let g = BoxPenalty {
            lower: vec![-5.0],
            upper: vec![5.0],
            l1: vec![1.0],
            linear: vec![0.5],
        };
        let mut out = [0.0];
        g.prox(&[2.0], 1.0, &mut out);
        assert_eq!(out, [0.5]);
        g.prox(&[0.3], 1.0, &mut out);
        assert_eq!(out, [0.0]);
    }

    #[test]
    fn box_validation() {
        assert!(BoxPenalty::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxPenalty::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(BoxPenalty::new(vec![f64::NEG_INFINITY], vec![0.0]).is_err());
    }

    fn identity_game() -> GameProblem {
        let p = Arc::new(AgentPartition::new(vec![1, 1], 1).unwrap());
        let grad = AffineGradient::new(p.clone(), Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let agents = (0..2)
            .map(|_| AgentData {
                coupling: Matrix::from_rows(&[vec![1.0]]).unwrap(),
                offset: vec![0.5],
                local: Arc::new(BoxPenalty::new(vec![-10.0], vec![10.0]).unwrap()),
            })
            .collect();
        GameProblem::new(p, Arc::new(grad), agents, 1.0).unwrap()
    }

    #[test]
    fn identity_pseudogradient() {
        let g = identity_game();
        let u = BlockVector::new(g.partition().clone(), BlockKind::Primal, vec![0.3, -2.0]).unwrap();
        assert_eq!(g.apply_f(&u).unwrap().as_slice(), &[0.3, -2.0]);
        assert!(g.interaction_neighbors(0).is_empty());
    }

    #[test]
    fn constant_field() {
        let p = Arc::new(AgentPartition::new(vec![1, 1], 1).unwrap());
        let grad = AffineGradient::new(p.clone(), Matrix::zeros(2, 2), vec![1.0, 2.0]).unwrap();
        let u = BlockVector::new(p, BlockKind::Primal, vec![5.0, -7.0]).unwrap();
        let mut out = [0.0];
        grad.partial_gradient(1, &u, &mut out);
        assert_eq!(out, [2.0]);
    }

    #[test]
    fn stacked_coupling_and_offsets() {
        let g = identity_game();
        assert_eq!(g.offset_total(), &[1.0]);
        assert_eq!(g.stacked_coupling().data(), &[1.0, 1.0]);
        assert_eq!(g.coupling_residual(&[1.0, 0.75]), vec![0.75]);
        assert_eq!(g.feasibility_gap(&[0.0, 0.0]), 0.0);
        assert!((g.coupling_norm() - 2f64.sqrt()).abs() < 1e-9);
    }

    #[derive(Debug)]
    struct NanGradient;
    impl PseudoGradient for NanGradient {
        fn partial_gradient(&self, _: usize, _: &dyn StrategyProfile, out: &mut [f64]) {
            out.fill(f64::NAN);
        }
        fn interaction_neighbors(&self, _: usize) -> Vec<usize> {
            Vec::new()
        }
    }

    #[test]
    fn nan_gradient_reports_agent() {
        let p = Arc::new(AgentPartition::new(vec![1], 1).unwrap());
        let agents = vec![AgentData {
            coupling: Matrix::zeros(1, 1),
            offset: vec![0.0],
            local: Arc::new(BoxPenalty::new(vec![0.0], vec![1.0]).unwrap()),
        }];
        let g = GameProblem::new(p.clone(), Arc::new(NanGradient), agents, 0.0).unwrap();
        let u = BlockVector::zeros(p, BlockKind::Primal);
        assert!(matches!(g.apply_f(&u), Err(Error::Numeric { agent: 0, .. })));
    }
}
