//! Serializable problem instances.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blockvec::AgentPartition;
use crate::cournot::{CournotCost, CournotGradient, CournotOracle, SlopeLaw};
use crate::error::{Error, Result};
use crate::graph::{CommGraph, GraphSpec};
use crate::linalg::Matrix;
use crate::operators::ExtendedOperator;
use crate::problem::{AffineGradient, AgentData, BoxPenalty, GameProblem, PseudoGradient};
use crate::stochastic::{BatchMode, ExactOracle, GaussianOracle, SamplingOracle};

/// One agent's local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDoc {
    /// Box and optional penalty terms of `g_i`.
    pub local: BoxPenalty,
    /// `D_i` with `m` rows.
    pub coupling: Matrix,
    /// `b_i`.
    pub offset: Vec<f64>,
}

/// The pseudogradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostDoc {
    /// `F(u) = Mu + q`.
    Affine { matrix: Matrix, offset: Vec<f64> },
    Cournot(CournotCost),
}

/// The sampling model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseDoc {
    /// Exact gradients.
    #[default]
    None,
    /// Additive `N(0, sd²I)` noise on every gradient block.
    Gaussian {
        sd: f64,
        #[serde(default)]
        batch_mode: BatchMode,
    },
    /// Random demand slopes; Cournot costs only.
    DemandSlope {
        sd: f64,
        #[serde(default)]
        law: SlopeLaw,
        #[serde(default)]
        batch_mode: BatchMode,
    },
}

/// A complete problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub constraint_dim: usize,
    pub agents: Vec<AgentDoc>,
    pub graph: GraphSpec,
    pub cost: CostDoc,
    #[serde(default)]
    pub noise: NoiseDoc,
    /// Lipschitz constant of `F`; the spectral norm of `M` when omitted for
    /// affine costs. Required for Cournot costs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

/// A built instance: the problem, its graph and a sampling oracle.
#[derive(Debug, Clone)]
pub struct Instance {
    name: String,
    problem: Arc<GameProblem>,
    graph: Arc<CommGraph>,
    oracle: Arc<dyn SamplingOracle>,
    operator: ExtendedOperator,
}

impl Instance {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn problem(&self) -> &Arc<GameProblem> {
        &self.problem
    }

    pub fn graph(&self) -> &Arc<CommGraph> {
        &self.graph
    }

    pub fn oracle(&self) -> &Arc<dyn SamplingOracle> {
        &self.oracle
    }

    pub fn operator(&self) -> &ExtendedOperator {
        &self.operator
    }
}

impl InstanceDoc {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Validation(format!("instance document: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance documents serialize")
    }

    pub fn with_noise(mut self, noise: NoiseDoc) -> Self {
        self.noise = noise;
        self
    }

    pub fn build(&self) -> Result<Instance> {
        let n = self.agents.len();
        let m = self.constraint_dim;
        let dims: Vec<usize> = self.agents.iter().map(|a| a.local.dim()).collect();
        let partition = Arc::new(AgentPartition::new(dims.clone(), m)?);
        let mut agents = Vec::with_capacity(n);
        for a in &self.agents {
            a.local.validate()?;
            agents.push(AgentData {
                coupling: a.coupling.clone(),
                offset: a.offset.clone(),
                local: Arc::new(a.local.clone()),
            });
        }
        let (gradient, lipschitz, cournot): (Arc<dyn PseudoGradient>, f64, Option<Arc<CournotGradient>>) =
            match &self.cost {
                CostDoc::Affine { matrix, offset } => {
                    let g = AffineGradient::new(partition.clone(), matrix.clone(), offset.clone())?;
                    let ell = self.lipschitz.unwrap_or_else(|| matrix.spectral_norm());
                    (Arc::new(g), ell, None)
                }
                CostDoc::Cournot(cost) => {
                    if cost.participation.len() != n {
                        return Err(Error::dim("participation", n, cost.participation.len()));
                    }
                    if cost.num_markets() != m {
                        return Err(Error::dim("markets", m, cost.num_markets()));
                    }
                    for (i, mk) in cost.participation.iter().enumerate() {
                        if mk.len() != dims[i] {
                            return Err(Error::dim(format!("box of firm {i}"), mk.len(), dims[i]));
                        }
                    }
                    let ell = self
                        .lipschitz
                        .ok_or_else(|| Error::param("lipschitz", "required for Cournot costs"))?;
                    let g = Arc::new(CournotGradient::new(cost.clone())?);
                    (g.clone(), ell, Some(g))
                }
            };
        let problem = Arc::new(GameProblem::new(partition, gradient.clone(), agents, lipschitz)?);
        let graph = Arc::new(self.graph.build(n)?);
        let oracle: Arc<dyn SamplingOracle> = match &self.noise {
            NoiseDoc::None => Arc::new(ExactOracle::new(gradient)),
            NoiseDoc::Gaussian { sd, batch_mode } => Arc::new(GaussianOracle::new(gradient, dims, *sd, *batch_mode)?),
            NoiseDoc::DemandSlope { sd, law, batch_mode } => {
                let g = cournot.ok_or_else(|| {
                    Error::Validation("demand-slope noise needs a Cournot cost".into())
                })?;
                let caps: Vec<Vec<f64>> = self.agents.iter().map(|a| a.local.upper.clone()).collect();
                Arc::new(CournotOracle::new(g, *sd, *law, *batch_mode, &caps)?)
            }
        };
        let operator = ExtendedOperator::new(problem.clone(), graph.clone())?;
        Ok(Instance {
            name: self.name.clone().unwrap_or_else(|| "instance".into()),
            problem,
            graph,
            oracle,
            operator,
        })
    }
}
