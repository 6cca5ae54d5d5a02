//! Weighted communication graph over the agents and its Laplacian.
//!
//! `L = diag(W·1) − W` and the tensorized Laplacian `L̄ = L ⊗ I_m` is only
//! ever applied block by block: `(L̄v)_i = Σ_j w_ij (v_i − v_j)`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blockvec::{BlockKind, BlockVector};
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, Matrix, POWER_TOL};

/// Validated undirected weighted graph with its spectral constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    weights: Matrix,
    degrees: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
    max_degree: f64,
    kappa: f64,
}

/// Builds and validates a communication graph from its weighted adjacency matrix.
pub fn build_graph(weights: &Matrix) -> Result<CommGraph> {
    CommGraph::new(weights.clone())
}

impl CommGraph {
    pub fn new(weights: Matrix) -> Result<Self> {
        let n = weights.rows();
        if n == 0 || weights.cols() != n {
            return Err(Error::Validation(format!(
                "adjacency matrix must be square and non-empty, got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        for i in 0..n {
            if weights.get(i, i) != 0.0 {
                return Err(Error::Validation(format!(
                    "adjacency matrix has nonzero diagonal entry at {i}"
                )));
            }
            for j in 0..n {
                let w = weights.get(i, j);
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::Validation(format!(
                        "weight w[{i}][{j}] = {w} must be finite and nonnegative"
                    )));
                }
                if w != weights.get(j, i) {
                    return Err(Error::Validation(format!(
                        "adjacency matrix is not symmetric: w[{i}][{j}] = {w} but w[{j}][{i}] = {}",
                        weights.get(j, i)
                    )));
                }
            }
        }
        let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let w = weights.get(i, j);
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        if !is_connected(&neighbors) {
            return Err(Error::Validation(
                "communication graph is disconnected; the adjacency matrix must be irreducible"
                    .into(),
            ));
        }
        let degrees: Vec<f64> = neighbors
            .iter()
            .map(|nb| nb.iter().map(|(_, w)| w).sum())
            .collect();
        let max_degree = degrees.iter().copied().fold(0.0, f64::max);
        let mut g = CommGraph {
            weights,
            degrees,
            neighbors,
            max_degree,
            kappa: 0.0,
        };
        g.kappa = power_iteration(n, POWER_TOL, |x, out| g.apply_scalar_laplacian(x, out));
        Ok(g)
    }

    pub fn num_agents(&self) -> usize {
        self.degrees.len()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    /// Weighted degrees `(W·1)_i`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// `Δ`, the maximum weighted degree.
    pub fn max_degree(&self) -> f64 {
        self.max_degree
    }

    /// `κ = ‖L‖`, the spectral norm (largest eigenvalue) of the Laplacian.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `N_i^λ` with weights, in ascending index order.
    pub fn neighbors(&self, agent: usize) -> &[(usize, f64)] {
        &self.neighbors[agent]
    }

    /// Dense Laplacian matrix.
    pub fn laplacian(&self) -> Matrix {
        let n = self.num_agents();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            l.set(i, i, self.degrees[i]);
            for &(j, w) in &self.neighbors[i] {
                l.set(i, j, -w);
            }
        }
        l
    }

    fn apply_scalar_laplacian(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.neighbors[i]
                .iter()
                .map(|&(j, w)| w * (x[i] - x[j]))
                .sum();
        }
    }

    /// Block `i` of `L̄v`, reading neighbor blocks through `block`.
    ///
    /// Summation runs over neighbors in ascending order; both executors rely
    /// on this to produce bitwise identical iterates.
    pub fn laplacian_block<'a>(
        &self,
        agent: usize,
        own: &[f64],
        block: impl Fn(usize) -> &'a [f64],
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(j, w) in &self.neighbors[agent] {
            let other = block(j);
            for ((o, a), b) in out.iter_mut().zip(own).zip(other) {
                *o += w * (a - b);
            }
        }
    }

    /// `(L ⊗ I_m) v` for a stacked dual vector.
    pub fn apply_laplacian(&self, v: &BlockVector) -> Result<BlockVector> {
        let p = v.partition();
        if v.kind() != BlockKind::DualStack || p.num_agents() != self.num_agents() {
            return Err(Error::dim(
                "laplacian input",
                self.num_agents() * p.constraint_dim(),
                v.len(),
            ));
        }
        let mut out = BlockVector::zeros(p.clone(), BlockKind::DualStack);
        for i in 0..self.num_agents() {
            let r = p.dual_range(i);
            self.laplacian_block(
                i,
                v.agent_block(i),
                |j| v.agent_block(j),
                &mut out.as_mut_slice()[r],
            );
        }
        Ok(out)
    }
}

fn is_connected(neighbors: &[Vec<(usize, f64)>]) -> bool {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for &(j, _) in &neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// Named graph generators (unit weights) or an explicit adjacency matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GraphSpec {
    Ring,
    Star,
    Complete,
    ErdosRenyi { p: f64, seed: u64 },
    Explicit { weights: Matrix },
}

impl GraphSpec {
    pub fn adjacency(&self, n: usize) -> Result<Matrix> {
        let mut w = Matrix::zeros(n, n);
        let edge = |w: &mut Matrix, i: usize, j: usize| {
            w.set(i, j, 1.0);
            w.set(j, i, 1.0);
        };
        match self {
            GraphSpec::Ring => {
                for i in 0..n {
                    let j = (i + 1) % n;
                    if i != j {
                        edge(&mut w, i, j);
                    }
                }
            }
            GraphSpec::Star => {
                for j in 1..n {
                    edge(&mut w, 0, j);
                }
            }
            GraphSpec::Complete => {
                for i in 0..n {
                    for j in i + 1..n {
                        edge(&mut w, i, j);
                    }
                }
            }
            GraphSpec::ErdosRenyi { p, seed } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::param("p", format!("edge probability {p} not in [0, 1]")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < *p {
                            edge(&mut w, i, j);
                        }
                    }
                }
            }
            GraphSpec::Explicit { weights } => {
                if weights.rows() != n {
                    return Err(Error::dim("graph weights", n, weights.rows()));
                }
                return Ok(weights.clone());
            }
        }
        Ok(w)
    }

    pub fn build(&self, n: usize) -> Result<CommGraph> {
        CommGraph::new(self.adjacency(n)?)
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSpec::Ring => write!(f, "ring"),
            GraphSpec::Star => write!(f, "star"),
            GraphSpec::Complete => write!(f, "complete"),
            GraphSpec::ErdosRenyi { p, seed } => write!(f, "erdos-renyi({p}, {seed})"),
            GraphSpec::Explicit { .. } => write!(f, "explicit"),
        }
    }
}

impl FromStr for GraphSpec {
    type Err = Error;

    /// Parses `ring`, `star`, `complete` or `erdos-renyi(p, seed)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "ring" => return Ok(GraphSpec::Ring),
            "star" => return Ok(GraphSpec::Star),
            "complete" => return Ok(GraphSpec::Complete),
            _ => {}
        }
        let bad = || Error::Validation(format!("unknown graph generator '{s}'"));
        let args = s
            .strip_prefix("erdos-renyi(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (p, seed) = args.split_once(',').ok_or_else(bad)?;
        Ok(GraphSpec::ErdosRenyi {
            p: p.trim().parse().map_err(|_| bad())?,
            seed: seed.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockvec::AgentPartition;
    use std::sync::Arc;

    fn path2() -> CommGraph {
        build_graph(&Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap()
    }

    #[test]
    fn two_node_path() {
        let g = path2();
        assert_eq!(
            g.laplacian(),
            Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
        );
        assert_eq!(g.max_degree(), 1.0);
        assert!((g.kappa() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn three_cycle_spectrum() {
        let g = GraphSpec::Ring.build(3).unwrap();
        assert!((g.kappa() - 3.0).abs() < 1e-9);
        assert_eq!(g.max_degree(), 2.0);
        assert!(g.max_degree() <= g.kappa() && g.kappa() <= 2.0 * g.max_degree());
    }

    #[test]
    fn laplacian_annihilates_ones() {
        for spec in [GraphSpec::Ring, GraphSpec::Star, GraphSpec::Complete] {
            let l = spec.build(6).unwrap().laplacian();
            let mut out = vec![1.0; 6];
            l.mul_vec(&[1.0; 6], &mut out);
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn apply_laplacian_examples() {
        let g = path2();
        let p = Arc::new(AgentPartition::new(vec![1, 1], 1).unwrap());
        let v = BlockVector::new(p.clone(), BlockKind::DualStack, vec![1.0, 0.0]).unwrap();
        assert_eq!(g.apply_laplacian(&v).unwrap().as_slice(), &[1.0, -1.0]);
        let c = BlockVector::new(p, BlockKind::DualStack, vec![3.5, 3.5]).unwrap();
        assert_eq!(g.apply_laplacian(&c).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn apply_laplacian_length_mismatch() {
        let g = path2();
        let p = Arc::new(AgentPartition::new(vec![1, 1, 1], 1).unwrap());
        let v = BlockVector::zeros(p, BlockKind::DualStack);
        assert!(matches!(g.apply_laplacian(&v), Err(Error::Dimension { .. })));
    }

    #[test]
    fn rejects_asymmetric_and_disconnected() {
        let asym = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(matches!(build_graph(&asym), Err(Error::Validation(_))));
        let disc = Matrix::zeros(2, 2);
        let err = build_graph(&disc).unwrap_err().to_string();
        assert!(err.contains("irreducible"), "{err}");
        let neg = Matrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(build_graph(&neg).is_err());
        let diag = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(build_graph(&diag).is_err());
    }

    #[test]
    fn single_agent_graph() {
        let g = GraphSpec::Ring.build(1).unwrap();
        assert_eq!(g.kappa(), 0.0);
        assert_eq!(g.max_degree(), 0.0);
    }

    #[test]
    fn parse_generators() {
        assert_eq!("ring".parse::<GraphSpec>().unwrap(), GraphSpec::Ring);
        assert_eq!(
            "erdos-renyi(0.4, 17)".parse::<GraphSpec>().unwrap(),
            GraphSpec::ErdosRenyi { p: 0.4, seed: 17 }
        );
        assert!("torus".parse::<GraphSpec>().is_err());
        let spec = GraphSpec::ErdosRenyi { p: 0.5, seed: 3 };
        assert_eq!(spec.to_string().parse::<GraphSpec>().unwrap(), spec);
    }
}
