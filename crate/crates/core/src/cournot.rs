//! Networked Cournot competition: firms sell into capacity-limited markets
//! whose inverse demand has a random slope.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blockvec::{AgentPartition, BlockKind, BlockVector, StrategyProfile};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::instance::{AgentDoc, CostDoc, Instance, InstanceDoc, NoiseDoc};
use crate::linalg::{dot, Matrix};
use crate::problem::{BoxPenalty, GameProblem, PseudoGradient};
use crate::stochastic::{explicit_batch, BatchMode, SamplingOracle, StreamRng};

/// Markets (0-based) served by each of the ten firms of the reference network.
pub const DEFAULT_PARTICIPATION: [&[usize]; 10] = [
    &[0, 3],
    &[0],
    &[0, 2, 4],
    &[1, 6],
    &[2, 6],
    &[6],
    &[2, 5],
    &[1, 2, 3, 5],
    &[0, 4],
    &[3, 4, 5],
];

/// Distribution of the demand slope `p_j(ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeLaw {
    #[default]
    Normal,
    /// Normal conditioned on lying within three standard deviations of the mean.
    TruncatedNormal,
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CournotConfig {
    pub num_firms: usize,
    pub num_markets: usize,
    /// Markets (0-based) of each firm; defaults to the reference network for
    /// 10 firms and 7 markets, and to a random bipartite map otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub participation: Option<Vec<Vec<usize>>>,
    pub cost_mean: f64,
    pub cost_sd: f64,
    pub cost_floor: f64,
    pub intercept: f64,
    pub slope_mean: f64,
    pub slope_sd: f64,
    pub slope_law: SlopeLaw,
    pub batch_mode: BatchMode,
    /// Exponent of aggregate supply in the price, in `(1, 3]`.
    pub exponent: f64,
    pub cap_mean: f64,
    pub cap_sd: f64,
    pub capacity_min: f64,
    pub capacity_max: f64,
    /// `-1` makes the price fall with supply.
    pub demand_sign: f64,
    pub graph: GraphSpec,
    pub seed: u64,
    /// Random pairs used to estimate the Lipschitz constant.
    pub lipschitz_pairs: usize,
    /// Random pairs for the monotonicity gate.
    pub monotonicity_pairs: usize,
    pub allow_nonmonotone: bool,
}

impl Default for CournotConfig {
    fn default() -> Self {
        CournotConfig {
            num_firms: 10,
            num_markets: 7,
            participation: None,
            cost_mean: 2.0,
            cost_sd: 1.0,
            cost_floor: 0.6,
            intercept: 400.0,
            slope_mean: 0.02,
            slope_sd: 0.005,
            slope_law: SlopeLaw::Normal,
            batch_mode: BatchMode::Pooled,
            exponent: 1.2,
            cap_mean: 250.0,
            cap_sd: 50.0,
            capacity_min: 5.0,
            capacity_max: 10.0,
            demand_sign: -1.0,
            graph: GraphSpec::Ring,
            seed: 0,
            lipschitz_pairs: 10_000,
            monotonicity_pairs: 1_000,
            allow_nonmonotone: false,
        }
    }
}

/// Deterministic cost data of a Cournot game, as stored in instance documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CournotCost {
    pub participation: Vec<Vec<usize>>,
    /// Marginal production cost per firm and served market.
    pub costs: Vec<Vec<f64>>,
    /// `q_j` per market.
    pub intercept: Vec<f64>,
    /// `E[p_j(ξ)]` per market.
    pub slope_mean: Vec<f64>,
    pub exponent: f64,
    pub demand_sign: f64,
}

impl CournotCost {
    pub fn num_markets(&self) -> usize {
        self.intercept.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_markets();
        if self.slope_mean.len() != m {
            return Err(Error::dim("slope_mean", m, self.slope_mean.len()));
        }
        if !(self.exponent > 1.0 && self.exponent <= 3.0) {
            return Err(Error::param(
                "exponent",
                format!("monotonicity needs 1 < exponent <= 3, got {}", self.exponent),
            ));
        }
        if self.demand_sign != 1.0 && self.demand_sign != -1.0 {
            return Err(Error::param("demand_sign", "must be +1 or -1"));
        }
        if self.costs.len() != self.participation.len() {
            return Err(Error::dim("costs", self.participation.len(), self.costs.len()));
        }
        check_participation(&self.participation, m)?;
        for (i, (c, mk)) in self.costs.iter().zip(&self.participation).enumerate() {
            if c.len() != mk.len() {
                return Err(Error::dim(format!("costs of firm {i}"), mk.len(), c.len()));
            }
        }
        Ok(())
    }
}

fn check_participation(part: &[Vec<usize>], m: usize) -> Result<()> {
    let mut served = vec![false; m];
    for (i, mk) in part.iter().enumerate() {
        if mk.is_empty() {
            return Err(Error::Validation(format!("firm {i} serves no market")));
        }
        for w in mk.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Validation(format!(
                    "markets of firm {i} must be strictly increasing"
                )));
            }
        }
        for &j in mk {
            if j >= m {
                return Err(Error::Validation(format!("firm {i} serves market {j} of {m}")));
            }
            served[j] = true;
        }
    }
    if let Some(j) = served.iter().position(|s| !s) {
        return Err(Error::Validation(format!("market {j} has no firm")));
    }
    Ok(())
}

/// Pseudogradient of the Cournot game with the mean demand slope.
#[derive(Debug, Clone)]
pub struct CournotGradient {
    cost: CournotCost,
    /// `(firm, position of the market within the firm's block)` per market, ascending by firm.
    members: Vec<Vec<(usize, usize)>>,
    neighbors: Vec<Vec<usize>>,
}

impl CournotGradient {
    pub fn new(cost: CournotCost) -> Result<Self> {
        cost.validate()?;
        let m = cost.num_markets();
        let mut members = vec![Vec::new(); m];
        for (i, mk) in cost.participation.iter().enumerate() {
            for (l, &j) in mk.iter().enumerate() {
                members[j].push((i, l));
            }
        }
        let neighbors = cost
            .participation
            .iter()
            .enumerate()
            .map(|(i, mk)| {
                let mut nb: Vec<usize> = mk
                    .iter()
                    .flat_map(|&j| members[j].iter().map(|&(f, _)| f))
                    .filter(|&f| f != i)
                    .collect();
                nb.sort_unstable();
                nb.dedup();
                nb
            })
            .collect();
        Ok(CournotGradient {
            cost,
            members,
            neighbors,
        })
    }

    pub fn cost(&self) -> &CournotCost {
        &self.cost
    }

    /// Partial gradient of firm `agent` with slope `slopes[l]` in its `l`-th market.
    ///
    /// Aggregate supply enters through its positive part, so the map is
    /// defined on all of `R^d`.
    pub fn gradient_with_slopes(&self, agent: usize, u: &dyn StrategyProfile, slopes: &[f64], out: &mut [f64]) {
        let c = &self.cost;
        let own = u.block(agent);
        for (l, &j) in c.participation[agent].iter().enumerate() {
            let mut s = 0.0;
            for &(f, pos) in &self.members[j] {
                s += u.block(f)[pos];
            }
            let s = s.max(0.0);
            let price = c.intercept[j] + c.demand_sign * slopes[l] * s.powf(c.exponent);
            let dprice = c.demand_sign * slopes[l] * c.exponent * s.powf(c.exponent - 1.0);
            out[l] = c.costs[agent][l] - price - own[l] * dprice;
        }
    }

    fn mean_slopes(&self, agent: usize) -> Vec<f64> {
        self.cost.participation[agent]
            .iter()
            .map(|&j| self.cost.slope_mean[j])
            .collect()
    }
}

impl PseudoGradient for CournotGradient {
    fn partial_gradient(&self, agent: usize, u: &dyn StrategyProfile, out: &mut [f64]) {
        self.gradient_with_slopes(agent, u, &self.mean_slopes(agent), out);
    }

    fn interaction_neighbors(&self, agent: usize) -> Vec<usize> {
        self.neighbors[agent].clone()
    }
}

/// Samples the demand slopes; each firm draws its own.
#[derive(Debug, Clone)]
pub struct CournotOracle {
    gradient: Arc<CournotGradient>,
    sd: f64,
    law: SlopeLaw,
    mode: BatchMode,
    bound: f64,
}

impl CournotOracle {
    /// `caps` are the upper corners of the firms' boxes, used for the noise bound.
    pub fn new(gradient: Arc<CournotGradient>, sd: f64, law: SlopeLaw, mode: BatchMode, caps: &[Vec<f64>]) -> Result<Self> {
        if !(sd.is_finite() && sd >= 0.0) {
            return Err(Error::param("noise.sd", format!("must be >= 0, got {sd}")));
        }
        let bound = slope_noise_bound(gradient.cost(), sd, caps);
        Ok(CournotOracle {
            gradient,
            sd,
            law,
            mode,
            bound,
        })
    }

    fn draw_slope(&self, mean: f64, rng: &mut StreamRng) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if self.law == SlopeLaw::Normal || z.abs() <= 3.0 {
                return mean + self.sd * z;
            }
        }
    }
}

/// `σ` with `E‖F̂ − F‖² ≤ σ²` on the box: the slope error multiplies
/// `S^σ + u·σ·S^{σ−1}`, which is largest at the upper corner.
fn slope_noise_bound(cost: &CournotCost, sd: f64, caps: &[Vec<f64>]) -> f64 {
    let m = cost.num_markets();
    let mut smax = vec![0.0; m];
    for (mk, cap) in cost.participation.iter().zip(caps) {
        for (&j, &c) in mk.iter().zip(cap) {
            smax[j] += c.max(0.0);
        }
    }
    let e = cost.exponent;
    let mut total = 0.0;
    for (mk, cap) in cost.participation.iter().zip(caps) {
        for (&j, &c) in mk.iter().zip(cap) {
            let g = smax[j].powf(e) + c.max(0.0) * e * smax[j].powf(e - 1.0);
            total += g * g;
        }
    }
    sd * total.sqrt()
}

impl SamplingOracle for CournotOracle {
    fn noise_bound(&self) -> f64 {
        self.bound
    }

    fn noise_dim(&self, agent: usize) -> usize {
        self.gradient.cost.participation[agent].len()
    }

    fn draw_noise(&self, agent: usize, rng: &mut StreamRng, xi: &mut [f64]) {
        for (x, &j) in xi.iter_mut().zip(&self.gradient.cost.participation[agent]) {
            *x = self.draw_slope(self.gradient.cost.slope_mean[j], rng);
        }
    }

    fn sampled_gradient(&self, agent: usize, u: &dyn StrategyProfile, xi: &[f64], out: &mut [f64]) {
        self.gradient.gradient_with_slopes(agent, u, xi, out);
    }

    /// The gradient is affine in the slopes, so the batch mean equals the
    /// gradient at the mean slope. Under the normal law that mean is drawn
    /// directly from `N(p̄, sd²/S)`.
    fn batch_gradient(
        &self,
        agent: usize,
        u: &dyn StrategyProfile,
        batch: usize,
        rng: &mut StreamRng,
        out: &mut [f64],
    ) -> Result<()> {
        if self.mode == BatchMode::Explicit {
            return explicit_batch(self, agent, u, batch, rng, out);
        }
        let means = self.gradient.mean_slopes(agent);
        let slopes: Vec<f64> = match self.law {
            SlopeLaw::Normal => {
                let scale = self.sd / (batch as f64).sqrt();
                means
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + scale * z
                    })
                    .collect()
            }
            SlopeLaw::TruncatedNormal => {
                let mut acc = vec![0.0; means.len()];
                for _ in 0..batch {
                    for (a, m) in acc.iter_mut().zip(&means) {
                        *a += self.draw_slope(*m, rng);
                    }
                }
                acc.iter().map(|a| a / batch as f64).collect()
            }
        };
        self.gradient.gradient_with_slopes(agent, u, &slopes, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric {
                source_name: "sampled gradient".into(),
                agent,
                draw: None,
            })
        }
    }
}

/// Outcome of [`monotonicity_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    /// `min ⟨F(u) − F(v), u − v⟩ / ‖u − v‖²` over the sampled pairs.
    pub min_ratio: f64,
}

impl MonotonicityReport {
    pub const THRESHOLD: f64 = -1e-8;

    pub fn passed(&self) -> bool {
        self.min_ratio >= Self::THRESHOLD
    }
}

fn random_point(problem: &GameProblem, rng: &mut ChaCha8Rng) -> BlockVector {
    let (lo, hi) = problem.domain_box();
    let data = lo.iter().zip(&hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect();
    BlockVector::new(problem.partition().clone(), BlockKind::Primal, data).expect("box matches partition")
}

/// Samples pairs `u, v` uniformly in `U` and reports the smallest monotonicity ratio.
pub fn monotonicity_probe(problem: &GameProblem, trials: usize, seed: u64) -> Result<MonotonicityReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    for _ in 0..trials {
        let u = random_point(problem, &mut rng);
        let v = random_point(problem, &mut rng);
        let (fu, fv) = (problem.apply_f(&u)?, problem.apply_f(&v)?);
        let du: Vec<f64> = u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a - b).collect();
        let df: Vec<f64> = fu.as_slice().iter().zip(fv.as_slice()).map(|(a, b)| a - b).collect();
        let nn = dot(&du, &du);
        if nn > 0.0 {
            min_ratio = min_ratio.min(dot(&df, &du) / nn);
        }
    }
    Ok(MonotonicityReport { trials, min_ratio })
}

/// Largest `‖F(u) − F(v)‖ / ‖u − v‖` over random pairs in `U`.
pub fn sampled_lipschitz(problem: &GameProblem, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let u = random_point(problem, &mut rng);
        let v = random_point(problem, &mut rng);
        let (fu, fv) = (problem.apply_f(&u)?, problem.apply_f(&v)?);
        let du: f64 = u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
        let df: f64 = fu.as_slice().iter().zip(fv.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
        if du > 0.0 {
            best = best.max((df / du).sqrt());
        }
    }
    Ok(best)
}

/// Safety factor applied to the sampled Lipschitz ratio.
pub const LIPSCHITZ_MARGIN: f64 = 1.1;

/// A generated instance together with its document and gate results.
#[derive(Debug, Clone)]
pub struct GeneratedCournot {
    pub doc: InstanceDoc,
    pub instance: Instance,
    pub monotonicity: MonotonicityReport,
}

fn random_participation(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut part = vec![Vec::new(); n];
    for j in 0..m {
        part[j % n].push(j);
    }
    for (i, mk) in part.iter_mut().enumerate() {
        if mk.is_empty() {
            mk.push(i % m);
        }
        for j in 0..m {
            if !mk.contains(&j) && rng.random::<f64>() < 0.25 {
                mk.push(j);
            }
        }
        mk.sort_unstable();
    }
    part
}

/// Draws a Cournot instance from `config`.
pub fn generate(config: &CournotConfig) -> Result<GeneratedCournot> {
    let (n, m) = (config.num_firms, config.num_markets);
    if n == 0 || m == 0 {
        return Err(Error::param("num_firms/num_markets", "must be positive"));
    }
    if !(config.exponent > 1.0 && config.exponent <= 3.0) {
        return Err(Error::param(
            "exponent",
            format!("monotonicity needs 1 < exponent <= 3, got {}", config.exponent),
        ));
    }
    if !(config.capacity_min <= config.capacity_max && config.capacity_min.is_finite() && config.capacity_max.is_finite()) {
        return Err(Error::param("capacity_min/capacity_max", "need a finite nonempty interval"));
    }
    for (name, v) in [("cost_sd", config.cost_sd), ("cap_sd", config.cap_sd), ("slope_sd", config.slope_sd)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::param(name, "must be finite and >= 0"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let participation = match &config.participation {
        Some(p) => p.clone(),
        None if n == 10 && m == 7 => DEFAULT_PARTICIPATION.iter().map(|s| s.to_vec()).collect(),
        None => random_participation(n, m, &mut rng),
    };
    if participation.len() != n {
        return Err(Error::dim("participation", n, participation.len()));
    }
    check_participation(&participation, m)?;
    let cost_law = Normal::new(config.cost_mean, config.cost_sd).map_err(|e| Error::param("cost_sd", e.to_string()))?;
    let cap_law = Normal::new(config.cap_mean, config.cap_sd).map_err(|e| Error::param("cap_sd", e.to_string()))?;
    let costs: Vec<Vec<f64>> = participation
        .iter()
        .map(|mk| mk.iter().map(|_| cost_law.sample(&mut rng).max(config.cost_floor)).collect())
        .collect();
    let caps: Vec<Vec<f64>> = participation
        .iter()
        .map(|mk| mk.iter().map(|_| cap_law.sample(&mut rng).max(0.0)).collect())
        .collect();
    let capacity: Vec<f64> = (0..m)
        .map(|_| config.capacity_min + (config.capacity_max - config.capacity_min) * rng.random::<f64>())
        .collect();
    let agents = participation
        .iter()
        .zip(&caps)
        .map(|(mk, cap)| {
            let mut d = Matrix::zeros(m, mk.len());
            for (l, &j) in mk.iter().enumerate() {
                d.set(j, l, 1.0);
            }
            AgentDoc {
                local: BoxPenalty {
                    lower: vec![0.0; mk.len()],
                    upper: cap.clone(),
                    l1: Vec::new(),
                    linear: Vec::new(),
                },
                coupling: d,
                offset: capacity.iter().map(|b| b / n as f64).collect(),
            }
        })
        .collect();
    let cost = CournotCost {
        participation,
        costs,
        intercept: vec![config.intercept; m],
        slope_mean: vec![config.slope_mean; m],
        exponent: config.exponent,
        demand_sign: config.demand_sign,
    };
    let mut doc = InstanceDoc {
        name: Some(format!("cournot-{}", config.seed)),
        constraint_dim: m,
        agents,
        graph: config.graph.clone(),
        cost: CostDoc::Cournot(cost),
        noise: NoiseDoc::DemandSlope {
            sd: config.slope_sd,
            law: config.slope_law,
            batch_mode: config.batch_mode,
        },
        lipschitz: Some(0.0),
    };
    let probe_seed = config.seed ^ 0x9e37_79b9_7f4a_7c15;
    let draft = doc.build()?;
    let ratio = sampled_lipschitz(draft.problem(), config.lipschitz_pairs, probe_seed)?;
    doc.lipschitz = Some(LIPSCHITZ_MARGIN * ratio);
    let instance = doc.build()?;
    let monotonicity = monotonicity_probe(instance.problem(), config.monotonicity_pairs.max(1), probe_seed.rotate_left(17))?;
    if !monotonicity.passed() && !config.allow_nonmonotone {
        return Err(Error::Validation(format!(
            "pseudogradient failed the monotonicity probe (min ratio {:e}); set allow_nonmonotone to proceed",
            monotonicity.min_ratio
        )));
    }
    Ok(GeneratedCournot {
        doc,
        instance,
        monotonicity,
    })
}

/// Builds the partition implied by a participation map.
pub fn partition_for(participation: &[Vec<usize>], m: usize) -> Result<Arc<AgentPartition>> {
    Ok(Arc::new(AgentPartition::new(participation.iter().map(Vec::len).collect(), m)?))
}
