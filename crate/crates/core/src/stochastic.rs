//! Sampling oracles, mini-batch estimators and keyed random streams.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blockvec::{BlockKind, BlockVector, PrimalDualState, StrategyProfile};
use crate::error::{Error, Result};
use crate::operators::ExtendedOperator;
use crate::problem::PseudoGradient;

/// Random stream type handed to oracles.
pub type StreamRng = ChaCha8Rng;

/// The two independent samples drawn in each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Sample used at the inertial point.
    Xi,
    /// Sample used at the intermediate point.
    Eta,
}

/// Opens the stream keyed by `(seed, agent, iteration, phase)`.
///
/// Each key selects its own ChaCha key, so streams do not overlap and any
/// agent can open its own without coordination.
pub fn stream(seed: u64, agent: usize, iteration: usize, phase: Phase) -> StreamRng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(agent as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(iteration as u64).to_le_bytes());
    let tag: u64 = match phase {
        Phase::Xi => 0x5849,
        Phase::Eta => 0x4554_4100,
    };
    key[24..32].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// `S_k = max(1, ⌈S_0·(k+1)^p⌉)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BatchDoc", into = "BatchDoc")]
pub struct BatchSchedule {
    s0: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchDoc {
    #[serde(rename = "S0", default = "one")]
    s0: f64,
    #[serde(default = "default_exponent")]
    p: f64,
}

fn one() -> f64 {
    1.0
}

fn default_exponent() -> f64 {
    1.2
}

impl TryFrom<BatchDoc> for BatchSchedule {
    type Error = Error;
    fn try_from(d: BatchDoc) -> Result<Self> {
        BatchSchedule::new(d.s0, d.p)
    }
}

impl From<BatchSchedule> for BatchDoc {
    fn from(b: BatchSchedule) -> Self {
        BatchDoc { s0: b.s0, p: b.p }
    }
}

impl Default for BatchSchedule {
    fn default() -> Self {
        BatchSchedule { s0: 1.0, p: 1.2 }
    }
}

impl BatchSchedule {
    pub fn new(s0: f64, p: f64) -> Result<Self> {
        if !(s0.is_finite() && s0 > 0.0) {
            return Err(Error::param("batch.S0", format!("must be positive, got {s0}")));
        }
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::param(
                "batch.p",
                format!("must exceed 1 so that the inverse batch sizes are summable, got {p}"),
            ));
        }
        Ok(BatchSchedule { s0, p })
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn batch_size(&self, k: usize) -> usize {
        let s = (self.s0 * ((k + 1) as f64).powf(self.p)).ceil();
        if s >= usize::MAX as f64 {
            usize::MAX
        } else {
            (s as usize).max(1)
        }
    }
}

/// A stochastic first-order oracle for the agents' smooth costs.
pub trait SamplingOracle: Send + Sync + fmt::Debug {
    /// `σ` with `E‖F̂(u, ξ) − F(u)‖² ≤ σ²` for single samples on `U`.
    fn noise_bound(&self) -> f64;

    /// Length of one sample `ξ_i`.
    fn noise_dim(&self, agent: usize) -> usize;

    fn draw_noise(&self, agent: usize, rng: &mut StreamRng, xi: &mut [f64]);

    /// `∇_{u_i} f̂_i(u, ξ_i)`.
    fn sampled_gradient(&self, agent: usize, u: &dyn StrategyProfile, xi: &[f64], out: &mut [f64]);

    /// Mean of `batch` i.i.d. sampled gradients drawn from `rng`.
    fn batch_gradient(
        &self,
        agent: usize,
        u: &dyn StrategyProfile,
        batch: usize,
        rng: &mut StreamRng,
        out: &mut [f64],
    ) -> Result<()> {
        explicit_batch(self, agent, u, batch, rng, out)
    }
}

/// Draws and averages `batch` samples one by one.
pub fn explicit_batch<O: SamplingOracle + ?Sized>(
    orc: &O,
    agent: usize,
    u: &dyn StrategyProfile,
    batch: usize,
    rng: &mut StreamRng,
    out: &mut [f64],
) -> Result<()> {
    let mut xi = vec![0.0; orc.noise_dim(agent)];
    let mut g = vec![0.0; out.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    for t in 0..batch {
        orc.draw_noise(agent, rng, &mut xi);
        orc.sampled_gradient(agent, u, &xi, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                source_name: "sampled gradient".into(),
                agent,
                draw: Some(t),
            });
        }
        for (o, v) in out.iter_mut().zip(&g) {
            *o += v;
        }
    }
    let s = batch as f64;
    out.iter_mut().for_each(|o| *o /= s);
    Ok(())
}

/// Noise-free oracle: every sample returns the exact gradient.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    gradient: Arc<dyn PseudoGradient>,
}

impl ExactOracle {
    pub fn new(gradient: Arc<dyn PseudoGradient>) -> Self {
        ExactOracle { gradient }
    }
}

impl SamplingOracle for ExactOracle {
    fn noise_bound(&self) -> f64 {
        0.0
    }

    fn noise_dim(&self, _agent: usize) -> usize {
        0
    }

    fn draw_noise(&self, _agent: usize, _rng: &mut StreamRng, _xi: &mut [f64]) {}

    fn sampled_gradient(&self, agent: usize, u: &dyn StrategyProfile, _xi: &[f64], out: &mut [f64]) {
        self.gradient.partial_gradient(agent, u, out);
    }

    fn batch_gradient(
        &self,
        agent: usize,
        u: &dyn StrategyProfile,
        _batch: usize,
        _rng: &mut StreamRng,
        out: &mut [f64],
    ) -> Result<()> {
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
}

/// How a mini-batch mean is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// Draw the batch mean directly from its exact distribution.
    #[default]
    Pooled,
    /// Draw and average every sample.
    Explicit,
}

/// `∇f̂_i(u, ξ) = ∇f_i(u) + ξ` with `ξ ~ N(0, sd²I)`.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    gradient: Arc<dyn PseudoGradient>,
    dims: Vec<usize>,
    sd: f64,
    mode: BatchMode,
}

impl GaussianOracle {
    pub fn new(gradient: Arc<dyn PseudoGradient>, dims: Vec<usize>, sd: f64, mode: BatchMode) -> Result<Self> {
        if !(sd.is_finite() && sd >= 0.0) {
            return Err(Error::param("noise.sd", format!("must be >= 0, got {sd}")));
        }
        Ok(GaussianOracle {
            gradient,
            dims,
            sd,
            mode,
        })
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }
}

impl SamplingOracle for GaussianOracle {
    fn noise_bound(&self) -> f64 {
        self.sd * (self.dims.iter().sum::<usize>() as f64).sqrt()
    }

    fn noise_dim(&self, agent: usize) -> usize {
        self.dims[agent]
    }

    fn draw_noise(&self, _agent: usize, rng: &mut StreamRng, xi: &mut [f64]) {
        for x in xi.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x = self.sd * z;
        }
    }

    fn sampled_gradient(&self, agent: usize, u: &dyn StrategyProfile, xi: &[f64], out: &mut [f64]) {
        self.gradient.partial_gradient(agent, u, out);
        for (o, x) in out.iter_mut().zip(xi) {
            *o += x;
        }
    }

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
        self.gradient.partial_gradient(agent, u, out);
        let scale = self.sd / (batch as f64).sqrt();
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o += scale * z;
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric {
                source_name: "sampled gradient".into(),
                agent,
                draw: Some(0),
            })
        }
    }
}

/// Identifies the streams consumed by one oracle call: agents are added per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub iteration: usize,
    pub phase: Phase,
}

/// `F̂(u) = col(F̂_1, …, F̂_N)`, each block averaged over `batch` samples from its own stream.
pub fn sample_f_hat(
    orc: &dyn SamplingOracle,
    u: &BlockVector,
    batch: usize,
    key: StreamKey,
) -> Result<BlockVector> {
    let p = u.partition().clone();
    if u.kind() != BlockKind::Primal {
        return Err(Error::dim("u", p.total_dim(), u.len()));
    }
    let mut out = BlockVector::zeros(p.clone(), BlockKind::Primal);
    sample_f_into(orc, &u.view(), p.num_agents(), |i| p.primal_range(i), batch, key, out.as_mut_slice())?;
    Ok(out)
}

pub(crate) fn sample_agent(
    orc: &dyn SamplingOracle,
    agent: usize,
    u: &dyn StrategyProfile,
    batch: usize,
    key: StreamKey,
    out: &mut [f64],
) -> Result<()> {
    if batch == 0 {
        return Err(Error::param("batch", "must be at least 1"));
    }
    let mut rng = stream(key.seed, agent, key.iteration, key.phase);
    orc.batch_gradient(agent, u, batch, &mut rng, out)
}

fn sample_f_into(
    orc: &dyn SamplingOracle,
    u: &dyn StrategyProfile,
    n: usize,
    range: impl Fn(usize) -> std::ops::Range<usize>,
    batch: usize,
    key: StreamKey,
    out: &mut [f64],
) -> Result<()> {
    for i in 0..n {
        sample_agent(orc, i, u, batch, key, &mut out[range(i)])?;
    }
    Ok(())
}

/// `V̂(x)`: `V` with `F` replaced by the mini-batch estimate `F̂`.
pub fn sample_v_hat(
    op: &ExtendedOperator,
    orc: &dyn SamplingOracle,
    x: &PrimalDualState,
    batch: usize,
    key: StreamKey,
) -> Result<PrimalDualState> {
    let p = x.partition().clone();
    if *p != **op.problem().partition() {
        return Err(Error::dim("state", op.problem().partition().state_len(), x.len()));
    }
    let mut f = vec![0.0; p.total_dim()];
    sample_f_into(orc, &x.u_view(), p.num_agents(), |i| p.primal_range(i), batch, key, &mut f)?;
    Ok(op.apply_v_with(x, &f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockvec::AgentPartition;
    use crate::linalg::Matrix;
    use crate::problem::AffineGradient;
    use rand::Rng;

    #[test]
    fn batch_schedule_values() {
        let s = BatchSchedule::default();
        assert_eq!(s.batch_size(0), 1);
        assert_eq!(s.batch_size(9), 16);
        assert!(BatchSchedule::new(1.0, 1.0).is_err());
        assert!(BatchSchedule::new(0.0, 1.5).is_err());
        let sizes: Vec<usize> = (0..200).map(|k| s.batch_size(k)).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn batch_schedule_serde() {
        let s: BatchSchedule = serde_json::from_str(r#"{"S0": 2.0, "p": 1.5}"#).unwrap();
        assert_eq!(s.batch_size(3), 16);
        assert!(serde_json::from_str::<BatchSchedule>(r#"{"p": 0.9}"#).is_err());
    }

    #[test]
    fn streams_are_keyed() {
        let a: u64 = stream(7, 0, 3, Phase::Xi).random();
        let b: u64 = stream(7, 0, 3, Phase::Xi).random();
        let c: u64 = stream(7, 0, 3, Phase::Eta).random();
        let d: u64 = stream(7, 1, 3, Phase::Xi).random();
        let e: u64 = stream(7, 0, 4, Phase::Xi).random();
        let f: u64 = stream(8, 0, 3, Phase::Xi).random();
        assert_eq!(a, b);
        for other in [c, d, e, f] {
            assert_ne!(a, other);
        }
    }

    fn affine() -> (Arc<AgentPartition>, Arc<dyn PseudoGradient>) {
        let p = Arc::new(AgentPartition::new(vec![1, 2], 1).unwrap());
        let m = Matrix::from_rows(&[
            vec![1.0, 0.5, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![-0.5, 0.0, 1.0],
        ])
        .unwrap();
        let g = AffineGradient::new(p.clone(), m, vec![0.1, 0.2, 0.3]).unwrap();
        (p, Arc::new(g))
    }

    #[test]
    fn exact_oracle_matches_gradient() {
        let (p, g) = affine();
        let orc = ExactOracle::new(g.clone());
        let u = BlockVector::new(p.clone(), BlockKind::Primal, vec![1.0, -1.0, 2.0]).unwrap();
        let key = StreamKey {
            seed: 1,
            iteration: 5,
            phase: Phase::Eta,
        };
        let est = sample_f_hat(&orc, &u, 40, key).unwrap();
        let mut exact = vec![0.0; 3];
        for i in 0..2 {
            g.partial_gradient(i, &u, &mut exact[p.primal_range(i)]);
        }
        assert_eq!(est.as_slice(), exact.as_slice());
    }

    #[test]
    fn pooled_and_explicit_batches_agree_in_law() {
        let (p, g) = affine();
        let u = BlockVector::new(p.clone(), BlockKind::Primal, vec![0.0; 3]).unwrap();
        for mode in [BatchMode::Pooled, BatchMode::Explicit] {
            let orc = GaussianOracle::new(g.clone(), vec![1, 2], 2.0, mode).unwrap();
            let reps = 4000;
            let mut sq = 0.0;
            for r in 0..reps {
                let key = StreamKey {
                    seed: 11,
                    iteration: r,
                    phase: Phase::Xi,
                };
                let est = sample_f_hat(&orc, &u, 4, key).unwrap();
                sq += (est.as_slice()[0] - 0.1).powi(2);
            }
            let var = sq / reps as f64;
            assert!((var - 1.0).abs() < 0.1, "{mode:?}: {var}");
        }
    }

    #[derive(Debug)]
    struct Flaky;
    impl SamplingOracle for Flaky {
        fn noise_bound(&self) -> f64 {
            0.0
        }
        fn noise_dim(&self, _: usize) -> usize {
            1
        }
        fn draw_noise(&self, _: usize, rng: &mut StreamRng, xi: &mut [f64]) {
            xi[0] = rng.random();
        }
        fn sampled_gradient(&self, _: usize, _: &dyn StrategyProfile, xi: &[f64], out: &mut [f64]) {
            out[0] = if xi[0] < 0.2 { f64::NAN } else { xi[0] };
        }
    }

    #[test]
    fn nan_sample_names_agent_and_draw() {
        let p = Arc::new(AgentPartition::new(vec![1], 1).unwrap());
        let u = BlockVector::zeros(p, BlockKind::Primal);
        let key = StreamKey {
            seed: 0,
            iteration: 0,
            phase: Phase::Xi,
        };
        match sample_f_hat(&Flaky, &u, 1000, key) {
            Err(Error::Numeric { agent: 0, draw: Some(_), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
