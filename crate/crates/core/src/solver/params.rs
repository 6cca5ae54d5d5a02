use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::BatchSchedule;

/// Which iteration to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Relaxed-inertial stochastic forward-backward-forward.
    #[default]
    Risfbf,
    /// Plain stochastic forward-backward-forward (no inertia, no relaxation).
    Sfbf,
    /// Preconditioned stochastic forward-backward.
    Sfb,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Risfbf, Variant::Sfbf, Variant::Sfb];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Risfbf => "risfbf",
            Variant::Sfbf => "sfbf",
            Variant::Sfb => "sfb",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "risfbf" => Ok(Variant::Risfbf),
            "sfbf" => Ok(Variant::Sfbf),
            "sfb" => Ok(Variant::Sfb),
            _ => Err(Error::param("variant", format!("unknown variant {s:?}"))),
        }
    }
}

/// Step sizes `(γ_i, σ_i, τ_i)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "StepDoc", into = "StepDoc")]
pub enum StepSizes {
    /// Every step equal to `min(1, (1 − ν)/(2ℓ_V))`.
    #[default]
    Auto,
    /// Every step equal to the given value.
    Uniform(f64),
    PerAgent {
        gamma: Vec<f64>,
        sigma: Vec<f64>,
        tau: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepDoc {
    Name(String),
    Uniform(f64),
    PerAgent {
        gamma: Vec<f64>,
        sigma: Vec<f64>,
        tau: Vec<f64>,
    },
}

impl TryFrom<StepDoc> for StepSizes {
    type Error = Error;
    fn try_from(d: StepDoc) -> Result<Self> {
        match d {
            StepDoc::Name(s) if s == "auto" => Ok(StepSizes::Auto),
            StepDoc::Name(s) => Err(Error::param("steps", format!("expected \"auto\", a number or per-agent lists, got {s:?}"))),
            StepDoc::Uniform(v) => Ok(StepSizes::Uniform(v)),
            StepDoc::PerAgent { gamma, sigma, tau } => Ok(StepSizes::PerAgent { gamma, sigma, tau }),
        }
    }
}

impl From<StepSizes> for StepDoc {
    fn from(s: StepSizes) -> Self {
        match s {
            StepSizes::Auto => StepDoc::Name("auto".into()),
            StepSizes::Uniform(v) => StepDoc::Uniform(v),
            StepSizes::PerAgent { gamma, sigma, tau } => StepDoc::PerAgent { gamma, sigma, tau },
        }
    }
}

/// Relaxation rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RhoDoc", into = "RhoDoc")]
pub enum RhoRule {
    /// `ρ_k = (3−ν)(1−ᾱ)² / (2(2α_k²−α_k+1)(1+ℓ_{V,Ψ}))`, clamped to 1.
    #[default]
    Coupled,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RhoDoc {
    Name(String),
    Fixed(f64),
}

impl TryFrom<RhoDoc> for RhoRule {
    type Error = Error;
    fn try_from(d: RhoDoc) -> Result<Self> {
        match d {
            RhoDoc::Name(s) if s == "coupled" => Ok(RhoRule::Coupled),
            RhoDoc::Name(s) => Err(Error::param("rho", format!("expected \"coupled\" or a number, got {s:?}"))),
            RhoDoc::Fixed(v) => Ok(RhoRule::Fixed(v)),
        }
    }
}

impl From<RhoRule> for RhoDoc {
    fn from(r: RhoRule) -> Self {
        match r {
            RhoRule::Coupled => RhoDoc::Name("coupled".into()),
            RhoRule::Fixed(v) => RhoDoc::Fixed(v),
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub variant: Variant,
    /// `ᾱ`, the supremum of the inertial sequence.
    pub alpha_bar: f64,
    /// `ν ∈ (0, 1)`.
    pub nu: f64,
    pub steps: StepSizes,
    pub rho: RhoRule,
    /// Multiplies every relaxation parameter after the rule is applied.
    /// Values other than 1 void the convergence guarantee; meant for
    /// sensitivity experiments on the diagnostics.
    pub rho_scale: f64,
    pub max_iters: usize,
    /// Stop once `r_Ψ(X_k) < tol`; 0 disables the test.
    pub tol: f64,
    pub batch: BatchSchedule,
    /// Record the stochastic-error and Lyapunov quantities (needs a reference point).
    pub diagnostics: bool,
    /// Keep every `decimation`-th trace record (the last one is always kept).
    pub decimation: usize,
    /// Evaluate `res` on every `res_every`-th kept record; 0 evaluates it on the last one only.
    pub res_every: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            variant: Variant::Risfbf,
            alpha_bar: 0.1,
            nu: 0.01,
            steps: StepSizes::Auto,
            rho: RhoRule::Coupled,
            rho_scale: 1.0,
            max_iters: 1000,
            tol: 1e-6,
            batch: BatchSchedule::default(),
            diagnostics: false,
            decimation: 1,
            res_every: 1,
        }
    }
}

impl SolverParams {
    pub fn for_variant(variant: Variant) -> Self {
        SolverParams {
            variant,
            ..SolverParams::default()
        }
    }

    /// Checks the scalar settings that do not depend on the problem.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_bar >= 0.0 && self.alpha_bar < 1.0) {
            return Err(Error::param(
                "alpha_bar",
                format!("must satisfy 0 <= alpha_bar < 1, got {}", self.alpha_bar),
            ));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::param("nu", format!("must lie in (0, 1), got {}", self.nu)));
        }
        if let RhoRule::Fixed(r) = self.rho {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::param("rho", format!("must lie in (0, 1], got {r}")));
            }
        }
        if !(self.rho_scale.is_finite() && self.rho_scale > 0.0) {
            return Err(Error::param("rho_scale", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param("tol", "must be >= 0"));
        }
        if self.decimation == 0 {
            return Err(Error::param("decimation", "must be at least 1"));
        }
        match &self.steps {
            StepSizes::Auto => {}
            StepSizes::Uniform(v) => {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(Error::param("steps", "must be positive"));
                }
            }
            StepSizes::PerAgent { gamma, sigma, tau } => {
                if gamma.iter().chain(sigma).chain(tau).any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::param("steps", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// `α_k = ᾱ(1 − 1/(k+1))` for RISFBF, 0 otherwise.
pub fn alpha_schedule(params: &SolverParams, k: usize) -> f64 {
    match params.variant {
        Variant::Risfbf => params.alpha_bar * (1.0 - 1.0 / (k as f64 + 1.0)),
        Variant::Sfbf | Variant::Sfb => 0.0,
    }
}

/// The relaxation parameter for inertia `alpha_k`, before clamping and scaling.
pub fn coupled_rho(nu: f64, alpha_bar: f64, alpha_k: f64, ell_v_psi: f64) -> f64 {
    (3.0 - nu) * (1.0 - alpha_bar).powi(2)
        / (2.0 * (2.0 * alpha_k * alpha_k - alpha_k + 1.0) * (1.0 + ell_v_psi))
}

/// `ρ_k` under the configured rule. The coupled rule is clamped to 1;
/// `rho_scale` is applied last and unchecked.
pub fn rho_schedule(params: &SolverParams, alpha_k: f64, ell_v_psi: f64) -> f64 {
    let base = match (params.variant, params.rho) {
        (Variant::Sfbf | Variant::Sfb, _) => 1.0,
        (Variant::Risfbf, RhoRule::Fixed(r)) => r,
        (Variant::Risfbf, RhoRule::Coupled) => {
            coupled_rho(params.nu, params.alpha_bar, alpha_k, ell_v_psi).min(1.0)
        }
    };
    base * params.rho_scale
}

/// `2α² + (1−α)(1 − (3−ν)(1−α)/(2ρ(1+ℓ_{V,Ψ})))`; nonpositive under the coupled rule.
pub fn coupling_term(nu: f64, alpha: f64, rho: f64, ell_v_psi: f64) -> f64 {
    2.0 * alpha * alpha
        + (1.0 - alpha) * (1.0 - (3.0 - nu) * (1.0 - alpha) / (2.0 * rho * (1.0 + ell_v_psi)))
}
