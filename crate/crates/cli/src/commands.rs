//! The `run`, `compare`, `verify` and `gen cournot` commands.

use std::path::{Path, PathBuf};

use serde::Serialize;

use gnes::blockvec::PrimalDualState;
use gnes::cournot::{generate, CournotConfig};
use gnes::instance::Instance;
use gnes::operators::kkt_check;
use gnes::solver::{diagnostics_check, reference_solution, RunOutput, Solver, SolverParams, Variant};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{aggregate_csv, kept_iterations, push_compare_rows, write_atomic, COMPARE_HEADER};

pub const DEFAULT_OUT: &str = "gnes-out";

/// Command-line overrides shared by the commands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variants: Vec<Variant>,
    pub reps: Option<usize>,
    pub diagnostics: bool,
    pub allow_nonmonotone: bool,
}

impl Overrides {
    /// Folds the flags into `config`. A single `--variant` sets the solver
    /// variant; for `compare` every `--variant` becomes a family.
    pub fn apply(&self, config: &mut RunConfig, compare: bool) {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(o) = &self.out {
            config.out = Some(o.clone());
        }
        if let Some(r) = self.reps {
            config.reps = r;
        }
        if self.diagnostics {
            config.solver.diagnostics = true;
        }
        if compare && !self.variants.is_empty() {
            config.compare.variants = self.variants.clone();
            config.compare.alpha_sweep.clear();
        } else if let Some(&v) = self.variants.last() {
            config.solver.variant = v;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub seed: u64,
    pub iterations: usize,
    pub stop: String,
    pub error: Option<String>,
    pub final_r_psi: Option<f64>,
    pub final_res: Option<f64>,
    pub final_consensus_gap: Option<f64>,
    pub wall_time_secs: f64,
    pub trace_hash: String,
}

impl ReplicationSummary {
    fn new(replication: usize, seed: u64, out: &RunOutput) -> Self {
        let last = out.trace.last();
        ReplicationSummary {
            replication,
            seed,
            iterations: out.trace.iterations,
            stop: out.stop.label().to_string(),
            error: match &out.stop {
                gnes::solver::StopReason::Aborted(e) => Some(e.to_string()),
                _ => None,
            },
            final_r_psi: last.map(|r| r.r_psi),
            final_res: last.and_then(|r| r.res),
            final_consensus_gap: last.map(|r| r.consensus_gap),
            wall_time_secs: out.wall_time_secs,
            trace_hash: out.trace.hash(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilySummary {
    pub label: String,
    pub params: SolverParams,
    pub replications: Vec<ReplicationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub instance: String,
    pub families: Vec<FamilySummary>,
    pub config: RunConfig,
}

impl Summary {
    /// True when no replication aborted.
    pub fn clean(&self) -> bool {
        self.families.iter().flat_map(|f| &f.replications).all(|r| r.error.is_none())
    }
}

fn out_dir(config: &RunConfig) -> PathBuf {
    config.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn zeros(inst: &Instance) -> PrimalDualState {
    PrimalDualState::zeros(inst.problem().partition().clone())
}

fn reference(config: &RunConfig, inst: &Instance, needed: bool) -> Result<Option<PrimalDualState>, CliError> {
    if !needed {
        return Ok(None);
    }
    let p = reference_solution(inst.operator(), config.reference.tol, config.reference.max_iters)?;
    Ok(Some(p))
}

struct Family {
    label: String,
    solver: Solver,
}

/// Builds every solver up front so that configuration errors surface before any run.
fn prepare(
    config: &RunConfig,
    families: Vec<(String, SolverParams)>,
    allow_nonmonotone: bool,
) -> Result<(Instance, Vec<Family>, Option<PrimalDualState>), CliError> {
    config.validate()?;
    let inst = config.instance(allow_nonmonotone)?;
    let mut built = Vec::new();
    for (label, params) in families {
        let solver = Solver::new(inst.operator().clone(), inst.oracle().clone(), params)?;
        built.push(Family { label, solver });
    }
    let needed = built.iter().any(|f| f.solver.params().diagnostics);
    let p = reference(config, &inst, needed)?;
    Ok((inst, built, p))
}

fn run_family(
    config: &RunConfig,
    inst: &Instance,
    family: &Family,
    p: Option<&PrimalDualState>,
) -> Result<Vec<(RunOutput, ReplicationSummary)>, CliError> {
    let x0 = zeros(inst);
    (0..config.reps)
        .map(|r| {
            let seed = config.seed.wrapping_add(r as u64);
            let out = family.solver.run(&x0, seed, p)?;
            if let gnes::solver::StopReason::Aborted(e) = &out.stop {
                log::warn!("{} replication {r} aborted: {e}", family.label);
            }
            let summary = ReplicationSummary::new(r, seed, &out);
            log::info!(
                "{} replication {r}: {} after {} iterations, r_psi {:?}",
                family.label,
                summary.stop,
                summary.iterations,
                summary.final_r_psi
            );
            Ok((out, summary))
        })
        .collect()
}

/// `gnes run`: one variant, `reps` replications, per-replication traces,
/// an aggregate envelope and a summary.
pub fn cmd_run(config: &RunConfig, allow_nonmonotone: bool) -> Result<Summary, CliError> {
    let params = config.solver.clone();
    let label = params.variant.name().to_string();
    let (inst, families, p) = prepare(config, vec![(label, params.clone())], allow_nonmonotone)?;
    let dir = out_dir(config);
    let family = &families[0];
    let runs = run_family(config, &inst, family, p.as_ref())?;
    for (r, (out, _)) in runs.iter().enumerate() {
        write_atomic(&dir.join(format!("trace-rep{r}.csv")), out.trace.to_csv().as_bytes())?;
    }
    let traces: Vec<_> = runs.iter().map(|(o, _)| &o.trace).collect();
    let ks = kept_iterations(params.max_iters, params.decimation);
    write_atomic(&dir.join("aggregate.csv"), aggregate_csv(&traces, &ks).as_bytes())?;
    let summary = Summary {
        command: "run".into(),
        instance: inst.name().to_string(),
        families: vec![FamilySummary {
            label: family.label.clone(),
            params,
            replications: runs.into_iter().map(|(_, s)| s).collect(),
        }],
        config: config.clone(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// `gnes compare`: every family on the same instance and replication seeds.
pub fn cmd_compare(config: &RunConfig, allow_nonmonotone: bool) -> Result<Summary, CliError> {
    let families = config.families()?;
    let (inst, families, p) = prepare(config, families, allow_nonmonotone)?;
    let dir = out_dir(config);
    let mut table = String::from(COMPARE_HEADER);
    let mut summaries = Vec::new();
    for (i, family) in families.iter().enumerate() {
        let runs = run_family(config, &inst, family, p.as_ref())?;
        for (r, (out, _)) in runs.iter().enumerate() {
            push_compare_rows(&mut table, &family.label, r, &out.trace);
        }
        let params = family.solver.params();
        let traces: Vec<_> = runs.iter().map(|(o, _)| &o.trace).collect();
        let ks = kept_iterations(params.max_iters, params.decimation);
        write_atomic(
            &dir.join(format!("aggregate-{i}-{}.csv", family.label)),
            aggregate_csv(&traces, &ks).as_bytes(),
        )?;
        summaries.push(FamilySummary {
            label: family.label.clone(),
            params: params.clone(),
            replications: runs.into_iter().map(|(_, s)| s).collect(),
        });
    }
    write_atomic(&dir.join("compare.csv"), table.as_bytes())?;
    let summary = Summary {
        command: "compare".into(),
        instance: inst.name().to_string(),
        families: summaries,
        config: config.clone(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyRow {
    pub check: String,
    pub evaluated: usize,
    pub violations: usize,
    pub worst_slack: f64,
    pub worst_k: Option<usize>,
    pub first_violation: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub replication: ReplicationSummary,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.violations == 0)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24} {:>9} {:>10} {:>13} {:>8}  {}\n",
            "check", "evaluated", "violations", "worst_slack", "worst_k", "status"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<24} {:>9} {:>10} {:>13.4e} {:>8}  {}\n",
                r.check,
                r.evaluated,
                r.violations,
                r.worst_slack,
                r.worst_k.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                if r.violations == 0 { "PASS" } else { "FAIL" }
            ));
        }
        s
    }

    /// The first violation, as an error.
    pub fn violation(&self) -> Option<CliError> {
        self.rows.iter().find(|r| r.violations > 0).map(|r| CliError::Violation {
            check: r.check.clone(),
            k: r.first_violation.or(r.worst_k).unwrap_or(0),
            slack: r.worst_slack,
        })
    }
}

/// `gnes verify`: one diagnostic run against a high-accuracy reference point.
pub fn cmd_verify(config: &RunConfig, allow_nonmonotone: bool) -> Result<VerifyReport, CliError> {
    let params = SolverParams {
        diagnostics: true,
        ..config.solver.clone()
    };
    let label = params.variant.name().to_string();
    let (inst, families, p) = prepare(config, vec![(label, params)], allow_nonmonotone)?;
    let p = p.expect("diagnostics request a reference point");
    let out = families[0].solver.run(&zeros(&inst), config.seed, Some(&p))?;
    let report = diagnostics_check(&out.trace);

    let mut rows: Vec<VerifyRow> = report
        .checks
        .iter()
        .map(|c| VerifyRow {
            check: c.name.clone(),
            evaluated: c.evaluated,
            violations: c.violations,
            worst_slack: c.worst_slack,
            worst_k: c.worst_k,
            first_violation: c.first_violation,
        })
        .collect();

    // Reference point: KKT conditions with the averaged multiplier.
    let m = p.partition().constraint_dim();
    let n = p.partition().num_agents();
    let mut lambda = vec![0.0; m];
    for i in 0..n {
        for (l, v) in lambda.iter_mut().zip(p.lambda_block(i)) {
            *l += v / n as f64;
        }
    }
    let kkt = kkt_check(inst.problem(), &p.u_vector(), &lambda, 1e-8)?;
    let gap = kkt.stationarity_gap.max(kkt.feasibility_violation).max(kkt.complementarity_gap);
    rows.push(VerifyRow {
        check: "reference-kkt".into(),
        evaluated: 1,
        violations: (!kkt.passed()) as usize,
        worst_slack: 1e-8 - gap,
        worst_k: None,
        first_violation: None,
    });

    let verify = VerifyReport {
        rows,
        replication: ReplicationSummary::new(0, config.seed, &out),
    };
    if let Some(dir) = &config.out {
        write_atomic(&dir.join("verify-trace.csv"), out.trace.to_csv().as_bytes())?;
        write_json(&dir.join("verify.json"), &verify)?;
    }
    Ok(verify)
}

/// `gnes gen cournot`: the instance document as pretty JSON.
pub fn cmd_gen_cournot(config: &CournotConfig) -> Result<String, CliError> {
    let g = generate(config)?;
    log::info!(
        "monotonicity probe: min ratio {:.3e} over {} pairs",
        g.monotonicity.min_ratio,
        g.monotonicity.trials
    );
    let mut text = g.doc.to_json();
    text.push('\n');
    Ok(text)
}
