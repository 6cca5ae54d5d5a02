//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gnes::agentnet::{run_distributed, NetOptions};
use gnes::blockvec::{psi_dist_sq, psi_inner, psi_norm, relaxed_combine, BlockKind, BlockVector, Preconditioner, PrimalDualState};
use gnes::builtins::{builtin, BUILTIN_NAMES};
use gnes::cournot::{generate, CournotConfig};
use gnes::graph::GraphSpec;
use gnes::instance::{Instance, NoiseDoc};
use gnes::operators::{kkt_check, residual_res};
use gnes::solver::{diagnostics_check, reference_solution, RhoRule, Solver, SolverParams, Variant};
use gnes::stochastic::{sample_f_hat, BatchMode, Phase, StreamKey};

const REFERENCE_TOL: f64 = 1e-12;
const KKT_TOL: f64 = 1e-8;
const RES_AT_SOLUTION: f64 = 1e-8;
const CHARACTERIZATION_SECONDS: f64 = 5.0;

const CONVERGENCE_NOISE_SD: f64 = 0.1;
const CONVERGENCE_RES: f64 = 1e-4;
const CONVERGENCE_BUDGET: usize = 20_000;
const CONVERGENCE_SEEDS: u64 = 10;
const CONVERGENCE_SECONDS: f64 = 60.0;

const EQUIVALENCE_PAIRS: usize = 10;

const INEQUALITY_ITERS: usize = 1000;
const INEQUALITY_RHO_SCALE: f64 = 2.0;

const IDENTITY_DRAWS: usize = 1000;
const AB_TOL: f64 = 1e-12;
const FIRM_TOL: f64 = 1e-10;

const ESTIMATOR_DRAWS: usize = 100_000;
const ESTIMATOR_STANDARD_ERRORS: f64 = 4.0;
const ESTIMATOR_REPS: usize = 10_000;
const ESTIMATOR_VARIANCE_FACTOR: f64 = 1.2;
const ESTIMATOR_BATCHES: [usize; 3] = [1, 4, 16];

const SPECTRAL_RANDOM_GRAPHS: usize = 20;
const SPECTRAL_MAX_AGENTS: usize = 12;

const ORDERING_INSTANCES: u64 = 10;
const ORDERING_REPS: u64 = 10;
const ORDERING_BUDGET: usize = 5000;
const ORDERING_REQUIRED: usize = 8;
const ORDERING_SECONDS: f64 = 600.0;

type Outcome = (bool, String);

fn noisy(name: &str, sd: f64, mode: BatchMode) -> Instance {
    builtin(name)
        .unwrap()
        .with_noise(NoiseDoc::Gaussian { sd, batch_mode: mode })
        .build()
        .unwrap()
}

fn zeros(inst: &Instance) -> PrimalDualState {
    PrimalDualState::zeros(inst.problem().partition().clone())
}

fn solver(inst: &Instance, params: SolverParams) -> Solver {
    Solver::new(inst.operator().clone(), inst.oracle().clone(), params).unwrap()
}

fn mean_lambda(x: &PrimalDualState) -> Vec<f64> {
    let p = x.partition();
    let m = p.constraint_dim();
    let mut out = vec![0.0; m];
    for i in 0..p.num_agents() {
        for (o, l) in out.iter_mut().zip(x.lambda_block(i)) {
            *o += l / p.num_agents() as f64;
        }
    }
    out
}

fn solution_characterization() -> Outcome {
    let start = Instant::now();
    let inst = builtin("affine-monotone-small").unwrap().build().unwrap();
    let p = match reference_solution(inst.operator(), REFERENCE_TOL, 1_000_000) {
        Ok(p) => p,
        Err(e) => return (false, format!("reference run failed: {e}")),
    };
    let u = p.u_vector();
    let kkt = kkt_check(inst.problem(), &u, &mean_lambda(&p), KKT_TOL).unwrap();
    let res = residual_res(inst.problem(), &u).unwrap();
    let secs = start.elapsed().as_secs_f64();
    (
        kkt.passed() && res < RES_AT_SOLUTION && secs < CHARACTERIZATION_SECONDS,
        format!(
            "stationarity {:.1e}, feasibility {:.1e}, complementarity {:.1e}, res {res:.1e}, {secs:.2}s",
            kkt.stationarity_gap, kkt.feasibility_violation, kkt.complementarity_gap
        ),
    )
}

fn stochastic_convergence() -> Outcome {
    let start = Instant::now();
    let inst = noisy("affine-monotone-small", CONVERGENCE_NOISE_SD, BatchMode::Pooled);
    let params = SolverParams {
        max_iters: CONVERGENCE_BUDGET,
        tol: 0.0,
        res_every: 1,
        ..SolverParams::default()
    };
    let s = solver(&inst, params);
    let mut hits = 0;
    let mut latest = 0;
    let mut worst_final: f64 = 0.0;
    for seed in 0..CONVERGENCE_SEEDS {
        let out = s.run(&zeros(&inst), seed, None).unwrap();
        let first = out.trace.records.iter().find(|r| r.res.is_some_and(|v| v < CONVERGENCE_RES));
        if let Some(r) = first {
            hits += 1;
            latest = latest.max(r.k + 1);
        }
        worst_final = worst_final.max(out.trace.last().and_then(|r| r.res).unwrap_or(f64::INFINITY));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        hits == CONVERGENCE_SEEDS && secs < CONVERGENCE_SECONDS,
        format!(
            "{hits}/{CONVERGENCE_SEEDS} seeds below {CONVERGENCE_RES:.0e}, latest first hit at iteration {latest}, worst final res {worst_final:.2e}, {secs:.1}s"
        ),
    )
}

fn executor_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cournot = generate(&CournotConfig::default()).unwrap().instance;
    let mut matched = 0;
    for pair in 0..EQUIVALENCE_PAIRS {
        let variant = Variant::ALL[rng.random_range(0..3)];
        let seed: u64 = rng.random();
        let inst = if pair == 0 {
            cournot.clone()
        } else {
            let name = BUILTIN_NAMES[rng.random_range(0..BUILTIN_NAMES.len())];
            let mode = if rng.random::<bool>() { BatchMode::Pooled } else { BatchMode::Explicit };
            noisy(name, rng.random_range(0.01..0.5), mode)
        };
        let params = SolverParams {
            max_iters: rng.random_range(20..200),
            res_every: 10,
            ..SolverParams::for_variant(variant)
        };
        let s = solver(&inst, params);
        let x0 = zeros(&inst);
        let mono = s.run(&x0, seed, None).unwrap();
        let net = run_distributed(&s, &x0, seed, None, &NetOptions::default()).unwrap();
        matched += (mono.trace == net.run.trace && mono.state == net.run.state) as usize;
    }
    (matched == EQUIVALENCE_PAIRS, format!("{matched}/{EQUIVALENCE_PAIRS} pairs bitwise identical"))
}

fn inequality_suite() -> Outcome {
    let exact = builtin("affine-monotone-small").unwrap().build().unwrap();
    let p = reference_solution(exact.operator(), REFERENCE_TOL, 1_000_000).unwrap();
    let params = SolverParams {
        max_iters: INEQUALITY_ITERS,
        tol: 0.0,
        diagnostics: true,
        res_every: 0,
        ..SolverParams::default()
    };
    let mut x0 = zeros(&exact);
    x0.u_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 4) as f64);
    let report = |inst: &Instance, params: SolverParams| {
        let out = solver(inst, params).run(&x0, 3, Some(&p)).unwrap();
        diagnostics_check(&out.trace)
    };
    let noisy_inst = noisy("affine-monotone-small", CONVERGENCE_NOISE_SD, BatchMode::Pooled);
    let clean = report(&exact, params.clone());
    let rough = report(&noisy_inst, params.clone());
    let control = report(
        &noisy_inst,
        SolverParams {
            rho_scale: INEQUALITY_RHO_SCALE,
            ..params
        },
    );
    let count = |r: &gnes::solver::DiagnosticsReport| {
        r.checks
            .iter()
            .filter(|c| c.violations > 0)
            .map(|c| format!("{} {}", c.name, c.violations))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let key_checks_clean = |r: &gnes::solver::DiagnosticsReport| {
        r.passed() && ["recursion", "residual-bound"].iter().all(|n| r.check(n).is_some_and(|c| c.evaluated == INEQUALITY_ITERS))
    };
    (
        key_checks_clean(&clean) && key_checks_clean(&rough) && !control.passed(),
        format!(
            "violations: noise-free [{}], noisy [{}], doubled relaxation [{}]",
            count(&clean),
            count(&rough),
            count(&control)
        ),
    )
}

fn random_state(inst: &Instance, rng: &mut ChaCha8Rng) -> PrimalDualState {
    let p = inst.problem().partition().clone();
    let data = (0..p.state_len()).map(|_| rng.random_range(-5.0..5.0)).collect();
    PrimalDualState::from_flat(p, data).unwrap()
}

fn random_psi(inst: &Instance, rng: &mut ChaCha8Rng) -> Preconditioner {
    let p = inst.problem().partition().clone();
    let n = p.num_agents();
    let mut pick = || (0..n).map(|_| rng.random_range(0.01..1.0)).collect::<Vec<_>>();
    let (g, s, t) = (pick(), pick(), pick());
    Preconditioner::new(p, g, s, t).unwrap()
}

fn diff(a: &PrimalDualState, b: &PrimalDualState) -> PrimalDualState {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
    PrimalDualState::from_flat(a.partition().clone(), data).unwrap()
}

fn euclid(a: &PrimalDualState) -> f64 {
    a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn identity_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let instances: Vec<Instance> = BUILTIN_NAMES.iter().map(|n| builtin(n).unwrap().build().unwrap()).collect();
    let (mut ab, mut firm, mut lip) = (0.0_f64, 0.0_f64, 0usize);
    for t in 0..IDENTITY_DRAWS {
        let inst = &instances[t % instances.len()];
        let (x, y, psi) = (random_state(inst, &mut rng), random_state(inst, &mut rng), random_psi(inst, &mut rng));
        let rho = rng.random_range(0.0..1.0);

        let c = relaxed_combine(&x, &y, rho).unwrap();
        let lhs = psi_norm(&c, &psi).unwrap().powi(2);
        let rhs = (1.0 - rho) * psi_norm(&x, &psi).unwrap().powi(2) + rho * psi_norm(&y, &psi).unwrap().powi(2)
            - rho * (1.0 - rho) * psi_dist_sq(&x, &y, &psi).unwrap();
        ab = ab.max((lhs - rhs).abs() / (1.0 + lhs.abs()));

        let op = inst.operator();
        let d = diff(&op.resolvent(&x, &psi).unwrap(), &op.resolvent(&y, &psi).unwrap());
        let e = diff(&x, &y);
        firm = firm.max(psi_norm(&d, &psi).unwrap().powi(2) - psi_inner(&d, &e, &psi).unwrap());

        let dv = diff(&op.apply_v(&x).unwrap(), &op.apply_v(&y).unwrap());
        lip += (euclid(&dv) > op.lipschitz_v() * euclid(&e) * (1.0 + 1e-12)) as usize;
    }
    (
        ab <= AB_TOL && firm <= FIRM_TOL && lip == 0,
        format!("relaxation identity error {ab:.1e}, firm excess {firm:.1e}, Lipschitz violations {lip}"),
    )
}

fn estimator_statistics() -> Outcome {
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for mode in [BatchMode::Pooled, BatchMode::Explicit] {
        let inst = noisy("affine-monotone-small", CONVERGENCE_NOISE_SD, mode);
        let problem = inst.problem();
        let u = BlockVector::new(
            problem.partition().clone(),
            BlockKind::Primal,
            (0..problem.partition().total_dim()).map(|i| 0.5 * i as f64).collect(),
        )
        .unwrap();
        let exact = problem.apply_f(&u).unwrap();
        let oracle = inst.oracle();
        let s2 = oracle.noise_bound().powi(2);
        let n = exact.len();

        let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
        for t in 0..ESTIMATOR_DRAWS {
            let key = StreamKey {
                seed: 1,
                iteration: t,
                phase: Phase::Xi,
            };
            let f = sample_f_hat(&**oracle, &u, 1, key).unwrap();
            for (c, v) in f.as_slice().iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        for c in 0..n {
            let mean = sum[c] / ESTIMATOR_DRAWS as f64;
            let var = sq[c] / ESTIMATOR_DRAWS as f64 - mean * mean;
            let z = (mean - exact.as_slice()[c]).abs() / (var / ESTIMATOR_DRAWS as f64).sqrt();
            worst_z = worst_z.max(z);
            ok &= z <= ESTIMATOR_STANDARD_ERRORS;
        }

        for batch in ESTIMATOR_BATCHES {
            let mut err = 0.0;
            for t in 0..ESTIMATOR_REPS {
                let key = StreamKey {
                    seed: 2,
                    iteration: t,
                    phase: Phase::Eta,
                };
                let f = sample_f_hat(&**oracle, &u, batch, key).unwrap();
                err += f.as_slice().iter().zip(exact.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            let ratio = err / ESTIMATOR_REPS as f64 / (s2 / batch as f64);
            worst_ratio = worst_ratio.max(ratio);
            ok &= ratio <= ESTIMATOR_VARIANCE_FACTOR;
        }
    }
    (
        ok,
        format!("worst bias {worst_z:.2} SE, worst variance ratio to s²/S {worst_ratio:.3}"),
    )
}

fn spectral_bounds() -> Outcome {
    let within = |spec: &GraphSpec, n: usize| {
        let g = spec.build(n).unwrap();
        g.max_degree() <= g.kappa() + 1e-9 && g.kappa() <= 2.0 * g.max_degree() + 1e-9
    };
    let mut checked = 0;
    let mut ok = true;
    for n in 2..=SPECTRAL_MAX_AGENTS {
        for spec in [GraphSpec::Ring, GraphSpec::Star, GraphSpec::Complete] {
            ok &= within(&spec, n);
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random = 0;
    while random < SPECTRAL_RANDOM_GRAPHS {
        let n = rng.random_range(2..=SPECTRAL_MAX_AGENTS);
        let spec = GraphSpec::ErdosRenyi {
            p: rng.random_range(0.2..0.8),
            seed: rng.random(),
        };
        if spec.build(n).is_ok() {
            ok &= within(&spec, n);
            random += 1;
            checked += 1;
        }
    }
    (ok, format!("{checked} graphs checked, {random} of them random"))
}

fn cournot_ordering() -> Outcome {
    let start = Instant::now();
    let (mut first, mut second, mut both) = (0, 0, 0);
    let mut rows = Vec::new();
    for seed in 0..ORDERING_INSTANCES {
        let inst = generate(&CournotConfig {
            seed,
            ..CournotConfig::default()
        })
        .unwrap()
        .instance;
        let mean: Vec<f64> = Variant::ALL
            .iter()
            .map(|&v| {
                let params = SolverParams {
                    max_iters: ORDERING_BUDGET,
                    tol: 0.0,
                    res_every: 0,
                    ..SolverParams::for_variant(v)
                };
                let s = solver(&inst, params);
                (0..ORDERING_REPS)
                    .map(|r| s.run(&zeros(&inst), r, None).unwrap().trace.last().unwrap().res.unwrap())
                    .sum::<f64>()
                    / ORDERING_REPS as f64
            })
            .collect();
        let (a, b) = (mean[0] <= mean[1], mean[1] <= mean[2]);
        first += a as usize;
        second += b as usize;
        both += (a && b) as usize;
        rows.push(format!("{:.3}/{:.3}/{:.3}", mean[0], mean[1], mean[2]));
    }
    let secs = start.elapsed().as_secs_f64();
    println!("    final mean res per seed (RISFBF/SFBF/SFB): {}", rows.join(" "));
    (
        both >= ORDERING_REQUIRED && secs < ORDERING_SECONDS,
        format!(
            "RISFBF<=SFBF on {first}/{ORDERING_INSTANCES}, SFBF<=SFB on {second}/{ORDERING_INSTANCES}, both on {both}/{ORDERING_INSTANCES} (need {ORDERING_REQUIRED}), {secs:.0}s"
        ),
    )
}

fn degeneracy() -> Outcome {
    let cournot = generate(&CournotConfig::default()).unwrap().instance;
    let mut cases: Vec<(String, Instance)> = BUILTIN_NAMES
        .iter()
        .map(|n| (n.to_string(), noisy(n, 0.2, BatchMode::Pooled)))
        .collect();
    cases.push(("cournot".into(), cournot));
    let mut matched = 0;
    for (seed, (_, inst)) in cases.iter().enumerate() {
        let base = SolverParams {
            max_iters: 300,
            tol: 0.0,
            ..SolverParams::default()
        };
        let degenerate = SolverParams {
            alpha_bar: 0.0,
            rho: RhoRule::Fixed(1.0),
            ..base.clone()
        };
        let plain = SolverParams {
            variant: Variant::Sfbf,
            ..base
        };
        let a = solver(inst, degenerate).run(&zeros(inst), seed as u64, None).unwrap();
        let b = solver(inst, plain).run(&zeros(inst), seed as u64, None).unwrap();
        matched += (a.trace.hash() == b.trace.hash() && a.state == b.state) as usize;
    }
    (matched == cases.len(), format!("{matched}/{} instances bitwise identical", cases.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("solution characterization", solution_characterization),
        ("stochastic convergence", stochastic_convergence),
        ("executor equivalence", executor_equivalence),
        ("inequality suite", inequality_suite),
        ("identity suite", identity_suite),
        ("estimator statistics", estimator_statistics),
        ("spectral bounds", spectral_bounds),
        ("Cournot ordering", cournot_ordering),
        ("degeneracy", degeneracy),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (ok, detail) = check();
        failed += (!ok) as usize;
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
