use gnes::agentnet::{messages_per_round, run_distributed, ExchangePhase, NetOptions};
use gnes::blockvec::PrimalDualState;
use gnes::builtins::builtin;
use gnes::cournot::{generate, CournotConfig};
use gnes::graph::GraphSpec;
use gnes::instance::{AgentDoc, CostDoc, Instance, InstanceDoc, NoiseDoc};
use gnes::linalg::Matrix;
use gnes::problem::BoxPenalty;
use gnes::solver::{reference_solution, Solver, SolverParams, StopReason, Variant};
use gnes::stochastic::BatchMode;

fn noisy(name: &str, sd: f64) -> Instance {
    builtin(name)
        .unwrap()
        .with_noise(NoiseDoc::Gaussian {
            sd,
            batch_mode: BatchMode::Pooled,
        })
        .build()
        .unwrap()
}

fn both(inst: &Instance, params: SolverParams, seed: u64) -> (String, String) {
    let s = Solver::new(inst.operator().clone(), inst.oracle().clone(), params).unwrap();
    let x0 = PrimalDualState::zeros(inst.problem().partition().clone());
    let mono = s.run(&x0, seed, None).unwrap();
    let net = run_distributed(&s, &x0, seed, None, &NetOptions::default()).unwrap();
    assert_eq!(mono.state, net.run.state);
    assert_eq!(mono.stop.label(), net.run.stop.label());
    (mono.trace.hash(), net.run.trace.hash())
}

#[test]
fn matches_monolithic_on_builtins() {
    for (name, variant, seed) in [
        ("affine-monotone-small", Variant::Risfbf, 1),
        ("star-five", Variant::Sfbf, 2),
        ("skew-ring-4", Variant::Sfb, 3),
        ("l1-penalized", Variant::Risfbf, 4),
    ] {
        let params = SolverParams {
            max_iters: 150,
            ..SolverParams::for_variant(variant)
        };
        let (a, b) = both(&noisy(name, 0.3), params, seed);
        assert_eq!(a, b, "{name} {variant}");
    }
}

#[test]
fn matches_monolithic_with_diagnostics() {
    let exact = builtin("affine-monotone-small").unwrap().build().unwrap();
    let p = reference_solution(exact.operator(), 1e-12, 200_000).unwrap();
    let inst = noisy("affine-monotone-small", 0.1);
    let params = SolverParams {
        max_iters: 100,
        diagnostics: true,
        ..SolverParams::default()
    };
    let s = Solver::new(inst.operator().clone(), inst.oracle().clone(), params).unwrap();
    let x0 = PrimalDualState::zeros(inst.problem().partition().clone());
    let mono = s.run(&x0, 7, Some(&p)).unwrap();
    let net = run_distributed(&s, &x0, 7, Some(&p), &NetOptions::default()).unwrap();
    assert!(mono.trace.has_diagnostics());
    assert_eq!(mono.trace, net.run.trace);
}

#[test]
fn message_count_per_iteration() {
    let g = generate(&CournotConfig::default()).unwrap();
    let inst = g.instance;
    for (variant, rounds) in [(Variant::Risfbf, 2), (Variant::Sfb, 1)] {
        let params = SolverParams {
            max_iters: 4,
            ..SolverParams::for_variant(variant)
        };
        let s = Solver::new(inst.operator().clone(), inst.oracle().clone(), params).unwrap();
        let per_round = messages_per_round(&s);
        let n = inst.problem().num_agents();
        let expected: usize = (0..n)
            .map(|i| inst.graph().neighbors(i).len() + inst.problem().interaction_neighbors(i).len())
            .sum();
        assert_eq!(per_round, expected);
        let x0 = PrimalDualState::zeros(inst.problem().partition().clone());
        let options = NetOptions {
            record_messages: true,
            audit: true,
            ..NetOptions::default()
        };
        let out = run_distributed(&s, &x0, 0, None, &options).unwrap();
        assert_eq!(out.messages_per_iteration, vec![rounds * per_round; 4]);
        assert_eq!(out.log.len(), 4 * rounds * per_round);
        assert!(out.cross_reads > 0);
        for r in &out.log {
            assert_ne!(r.sender, r.receiver);
            match r.payload.as_str() {
                "strategy" => {
                    assert!(inst.problem().interaction_neighbors(r.receiver).contains(&r.sender));
                    assert_eq!(r.len, inst.problem().partition().dim(r.sender));
                }
                "dual" => {
                    assert!(inst.graph().weight(r.sender, r.receiver) > 0.0);
                    assert_eq!(r.len, 2 * 7);
                }
                other => panic!("payload {other}"),
            }
            if variant == Variant::Sfb {
                assert_eq!(r.phase, ExchangePhase::Inertial);
            }
        }
    }
}

#[test]
fn cournot_default_matches_monolithic() {
    let g = generate(&CournotConfig::default()).unwrap();
    let params = SolverParams {
        max_iters: 60,
        res_every: 20,
        ..SolverParams::default()
    };
    let (a, b) = both(&g.instance, params, 11);
    assert_eq!(a, b);
}

#[test]
fn single_agent_runs_without_messages() {
    let inst = InstanceDoc {
        name: None,
        constraint_dim: 1,
        agents: vec![AgentDoc {
            local: BoxPenalty::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            coupling: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            offset: vec![1.0],
        }],
        graph: GraphSpec::Complete,
        cost: CostDoc::Affine {
            matrix: Matrix::identity(2),
            offset: vec![-1.0, -1.0],
        },
        noise: NoiseDoc::None,
        lipschitz: None,
    }
    .build()
    .unwrap();
    let params = SolverParams {
        max_iters: 5000,
        ..SolverParams::default()
    };
    let s = Solver::new(inst.operator().clone(), inst.oracle().clone(), params).unwrap();
    let x0 = PrimalDualState::zeros(inst.problem().partition().clone());
    let out = run_distributed(&s, &x0, 0, None, &NetOptions::default()).unwrap();
    assert!(matches!(out.run.stop, StopReason::Converged { .. }));
    assert!(out.messages_per_iteration.iter().all(|&m| m == 0));
    assert!(out.run.trace.records.iter().all(|r| r.consensus_gap == 0.0));
    let u = out.run.state.u();
    assert!((u[0] - 0.5).abs() < 1e-5 && (u[1] - 0.5).abs() < 1e-5, "{u:?}");
}

#[test]
fn converged_duals_reach_consensus() {
    let inst = builtin("star-five").unwrap().build().unwrap();
    let params = SolverParams {
        max_iters: 20_000,
        ..SolverParams::default()
    };
    let s = Solver::new(inst.operator().clone(), inst.oracle().clone(), params).unwrap();
    let x0 = PrimalDualState::zeros(inst.problem().partition().clone());
    let out = run_distributed(&s, &x0, 0, None, &NetOptions::default()).unwrap();
    assert!(matches!(out.run.stop, StopReason::Converged { .. }));
    assert!(out.run.trace.last().unwrap().consensus_gap < 1e-4);
}
