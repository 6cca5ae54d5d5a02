use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gnes::blockvec::{BlockKind, BlockVector, StrategyProfile};
use gnes::cournot::{
    generate, monotonicity_probe, sampled_lipschitz, CournotConfig, CournotCost, CournotGradient, CournotOracle,
    SlopeLaw, DEFAULT_PARTICIPATION,
};
use gnes::instance::{CostDoc, InstanceDoc, NoiseDoc};
use gnes::problem::PseudoGradient;
use gnes::stochastic::{stream, BatchMode, Phase, SamplingOracle};

/// Firm `i`'s cost `Σ_j c_ij u_ij − P_j(S) u_ij` with the given slopes, written
/// independently of the library.
fn firm_cost(cost: &CournotCost, u: &[Vec<f64>], i: usize, slopes: &[f64]) -> f64 {
    let m = cost.intercept.len();
    let mut s = vec![0.0; m];
    for (f, mk) in cost.participation.iter().enumerate() {
        for (l, &j) in mk.iter().enumerate() {
            s[j] += u[f][l];
        }
    }
    cost.participation[i]
        .iter()
        .enumerate()
        .map(|(l, &j)| {
            let price = cost.intercept[j] + cost.demand_sign * slopes[j] * s[j].powf(cost.exponent);
            cost.costs[i][l] * u[i][l] - price * u[i][l]
        })
        .sum()
}

fn blocks(v: &BlockVector) -> Vec<Vec<f64>> {
    (0..v.partition().num_agents()).map(|i| v.block(i).to_vec()).collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let g = generate(&CournotConfig::default()).unwrap();
    let CostDoc::Cournot(cost) = &g.doc.cost else { panic!() };
    let grad = CournotGradient::new(cost.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let slopes: Vec<f64> = (0..7).map(|_| 0.02 + 0.005 * (rng.random::<f64>() - 0.5)).collect();
    let problem = g.instance.problem();
    let (lo, hi) = problem.domain_box();
    for _ in 0..20 {
        let data: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| l + (h - l) * (0.05 + 0.9 * rng.random::<f64>())).collect();
        let u = BlockVector::new(problem.partition().clone(), BlockKind::Primal, data).unwrap();
        for i in 0..10 {
            let own: Vec<f64> = cost.participation[i].iter().map(|&j| slopes[j]).collect();
            let mut out = vec![0.0; own.len()];
            grad.gradient_with_slopes(i, &u, &own, &mut out);
            for l in 0..own.len() {
                let h = 1e-4;
                let mut plus = blocks(&u);
                let mut minus = blocks(&u);
                plus[i][l] += h;
                minus[i][l] -= h;
                let fd = (firm_cost(cost, &plus, i, &slopes) - firm_cost(cost, &minus, i, &slopes)) / (2.0 * h);
                let rel = (fd - out[l]).abs() / out[l].abs().max(1.0);
                assert!(rel < 1e-6, "firm {i} market {l}: fd {fd} vs {}", out[l]);
            }
        }
    }
}

#[test]
fn sampled_gradient_is_unbiased() {
    let g = generate(&CournotConfig::default()).unwrap();
    let CostDoc::Cournot(cost) = &g.doc.cost else { panic!() };
    let grad = Arc::new(CournotGradient::new(cost.clone()).unwrap());
    let caps: Vec<Vec<f64>> = g.doc.agents.iter().map(|a| a.local.upper.clone()).collect();
    let problem = g.instance.problem();
    let (lo, hi) = problem.domain_box();
    let data: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let u = BlockVector::new(problem.partition().clone(), BlockKind::Primal, data).unwrap();
    for law in [SlopeLaw::Normal, SlopeLaw::TruncatedNormal] {
        let orc = CournotOracle::new(grad.clone(), 0.005, law, BatchMode::Explicit, &caps).unwrap();
        let draws = 100_000;
        for i in [0, 7] {
            let d = problem.partition().dim(i);
            let mut exact = vec![0.0; d];
            grad.partial_gradient(i, &u, &mut exact);
            let mut rng = stream(5, i, 0, Phase::Xi);
            let (mut sum, mut sq) = (vec![0.0; d], vec![0.0; d]);
            let mut xi = vec![0.0; orc.noise_dim(i)];
            let mut out = vec![0.0; d];
            for _ in 0..draws {
                orc.draw_noise(i, &mut rng, &mut xi);
                orc.sampled_gradient(i, &u, &xi, &mut out);
                for c in 0..d {
                    sum[c] += out[c];
                    sq[c] += out[c] * out[c];
                }
            }
            for c in 0..d {
                let mean = sum[c] / draws as f64;
                let var = sq[c] / draws as f64 - mean * mean;
                let se = (var / draws as f64).sqrt();
                assert!((mean - exact[c]).abs() <= 4.0 * se, "{law:?} firm {i}: {mean} vs {}", exact[c]);
            }
        }
    }
}

#[test]
fn pooled_batches_match_explicit_moments() {
    let g = generate(&CournotConfig::default()).unwrap();
    let inst = g.doc.clone().build().unwrap();
    let explicit = g
        .doc
        .clone()
        .with_noise(NoiseDoc::DemandSlope {
            sd: 0.005,
            law: SlopeLaw::Normal,
            batch_mode: BatchMode::Explicit,
        })
        .build()
        .unwrap();
    let problem = inst.problem();
    let (lo, hi) = problem.domain_box();
    let data: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.3 * l + 0.7 * h).collect();
    let u = BlockVector::new(problem.partition().clone(), BlockKind::Primal, data).unwrap();
    let (batch, reps) = (16, 4000);
    let moments = |orc: &dyn SamplingOracle| {
        let (mut s, mut q) = (0.0, 0.0);
        let mut out = vec![0.0; 2];
        for r in 0..reps {
            let mut rng = stream(r as u64, 0, 0, Phase::Eta);
            orc.batch_gradient(0, &u, batch, &mut rng, &mut out).unwrap();
            s += out[0];
            q += out[0] * out[0];
        }
        let mean = s / reps as f64;
        (mean, q / reps as f64 - mean * mean)
    };
    let (m1, v1) = moments(&**inst.oracle());
    let (m2, v2) = moments(&**explicit.oracle());
    let se = ((v1 + v2) / reps as f64).sqrt();
    assert!((m1 - m2).abs() < 4.0 * se);
    assert!((v1 / v2 - 1.0).abs() < 0.15, "{v1} vs {v2}");
}

#[test]
fn generated_structure() {
    for seed in 0..5 {
        let config = CournotConfig {
            seed,
            ..CournotConfig::default()
        };
        let g = generate(&config).unwrap();
        let CostDoc::Cournot(cost) = &g.doc.cost else { panic!() };
        for (i, mk) in DEFAULT_PARTICIPATION.iter().enumerate() {
            assert_eq!(&cost.participation[i], mk);
        }
        let problem = g.instance.problem();
        let d = problem.stacked_coupling();
        let mut ones = 0;
        for r in 0..d.rows() {
            for c in 0..d.cols() {
                let v = d.get(r, c);
                assert!(v == 0.0 || v == 1.0);
                ones += (v == 1.0) as usize;
            }
        }
        assert_eq!(ones, 22);
        for &b in problem.offset_total() {
            assert!((5.0..=10.0).contains(&b));
        }
        for a in &g.doc.agents {
            assert!(a.local.upper.iter().all(|&t| t >= 0.0));
            assert!(a.local.lower.iter().all(|&t| t == 0.0));
        }
        for c in cost.costs.iter().flatten() {
            assert!(*c >= 0.6);
        }
        // Du is the market-wise aggregate supply.
        let (_, hi) = problem.domain_box();
        let mut du = vec![0.0; 7];
        d.mul_vec(&hi, &mut du);
        let mut s = [0.0; 7];
        for (mk, a) in cost.participation.iter().zip(&g.doc.agents) {
            for (&j, &t) in mk.iter().zip(&a.local.upper) {
                s[j] += t;
            }
        }
        for j in 0..7 {
            assert!((du[j] - s[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn estimated_lipschitz_holds_on_fresh_pairs() {
    let g = generate(&CournotConfig::default()).unwrap();
    let problem = g.instance.problem();
    let ell = g.doc.lipschitz.unwrap();
    let fresh = sampled_lipschitz(problem, 1000, 0xfeed).unwrap();
    assert!(fresh <= ell, "{fresh} > {ell}");
    assert!(ell > 0.0);
}

#[test]
fn monotonicity_gate() {
    let g = generate(&CournotConfig::default()).unwrap();
    assert!(g.monotonicity.passed());
    assert_eq!(g.monotonicity.trials, 1000);

    let single = CournotConfig {
        num_firms: 1,
        num_markets: 1,
        ..CournotConfig::default()
    };
    let g = generate(&single).unwrap();
    let r = monotonicity_probe(g.instance.problem(), 1000, 3).unwrap();
    assert!(r.min_ratio >= 0.0);
    assert!(monotonicity_probe(g.instance.problem(), 0, 3).is_err());

    let rising = CournotConfig {
        demand_sign: 1.0,
        ..CournotConfig::default()
    };
    match generate(&rising) {
        Ok(g) => assert!(g.monotonicity.passed()),
        Err(e) => {
            assert!(e.to_string().contains("monotonicity"), "{e}");
            let g = generate(&CournotConfig {
                allow_nonmonotone: true,
                ..rising
            })
            .unwrap();
            assert!(!g.monotonicity.passed());
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&CournotConfig::default()).unwrap();
    let b = generate(&CournotConfig::default()).unwrap();
    assert_eq!(a.doc, b.doc);
    let c = generate(&CournotConfig {
        seed: 1,
        ..CournotConfig::default()
    })
    .unwrap();
    assert_ne!(a.doc, c.doc);
    let back = InstanceDoc::from_json(&a.doc.to_json()).unwrap();
    assert_eq!(back, a.doc);
}

#[test]
fn random_participation_for_other_sizes() {
    let g = generate(&CournotConfig {
        num_firms: 6,
        num_markets: 4,
        seed: 9,
        lipschitz_pairs: 500,
        ..CournotConfig::default()
    })
    .unwrap();
    assert_eq!(g.instance.problem().num_agents(), 6);
    assert!(g.monotonicity.passed());
}
