//! Small named instances for examples, tests and the command line.

use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::instance::{AgentDoc, CostDoc, InstanceDoc, NoiseDoc};
use crate::linalg::Matrix;
use crate::problem::BoxPenalty;

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 5] = [
    "affine-monotone-small",
    "scalar-pair",
    "skew-ring-4",
    "l1-penalized",
    "star-five",
];

/// Returns the named instance with exact gradients.
pub fn builtin(name: &str) -> Result<InstanceDoc> {
    let doc = match name {
        "affine-monotone-small" => affine_monotone_small(),
        "scalar-pair" => scalar_pair(),
        "skew-ring-4" => skew_ring_4(),
        "l1-penalized" => l1_penalized(),
        "star-five" => star_five(),
        _ => {
            return Err(Error::Validation(format!(
                "unknown builtin instance {name:?}; known: {}",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(doc)
}

fn boxed(dim: usize, lo: f64, hi: f64) -> BoxPenalty {
    BoxPenalty {
        lower: vec![lo; dim],
        upper: vec![hi; dim],
        l1: Vec::new(),
        linear: Vec::new(),
    }
}

fn mat(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("rectangular")
}

/// Splits `b` evenly over `n` agents.
fn shares(b: &[f64], n: usize) -> Vec<f64> {
    b.iter().map(|v| v / n as f64).collect()
}

fn affine(
    name: &str,
    agents: Vec<AgentDoc>,
    m: usize,
    graph: GraphSpec,
    matrix: Matrix,
    offset: Vec<f64>,
) -> InstanceDoc {
    InstanceDoc {
        name: Some(name.into()),
        constraint_dim: m,
        agents,
        graph,
        cost: CostDoc::Affine { matrix, offset },
        noise: NoiseDoc::None,
        lipschitz: None,
    }
}

/// Three agents with two decisions each, a shared budget row and a
/// difference row; ring graph.
fn affine_monotone_small() -> InstanceDoc {
    let m = mat(&[
        &[2.0, 0.3, 0.5, 0.0, 0.2, 0.0],
        &[0.3, 1.5, 0.0, -0.4, 0.0, 0.1],
        &[-0.5, 0.0, 1.8, 0.2, 0.3, 0.0],
        &[0.0, 0.4, 0.2, 1.2, 0.0, -0.3],
        &[-0.2, 0.0, -0.3, 0.0, 1.6, 0.2],
        &[0.0, -0.1, 0.0, 0.3, 0.2, 1.4],
    ]);
    let q = vec![-4.0, -3.0, -5.0, -2.0, -3.0, -4.0];
    let b = shares(&[6.0, 5.0], 3);
    let d = [
        mat(&[&[1.0, 1.0], &[1.0, 0.0]]),
        mat(&[&[1.0, 1.0], &[-1.0, 0.0]]),
        mat(&[&[1.0, 1.0], &[0.0, 0.0]]),
    ];
    let agents = d
        .into_iter()
        .map(|c| AgentDoc {
            local: boxed(2, 0.0, 3.0),
            coupling: c,
            offset: b.clone(),
        })
        .collect();
    affine("affine-monotone-small", agents, 2, GraphSpec::Ring, m, q)
}

/// Two scalar agents whose budget binds.
fn scalar_pair() -> InstanceDoc {
    let agents = (0..2)
        .map(|_| AgentDoc {
            local: boxed(1, 0.0, 2.0),
            coupling: mat(&[&[1.0]]),
            offset: vec![0.5],
        })
        .collect();
    affine(
        "scalar-pair",
        agents,
        1,
        GraphSpec::Complete,
        mat(&[&[2.0, 0.5], &[-0.5, 1.0]]),
        vec![-2.0, -1.0],
    )
}

/// Four scalar agents with a rotational coupling around a ring.
fn skew_ring_4() -> InstanceDoc {
    let mut m = Matrix::identity(4);
    for i in 0..4 {
        let j = (i + 1) % 4;
        m.set(i, j, 0.5);
        m.set(j, i, -0.5);
    }
    let agents = (0..4)
        .map(|_| AgentDoc {
            local: boxed(1, 0.0, 3.0),
            coupling: mat(&[&[1.0]]),
            offset: vec![0.5],
        })
        .collect();
    affine("skew-ring-4", agents, 1, GraphSpec::Ring, m, vec![-1.0, -2.0, -1.0, -2.0])
}

/// Two agents with `ℓ1` and linear terms in their local costs.
fn l1_penalized() -> InstanceDoc {
    let m = mat(&[
        &[1.5, 0.0, 0.3, 0.0],
        &[0.0, 1.0, 0.0, -0.2],
        &[-0.3, 0.0, 1.2, 0.0],
        &[0.0, 0.2, 0.0, 0.8],
    ]);
    let local = |linear: [f64; 2]| BoxPenalty {
        lower: vec![-2.0; 2],
        upper: vec![2.0; 2],
        l1: vec![0.3; 2],
        linear: linear.to_vec(),
    };
    let agents = vec![
        AgentDoc {
            local: local([0.1, -0.2]),
            coupling: mat(&[&[1.0, 1.0]]),
            offset: vec![1.0],
        },
        AgentDoc {
            local: local([-0.1, 0.2]),
            coupling: mat(&[&[1.0, 1.0]]),
            offset: vec![1.0],
        },
    ];
    affine("l1-penalized", agents, 1, GraphSpec::Complete, m, vec![-3.0, -1.0, -2.0, -2.0])
}

/// Five scalar agents on a star with a budget and a pairwise limit.
fn star_five() -> InstanceDoc {
    let mut m = Matrix::identity(5);
    for i in 0..5 {
        m.set(i, i, 1.2);
    }
    for j in 1..5 {
        m.set(0, j, 0.2);
        m.set(j, 0, -0.2);
    }
    let b = shares(&[3.0, 0.2], 5);
    let rows: [[f64; 2]; 5] = [[1.0, 1.0], [1.0, 0.0], [1.0, 0.0], [1.0, -1.0], [1.0, 0.0]];
    let agents = rows
        .iter()
        .map(|r| AgentDoc {
            local: boxed(1, 0.0, 2.0),
            coupling: mat(&[&[r[0]], &[r[1]]]),
            offset: b.clone(),
        })
        .collect();
    affine("star-five", agents, 2, GraphSpec::Star, m, vec![-2.0, -1.5, -1.0, -2.5, -1.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_build() {
        for name in BUILTIN_NAMES {
            let doc = builtin(name).unwrap();
            let inst = doc.build().unwrap();
            assert_eq!(inst.name(), name);
            let back = InstanceDoc::from_json(&doc.to_json()).unwrap();
            assert_eq!(back, doc);
        }
        assert!(builtin("nope").is_err());
    }
}
