pub mod blockvec;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod operators;
pub mod problem;
pub mod stochastic;
pub mod solver;
pub mod builtins;
pub mod cournot;
pub mod instance;
pub mod agentnet;

// The book's Rust snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/instances.md")]
    mod instances {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/distributed.md")]
    mod distributed {}
    #[doc = include_str!("../../../book/src/cournot.md")]
    mod cournot {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
