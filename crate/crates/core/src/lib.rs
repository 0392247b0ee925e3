//! Engine, agents and training pipeline for two-player Chinese Checkers on a 7×7 diamond board.

pub mod agents;
pub mod arena;
pub mod game;
pub mod heuristics;
pub mod mcts;
pub mod nn;
pub mod pipeline;
pub mod qlearning;
pub mod seeds;
pub mod serve;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on. Output order matches input.
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}
