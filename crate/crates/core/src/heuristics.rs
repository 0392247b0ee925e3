//! Forward-distance heuristic and the two greedy agents built on it.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::game::{GameError, GameState, Move, Player, ACTIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyMode {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub mode: GreedyMode,
    /// Uniformly random moves each side plays before the heuristic takes over.
    pub initial_random_moves: u32,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig { mode: GreedyMode::Deterministic, initial_random_moves: 3 }
    }
}

impl HeuristicConfig {
    pub fn deterministic() -> Self {
        HeuristicConfig { mode: GreedyMode::Deterministic, initial_random_moves: 0 }
    }

    pub fn stochastic() -> Self {
        HeuristicConfig { mode: GreedyMode::Stochastic, initial_random_moves: 0 }
    }

    pub fn with_random_moves(mut self, n: u32) -> Self {
        assert!(n <= 10, "initial_random_moves must be at most 10");
        self.initial_random_moves = n;
        self
    }
}

/// Signed number of board rows a move advances its checker toward the mover's goal.
pub fn forward_distance(mv: &Move) -> i32 {
    let start = mv.from.row() as i32 - mv.from.col() as i32;
    let end = mv.to.row() as i32 - mv.to.col() as i32;
    match mv.player {
        Player::One => start - end,
        Player::Two => end - start,
    }
}

/// Moves sharing the largest forward distance. When every move goes backward this is the
/// set with the smallest absolute distance, which is the same set.
pub fn best_moves(moves: &[Move]) -> Vec<Move> {
    let Some(best) = moves.iter().map(forward_distance).max() else {
        return Vec::new();
    };
    moves.iter().copied().filter(|m| forward_distance(m) == best).collect()
}

/// Restricts tied moves to the checker(s) furthest from the goal.
pub fn rearmost_moves(candidates: &[Move]) -> Vec<Move> {
    let Some(rear) = candidates.iter().map(|m| m.player.progress(m.from)).min() else {
        return Vec::new();
    };
    candidates.iter().copied().filter(|m| m.player.progress(m.from) == rear).collect()
}

/// Move selection probabilities of the stochastic agent, aligned with `moves`.
/// Returns `None` when no move has positive forward distance.
pub fn stochastic_probabilities(moves: &[Move]) -> Option<Vec<f64>> {
    let total: i32 = moves.iter().map(forward_distance).filter(|&d| d > 0).sum();
    if total <= 0 {
        return None;
    }
    Some(
        moves
            .iter()
            .map(|m| forward_distance(m).max(0) as f64 / total as f64)
            .collect(),
    )
}

fn pick_deterministic<R: Rng + ?Sized>(moves: &[Move], rng: &mut R) -> Move {
    let tied = rearmost_moves(&best_moves(moves));
    *tied.choose(rng).expect("non-empty move list")
}

/// Chooses a move for the side to move.
pub fn greedy_policy<R: Rng + ?Sized>(
    state: &GameState,
    cfg: &HeuristicConfig,
    rng: &mut R,
) -> Result<Move, GameError> {
    let player = state.current_player();
    let moves = state.legal_moves(player);
    if moves.is_empty() {
        return Err(GameError::Blocked(player));
    }
    if state.move_count() < 2 * cfg.initial_random_moves {
        return Ok(*moves.choose(rng).unwrap());
    }
    Ok(greedy_choice(&moves, cfg.mode, rng))
}

pub fn greedy_choice<R: Rng + ?Sized>(moves: &[Move], mode: GreedyMode, rng: &mut R) -> Move {
    match mode {
        GreedyMode::Deterministic => pick_deterministic(moves, rng),
        GreedyMode::Stochastic => match stochastic_probabilities(moves) {
            Some(probs) => {
                let mut u: f64 = rng.random();
                for (m, p) in moves.iter().zip(&probs) {
                    if u < *p {
                        return *m;
                    }
                    u -= p;
                }
                // Rounding left a sliver of mass; take the last positive move.
                *moves
                    .iter()
                    .zip(&probs)
                    .rev()
                    .find(|(_, p)| **p > 0.0)
                    .unwrap()
                    .0
            }
            None => pick_deterministic(moves, rng),
        },
    }
}

/// Supervision target: `1/k` on each of the `k` moves with maximal forward distance.
pub fn greedy_policy_target(state: &GameState) -> Vec<f32> {
    let moves = state.legal_moves(state.current_player());
    let best = best_moves(&moves);
    let mut target = vec![0.0f32; ACTIONS];
    let share = 1.0 / best.len() as f32;
    for m in &best {
        target[state.action_index(m).index()] = share;
    }
    target
}
