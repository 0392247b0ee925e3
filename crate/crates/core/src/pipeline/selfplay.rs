//! Search-guided self-play games with the opening/exploration move schedule.

use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tabula::SoftLimit;
use crate::game::{GameState, Player};
use crate::mcts::{SearchConfig, SearchError, SearchTree};
use crate::nn::Network;

/// How the search temperature and noise evolve over a game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveSchedule {
    pub random_moves_per_player: u32,
    pub exploratory_moves_per_player: u32,
    pub exploratory_temperature: f64,
    pub deterministic_temperature: f64,
    pub root_noise: bool,
}

impl Default for MoveSchedule {
    fn default() -> Self {
        MoveSchedule {
            random_moves_per_player: 3,
            exploratory_moves_per_player: 5,
            exploratory_temperature: 2.0,
            deterministic_temperature: 0.01,
            root_noise: true,
        }
    }
}

impl MoveSchedule {
    /// Noise-free play at the deterministic temperature after the random opening.
    pub fn evaluation(random_moves_per_player: u32) -> Self {
        MoveSchedule {
            random_moves_per_player,
            exploratory_moves_per_player: 0,
            exploratory_temperature: 1.0,
            deterministic_temperature: 0.01,
            root_noise: false,
        }
    }

    /// Search settings for the move at `ply`, or `None` for a uniformly random move.
    pub fn search_at(&self, ply: u32, base: &SearchConfig) -> Option<SearchConfig> {
        let random = 2 * self.random_moves_per_player;
        if ply < random {
            return None;
        }
        let t = if ply < random + 2 * self.exploratory_moves_per_player {
            self.exploratory_temperature
        } else {
            self.deterministic_temperature
        };
        Some(base.clone().with_temperature(t).with_noise(self.root_noise))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameLimit {
    /// Hard cap; cycles and caps abandon the game.
    Fixed(u32),
    /// Budget that grows whenever either side gets a new checker into its goal.
    Soft(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfPlayEnd {
    Win(Player),
    Blocked,
    Cycle,
    MoveLimit,
    SoftLimit,
}

#[derive(Clone, Debug)]
pub struct SelfPlayGame {
    /// Searched positions with their decision distributions.
    pub records: Vec<(GameState, Vec<f32>)>,
    pub start: GameState,
    pub end_state: GameState,
    pub end: SelfPlayEnd,
}

impl SelfPlayGame {
    pub fn plies(&self) -> u32 {
        self.end_state.move_count()
    }
}

/// Plays one game with `nets[0]` moving for Player 1 and `nets[1]` for Player 2.
pub fn play_selfplay_game(
    nets: [&Network; 2],
    search: &SearchConfig,
    schedule: &MoveSchedule,
    limit: GameLimit,
    rng: &mut ChaCha8Rng,
) -> Result<SelfPlayGame, SearchError> {
    let start = GameState::new();
    let mut state = start.clone();
    let mut records = Vec::new();
    let mut soft = match limit {
        GameLimit::Soft(step) => Some(SoftLimit::new(step)),
        GameLimit::Fixed(_) => None,
    };
    let end = loop {
        if let Some(w) = state.winner() {
            break SelfPlayEnd::Win(w);
        }
        match (&mut soft, limit) {
            (Some(s), _) => {
                if s.observe(&state) {
                    break SelfPlayEnd::SoftLimit;
                }
            }
            (None, GameLimit::Fixed(cap)) => {
                if state.move_count() >= cap {
                    break SelfPlayEnd::MoveLimit;
                }
                if state.detect_short_cycle() {
                    break SelfPlayEnd::Cycle;
                }
            }
            (None, GameLimit::Soft(_)) => unreachable!(),
        }
        let player = state.current_player();
        let legal = state.legal_moves(player);
        if legal.is_empty() {
            break SelfPlayEnd::Blocked;
        }
        let mv = match schedule.search_at(state.move_count(), search) {
            None => *legal.choose(rng).unwrap(),
            Some(cfg) => {
                let mut tree = SearchTree::new(state.clone(), nets[player.index()], cfg, rng)?;
                tree.run();
                let result = tree.choose(rng);
                records.push((state.clone(), result.policy));
                result.mv
            }
        };
        state = state.apply_unchecked(&mv);
    };
    Ok(SelfPlayGame { records, start, end_state: state, end })
}
