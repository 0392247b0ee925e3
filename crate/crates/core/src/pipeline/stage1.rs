//! Heuristic-supervised first stage: greedy self-play data and fixed-budget training.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment, held_out_loss, train_passes, PipelineError, TrainingExample};
use crate::game::{GameState, Player};
use crate::heuristics::{greedy_choice, greedy_policy_target, GreedyMode};
use crate::nn::{LossReport, Network, TrainConfig, Trainer};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub games_per_epoch: u32,
    pub epochs: u32,
    /// Minibatch passes over each epoch's data.
    pub inner_iterations: u32,
    pub retention_rate: f64,
    /// Relative weights of random-start, random-moves and normal openings.
    pub init_mix: [u32; 3],
    pub random_opening_moves: u32,
    pub move_limit: u32,
    pub held_out_games: u32,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            games_per_epoch: 15_000,
            epochs: 100,
            inner_iterations: 2,
            retention_rate: 0.04,
            init_mix: [5, 3, 2],
            random_opening_moves: 3,
            move_limit: 100,
            held_out_games: 200,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.03..=0.05).contains(&self.retention_rate) {
            return Err(PipelineError::Config(format!("retention_rate {} outside [0.03, 0.05]", self.retention_rate)));
        }
        if self.init_mix.iter().sum::<u32>() != 10 {
            return Err(PipelineError::Config("init_mix must sum to 10".into()));
        }
        if self.random_opening_moves > 10 {
            return Err(PipelineError::Config("random_opening_moves must be at most 10".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opening {
    RandomStart,
    RandomMoves,
    Normal,
}

impl Opening {
    pub const ALL: [Opening; 3] = [Opening::RandomStart, Opening::RandomMoves, Opening::Normal];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A finished greedy self-play game.
#[derive(Clone, Debug)]
pub struct GreedyGame {
    pub opening: Opening,
    /// Positions before each move, in order.
    pub positions: Vec<GameState>,
    /// `None` when the game was blocked or hit the move limit.
    pub winner: Option<Player>,
}

/// Deterministic-greedy self-play from the given opening.
pub fn play_greedy_game<R: Rng + ?Sized>(opening: Opening, random_moves: u32, move_limit: u32, rng: &mut R) -> GreedyGame {
    let mut state = match opening {
        Opening::RandomStart => GameState::random_start(rng, Player::One),
        _ => GameState::new(),
    };
    let random_plies = if opening == Opening::RandomMoves { 2 * random_moves } else { 0 };
    let mut positions = Vec::new();
    let winner = loop {
        if let Some(w) = state.winner() {
            break Some(w);
        }
        if state.move_count() >= move_limit {
            break None;
        }
        let moves = state.legal_moves(state.current_player());
        if moves.is_empty() {
            break None;
        }
        let mv = if state.move_count() < random_plies {
            *moves.choose(rng).unwrap()
        } else {
            greedy_choice(&moves, GreedyMode::Deterministic, rng)
        };
        positions.push(state.clone());
        state = state.apply_unchecked(&mv);
    };
    GreedyGame { opening, positions, winner }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1Stats {
    pub games: u32,
    pub decisive: u32,
    pub discarded: u32,
    /// Games started per opening kind (random start, random moves, normal).
    pub openings: [u32; 3],
    pub decisive_plies: u64,
    pub examples: usize,
}

impl Stage1Stats {
    pub fn mean_decisive_length(&self) -> f64 {
        self.decisive_plies as f64 / self.decisive.max(1) as f64
    }
}

/// Plays `games` greedy games and turns every decisive position into an example pair
/// (original and mirror), keeping each pair with probability `retention_rate`.
pub fn generate_stage1_games(cfg: &Stage1Config, games: u32, retention_rate: f64, seed: u64) -> (Vec<TrainingExample>, Stage1Stats) {
    let mix = WeightedIndex::new(cfg.init_mix).expect("opening weights");
    let per_game = crate::par_map((0..games).collect(), |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(g)]));
        let opening = Opening::ALL[mix.sample(&mut rng)];
        let game = play_greedy_game(opening, cfg.random_opening_moves, cfg.move_limit, &mut rng);
        let mut examples = Vec::new();
        if let Some(w) = game.winner {
            for s in &game.positions {
                if rng.random::<f64>() < retention_rate {
                    let value = if s.current_player() == w { 1.0 } else { -1.0 };
                    examples.extend(augment(TrainingExample::from_state(s, greedy_policy_target(s), value)));
                }
            }
        }
        (game.opening, game.winner.is_some(), game.positions.len(), examples)
    });
    let mut stats = Stage1Stats { games, ..Default::default() };
    let mut all = Vec::new();
    for (opening, decisive, plies, examples) in per_game {
        stats.openings[opening.index()] += 1;
        if decisive {
            stats.decisive += 1;
            stats.decisive_plies += plies as u64;
        } else {
            stats.discarded += 1;
        }
        all.extend(examples);
    }
    stats.examples = all.len();
    (all, stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1EpochReport {
    pub epoch: u32,
    pub stats: Stage1Stats,
    pub train_loss: Vec<LossReport>,
    pub held_out: LossReport,
}

/// Trains for a fixed number of epochs, regenerating data each epoch.
pub fn train_stage1(
    net: Network,
    cfg: &Stage1Config,
    mut on_epoch: impl FnMut(&Stage1EpochReport),
) -> Result<(Network, Vec<Stage1EpochReport>), PipelineError> {
    cfg.validate()?;
    let (held_out, _) = generate_stage1_games(cfg, cfg.held_out_games, 0.25, derive_seed(cfg.seed, &[u64::MAX]));
    let mut trainer = Trainer::new(net, cfg.train.clone());
    let mut reports = Vec::new();
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, &[u64::from(epoch)]);
        let (data, stats) = generate_stage1_games(cfg, cfg.games_per_epoch, cfg.retention_rate, epoch_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, &[1]));
        let train_loss = train_passes(&mut trainer, &data, cfg.inner_iterations, &mut rng)?;
        let report = Stage1EpochReport { epoch, stats, train_loss, held_out: held_out_loss(&trainer.net, &held_out) };
        log::info!(
            "stage1 epoch {epoch}: {} examples, held-out loss {:.4}",
            report.stats.examples,
            report.held_out.policy + report.held_out.value
        );
        on_epoch(&report);
        reports.push(report);
    }
    Ok((trainer.into_network(), reports))
}
