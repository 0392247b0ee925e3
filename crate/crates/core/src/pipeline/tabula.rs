//! Training from scratch: soft move limit and forward-distance outcome rule.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::selfplay::{play_selfplay_game, GameLimit, MoveSchedule, SelfPlayEnd, SelfPlayGame};
use super::{augment, train_passes, PipelineError, TrainingExample};
use crate::game::{GameState, Player};
use crate::mcts::SearchConfig;
use crate::nn::{LossReport, Network, TrainConfig, Trainer};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabulaRasaConfig {
    pub soft_limit: u32,
    pub distance_threshold: u32,
    /// Train on drawn games with value 0.
    pub include_draws: bool,
    pub episodes: u32,
    pub games_per_episode: u32,
    pub epochs_per_episode: u32,
    pub eval_games: u32,
    pub promotion_threshold: u32,
    pub schedule: MoveSchedule,
    pub eval_random_moves: u32,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for TabulaRasaConfig {
    fn default() -> Self {
        TabulaRasaConfig {
            soft_limit: 100,
            distance_threshold: 3,
            include_draws: true,
            episodes: 50,
            games_per_episode: 180,
            epochs_per_episode: 5,
            eval_games: 24,
            promotion_threshold: 14,
            schedule: MoveSchedule::default(),
            eval_random_moves: 3,
            train: TrainConfig { l2_lambda: 5e-3, ..TrainConfig::default() },
            seed: 0,
        }
    }
}

impl TabulaRasaConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.soft_limit < 1 {
            return Err(PipelineError::Config("soft_limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// Move budget that grows by `step` each time either player beats its best goal count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SoftLimit {
    step: u32,
    limit: u32,
    best: [u32; 2],
}

impl SoftLimit {
    pub fn new(step: u32) -> Self {
        SoftLimit { step, limit: step, best: [0, 0] }
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    /// Records progress in `state` and reports whether the budget is spent.
    pub fn observe(&mut self, state: &GameState) -> bool {
        for p in [Player::One, Player::Two] {
            let n = state.checkers_in_goal(p);
            if n > self.best[p.index()] {
                self.best[p.index()] = n;
                self.limit += self.step;
            }
        }
        state.move_count() >= self.limit
    }
}

/// Total rows a player's checkers have advanced between two positions.
pub fn total_forward_distance(start: &GameState, end: &GameState, player: Player) -> i32 {
    let progress = |s: &GameState| s.ids().positions(player).iter().map(|c| player.progress(*c)).sum::<i32>();
    progress(end) - progress(start)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabulaOutcome {
    P1Win,
    P2Win,
    Draw,
}

impl TabulaOutcome {
    /// Reward for `player`.
    pub fn value_for(self, player: Player) -> f32 {
        match (self, player) {
            (TabulaOutcome::Draw, _) => 0.0,
            (TabulaOutcome::P1Win, Player::One) | (TabulaOutcome::P2Win, Player::Two) => 1.0,
            _ => -1.0,
        }
    }

    pub fn winner(self) -> Option<Player> {
        match self {
            TabulaOutcome::P1Win => Some(Player::One),
            TabulaOutcome::P2Win => Some(Player::Two),
            TabulaOutcome::Draw => None,
        }
    }
}

/// What the outcome rule needs to know about a finished game.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TabulaGameRecord {
    pub winner: Option<Player>,
    /// Total forward distance of Player 1 and Player 2.
    pub distances: [i32; 2],
}

impl TabulaGameRecord {
    pub fn from_game(game: &SelfPlayGame) -> Self {
        let winner = match game.end {
            SelfPlayEnd::Win(p) => Some(p),
            _ => None,
        };
        let distances = [Player::One, Player::Two].map(|p| total_forward_distance(&game.start, &game.end_state, p));
        TabulaGameRecord { winner, distances }
    }
}

/// Natural wins stand; otherwise the larger forward distance wins if it leads by more than the threshold.
pub fn tabula_rasa_outcome(record: &TabulaGameRecord, cfg: &TabulaRasaConfig) -> TabulaOutcome {
    match record.winner {
        Some(Player::One) => TabulaOutcome::P1Win,
        Some(Player::Two) => TabulaOutcome::P2Win,
        None => {
            let [d1, d2] = record.distances;
            if d1.abs_diff(d2) <= cfg.distance_threshold {
                TabulaOutcome::Draw
            } else if d1 > d2 {
                TabulaOutcome::P1Win
            } else {
                TabulaOutcome::P2Win
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TabulaEpisodeReport {
    pub episode: u32,
    pub games: u32,
    pub natural_wins: u32,
    pub distance_wins: u32,
    pub draws: u32,
    pub max_plies: u32,
    pub examples: usize,
    pub loss: Vec<LossReport>,
    pub eval_wins: u32,
    pub promoted: bool,
}

fn play_games(
    nets: [&Network; 2],
    search: &SearchConfig,
    schedule: &MoveSchedule,
    cfg: &TabulaRasaConfig,
    games: u32,
    seed: u64,
) -> Result<Vec<(bool, SelfPlayGame)>, PipelineError> {
    let results = crate::par_map((0..games).collect(), |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(g)]));
        let first_is_zero = g % 2 == 0;
        let sides = if first_is_zero { nets } else { [nets[1], nets[0]] };
        play_selfplay_game(sides, search, schedule, GameLimit::Soft(cfg.soft_limit), &mut rng).map(|x| (first_is_zero, x))
    });
    results.into_iter().map(|r| r.map_err(|e| PipelineError::Agent(e.into()))).collect()
}

/// Runs the full self-play loop from `net`; `on_episode` sees each report as it completes.
pub fn run_tabula_rasa(
    net: Network,
    cfg: &TabulaRasaConfig,
    search: &SearchConfig,
    mut on_episode: impl FnMut(&TabulaEpisodeReport),
) -> Result<(Network, Vec<TabulaEpisodeReport>), PipelineError> {
    cfg.validate()?;
    let mut opponent = Arc::new(net.clone());
    let mut trainer = Trainer::new(net, cfg.train.clone());
    let mut reports = Vec::new();
    for episode in 0..cfg.episodes {
        let seed = derive_seed(cfg.seed, &[u64::from(episode)]);
        let current = Arc::new(trainer.net.clone());
        let games = play_games([&*current, &*opponent], search, &cfg.schedule, cfg, cfg.games_per_episode, seed)?;
        let mut report = TabulaEpisodeReport { episode, games: games.len() as u32, ..Default::default() };
        let mut data = Vec::new();
        for (_, g) in &games {
            let outcome = tabula_rasa_outcome(&TabulaGameRecord::from_game(g), cfg);
            match (outcome, g.end) {
                (TabulaOutcome::Draw, _) => report.draws += 1,
                (_, SelfPlayEnd::Win(_)) => report.natural_wins += 1,
                _ => report.distance_wins += 1,
            }
            report.max_plies = report.max_plies.max(g.plies());
            if outcome == TabulaOutcome::Draw && !cfg.include_draws {
                continue;
            }
            for (s, policy) in &g.records {
                let value = outcome.value_for(s.current_player());
                data.extend(augment(TrainingExample::from_state(s, policy.clone(), value)));
            }
        }
        report.examples = data.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
        report.loss = train_passes(&mut trainer, &data, cfg.epochs_per_episode, &mut rng)?;

        let candidate = Arc::new(trainer.net.clone());
        let eval_search = search.clone().with_noise(false);
        let eval = play_games(
            [&*candidate, &*opponent],
            &eval_search,
            &MoveSchedule::evaluation(cfg.eval_random_moves),
            cfg,
            cfg.eval_games,
            derive_seed(seed, &[2]),
        )?;
        for (candidate_first, g) in &eval {
            let outcome = tabula_rasa_outcome(&TabulaGameRecord::from_game(g), cfg);
            let candidate_side = if *candidate_first { Player::One } else { Player::Two };
            if outcome.winner() == Some(candidate_side) {
                report.eval_wins += 1;
            }
            report.max_plies = report.max_plies.max(g.plies());
        }
        if report.eval_wins >= cfg.promotion_threshold {
            opponent = candidate;
            report.promoted = true;
        }
        log::info!(
            "tabula episode {episode}: {} games, {} draws, eval wins {}/{}",
            report.games,
            report.draws,
            report.eval_wins,
            cfg.eval_games
        );
        on_episode(&report);
        reports.push(report);
    }
    Ok((trainer.into_network(), reports))
}
