//! Search-guided reinforcement stage with gated promotion of the best model.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::selfplay::{play_selfplay_game, GameLimit, MoveSchedule, SelfPlayEnd};
use super::{augment, train_passes, PipelineError, TrainingExample};
use crate::agents::MctsAgent;
use crate::arena::{play_match, MatchConfig, MatchSummary};
use crate::mcts::SearchConfig;
use crate::nn::{LossReport, Network, TrainConfig, Trainer};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub episodes: u32,
    pub games_per_episode: u32,
    pub sample_rate: f64,
    pub epochs_per_episode: u32,
    pub eval_games: u32,
    pub promotion_threshold: u32,
    pub schedule: MoveSchedule,
    /// Random moves per player at the start of each evaluation game.
    pub eval_random_moves: u32,
    pub move_limit: u32,
    /// Also replace the self-play opponent when the best model is replaced.
    pub update_opponent_on_promotion: bool,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            episodes: 5,
            games_per_episode: 180,
            sample_rate: 0.5,
            epochs_per_episode: 5,
            eval_games: 24,
            promotion_threshold: 14,
            schedule: MoveSchedule::default(),
            eval_random_moves: 3,
            move_limit: 100,
            update_opponent_on_promotion: true,
            train: TrainConfig { l2_lambda: 5e-3, ..TrainConfig::default() },
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.eval_games == 0 || self.promotion_threshold as f64 / self.eval_games as f64 <= 0.55 {
            return Err(PipelineError::Config("promotion_threshold / eval_games must exceed 0.55".into()));
        }
        if !(0.0..=1.0).contains(&self.sample_rate) {
            return Err(PipelineError::Config("sample_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Models and data carried between episodes.
pub struct Stage2State {
    pub candidate: Trainer,
    pub best: Arc<Network>,
    pub opponent: Arc<Network>,
    pub previous_data: Vec<TrainingExample>,
    pub episode: u32,
}

impl Stage2State {
    pub fn new(net: Network, train: TrainConfig) -> Self {
        let best = Arc::new(net.clone());
        Stage2State {
            candidate: Trainer::new(net, train),
            opponent: best.clone(),
            best,
            previous_data: Vec::new(),
            episode: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2EpisodeReport {
    pub episode: u32,
    pub games: u32,
    pub abandoned: u32,
    pub new_examples: usize,
    pub trained_examples: usize,
    pub loss: Vec<LossReport>,
    pub eval: MatchSummary,
    pub promoted: bool,
}

/// Exactly `round(rate * n)` items drawn without replacement.
pub fn sample_without_replacement<T: Clone>(items: &[T], rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let k = (rate * items.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let (picked, _) = idx.partial_shuffle(rng, k);
    picked.iter().map(|&i| items[i].clone()).collect()
}

/// Promotion rule: strictly at least `threshold` wins.
pub fn should_promote(wins: u32, threshold: u32) -> bool {
    wins >= threshold
}

/// One episode: self-play, pooled sampling, training and gated evaluation.
pub fn run_stage2_episode(
    state: &mut Stage2State,
    cfg: &Stage2Config,
    search: &SearchConfig,
) -> Result<Stage2EpisodeReport, PipelineError> {
    cfg.validate()?;
    let episode = state.episode;
    let seed = derive_seed(cfg.seed, &[u64::from(episode)]);
    let current = Arc::new(state.candidate.net.clone());
    let opponent = state.opponent.clone();

    let games = crate::par_map((0..cfg.games_per_episode).collect(), |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(g)]));
        let nets: [&Network; 2] = if g % 2 == 0 { [&*current, &*opponent] } else { [&*opponent, &*current] };
        play_selfplay_game(nets, search, &cfg.schedule, GameLimit::Fixed(cfg.move_limit), &mut rng)
    });
    let mut report = Stage2EpisodeReport { episode, games: cfg.games_per_episode, ..Default::default() };
    let mut fresh = Vec::new();
    for g in games {
        let g = g.map_err(|e| PipelineError::Agent(e.into()))?;
        let SelfPlayEnd::Win(winner) = g.end else {
            report.abandoned += 1;
            continue;
        };
        for (s, policy) in g.records {
            let value = if s.current_player() == winner { 1.0 } else { -1.0 };
            fresh.extend(augment(TrainingExample::from_state(&s, policy, value)));
        }
    }
    if report.abandoned == report.games {
        return Err(PipelineError::VoidEpisode);
    }
    report.new_examples = fresh.len();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX]));
    let mut pool = std::mem::take(&mut state.previous_data);
    pool.extend(fresh.iter().cloned());
    let sample = sample_without_replacement(&pool, cfg.sample_rate, &mut rng);
    report.trained_examples = sample.len();
    state.candidate.set_l2_lambda(cfg.train.l2_lambda);
    report.loss = train_passes(&mut state.candidate, &sample, cfg.epochs_per_episode, &mut rng)?;
    state.previous_data = fresh;

    let eval_search = search.clone().with_temperature(cfg.schedule.deterministic_temperature).with_noise(false);
    let candidate = Arc::new(state.candidate.net.clone());
    let a = MctsAgent::new(candidate.clone(), eval_search.clone());
    let b = MctsAgent::new(state.best.clone(), eval_search);
    let match_cfg = MatchConfig {
        games: cfg.eval_games,
        random_opening_moves: cfg.eval_random_moves,
        move_limit: cfg.move_limit,
        seed: derive_seed(seed, &[u64::MAX - 1]),
    };
    let (record, _) = play_match(&a, &b, &match_cfg)?;
    report.eval = record.summary;
    if should_promote(report.eval.a_wins, cfg.promotion_threshold) {
        state.best = candidate;
        if cfg.update_opponent_on_promotion {
            state.opponent = state.best.clone();
        }
        report.promoted = true;
    }
    log::info!(
        "stage2 episode {episode}: {} examples ({} abandoned games), eval {}-{}, promoted {}",
        report.new_examples,
        report.abandoned,
        report.eval.a_wins,
        report.eval.b_wins,
        report.promoted
    );
    state.episode += 1;
    Ok(report)
}

/// Runs `cfg.episodes` episodes starting from `net`.
pub fn train_stage2(
    net: Network,
    cfg: &Stage2Config,
    search: &SearchConfig,
    mut on_episode: impl FnMut(&Stage2EpisodeReport),
) -> Result<(Stage2State, Vec<Stage2EpisodeReport>), PipelineError> {
    let mut state = Stage2State::new(net, cfg.train.clone());
    let mut reports = Vec::new();
    for _ in 0..cfg.episodes {
        let r = run_stage2_episode(&mut state, cfg, search)?;
        on_episode(&r);
        reports.push(r);
    }
    Ok((state, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn promotion_threshold() {
        assert!(should_promote(14, 14));
        assert!(!should_promote(13, 14));
        assert!(Stage2Config::default().validate().is_ok());
        let bad = Stage2Config { promotion_threshold: 13, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampling_rate_is_exact() {
        let items: Vec<u32> = (0..101).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_without_replacement(&items, 0.5, &mut rng);
        assert_eq!(s.len(), 51);
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), s.len());
    }
}
