//! Head-to-head matches between agents and Elo bookkeeping.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError};
use crate::game::{GameState, MoveJson, Player};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub games: u32,
    /// Uniformly random moves each side plays before the agents take over.
    pub random_opening_moves: u32,
    pub move_limit: u32,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { games: 100, random_opening_moves: 3, move_limit: 100, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbandonReason {
    Blocked,
    Cycle,
    MoveLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameResult {
    P1Win,
    P2Win,
    Abandoned(AbandonReason),
}

impl GameResult {
    pub fn winner(self) -> Option<Player> {
        match self {
            GameResult::P1Win => Some(Player::One),
            GameResult::P2Win => Some(Player::Two),
            GameResult::Abandoned(_) => None,
        }
    }
}

/// One finished game. `a_is_p1` tells which side the first agent played.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub index: u32,
    pub seed: u64,
    pub a_is_p1: bool,
    pub result: GameResult,
    pub moves: Vec<MoveJson>,
}

impl GameRecord {
    /// 0 when agent `a` won, 1 when `b` won.
    pub fn winning_agent(&self) -> Option<usize> {
        self.result.winner().map(|p| usize::from((p == Player::One) != self.a_is_p1))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub a_wins: u32,
    pub b_wins: u32,
    pub abandoned: u32,
    pub p1_wins: u32,
    pub p2_wins: u32,
    pub total: u32,
}

impl MatchSummary {
    pub fn a_win_rate(&self) -> f64 {
        self.a_wins as f64 / self.total.max(1) as f64
    }

    pub fn b_win_rate(&self) -> f64 {
        self.b_wins as f64 / self.total.max(1) as f64
    }

    /// Win rate of `a` among decisive games.
    pub fn a_decisive_rate(&self) -> f64 {
        self.a_wins as f64 / (self.a_wins + self.b_wins).max(1) as f64
    }
}

/// Canonical, reproducible match output (no timings).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub agents: [String; 2],
    pub config: MatchConfig,
    pub summary: MatchSummary,
    pub games: Vec<GameRecord>,
}

/// Wall-clock milliseconds per move, per game, kept apart from the canonical record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchTimings {
    pub move_ms: Vec<Vec<f64>>,
}

impl MatchRecord {
    pub fn summarize(games: &[GameRecord]) -> MatchSummary {
        let mut s = MatchSummary { total: games.len() as u32, ..Default::default() };
        for g in games {
            match g.result {
                GameResult::P1Win => s.p1_wins += 1,
                GameResult::P2Win => s.p2_wins += 1,
                GameResult::Abandoned(_) => s.abandoned += 1,
            }
            match g.winning_agent() {
                Some(0) => s.a_wins += 1,
                Some(_) => s.b_wins += 1,
                None => {}
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("match records serialize")
    }
}

/// Plays one game; agent `agents[0]` moves for Player 1.
pub fn play_game(
    agents: [&dyn Agent; 2],
    random_opening_moves: u32,
    move_limit: u32,
    rng: &mut ChaCha8Rng,
) -> Result<(GameResult, Vec<MoveJson>, Vec<f64>), AgentError> {
    let mut state = GameState::new();
    let mut moves = Vec::new();
    let mut times = Vec::new();
    let result = loop {
        match state.winner() {
            Some(Player::One) => break GameResult::P1Win,
            Some(Player::Two) => break GameResult::P2Win,
            None => {}
        }
        if state.move_count() >= move_limit {
            break GameResult::Abandoned(AbandonReason::MoveLimit);
        }
        if state.detect_short_cycle() {
            break GameResult::Abandoned(AbandonReason::Cycle);
        }
        let player = state.current_player();
        let legal = state.legal_moves(player);
        if legal.is_empty() {
            break GameResult::Abandoned(AbandonReason::Blocked);
        }
        let start = Instant::now();
        let mv = if state.move_count() < 2 * random_opening_moves {
            *legal.choose(rng).unwrap()
        } else {
            agents[player.index()].select_move(&state, rng)?.mv
        };
        times.push(start.elapsed().as_secs_f64() * 1e3);
        state = state.apply_move(&mv)?;
        moves.push(MoveJson::from(&mv));
    };
    Ok((result, moves, times))
}

/// Plays `config.games` games, alternating who moves first. Game `i` uses a seed derived
/// from `(config.seed, i)`, so results do not depend on scheduling.
pub fn play_match(a: &dyn Agent, b: &dyn Agent, config: &MatchConfig) -> Result<(MatchRecord, MatchTimings), AgentError> {
    let run = |i: u32| -> Result<(GameRecord, Vec<f64>), AgentError> {
        let seed = derive_seed(config.seed, &[u64::from(i)]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_is_p1 = i % 2 == 0;
        let sides = if a_is_p1 { [a, b] } else { [b, a] };
        let (result, moves, times) = play_game(sides, config.random_opening_moves, config.move_limit, &mut rng)?;
        Ok((GameRecord { index: i, seed, a_is_p1, result, moves }, times))
    };
    let results: Vec<_> = crate::par_map((0..config.games).collect(), run);
    let mut games = Vec::with_capacity(results.len());
    let mut timings = MatchTimings::default();
    for r in results {
        let (g, t) = r?;
        games.push(g);
        timings.move_ms.push(t);
    }
    let record = MatchRecord {
        agents: [a.name(), b.name()],
        config: config.clone(),
        summary: MatchRecord::summarize(&games),
        games,
    };
    Ok((record, timings))
}

pub const ELO_K: f64 = 32.0;
pub const ELO_START: f64 = 1500.0;

pub fn expected_score(rating: f64, opponent: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((opponent - rating) / 400.0))
}

/// Sequential K=32 updates over decisive games; unknown agents start at 1500.
pub fn elo_update(ratings: &mut BTreeMap<String, f64>, record: &MatchRecord) {
    let [a, b] = &record.agents;
    if a == b {
        return;
    }
    for g in &record.games {
        let Some(w) = g.winning_agent() else { continue };
        let ra = *ratings.entry(a.clone()).or_insert(ELO_START);
        let rb = *ratings.entry(b.clone()).or_insert(ELO_START);
        let score_a = if w == 0 { 1.0 } else { 0.0 };
        let delta = ELO_K * (score_a - expected_score(ra, rb));
        ratings.insert(a.clone(), ra + delta);
        ratings.insert(b.clone(), rb - delta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentKind, AgentSpec};

    fn record(results: &[(bool, GameResult)]) -> MatchRecord {
        let games: Vec<GameRecord> = results
            .iter()
            .enumerate()
            .map(|(i, (a_is_p1, result))| GameRecord { index: i as u32, seed: 0, a_is_p1: *a_is_p1, result: *result, moves: vec![] })
            .collect();
        MatchRecord {
            agents: ["x".into(), "y".into()],
            config: MatchConfig::default(),
            summary: MatchRecord::summarize(&games),
            games,
        }
    }

    #[test]
    fn equal_ratings_one_win() {
        let mut r = BTreeMap::new();
        elo_update(&mut r, &record(&[(true, GameResult::P1Win)]));
        assert_eq!(r["x"], 1516.0);
        assert_eq!(r["y"], 1484.0);
    }

    #[test]
    fn no_games_no_change_and_sum_conserved() {
        let mut r = BTreeMap::from([("x".to_string(), 1600.0), ("y".to_string(), 1400.0)]);
        elo_update(&mut r, &record(&[]));
        assert_eq!(r["x"], 1600.0);
        let rec = record(&[
            (true, GameResult::P2Win),
            (false, GameResult::P2Win),
            (true, GameResult::Abandoned(AbandonReason::Cycle)),
        ]);
        elo_update(&mut r, &rec);
        assert!((r["x"] + r["y"] - 3000.0).abs() < 1e-9);
    }

    #[test]
    fn summary_counts_add_up() {
        let rec = record(&[
            (true, GameResult::P1Win),
            (false, GameResult::P1Win),
            (true, GameResult::Abandoned(AbandonReason::Blocked)),
        ]);
        assert_eq!(rec.summary.a_wins, 1);
        assert_eq!(rec.summary.b_wins, 1);
        assert_eq!(rec.summary.a_wins + rec.summary.b_wins + rec.summary.abandoned, rec.summary.total);
    }

    #[test]
    fn greedy_match_is_reproducible() {
        let a = AgentSpec::new(AgentKind::GreedyDet).build().unwrap();
        let b = AgentSpec::new(AgentKind::GreedyStoch).build().unwrap();
        let cfg = MatchConfig { games: 10, seed: 3, ..MatchConfig::default() };
        let (r1, _) = play_match(&*a, &*b, &cfg).unwrap();
        let (r2, _) = play_match(&*a, &*b, &cfg).unwrap();
        assert_eq!(r1.to_json(), r2.to_json());
        assert_eq!(r1.summary.total, 10);
        assert!(r1.games.iter().all(|g| g.moves.len() <= 100));
    }
}
