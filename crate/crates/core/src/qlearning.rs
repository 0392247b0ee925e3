//! Deep Q-learning baseline trained against the deterministic greedy player.
//!
//! The policy head's raw outputs are read as action values. Training regresses only the
//! chosen action's output; prediction takes the max over legal actions.

use std::cell::RefCell;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::game::{ActionIndex, ActionMask, GameState, Move, PackedInput, Player, ACTIONS, INPUT_LEN};
use crate::heuristics::{forward_distance, greedy_choice, GreedyMode};
use crate::nn::loss::huber;
use crate::nn::{NetArchitecture, Network, NnError, Sgd};
use crate::seeds::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum QError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QConfig {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon falls linearly; `None` means the first 10% of `episodes`.
    pub epsilon_decay_episodes: Option<u32>,
    pub discount: f64,
    pub learning_rate: f64,
    /// Final learning rate of a linear decay over all episodes; `None` keeps it constant.
    pub learning_rate_end: Option<f64>,
    pub momentum: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    /// Agent moves per episode.
    pub move_limit: u32,
    pub win_reward: f64,
    pub step_reward_scale: f64,
    /// Reward units per unit of network output. Regression and the Huber loss work in output
    /// units, so one row of forward progress is an error of 1 at the default.
    pub value_scale: f64,
    pub capacity: usize,
    pub prefill: usize,
    pub episodes: u32,
    /// Episodes between evaluation rounds; 0 disables periodic evaluation.
    pub eval_every: u32,
    pub eval_games: u32,
    pub architecture: NetArchitecture,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_episodes: None,
            discount: 0.99,
            learning_rate: 1e-4,
            learning_rate_end: None,
            momentum: 0.9,
            l2_lambda: 1e-4,
            batch_size: 32,
            move_limit: 40,
            win_reward: 10.0,
            step_reward_scale: 0.01,
            value_scale: 0.01,
            capacity: 1_000_000,
            prefill: 5_000,
            episodes: 20_000,
            eval_every: 2_000,
            eval_games: 10,
            architecture: NetArchitecture::tiny(),
            seed: 0,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<(), QError> {
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return Err(QError::Config("need 0 <= epsilon_end <= epsilon_start <= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(QError::Config("discount must be in [0, 1]".into()));
        }
        if !(self.value_scale > 0.0) {
            return Err(QError::Config("value_scale must be positive".into()));
        }
        if self.batch_size == 0 || self.capacity == 0 || self.prefill > self.capacity {
            return Err(QError::Config("need batch_size > 0 and prefill <= capacity".into()));
        }
        Ok(())
    }

    pub fn decay_episodes(&self) -> u32 {
        self.epsilon_decay_episodes.unwrap_or(self.episodes / 10)
    }
}

/// Exploration probability for `episode`: linear from start to end, then flat.
pub fn epsilon(episode: u32, cfg: &QConfig) -> f64 {
    let horizon = cfg.decay_episodes();
    if episode >= horizon {
        return cfg.epsilon_end;
    }
    let frac = episode as f64 / horizon as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

/// Learning rate used during `episode`.
pub fn learning_rate(episode: u32, cfg: &QConfig) -> f64 {
    match cfg.learning_rate_end {
        None => cfg.learning_rate,
        Some(end) => cfg.learning_rate + (end - cfg.learning_rate) * episode as f64 / cfg.episodes.max(1) as f64,
    }
}

/// Immediate reward for the mover of `mv`, given the position it produced.
pub fn shaped_reward(mv: &Move, next: &GameState, cfg: &QConfig) -> f64 {
    if next.winner() == Some(mv.player) {
        cfg.win_reward
    } else {
        cfg.step_reward_scale * forward_distance(mv) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: PackedInput,
    pub action: ActionIndex,
    pub reward: f32,
    pub next: PackedInput,
    /// Legal actions for the agent in `next`.
    pub next_mask: ActionMask,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer of transitions.
#[derive(Clone, Debug)]
pub struct ReplayPool {
    capacity: usize,
    prefill: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayPool {
    pub fn new(capacity: usize, prefill: usize) -> Self {
        ReplayPool { capacity, prefill, items: Vec::new(), cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Sampling is allowed once the pool holds at least the prefill count.
    pub fn is_ready(&self) -> bool {
        self.items.len() >= self.prefill.max(1)
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.items[slot]
    }

    /// Uniform slot indices, with replacement. `None` before the pool is ready.
    pub fn sample_slots<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        if !self.is_ready() {
            return None;
        }
        Some((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }
}

/// Mean Huber loss and mean absolute error of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QLoss {
    pub huber: f64,
    pub abs_error: f64,
}

/// Regression targets in output units: `r` for terminal transitions, else `r + γ·max` over the
/// legal next actions, all divided by `value_scale`.
pub fn q_targets(net: &Network, batch: &[&Transition], discount: f64, value_scale: f64) -> Vec<f32> {
    let mut rows = vec![0.0f32; batch.len() * INPUT_LEN];
    for (t, row) in batch.iter().zip(rows.chunks_mut(INPUT_LEN)) {
        t.next.unpack_into(row);
    }
    let refs: Vec<&[f32]> = rows.chunks(INPUT_LEN).collect();
    let q_next = net.forward_eval(&refs).logits;
    batch
        .iter()
        .zip(q_next.chunks(ACTIONS))
        .map(|(t, q)| {
            let best = t.next_mask.iter().map(|a| q[a.index()]).fold(f32::NEG_INFINITY, f32::max);
            let r = t.reward / value_scale as f32;
            if t.terminal || !best.is_finite() {
                r
            } else {
                r + discount as f32 * best
            }
        })
        .collect()
}

/// Output gradient for regressing each row's chosen action toward its target.
/// Returns the loss and a `batch × 294` gradient that is zero outside the chosen actions.
pub fn masked_huber_grad(q: &[f32], actions: &[ActionIndex], targets: &[f32]) -> (QLoss, Vec<f32>) {
    let b = actions.len();
    let mut grad = vec![0.0f32; q.len()];
    let mut loss = QLoss::default();
    for (i, (a, y)) in actions.iter().zip(targets).enumerate() {
        let k = i * ACTIONS + a.index();
        let e = q[k] - y;
        let (l, d) = huber(e);
        loss.huber += l as f64;
        loss.abs_error += e.abs() as f64;
        grad[k] = d / b as f32;
    }
    loss.huber /= b as f64;
    loss.abs_error /= b as f64;
    (loss, grad)
}

/// One gradient step on a sampled minibatch.
pub fn q_update(net: &mut Network, opt: &mut Sgd<f32>, batch: &[&Transition], cfg: &QConfig) -> Result<QLoss, NnError> {
    let targets = q_targets(net, batch, cfg.discount, cfg.value_scale);
    let mut rows = vec![0.0f32; batch.len() * INPUT_LEN];
    for (t, row) in batch.iter().zip(rows.chunks_mut(INPUT_LEN)) {
        t.state.unpack_into(row);
    }
    let refs: Vec<&[f32]> = rows.chunks(INPUT_LEN).collect();
    net.zero_grad();
    let (out, trace) = net.forward_train(&refs);
    let actions: Vec<ActionIndex> = batch.iter().map(|t| t.action).collect();
    let (loss, grad) = masked_huber_grad(&out.logits, &actions, &targets);
    let dvalue = vec![0.0f32; out.value_logits.len()];
    net.backward(&trace, &grad, &dvalue);
    net.add_l2_grad(cfg.l2_lambda as f32);
    if !loss.huber.is_finite() {
        return Err(NnError::Diverged);
    }
    opt.step(net);
    if !net.is_finite() {
        return Err(NnError::Diverged);
    }
    Ok(loss)
}

/// Legal move with the largest action value, or a random legal move with probability `eps`.
pub fn epsilon_greedy<R: Rng + ?Sized>(net: &Network, state: &GameState, moves: &[Move], eps: f64, rng: &mut R) -> Move {
    if rng.random::<f64>() < eps {
        return *moves.choose(rng).expect("non-empty move list");
    }
    let q = net.forward_eval(&[&state.encode_input()]).logits;
    let mut best = moves[0];
    let mut best_q = f32::NEG_INFINITY;
    for m in moves {
        let v = q[state.action_index(m).index()];
        if v > best_q {
            best = *m;
            best_q = v;
        }
    }
    best
}

/// How a game against the greedy player ended, from the agent's side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    Win,
    Loss,
    Blocked,
    MoveLimit,
}

/// One game as Player 1 against the deterministic greedy player. `choose` picks the agent's
/// move; `on_step` sees each agent transition and may train on it.
pub fn play_episode<R, C, S>(cfg: &QConfig, rng: &mut R, mut choose: C, mut on_step: S) -> Result<(f64, u32, EpisodeEnd), NnError>
where
    R: Rng + ?Sized,
    C: FnMut(&GameState, &[Move], &mut R) -> Move,
    S: FnMut(Transition, &mut R) -> Result<(), NnError>,
{
    let agent = Player::One;
    let mut state = GameState::new();
    let mut total = 0.0;
    let mut steps = 0;
    let end = loop {
        let moves = state.legal_moves(agent);
        if moves.is_empty() {
            break EpisodeEnd::Blocked;
        }
        let mv = choose(&state, &moves, rng);
        let action = state.action_index(&mv);
        let mut next = state.apply_unchecked(&mv);
        let reward = shaped_reward(&mv, &next, cfg);
        total += reward;
        steps += 1;
        let mut end = None;
        if next.winner() == Some(agent) {
            end = Some(EpisodeEnd::Win);
        } else {
            let replies = next.legal_moves(agent.opponent());
            if replies.is_empty() {
                end = Some(EpisodeEnd::Blocked);
            } else {
                next = next.apply_unchecked(&greedy_choice(&replies, GreedyMode::Deterministic, rng));
                if next.winner() == Some(agent.opponent()) {
                    end = Some(EpisodeEnd::Loss);
                } else if !next.has_legal_move(agent) {
                    end = Some(EpisodeEnd::Blocked);
                }
            }
        }
        on_step(
            Transition {
                state: state.encode_packed(),
                action,
                reward: reward as f32,
                next: next.encode_packed(),
                next_mask: if end.is_some() { ActionMask::default() } else { next.legal_mask() },
                terminal: end.is_some(),
            },
            rng,
        )?;
        if let Some(e) = end {
            break e;
        }
        if steps >= cfg.move_limit {
            break EpisodeEnd::MoveLimit;
        }
        state = next;
    };
    Ok((total, steps, end))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEpisodeStats {
    pub episode: u32,
    pub epsilon: f64,
    pub agent_moves: u32,
    pub reward: f64,
    pub end: EpisodeEnd,
    pub updates: u32,
    /// Mean over this episode's updates; zero when there were none.
    pub loss: QLoss,
}

/// One row of the reward trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardPoint {
    pub episode: u32,
    pub test_game: u32,
    pub accumulated_reward: f64,
}

pub fn write_reward_trace<W: Write>(mut out: W, trace: &[RewardPoint]) -> std::io::Result<()> {
    writeln!(out, "episode,test_game,accumulated_reward")?;
    for p in trace {
        writeln!(out, "{},{},{}", p.episode, p.test_game, p.accumulated_reward)?;
    }
    Ok(())
}

/// Accumulated reward of `games` test games played by `choose` against the greedy player.
pub fn evaluate_rewards<C>(cfg: &QConfig, games: u32, seed: u64, choose: C) -> Vec<f64>
where
    C: Fn(&GameState, &[Move], &mut ChaCha8Rng) -> Move + Sync + Send,
{
    crate::par_map((0..games).collect(), |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(g)]));
        play_episode(cfg, &mut rng, &choose, |_, _| Ok(())).map(|r| r.0).unwrap_or(0.0)
    })
}

/// Test-game rewards of the greedy-in-Q policy.
pub fn evaluate_q_agent(net: &Network, cfg: &QConfig, games: u32, seed: u64) -> Vec<f64> {
    evaluate_rewards(cfg, games, seed, |s, m, r| epsilon_greedy(net, s, m, 0.0, r))
}

/// Test-game rewards of a uniformly random player.
pub fn evaluate_random_agent(cfg: &QConfig, games: u32, seed: u64) -> Vec<f64> {
    evaluate_rewards(cfg, games, seed, |_, m, r| *m.choose(r).expect("non-empty move list"))
}

pub struct QOutcome {
    pub net: Network,
    pub episodes: Vec<QEpisodeStats>,
    pub reward_trace: Vec<RewardPoint>,
}

/// Full training run; `on_episode` sees each episode's statistics.
pub fn run_qlearning(cfg: &QConfig, mut on_episode: impl FnMut(&QEpisodeStats)) -> Result<QOutcome, QError> {
    cfg.validate()?;
    let net = RefCell::new(Network::new(&cfg.architecture, derive_seed(cfg.seed, &[0])));
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut pool = ReplayPool::new(cfg.capacity, cfg.prefill);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut episodes = Vec::with_capacity(cfg.episodes as usize);
    let mut reward_trace = Vec::new();
    for episode in 0..cfg.episodes {
        let eps = epsilon(episode, cfg);
        opt.learning_rate = learning_rate(episode, cfg) as f32;
        let mut updates = 0u32;
        let mut loss = QLoss::default();
        let (reward, agent_moves, end) = play_episode(
            cfg,
            &mut rng,
            |s, m, r| epsilon_greedy(&net.borrow(), s, m, eps, r),
            |t, r| {
                pool.push(t);
                if let Some(slots) = pool.sample_slots(cfg.batch_size, r) {
                    let batch: Vec<&Transition> = slots.iter().map(|&i| pool.get(i)).collect();
                    let l = q_update(&mut net.borrow_mut(), &mut opt, &batch, cfg)?;
                    loss.huber += l.huber;
                    loss.abs_error += l.abs_error;
                    updates += 1;
                }
                Ok(())
            },
        )?;
        if updates > 0 {
            loss.huber /= updates as f64;
            loss.abs_error /= updates as f64;
        }
        let stats = QEpisodeStats { episode, epsilon: eps, agent_moves, reward, end, updates, loss };
        on_episode(&stats);
        episodes.push(stats);
        if cfg.eval_every > 0 && (episode + 1) % cfg.eval_every == 0 {
            let rewards = evaluate_q_agent(&net.borrow(), cfg, cfg.eval_games, derive_seed(cfg.seed, &[2, u64::from(episode)]));
            reward_trace.extend(rewards.into_iter().enumerate().map(|(g, r)| RewardPoint {
                episode: episode + 1,
                test_game: g as u32,
                accumulated_reward: r,
            }));
        }
    }
    Ok(QOutcome { net: net.into_inner(), episodes, reward_trace })
}

/// Least-squares slope of `values` against their index.
pub fn linear_trend(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}
