//! Move-choosing agents shared by the arena, training and the play server.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::game::{GameError, GameState, Move};
use crate::heuristics::{greedy_policy, HeuristicConfig};
use crate::mcts::{search, SearchConfig, SearchError};
use crate::nn::{load_checkpoint, Network, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    GreedyDet,
    GreedyStoch,
    MctsNet,
    QlearningNet,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] =
        [AgentKind::GreedyDet, AgentKind::GreedyStoch, AgentKind::MctsNet, AgentKind::QlearningNet, AgentKind::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::GreedyDet => "greedy-det",
            AgentKind::GreedyStoch => "greedy-stoch",
            AgentKind::MctsNet => "mcts-net",
            AgentKind::QlearningNet => "qlearning-net",
            AgentKind::Random => "random",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, AgentKind::MctsNet | AgentKind::QlearningNet)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AgentError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("unknown agent kind {0:?}")]
    UnknownKind(String),
    #[error("agent {0} needs a checkpoint")]
    MissingCheckpoint(AgentKind),
    #[error("failed to load checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: NnError },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Declarative agent description, as given on the command line or in a session request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub search: SearchConfig,
}

impl AgentSpec {
    pub fn new(kind: AgentKind) -> Self {
        AgentSpec { kind, checkpoint: None, search: SearchConfig::default() }
    }

    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn with_search(mut self, search: SearchConfig) -> Self {
        self.search = search;
        self
    }

    /// Loads checkpoints and builds the agent.
    pub fn build(&self) -> Result<Box<dyn Agent>, AgentError> {
        let net = match (&self.checkpoint, self.kind.needs_checkpoint()) {
            (_, false) => None,
            (None, true) => return Err(AgentError::MissingCheckpoint(self.kind)),
            (Some(path), true) => Some(Arc::new(
                load_checkpoint(path).map_err(|source| AgentError::Checkpoint { path: path.clone(), source })?,
            )),
        };
        self.build_with(net)
    }

    /// Builds the agent around an already loaded network.
    pub fn build_with(&self, net: Option<Arc<Network>>) -> Result<Box<dyn Agent>, AgentError> {
        Ok(match self.kind {
            AgentKind::GreedyDet => Box::new(GreedyAgent::new(HeuristicConfig::deterministic())),
            AgentKind::GreedyStoch => Box::new(GreedyAgent::new(HeuristicConfig::stochastic())),
            AgentKind::Random => Box::new(RandomAgent),
            AgentKind::MctsNet => {
                self.search.validate()?;
                let net = net.ok_or(AgentError::MissingCheckpoint(self.kind))?;
                Box::new(MctsAgent::new(net, self.search.clone()))
            }
            AgentKind::QlearningNet => Box::new(QAgent::new(net.ok_or(AgentError::MissingCheckpoint(self.kind))?)),
        })
    }
}

/// Root statistics of a search-based decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub sims: u32,
    pub root_visits: Vec<RootVisit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootVisit {
    pub from: [u8; 2],
    pub to: [u8; 2],
    pub visits: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentMove {
    pub mv: Move,
    pub stats: Option<SearchStats>,
}

impl From<Move> for AgentMove {
    fn from(mv: Move) -> Self {
        AgentMove { mv, stats: None }
    }
}

/// A stateless move chooser. Randomness comes only from the supplied generator.
pub trait Agent: Send + Sync {
    fn name(&self) -> String;
    fn select_move(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<AgentMove, AgentError>;
}

pub struct GreedyAgent {
    config: HeuristicConfig,
}

impl GreedyAgent {
    pub fn new(config: HeuristicConfig) -> Self {
        GreedyAgent { config }
    }
}

impl Agent for GreedyAgent {
    fn name(&self) -> String {
        match self.config.mode {
            crate::heuristics::GreedyMode::Deterministic => "greedy-det".into(),
            crate::heuristics::GreedyMode::Stochastic => "greedy-stoch".into(),
        }
    }

    fn select_move(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<AgentMove, AgentError> {
        Ok(greedy_policy(state, &self.config, rng)?.into())
    }
}

pub struct RandomAgent;

impl Agent for RandomAgent {
    fn name(&self) -> String {
        "random".into()
    }

    fn select_move(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<AgentMove, AgentError> {
        let player = state.current_player();
        let moves = state.legal_moves(player);
        Ok((*moves.choose(rng).ok_or(GameError::Blocked(player))?).into())
    }
}

pub struct MctsAgent {
    net: Arc<Network>,
    config: SearchConfig,
}

impl MctsAgent {
    pub fn new(net: Arc<Network>, config: SearchConfig) -> Self {
        MctsAgent { net, config }
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }
}

impl Agent for MctsAgent {
    fn name(&self) -> String {
        "mcts-net".into()
    }

    fn select_move(&self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<AgentMove, AgentError> {
        let result = search(state, &*self.net, &self.config, rng)?;
        let root_visits = result
            .root_visits
            .iter()
            .map(|(m, n)| RootVisit {
                from: [m.from.row(), m.from.col()],
                to: [m.to.row(), m.to.col()],
                visits: *n,
            })
            .collect();
        Ok(AgentMove { mv: result.mv, stats: Some(SearchStats { sims: result.simulations, root_visits }) })
    }
}

/// Acts greedily on the raw network outputs read as action values.
pub struct QAgent {
    net: Arc<Network>,
}

impl QAgent {
    pub fn new(net: Arc<Network>) -> Self {
        QAgent { net }
    }
}

/// Legal move with the largest predicted action value (first on ties).
pub fn argmax_q(net: &Network, state: &GameState) -> Result<Move, GameError> {
    let player = state.current_player();
    let moves = state.legal_moves(player);
    if moves.is_empty() {
        return Err(GameError::Blocked(player));
    }
    let q = net.forward_eval(&[&state.encode_input()]).logits;
    let mut best = moves[0];
    let mut best_q = f32::NEG_INFINITY;
    for m in &moves {
        let v = q[state.action_index(m).index()];
        if v > best_q {
            best = *m;
            best_q = v;
        }
    }
    Ok(best)
}

impl Agent for QAgent {
    fn name(&self) -> String {
        "qlearning-net".into()
    }

    fn select_move(&self, state: &GameState, _rng: &mut ChaCha8Rng) -> Result<AgentMove, AgentError> {
        Ok(argmax_q(&self.net, state)?.into())
    }
}
