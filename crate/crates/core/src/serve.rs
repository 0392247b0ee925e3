//! Transport-independent game sessions behind the play service.
//!
//! Each session owns one authoritative [`GameState`]. Commands on a session are serialized by
//! its lock; rejected commands never change the state.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError, AgentKind, AgentSpec, SearchStats};
use crate::game::{Cell, GameError, GameState, Move, MoveJson, StateJson};
use crate::mcts::SearchConfig;
use crate::nn::Network;

/// Search budget per agent move unless the session asks otherwise.
pub const DEFAULT_SIMULATIONS: u32 = 180;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("agent {0} is not available on this server")]
    AgentUnavailable(AgentKind),
    #[error("game is over")]
    GameOver,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl ServeError {
    /// HTTP-style status code for the error.
    pub fn status(&self) -> u16 {
        match self {
            ServeError::UnknownSession(_) => 404,
            ServeError::BadRequest(_) | ServeError::Game(_) => 400,
            ServeError::AgentUnavailable(_) | ServeError::GameOver => 409,
            ServeError::Agent(_) => 500,
        }
    }
}

/// Body of an error response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl From<&ServeError> for ErrorBody {
    fn from(e: &ServeError) -> Self {
        ErrorBody { error: e.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateRequest {
    pub agent: AgentKind,
    pub sims: u32,
    /// 1 or 2; the agent plays the other side.
    pub human_player: u8,
    pub seed: u64,
}

impl Default for CreateRequest {
    fn default() -> Self {
        CreateRequest { agent: AgentKind::GreedyDet, sims: DEFAULT_SIMULATIONS, human_player: 1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub state: StateJson,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalResponse {
    pub from: [u8; 2],
    pub destinations: Vec<[u8; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveRequest {
    pub from: [u8; 2],
    pub to: [u8; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveResponse {
    pub state: StateJson,
    pub winner: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMoveResponse {
    #[serde(rename = "move")]
    pub mv: MoveJson,
    pub state: StateJson,
    pub winner: Option<u8>,
    pub search_stats: Option<SearchStats>,
}

/// Parses `"r,c"` with 1-based coordinates.
pub fn parse_cell(text: &str) -> Result<Cell, ServeError> {
    let bad = || ServeError::BadRequest(format!("expected \"row,col\", got {text:?}"));
    let (r, c) = text.split_once(',').ok_or_else(bad)?;
    let r: i64 = r.trim().parse().map_err(|_| bad())?;
    let c: i64 = c.trim().parse().map_err(|_| bad())?;
    Ok(Cell::from_coords(r, c)?)
}

fn coords(c: Cell) -> [u8; 2] {
    [c.row(), c.col()]
}

fn winner_of(state: &GameState) -> Option<u8> {
    state.winner().map(|p| p.value())
}

pub struct Session {
    state: GameState,
    agent: Box<dyn Agent>,
    rng: ChaCha8Rng,
    human_player: u8,
}

impl Session {
    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn human_player(&self) -> u8 {
        self.human_player
    }

    pub fn agent_name(&self) -> String {
        self.agent.name()
    }

    pub fn legal_destinations(&self, from: Cell) -> LegalResponse {
        let player = self.state.current_player();
        let destinations = self
            .state
            .legal_moves(player)
            .into_iter()
            .filter(|m| m.from == from)
            .map(|m| coords(m.to))
            .collect();
        LegalResponse { from: coords(from), destinations }
    }

    pub fn apply(&mut self, req: &MoveRequest) -> Result<MoveResponse, ServeError> {
        if self.state.winner().is_some() {
            return Err(ServeError::GameOver);
        }
        let from = Cell::from_coords(req.from[0].into(), req.from[1].into())?;
        let to = Cell::from_coords(req.to[0].into(), req.to[1].into())?;
        let mv = Move::new(from, to, self.state.current_player());
        self.state = self.state.apply_move(&mv)?;
        Ok(MoveResponse { state: self.state.to_json(), winner: winner_of(&self.state) })
    }

    pub fn agent_move(&mut self) -> Result<AgentMoveResponse, ServeError> {
        if self.state.winner().is_some() {
            return Err(ServeError::GameOver);
        }
        let chosen = self.agent.select_move(&self.state, &mut self.rng)?;
        self.state = self.state.apply_move(&chosen.mv)?;
        Ok(AgentMoveResponse {
            mv: MoveJson::from(&chosen.mv),
            state: self.state.to_json(),
            winner: winner_of(&self.state),
            search_stats: chosen.stats,
        })
    }
}

/// All live sessions plus the networks that agents may use.
pub struct SessionStore {
    nets: BTreeMap<AgentKind, Arc<Network>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl SessionStore {
    /// `nets` supplies the network for each net-backed agent kind the server offers.
    pub fn new(nets: BTreeMap<AgentKind, Arc<Network>>) -> Self {
        SessionStore { nets, sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1) }
    }

    pub fn available_agents(&self) -> Vec<AgentKind> {
        AgentKind::ALL.into_iter().filter(|k| !k.needs_checkpoint() || self.nets.contains_key(k)).collect()
    }

    pub fn create(&self, req: &CreateRequest) -> Result<CreateResponse, ServeError> {
        if !matches!(req.human_player, 1 | 2) {
            return Err(ServeError::BadRequest("human_player must be 1 or 2".into()));
        }
        if req.sims == 0 {
            return Err(ServeError::BadRequest("sims must be positive".into()));
        }
        let net = if req.agent.needs_checkpoint() {
            Some(self.nets.get(&req.agent).cloned().ok_or(ServeError::AgentUnavailable(req.agent))?)
        } else {
            None
        };
        let spec = AgentSpec::new(req.agent)
            .with_search(SearchConfig::default().with_simulations(req.sims).with_temperature(0.01));
        let agent = spec.build_with(net)?;
        let session = Session {
            state: GameState::new(),
            agent,
            rng: ChaCha8Rng::seed_from_u64(req.seed),
            human_player: req.human_player,
        };
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let state = session.state.to_json();
        self.sessions.lock().unwrap().insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(CreateResponse { session_id: id, state })
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServeError> {
        self.sessions.lock().unwrap().get(id).cloned().ok_or_else(|| ServeError::UnknownSession(id.to_string()))
    }

    /// Runs `f` with exclusive access to the session.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ServeError>) -> Result<T, ServeError> {
        let session = self.get(id)?;
        let mut guard = session.lock().unwrap();
        f(&mut guard)
    }

    pub fn state(&self, id: &str) -> Result<StateJson, ServeError> {
        self.with_session(id, |s| Ok(s.state.to_json()))
    }

    pub fn legal(&self, id: &str, from: &str) -> Result<LegalResponse, ServeError> {
        let from = parse_cell(from)?;
        self.with_session(id, |s| Ok(s.legal_destinations(from)))
    }

    pub fn apply_move(&self, id: &str, req: &MoveRequest) -> Result<MoveResponse, ServeError> {
        self.with_session(id, |s| s.apply(req))
    }

    pub fn agent_move(&self, id: &str) -> Result<AgentMoveResponse, ServeError> {
        self.with_session(id, |s| s.agent_move())
    }

    pub fn remove(&self, id: &str) -> bool {
        self.sessions.lock().unwrap().remove(id).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Player;

    fn store() -> SessionStore {
        SessionStore::new(BTreeMap::new())
    }

    #[test]
    fn create_gives_standard_start() {
        let s = store();
        let r = s.create(&CreateRequest::default()).unwrap();
        assert_eq!(r.state, GameState::new().to_json());
        assert_eq!(r.state.matrix.iter().flatten().count(), 49);
    }

    #[test]
    fn legal_matches_engine() {
        let s = store();
        let id = s.create(&CreateRequest::default()).unwrap().session_id;
        let start = GameState::new();
        for cell in Cell::all() {
            let mut want: Vec<[u8; 2]> =
                start.legal_moves(Player::One).iter().filter(|m| m.from == cell).map(|m| coords(m.to)).collect();
            let mut got = s.legal(&id, &format!("{},{}", cell.row(), cell.col())).unwrap().destinations;
            want.sort();
            got.sort();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn illegal_move_leaves_state() {
        let s = store();
        let id = s.create(&CreateRequest::default()).unwrap().session_id;
        let before = s.state(&id).unwrap();
        let err = s.apply_move(&id, &MoveRequest { from: [1, 1], to: [4, 4] }).unwrap_err();
        assert_eq!(err.status(), 400);
        let err = s.apply_move(&id, &MoveRequest { from: [0, 1], to: [4, 4] }).unwrap_err();
        assert_eq!(err.status(), 400);
        assert_eq!(s.state(&id).unwrap(), before);
    }

    #[test]
    fn move_then_agent_reply() {
        let s = store();
        let id = s.create(&CreateRequest::default()).unwrap().session_id;
        let mv = GameState::new().legal_moves(Player::One)[0];
        let r = s.apply_move(&id, &MoveRequest { from: coords(mv.from), to: coords(mv.to) }).unwrap();
        assert_eq!(r.state.player, 2);
        assert_eq!(r.winner, None);
        let a = s.agent_move(&id).unwrap();
        assert_eq!(a.mv.player, Some(2));
        assert_eq!(a.state.player, 1);
    }

    #[test]
    fn unknown_session_and_missing_net() {
        let s = store();
        assert_eq!(s.state("nope").unwrap_err().status(), 404);
        let req = CreateRequest { agent: AgentKind::MctsNet, ..Default::default() };
        assert!(matches!(s.create(&req), Err(ServeError::AgentUnavailable(_))));
        assert!(parse_cell("3;4").is_err());
        assert!(parse_cell("8,1").is_err());
    }
}
