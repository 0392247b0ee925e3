//! Browser front end for the engine: click to move, ask an agent to reply.

use ccheckers::agents::{AgentKind, AgentSpec};
use ccheckers::game::{Cell, GameState, Move, MoveJson, StateJson};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct View {
    state: StateJson,
    winner: Option<u8>,
    last: Option<MoveJson>,
}

fn cell(row: u8, col: u8) -> Result<Cell, String> {
    Cell::from_coords(row.into(), col.into()).map_err(|e| e.to_string())
}

/// One game in progress, playable from JavaScript.
#[wasm_bindgen]
pub struct Board {
    state: GameState,
    last: Option<Move>,
    rng: ChaCha8Rng,
}

#[wasm_bindgen]
impl Board {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Board {
        Board { state: GameState::new(), last: None, rng: ChaCha8Rng::seed_from_u64(seed.into()) }
    }

    /// Current position as JSON: `{state, winner, last}`.
    pub fn view(&self) -> String {
        let v = View {
            state: self.state.to_json(),
            winner: self.state.winner().map(|p| p.value()),
            last: self.last.as_ref().map(MoveJson::from),
        };
        serde_json::to_string(&v).unwrap_or_default()
    }

    /// Destinations reachable from `(row, col)` for the side to move, as `[[r, c], ...]`.
    pub fn destinations(&self, row: u8, col: u8) -> Result<String, String> {
        let from = cell(row, col)?;
        let dests: Vec<[u8; 2]> = self
            .state
            .legal_moves(self.state.current_player())
            .into_iter()
            .filter(|m| m.from == from)
            .map(|m| [m.to.row(), m.to.col()])
            .collect();
        serde_json::to_string(&dests).map_err(|e| e.to_string())
    }

    /// Plays a move for the side to move and returns the new view.
    pub fn play(&mut self, from_row: u8, from_col: u8, to_row: u8, to_col: u8) -> Result<String, String> {
        if self.state.winner().is_some() {
            return Err("game is over".into());
        }
        let mv = Move::new(cell(from_row, from_col)?, cell(to_row, to_col)?, self.state.current_player());
        self.state = self.state.apply_move(&mv).map_err(|e| e.to_string())?;
        self.last = Some(mv);
        Ok(self.view())
    }

    /// Lets `agent` ("greedy-det", "greedy-stoch" or "random") move for the side to move.
    pub fn reply(&mut self, agent: &str) -> Result<String, String> {
        if self.state.winner().is_some() {
            return Err("game is over".into());
        }
        let kind: AgentKind = agent.parse().map_err(|e: ccheckers::agents::AgentError| e.to_string())?;
        let agent = AgentSpec::new(kind).build_with(None).map_err(|e| e.to_string())?;
        let chosen = agent.select_move(&self.state, &mut self.rng).map_err(|e| e.to_string())?;
        self.state = self.state.apply_move(&chosen.mv).map_err(|e| e.to_string())?;
        self.last = Some(chosen.mv);
        Ok(self.view())
    }

    pub fn reset(&mut self) {
        self.state = GameState::new();
        self.last = None;
    }
}
