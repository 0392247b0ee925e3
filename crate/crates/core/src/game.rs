//! Rules engine for the two-player, six-checker diamond board.
//!
//! The board is a 7×7 matrix addressed with 1-based `(row, col)` pairs.
//! Player 1 starts in the bottom-left corner (cells with `row - col >= 4`)
//! and races to the top-right corner (`col - row >= 4`); Player 2 does the
//! opposite. Each checker carries a persistent ID in `1..=6` so that an
//! action can be named by `(checker id, destination)`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SIZE: usize = 7;
pub const CELLS: usize = SIZE * SIZE;
pub const CHECKERS: usize = 6;
pub const ACTIONS: usize = CHECKERS * CELLS;
pub const HISTORY_LEN: usize = 16;
pub const INPUT_PLANES: usize = 7;
pub const INPUT_LEN: usize = INPUT_PLANES * CELLS;

/// Neighbor offsets `(d_row, d_col)` of the hexagonal embedding.
pub const DIRECTIONS: [(i8, i8); 6] = [(-1, 0), (1, 0), (0, -1), (0, 1), (1, 1), (-1, -1)];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("illegal move {0}")]
    IllegalMove(Move),
    #[error("coordinate ({0}, {1}) is off the board")]
    OffBoard(i64, i64),
    #[error("player {0} has no legal move")]
    Blocked(Player),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub fn value(self) -> u8 {
        match self {
            Player::One => 1,
            Player::Two => 2,
        }
    }

    pub fn from_value(v: u8) -> Option<Player> {
        match v {
            1 => Some(Player::One),
            2 => Some(Player::Two),
            _ => None,
        }
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Signed progress of a cell toward this player's goal corner.
    pub fn progress(self, cell: Cell) -> i32 {
        let diff = cell.col() as i32 - cell.row() as i32;
        match self {
            Player::One => diff,
            Player::Two => -diff,
        }
    }
}

impl TryFrom<u8> for Player {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Player::from_value(v).ok_or_else(|| format!("player must be 1 or 2, got {v}"))
    }
}

impl From<Player> for u8 {
    fn from(p: Player) -> u8 {
        p.value()
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// A board cell, stored as a row-major index in `0..49`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Cell(u8);

impl Cell {
    /// Builds a cell from 1-based coordinates.
    pub fn new(row: u8, col: u8) -> Option<Cell> {
        if (1..=7).contains(&row) && (1..=7).contains(&col) {
            Some(Cell((row - 1) * 7 + (col - 1)))
        } else {
            None
        }
    }

    pub fn from_coords(row: i64, col: i64) -> Result<Cell, GameError> {
        if (1..=7).contains(&row) && (1..=7).contains(&col) {
            Ok(Cell(((row - 1) * 7 + (col - 1)) as u8))
        } else {
            Err(GameError::OffBoard(row, col))
        }
    }

    pub fn from_index(index: usize) -> Cell {
        assert!(index < CELLS, "cell index {index} out of range");
        Cell(index as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn row(self) -> u8 {
        self.0 / 7 + 1
    }

    pub fn col(self) -> u8 {
        self.0 % 7 + 1
    }

    pub fn bit(self) -> u64 {
        1u64 << self.0
    }

    /// Reflection about the bottom-left/top-right diagonal: `(r, c) -> (8 - c, 8 - r)`.
    pub fn mirror(self) -> Cell {
        Cell::new(8 - self.col(), 8 - self.row()).unwrap()
    }

    pub fn offset(self, d_row: i8, d_col: i8) -> Option<Cell> {
        let r = self.row() as i8 + d_row;
        let c = self.col() as i8 + d_col;
        if (1..=7).contains(&r) && (1..=7).contains(&c) {
            Cell::new(r as u8, c as u8)
        } else {
            None
        }
    }

    pub fn all() -> impl Iterator<Item = Cell> {
        (0..CELLS as u8).map(Cell)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row(), self.col())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Move {
    pub from: Cell,
    pub to: Cell,
    pub player: Player,
}

impl Move {
    pub fn new(from: Cell, to: Cell, player: Player) -> Move {
        Move { from, to, player }
    }

    pub fn reversed(self) -> Move {
        Move { from: self.to, to: self.from, player: self.player }
    }

    pub fn mirror(self) -> Move {
        Move { from: self.from.mirror(), to: self.to.mirror(), player: self.player }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{} {}->{}", self.player, self.from, self.to)
    }
}

/// Index into the 294-wide policy vector: `(id - 1) * 49 + (row - 1) * 7 + (col - 1)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ActionIndex(u16);

impl ActionIndex {
    pub fn new(checker_id: u8, dest: Cell) -> ActionIndex {
        assert!((1..=6).contains(&checker_id), "checker id {checker_id} out of range");
        ActionIndex((checker_id as u16 - 1) * CELLS as u16 + dest.0 as u16)
    }

    pub fn from_index(index: usize) -> Option<ActionIndex> {
        (index < ACTIONS).then_some(ActionIndex(index as u16))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn checker_id(self) -> u8 {
        (self.0 / CELLS as u16) as u8 + 1
    }

    pub fn dest(self) -> Cell {
        Cell((self.0 % CELLS as u16) as u8)
    }

    pub fn mirror(self) -> ActionIndex {
        ActionIndex::new(self.checker_id(), self.dest().mirror())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct GameMatrix([u8; CELLS]);

impl GameMatrix {
    pub fn empty() -> GameMatrix {
        GameMatrix([0; CELLS])
    }

    pub fn get(&self, cell: Cell) -> u8 {
        self.0[cell.index()]
    }

    pub fn at(&self, row: u8, col: u8) -> u8 {
        self.get(Cell::new(row, col).expect("coordinates on board"))
    }

    pub fn owner(&self, cell: Cell) -> Option<Player> {
        Player::from_value(self.get(cell))
    }

    pub fn cells(&self) -> &[u8; CELLS] {
        &self.0
    }

    pub fn count(&self, value: u8) -> usize {
        self.0.iter().filter(|&&v| v == value).count()
    }

    pub fn rows(&self) -> [[u8; SIZE]; SIZE] {
        let mut out = [[0; SIZE]; SIZE];
        for cell in Cell::all() {
            out[cell.row() as usize - 1][cell.col() as usize - 1] = self.get(cell);
        }
        out
    }

    pub fn from_rows(rows: &[[u8; SIZE]; SIZE]) -> Result<GameMatrix, GameError> {
        let mut m = GameMatrix::empty();
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > 2 {
                    return Err(GameError::InvalidState(format!("cell value {v} not in 0..=2")));
                }
                m.0[r * SIZE + c] = v;
            }
        }
        Ok(m)
    }

    pub fn mirror(&self) -> GameMatrix {
        let mut m = GameMatrix::empty();
        for cell in Cell::all() {
            m.0[cell.mirror().index()] = self.get(cell);
        }
        m
    }

    fn set(&mut self, cell: Cell, value: u8) {
        self.0[cell.index()] = value;
    }
}

/// Position<->ID lookup tables for both players.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct CheckerIds {
    /// ID of the checker on each cell (0 when empty); ownership comes from the matrix.
    pos_to_id: [u8; CELLS],
    id_to_pos: [[Cell; CHECKERS]; 2],
}

impl CheckerIds {
    pub fn id_at(&self, cell: Cell) -> Option<u8> {
        match self.pos_to_id[cell.index()] {
            0 => None,
            id => Some(id),
        }
    }

    pub fn position(&self, player: Player, id: u8) -> Cell {
        self.id_to_pos[player.index()][id as usize - 1]
    }

    pub fn positions(&self, player: Player) -> &[Cell; CHECKERS] {
        &self.id_to_pos[player.index()]
    }

    fn relocate(&mut self, player: Player, from: Cell, to: Cell) {
        let id = self.pos_to_id[from.index()];
        debug_assert!(id != 0);
        self.pos_to_id[from.index()] = 0;
        self.pos_to_id[to.index()] = id;
        self.id_to_pos[player.index()][id as usize - 1] = to;
    }

    fn from_positions(positions: [[Cell; CHECKERS]; 2]) -> CheckerIds {
        let mut pos_to_id = [0u8; CELLS];
        for side in &positions {
            for (i, cell) in side.iter().enumerate() {
                pos_to_id[cell.index()] = i as u8 + 1;
            }
        }
        CheckerIds { pos_to_id, id_to_pos: positions }
    }

    fn mirror(&self) -> CheckerIds {
        let mut positions = self.id_to_pos;
        for side in positions.iter_mut() {
            for cell in side.iter_mut() {
                *cell = cell.mirror();
            }
        }
        CheckerIds::from_positions(positions)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct HistoryEntry {
    pub mv: Move,
    /// Board as it stood before `mv` was played.
    pub before: GameMatrix,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Outcome {
    Win(Player),
    Blocked(Player),
    Ongoing,
}

/// Immutable game position. `apply_move` returns a fresh value.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct GameState {
    matrix: GameMatrix,
    ids: CheckerIds,
    occupancy: [u64; 2],
    current: Player,
    history: [Option<HistoryEntry>; HISTORY_LEN],
    history_len: u8,
    move_count: u32,
}

/// Start cells of Player 1 in ID order; Player 2 uses the transposed cells.
const P1_START: [(u8, u8); CHECKERS] = [(7, 1), (6, 1), (7, 2), (5, 1), (6, 2), (7, 3)];

fn start_region(player: Player) -> u64 {
    Cell::all()
        .filter(|c| -player.progress(*c) >= 4)
        .fold(0, |m, c| m | c.bit())
}

fn goal_region(player: Player) -> u64 {
    Cell::all().filter(|c| player.progress(*c) >= 4).fold(0, |m, c| m | c.bit())
}

/// Cells a player must fill to win.
pub fn goal_mask(player: Player) -> u64 {
    goal_region(player)
}

pub fn home_mask(player: Player) -> u64 {
    start_region(player)
}

impl Default for GameState {
    fn default() -> Self {
        GameState::new()
    }
}

impl GameState {
    pub fn new() -> GameState {
        let p1 = P1_START.map(|(r, c)| Cell::new(r, c).unwrap());
        let p2 = P1_START.map(|(r, c)| Cell::new(c, r).unwrap());
        GameState::from_positions([p1, p2], Player::One)
    }

    /// Builds a state from explicit per-player checker cells, indexed by ID - 1.
    pub fn from_positions(positions: [[Cell; CHECKERS]; 2], to_move: Player) -> GameState {
        let mut matrix = GameMatrix::empty();
        let mut occupancy = [0u64; 2];
        for player in [Player::One, Player::Two] {
            for cell in positions[player.index()] {
                assert_eq!(matrix.get(cell), 0, "two checkers on {cell}");
                matrix.set(cell, player.value());
                occupancy[player.index()] |= cell.bit();
            }
        }
        GameState {
            matrix,
            ids: CheckerIds::from_positions(positions),
            occupancy,
            current: to_move,
            history: [None; HISTORY_LEN],
            history_len: 0,
            move_count: 0,
        }
    }

    /// Builds a state from a matrix, numbering each player's checkers in row-major order.
    pub fn from_matrix(matrix: GameMatrix, to_move: Player) -> Result<GameState, GameError> {
        let mut positions = [[Cell::default(); CHECKERS]; 2];
        let mut counts = [0usize; 2];
        for cell in Cell::all() {
            if let Some(p) = matrix.owner(cell) {
                let k = counts[p.index()];
                if k >= CHECKERS {
                    return Err(GameError::InvalidState(format!("player {p} has more than 6 checkers")));
                }
                positions[p.index()][k] = cell;
                counts[p.index()] += 1;
            }
        }
        if counts != [CHECKERS, CHECKERS] {
            return Err(GameError::InvalidState(format!(
                "expected 6 checkers per player, found {} and {}",
                counts[0], counts[1]
            )));
        }
        Ok(GameState::from_positions(positions, to_move))
    }

    /// All 12 checkers placed uniformly at random on distinct cells, rejecting won positions.
    pub fn random_start<R: Rng + ?Sized>(rng: &mut R, to_move: Player) -> GameState {
        let mut cells: Vec<Cell> = Cell::all().collect();
        loop {
            let (picked, _) = cells.partial_shuffle(rng, 2 * CHECKERS);
            let mut positions = [[Cell::default(); CHECKERS]; 2];
            positions[0].copy_from_slice(&picked[..CHECKERS]);
            positions[1].copy_from_slice(&picked[CHECKERS..]);
            positions[0].sort();
            positions[1].sort();
            let state = GameState::from_positions(positions, to_move);
            if state.winner().is_none() {
                return state;
            }
        }
    }

    pub fn matrix(&self) -> &GameMatrix {
        &self.matrix
    }

    pub fn ids(&self) -> &CheckerIds {
        &self.ids
    }

    pub fn current_player(&self) -> Player {
        self.current
    }

    pub fn move_count(&self) -> u32 {
        self.move_count
    }

    pub fn occupancy(&self, player: Player) -> u64 {
        self.occupancy[player.index()]
    }

    /// History entries, oldest first.
    pub fn history(&self) -> impl DoubleEndedIterator<Item = &HistoryEntry> + ExactSizeIterator {
        self.history[..self.history_len as usize].iter().map(|e| e.as_ref().unwrap())
    }

    pub fn last_move(&self) -> Option<Move> {
        self.history().next_back().map(|e| e.mv)
    }

    pub fn checker_id(&self, cell: Cell) -> Option<u8> {
        self.ids.id_at(cell)
    }

    pub fn action_index(&self, mv: &Move) -> ActionIndex {
        let id = self.ids.id_at(mv.from).expect("move starts on a checker");
        ActionIndex::new(id, mv.to)
    }

    /// Converts an action index for the player to move back into a move, if it names a legal one.
    pub fn move_for_action(&self, action: ActionIndex) -> Option<Move> {
        let from = self.ids.position(self.current, action.checker_id());
        let mv = Move::new(from, action.dest(), self.current);
        destinations(self.occupied(), from)
            .contains(action.dest())
            .then_some(mv)
    }

    fn occupied(&self) -> u64 {
        self.occupancy[0] | self.occupancy[1]
    }

    /// Every distinct `(start, end)` pair reachable by a roll or a chain of hops.
    pub fn legal_moves(&self, player: Player) -> Vec<Move> {
        let mut out = Vec::with_capacity(48);
        self.legal_moves_into(player, &mut out);
        out
    }

    pub fn legal_moves_into(&self, player: Player, out: &mut Vec<Move>) {
        out.clear();
        let occupied = self.occupied();
        for &from in self.ids.positions(player) {
            for to in destinations(occupied, from).iter() {
                out.push(Move::new(from, to, player));
            }
        }
    }

    pub fn has_legal_move(&self, player: Player) -> bool {
        let occupied = self.occupied();
        self.ids
            .positions(player)
            .iter()
            .any(|&from| !destinations(occupied, from).is_empty())
    }

    pub fn is_legal(&self, mv: &Move) -> bool {
        mv.player == self.current
            && self.matrix.owner(mv.from) == Some(mv.player)
            && destinations(self.occupied(), mv.from).contains(mv.to)
    }

    pub fn apply_move(&self, mv: &Move) -> Result<GameState, GameError> {
        if !self.is_legal(mv) {
            return Err(GameError::IllegalMove(*mv));
        }
        Ok(self.apply_unchecked(mv))
    }

    /// Applies a move known to be legal (e.g. one produced by `legal_moves`).
    pub fn apply_unchecked(&self, mv: &Move) -> GameState {
        debug_assert!(self.is_legal(mv), "illegal move {mv}");
        let mut next = self.clone();
        let entry = HistoryEntry { mv: *mv, before: self.matrix };
        next.push_history(entry);
        let p = mv.player;
        next.matrix.set(mv.from, 0);
        next.matrix.set(mv.to, p.value());
        next.occupancy[p.index()] ^= mv.from.bit() | mv.to.bit();
        next.ids.relocate(p, mv.from, mv.to);
        next.current = p.opponent();
        next.move_count += 1;
        next
    }

    fn push_history(&mut self, entry: HistoryEntry) {
        let len = self.history_len as usize;
        if len == HISTORY_LEN {
            self.history.copy_within(1.., 0);
            self.history[HISTORY_LEN - 1] = Some(entry);
        } else {
            self.history[len] = Some(entry);
            self.history_len += 1;
        }
    }

    /// The player whose goal corner is completely filled, checking the last mover first.
    pub fn winner(&self) -> Option<Player> {
        let mover = self.current.opponent();
        [mover, self.current]
            .into_iter()
            .find(|&p| self.occupancy[p.index()] & goal_region(p) == goal_region(p))
    }

    pub fn outcome(&self) -> Outcome {
        if let Some(p) = self.winner() {
            Outcome::Win(p)
        } else if !self.has_legal_move(self.current) {
            Outcome::Blocked(self.current)
        } else {
            Outcome::Ongoing
        }
    }

    /// True when the last 16 moves land on fewer than 6 distinct cells.
    pub fn detect_short_cycle(&self) -> bool {
        if (self.history_len as usize) < HISTORY_LEN {
            return false;
        }
        let dests = self.history().fold(0u64, |m, e| m | e.mv.to.bit());
        dests.count_ones() < 6
    }

    /// Number of a player's checkers sitting in its goal corner.
    pub fn checkers_in_goal(&self, player: Player) -> u32 {
        (self.occupancy[player.index()] & goal_region(player)).count_ones()
    }

    pub fn mirror(&self) -> GameState {
        let mut history = [None; HISTORY_LEN];
        for (slot, entry) in history.iter_mut().zip(self.history.iter()) {
            *slot = entry.map(|e| HistoryEntry { mv: e.mv.mirror(), before: e.before.mirror() });
        }
        let matrix = self.matrix.mirror();
        let mirror_mask = |m: u64| {
            Cell::all()
                .filter(|c| m & c.bit() != 0)
                .fold(0u64, |acc, c| acc | c.mirror().bit())
        };
        GameState {
            matrix,
            ids: self.ids.mirror(),
            occupancy: [mirror_mask(self.occupancy[0]), mirror_mask(self.occupancy[1])],
            current: self.current,
            history,
            history_len: self.history_len,
            move_count: self.move_count,
        }
    }

    /// Per-cell checker IDs of `perspective`'s checkers for the current and up to `depth - 1`
    /// earlier positions, most recent first. Positions before the start of history are `None`.
    fn id_planes(&self, depth: usize) -> Vec<Option<[[u8; CELLS]; 2]>> {
        let mut planes = Vec::with_capacity(depth);
        let mut current = [[0u8; CELLS]; 2];
        for player in [Player::One, Player::Two] {
            for (i, cell) in self.ids.positions(player).iter().enumerate() {
                current[player.index()][cell.index()] = i as u8 + 1;
            }
        }
        planes.push(Some(current));
        let mut entries = self.history().rev();
        for _ in 1..depth {
            match entries.next() {
                Some(entry) => {
                    let mv = entry.mv;
                    let side = &mut current[mv.player.index()];
                    side[mv.from.index()] = side[mv.to.index()];
                    side[mv.to.index()] = 0;
                    planes.push(Some(current));
                }
                None => planes.push(None),
            }
        }
        planes
    }

    /// Network input: 7 planes of 7×7, plane-major then row-major.
    ///
    /// Planes `2k` and `2k + 1` hold the ID matrices (scaled by 1/6) of the k-th most recent
    /// position from the side to move's and the opponent's perspective. Plane 6 is 0 when
    /// Player 1 is to move and 1 otherwise.
    pub fn encode_input(&self) -> [f32; INPUT_LEN] {
        let mut out = [0f32; INPUT_LEN];
        self.encode_packed().unpack_into(&mut out);
        out
    }

    pub fn encode_packed(&self) -> PackedInput {
        let mut out = [0u8; INPUT_LEN];
        let me = self.current.index();
        let them = self.current.opponent().index();
        for (k, planes) in self.id_planes(3).into_iter().enumerate() {
            if let Some(ids) = planes {
                out[(2 * k) * CELLS..(2 * k + 1) * CELLS].copy_from_slice(&ids[me]);
                out[(2 * k + 1) * CELLS..(2 * k + 2) * CELLS].copy_from_slice(&ids[them]);
            }
        }
        if self.current == Player::Two {
            out[6 * CELLS..].fill(6);
        }
        PackedInput(out)
    }

    /// Legal-move mask over the 294 action indices for the side to move.
    pub fn legal_mask(&self) -> ActionMask {
        let mut mask = ActionMask::default();
        let occupied = self.occupied();
        for (i, &from) in self.ids.positions(self.current).iter().enumerate() {
            for to in destinations(occupied, from).iter() {
                mask.set(ActionIndex::new(i as u8 + 1, to));
            }
        }
        mask
    }

    pub fn to_json(&self) -> StateJson {
        StateJson::from(self)
    }
}

/// Compact form of the network input: each byte is a checker ID in `0..=6`
/// (or 0/6 for the side-to-move plane). Unpacking divides by 6.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct PackedInput(pub [u8; INPUT_LEN]);

impl PackedInput {
    pub fn unpack_into(&self, out: &mut [f32]) {
        for (o, &v) in out.iter_mut().zip(self.0.iter()) {
            *o = v as f32 / 6.0;
        }
    }

    pub fn unpack(&self) -> Vec<f32> {
        let mut v = vec![0.0; INPUT_LEN];
        self.unpack_into(&mut v);
        v
    }
}

/// Bit set over the 294 action indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub struct ActionMask([u64; 5]);

impl ActionMask {
    pub fn all() -> ActionMask {
        let mut m = ActionMask([u64::MAX; 5]);
        m.0[4] &= (1u64 << (ACTIONS - 256)) - 1;
        m
    }

    pub fn set(&mut self, a: ActionIndex) {
        let i = a.index();
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, a: ActionIndex) -> bool {
        let i = a.index();
        self.0[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn get(&self, index: usize) -> bool {
        self.0[index / 64] & (1 << (index % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = ActionIndex> + '_ {
        (0..ACTIONS).filter(|&i| self.get(i)).map(|i| ActionIndex(i as u16))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..ACTIONS).map(|i| self.get(i)).collect()
    }

    pub fn from_bools(bits: &[bool]) -> ActionMask {
        let mut m = ActionMask::default();
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b).take(ACTIONS) {
            m.0[i / 64] |= 1 << (i % 64);
        }
        m
    }
}

/// Set of destination cells as a 49-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct CellSet(pub u64);

impl CellSet {
    pub fn contains(&self, cell: Cell) -> bool {
        self.0 & cell.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = Cell> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros();
                bits &= bits - 1;
                Some(Cell(i as u8))
            }
        })
    }
}

struct Geometry {
    neighbors: [[Option<Cell>; 6]; CELLS],
    /// `(over, landing)` for a hop in each direction.
    jumps: [[Option<(Cell, Cell)>; 6]; CELLS],
}

const fn build_geometry() -> Geometry {
    let mut neighbors = [[None; 6]; CELLS];
    let mut jumps = [[None; 6]; CELLS];
    let mut i = 0;
    while i < CELLS {
        let r = (i / 7) as i8;
        let c = (i % 7) as i8;
        let mut d = 0;
        while d < 6 {
            let (dr, dc) = DIRECTIONS[d];
            let (r1, c1) = (r + dr, c + dc);
            if r1 >= 0 && r1 < 7 && c1 >= 0 && c1 < 7 {
                neighbors[i][d] = Some(Cell((r1 * 7 + c1) as u8));
                let (r2, c2) = (r1 + dr, c1 + dc);
                if r2 >= 0 && r2 < 7 && c2 >= 0 && c2 < 7 {
                    jumps[i][d] = Some((Cell((r1 * 7 + c1) as u8), Cell((r2 * 7 + c2) as u8)));
                }
            }
            d += 1;
        }
        i += 1;
    }
    Geometry { neighbors, jumps }
}

static GEOMETRY: Geometry = build_geometry();

pub fn neighbors(cell: Cell) -> impl Iterator<Item = Cell> {
    GEOMETRY.neighbors[cell.index()].into_iter().flatten()
}

/// Destinations of the checker on `from`: rolls plus the closure of hop chains.
/// The moving checker is lifted off the board while it travels.
pub fn destinations(occupied: u64, from: Cell) -> CellSet {
    let occupied = occupied & !from.bit();
    let mut dests = 0u64;
    for n in GEOMETRY.neighbors[from.index()].into_iter().flatten() {
        if occupied & n.bit() == 0 {
            dests |= n.bit();
        }
    }
    let mut visited = from.bit();
    hop_dfs(occupied, from, &mut visited);
    CellSet(dests | (visited & !from.bit()))
}

fn hop_dfs(occupied: u64, at: Cell, visited: &mut u64) {
    for (over, land) in GEOMETRY.jumps[at.index()].into_iter().flatten() {
        if occupied & over.bit() != 0 && occupied & land.bit() == 0 && *visited & land.bit() == 0 {
            *visited |= land.bit();
            hop_dfs(occupied, land, visited);
        }
    }
}

/// Row-major list of cell values, used for compact logging.
impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.matrix.rows() {
            for v in row {
                let ch = match v {
                    1 => 'x',
                    2 => 'o',
                    _ => '.',
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        write!(f, "to move: {}", self.current)
    }
}

// ---------------------------------------------------------------------------
// JSON wire format

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveJson {
    pub from: [u8; 2],
    pub to: [u8; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player: Option<u8>,
}

impl MoveJson {
    pub fn to_cells(&self) -> Result<(Cell, Cell), GameError> {
        let from = Cell::from_coords(self.from[0] as i64, self.from[1] as i64)?;
        let to = Cell::from_coords(self.to[0] as i64, self.to[1] as i64)?;
        Ok((from, to))
    }
}

impl From<&Move> for MoveJson {
    fn from(m: &Move) -> Self {
        MoveJson {
            from: [m.from.row(), m.from.col()],
            to: [m.to.row(), m.to.col()],
            player: Some(m.player.value()),
        }
    }
}

/// Canonical JSON form of a state. `ids` is an optional extension carrying
/// checker IDs (`ids["1"][k]` is the cell of Player 1's checker `k + 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateJson {
    pub matrix: [[u8; SIZE]; SIZE],
    pub player: u8,
    #[serde(default)]
    pub history: Vec<MoveJson>,
    #[serde(default)]
    pub move_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<std::collections::BTreeMap<String, Vec<[u8; 2]>>>,
}

impl From<&GameState> for StateJson {
    fn from(s: &GameState) -> Self {
        let mut ids = std::collections::BTreeMap::new();
        for p in [Player::One, Player::Two] {
            ids.insert(
                p.value().to_string(),
                s.ids.positions(p).iter().map(|c| [c.row(), c.col()]).collect(),
            );
        }
        StateJson {
            matrix: s.matrix.rows(),
            player: s.current.value(),
            history: s.history().map(|e| MoveJson::from(&e.mv)).collect(),
            move_count: s.move_count,
            ids: Some(ids),
        }
    }
}

impl TryFrom<&StateJson> for GameState {
    type Error = GameError;

    fn try_from(j: &StateJson) -> Result<Self, Self::Error> {
        let matrix = GameMatrix::from_rows(&j.matrix)?;
        let player = Player::from_value(j.player)
            .ok_or_else(|| GameError::InvalidState(format!("player {} not in 1..=2", j.player)))?;
        let mut state = match &j.ids {
            None => GameState::from_matrix(matrix, player)?,
            Some(ids) => {
                let mut positions = [[Cell::default(); CHECKERS]; 2];
                for p in [Player::One, Player::Two] {
                    let cells = ids.get(&p.value().to_string()).ok_or_else(|| {
                        GameError::InvalidState(format!("ids missing player {p}"))
                    })?;
                    if cells.len() != CHECKERS {
                        return Err(GameError::InvalidState(format!("player {p} needs 6 ids")));
                    }
                    for (k, rc) in cells.iter().enumerate() {
                        let cell = Cell::from_coords(rc[0] as i64, rc[1] as i64)?;
                        if matrix.get(cell) != p.value() {
                            return Err(GameError::InvalidState(format!(
                                "id {} of player {p} at {cell} does not match the matrix",
                                k + 1
                            )));
                        }
                        positions[p.index()][k] = cell;
                    }
                }
                let state = GameState::from_positions(positions, player);
                if state.matrix != matrix {
                    return Err(GameError::InvalidState("ids do not cover the matrix".into()));
                }
                state
            }
        };
        if j.history.len() > HISTORY_LEN {
            return Err(GameError::InvalidState(format!(
                "history holds at most {HISTORY_LEN} moves"
            )));
        }
        // Rebuild the pre-move boards by undoing the recorded moves from the newest back.
        let mut entries = Vec::with_capacity(j.history.len());
        let mut board = matrix;
        for mj in j.history.iter().rev() {
            let (from, to) = mj.to_cells()?;
            let p = mj
                .player
                .and_then(Player::from_value)
                .or_else(|| board.owner(to))
                .ok_or_else(|| GameError::InvalidState(format!("history move to empty {to}")))?;
            if board.get(to) != p.value() || board.get(from) != 0 {
                return Err(GameError::InvalidState(format!(
                    "history move {from}->{to} inconsistent with the board"
                )));
            }
            board.set(to, 0);
            board.set(from, p.value());
            entries.push(HistoryEntry { mv: Move::new(from, to, p), before: board });
        }
        entries.reverse();
        for e in entries {
            state.push_history(e);
        }
        state.move_count = j.move_count.max(state.history_len as u32);
        Ok(state)
    }
}

impl GameState {
    pub fn from_json(j: &StateJson) -> Result<GameState, GameError> {
        GameState::try_from(j)
    }
}
