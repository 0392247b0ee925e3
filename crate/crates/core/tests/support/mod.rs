//! Shared test oracles: brute-force move generation, random reachable positions,
//! finite-difference gradients and forced-win positions.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use ccheckers::game::{Cell, GameState, Move, Player, CHECKERS};
use ccheckers::nn::loss::{policy_value_loss, Targets};
use ccheckers::nn::optim::compute_gradients;
use ccheckers::nn::{Batch, NetArchitecture, Network};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEPS: [(i32, i32); 6] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)];

fn on_board(r: i32, c: i32) -> bool {
    (1..=7).contains(&r) && (1..=7).contains(&c)
}

/// Occupancy grid indexed `[row][col]` with 1-based coordinates.
fn grid(state: &GameState) -> [[bool; 8]; 8] {
    let mut g = [[false; 8]; 8];
    for p in [Player::One, Player::Two] {
        for c in state.ids().positions(p) {
            g[c.row() as usize][c.col() as usize] = true;
        }
    }
    g
}

/// Every (from, to) pair reachable by one roll or a chain of single-checker hops, found by
/// breadth-first search over landing cells with the moving checker lifted off the board.
pub fn oracle_moves(state: &GameState, player: Player) -> BTreeSet<((u8, u8), (u8, u8))> {
    let mut out = BTreeSet::new();
    let mut occ = grid(state);
    for from in state.ids().positions(player) {
        let (r0, c0) = (from.row() as i32, from.col() as i32);
        occ[r0 as usize][c0 as usize] = false;
        for (dr, dc) in STEPS {
            let (r, c) = (r0 + dr, c0 + dc);
            if on_board(r, c) && !occ[r as usize][c as usize] {
                out.insert(((r0 as u8, c0 as u8), (r as u8, c as u8)));
            }
        }
        let mut seen = BTreeSet::from([(r0, c0)]);
        let mut queue = VecDeque::from([(r0, c0)]);
        while let Some((r, c)) = queue.pop_front() {
            for (dr, dc) in STEPS {
                let (mr, mc) = (r + dr, c + dc);
                let (lr, lc) = (r + 2 * dr, c + 2 * dc);
                if on_board(lr, lc) && occ[mr as usize][mc as usize] && !occ[lr as usize][lc as usize] && seen.insert((lr, lc)) {
                    out.insert(((r0 as u8, c0 as u8), (lr as u8, lc as u8)));
                    queue.push_back((lr, lc));
                }
            }
        }
        occ[r0 as usize][c0 as usize] = true;
    }
    out
}

pub fn engine_moves(state: &GameState, player: Player) -> BTreeSet<((u8, u8), (u8, u8))> {
    state
        .legal_moves(player)
        .iter()
        .map(|m| ((m.from.row(), m.from.col()), (m.to.row(), m.to.col())))
        .collect()
}

/// A position reached by up to `max_plies` uniformly random moves from the standard start.
pub fn random_reachable<R: Rng>(rng: &mut R, max_plies: u32) -> GameState {
    let plies = rng.random_range(0..=max_plies);
    let mut s = GameState::new();
    for _ in 0..plies {
        if s.winner().is_some() {
            break;
        }
        let moves = s.legal_moves(s.current_player());
        match moves.choose(rng) {
            Some(m) => s = s.apply_unchecked(m),
            None => break,
        }
    }
    s
}

/// A position with Player 1 to move where at least one move fills Player 1's goal corner.
/// Returns the state and the winning moves, both found with the brute-force generator.
pub fn forced_win_position<R: Rng>(rng: &mut R) -> (GameState, Vec<Move>) {
    let goal: Vec<Cell> = Cell::all().filter(|c| c.col() as i32 - c.row() as i32 >= 4).collect();
    loop {
        let mut free: Vec<Cell> = Cell::all().collect();
        let missing = *goal.choose(rng).unwrap();
        let mut p1: Vec<Cell> = goal.iter().copied().filter(|c| *c != missing).collect();
        free.retain(|c| !goal.contains(c));
        let idx = rng.random_range(0..free.len());
        p1.push(free.swap_remove(idx));
        let p2: Vec<Cell> = free.choose_multiple(rng, CHECKERS).copied().collect();
        let mut positions = [[Cell::default(); CHECKERS]; 2];
        positions[0].copy_from_slice(&p1);
        positions[1].copy_from_slice(&p2);
        let state = GameState::from_positions(positions, Player::One);
        if state.winner().is_some() {
            continue;
        }
        let wins: Vec<Move> = oracle_moves(&state, Player::One)
            .into_iter()
            .map(|((fr, fc), (tr, tc))| Move::new(Cell::new(fr, fc).unwrap(), Cell::new(tr, tc).unwrap(), Player::One))
            .filter(|m| m.to == missing && !goal.contains(&m.from))
            .collect();
        let total = oracle_moves(&state, Player::One).len();
        if !wins.is_empty() && total > wins.len() {
            return (state, wins);
        }
    }
}

/// Small architecture that exercises every layer type: conv, batch norm, residual add and
/// hidden fully connected layers in both heads.
pub fn gradcheck_arch(batch_norm: bool) -> NetArchitecture {
    NetArchitecture {
        num_blocks: 1,
        block_filters: [2, 2, 3],
        block_kernels: [1, 3, 1],
        stem_kernel: 3,
        use_batch_norm: batch_norm,
        policy_filters: 1,
        policy_hidden: Some(4),
        value_filters: 1,
        value_hidden: Some(3),
    }
}

pub fn random_batch(size: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Batch::default();
    for _ in 0..size {
        let s = random_reachable(&mut rng, 30);
        let mask = s.legal_mask();
        let mut policy = vec![0.0f64; ccheckers::game::ACTIONS];
        for a in mask.iter() {
            policy[a.index()] = rng.random::<f64>();
        }
        let total: f64 = policy.iter().sum();
        policy.iter_mut().for_each(|p| *p /= total);
        let input: Vec<f64> = s.encode_input().iter().map(|&x| x as f64).collect();
        let value = if rng.random::<bool>() { 1.0 } else { -1.0 };
        batch.push(&input, &policy, value, mask);
    }
    batch
}

fn full_loss(net: &mut Network<f64>, batch: &Batch<f64>, lambda: f64) -> f64 {
    let rows = batch.input_rows();
    let (out, _) = net.forward_train(&rows);
    let targets = Targets { policy: &batch.policy, value: &batch.value, masks: &batch.masks };
    let (parts, _, _) = policy_value_loss(&out, &targets);
    parts.total() + lambda * net.l2_norm_sq()
}

/// Per-tensor relative error `|g - n| / (|g| + |n|)` between analytic and central-difference
/// gradients of the regularized loss.
pub fn gradient_errors(arch: &NetArchitecture, seed: u64, lambda: f64, eps: f64) -> Vec<(String, f64)> {
    let mut net = Network::<f64>::new(arch, seed);
    // Zero biases leave pre-activations on the ReLU kink.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x717e);
    for p in net.params_mut().into_iter().filter(|p| p.trainable) {
        p.value.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let batch = random_batch(3, seed ^ 0x5eed);
    compute_gradients(&mut net, &batch, lambda);
    let analytic: Vec<(String, bool, Vec<f64>)> =
        net.params().iter().map(|p| (p.name.clone(), p.trainable, p.grad.clone())).collect();
    let mut errors = Vec::new();
    for (t, (name, trainable, grad)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        let mut numeric = vec![0.0; grad.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = net.params_mut()[t].value[i];
            net.params_mut()[t].value[i] = orig + eps;
            let plus = full_loss(&mut net, &batch, lambda);
            net.params_mut()[t].value[i] = orig - eps;
            let minus = full_loss(&mut net, &batch, lambda);
            net.params_mut()[t].value[i] = orig;
            *n = (plus - minus) / (2.0 * eps);
        }
        let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        errors.push((name.clone(), if scale < 1e-12 { diff } else { diff / scale }));
    }
    errors
}
