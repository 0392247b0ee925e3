//! Monte Carlo tree search guided by a policy/value evaluator.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::game::{ActionIndex, GameState, Move, Player, ACTIONS};
use crate::nn::Network;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub num_simulations: u32,
    pub exploration_c: f64,
    pub temperature: f64,
    pub dirichlet_alpha: f64,
    pub dirichlet_weight: f64,
    /// Mix Dirichlet noise into the root priors before the first simulation.
    pub root_noise: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            num_simulations: 175,
            exploration_c: 3.5,
            temperature: 1.0,
            dirichlet_alpha: 0.03,
            dirichlet_weight: 0.25,
            root_noise: false,
        }
    }
}

impl SearchConfig {
    pub fn with_simulations(mut self, n: u32) -> Self {
        self.num_simulations = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_noise(mut self, on: bool) -> Self {
        self.root_noise = on;
        self
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.num_simulations < 1 {
            return Err(SearchError::Config("num_simulations must be at least 1".into()));
        }
        if !(self.exploration_c > 0.0) {
            return Err(SearchError::Config("exploration_c must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(SearchError::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dirichlet_weight) || !(self.dirichlet_alpha > 0.0) {
            return Err(SearchError::Config("dirichlet parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("cannot search from a finished game")]
    Terminal,
    #[error("player {0} has no legal move")]
    Blocked(Player),
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("exploration term needs at least one visit on the edge")]
    UnvisitedEdge,
}

/// Prior over `moves` (same order) and a value for the side to move.
pub trait Evaluator {
    fn evaluate(&self, state: &GameState, moves: &[Move]) -> (Vec<f32>, f32);
}

/// Uniform priors and a neutral value.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformEvaluator;

impl Evaluator for UniformEvaluator {
    fn evaluate(&self, _state: &GameState, moves: &[Move]) -> (Vec<f32>, f32) {
        (vec![1.0 / moves.len() as f32; moves.len()], 0.0)
    }
}

impl Evaluator for Network<f32> {
    fn evaluate(&self, state: &GameState, moves: &[Move]) -> (Vec<f32>, f32) {
        let input = state.encode_input();
        let out = self.forward_eval(&[&input]);
        let logits: Vec<f32> = moves.iter().map(|m| out.logits[state.action_index(m).index()]).collect();
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut p: Vec<f32> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f32 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        (p, out.value_logits[0].tanh())
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, state: &GameState, moves: &[Move]) -> (Vec<f32>, f32) {
        (**self).evaluate(state, moves)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for std::sync::Arc<E> {
    fn evaluate(&self, state: &GameState, moves: &[Move]) -> (Vec<f32>, f32) {
        (**self).evaluate(state, moves)
    }
}

/// Statistics of one search edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeStats {
    pub mv: Move,
    pub action: ActionIndex,
    /// Player who makes the move.
    pub player: Player,
    pub prior: f64,
    pub visits: u32,
    pub total_value: f64,
    pub mean_value: f64,
    child: Option<usize>,
}

impl EdgeStats {
    /// Unvisited edge.
    pub fn new(mv: Move, action: ActionIndex, prior: f64) -> Self {
        EdgeStats { mv, action, player: mv.player, prior, visits: 0, total_value: 0.0, mean_value: 0.0, child: None }
    }

    pub fn child(&self) -> Option<usize> {
        self.child
    }
}

#[derive(Clone, Debug)]
pub struct SearchNode {
    pub state: GameState,
    pub edges: Vec<EdgeStats>,
    pub is_expanded: bool,
    pub is_terminal: bool,
}

impl SearchNode {
    fn new(state: GameState) -> Self {
        let is_terminal = state.winner().is_some();
        SearchNode { state, edges: Vec::new(), is_expanded: false, is_terminal }
    }

    pub fn player(&self) -> Player {
        self.state.current_player()
    }
}

/// Exploration bonus of the selection rule.
pub fn puct_bonus(c: f64, prior: f64, sibling_visits: u32, visits: u32) -> f64 {
    c * prior * (sibling_visits as f64).sqrt() / (visits as f64 + 1.0)
}

/// Upper-confidence term of classic UCT, kept for comparison experiments.
pub fn classic_uct(visits: u32, sibling_visits: u32, c: f64) -> Result<f64, SearchError> {
    if visits == 0 || sibling_visits == 0 {
        return Err(SearchError::UnvisitedEdge);
    }
    Ok(c * (2.0 * (sibling_visits as f64).ln() / visits as f64).sqrt())
}

/// Index of the edge maximizing `Q + U`; before any visit, the highest prior. Ties go to the lowest index.
pub fn select_edge(edges: &[EdgeStats], c: f64) -> usize {
    let sum: u32 = edges.iter().map(|e| e.visits).sum();
    let score = |e: &EdgeStats| {
        if sum == 0 {
            e.prior
        } else {
            e.mean_value + puct_bonus(c, e.prior, sum, e.visits)
        }
    };
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in edges.iter().enumerate() {
        let s = score(e);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Propagates a leaf value along the root-to-leaf edges.
pub fn backup(path: &mut [&mut EdgeStats], leaf_player: Player, value: f64, leaf_is_win: bool) {
    for e in path.iter_mut() {
        let same = e.player == leaf_player;
        let add = same != leaf_is_win;
        if add {
            e.total_value += value;
        } else {
            e.total_value -= value;
        }
        e.visits += 1;
        e.mean_value = e.total_value / e.visits as f64;
    }
}

/// Draws from a symmetric Dirichlet distribution.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("positive alpha");
    let mut eta: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = eta.iter().sum();
    if total > 0.0 && total.is_finite() {
        eta.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every draw underflowed; the limit of the distribution is a random vertex.
        eta.iter_mut().for_each(|v| *v = 0.0);
        eta[rng.random_range(0..n)] = 1.0;
    }
    eta
}

/// Mixes Dirichlet noise into priors in place.
pub fn add_root_noise<R: Rng + ?Sized>(edges: &mut [EdgeStats], alpha: f64, weight: f64, rng: &mut R) {
    if edges.is_empty() {
        return;
    }
    let eta = sample_dirichlet(alpha, edges.len(), rng);
    for (e, n) in edges.iter_mut().zip(eta) {
        e.prior = (1.0 - weight) * e.prior + weight * n;
    }
}

/// Decision distribution over root edges: `N^(1/t)` normalized, computed in log space.
pub fn visit_distribution(visits: &[u32], temperature: f64) -> Vec<f64> {
    let Some(&max) = visits.iter().max() else {
        return Vec::new();
    };
    if max == 0 {
        return vec![1.0 / visits.len() as f64; visits.len()];
    }
    let lmax = (max as f64).ln();
    let w: Vec<f64> = visits
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { (((n as f64).ln() - lmax) / temperature).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Search tree rooted at one position; discarded after each decision.
pub struct SearchTree<E> {
    nodes: Vec<SearchNode>,
    evaluator: E,
    config: SearchConfig,
    simulations: u32,
}

impl<E: Evaluator> SearchTree<E> {
    /// Builds the tree and expands the root (noise applied if configured).
    pub fn new<R: Rng + ?Sized>(
        state: GameState,
        evaluator: E,
        config: SearchConfig,
        rng: &mut R,
    ) -> Result<Self, SearchError> {
        config.validate()?;
        if state.winner().is_some() {
            return Err(SearchError::Terminal);
        }
        let player = state.current_player();
        let mut tree = SearchTree { nodes: vec![SearchNode::new(state)], evaluator, config, simulations: 0 };
        tree.expand(0);
        if tree.nodes[0].edges.is_empty() {
            return Err(SearchError::Blocked(player));
        }
        if tree.config.root_noise {
            let (alpha, weight) = (tree.config.dirichlet_alpha, tree.config.dirichlet_weight);
            add_root_noise(&mut tree.nodes[0].edges, alpha, weight, rng);
        }
        Ok(tree)
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn simulations(&self) -> u32 {
        self.simulations
    }

    /// Expands a leaf and returns its value for the side to move there.
    fn expand(&mut self, idx: usize) -> f64 {
        let node = &self.nodes[idx];
        let state = &node.state;
        let moves = state.legal_moves(state.current_player());
        let value = if moves.is_empty() {
            0.0
        } else {
            let (priors, value) = self.evaluator.evaluate(state, &moves);
            let total: f64 = priors.iter().map(|p| *p as f64).sum();
            let uniform = !(total > 0.0 && total.is_finite());
            let edges = moves
                .iter()
                .zip(&priors)
                .map(|(m, p)| EdgeStats {
                    mv: *m,
                    action: state.action_index(m),
                    player: m.player,
                    prior: if uniform { 1.0 / moves.len() as f64 } else { *p as f64 / total },
                    visits: 0,
                    total_value: 0.0,
                    mean_value: 0.0,
                    child: None,
                })
                .collect();
            self.nodes[idx].edges = edges;
            value as f64
        };
        self.nodes[idx].is_expanded = true;
        value
    }

    /// One selection, expansion and backup pass.
    pub fn simulate(&mut self) {
        let c = self.config.exploration_c;
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut idx = 0;
        let (value, leaf_is_win) = loop {
            let node = &self.nodes[idx];
            if node.is_terminal {
                let winner = node.state.winner().unwrap();
                break (1.0, winner != node.player());
            }
            if !node.is_expanded {
                break (self.expand(idx), false);
            }
            if node.edges.is_empty() {
                break (0.0, false);
            }
            let e = select_edge(&node.edges, c);
            path.push((idx, e));
            idx = match node.edges[e].child {
                Some(child) => child,
                None => {
                    let next = node.state.apply_unchecked(&node.edges[e].mv);
                    self.nodes.push(SearchNode::new(next));
                    let child = self.nodes.len() - 1;
                    self.nodes[idx].edges[e].child = Some(child);
                    child
                }
            };
        };
        let leaf_player = self.nodes[idx].player();
        for &(n, e) in &path {
            backup(&mut [&mut self.nodes[n].edges[e]], leaf_player, value, leaf_is_win);
        }
        self.simulations += 1;
    }

    pub fn run(&mut self) {
        for _ in 0..self.config.num_simulations {
            self.simulate();
        }
    }

    /// Root decision distribution, aligned with the root edges.
    pub fn decision(&self) -> Vec<f64> {
        let visits: Vec<u32> = self.root().edges.iter().map(|e| e.visits).collect();
        visit_distribution(&visits, self.config.temperature)
    }

    /// Samples a move from the decision distribution and returns it with the 294-wide target.
    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> SearchResult {
        let probs = self.decision();
        let edges = &self.root().edges;
        let mut policy = vec![0.0f32; ACTIONS];
        for (e, p) in edges.iter().zip(&probs) {
            policy[e.action.index()] = *p as f32;
        }
        let mut u: f64 = rng.random();
        let mut chosen = edges.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            if u < *p {
                chosen = i;
                break;
            }
            u -= p;
        }
        while probs[chosen] == 0.0 {
            chosen -= 1;
        }
        let root_visits = edges.iter().map(|e| (e.mv, e.visits)).collect();
        SearchResult { mv: edges[chosen].mv, policy, root_visits, simulations: self.simulations }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub mv: Move,
    /// Decision distribution embedded in the action space.
    pub policy: Vec<f32>,
    pub root_visits: Vec<(Move, u32)>,
    pub simulations: u32,
}

/// Fresh search from `state`: runs all simulations and samples the move.
pub fn search<E: Evaluator, R: Rng + ?Sized>(
    state: &GameState,
    evaluator: E,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    let mut tree = SearchTree::new(state.clone(), evaluator, config.clone(), rng)?;
    tree.run();
    Ok(tree.choose(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Cell;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge(player: Player, prior: f64, visits: u32, mean: f64) -> EdgeStats {
        let mv = Move::new(Cell::new(7, 1).unwrap(), Cell::new(6, 1).unwrap(), player);
        EdgeStats {
            mv,
            action: ActionIndex::new(1, mv.to),
            player,
            prior,
            visits,
            total_value: mean * visits as f64,
            mean_value: mean,
            child: None,
        }
    }

    #[test]
    fn bonus_by_hand() {
        assert_eq!(puct_bonus(3.5, 0.5, 4, 0), 3.5);
    }

    #[test]
    fn first_visit_picks_highest_prior_then_lowest_index() {
        let edges = [edge(Player::One, 0.2, 0, 0.0), edge(Player::One, 0.4, 0, 0.0), edge(Player::One, 0.4, 0, 0.0)];
        assert_eq!(select_edge(&edges, 3.5), 1);
    }

    #[test]
    fn well_visited_winner_dominates() {
        let edges = [edge(Player::One, 0.1, 10_000, 1.0), edge(Player::One, 0.9, 100, 0.0)];
        assert_eq!(select_edge(&edges, 1.0), 0);
    }

    #[test]
    fn classic_uct_values() {
        let v = classic_uct(2, 8, 1.0).unwrap();
        assert!((v - 8f64.ln().sqrt()).abs() < 1e-12);
        assert!((classic_uct(2, 8, 2.0).unwrap() - 2.0 * v).abs() < 1e-12);
        assert!(classic_uct(3, 8, 1.0).unwrap() < v);
        assert_eq!(classic_uct(0, 8, 1.0), Err(SearchError::UnvisitedEdge));
    }

    #[test]
    fn backup_signs() {
        let mut e = edge(Player::One, 0.5, 0, 0.0);
        backup(&mut [&mut e], Player::One, 0.8, false);
        assert_eq!((e.total_value, e.visits, e.mean_value), (0.8, 1, 0.8));

        let mut e = edge(Player::One, 0.5, 0, 0.0);
        backup(&mut [&mut e], Player::One, 1.0, true);
        assert_eq!(e.total_value, -1.0);

        let mut e = edge(Player::Two, 0.5, 0, 0.0);
        backup(&mut [&mut e], Player::One, 0.5, false);
        assert_eq!(e.total_value, -0.5);

        let mut e = edge(Player::One, 0.5, 0, 0.0);
        backup(&mut [&mut e], Player::One, 0.5, false);
        backup(&mut [&mut e], Player::One, -0.5, false);
        assert_eq!(e.mean_value, 0.0);
    }

    #[test]
    fn decision_distribution_by_hand() {
        assert_eq!(visit_distribution(&[3, 1], 1.0), vec![0.75, 0.25]);
        let d = visit_distribution(&[50, 30], 0.01);
        assert!(d[0] > 1.0 - 1e-12);
    }

    #[test]
    fn noise_keeps_priors_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut edges: Vec<_> = (0..30).map(|_| edge(Player::One, 1.0 / 30.0, 0, 0.0)).collect();
        let before: Vec<f64> = edges.iter().map(|e| e.prior).collect();
        add_root_noise(&mut edges, 0.03, 0.0, &mut rng);
        assert_eq!(edges.iter().map(|e| e.prior).collect::<Vec<_>>(), before);
        add_root_noise(&mut edges, 0.03, 0.25, &mut rng);
        assert!((edges.iter().map(|e| e.prior).sum::<f64>() - 1.0).abs() < 1e-9);
        let mut one = vec![edge(Player::One, 1.0, 0, 0.0)];
        add_root_noise(&mut one, 0.03, 0.25, &mut rng);
        assert_eq!(one[0].prior, 1.0);
    }

    #[test]
    fn root_visits_sum_to_simulations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SearchConfig::default().with_simulations(64).with_noise(true);
        let mut tree = SearchTree::new(GameState::new(), UniformEvaluator, cfg, &mut rng).unwrap();
        tree.run();
        let sum: u32 = tree.root().edges.iter().map(|e| e.visits).sum();
        assert_eq!(sum, 64);
        let prior_sum: f64 = tree.root().edges.iter().map(|e| e.prior).sum();
        assert!((prior_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn search_is_deterministic_for_a_seed() {
        let cfg = SearchConfig::default().with_simulations(40).with_noise(true);
        let run = |seed| search(&GameState::new(), UniformEvaluator, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(run(5), run(5));
    }
}
