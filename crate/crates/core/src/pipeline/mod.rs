//! Training data, the two-stage training pipeline and the tabula-rasa variant.

pub mod selfplay;
pub mod stage1;
pub mod stage2;
pub mod tabula;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentError;
use crate::game::{ActionIndex, ActionMask, Cell, GameState, Player, ACTIONS, CELLS, CHECKERS, INPUT_LEN, INPUT_PLANES};
use crate::mcts::SearchConfig;
use crate::nn::{Batch, LossReport, NetArchitecture, NnError, Trainer};

pub use stage1::{generate_stage1_games, train_stage1, Opening, Stage1Config};
pub use stage2::{run_stage2_episode, Stage2Config, Stage2State};
pub use tabula::{tabula_rasa_outcome, TabulaRasaConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("every self-play game was abandoned; episode is void")]
    VoidEpisode,
    #[error("bad example file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One supervised example: network input, policy target and value target for the side to move.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub input: Vec<f32>,
    pub policy: Vec<f32>,
    pub value: f32,
    mask: ActionMask,
}

impl TrainingExample {
    pub fn new(input: Vec<f32>, policy: Vec<f32>, value: f32) -> Result<Self, PipelineError> {
        if input.len() != INPUT_LEN || policy.len() != ACTIONS {
            return Err(PipelineError::InvalidExample(format!(
                "expected {INPUT_LEN} inputs and {ACTIONS} policy entries, got {} and {}",
                input.len(),
                policy.len()
            )));
        }
        let mask = mask_from_input(&input)?;
        Ok(TrainingExample { input, policy, value, mask })
    }

    pub fn from_state(state: &GameState, policy: Vec<f32>, value: f32) -> Self {
        TrainingExample { input: state.encode_input().to_vec(), policy, value, mask: state.legal_mask() }
    }

    /// Legal actions of the encoded position, recovered from the input planes.
    pub fn mask(&self) -> &ActionMask {
        &self.mask
    }

    /// Reflection across the anti-diagonal; the value is unchanged.
    pub fn mirror(&self) -> Self {
        let mut input = vec![0.0; INPUT_LEN];
        for plane in 0..INPUT_PLANES {
            for cell in 0..CELLS {
                input[plane * CELLS + Cell::from_index(cell).mirror().index()] = self.input[plane * CELLS + cell];
            }
        }
        let mut policy = vec![0.0; ACTIONS];
        let mut mask = ActionMask::default();
        for (i, p) in self.policy.iter().enumerate() {
            policy[ActionIndex::from_index(i).unwrap().mirror().index()] = *p;
        }
        for a in self.mask.iter() {
            mask.set(a.mirror());
        }
        TrainingExample { input, policy, value: self.value, mask }
    }

    /// Checks target invariants; draws (value 0) are allowed only when `allow_draw`.
    pub fn validate(&self, allow_draw: bool) -> Result<(), PipelineError> {
        let sum: f32 = self.policy.iter().sum();
        if (sum - 1.0).abs() > 1e-4 || self.policy.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(PipelineError::InvalidExample(format!("policy target sums to {sum}")));
        }
        if let Some(i) = (0..ACTIONS).find(|&i| self.policy[i] > 0.0 && !self.mask.get(i)) {
            return Err(PipelineError::InvalidExample(format!("policy mass on illegal action {i}")));
        }
        let ok = self.value == 1.0 || self.value == -1.0 || (allow_draw && self.value == 0.0);
        if !ok {
            return Err(PipelineError::InvalidExample(format!("value target {}", self.value)));
        }
        Ok(())
    }
}

/// Rebuilds the side-to-move position from the two most recent ID planes and returns its legal mask.
pub fn mask_from_input(input: &[f32]) -> Result<ActionMask, PipelineError> {
    let me = if input[6 * CELLS] > 0.5 { Player::Two } else { Player::One };
    let mut positions = [[Cell::default(); CHECKERS]; 2];
    let mut seen = [[false; CHECKERS]; 2];
    for (plane, player) in [(0, me), (1, me.opponent())] {
        for cell in 0..CELLS {
            let id = (input[plane * CELLS + cell] * 6.0).round() as usize;
            if id == 0 {
                continue;
            }
            if id > CHECKERS || seen[player.index()][id - 1] {
                return Err(PipelineError::InvalidExample(format!("bad checker id {id} in plane {plane}")));
            }
            seen[player.index()][id - 1] = true;
            positions[player.index()][id - 1] = Cell::from_index(cell);
        }
    }
    if seen.iter().flatten().any(|s| !s) {
        return Err(PipelineError::InvalidExample("input does not hold 6 checkers per side".into()));
    }
    Ok(GameState::from_positions(positions, me).legal_mask())
}

/// Both the example and its mirror image.
pub fn augment(example: TrainingExample) -> [TrainingExample; 2] {
    let m = example.mirror();
    [example, m]
}

const RECORD_FLOATS: usize = INPUT_LEN + ACTIONS + 1;

/// Description written next to an example file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleSidecar {
    pub format: String,
    pub count: usize,
    pub record_floats: usize,
    #[serde(default)]
    pub generator: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes length-prefixed little-endian records plus a JSON sidecar.
pub fn write_examples(path: &Path, examples: &[TrainingExample], generator: serde_json::Value) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        w.write_all(&((RECORD_FLOATS * 4) as u32).to_le_bytes())?;
        for v in ex.input.iter().chain(&ex.policy).chain(std::iter::once(&ex.value)) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    let sidecar = ExampleSidecar {
        format: "ccheckers-examples/1".into(),
        count: examples.len(),
        record_floats: RECORD_FLOATS,
        generator,
    };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<TrainingExample>, PipelineError> {
    let bad = |reason: String| PipelineError::Format { path: path.to_path_buf(), reason };
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut len_buf = [0u8; 4];
    loop {
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        if len != RECORD_FLOATS * 4 {
            return Err(bad(format!("record {} has length {len}", out.len())));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|_| bad(format!("record {} is truncated", out.len())))?;
        let floats: Vec<f32> = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let ex = TrainingExample::new(
            floats[..INPUT_LEN].to_vec(),
            floats[INPUT_LEN..INPUT_LEN + ACTIONS].to_vec(),
            floats[RECORD_FLOATS - 1],
        )?;
        out.push(ex);
    }
    Ok(out)
}

pub fn make_batch(examples: &[&TrainingExample]) -> Batch<f32> {
    let mut batch = Batch::default();
    for ex in examples {
        batch.push(&ex.input, &ex.policy, ex.value, ex.mask);
    }
    batch
}

/// Shuffled minibatch passes over `examples`; returns the mean loss of each pass.
pub fn train_passes<R: Rng + ?Sized>(
    trainer: &mut Trainer,
    examples: &[TrainingExample],
    passes: u32,
    rng: &mut R,
) -> Result<Vec<LossReport>, PipelineError> {
    let bs = trainer.config.batch_size.max(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut reports = Vec::new();
    for _ in 0..passes {
        order.shuffle(rng);
        let mut sum = LossReport::default();
        let mut steps = 0usize;
        for chunk in order.chunks(bs) {
            let refs: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let r = trainer.step(&make_batch(&refs))?;
            sum.policy += r.policy;
            sum.value += r.value;
            sum.l2 += r.l2;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        reports.push(LossReport { policy: sum.policy / n, value: sum.value / n, l2: sum.l2 / n });
    }
    Ok(reports)
}

/// Mean evaluation-mode loss over `examples` (no regularization term).
pub fn held_out_loss(net: &crate::nn::Network, examples: &[TrainingExample]) -> LossReport {
    let mut sum = LossReport::default();
    for chunk in examples.chunks(256) {
        let refs: Vec<&TrainingExample> = chunk.iter().collect();
        let r = crate::nn::optim::evaluate_loss(net, &make_batch(&refs));
        sum.policy += r.policy * chunk.len() as f64;
        sum.value += r.value * chunk.len() as f64;
    }
    let n = examples.len().max(1) as f64;
    LossReport { policy: sum.policy / n, value: sum.value / n, l2: 0.0 }
}

/// Every tunable of the training framework in one file; defaults follow the published configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub architecture: NetArchitecture,
    pub search: SearchConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub tabula_rasa: TabulaRasaConfig,
    pub qlearning: crate::qlearning::QConfig,
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristics::greedy_policy_target;

    #[test]
    fn mirror_example_matches_mirrored_state() {
        let mut s = GameState::new();
        for _ in 0..5 {
            let m = s.legal_moves(s.current_player())[3];
            s = s.apply_unchecked(&m);
        }
        let ex = TrainingExample::from_state(&s, greedy_policy_target(&s), 1.0);
        let mirrored = TrainingExample::from_state(&s.mirror(), greedy_policy_target(&s.mirror()), 1.0);
        assert_eq!(ex.mirror(), mirrored);
        assert_eq!(ex.mirror().mirror(), ex);
    }

    #[test]
    fn mask_recovered_from_input() {
        let mut s = GameState::new();
        for k in 0..7 {
            let moves = s.legal_moves(s.current_player());
            s = s.apply_unchecked(&moves[k % moves.len()]);
            assert_eq!(mask_from_input(&s.encode_input()).unwrap(), s.legal_mask());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.bin");
        let s = GameState::new();
        let ex = TrainingExample::from_state(&s, greedy_policy_target(&s), -1.0);
        let data = augment(ex).to_vec();
        write_examples(&path, &data, serde_json::json!({"games": 1})).unwrap();
        assert_eq!(read_examples(&path).unwrap(), data);
        let side: ExampleSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side.count, 2);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_examples(&path), Err(PipelineError::Format { .. })));
    }

    #[test]
    fn validation_rejects_bad_targets() {
        let s = GameState::new();
        let ex = TrainingExample::from_state(&s, greedy_policy_target(&s), 0.0);
        assert!(ex.validate(false).is_err());
        assert!(ex.validate(true).is_ok());
        let ex = TrainingExample::from_state(&s, vec![0.0; ACTIONS], 1.0);
        assert!(ex.validate(false).is_err());
    }
}
