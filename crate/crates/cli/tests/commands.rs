use std::path::Path;
use std::process::{Command, Output};

use ccheckers::arena::MatchRecord;
use ccheckers::game::{GameState, MoveJson, StateJson};
use serde_json::json;

fn ccheckers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccheckers")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout_ok(args: &[&str]) -> String {
    let out = ccheckers(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> String {
    let cfg = json!({
        "search": { "num_simulations": 8 },
        "stage1": { "games_per_epoch": 20, "epochs": 2, "held_out_games": 4, "retention_rate": 0.05 },
        "stage2": { "episodes": 1, "games_per_episode": 2, "epochs_per_episode": 1, "eval_games": 2,
                    "promotion_threshold": 2, "move_limit": 1000,
                    "schedule": { "exploratory_moves_per_player": 500 } },
        "tabula_rasa": { "episodes": 1, "games_per_episode": 2, "epochs_per_episode": 1, "eval_games": 2,
                         "promotion_threshold": 2, "soft_limit": 20 },
        "qlearning": { "episodes": 6, "prefill": 40, "eval_every": 3, "eval_games": 2, "batch_size": 8 }
    });
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn new_game_legal_and_apply() {
    let start: StateJson = serde_json::from_str(&stdout_ok(&["new-game"])).unwrap();
    assert_eq!(start, GameState::new().to_json());

    let moves: Vec<MoveJson> = serde_json::from_str(&stdout_ok(&["legal-moves"])).unwrap();
    assert_eq!(moves.len(), GameState::new().legal_moves(GameState::new().current_player()).len());

    let dir = tempfile::tempdir().unwrap();
    let state_path = dir.path().join("s.json");
    std::fs::write(&state_path, serde_json::to_string(&start).unwrap()).unwrap();
    let m = &moves[0];
    let from = format!("{},{}", m.from[0], m.from[1]);
    let to = format!("{},{}", m.to[0], m.to[1]);
    let after: StateJson =
        serde_json::from_str(&stdout_ok(&["apply-move", "--state", state_path.to_str().unwrap(), "--from", &from, "--to", &to]))
            .unwrap();
    assert_eq!(after.player, 2);

    let filtered: Vec<MoveJson> =
        serde_json::from_str(&stdout_ok(&["legal-moves", "--state", state_path.to_str().unwrap(), "--from", &from])).unwrap();
    assert!(!filtered.is_empty());
    assert!(filtered.iter().all(|x| x.from == m.from));
}

#[test]
fn illegal_move_fails_cleanly() {
    let out = ccheckers(&["apply-move", "--from", "4,4", "--to", "4,5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = ccheckers(&["match", "--a", "no-such-agent", "--b", "random", "--games", "1"]);
    assert!(!out.status.success());
}

#[test]
fn match_records_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        stdout_ok(&[
            "match", "--a", "greedy-stoch", "--b", "random", "--games", "6", "--seed", "11", "--out",
            p.to_str().unwrap(),
        ]);
        std::fs::read(p).unwrap()
    };
    let a = run("a.json");
    let b = run("b.json");
    assert_eq!(a, b);
    let record: MatchRecord = serde_json::from_slice(&a).unwrap();
    assert_eq!(record.games.len(), 6);

    let ratings: std::collections::BTreeMap<String, f64> =
        serde_json::from_str(&stdout_ok(&["elo", dir.path().join("a.json").to_str().unwrap()])).unwrap();
    assert_eq!(ratings.len(), 2);
    let total: f64 = ratings.values().sum();
    assert!((total - 3000.0).abs() < 1e-9);
}

#[test]
fn training_commands_write_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();

    stdout_ok(&["--config", &cfg, "gen-stage1", "--games", "3", "--out", &p("ex.bin")]);
    assert!(dir.path().join("ex.bin").exists());
    assert!(dir.path().join("ex.bin.json").exists());

    stdout_ok(&["--config", &cfg, "train-stage1", "--out", &p("s1.json"), "--report", &p("s1r.json")]);
    // A barely trained net may never finish a self-play game; that must surface as a clean error.
    let s2 = ccheckers(&["--config", &cfg, "train-stage2", "--init", &p("s1.json"), "--out", &p("s2.json")]);
    let s2_trained = s2.status.success();
    if !s2_trained {
        assert!(String::from_utf8_lossy(&s2.stderr).contains("episode is void"));
    }
    stdout_ok(&["--config", &cfg, "train-tabula", "--out", &p("tr.json")]);
    stdout_ok(&["--config", &cfg, "train-qlearn", "--out", &p("q.json"), "--trace", &p("trace.csv")]);

    let trace = std::fs::read_to_string(p("trace.csv")).unwrap();
    assert!(trace.starts_with("episode,test_game,accumulated_reward"));
    assert_eq!(trace.lines().count(), 1 + 2 * 2);

    let s1_or_s2 = if s2_trained { "s2.json" } else { "s1.json" };
    for (kind, ckpt) in [("mcts-net", s1_or_s2), ("mcts-net", "tr.json"), ("qlearning-net", "q.json")] {
        let spec = format!("{kind}:{}", p(ckpt));
        stdout_ok(&["--config", &cfg, "match", "--a", &spec, "--b", "greedy-det", "--games", "2", "--sims", "4"]);
    }
}
