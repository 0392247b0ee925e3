//! Command implementations behind the `ccheckers` binary.

pub mod http;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ccheckers::agents::{AgentError, AgentKind, AgentSpec};
use ccheckers::arena::{elo_update, play_match, MatchConfig, MatchRecord};
use ccheckers::game::{GameError, GameState, Move, MoveJson, StateJson};
use ccheckers::nn::{load_checkpoint, save_checkpoint, Network, NnError};
use ccheckers::pipeline::stage2::train_stage2;
use ccheckers::pipeline::tabula::run_tabula_rasa;
use ccheckers::pipeline::{generate_stage1_games, train_stage1, write_examples, PipelineConfig, PipelineError};
use ccheckers::qlearning::{run_qlearning, write_reward_trace, QError};
use ccheckers::serve::{parse_cell, ServeError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    QLearning(#[from] QError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Parser, Debug)]
#[command(name = "ccheckers", version, about = "Two-player Chinese Checkers engine, trainers and play service")]
pub struct Cli {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the starting position as JSON.
    NewGame,
    /// List legal moves of the side to move.
    LegalMoves {
        #[command(flatten)]
        state: StateArg,
        /// Only moves starting at "row,col".
        #[arg(long)]
        from: Option<String>,
    },
    /// Apply one move and print the resulting state.
    ApplyMove {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Generate heuristic training examples to a binary file with a JSON sidecar.
    GenStage1 {
        #[arg(long)]
        games: Option<u32>,
        #[arg(long)]
        retention: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heuristic-supervised training.
    TrainStage1 {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        games: Option<u32>,
    },
    /// Search-guided reinforcement from a stage-1 checkpoint.
    TrainStage2 {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        episodes: Option<u32>,
        #[arg(long)]
        games: Option<u32>,
        #[arg(long)]
        sims: Option<u32>,
    },
    /// Deep Q-learning against the deterministic greedy player.
    TrainQlearn {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        episodes: Option<u32>,
        /// CSV of (episode, test_game, accumulated_reward).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Self-play from scratch with the forward-distance outcome rule.
    TrainTabula {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        episodes: Option<u32>,
        #[arg(long)]
        games: Option<u32>,
        #[arg(long)]
        sims: Option<u32>,
    },
    /// Play a match between two agents and write its record.
    Match(MatchArgs),
    /// Fold match records into Elo ratings.
    Elo {
        records: Vec<PathBuf>,
        /// Starting ratings (JSON object of name to rating).
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Run the HTTP play service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Network for a net-backed agent, as kind=checkpoint.
        #[arg(long = "agent")]
        agents: Vec<String>,
    },
}

#[derive(Args, Debug)]
pub struct StateArg {
    /// State JSON file ("-" for stdin); the starting position when omitted.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output checkpoint manifest; weights go next to it with a .bin extension.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file for per-epoch or per-episode reports.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    /// Agent as kind or kind:checkpoint.
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub a_label: Option<String>,
    #[arg(long)]
    pub b_label: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub games: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub random_opening_moves: u32,
    #[arg(long, default_value_t = 100)]
    pub move_limit: u32,
    /// Simulations per search move.
    #[arg(long)]
    pub sims: Option<u32>,
    #[arg(long, default_value_t = 0.01)]
    pub temperature: f64,
    /// Canonical record (no timings).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-move wall-clock times.
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

fn read_state(arg: &StateArg) -> Result<GameState, CliError> {
    let text = match &arg.state {
        None => return Ok(GameState::new()),
        Some(p) if p.as_os_str() == "-" => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
        Some(p) => std::fs::read_to_string(p)?,
    };
    let json: StateJson = serde_json::from_str(&text)?;
    Ok(GameState::from_json(&json)?)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, to_json(value)? + "\n")?;
    Ok(())
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    Ok(match path {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    })
}

/// Parses `kind` or `kind:checkpoint`.
pub fn parse_agent(text: &str) -> Result<AgentSpec, CliError> {
    let (kind, ckpt) = match text.split_once(':') {
        Some((k, c)) => (k, Some(c)),
        None => (text, None),
    };
    let mut spec = AgentSpec::new(kind.parse::<AgentKind>()?);
    if let Some(c) = ckpt {
        spec = spec.with_checkpoint(c);
    }
    Ok(spec)
}

fn initial_net(init: Option<&Path>, cfg: &PipelineConfig, seed: u64) -> Result<Network, CliError> {
    Ok(match init {
        Some(p) => load_checkpoint(p)?,
        None => Network::new(&cfg.architecture, seed),
    })
}

/// Runs one command; the returned text goes to standard output.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::NewGame => to_json(&GameState::new().to_json()),
        Command::LegalMoves { state, from } => {
            let s = read_state(&state)?;
            let from = from.as_deref().map(parse_cell).transpose()?;
            let moves: Vec<MoveJson> = s
                .legal_moves(s.current_player())
                .iter()
                .filter(|m| from.is_none_or(|f| m.from == f))
                .map(MoveJson::from)
                .collect();
            to_json(&moves)
        }
        Command::ApplyMove { state, from, to } => {
            let s = read_state(&state)?;
            let mv = Move::new(parse_cell(&from)?, parse_cell(&to)?, s.current_player());
            to_json(&s.apply_move(&mv)?.to_json())
        }
        Command::GenStage1 { games, retention, seed, out } => {
            let mut c = cfg.stage1.clone();
            if let Some(s) = seed {
                c.seed = s;
            }
            let games = games.unwrap_or(c.games_per_epoch);
            let rate = retention.unwrap_or(c.retention_rate);
            let (examples, stats) = generate_stage1_games(&c, games, rate, c.seed);
            let generator = serde_json::json!({ "config": c, "games": games, "retention_rate": rate, "stats": stats });
            write_examples(&out, &examples, generator)?;
            to_json(&stats)
        }
        Command::TrainStage1 { train, epochs, games } => {
            let mut c = cfg.stage1.clone();
            if let Some(s) = train.seed {
                c.seed = s;
            }
            if let Some(e) = epochs {
                c.epochs = e;
            }
            if let Some(g) = games {
                c.games_per_epoch = g;
            }
            let net = initial_net(train.init.as_deref(), &cfg, c.seed)?;
            let (net, reports) = train_stage1(net, &c, |r| {
                log::info!("epoch {} held-out loss {:.4}", r.epoch, r.held_out.policy + r.held_out.value)
            })?;
            save_checkpoint(&net, &train.out, serde_json::json!({ "stage1": c }))?;
            if let Some(p) = &train.report {
                write_json(p, &reports)?;
            }
            to_json(&reports.last().map(|r| r.held_out))
        }
        Command::TrainStage2 { train, episodes, games, sims } => {
            let mut c = cfg.stage2.clone();
            if let Some(s) = train.seed {
                c.seed = s;
            }
            if let Some(e) = episodes {
                c.episodes = e;
            }
            if let Some(g) = games {
                c.games_per_episode = g;
            }
            let search = sims.map_or(cfg.search.clone(), |n| cfg.search.clone().with_simulations(n));
            let net = initial_net(train.init.as_deref(), &cfg, c.seed)?;
            let (state, reports) = train_stage2(net, &c, &search, |r| {
                log::info!("episode {} eval {}-{} promoted {}", r.episode, r.eval.a_wins, r.eval.b_wins, r.promoted)
            })?;
            save_checkpoint(&state.best, &train.out, serde_json::json!({ "stage2": c, "search": search }))?;
            if let Some(p) = &train.report {
                write_json(p, &reports)?;
            }
            to_json(&reports.iter().map(|r| (r.episode, r.promoted)).collect::<Vec<_>>())
        }
        Command::TrainQlearn { train, episodes, trace } => {
            let mut c = cfg.qlearning.clone();
            if let Some(s) = train.seed {
                c.seed = s;
            }
            if let Some(e) = episodes {
                c.episodes = e;
            }
            let out = run_qlearning(&c, |e| {
                if e.episode % 1000 == 0 {
                    log::info!("episode {} epsilon {:.3} huber {:.4}", e.episode, e.epsilon, e.loss.huber)
                }
            })?;
            save_checkpoint(&out.net, &train.out, serde_json::json!({ "qlearning": c }))?;
            if let Some(p) = &trace {
                write_reward_trace(std::io::BufWriter::new(std::fs::File::create(p)?), &out.reward_trace)?;
            }
            if let Some(p) = &train.report {
                write_json(p, &out.episodes)?;
            }
            to_json(&serde_json::json!({ "episodes": out.episodes.len(), "trace_points": out.reward_trace.len() }))
        }
        Command::TrainTabula { train, episodes, games, sims } => {
            let mut c = cfg.tabula_rasa.clone();
            if let Some(s) = train.seed {
                c.seed = s;
            }
            if let Some(e) = episodes {
                c.episodes = e;
            }
            if let Some(g) = games {
                c.games_per_episode = g;
            }
            let search = sims.map_or(cfg.search.clone(), |n| cfg.search.clone().with_simulations(n));
            let net = initial_net(train.init.as_deref(), &cfg, c.seed)?;
            let (net, reports) = run_tabula_rasa(net, &c, &search, |r| {
                log::info!("episode {} draws {} max plies {}", r.episode, r.draws, r.max_plies)
            })?;
            save_checkpoint(&net, &train.out, serde_json::json!({ "tabula_rasa": c, "search": search }))?;
            if let Some(p) = &train.report {
                write_json(p, &reports)?;
            }
            to_json(&reports.iter().map(|r| (r.episode, r.max_plies)).collect::<Vec<_>>())
        }
        Command::Match(args) => run_match(&cfg, &args),
        Command::Elo { records, ratings } => {
            let mut table: BTreeMap<String, f64> = match ratings {
                Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
                None => BTreeMap::new(),
            };
            for p in &records {
                let record: MatchRecord = serde_json::from_slice(&std::fs::read(p)?)?;
                elo_update(&mut table, &record);
            }
            to_json(&table)
        }
        Command::Serve { host, port, agents } => {
            let mut nets = BTreeMap::new();
            for a in &agents {
                let (kind, path) =
                    a.split_once('=').ok_or_else(|| CliError::Usage(format!("expected kind=checkpoint, got {a:?}")))?;
                nets.insert(kind.parse::<AgentKind>()?, Arc::new(load_checkpoint(Path::new(path))?));
            }
            let addr: std::net::SocketAddr =
                format!("{host}:{port}").parse().map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
            let app = http::AppState::new(nets);
            tokio::runtime::Runtime::new()?.block_on(http::serve(addr, app))?;
            Ok(String::new())
        }
    }
}

fn run_match(cfg: &PipelineConfig, args: &MatchArgs) -> Result<String, CliError> {
    let mut search = cfg.search.clone().with_temperature(args.temperature).with_noise(false);
    if let Some(n) = args.sims {
        search = search.with_simulations(n);
    }
    let a = parse_agent(&args.a)?.with_search(search.clone()).build()?;
    let b = parse_agent(&args.b)?.with_search(search).build()?;
    let match_cfg = MatchConfig {
        games: args.games,
        random_opening_moves: args.random_opening_moves,
        move_limit: args.move_limit,
        seed: args.seed,
    };
    let (mut record, timings) = play_match(a.as_ref(), b.as_ref(), &match_cfg)?;
    if let Some(l) = &args.a_label {
        record.agents[0] = l.clone();
    }
    if let Some(l) = &args.b_label {
        record.agents[1] = l.clone();
    }
    if let Some(p) = &args.out {
        std::fs::write(p, record.to_json())?;
    }
    if let Some(p) = &args.timings {
        write_json(p, &timings)?;
    }
    to_json(&serde_json::json!({ "agents": record.agents, "summary": record.summary }))
}
