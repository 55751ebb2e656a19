//! Command-line interface: train, evaluate, enumerate, bench, and
//! attention export.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::bench::{self, ExperimentSpec, Preset};
use crate::checkpoint::{self, CheckpointError};
use crate::dqn::{run_episode, TrainOptions, Trainer, TrainerConfig, BEST_ENERGY_UNSET};
use crate::lattice::{parse_hp_notation_labeled, write_conformation, TerminalKind};
use crate::networks::{build_network, ArchKind, NetworkConfig};
use crate::oracle::{enumerate_min_energy, verify_conformation, EnumOptions, OracleError};

#[derive(Parser)]
#[command(name = "hpfold", version, about = "Protein folding on the 3D HP lattice with deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Q-network on one sequence.
    Train(TrainArgs),
    /// Greedy rollout of a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Exact minimum energy by exhaustive enumeration.
    Enumerate(EnumerateArgs),
    /// Run an architecture across a benchmark suite.
    Bench(BenchArgs),
    /// Export per-head attention matrices from an LSTM-A checkpoint.
    ExportAttention(ExportAttentionArgs),
}

#[derive(Args, Default)]
struct TrainArgs {
    /// Sequence in run-length H/P notation.
    #[arg(long, conflicts_with = "bench")]
    sequence: Option<String>,
    /// Benchmark id from the registry (3d1..3d9, A1..A11).
    #[arg(long)]
    bench: Option<String>,
    /// ffnn, ffnn-r, lstm-olh, or lstm-a.
    #[arg(long)]
    arch: Option<ArchKind>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// desk or paper.
    #[arg(long)]
    preset: Option<Preset>,
    /// Output directory (metrics, checkpoints, best conformation).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Target-network sync period in gradient steps.
    #[arg(long)]
    target_sync: Option<u64>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    /// smooth-l1 or mse.
    #[arg(long)]
    loss: Option<crate::dqn::LossKind>,
    #[arg(long)]
    eps_start: Option<f64>,
    #[arg(long)]
    eps_end: Option<f64>,
    /// Episodes over which epsilon decays (default: half the run).
    #[arg(long)]
    eps_horizon: Option<u64>,
    #[arg(long)]
    trap_penalty: Option<f64>,
    /// Mask the bootstrap max to legal actions.
    #[arg(long)]
    masked_targets: Option<bool>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Resume from a trainer checkpoint (replay buffer restarts empty).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Override the sequence embedded in the checkpoint.
    #[arg(long)]
    sequence: Option<String>,
    /// Where to write the rolled-out conformation.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(long)]
    sequence: String,
    /// Disable canonical symmetry pruning.
    #[arg(long)]
    no_symmetry: bool,
    /// Enable the admissible contact bound.
    #[arg(long)]
    bound_pruning: bool,
    /// Length guard.
    #[arg(long, default_value_t = 16)]
    max_n: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Export the best conformation found.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// 3d, A, or all.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    arch: ArchKind,
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Number of seeds (0..k).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    episodes: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// State to inspect: the anchor state of this sequence (defaults to
    /// the checkpoint's own sequence).
    #[arg(long)]
    sequence: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Entry point used by the `hpfold` binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports help/version on stdout with code 0 and usage
            // errors on stderr with code 2
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Enumerate(args) => cmd_enumerate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::ExportAttention(args) => cmd_export_attention(args),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("config file {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config file {} line {}: expected key=value", path.display(), i + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn overlay<T: std::str::FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => match file.get(key) {
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| usage(format!("config key {key}: {e}"))),
            None => Ok(None),
        },
    }
}

struct ResolvedTrain {
    id: Option<String>,
    notation: String,
    arch: ArchKind,
    episodes: u64,
    seed: u64,
    preset: Preset,
    out: PathBuf,
    trainer: TrainerConfig,
    resume: Option<PathBuf>,
}

impl ResolvedTrain {
    fn echo(&self, net: &NetworkConfig) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        kv.insert("sequence".into(), self.notation.clone());
        if let Some(id) = &self.id {
            kv.insert("bench".into(), id.clone());
        }
        kv.insert("arch".into(), self.arch.to_string());
        kv.insert("episodes".into(), self.episodes.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        kv.insert(
            "preset".into(),
            match self.preset {
                Preset::Desk => "desk".into(),
                Preset::Paper => "paper".into(),
            },
        );
        kv.insert("gamma".into(), self.trainer.gamma.to_string());
        kv.insert("batch_size".into(), self.trainer.batch_size.to_string());
        kv.insert("target_sync".into(), self.trainer.target_sync.to_string());
        kv.insert("buffer_capacity".into(), self.trainer.buffer_capacity.to_string());
        kv.insert(
            "loss".into(),
            match self.trainer.loss_kind {
                crate::dqn::LossKind::SmoothL1 => "smooth-l1".into(),
                crate::dqn::LossKind::Mse => "mse".into(),
            },
        );
        kv.insert("lr".into(), self.trainer.lr.to_string());
        kv.insert("eps_start".into(), self.trainer.epsilon.eps_start.to_string());
        kv.insert("eps_end".into(), self.trainer.epsilon.eps_end.to_string());
        kv.insert("eps_horizon".into(), self.trainer.epsilon.decay_horizon.to_string());
        kv.insert("trap_penalty".into(), self.trainer.trap_penalty.to_string());
        kv.insert("masked_targets".into(), self.trainer.masked_targets.to_string());
        if let Some(k) = self.trainer.checkpoint_every {
            kv.insert("checkpoint_every".into(), k.to_string());
        }
        kv.insert("reservoir_size".into(), net.reservoir.size.to_string());
        kv.insert("connectivity".into(), net.reservoir.connectivity.to_string());
        kv.insert("head_sizes".into(), format!("{:?}", net.head_sizes));
        kv.insert("hidden".into(), net.attention.hidden.to_string());
        kv.insert("heads".into(), net.attention.heads.to_string());
        kv.insert("lstm_layers".into(), net.attention.lstm_layers.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn resolve_train(args: TrainArgs) -> Result<ResolvedTrain, Failure> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let sequence: Option<String> = overlay(args.sequence, &file, "sequence")?;
    let bench_id: Option<String> = overlay(args.bench, &file, "bench")?;
    let (id, notation) = match (bench_id, sequence) {
        (Some(id), _) => {
            let entry = bench::find(&id).ok_or_else(|| usage(format!("unknown benchmark id {id:?}")))?;
            (Some(entry.id.to_string()), entry.notation.to_string())
        }
        (None, Some(notation)) => {
            parse_hp_notation_labeled(&notation, "custom").map_err(usage)?;
            (None, notation)
        }
        (None, None) => return Err(usage("one of --sequence or --bench is required")),
    };
    let arch = overlay(args.arch, &file, "arch")?.ok_or_else(|| usage("--arch is required"))?;
    let episodes = overlay(args.episodes, &file, "episodes")?.ok_or_else(|| usage("--episodes is required"))?;
    let seed = overlay(args.seed, &file, "seed")?.unwrap_or(0);
    let preset = overlay(args.preset, &file, "preset")?.unwrap_or(Preset::Desk);
    let out = match args.out {
        Some(o) => o,
        None => file
            .get("out")
            .map(PathBuf::from)
            .ok_or_else(|| usage("--out is required"))?,
    };
    let mut trainer = TrainerConfig::new(episodes, seed);
    if let Some(v) = overlay(args.gamma, &file, "gamma")? {
        trainer.gamma = v;
    }
    if let Some(v) = overlay(args.batch_size, &file, "batch_size")? {
        trainer.batch_size = v;
    }
    if let Some(v) = overlay(args.target_sync, &file, "target_sync")? {
        trainer.target_sync = v;
    }
    if let Some(v) = overlay(args.buffer_capacity, &file, "buffer_capacity")? {
        trainer.buffer_capacity = v;
    }
    if let Some(v) = overlay(args.loss, &file, "loss")? {
        trainer.loss_kind = v;
    }
    if let Some(v) = overlay(args.eps_start, &file, "eps_start")? {
        trainer.epsilon.eps_start = v;
    }
    if let Some(v) = overlay(args.eps_end, &file, "eps_end")? {
        trainer.epsilon.eps_end = v;
    }
    if let Some(v) = overlay(args.eps_horizon, &file, "eps_horizon")? {
        trainer.epsilon.decay_horizon = v;
    }
    if let Some(v) = overlay(args.trap_penalty, &file, "trap_penalty")? {
        trainer.trap_penalty = v;
    }
    if let Some(v) = overlay(args.masked_targets, &file, "masked_targets")? {
        trainer.masked_targets = v;
    }
    if let Some(v) = overlay(args.checkpoint_every, &file, "checkpoint_every")? {
        trainer.checkpoint_every = Some(v);
    }
    if let Some(v) = overlay(args.lr, &file, "lr")? {
        trainer.lr = v;
    }
    Ok(ResolvedTrain { id, notation, arch, episodes, seed, preset, out, trainer, resume: args.resume })
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let resolved = resolve_train(args)?;
    let seq = Arc::new(
        parse_hp_notation_labeled(&resolved.notation, resolved.id.as_deref().unwrap_or("custom"))
            .map_err(usage)?,
    );
    fs::create_dir_all(&resolved.out).map_err(runtime)?;
    let mut trainer = match &resolved.resume {
        Some(path) => {
            let ck = checkpoint::load(path).map_err(checkpoint_failure)?;
            let mut t = Trainer::resume(&ck).map_err(checkpoint_failure)?;
            // the episode budget of this invocation applies on top
            let mut cfg = t.config().clone();
            cfg.episodes = resolved.episodes;
            t = resume_with_config(t, cfg);
            t
        }
        None => {
            let net_cfg = match resolved.preset {
                Preset::Desk => NetworkConfig::desk(resolved.arch, seq.len(), resolved.seed),
                Preset::Paper => NetworkConfig::paper(resolved.arch, seq.len(), resolved.seed),
            };
            let net = build_network(&net_cfg).map_err(usage)?;
            Trainer::new(Arc::clone(&seq), net, resolved.trainer.clone())
        }
    };
    let echo = resolved.echo(trainer.network().config());
    fs::write(resolved.out.join("config.resolved"), echo).map_err(runtime)?;
    let metrics_path = resolved.out.join("metrics.jsonl");
    let report = {
        let file = fs::File::create(&metrics_path).map_err(runtime)?;
        let mut sink = BufWriter::new(file);
        let mut metrics: &mut dyn Write = &mut sink;
        let mut opts = TrainOptions { metrics: Some(&mut metrics), checkpoint_dir: Some(&resolved.out) };
        let report = trainer.train(&mut opts).map_err(runtime)?;
        sink.flush().map_err(runtime)?;
        report
    };
    if let Some(best) = &report.best_conformation {
        fs::write(resolved.out.join("best.conf"), write_conformation(best, best.energy())).map_err(runtime)?;
    }
    let best = if report.best_energy == BEST_ENERGY_UNSET {
        "none (no completed episode)".to_string()
    } else {
        report.best_energy.to_string()
    };
    println!(
        "trained {} episodes on {} ({} residues); best energy {best}; wall {:?}",
        report.episodes_run,
        seq.label(),
        seq.len(),
        report.wall
    );
    println!("metrics: {}", metrics_path.display());
    if let Some(ck) = &report.final_checkpoint {
        println!("checkpoint: {}", ck.display());
    }
    Ok(())
}

// Trainer keeps its config private; rebuilding with a new episode budget
// goes through a checkpoint round-trip helper.
fn resume_with_config(trainer: Trainer, cfg: TrainerConfig) -> Trainer {
    trainer.with_config(cfg)
}

fn checkpoint_failure(e: CheckpointError) -> Failure {
    match e {
        CheckpointError::BadHeader(_) | CheckpointError::BadVersion(_) | CheckpointError::BadDescriptor(_) => {
            usage(format!("bad checkpoint header: {e}"))
        }
        other => runtime(other),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let ck = checkpoint::load(&args.checkpoint).map_err(checkpoint_failure)?;
    let net = ck.restore_network().map_err(checkpoint_failure)?;
    let notation = args.sequence.unwrap_or_else(|| ck.descriptor.sequence_notation.clone());
    let label = ck.descriptor.sequence_id.clone().unwrap_or_else(|| notation.clone());
    let seq = Arc::new(parse_hp_notation_labeled(&notation, &label).map_err(usage)?);
    if seq.len() != ck.descriptor.network.seq_len {
        return Err(usage(format!(
            "sequence has {} residues but the checkpointed network expects {}",
            seq.len(),
            ck.descriptor.network.seq_len
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let (outcome, _) = run_episode(&seq, net.as_ref(), 0.0, 0.0, &mut rng).map_err(runtime)?;
    match outcome.terminal_kind {
        TerminalKind::Completed => {
            let positions = outcome.conformation.positions();
            let verified = verify_conformation(&seq, positions).map_err(runtime)?;
            debug_assert_eq!(verified, outcome.energy);
            println!("greedy rollout completed: energy {} (verified {})", outcome.energy, verified);
        }
        TerminalKind::Trapped => {
            println!(
                "greedy rollout trapped after {} placements: partial energy {}",
                outcome.conformation.placed(),
                outcome.energy
            );
        }
    }
    if let Some(path) = args.export {
        fs::write(&path, write_conformation(&outcome.conformation, outcome.energy)).map_err(runtime)?;
        println!("conformation written to {}", path.display());
    }
    Ok(())
}

fn cmd_enumerate(args: EnumerateArgs) -> Result<(), Failure> {
    let seq = Arc::new(parse_hp_notation_labeled(&args.sequence, &args.sequence).map_err(usage)?);
    let opts = EnumOptions {
        symmetry_pruning: !args.no_symmetry,
        bound_pruning: args.bound_pruning,
        max_n: args.max_n,
        workers: args.workers,
    };
    let result = match enumerate_min_energy(&seq, &opts) {
        Ok(r) => r,
        Err(e @ OracleError::SequenceTooLong { .. }) => {
            return Err(usage(format!("{e}; raise --max-n if you really want to wait")));
        }
    };
    let record = result.to_record(&seq);
    println!("{}", serde_json::to_string(&record).map_err(runtime)?);
    if let Some(path) = args.export {
        fs::write(&path, write_conformation(&result.best, result.min_energy)).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let entries: Vec<_> = match args.suite.as_str() {
        "3d" => bench::registry().iter().filter(|e| e.id.starts_with("3d")).collect(),
        "A" | "a" => bench::registry().iter().filter(|e| e.id.starts_with('A')).collect(),
        "all" => bench::registry().iter().collect(),
        other => return Err(usage(format!("unknown suite {other:?} (expected 3d, A, or all)"))),
    };
    fs::create_dir_all(&args.out).map_err(runtime)?;
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let mut echo = String::new();
    echo.push_str(&format!("suite = {}\n", args.suite));
    echo.push_str(&format!("arch = {}\n", args.arch));
    echo.push_str(&format!("preset = {:?}\n", args.preset).to_lowercase());
    echo.push_str(&format!("seeds = {}\n", args.seeds));
    echo.push_str(&format!("episodes = {}\n", args.episodes));
    fs::write(args.out.join("config.resolved"), echo).map_err(runtime)?;
    let summary_path = args.out.join("summary.csv");
    let mut summary = BufWriter::new(fs::File::create(&summary_path).map_err(runtime)?);
    writeln!(summary, "{}", bench::SUMMARY_HEADER).map_err(runtime)?;
    let mut metrics_paths = Vec::new();
    for entry in entries {
        let spec = ExperimentSpec::for_entry(entry, args.arch, args.preset, args.episodes, seeds.clone());
        let record = bench::run_experiment(&spec, &args.out).map_err(runtime)?;
        bench::write_summary_rows(&mut summary, &record).map_err(runtime)?;
        for s in &record.seeds {
            metrics_paths.push(s.metrics_path.clone());
        }
        let best = record.best_energy();
        let best = if best == BEST_ENERGY_UNSET { "none".to_string() } else { best.to_string() };
        println!("{}: best {} over {} seed(s) (bkv {})", entry.id, best, record.seeds.len(), entry.bkv);
    }
    summary.flush().map_err(runtime)?;
    bench::emit_plot_data(&metrics_paths).map_err(runtime)?;
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn cmd_export_attention(args: ExportAttentionArgs) -> Result<(), Failure> {
    let ck = checkpoint::load(&args.checkpoint).map_err(checkpoint_failure)?;
    let notation = args.sequence.unwrap_or_else(|| ck.descriptor.sequence_notation.clone());
    let seq = Arc::new(parse_hp_notation_labeled(&notation, &notation).map_err(usage)?);
    let state = crate::lattice::Conformation::anchor(Arc::clone(&seq)).encode_state();
    let heads = bench::export_attention(&ck, &state).map_err(|e| match e {
        bench::BenchError::WrongArchitecture { .. } => usage(e),
        other => runtime(other),
    })?;
    let paths = bench::write_attention_csvs(&heads, seq.len(), &args.out, "attention").map_err(runtime)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}
