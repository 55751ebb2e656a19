//! Benchmark orchestration: seeded experiment runs, summary CSVs, and
//! plot-ready data emission.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dqn::{DqnError, MetricsRow, TrainOptions, Trainer, TrainerConfig, BEST_ENERGY_UNSET};
use crate::lattice::{parse_hp_notation_labeled, write_conformation, HPSequence, StateTensor};
use crate::networks::{build_network, ArchKind, NetworkConfig};

mod registry;

pub use registry::{find, registry, BenchmarkEntry};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown benchmark id {0:?}")]
    UnknownBenchmark(String),
    #[error("bad sequence notation: {0}")]
    BadNotation(String),
    #[error("checkpoint holds a {got} network, expected {expected}")]
    WrongArchitecture { expected: ArchKind, got: ArchKind },
    #[error("{path}: line {line}: malformed metrics row")]
    MalformedMetrics { path: PathBuf, line: usize },
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Network(#[from] crate::networks::NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Minutes-scale sizes for CI and experimentation.
    Desk,
    /// Benchmark sizes matching the published runs.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected desk or paper)")),
        }
    }
}

/// A reproducible experiment: sequence, architecture, preset, episode
/// budget, and the seeds to run. Spec plus seed fully determines a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Registry id, or a free label for inline sequences.
    pub id: String,
    pub notation: String,
    /// Best-known value when the sequence comes from the registry.
    pub bkv: Option<i32>,
    pub arch: ArchKind,
    pub preset: Preset,
    pub episodes: u64,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn for_entry(entry: &BenchmarkEntry, arch: ArchKind, preset: Preset, episodes: u64, seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            id: entry.id.to_string(),
            notation: entry.notation.to_string(),
            bkv: Some(entry.bkv),
            arch,
            preset,
            episodes,
            seeds,
        }
    }

    pub fn sequence(&self) -> Result<Arc<HPSequence>, BenchError> {
        parse_hp_notation_labeled(&self.notation, &self.id)
            .map(Arc::new)
            .map_err(|e| BenchError::BadNotation(e.to_string()))
    }

    pub fn network_config(&self, seq_len: usize, seed: u64) -> NetworkConfig {
        match self.preset {
            Preset::Desk => NetworkConfig::desk(self.arch, seq_len, seed),
            Preset::Paper => NetworkConfig::paper(self.arch, seq_len, seed),
        }
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig::new(self.episodes, seed)
    }
}

/// Result of one seed of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_energy: i64,
    pub episodes_to_best: Option<u64>,
    pub wall_ms: u64,
    pub metrics_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: ExperimentSpec,
    pub seeds: Vec<SeedResult>,
}

impl RunRecord {
    pub fn best_energy(&self) -> i64 {
        self.seeds.iter().map(|s| s.best_energy).min().unwrap_or(BEST_ENERGY_UNSET)
    }
}

fn run_one_seed(spec: &ExperimentSpec, seed: u64, dir: &Path) -> Result<SeedResult, BenchError> {
    fs::create_dir_all(dir)?;
    let seq = spec.sequence()?;
    let net = build_network(&spec.network_config(seq.len(), seed))?;
    let mut trainer = Trainer::new(Arc::clone(&seq), net, spec.trainer_config(seed));
    let metrics_path = dir.join("metrics.jsonl");
    let report = {
        let file = fs::File::create(&metrics_path)?;
        let mut sink = BufWriter::new(file);
        let mut metrics: &mut dyn Write = &mut sink;
        let mut opts = TrainOptions { metrics: Some(&mut metrics), checkpoint_dir: Some(dir) };
        let report = trainer.train(&mut opts)?;
        sink.flush()?;
        report
    };
    if let Some(best) = &report.best_conformation {
        fs::write(dir.join("best.conf"), write_conformation(best, best.energy()))?;
    }
    Ok(SeedResult {
        seed,
        best_energy: report.best_energy,
        episodes_to_best: report.episodes_to_best,
        wall_ms: report.wall.as_millis() as u64,
        metrics_path,
        checkpoint_path: report.final_checkpoint,
    })
}

/// Worker cap: the HPFOLD_THREADS variable, clamped to at least 1.
pub fn worker_cap() -> usize {
    std::env::var("HPFOLD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every seed of the spec (in parallel up to the worker cap), writing
/// per-seed directories under `out_dir` plus one summary row per seed.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunRecord, BenchError> {
    fs::create_dir_all(out_dir)?;
    let cap = worker_cap().max(1);
    let mut results: Vec<Option<Result<SeedResult, BenchError>>> = Vec::new();
    results.resize_with(spec.seeds.len(), || None);
    for chunk_start in (0..spec.seeds.len()).step_by(cap) {
        let chunk_end = (chunk_start + cap).min(spec.seeds.len());
        let chunk_results: Vec<Result<SeedResult, BenchError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = spec.seeds[chunk_start..chunk_end]
                .iter()
                .map(|seed| {
                    let seed = *seed;
                    let dir = out_dir.join(format!("{}_{}_seed{}", spec.id, spec.arch, seed));
                    scope.spawn(move || run_one_seed(spec, seed, &dir))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        });
        for (i, r) in chunk_results.into_iter().enumerate() {
            results[chunk_start + i] = Some(r);
        }
    }
    let seeds: Vec<SeedResult> = results
        .into_iter()
        .map(|r| r.expect("all seeds scheduled"))
        .collect::<Result<_, _>>()?;
    Ok(RunRecord { spec: spec.clone(), seeds })
}

pub const SUMMARY_HEADER: &str = "id,architecture,seed,best_energy,bkv,episodes_to_best,wall_ms";

/// Appends one CSV row per seed to the writer (header is the caller's
/// responsibility, so records from several experiments can share a file).
pub fn write_summary_rows(w: &mut dyn Write, record: &RunRecord) -> std::io::Result<()> {
    for s in &record.seeds {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            record.spec.id,
            record.spec.arch,
            s.seed,
            s.best_energy,
            record.spec.bkv.map(|b| b.to_string()).unwrap_or_default(),
            s.episodes_to_best.map(|e| e.to_string()).unwrap_or_default(),
            s.wall_ms
        )?;
    }
    Ok(())
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, BenchError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: MetricsRow = serde_json::from_str(line)
            .map_err(|_| BenchError::MalformedMetrics { path: path.to_path_buf(), line: i + 1 })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Emits plot-ready CSVs next to each metrics log: a best-energy curve
/// `(episode, best_energy)` and an episode-reward histogram `(bin, count)`
/// with the reward read back from the energy column.
pub fn emit_plot_data(metrics_paths: &[PathBuf]) -> Result<Vec<PathBuf>, BenchError> {
    let mut written = Vec::new();
    for path in metrics_paths {
        let rows = read_metrics(path)?;
        let stem = path.with_extension("");
        let curve_path = PathBuf::from(format!("{}_curve.csv", stem.display()));
        {
            let mut w = BufWriter::new(fs::File::create(&curve_path)?);
            writeln!(w, "episode,best_energy")?;
            for r in &rows {
                writeln!(w, "{},{}", r.episode, r.best_energy)?;
            }
            w.flush()?;
        }
        written.push(curve_path);
        let hist_path = PathBuf::from(format!("{}_reward_hist.csv", stem.display()));
        {
            let mut counts = std::collections::BTreeMap::new();
            for r in &rows {
                *counts.entry(-r.energy).or_insert(0u64) += 1;
            }
            let mut w = BufWriter::new(fs::File::create(&hist_path)?);
            writeln!(w, "bin,count")?;
            for (bin, count) in counts {
                writeln!(w, "{bin},{count}")?;
            }
            w.flush()?;
        }
        written.push(hist_path);
    }
    Ok(written)
}

/// Per-head attention matrices of an LSTM-A checkpoint on one state.
pub fn export_attention(ck: &Checkpoint, state: &StateTensor) -> Result<Vec<Vec<f64>>, BenchError> {
    let arch = ck.descriptor.network.arch;
    if arch != ArchKind::LstmA {
        return Err(BenchError::WrongArchitecture { expected: ArchKind::LstmA, got: arch });
    }
    let net = ck.restore_network()?;
    let lstm_a = net.as_lstm_a().expect("lstm-a checkpoint restores an LstmA");
    Ok(lstm_a.attention_weights_for(state)?)
}

/// Writes each head's `N x N` matrix as a CSV file, returning the paths.
pub fn write_attention_csvs(heads: &[Vec<f64>], n: usize, out_dir: &Path, prefix: &str) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for (h, matrix) in heads.iter().enumerate() {
        let path = out_dir.join(format!("{prefix}_head{h}.csv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for row in 0..n {
            let cells: Vec<String> = matrix[row * n..(row + 1) * n].iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_spec(episodes: u64, seeds: Vec<u64>) -> ExperimentSpec {
        ExperimentSpec {
            id: "custom".into(),
            notation: "HHPPHH".into(),
            bkv: None,
            arch: ArchKind::Ffnn,
            preset: Preset::Desk,
            episodes,
            seeds,
        }
    }

    #[test]
    fn zero_episode_run_produces_sentinels_and_files() {
        let dir = tempdir().unwrap();
        let record = run_experiment(&tiny_spec(0, vec![1]), dir.path()).unwrap();
        assert_eq!(record.best_energy(), BEST_ENERGY_UNSET);
        let s = &record.seeds[0];
        assert!(s.metrics_path.exists());
        assert!(s.checkpoint_path.as_ref().unwrap().exists());
        let mut buf = Vec::new();
        write_summary_rows(&mut buf, &record).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(&BEST_ENERGY_UNSET.to_string()));
    }

    #[test]
    fn identical_specs_give_identical_best_energies() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let r1 = run_experiment(&tiny_spec(25, vec![5]), d1.path()).unwrap();
        let r2 = run_experiment(&tiny_spec(25, vec![5]), d2.path()).unwrap();
        assert_eq!(r1.seeds[0].best_energy, r2.seeds[0].best_energy);
        let m1 = fs::read(&r1.seeds[0].metrics_path).unwrap();
        let m2 = fs::read(&r2.seeds[0].metrics_path).unwrap();
        assert_eq!(m1, m2, "metrics logs must be byte-identical");
    }

    #[test]
    fn plot_data_mirrors_the_log() {
        let dir = tempdir().unwrap();
        let record = run_experiment(&tiny_spec(12, vec![3]), dir.path()).unwrap();
        let paths = emit_plot_data(&[record.seeds[0].metrics_path.clone()]).unwrap();
        assert_eq!(paths.len(), 2);
        let curve = fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(curve.lines().count(), 13, "header plus one row per episode");
        let mut prev = i64::MAX;
        for line in curve.lines().skip(1) {
            let best: i64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert!(best <= prev);
            prev = best;
        }
        let hist = fs::read_to_string(&paths[1]).unwrap();
        let total: u64 = hist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(total, 12, "histogram counts sum to the episode count");
    }

    #[test]
    fn malformed_metrics_report_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        fs::write(&path, "{\"episode\":0,\"epsilon\":1.0,\"energy\":0,\"best_energy\":0,\"mean_loss\":0.0,\"steps\":1,\"trapped\":false}\nnot json\n").unwrap();
        match emit_plot_data(&[path]) {
            Err(BenchError::MalformedMetrics { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
