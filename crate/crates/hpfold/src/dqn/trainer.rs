//! The episode loop: act, store, sample, update, sync.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, CheckpointError, Descriptor, Record};
use crate::lattice::{step, Action, Conformation, HPSequence, StepResult, TerminalKind};
use crate::networks::{build_network, QNetwork};
use crate::tensor::AdamState;

use super::{select_action, sync_target, train_step, DqnError, ReplayBuffer, TrainerConfig, Transition};

/// Sentinel for "no completed fold yet".
pub const BEST_ENERGY_UNSET: i64 = i64::MAX;

/// One JSON line per episode in the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRow {
    pub episode: u64,
    pub epsilon: f64,
    pub energy: i32,
    pub best_energy: i64,
    pub mean_loss: f64,
    pub steps: u32,
    pub trapped: bool,
}

pub struct TrainOptions<'a> {
    /// JSONL sink for per-episode metrics.
    pub metrics: Option<&'a mut dyn Write>,
    /// Where periodic and final checkpoints go.
    pub checkpoint_dir: Option<&'a Path>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions { metrics: None, checkpoint_dir: None }
    }
}

#[derive(Debug)]
pub struct TrainReport {
    pub episodes_run: u64,
    /// `BEST_ENERGY_UNSET` when no episode completed.
    pub best_energy: i64,
    pub best_conformation: Option<Conformation>,
    pub episodes_to_best: Option<u64>,
    pub final_checkpoint: Option<PathBuf>,
    pub wall: Duration,
}

/// Owns the main/target networks, buffer, optimizer, and RNG for one run.
pub struct Trainer {
    sequence: Arc<HPSequence>,
    cfg: TrainerConfig,
    main: Box<dyn QNetwork>,
    target: Box<dyn QNetwork>,
    buffer: ReplayBuffer,
    adam: AdamState,
    rng: ChaCha12Rng,
    episode: u64,
    grad_steps: u64,
    best_energy: i64,
    best_actions: Option<Vec<Action>>,
    episodes_to_best: Option<u64>,
}

impl Trainer {
    pub fn new(sequence: Arc<HPSequence>, net: Box<dyn QNetwork>, cfg: TrainerConfig) -> Self {
        let target = net.clone_network();
        let adam = AdamState::new(&net.parameters(), cfg.lr);
        // decouple the trainer stream from the init streams that share the
        // user-facing seed
        let rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        Trainer {
            sequence,
            cfg,
            main: net,
            target,
            buffer,
            adam,
            rng,
            episode: 0,
            grad_steps: 0,
            best_energy: BEST_ENERGY_UNSET,
            best_actions: None,
            episodes_to_best: None,
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    /// Replaces the config (used on resume to set a fresh episode budget).
    pub fn with_config(mut self, cfg: TrainerConfig) -> Self {
        self.cfg = cfg;
        self
    }

    pub fn network(&self) -> &dyn QNetwork {
        self.main.as_ref()
    }

    pub fn target_network(&self) -> &dyn QNetwork {
        self.target.as_ref()
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn best_energy(&self) -> i64 {
        self.best_energy
    }

    /// Replays the best fold found so far.
    pub fn best_conformation(&self) -> Option<Conformation> {
        let actions = self.best_actions.as_ref()?;
        let mut c = Conformation::anchor(Arc::clone(&self.sequence));
        for a in actions {
            c = c.apply_action(*a).expect("recorded best walk is legal");
        }
        Some(c)
    }

    /// Runs one episode, learning after every environment step once the
    /// buffer can fill a batch. Returns the metrics row.
    pub fn run_training_episode(&mut self) -> Result<MetricsRow, DqnError> {
        let eps = self.cfg.epsilon.value(self.episode);
        let mut c = Conformation::anchor(Arc::clone(&self.sequence));
        let mut losses_sum = 0.0;
        let mut losses_n = 0u32;
        let mut steps = 0u32;
        let outcome = loop {
            if c.is_complete() {
                // only reachable for two-residue sequences
                break c.clone().complete_outcome();
            }
            let state = c.encode_state();
            let legal = c.legal_actions();
            let q = self.main.as_ref().forward(&state)?;
            let a = select_action(&q, legal, eps, &mut self.rng);
            let (result, reward) = step(&c, a, self.cfg.trap_penalty)?;
            steps += 1;
            let (next_state, terminal) = match &result {
                StepResult::Ongoing(next) => (next.encode_state(), false),
                StepResult::Terminal(o) => (o.conformation.encode_state(), true),
            };
            self.buffer.push(Transition { state, action: a, reward, next_state, terminal });
            if self.buffer.len() >= self.cfg.batch_size {
                let idx = self.buffer.sample_indices(self.cfg.batch_size, &mut self.rng);
                let batch: Vec<&Transition> = idx.iter().map(|i| self.buffer.get(*i)).collect();
                let mask = if self.cfg.masked_targets { Some(&self.sequence) } else { None };
                let loss = train_step(self.main.as_ref(), self.target.as_ref(), &batch, &self.cfg, &mut self.adam, mask)?;
                losses_sum += loss;
                losses_n += 1;
                self.grad_steps += 1;
                if self.grad_steps % self.cfg.target_sync == 0 {
                    sync_target(self.main.as_ref(), self.target.as_ref())?;
                }
            }
            match result {
                StepResult::Ongoing(next) => c = next,
                StepResult::Terminal(o) => break o,
            }
        };
        if outcome.terminal_kind == TerminalKind::Completed && i64::from(outcome.energy) < self.best_energy {
            self.best_energy = i64::from(outcome.energy);
            self.best_actions = Some(outcome.conformation.actions_taken().to_vec());
            self.episodes_to_best = Some(self.episode);
        }
        let row = MetricsRow {
            episode: self.episode,
            epsilon: eps,
            energy: outcome.energy,
            best_energy: self.best_energy,
            mean_loss: if losses_n > 0 { losses_sum / f64::from(losses_n) } else { 0.0 },
            steps,
            trapped: outcome.terminal_kind == TerminalKind::Trapped,
        };
        self.episode += 1;
        Ok(row)
    }

    /// Runs the configured number of episodes, streaming metrics and
    /// checkpointing along the way.
    pub fn train(&mut self, options: &mut TrainOptions<'_>) -> Result<TrainReport, DqnError> {
        let start = Instant::now();
        let first = self.episode;
        while self.episode < first + self.cfg.episodes {
            let row = self.run_training_episode()?;
            if let Some(sink) = options.metrics.as_deref_mut() {
                serde_json::to_writer(&mut *sink, &row).map_err(std::io::Error::from)?;
                sink.write_all(b"\n")?;
            }
            if let (Some(dir), Some(every)) = (options.checkpoint_dir, self.cfg.checkpoint_every) {
                if every > 0 && self.episode % every == 0 && self.episode < first + self.cfg.episodes {
                    let path = dir.join(format!("checkpoint_ep{}.hpqn", self.episode));
                    self.save_checkpoint(&path).map_err(Box::new)?;
                }
            }
        }
        let final_checkpoint = match options.checkpoint_dir {
            Some(dir) => {
                let path = dir.join("checkpoint_final.hpqn");
                self.save_checkpoint(&path).map_err(Box::new)?;
                Some(path)
            }
            None => None,
        };
        Ok(TrainReport {
            episodes_run: self.episode - first,
            best_energy: self.best_energy,
            best_conformation: self.best_conformation(),
            episodes_to_best: self.episodes_to_best,
            final_checkpoint,
            wall: start.elapsed(),
        })
    }

    /// Writes weights, target weights, optimizer moments, counters, and
    /// the RNG position. The replay buffer is not persisted; a resumed
    /// run refills it before learning resumes.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        let descriptor = Descriptor {
            network: self.main.config().clone(),
            sequence_notation: self.sequence.letters(),
            sequence_id: self.sequence.id().map(str::to_string),
            trainer: Some(serde_json::to_value(&self.cfg)?),
        };
        let mut records: Vec<Record> = self
            .main
            .state_tensors()
            .iter()
            .map(|(name, t)| Record::from_tensor(name, t))
            .collect();
        for (name, t) in self.target.state_tensors() {
            records.push(Record::from_tensor(&format!("target/{name}"), &t));
        }
        let (first, second) = self.adam.moments();
        for (i, m) in first.iter().enumerate() {
            records.push(Record { name: format!("adam/m/{i}"), dims: vec![m.len()], data: m.clone() });
        }
        for (i, v) in second.iter().enumerate() {
            records.push(Record { name: format!("adam/v/{i}"), dims: vec![v.len()], data: v.clone() });
        }
        records.push(Record::scalar("trainer/episode", self.episode as f64));
        records.push(Record::from_words("trainer/grad_steps", &[self.grad_steps]));
        records.push(Record::from_words("trainer/adam_steps", &[self.adam.step_count()]));
        records.push(Record::from_words("trainer/best_energy", &[self.best_energy as u64]));
        if let Some(ep) = self.episodes_to_best {
            records.push(Record::from_words("trainer/episodes_to_best", &[ep]));
        }
        if let Some(actions) = &self.best_actions {
            records.push(Record {
                name: "trainer/best_actions".to_string(),
                dims: vec![actions.len()],
                data: actions.iter().map(|a| a.index() as f64).collect(),
            });
        }
        let seed = self.rng.get_seed();
        let mut words = Vec::with_capacity(6);
        for chunk in seed.chunks(8) {
            words.push(u64::from_le_bytes(chunk.try_into().expect("32-byte seed")));
        }
        let pos = self.rng.get_word_pos();
        words.push(pos as u64);
        words.push((pos >> 64) as u64);
        records.push(Record::from_words("trainer/rng", &words));
        checkpoint::save(path, &descriptor, &records)
    }

    /// Rebuilds a trainer from a checkpoint written by `save_checkpoint`.
    pub fn resume(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let cfg: TrainerConfig = match &ck.descriptor.trainer {
            Some(v) => serde_json::from_value(v.clone())?,
            None => {
                return Err(CheckpointError::BadHeader("checkpoint carries no trainer state".into()));
            }
        };
        let sequence = Arc::new(
            crate::lattice::parse_hp_notation_labeled(
                &ck.descriptor.sequence_notation,
                ck.descriptor.sequence_id.as_deref().unwrap_or(&ck.descriptor.sequence_notation),
            )
            .map_err(|e| CheckpointError::BadHeader(format!("bad sequence in descriptor: {e}")))?,
        );
        let main = ck.restore_network()?;
        let target = build_network(&ck.descriptor.network)?;
        for (name, tensor) in target.state_tensors() {
            let rec = ck
                .get(&format!("target/{name}"))
                .ok_or_else(|| CheckpointError::MissingWeight(format!("target/{name}")))?;
            tensor.data_mut().copy_from_slice(&rec.data);
        }
        let mut trainer = Trainer::new(sequence, main, cfg);
        // Trainer::new clones main into a fresh target; overwrite it
        (trainer.target.as_ref() as &dyn QNetwork)
            .clone_weights_from(target.as_ref())?;
        let params = trainer.main.parameters();
        let mut first = Vec::with_capacity(params.len());
        let mut second = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let m = ck.get(&format!("adam/m/{i}")).ok_or_else(|| CheckpointError::MissingWeight(format!("adam/m/{i}")))?;
            let v = ck.get(&format!("adam/v/{i}")).ok_or_else(|| CheckpointError::MissingWeight(format!("adam/v/{i}")))?;
            first.push(m.data.clone());
            second.push(v.data.clone());
        }
        let word = |name: &str| -> Result<u64, CheckpointError> {
            Ok(ck
                .get(name)
                .ok_or_else(|| CheckpointError::MissingWeight(name.to_string()))?
                .to_words()[0])
        };
        trainer.adam.restore(first, second, word("trainer/adam_steps")?);
        trainer.episode = ck
            .get("trainer/episode")
            .ok_or_else(|| CheckpointError::MissingWeight("trainer/episode".into()))?
            .data[0] as u64;
        trainer.grad_steps = word("trainer/grad_steps")?;
        trainer.best_energy = word("trainer/best_energy")? as i64;
        trainer.episodes_to_best = ck.get("trainer/episodes_to_best").map(|r| r.to_words()[0]);
        trainer.best_actions = ck.get("trainer/best_actions").map(|r| {
            r.data
                .iter()
                .map(|v| Action::from_index(*v as usize).expect("valid action index"))
                .collect()
        });
        let rng_words = ck
            .get("trainer/rng")
            .ok_or_else(|| CheckpointError::MissingWeight("trainer/rng".into()))?
            .to_words();
        let mut seed = [0u8; 32];
        for (i, w) in rng_words[..4].iter().enumerate() {
            seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(seed);
        rng.set_word_pos(u128::from(rng_words[4]) | (u128::from(rng_words[5]) << 64));
        trainer.rng = rng;
        Ok(trainer)
    }
}

impl Conformation {
    fn complete_outcome(self) -> crate::lattice::FoldOutcome {
        let contacts = self.contacts();
        crate::lattice::FoldOutcome {
            energy: -(contacts as i32),
            contacts,
            terminal_kind: TerminalKind::Completed,
            conformation: self,
        }
    }
}
