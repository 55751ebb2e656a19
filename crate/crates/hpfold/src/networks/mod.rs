//! The four Q-network architectures behind one interface: a state tensor
//! goes in, five Q-values come out.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Action, ActionSet, StateTensor};
use crate::tensor::{xavier_uniform, Tape, Tensor, TensorError};

mod ffnn;
mod lstm;
mod reservoir;

pub use ffnn::Ffnn;
pub use lstm::{multihead_attention, AttentionWeights, LstmA, LstmOlh};
pub use reservoir::{init_reservoir, FfnnR};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("state has {got} rows, network configured for {expected}")]
    WrongSequenceLength { expected: usize, got: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("architecture mismatch: {expected} vs {got}")]
    ArchMismatch { expected: ArchKind, got: ArchKind },
}

/// Q-values for the five actions, indexed in the fixed F < L < R < U < D
/// order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QValues {
    pub values: [f64; 5],
}

impl QValues {
    pub fn get(&self, a: Action) -> f64 {
        self.values[a.index()]
    }

    /// Greedy choice among `legal`, ties broken by action order.
    pub fn argmax_legal(&self, legal: ActionSet) -> Option<Action> {
        let mut best: Option<(Action, f64)> = None;
        for a in legal.iter() {
            let v = self.get(a);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((a, v));
            }
        }
        best.map(|(a, _)| a)
    }

    /// Maximum over all five outputs (no legality masking).
    pub fn max_all(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Maximum over a restricted action set.
    pub fn max_over(&self, set: ActionSet) -> f64 {
        set.iter().map(|a| self.get(a)).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Ffnn,
    FfnnR,
    LstmOlh,
    LstmA,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchKind::Ffnn => "ffnn",
            ArchKind::FfnnR => "ffnn-r",
            ArchKind::LstmOlh => "lstm-olh",
            ArchKind::LstmA => "lstm-a",
        };
        write!(f, "{s}")
    }
}

impl FromStr for ArchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ffnn" => Ok(ArchKind::Ffnn),
            "ffnn-r" => Ok(ArchKind::FfnnR),
            "lstm-olh" => Ok(ArchKind::LstmOlh),
            "lstm-a" => Ok(ArchKind::LstmA),
            other => Err(format!("unknown architecture {other:?} (expected ffnn, ffnn-r, lstm-olh, lstm-a)")),
        }
    }
}

/// Reservoir layer shape: size, Erdos-Renyi connectivity, and the seed the
/// frozen matrix is drawn from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub size: usize,
    pub connectivity: f64,
    pub seed: u64,
}

impl ReservoirConfig {
    /// Benchmark sizing: 1000 nodes up to 36 residues, 3000 beyond.
    pub fn paper_for_len(n: usize, seed: u64) -> Self {
        let size = if n <= 36 { 1000 } else { 3000 };
        ReservoirConfig { size, connectivity: 0.10, seed }
    }
}

/// LSTM/attention sizing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub hidden: usize,
    pub heads: usize,
    pub lstm_layers: usize,
}

impl AttentionConfig {
    /// Benchmark sizing: d=512, 4 heads, 3 layers up to 36 residues,
    /// 5 beyond.
    pub fn paper_for_len(n: usize) -> Self {
        AttentionConfig { hidden: 512, heads: 4, lstm_layers: if n <= 36 { 3 } else { 5 } }
    }
}

/// Everything needed to rebuild a network: embedded verbatim in
/// checkpoints so evaluation needs no external config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: ArchKind,
    pub seq_len: usize,
    /// Hidden sizes of the dense head (FFNN and FFNN-R).
    pub head_sizes: Vec<usize>,
    pub reservoir: ReservoirConfig,
    /// The input projection trains by default; freeze it to reproduce
    /// trainable-parameter counts that exclude it.
    pub w_in_trainable: bool,
    /// Optional spectral-radius rescale of the frozen reservoir matrix.
    /// Off by default: raw Xavier-uniform entries are kept as-is, which
    /// can push the recurrence into tanh saturation for large sizes.
    pub spectral_radius: Option<f64>,
    pub attention: AttentionConfig,
    /// Initial value of the forget-gate slice of the LSTM input bias.
    pub forget_bias: f64,
    pub init_seed: u64,
}

impl NetworkConfig {
    /// Small sizes for fast CPU runs: 64-wide hidden layers, a 200-node
    /// reservoir, a single LSTM layer.
    pub fn desk(arch: ArchKind, seq_len: usize, seed: u64) -> Self {
        NetworkConfig {
            arch,
            seq_len,
            head_sizes: vec![64, 32, 16],
            reservoir: ReservoirConfig { size: 200, connectivity: 0.10, seed },
            w_in_trainable: true,
            spectral_radius: None,
            attention: AttentionConfig { hidden: 64, heads: 4, lstm_layers: 1 },
            forget_bias: 1.0,
            init_seed: seed,
        }
    }

    /// Benchmark sizes. FFNN uses the 512-256-84 head; FFNN-R inserts the
    /// extra 128 layer after its reservoir.
    pub fn paper(arch: ArchKind, seq_len: usize, seed: u64) -> Self {
        let head_sizes = match arch {
            ArchKind::FfnnR => vec![512, 256, 128, 84],
            _ => vec![512, 256, 84],
        };
        NetworkConfig {
            arch,
            seq_len,
            head_sizes,
            reservoir: ReservoirConfig::paper_for_len(seq_len, seed),
            w_in_trainable: true,
            spectral_radius: None,
            attention: AttentionConfig::paper_for_len(seq_len),
            forget_bias: 1.0,
            init_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.head_sizes.is_empty() {
            return Err(NetworkError::InvalidConfig("head_sizes must not be empty".into()));
        }
        if self.attention.hidden % self.attention.heads != 0 {
            return Err(NetworkError::InvalidConfig(format!(
                "hidden size {} not divisible by {} heads",
                self.attention.hidden, self.attention.heads
            )));
        }
        if self.attention.lstm_layers == 0 {
            return Err(NetworkError::InvalidConfig("lstm_layers must be >= 1".into()));
        }
        if !(self.reservoir.connectivity > 0.0 && self.reservoir.connectivity <= 1.0) {
            return Err(NetworkError::InvalidConfig(format!(
                "connectivity {} outside (0, 1]",
                self.reservoir.connectivity
            )));
        }
        Ok(())
    }
}

/// Common interface of the four architectures.
pub trait QNetwork {
    fn config(&self) -> &NetworkConfig;

    /// Batched forward pass: one row of five Q-values per state.
    fn forward_batch(&self, tape: &Tape, states: &[&StateTensor]) -> Result<Tensor, NetworkError>;

    /// Trainable parameters, in a stable order. Frozen tensors (the
    /// reservoir matrix) are excluded.
    fn parameters(&self) -> Vec<Tensor>;

    /// All named weights, trainable and frozen, for checkpoints.
    fn state_tensors(&self) -> Vec<(String, Tensor)>;

    fn clone_network(&self) -> Box<dyn QNetwork>;

    /// Concrete access for attention-weight export.
    fn as_lstm_a(&self) -> Option<&LstmA> {
        None
    }
}

impl dyn QNetwork + '_ {
    /// Single-state inference (no gradients recorded).
    pub fn forward(&self, state: &StateTensor) -> Result<QValues, NetworkError> {
        let tape = Tape::no_grad();
        let out = self.forward_batch(&tape, &[state])?;
        let d = out.data();
        Ok(QValues { values: [d[0], d[1], d[2], d[3], d[4]] })
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Copies every weight of `other` into this network.
    pub fn clone_weights_from(&self, other: &dyn QNetwork) -> Result<(), NetworkError> {
        if self.config().arch != other.config().arch {
            return Err(NetworkError::ArchMismatch { expected: self.config().arch, got: other.config().arch });
        }
        let mine = self.state_tensors();
        let theirs = other.state_tensors();
        if mine.len() != theirs.len() {
            return Err(NetworkError::InvalidConfig("weight lists differ in length".into()));
        }
        for ((name_a, a), (name_b, b)) in mine.iter().zip(theirs.iter()) {
            if name_a != name_b || a.shape() != b.shape() {
                return Err(NetworkError::InvalidConfig(format!("weight {name_a} does not match {name_b}")));
            }
            a.copy_from(b);
        }
        Ok(())
    }
}

/// Builds the architecture named by the config.
pub fn build_network(config: &NetworkConfig) -> Result<Box<dyn QNetwork>, NetworkError> {
    config.validate()?;
    Ok(match config.arch {
        ArchKind::Ffnn => Box::new(Ffnn::new(config.clone())?),
        ArchKind::FfnnR => Box::new(FfnnR::new(config.clone())?),
        ArchKind::LstmOlh => Box::new(LstmOlh::new(config.clone())?),
        ArchKind::LstmA => Box::new(LstmA::new(config.clone())?),
    })
}

/// Dense layer in row-per-output layout: `y = x W^T + b`.
pub(crate) struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: xavier_uniform(&[out_dim, in_dim], in_dim, out_dim, rng).param(),
            b: Tensor::zeros(&[out_dim]).param(),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        let y = tape.matmul_nt(x, &self.w)?;
        tape.add_row_broadcast(&y, &self.b)
    }

    pub fn push_named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Stacks flattened states into a `(B, 8N)` constant tensor.
pub(crate) fn flatten_states(states: &[&StateTensor], seq_len: usize) -> Result<Tensor, NetworkError> {
    let mut data = Vec::with_capacity(states.len() * seq_len * 8);
    for s in states {
        if s.n() != seq_len {
            return Err(NetworkError::WrongSequenceLength { expected: seq_len, got: s.n() });
        }
        data.extend_from_slice(s.data());
    }
    Ok(Tensor::from_vec(&[states.len(), seq_len * 8], data))
}

/// Row `t` of every state as a `(B, 8)` constant tensor.
pub(crate) fn state_rows(states: &[&StateTensor], t: usize) -> Tensor {
    let mut data = Vec::with_capacity(states.len() * 8);
    for s in states {
        data.extend_from_slice(s.row(t));
    }
    Tensor::from_vec(&[states.len(), 8], data)
}
