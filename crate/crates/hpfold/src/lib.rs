//! Protein structure prediction in the 3D hydrophobic-polar lattice model.
//!
//! The crate provides:
//! - [`lattice`]: the cubic-lattice self-avoiding-walk environment with
//!   relative moves, H-H contact energy, and the one-hot state encoding;
//! - [`tensor`]: a small f64 tensor core with reverse-mode gradients and
//!   the Adam optimizer;
//! - [`networks`]: four Q-network architectures (FFNN, reservoir-augmented
//!   FFNN, LSTM with last-hidden readout, LSTM with multi-head attention);
//! - [`dqn`]: the stabilized deep Q-learning trainer with experience
//!   replay and a target network;
//! - [`oracle`]: exact minimum-energy certification by exhaustive
//!   enumeration with symmetry pruning;
//! - [`bench`]: the 20-sequence benchmark registry and experiment runner;
//! - [`checkpoint`]: the HPQN binary checkpoint format.
//!
//! See the `examples/` directory for one runnable example per capability
//! and the `hpfold` binary for the command-line interface.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dqn;
pub mod lattice;
pub mod networks;
pub mod oracle;
pub mod tensor;
