//! Stabilized deep Q-learning: replay buffer, target network, epsilon-
//! greedy policy, target computation, and the training loop.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{
    step, Action, ActionSet, Conformation, FoldOutcome, HPSequence, LatticeError, StateTensor,
};
use crate::networks::{NetworkError, QNetwork, QValues};
use crate::tensor::{Tape, Tensor, TensorError};

mod trainer;

pub use trainer::{MetricsRow, TrainOptions, TrainReport, Trainer, BEST_ENERGY_UNSET};

#[derive(Debug, Error)]
pub enum DqnError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("metrics sink: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] Box<crate::checkpoint::CheckpointError>),
}

/// One experienced transition. For terminal transitions `next_state` is
/// the encoding at termination; it is stored for uniformity and ignored
/// by the target computation.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateTensor,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateTensor,
    pub terminal: bool,
}

/// Fixed-size experience cache with oldest-first eviction.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer { capacity, storage: VecDeque::with_capacity(capacity.min(1 << 20)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.storage[i]
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(!self.storage.is_empty());
        (0..batch).map(|_| rng.gen_range(0..self.storage.len())).collect()
    }
}

/// Linear-decay exploration schedule: `eps_start` at episode 0 down to
/// `eps_end` at `decay_horizon`, constant afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_horizon: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, episode: u64) -> f64 {
        if episode >= self.decay_horizon || self.decay_horizon == 0 {
            self.eps_end
        } else {
            let frac = episode as f64 / self.decay_horizon as f64;
            self.eps_start - (self.eps_start - self.eps_end) * frac
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SmoothL1,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smooth-l1" => Ok(LossKind::SmoothL1),
            "mse" => Ok(LossKind::Mse),
            other => Err(format!("unknown loss {other:?} (expected smooth-l1 or mse)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    /// Sync the target network every this many gradient steps.
    pub target_sync: u64,
    pub episodes: u64,
    pub buffer_capacity: usize,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub lr: f64,
    pub epsilon: EpsilonSchedule,
    pub trap_penalty: f64,
    /// Restrict the bootstrap max to legal actions. Off by default: the
    /// plain update takes the max over all five outputs.
    pub masked_targets: bool,
    pub checkpoint_every: Option<u64>,
}

impl TrainerConfig {
    pub fn new(episodes: u64, seed: u64) -> Self {
        TrainerConfig {
            gamma: 0.98,
            batch_size: 16,
            target_sync: 1000,
            episodes,
            buffer_capacity: 100_000,
            loss_kind: LossKind::SmoothL1,
            seed,
            lr: 0.001,
            epsilon: EpsilonSchedule {
                eps_start: 1.0,
                eps_end: 0.05,
                decay_horizon: (episodes / 2).max(1),
            },
            trap_penalty: 0.0,
            masked_targets: false,
            checkpoint_every: None,
        }
    }
}

/// Epsilon-greedy selection over the legal set. Greedy ties break by the
/// fixed F < L < R < U < D order. The uniform coin is always drawn so the
/// random stream does not depend on epsilon.
pub fn select_action(q: &QValues, legal: ActionSet, eps: f64, rng: &mut impl Rng) -> Action {
    assert!(!legal.is_empty(), "select_action on an empty legal set");
    let coin: f64 = rng.gen();
    if coin < eps {
        let k = rng.gen_range(0..legal.len());
        legal.nth(k).expect("index within set")
    } else {
        q.argmax_legal(legal).expect("non-empty set")
    }
}

/// Bootstrap targets: `r` for terminal transitions, else
/// `r + gamma * max_a' Q(s', a'; target)`. The max runs over all five
/// outputs unless `mask_with` supplies the sequence for legality masking.
pub fn compute_targets(
    batch: &[&Transition],
    target_net: &dyn QNetwork,
    gamma: f64,
    mask_with: Option<&Arc<HPSequence>>,
) -> Result<Vec<f64>, DqnError> {
    assert!(!batch.is_empty(), "compute_targets on an empty batch");
    let mut targets = vec![0.0; batch.len()];
    let mut pending: Vec<usize> = Vec::new();
    for (i, t) in batch.iter().enumerate() {
        if t.terminal {
            targets[i] = t.reward;
        } else {
            pending.push(i);
        }
    }
    if !pending.is_empty() {
        let tape = Tape::no_grad();
        let states: Vec<&StateTensor> = pending.iter().map(|i| &batch[*i].next_state).collect();
        let qs = target_net.forward_batch(&tape, &states)?;
        let data = qs.data();
        for (row, &i) in pending.iter().enumerate() {
            let values = &data[row * 5..(row + 1) * 5];
            let q = QValues { values: [values[0], values[1], values[2], values[3], values[4]] };
            let max_q = match mask_with {
                None => q.max_all(),
                Some(seq) => {
                    let legal = replay_conformation(seq, &batch[i].next_state).legal_actions();
                    q.max_over(legal)
                }
            };
            targets[i] = batch[i].reward + gamma * max_q;
        }
    }
    Ok(targets)
}

/// Rebuilds the conformation a state tensor describes by replaying its
/// encoded actions.
fn replay_conformation(seq: &Arc<HPSequence>, state: &StateTensor) -> Conformation {
    let mut c = Conformation::anchor(Arc::clone(seq));
    for a in state.decode_actions() {
        c = c.apply_action(a).expect("encoded walk is self-avoiding");
    }
    c
}

/// One gradient step on `main` against targets from `target`.
/// Targets are constants; no gradient flows through the target network.
pub fn train_step(
    main: &dyn QNetwork,
    target: &dyn QNetwork,
    batch: &[&Transition],
    cfg: &TrainerConfig,
    adam: &mut crate::tensor::AdamState,
    mask_with: Option<&Arc<HPSequence>>,
) -> Result<f64, DqnError> {
    let targets = compute_targets(batch, target, cfg.gamma, mask_with)?;
    let tape = Tape::new();
    let states: Vec<&StateTensor> = batch.iter().map(|t| &t.state).collect();
    let qs = main.forward_batch(&tape, &states)?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
    let pred = tape.gather_per_row(&qs, &actions)?;
    let target_tensor = Tensor::from_vec(&[batch.len(), 1], targets);
    let loss = match cfg.loss_kind {
        LossKind::SmoothL1 => tape.smooth_l1(&pred, &target_tensor, 1.0)?,
        LossKind::Mse => tape.mse(&pred, &target_tensor)?,
    };
    tape.backward(&loss)?;
    adam.step(&main.parameters())?;
    Ok(loss.item())
}

/// Copies main-network weights into the target network (bit-identical).
pub fn sync_target(main: &dyn QNetwork, target: &dyn QNetwork) -> Result<(), DqnError> {
    target.clone_weights_from(main)?;
    Ok(())
}

/// Rolls one full episode from the anchor with a fixed epsilon, without
/// learning. Returns the outcome and the transitions in order.
pub fn run_episode(
    sequence: &Arc<HPSequence>,
    net: &dyn QNetwork,
    eps: f64,
    trap_penalty: f64,
    rng: &mut impl Rng,
) -> Result<(FoldOutcome, Vec<Transition>), DqnError> {
    let mut c = Conformation::anchor(Arc::clone(sequence));
    let mut transitions = Vec::new();
    if c.is_complete() {
        // two-residue sequences are complete at the anchor
        let contacts = c.contacts();
        return Ok((
            FoldOutcome {
                energy: -(contacts as i32),
                contacts,
                terminal_kind: crate::lattice::TerminalKind::Completed,
                conformation: c,
            },
            transitions,
        ));
    }
    loop {
        let state = c.encode_state();
        let legal = c.legal_actions();
        let q = net.forward(&state)?;
        let a = select_action(&q, legal, eps, rng);
        let (result, reward) = step(&c, a, trap_penalty)?;
        match result {
            crate::lattice::StepResult::Ongoing(next) => {
                transitions.push(Transition {
                    state,
                    action: a,
                    reward,
                    next_state: next.encode_state(),
                    terminal: false,
                });
                c = next;
            }
            crate::lattice::StepResult::Terminal(outcome) => {
                transitions.push(Transition {
                    state,
                    action: a,
                    reward,
                    next_state: outcome.conformation.encode_state(),
                    terminal: true,
                });
                return Ok((outcome, transitions));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::parse_hp_notation;
    use crate::networks::{build_network, ArchKind, NetworkConfig};
    use crate::tensor::AdamState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn qv(values: [f64; 5]) -> QValues {
        QValues { values }
    }

    #[test]
    fn greedy_picks_argmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a = select_action(&qv([1.0, 5.0, 2.0, 0.0, 0.0]), ActionSet::all(), 0.0, &mut rng);
        assert_eq!(a, Action::L);
    }

    #[test]
    fn greedy_ties_break_in_action_order() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a = select_action(&qv([3.0, 3.0, 0.0, 0.0, 0.0]), ActionSet::all(), 0.0, &mut rng);
        assert_eq!(a, Action::F);
    }

    #[test]
    fn greedy_respects_legality() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut legal = ActionSet::empty();
        legal.insert(Action::U);
        legal.insert(Action::D);
        let a = select_action(&qv([9.0, 9.0, 9.0, 1.0, 2.0]), legal, 0.0, &mut rng);
        assert_eq!(a, Action::D);
    }

    #[test]
    fn buffer_evicts_oldest_first() {
        let seq = Arc::new(parse_hp_notation("HPH").unwrap());
        let c = Conformation::anchor(seq);
        let s = c.encode_state();
        let make = |r: f64| Transition {
            state: s.clone(),
            action: Action::F,
            reward: r,
            next_state: s.clone(),
            terminal: false,
        };
        let mut buf = ReplayBuffer::new(3);
        for r in 0..5 {
            buf.push(make(r as f64));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.get(0).reward, 2.0);
        assert_eq!(buf.get(2).reward, 4.0);
    }

    #[test]
    fn epsilon_schedule_is_monotone_and_clamped() {
        let sch = EpsilonSchedule { eps_start: 1.0, eps_end: 0.05, decay_horizon: 100 };
        assert_eq!(sch.value(0), 1.0);
        assert_eq!(sch.value(100), 0.05);
        assert_eq!(sch.value(10_000), 0.05);
        let mut prev = f64::INFINITY;
        for e in 0..200 {
            let v = sch.value(e);
            assert!(v <= prev);
            prev = v;
        }
    }

    fn tiny_net(seq_len: usize, seed: u64) -> Box<dyn QNetwork> {
        let mut cfg = NetworkConfig::desk(ArchKind::Ffnn, seq_len, seed);
        cfg.head_sizes = vec![16, 8];
        build_network(&cfg).unwrap()
    }

    fn batch_of(seq: &Arc<HPSequence>, net: &dyn QNetwork, n: usize) -> Vec<Transition> {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut out = Vec::new();
        while out.len() < n {
            let (_, mut ts) = run_episode(seq, net, 1.0, 0.0, &mut rng).unwrap();
            out.append(&mut ts);
        }
        out.truncate(n);
        out
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let seq = Arc::new(parse_hp_notation("HPHH").unwrap());
        let net = tiny_net(4, 3);
        let mut ts = batch_of(&seq, net.as_ref(), 4);
        ts[0].terminal = true;
        ts[0].reward = 7.0;
        let refs: Vec<&Transition> = ts.iter().collect();
        let targets = compute_targets(&refs, net.as_ref(), 0.9, None).unwrap();
        assert_eq!(targets[0], 7.0);
    }

    #[test]
    fn nonterminal_target_is_bellman() {
        let seq = Arc::new(parse_hp_notation("HPHH").unwrap());
        let net = tiny_net(4, 3);
        let ts = batch_of(&seq, net.as_ref(), 3);
        let refs: Vec<&Transition> = ts.iter().collect();
        let targets = compute_targets(&refs, net.as_ref(), 0.9, None).unwrap();
        for (t, y) in refs.iter().zip(&targets) {
            if !t.terminal {
                let q = net.forward(&t.next_state).unwrap();
                assert!((y - (t.reward + 0.9 * q.max_all())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gamma_collapses_to_rewards() {
        let seq = Arc::new(parse_hp_notation("HPHH").unwrap());
        let net = tiny_net(4, 3);
        let ts = batch_of(&seq, net.as_ref(), 5);
        let refs: Vec<&Transition> = ts.iter().collect();
        let targets = compute_targets(&refs, net.as_ref(), 0.0, None).unwrap();
        for (t, y) in refs.iter().zip(&targets) {
            assert_eq!(*y, t.reward);
        }
    }

    #[test]
    fn terminal_branch_ignores_next_state_q_values() {
        // Mutation test: retargeting the terminal transitions against a
        // different network must not change their targets, while
        // non-terminal targets must move.
        let seq = Arc::new(parse_hp_notation("HPHHH").unwrap());
        let net_a = tiny_net(5, 3);
        let net_b = tiny_net(5, 99);
        let mut ts = batch_of(&seq, net_a.as_ref(), 6);
        ts[0].terminal = true;
        ts[1].terminal = false;
        let refs: Vec<&Transition> = ts.iter().collect();
        let ya = compute_targets(&refs, net_a.as_ref(), 0.9, None).unwrap();
        let yb = compute_targets(&refs, net_b.as_ref(), 0.9, None).unwrap();
        assert_eq!(ya[0], yb[0], "terminal target read the next-state Q-values");
        assert_ne!(ya[1], yb[1], "mutated target network should move non-terminal targets");
    }

    #[test]
    fn masked_targets_use_legal_max() {
        let seq = Arc::new(parse_hp_notation("HPHHH").unwrap());
        let net = tiny_net(5, 3);
        let ts = batch_of(&seq, net.as_ref(), 6);
        let refs: Vec<&Transition> = ts.iter().collect();
        let unmasked = compute_targets(&refs, net.as_ref(), 0.9, None).unwrap();
        let masked = compute_targets(&refs, net.as_ref(), 0.9, Some(&seq)).unwrap();
        for ((t, u), m) in refs.iter().zip(&unmasked).zip(&masked) {
            if t.terminal {
                assert_eq!(u, m);
            } else {
                let legal = replay_conformation(&seq, &t.next_state).legal_actions();
                let q = net.forward(&t.next_state).unwrap();
                assert!((m - (t.reward + 0.9 * q.max_over(legal))).abs() < 1e-12);
                assert!(*m <= u + 1e-12, "masking can only lower the max");
            }
        }
    }

    #[test]
    fn train_step_with_matching_targets_keeps_loss_zero() {
        // Force every transition terminal with reward equal to the current
        // prediction: loss 0 and zero gradients.
        let seq = Arc::new(parse_hp_notation("HPHH").unwrap());
        let net = tiny_net(4, 3);
        let target = net.clone_network();
        let mut ts = batch_of(&seq, net.as_ref(), 4);
        for t in &mut ts {
            t.terminal = true;
            t.reward = net.forward(&t.state).unwrap().get(t.action);
        }
        let refs: Vec<&Transition> = ts.iter().collect();
        let mut cfg = TrainerConfig::new(10, 0);
        cfg.batch_size = refs.len();
        let params = net.parameters();
        let before: Vec<Vec<f64>> = params.iter().map(|p| p.data().clone()).collect();
        let mut adam = AdamState::new(&params, cfg.lr);
        let loss = train_step(net.as_ref(), target.as_ref(), &refs, &cfg, &mut adam, None).unwrap();
        assert_eq!(loss, 0.0);
        for (p, b) in params.iter().zip(&before) {
            assert_eq!(*p.data(), *b, "zero gradients must not move parameters");
        }
    }

    #[test]
    fn train_step_loss_is_finite_and_nonnegative() {
        let seq = Arc::new(parse_hp_notation("HPHH").unwrap());
        let net = tiny_net(4, 3);
        let target = net.clone_network();
        let ts = batch_of(&seq, net.as_ref(), 8);
        let refs: Vec<&Transition> = ts.iter().collect();
        let mut cfg = TrainerConfig::new(10, 0);
        cfg.batch_size = refs.len();
        let mut adam = AdamState::new(&net.parameters(), cfg.lr);
        let loss = train_step(net.as_ref(), target.as_ref(), &refs, &cfg, &mut adam, None).unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
    }

    #[test]
    fn single_transition_loss_matches_hand_computation() {
        let seq = Arc::new(parse_hp_notation("HPHH").unwrap());
        let net = tiny_net(4, 3);
        let target = net.clone_network();
        let mut ts = batch_of(&seq, net.as_ref(), 1);
        ts[0].terminal = true;
        ts[0].reward = 2.5;
        let pred = net.forward(&ts[0].state).unwrap().get(ts[0].action);
        let d: f64 = pred - 2.5;
        let expected = if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
        let refs: Vec<&Transition> = ts.iter().collect();
        let mut cfg = TrainerConfig::new(10, 0);
        cfg.batch_size = 1;
        let mut adam = AdamState::new(&net.parameters(), cfg.lr);
        let loss = train_step(net.as_ref(), target.as_ref(), &refs, &cfg, &mut adam, None).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn sync_makes_outputs_identical_and_is_idempotent() {
        let seq = Arc::new(parse_hp_notation("HPHHH").unwrap());
        let net = tiny_net(5, 3);
        let target = tiny_net(5, 77);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        sync_target(net.as_ref(), target.as_ref()).unwrap();
        let snapshot: Vec<Vec<f64>> = target.parameters().iter().map(|p| p.data().clone()).collect();
        sync_target(net.as_ref(), target.as_ref()).unwrap();
        for (p, s) in target.parameters().iter().zip(&snapshot) {
            assert_eq!(*p.data(), *s);
        }
        for _ in 0..100 {
            let (_, ts) = run_episode(&seq, net.as_ref(), 1.0, 0.0, &mut rng).unwrap();
            for t in ts {
                let a = net.forward(&t.state).unwrap();
                let b = target.forward(&t.state).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn training_diverges_main_from_target_after_sync() {
        let seq = Arc::new(parse_hp_notation("HPHH").unwrap());
        let net = tiny_net(4, 3);
        let target = net.clone_network();
        let mut ts = batch_of(&seq, net.as_ref(), 4);
        for t in &mut ts {
            t.terminal = true;
            t.reward = 10.0; // far from current predictions
        }
        let refs: Vec<&Transition> = ts.iter().collect();
        let mut cfg = TrainerConfig::new(10, 0);
        cfg.batch_size = refs.len();
        let mut adam = AdamState::new(&net.parameters(), cfg.lr);
        train_step(net.as_ref(), target.as_ref(), &refs, &cfg, &mut adam, None).unwrap();
        let probe = &ts[0].state;
        assert_ne!(net.forward(probe).unwrap(), target.forward(probe).unwrap());
    }

    #[test]
    fn episode_transition_count_matches_placements() {
        let seq = Arc::new(parse_hp_notation("HPHPHP").unwrap());
        let net = tiny_net(6, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (outcome, ts) = run_episode(&seq, net.as_ref(), 1.0, 0.0, &mut rng).unwrap();
            assert_eq!(ts.len(), outcome.conformation.placed() - 2);
            assert!(ts.iter().rev().skip(1).all(|t| !t.terminal));
            assert!(ts.last().unwrap().terminal);
        }
    }

    #[test]
    fn zero_weight_greedy_walk_is_deterministic_forward_line() {
        // All-zero Q-values tie everywhere; the tie-break walks F forever.
        let seq = Arc::new(parse_hp_notation("PPPPPP").unwrap());
        let net = tiny_net(6, 3);
        for p in net.parameters() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (outcome, ts) = run_episode(&seq, net.as_ref(), 0.0, 0.0, &mut rng).unwrap();
        assert!(ts.iter().all(|t| t.action == Action::F));
        assert_eq!(outcome.energy, 0);
        let expected: Vec<_> = (0..6).map(|i| crate::lattice::Vec3::new(0, i, 0)).collect();
        assert_eq!(outcome.conformation.positions(), expected);
    }

    #[test]
    fn all_p_final_reward_is_zero() {
        let seq = Arc::new(parse_hp_notation("PPPPP").unwrap());
        let net = tiny_net(5, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (_, ts) = run_episode(&seq, net.as_ref(), 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(ts.last().unwrap().reward, 0.0);
    }
}
