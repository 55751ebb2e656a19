//! The 3D cubic-lattice HP environment: sequences, self-avoiding walks,
//! relative moves, energy, reward, and the one-hot state encoding.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

mod notation;

pub use notation::{parse_hp_notation, parse_hp_notation_labeled, NotationError, NotationErrorKind, ParseNotationError};

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("illegal action {action}: target {target} is occupied")]
    IllegalAction { action: Action, target: Vec3 },
    #[error("sequence must have at least 2 residues, got {0}")]
    SequenceTooShort(usize),
}

/// Integer lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vec3 {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Vec3 {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Vec3 { x, y, z }
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        self.add(o.neg())
    }

    pub fn dot(self, o: Vec3) -> i32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    /// Squared Euclidean distance.
    pub fn dist2(self, o: Vec3) -> i32 {
        let d = self.sub(o);
        d.dot(d)
    }

    /// The six unit neighbors.
    pub fn neighbors(self) -> [Vec3; 6] {
        [
            self.add(Vec3::new(1, 0, 0)),
            self.add(Vec3::new(-1, 0, 0)),
            self.add(Vec3::new(0, 1, 0)),
            self.add(Vec3::new(0, -1, 0)),
            self.add(Vec3::new(0, 0, 1)),
            self.add(Vec3::new(0, 0, -1)),
        ]
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Hydrophobic or polar. Only H residues participate in contacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidueKind {
    H,
    P,
}

impl ResidueKind {
    pub fn letter(self) -> char {
        match self {
            ResidueKind::H => 'H',
            ResidueKind::P => 'P',
        }
    }
}

impl fmt::Display for ResidueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// An immutable H/P sequence, optionally tagged with a benchmark label.
#[derive(Debug, Clone)]
pub struct HPSequence {
    residues: Vec<ResidueKind>,
    id: Option<String>,
}

impl HPSequence {
    pub fn new(residues: Vec<ResidueKind>, id: Option<String>) -> Result<Self, LatticeError> {
        if residues.len() < 2 {
            return Err(LatticeError::SequenceTooShort(residues.len()));
        }
        Ok(HPSequence { residues, id })
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires >= 2 residues
    }

    pub fn residue(&self, i: usize) -> ResidueKind {
        self.residues[i]
    }

    pub fn residues(&self) -> &[ResidueKind] {
        &self.residues
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    /// Label used in exports: the benchmark id when present, otherwise the
    /// plain letter string.
    pub fn label(&self) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None => self.letters(),
        }
    }

    pub fn letters(&self) -> String {
        self.residues.iter().map(|r| r.letter()).collect()
    }
}

/// The five relative moves available to the agent. Backward is not
/// representable, which is what makes the walk non-reversing by
/// construction. The encoding-only "no decision" marker lives in
/// [`StateTensor`] slot 0 and is never selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    F,
    L,
    R,
    U,
    D,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::F, Action::L, Action::R, Action::U, Action::D];

    /// Fixed index, also the tie-break and Q-value order: F < L < R < U < D.
    pub fn index(self) -> usize {
        match self {
            Action::F => 0,
            Action::L => 1,
            Action::R => 2,
            Action::U => 3,
            Action::D => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Action::F => 'F',
            Action::L => 'L',
            Action::R => 'R',
            Action::U => 'U',
            Action::D => 'D',
        };
        write!(f, "{c}")
    }
}

/// Small set of actions, iterated in the fixed F < L < R < U < D order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionSet(u8);

impl ActionSet {
    pub fn empty() -> Self {
        ActionSet(0)
    }

    pub fn all() -> Self {
        ActionSet(0b11111)
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// The `k`-th member in fixed order (for uniform sampling).
    pub fn nth(self, k: usize) -> Option<Action> {
        self.iter().nth(k)
    }
}

/// Local frame carried along the walk: `heading` points where F goes,
/// `up` where U goes; `left = up x heading`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurtleFrame {
    pub heading: Vec3,
    pub up: Vec3,
}

impl TurtleFrame {
    /// Frame at the anchor: heading +y, up +z.
    pub fn initial() -> Self {
        TurtleFrame { heading: Vec3::new(0, 1, 0), up: Vec3::new(0, 0, 1) }
    }

    pub fn left(&self) -> Vec3 {
        self.up.cross(self.heading)
    }

    /// Unit direction an action moves in.
    pub fn direction(&self, a: Action) -> Vec3 {
        match a {
            Action::F => self.heading,
            Action::L => self.left(),
            Action::R => self.left().neg(),
            Action::U => self.up,
            Action::D => self.up.neg(),
        }
    }

    /// Frame after moving: heading becomes the move direction; up is
    /// preserved for in-plane moves and transported around the pitch axis
    /// for U/D.
    pub fn advanced(&self, a: Action) -> TurtleFrame {
        let heading = self.direction(a);
        let up = match a {
            Action::F | Action::L | Action::R => self.up,
            Action::U => self.heading.neg(),
            Action::D => self.heading,
        };
        TurtleFrame { heading, up }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalKind {
    /// All residues placed.
    Completed,
    /// No legal action remained before the walk was complete.
    Trapped,
}

/// A finished (or dead-ended) fold with its Eq.-5 energy.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub conformation: Conformation,
    pub energy: i32,
    pub contacts: u32,
    pub terminal_kind: TerminalKind,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub enum StepResult {
    Ongoing(Conformation),
    Terminal(FoldOutcome),
}

/// A partial or complete self-avoiding walk, anchored at the origin with
/// the second residue at (0,1,0). Values are immutable: stepping returns a
/// new conformation.
#[derive(Debug, Clone)]
pub struct Conformation {
    sequence: Arc<HPSequence>,
    positions: Vec<Vec3>,
    frame: TurtleFrame,
    actions_taken: Vec<Action>,
    occupied: HashMap<Vec3, usize>,
}

impl Conformation {
    /// The start state: first two residues placed, no decision taken yet.
    pub fn anchor(sequence: Arc<HPSequence>) -> Self {
        let positions = vec![Vec3::new(0, 0, 0), Vec3::new(0, 1, 0)];
        let mut occupied = HashMap::new();
        occupied.insert(positions[0], 0);
        occupied.insert(positions[1], 1);
        Conformation {
            sequence,
            positions,
            frame: TurtleFrame::initial(),
            actions_taken: Vec::new(),
            occupied,
        }
    }

    pub fn sequence(&self) -> &Arc<HPSequence> {
        &self.sequence
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn actions_taken(&self) -> &[Action] {
        &self.actions_taken
    }

    pub fn frame(&self) -> TurtleFrame {
        self.frame
    }

    pub fn placed(&self) -> usize {
        self.positions.len()
    }

    pub fn is_complete(&self) -> bool {
        self.positions.len() == self.sequence.len()
    }

    pub fn is_occupied(&self, p: Vec3) -> bool {
        self.occupied.contains_key(&p)
    }

    /// Actions whose target cell is free. The reverse of the last step is
    /// unreachable because no action maps to -heading.
    pub fn legal_actions(&self) -> ActionSet {
        assert!(!self.is_complete(), "legal_actions on a complete conformation");
        let head = *self.positions.last().expect("anchor guarantees two positions");
        let mut set = ActionSet::empty();
        for a in Action::ALL {
            if !self.is_occupied(head.add(self.frame.direction(a))) {
                set.insert(a);
            }
        }
        set
    }

    /// Places the next residue in direction `a`, transporting the frame.
    pub fn apply_action(&self, a: Action) -> Result<Conformation, LatticeError> {
        assert!(!self.is_complete(), "apply_action on a complete conformation");
        let head = *self.positions.last().expect("anchor guarantees two positions");
        let target = head.add(self.frame.direction(a));
        if self.is_occupied(target) {
            return Err(LatticeError::IllegalAction { action: a, target });
        }
        let mut next = self.clone();
        next.occupied.insert(target, next.positions.len());
        next.positions.push(target);
        next.frame = self.frame.advanced(a);
        next.actions_taken.push(a);
        next
            .debug_check_invariants();
        Ok(next)
    }

    /// Number of H-H contacts among placed residues: unordered pairs at
    /// sequence distance >= 2 occupying adjacent cells.
    pub fn contacts(&self) -> u32 {
        let mut count = 0u32;
        for (i, &p) in self.positions.iter().enumerate() {
            if self.sequence.residue(i) != ResidueKind::H {
                continue;
            }
            for n in p.neighbors() {
                if let Some(&j) = self.occupied.get(&n) {
                    if j > i + 1 && self.sequence.residue(j) == ResidueKind::H {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// Eq.-5 energy: minus the contact count. Valid on partial walks.
    pub fn energy(&self) -> i32 {
        -(self.contacts() as i32)
    }

    /// One-hot (N, 8, 1) encoding: slots 0-5 over {ND, F, L, R, U, D},
    /// slots 6-7 over {H, P}. Residue types are exposed for every row,
    /// placed or not; rows 0 and 1 always read ND.
    pub fn encode_state(&self) -> StateTensor {
        let n = self.sequence.len();
        let mut data = vec![0.0; n * 8];
        for i in 0..n {
            let row = &mut data[i * 8..(i + 1) * 8];
            let action_slot = if i >= 2 && i < self.positions.len() {
                1 + self.actions_taken[i - 2].index()
            } else {
                0 // ND
            };
            row[action_slot] = 1.0;
            match self.sequence.residue(i) {
                ResidueKind::H => row[6] = 1.0,
                ResidueKind::P => row[7] = 1.0,
            }
        }
        StateTensor { n, data }
    }

    fn into_outcome(self, kind: TerminalKind) -> FoldOutcome {
        let contacts = self.contacts();
        FoldOutcome { energy: -(contacts as i32), contacts, terminal_kind: kind, conformation: self }
    }

    #[cfg(debug_assertions)]
    fn debug_check_invariants(&self) {
        debug_assert_eq!(self.positions[0], Vec3::new(0, 0, 0));
        debug_assert_eq!(self.positions[1], Vec3::new(0, 1, 0));
        debug_assert_eq!(self.actions_taken.len(), self.positions.len() - 2);
        debug_assert_eq!(self.occupied.len(), self.positions.len());
        for w in self.positions.windows(2) {
            debug_assert_eq!(w[0].dist2(w[1]), 1);
        }
    }

    #[cfg(not(debug_assertions))]
    fn debug_check_invariants(&self) {}
}

/// Applies a legal action and scores the result. Intermediate steps give
/// reward 0; completing the walk rewards the contact count; dead-ending
/// rewards (contacts so far - trap_penalty).
pub fn step(c: &Conformation, a: Action, trap_penalty: f64) -> Result<(StepResult, f64), LatticeError> {
    let next = c.apply_action(a)?;
    if next.is_complete() {
        let outcome = next.into_outcome(TerminalKind::Completed);
        let reward = outcome.contacts as f64;
        Ok((StepResult::Terminal(outcome), reward))
    } else if next.legal_actions().is_empty() {
        let outcome = next.into_outcome(TerminalKind::Trapped);
        let reward = outcome.contacts as f64 - trap_penalty;
        Ok((StepResult::Terminal(outcome), reward))
    } else {
        Ok((StepResult::Ongoing(next), 0.0))
    }
}

/// The (N, 8, 1) binary state: slot layout per row is
/// `[ND, F, L, R, U, D, H, P]`, stored row-major with the singleton
/// trailing dimension elided.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    n: usize,
    data: Vec<f64>,
}

impl StateTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Row-major (n x 8) values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * 8..(i + 1) * 8]
    }

    /// Reconstructs the action list encoded in rows 2.., stopping at the
    /// first ND row. Lets consumers rebuild the conformation a state
    /// describes without carrying it alongside.
    pub fn decode_actions(&self) -> Vec<Action> {
        let mut actions = Vec::new();
        for i in 2..self.n {
            let row = self.row(i);
            let slot = row[..6].iter().position(|v| *v == 1.0).expect("one-hot row");
            match slot {
                0 => break,
                s => actions.push(Action::from_index(s - 1).expect("action slot")),
            }
        }
        actions
    }

    /// Residue kinds from slots 6-7.
    pub fn decode_residues(&self) -> Vec<ResidueKind> {
        (0..self.n)
            .map(|i| if self.row(i)[6] == 1.0 { ResidueKind::H } else { ResidueKind::P })
            .collect()
    }
}

/// Writes the plain-text conformation export: a header line followed by
/// one `index kind x y z` record per placed residue.
pub fn write_conformation(c: &Conformation, energy: i32) -> String {
    let mut out = String::new();
    out.push_str(&format!("#hpfold-conformation v1 seq={} energy={}\n", c.sequence().label(), energy));
    for (i, p) in c.positions().iter().enumerate() {
        out.push_str(&format!("{} {} {} {} {}\n", i, c.sequence().residue(i).letter(), p.x, p.y, p.z));
    }
    out
}

#[derive(Debug, Error)]
pub enum ExportParseError {
    #[error("line {0}: missing or malformed header")]
    BadHeader(usize),
    #[error("line {line}: {detail}")]
    BadRecord { line: usize, detail: String },
}

/// Parsed form of the conformation export format.
#[derive(Debug, Clone)]
pub struct ExportedConformation {
    pub seq_label: String,
    pub energy: i32,
    pub residues: Vec<ResidueKind>,
    pub positions: Vec<Vec3>,
}

pub fn parse_conformation_export(text: &str) -> Result<ExportedConformation, ExportParseError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ExportParseError::BadHeader(1))?;
    let rest = header.strip_prefix("#hpfold-conformation v1 ").ok_or(ExportParseError::BadHeader(1))?;
    let mut seq_label = None;
    let mut energy = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("seq=") {
            seq_label = Some(v.to_string());
        } else if let Some(v) = field.strip_prefix("energy=") {
            energy = v.parse::<i32>().ok();
        }
    }
    let (seq_label, energy) = match (seq_label, energy) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(ExportParseError::BadHeader(1)),
    };
    let mut residues = Vec::new();
    let mut positions = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(ExportParseError::BadRecord { line: lineno, detail: format!("expected 5 fields, got {}", parts.len()) });
        }
        let index: usize = parts[0]
            .parse()
            .map_err(|_| ExportParseError::BadRecord { line: lineno, detail: "bad index".into() })?;
        if index != residues.len() {
            return Err(ExportParseError::BadRecord { line: lineno, detail: format!("index {} out of order", index) });
        }
        let kind = match parts[1] {
            "H" => ResidueKind::H,
            "P" => ResidueKind::P,
            other => {
                return Err(ExportParseError::BadRecord { line: lineno, detail: format!("bad residue kind {other:?}") })
            }
        };
        let coord = |s: &str| {
            s.parse::<i32>()
                .map_err(|_| ExportParseError::BadRecord { line: lineno, detail: format!("bad coordinate {s:?}") })
        };
        residues.push(kind);
        positions.push(Vec3::new(coord(parts[2])?, coord(parts[3])?, coord(parts[4])?));
    }
    Ok(ExportedConformation { seq_label, energy, residues, positions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(letters: &str) -> Arc<HPSequence> {
        Arc::new(parse_hp_notation(letters).unwrap())
    }

    fn rollout(letters: &str, actions: &[Action]) -> Conformation {
        let mut c = Conformation::anchor(seq(letters));
        for &a in actions {
            c = c.apply_action(a).unwrap();
        }
        c
    }

    #[test]
    fn anchor_is_fixed() {
        let c = Conformation::anchor(seq("HPH"));
        assert_eq!(c.positions(), &[Vec3::new(0, 0, 0), Vec3::new(0, 1, 0)]);
        assert_eq!(c.actions_taken().len(), 0);
        assert!(!c.is_complete());
    }

    #[test]
    fn anchor_has_all_five_actions() {
        let c = Conformation::anchor(seq("HPHH"));
        assert_eq!(c.legal_actions(), ActionSet::all());
    }

    #[test]
    fn straight_line_keeps_all_five_actions() {
        // After F the head is (0,2,0); its F target (0,3,0) and the four
        // perpendicular cells are all free.
        let c = rollout("HPHH", &[Action::F]);
        assert_eq!(c.legal_actions(), ActionSet::all());
    }

    #[test]
    fn forward_moves_along_heading() {
        let c = rollout("HPH", &[Action::F]);
        assert_eq!(*c.positions().last().unwrap(), Vec3::new(0, 2, 0));
    }

    #[test]
    fn up_moves_and_pitches_the_frame() {
        let c = rollout("HPH", &[Action::U]);
        assert_eq!(*c.positions().last().unwrap(), Vec3::new(0, 1, 1));
        assert_eq!(c.frame().heading, Vec3::new(0, 0, 1));
        assert_eq!(c.frame().up, Vec3::new(0, -1, 0));
    }

    #[test]
    fn two_lefts_trace_the_square() {
        let c = rollout("HPHH", &[Action::L, Action::L]);
        assert_eq!(c.positions()[2], Vec3::new(-1, 1, 0));
        assert_eq!(c.positions()[3], Vec3::new(-1, 0, 0));
    }

    #[test]
    fn illegal_action_reports_target() {
        // L, L, L: the third left would land back on the origin... the
        // origin is occupied, so it must be rejected.
        let c = rollout("HPHHH", &[Action::L, Action::L]);
        let err = c.apply_action(Action::L).unwrap_err();
        match err {
            LatticeError::IllegalAction { target, .. } => assert_eq!(target, Vec3::new(0, 0, 0)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn backward_cell_never_legal() {
        // The previous residue sits at -heading from the head; no action
        // maps there, so it can never appear among legal targets.
        let c = rollout("HPHHHH", &[Action::F, Action::U, Action::R]);
        let head = *c.positions().last().unwrap();
        let prev = c.positions()[c.positions().len() - 2];
        for a in c.legal_actions().iter() {
            assert_ne!(head.add(c.frame().direction(a)), prev);
        }
    }

    #[test]
    fn all_p_energy_is_zero() {
        let c = rollout("PPPP", &[Action::L, Action::L]);
        assert_eq!(c.energy(), 0);
    }

    #[test]
    fn unit_square_of_h_scores_one_contact() {
        let c = rollout("HHHH", &[Action::L, Action::L]);
        assert!(c.is_complete());
        assert_eq!(c.energy(), -1);
        assert_eq!(c.contacts(), 1);
    }

    #[test]
    fn bent_hph_has_no_contact() {
        // Positions (0,0,0), (0,1,0), (1,1,0): endpoints at distance sqrt(2).
        let c = rollout("HPH", &[Action::R]);
        assert_eq!(c.positions()[2], Vec3::new(1, 1, 0));
        assert_eq!(c.energy(), 0);
    }

    #[test]
    fn encode_fresh_anchor() {
        let c = Conformation::anchor(seq("HPH"));
        let s = c.encode_state();
        for i in 0..3 {
            assert_eq!(s.row(i)[0], 1.0, "row {i} is ND");
        }
        assert_eq!(s.row(0)[6], 1.0);
        assert_eq!(s.row(1)[7], 1.0);
        assert_eq!(s.row(2)[6], 1.0);
    }

    #[test]
    fn encode_after_one_action() {
        let c = rollout("HPH", &[Action::F]);
        let s = c.encode_state();
        assert_eq!(s.row(0)[0], 1.0);
        assert_eq!(s.row(1)[0], 1.0);
        assert_eq!(s.row(2)[1], 1.0, "slot 1 is F");
    }

    #[test]
    fn encode_rows_are_one_hot() {
        let c = rollout("HHPPHH", &[Action::L, Action::U, Action::R]);
        let s = c.encode_state();
        for i in 0..6 {
            let row = s.row(i);
            assert_eq!(row[..6].iter().sum::<f64>(), 1.0);
            assert_eq!(row[6..].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn decode_actions_roundtrip() {
        let actions = [Action::L, Action::U, Action::R];
        let c = rollout("HHPPHH", &actions);
        assert_eq!(c.encode_state().decode_actions(), actions);
        assert_eq!(c.encode_state().decode_residues(), c.sequence().residues());
    }

    #[test]
    fn step_rewards() {
        let s = seq("HHHH");
        let c = Conformation::anchor(Arc::clone(&s));
        // Non-final step: reward 0.
        let (r1, reward) = step(&c, Action::L, 0.0).unwrap();
        assert_eq!(reward, 0.0);
        let c2 = match r1 {
            StepResult::Ongoing(c2) => c2,
            _ => panic!("not terminal yet"),
        };
        // Completing the square: reward = contacts = 1.
        let (r2, reward) = step(&c2, Action::L, 0.0).unwrap();
        assert_eq!(reward, 1.0);
        match r2 {
            StepResult::Terminal(o) => {
                assert_eq!(o.terminal_kind, TerminalKind::Completed);
                assert_eq!(o.energy, -1);
                assert_eq!(o.energy, -(o.contacts as i32));
            }
            _ => panic!("expected terminal"),
        }
    }

    #[test]
    fn all_p_completion_rewards_zero() {
        let c = rollout("PPPP", &[Action::F]);
        let (res, reward) = step(&c, Action::F, 0.0).unwrap();
        assert_eq!(reward, 0.0);
        assert!(matches!(res, StepResult::Terminal(o) if o.terminal_kind == TerminalKind::Completed));
    }

    #[test]
    fn export_roundtrip() {
        let c = rollout("HHHH", &[Action::L, Action::L]);
        let text = write_conformation(&c, c.energy());
        let parsed = parse_conformation_export(&text).unwrap();
        assert_eq!(parsed.energy, -1);
        assert_eq!(parsed.positions, c.positions());
        assert_eq!(parsed.residues, c.sequence().residues());
        assert_eq!(parsed.seq_label, "HHHH");
    }

    #[test]
    fn export_rejects_garbage() {
        assert!(parse_conformation_export("nope\n").is_err());
        let text = "#hpfold-conformation v1 seq=x energy=0\n0 H 0 0\n";
        assert!(matches!(parse_conformation_export(text), Err(ExportParseError::BadRecord { line: 2, .. })));
    }
}
