//! Exhaustive self-avoiding-walk enumeration: the exact minimum-energy
//! oracle used to certify everything the trainer reports.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{Action, Conformation, HPSequence, ResidueKind, TurtleFrame, Vec3};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("sequence of {len} residues exceeds the enumeration guard (max_n = {max_n})")]
    SequenceTooLong { len: usize, max_n: usize },
}

#[derive(Debug, Clone)]
pub struct EnumOptions {
    pub symmetry_pruning: bool,
    pub bound_pruning: bool,
    /// Guard against accidental exponential blowups.
    pub max_n: usize,
    /// Worker threads for the top-level branch split.
    pub workers: usize,
}

impl Default for EnumOptions {
    fn default() -> Self {
        EnumOptions { symmetry_pruning: true, bound_pruning: false, max_n: 16, workers: 1 }
    }
}

#[derive(Debug)]
pub struct EnumerationResult {
    pub min_energy: i32,
    /// Complete walks attaining the minimum, counted within the canonical
    /// quotient when symmetry pruning is on.
    pub optimal_count: u64,
    /// Lexicographically smallest optimal walk (by action sequence).
    pub best: Conformation,
    /// Complete walks evaluated.
    pub walks_explored: u64,
    pub elapsed: Duration,
}

/// CLI-facing summary of an enumeration run.
#[derive(Debug, Serialize)]
pub struct EnumerationRecord {
    pub sequence: String,
    pub n: usize,
    pub min_energy: i32,
    pub optimal_count: u64,
    pub walks_explored: u64,
    pub elapsed_ms: u64,
}

impl EnumerationResult {
    pub fn to_record(&self, seq: &HPSequence) -> EnumerationRecord {
        EnumerationRecord {
            sequence: seq.letters(),
            n: seq.len(),
            min_energy: self.min_energy,
            optimal_count: self.optimal_count,
            walks_explored: self.walks_explored,
            elapsed_ms: self.elapsed.as_millis() as u64,
        }
    }
}

/// Occupancy grid over the reachable cube. Coordinates of an anchored
/// N-walk stay within [-N, N] on each axis.
struct Grid {
    side: i32,
    cells: Vec<u16>,
}

const FREE: u16 = u16::MAX;

impl Grid {
    fn new(n: usize) -> Self {
        let side = 2 * n as i32 + 1;
        Grid { side, cells: vec![FREE; (side * side * side) as usize] }
    }

    fn idx(&self, p: Vec3) -> usize {
        let half = self.side / 2;
        (((p.x + half) * self.side + (p.y + half)) * self.side + (p.z + half)) as usize
    }

    fn get(&self, p: Vec3) -> u16 {
        self.cells[self.idx(p)]
    }

    fn set(&mut self, p: Vec3, v: u16) {
        let i = self.idx(p);
        self.cells[i] = v;
    }
}

struct Dfs<'a> {
    seq: &'a [ResidueKind],
    n: usize,
    opts: &'a EnumOptions,
    grid: Grid,
    positions: Vec<Vec3>,
    frames: Vec<TurtleFrame>,
    actions: Vec<Action>,
    contacts: u32,
    unplaced_h: u32,
    best_contacts: u32,
    found_any: bool,
    optimal_count: u64,
    best_actions: Vec<Action>,
    walks: u64,
}

impl<'a> Dfs<'a> {
    fn new(seq: &'a [ResidueKind], opts: &'a EnumOptions) -> Self {
        let n = seq.len();
        let mut grid = Grid::new(n);
        let p0 = Vec3::new(0, 0, 0);
        let p1 = Vec3::new(0, 1, 0);
        grid.set(p0, 0);
        grid.set(p1, 1);
        let unplaced_h = seq[2..].iter().filter(|r| **r == ResidueKind::H).count() as u32;
        Dfs {
            seq,
            n,
            opts,
            grid,
            positions: vec![p0, p1],
            frames: vec![TurtleFrame::initial()],
            actions: Vec::new(),
            contacts: 0,
            unplaced_h,
            best_contacts: 0,
            found_any: false,
            optimal_count: 0,
            best_actions: Vec::new(),
            walks: 0,
        }
    }

    fn contacts_added(&self, i: usize, p: Vec3) -> u32 {
        if self.seq[i] != ResidueKind::H {
            return 0;
        }
        let mut added = 0;
        for nb in p.neighbors() {
            let j = self.grid.get(nb);
            if j != FREE && (j as usize) + 1 < i && self.seq[j as usize] == ResidueKind::H {
                added += 1;
            }
        }
        added
    }

    fn record_leaf(&mut self) {
        self.walks += 1;
        if !self.found_any || self.contacts > self.best_contacts {
            self.found_any = true;
            self.best_contacts = self.contacts;
            self.optimal_count = 1;
            self.best_actions = self.actions.clone();
        } else if self.contacts == self.best_contacts {
            self.optimal_count += 1;
            if self.actions < self.best_actions {
                self.best_actions = self.actions.clone();
            }
        }
    }

    /// Depth-first placement of residue `i`. `turned` is true once a
    /// non-F action has been taken (ends the canonical-symmetry window).
    fn place(&mut self, i: usize, turned: bool) {
        if i == self.n {
            self.record_leaf();
            return;
        }
        if self.opts.bound_pruning && self.found_any {
            let bound = self.contacts + 4 * self.unplaced_h + 2;
            if bound < self.best_contacts {
                return;
            }
        }
        let head = self.positions[i - 1];
        let frame = self.frames[i - 2];
        for a in Action::ALL {
            if self.opts.symmetry_pruning && !turned && !matches!(a, Action::F | Action::L) {
                continue;
            }
            let target = head.add(frame.direction(a));
            if self.grid.get(target) != FREE {
                continue;
            }
            let added = self.contacts_added(i, target);
            let was_h = self.seq[i] == ResidueKind::H;
            self.grid.set(target, i as u16);
            self.positions.push(target);
            self.frames.push(frame.advanced(a));
            self.actions.push(a);
            self.contacts += added;
            if was_h {
                self.unplaced_h -= 1;
            }
            self.place(i + 1, turned || a != Action::F);
            if was_h {
                self.unplaced_h += 1;
            }
            self.contacts -= added;
            self.actions.pop();
            self.frames.pop();
            self.positions.pop();
            self.grid.set(target, FREE);
        }
    }
}

struct Partial {
    min_energy: i32,
    optimal_count: u64,
    best_actions: Vec<Action>,
    walks: u64,
}

fn run_dfs(seq: &[ResidueKind], opts: &EnumOptions, prefix: Option<Action>) -> Partial {
    let mut dfs = Dfs::new(seq, opts);
    match prefix {
        None => dfs.place(2, false),
        Some(a) => {
            let head = dfs.positions[1];
            let frame = dfs.frames[0];
            let target = head.add(frame.direction(a));
            let added = dfs.contacts_added(2, target);
            let was_h = dfs.seq[2] == ResidueKind::H;
            dfs.grid.set(target, 2);
            dfs.positions.push(target);
            dfs.frames.push(frame.advanced(a));
            dfs.actions.push(a);
            dfs.contacts += added;
            if was_h {
                dfs.unplaced_h -= 1;
            }
            dfs.place(3, a != Action::F);
        }
    }
    Partial {
        min_energy: -(dfs.best_contacts as i32),
        optimal_count: dfs.optimal_count,
        best_actions: dfs.best_actions,
        walks: dfs.walks,
    }
}

/// Exact minimum energy over all anchored self-avoiding walks of `seq`.
///
/// With symmetry pruning the first non-F move is forced to L, which picks
/// one representative per rotation/reflection orbit about the initial
/// bond; `optimal_count` then counts within that quotient. Bound pruning
/// discards subtrees that provably cannot reach the incumbent and leaves
/// both the minimum and the count exact.
pub fn enumerate_min_energy(seq: &Arc<HPSequence>, opts: &EnumOptions) -> Result<EnumerationResult, OracleError> {
    if seq.len() > opts.max_n {
        return Err(OracleError::SequenceTooLong { len: seq.len(), max_n: opts.max_n });
    }
    let start = Instant::now();
    let residues = seq.residues();
    let n = seq.len();

    let partials: Vec<Partial> = if n <= 2 {
        vec![run_dfs(residues, opts, None)]
    } else if opts.workers <= 1 {
        vec![run_dfs(residues, opts, None)]
    } else {
        // Split on the first decision. Each branch keeps its own incumbent,
        // so the merged result is identical for any worker count.
        let branches: Vec<Action> = if opts.symmetry_pruning {
            vec![Action::F, Action::L]
        } else {
            Action::ALL.to_vec()
        };
        std::thread::scope(|scope| {
            let handles: Vec<_> = branches
                .iter()
                .map(|a| {
                    let a = *a;
                    scope.spawn(move || run_dfs(residues, opts, Some(a)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("enumeration worker panicked")).collect()
        })
    };

    let mut merged: Option<Partial> = None;
    for p in partials {
        merged = Some(match merged {
            None => p,
            Some(mut m) => {
                m.walks += p.walks;
                if p.min_energy < m.min_energy {
                    m.min_energy = p.min_energy;
                    m.optimal_count = p.optimal_count;
                    m.best_actions = p.best_actions;
                } else if p.min_energy == m.min_energy {
                    m.optimal_count += p.optimal_count;
                    if p.best_actions < m.best_actions {
                        m.best_actions = p.best_actions;
                    }
                }
                m
            }
        });
    }
    let merged = merged.expect("at least one DFS partition");

    // Replay the best walk through the environment; this doubles as a
    // cross-check that the DFS and the lattice rules agree.
    let mut best = Conformation::anchor(Arc::clone(seq));
    for a in &merged.best_actions {
        best = best.apply_action(*a).expect("oracle best walk must be legal");
    }
    debug_assert_eq!(best.energy(), merged.min_energy);

    Ok(EnumerationResult {
        min_energy: merged.min_energy,
        optimal_count: merged.optimal_count,
        best,
        walks_explored: merged.walks,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Consecutive residues not at unit distance.
    Distance,
    /// Two residues on the same lattice point.
    SelfAvoidance,
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("positions ({positions}) do not match sequence length ({sequence})")]
    LengthMismatch { positions: usize, sequence: usize },
    #[error("{constraint:?} constraint violated at residue {index}")]
    Violation { index: usize, constraint: ConstraintKind },
}

/// Validates the chain and self-avoidance constraints of an arbitrary
/// (possibly externally produced) conformation and returns its energy.
/// Anchoring is not required; energy is translation invariant.
pub fn verify_conformation(seq: &HPSequence, positions: &[Vec3]) -> Result<i32, VerifyError> {
    if positions.len() != seq.len() {
        return Err(VerifyError::LengthMismatch { positions: positions.len(), sequence: seq.len() });
    }
    let mut occupied = std::collections::HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        if occupied.insert(*p, i).is_some() {
            return Err(VerifyError::Violation { index: i, constraint: ConstraintKind::SelfAvoidance });
        }
    }
    for (i, w) in positions.windows(2).enumerate() {
        if w[0].dist2(w[1]) != 1 {
            return Err(VerifyError::Violation { index: i + 1, constraint: ConstraintKind::Distance });
        }
    }
    let mut contacts = 0i32;
    for (i, p) in positions.iter().enumerate() {
        if seq.residue(i) != ResidueKind::H {
            continue;
        }
        for nb in p.neighbors() {
            if let Some(&j) = occupied.get(&nb) {
                if j > i + 1 && seq.residue(j) == ResidueKind::H {
                    contacts += 1;
                }
            }
        }
    }
    Ok(-contacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::parse_hp_notation;

    fn seq(text: &str) -> Arc<HPSequence> {
        Arc::new(parse_hp_notation(text).unwrap())
    }

    fn min_energy(text: &str, opts: &EnumOptions) -> i32 {
        enumerate_min_energy(&seq(text), opts).unwrap().min_energy
    }

    #[test]
    fn two_h_have_no_contact() {
        // Consecutive pairs are excluded from the energy.
        let r = enumerate_min_energy(&seq("HH"), &EnumOptions::default()).unwrap();
        assert_eq!(r.min_energy, 0);
        assert_eq!(r.walks_explored, 1);
        assert!(r.best.is_complete());
    }

    #[test]
    fn four_h_fold_to_minus_one() {
        let r = enumerate_min_energy(&seq("HHHH"), &EnumOptions::default()).unwrap();
        assert_eq!(r.min_energy, -1);
    }

    #[test]
    fn hpph_closes_the_square() {
        assert_eq!(min_energy("HPPH", &EnumOptions::default()), -1);
    }

    #[test]
    fn all_p_is_flat_zero() {
        for n in [4, 6, 9] {
            let text: String = std::iter::repeat('P').take(n).collect();
            assert_eq!(min_energy(&text, &EnumOptions::default()), 0);
        }
    }

    #[test]
    fn guard_rejects_long_sequences() {
        let text: String = std::iter::repeat('H').take(20).collect();
        assert!(matches!(
            enumerate_min_energy(&seq(&text), &EnumOptions::default()),
            Err(OracleError::SequenceTooLong { len: 20, max_n: 16 })
        ));
    }

    #[test]
    fn pruning_flags_do_not_change_the_minimum() {
        for text in ["HHHHHH", "HPHPHH", "HHPPHH", "PHHHHP"] {
            let base = EnumOptions { symmetry_pruning: false, bound_pruning: false, ..Default::default() };
            let sym = EnumOptions { symmetry_pruning: true, bound_pruning: false, ..Default::default() };
            let both = EnumOptions { symmetry_pruning: true, bound_pruning: true, ..Default::default() };
            let e0 = min_energy(text, &base);
            assert_eq!(e0, min_energy(text, &sym), "{text}");
            assert_eq!(e0, min_energy(text, &both), "{text}");
        }
    }

    #[test]
    fn symmetry_counts_quotient_by_eight_on_free_orbits() {
        // Every optimal walk of HHHH is a square (one turn), whose orbit
        // about the first bond has the full size 8 in walk space but is
        // mirror-symmetric in its own plane, collapsing to 4 distinct
        // walks, 1 canonical.
        let full = EnumOptions { symmetry_pruning: false, ..Default::default() };
        let quot = EnumOptions { symmetry_pruning: true, ..Default::default() };
        let rf = enumerate_min_energy(&seq("HHHH"), &full).unwrap();
        let rq = enumerate_min_energy(&seq("HHHH"), &quot).unwrap();
        assert_eq!(rf.min_energy, rq.min_energy);
        assert_eq!(rf.optimal_count, 4);
        assert_eq!(rq.optimal_count, 1);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        for workers in [1, 2, 4, 8] {
            let opts = EnumOptions { workers, symmetry_pruning: false, ..Default::default() };
            let r = enumerate_min_energy(&seq("HHPPHHPH"), &opts).unwrap();
            let base = enumerate_min_energy(&seq("HHPPHHPH"), &EnumOptions { symmetry_pruning: false, ..Default::default() }).unwrap();
            assert_eq!(r.min_energy, base.min_energy);
            assert_eq!(r.optimal_count, base.optimal_count);
            assert_eq!(r.walks_explored, base.walks_explored);
            assert_eq!(r.best.actions_taken(), base.best.actions_taken());
        }
    }

    #[test]
    fn appending_p_never_worsens_the_minimum_over_all_6mers() {
        for bits in 0..64u32 {
            let text: String = (0..6).map(|i| if bits >> i & 1 == 1 { 'H' } else { 'P' }).collect();
            let extended = format!("{text}P");
            let opts = EnumOptions::default();
            assert!(
                min_energy(&extended, &opts) <= min_energy(&text, &opts),
                "{text} -> {extended}"
            );
        }
    }

    #[test]
    fn verify_accepts_straight_line() {
        let s = seq("PPPPP");
        let positions: Vec<Vec3> = (0..5).map(|i| Vec3::new(0, i, 0)).collect();
        assert_eq!(verify_conformation(&s, &positions).unwrap(), 0);
    }

    #[test]
    fn verify_scores_the_square() {
        let s = seq("HHHH");
        let positions = vec![Vec3::new(0, 0, 0), Vec3::new(0, 1, 0), Vec3::new(-1, 1, 0), Vec3::new(-1, 0, 0)];
        assert_eq!(verify_conformation(&s, &positions).unwrap(), -1);
    }

    #[test]
    fn verify_rejects_duplicate_point() {
        let s = seq("HHHH");
        let positions = vec![Vec3::new(0, 0, 0), Vec3::new(0, 1, 0), Vec3::new(0, 0, 0), Vec3::new(1, 0, 0)];
        match verify_conformation(&s, &positions) {
            Err(VerifyError::Violation { index: 2, constraint: ConstraintKind::SelfAvoidance }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn verify_rejects_broken_chain() {
        let s = seq("HHH");
        let positions = vec![Vec3::new(0, 0, 0), Vec3::new(0, 1, 0), Vec3::new(0, 3, 0)];
        match verify_conformation(&s, &positions) {
            Err(VerifyError::Violation { index: 2, constraint: ConstraintKind::Distance }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
