//! Parser for the run-length H/P notation used by the benchmark tables,
//! e.g. `(HP)2PH(HP)2(PH)2HP(PH)2` or `HP11HPHP8HPH2`.
//!
//! Exponents bind to the immediately preceding letter or parenthesized
//! group; groups nest.

use thiserror::Error;

use super::{HPSequence, LatticeError, ResidueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotationErrorKind {
    IllegalChar(char),
    UnbalancedParen,
    EmptyGroup,
    ExponentZero,
    ExponentWithoutOperand,
    ExponentOverflow,
}

#[derive(Debug, Error)]
#[error("{} at byte {offset}", kind_message(.kind))]
pub struct NotationError {
    pub kind: NotationErrorKind,
    pub offset: usize,
}

fn kind_message(kind: &NotationErrorKind) -> String {
    match kind {
        NotationErrorKind::IllegalChar(c) => format!("illegal character {c:?}"),
        NotationErrorKind::UnbalancedParen => "unbalanced parenthesis".to_string(),
        NotationErrorKind::EmptyGroup => "empty group".to_string(),
        NotationErrorKind::ExponentZero => "exponent 0".to_string(),
        NotationErrorKind::ExponentWithoutOperand => "exponent with no preceding letter or group".to_string(),
        NotationErrorKind::ExponentOverflow => "exponent too large".to_string(),
    }
}

impl NotationError {
    fn new(kind: NotationErrorKind, offset: usize) -> Self {
        NotationError { kind, offset }
    }
}

#[derive(Debug, Error)]
pub enum ParseNotationError {
    #[error(transparent)]
    Notation(#[from] NotationError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Items until end of input or a closing paren (left for the caller).
    fn parse_items(&mut self, out: &mut Vec<ResidueKind>) -> Result<(), NotationError> {
        loop {
            let start = self.pos;
            let operand: Vec<ResidueKind> = match self.peek() {
                None | Some(b')') => return Ok(()),
                Some(b'H') => {
                    self.pos += 1;
                    vec![ResidueKind::H]
                }
                Some(b'P') => {
                    self.pos += 1;
                    vec![ResidueKind::P]
                }
                Some(b'(') => {
                    self.pos += 1;
                    let mut inner = Vec::new();
                    self.parse_items(&mut inner)?;
                    match self.peek() {
                        Some(b')') => self.pos += 1,
                        _ => return Err(NotationError::new(NotationErrorKind::UnbalancedParen, start)),
                    }
                    if inner.is_empty() {
                        return Err(NotationError::new(NotationErrorKind::EmptyGroup, start));
                    }
                    inner
                }
                Some(c) if c.is_ascii_digit() => {
                    return Err(NotationError::new(NotationErrorKind::ExponentWithoutOperand, start))
                }
                Some(c) => return Err(NotationError::new(NotationErrorKind::IllegalChar(c as char), start)),
            };
            let repeat = self.parse_exponent()?;
            for _ in 0..repeat {
                out.extend_from_slice(&operand);
            }
        }
    }

    /// Optional run of digits; defaults to 1.
    fn parse_exponent(&mut self) -> Result<usize, NotationError> {
        let start = self.pos;
        let mut value: Option<usize> = None;
        while let Some(c) = self.peek() {
            if !c.is_ascii_digit() {
                break;
            }
            let digit = (c - b'0') as usize;
            let next = value
                .unwrap_or(0)
                .checked_mul(10)
                .and_then(|v| v.checked_add(digit))
                .filter(|v| *v <= 1_000_000)
                .ok_or_else(|| NotationError::new(NotationErrorKind::ExponentOverflow, start))?;
            value = Some(next);
            self.pos += 1;
        }
        match value {
            Some(0) => Err(NotationError::new(NotationErrorKind::ExponentZero, start)),
            Some(v) => Ok(v),
            None => Ok(1),
        }
    }
}

/// Expands run-length H/P notation into a full sequence.
pub fn parse_hp_notation(text: &str) -> Result<HPSequence, ParseNotationError> {
    let mut parser = Parser { bytes: text.as_bytes(), pos: 0 };
    let mut residues = Vec::new();
    parser.parse_items(&mut residues)?;
    if let Some(b')') = parser.peek() {
        return Err(NotationError::new(NotationErrorKind::UnbalancedParen, parser.pos).into());
    }
    Ok(HPSequence::new(residues, None)?)
}

/// Same as [`parse_hp_notation`] but tags the sequence with a label.
pub fn parse_hp_notation_labeled(text: &str, id: &str) -> Result<HPSequence, ParseNotationError> {
    let seq = parse_hp_notation(text)?;
    Ok(HPSequence::new(seq.residues().to_vec(), Some(id.to_string()))?)
}
