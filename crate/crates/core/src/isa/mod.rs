//! Toy instruction set, program representation and sandbox configuration.

mod asm;
mod validate;

pub use asm::{parse_asm, render_asm};
pub use validate::{validate_program, validate_program_with, ProgramLimits, ValidationIssue, ValidationReport};

use serde::{Deserialize, Serialize};
use std::fmt;

/// General purpose register `R0`..`R7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reg(u8);

impl Reg {
    pub const COUNT: usize = 8;

    pub fn new(index: u8) -> Option<Reg> {
        (usize::from(index) < Self::COUNT).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = Reg> {
        (0..Self::COUNT as u8).map(Reg)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(u64),
}

/// Condition codes over the two flags.
///
/// Only `Z` (zero) and `S` (sign) exist, so `L` tests the sign of the last
/// result like `S`, and `GE` tests its absence like `NS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    Z,
    NZ,
    L,
    GE,
    S,
    NS,
}

impl Cond {
    pub const ALL: [Cond; 6] = [Cond::Z, Cond::NZ, Cond::L, Cond::GE, Cond::S, Cond::NS];

    pub fn holds(self, flags: Flags) -> bool {
        match self {
            Cond::Z => flags.z,
            Cond::NZ => !flags.z,
            Cond::L | Cond::S => flags.s,
            Cond::GE | Cond::NS => !flags.s,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Cond::Z => "Z",
            Cond::NZ => "NZ",
            Cond::L => "L",
            Cond::GE => "GE",
            Cond::S => "S",
            Cond::NS => "NS",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Cond> {
        Cond::ALL.into_iter().find(|c| c.mnemonic() == s)
    }
}

/// The zero and sign flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    pub z: bool,
    pub s: bool,
}

impl Flags {
    pub fn of(result: u64) -> Flags {
        Flags { z: result == 0, s: (result as i64) < 0 }
    }

    pub fn pack(self) -> u64 {
        u64::from(self.z) | (u64::from(self.s) << 1)
    }

    pub fn unpack(v: u64) -> Flags {
        Flags { z: v & 1 != 0, s: v & 2 != 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
}

impl AluOp {
    pub const ALL: [AluOp; 5] = [AluOp::Add, AluOp::Sub, AluOp::And, AluOp::Or, AluOp::Xor];

    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "ADD",
            AluOp::Sub => "SUB",
            AluOp::And => "AND",
            AluOp::Or => "OR",
            AluOp::Xor => "XOR",
        }
    }
}

/// Access width in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Width {
    B1,
    B2,
    B4,
    B8,
}

impl Width {
    pub const ALL: [Width; 4] = [Width::B1, Width::B2, Width::B4, Width::B8];

    pub fn bytes(self) -> u64 {
        match self {
            Width::B1 => 1,
            Width::B2 => 2,
            Width::B4 => 4,
            Width::B8 => 8,
        }
    }

    pub fn from_bytes(n: u64) -> Option<Width> {
        Width::ALL.into_iter().find(|w| w.bytes() == n)
    }

    pub fn mask(self) -> u64 {
        match self {
            Width::B8 => u64::MAX,
            w => (1u64 << (8 * w.bytes())) - 1,
        }
    }
}

/// Non-control instruction. Memory operands are always `[SB + offset]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Alu { op: AluOp, dst: Reg, src: Operand },
    Movi { dst: Reg, imm: u64 },
    Cmp { lhs: Reg, rhs: Operand },
    Cmov { cond: Cond, dst: Reg, src: Operand },
    Load { dst: Reg, offset: Reg, width: Width },
    Store { src: Reg, offset: Reg, width: Width },
}

impl Instruction {
    pub fn is_memory(&self) -> bool {
        matches!(self, Instruction::Load { .. } | Instruction::Store { .. })
    }

    pub fn mem_offset(&self) -> Option<Reg> {
        match *self {
            Instruction::Load { offset, .. } | Instruction::Store { offset, .. } => Some(offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, ".bb{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminator {
    /// `Jcc taken` followed by an explicit `JMP fallthrough`.
    Branch {
        cond: Cond,
        taken: BlockId,
        fallthrough: BlockId,
    },
    Jump(BlockId),
    Exit,
}

impl Terminator {
    pub fn targets(&self) -> Vec<BlockId> {
        match *self {
            Terminator::Branch { taken, fallthrough, .. } => vec![taken, fallthrough],
            Terminator::Jump(t) => vec![t],
            Terminator::Exit => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: BlockId,
    pub body: Vec<Instruction>,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
}

impl Program {
    pub fn block_index(&self, id: BlockId) -> Option<usize> {
        self.blocks.iter().position(|b| b.id == id)
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.body.len() + 1).sum()
    }
}

/// Memory sandbox geometry. `page_count` is rounded up to a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SandboxConfig {
    page_count: u32,
}

impl SandboxConfig {
    pub const PAGE_SIZE: u64 = 4096;
    pub const MAX_PAGES: u32 = 128;

    pub fn new(pages: u32) -> SandboxConfig {
        let clamped = pages.clamp(1, Self::MAX_PAGES);
        SandboxConfig { page_count: clamped.next_power_of_two() }
    }

    pub fn page_count(&self) -> u32 {
        self.page_count
    }

    pub fn size(&self) -> u64 {
        u64::from(self.page_count) * Self::PAGE_SIZE
    }

    pub fn mask(&self) -> u64 {
        self.size() - 1
    }
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig::new(1)
    }
}

/// Control-flow successor of a flattened instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Next,
    Jump(usize),
    Branch { cond: Cond, taken: usize, fallthrough: usize },
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatOp {
    Inst(Instruction),
    Term(Flow),
}

/// Program flattened to a linear instruction array. The PC of an
/// instruction is its index; each terminator occupies a single PC.
#[derive(Debug, Clone)]
pub struct Layout {
    pub ops: Vec<FlatOp>,
    pub block_start: Vec<usize>,
    pub entry_pc: usize,
}

impl Layout {
    /// Flattens `p`. Returns `None` when a terminator names a missing block.
    pub fn new(p: &Program) -> Option<Layout> {
        let mut block_start = Vec::with_capacity(p.blocks.len());
        let mut pc = 0;
        for b in &p.blocks {
            block_start.push(pc);
            pc += b.body.len() + 1;
        }
        let start_of = |id: BlockId| p.block_index(id).map(|i| block_start[i]);
        let mut ops = Vec::with_capacity(pc);
        for b in &p.blocks {
            ops.extend(b.body.iter().map(|&i| FlatOp::Inst(i)));
            let flow = match b.terminator {
                Terminator::Branch { cond, taken, fallthrough } => {
                    Flow::Branch { cond, taken: start_of(taken)?, fallthrough: start_of(fallthrough)? }
                }
                Terminator::Jump(t) => Flow::Jump(start_of(t)?),
                Terminator::Exit => Flow::Exit,
            };
            ops.push(FlatOp::Term(flow));
        }
        let entry_pc = start_of(p.entry)?;
        Some(Layout { ops, block_start, entry_pc })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sandbox_rounds_to_power_of_two() {
        assert_eq!(SandboxConfig::new(3).page_count(), 4);
        assert_eq!(SandboxConfig::new(0).page_count(), 1);
        assert_eq!(SandboxConfig::new(500).page_count(), 128);
        assert_eq!(SandboxConfig::new(1).mask(), 0xfff);
        assert_eq!(SandboxConfig::new(128).size(), 128 * 4096);
    }

    #[test]
    fn condition_codes() {
        let neg = Flags::of(u64::MAX);
        let zero = Flags::of(0);
        assert!(Cond::S.holds(neg) && Cond::L.holds(neg) && !Cond::GE.holds(neg));
        assert!(Cond::Z.holds(zero) && !Cond::NZ.holds(zero) && Cond::NS.holds(zero));
        assert_eq!(Flags::unpack(neg.pack()), neg);
    }

    #[test]
    fn register_bounds() {
        assert!(Reg::new(7).is_some());
        assert!(Reg::new(8).is_none());
        assert_eq!(Reg::all().count(), 8);
    }

    #[test]
    fn width_masks() {
        assert_eq!(Width::B1.mask(), 0xff);
        assert_eq!(Width::B4.mask(), 0xffff_ffff);
        assert_eq!(Width::B8.mask(), u64::MAX);
    }

    #[test]
    fn layout_assigns_one_pc_per_terminator() {
        let p = Program {
            blocks: vec![
                BasicBlock {
                    id: BlockId(0),
                    body: vec![Instruction::Movi { dst: Reg(0), imm: 1 }],
                    terminator: Terminator::Jump(BlockId(1)),
                },
                BasicBlock { id: BlockId(1), body: vec![], terminator: Terminator::Exit },
            ],
            entry: BlockId(0),
        };
        let l = Layout::new(&p).unwrap();
        assert_eq!(l.len(), 3);
        assert_eq!(l.block_start, vec![0, 2]);
        assert_eq!(l.ops[1], FlatOp::Term(Flow::Jump(2)));
    }
}
