use super::{AluOp, Instruction, Operand, Program, SandboxConfig, Terminator};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Structural limits checked by [`validate_program`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramLimits {
    pub max_blocks: usize,
    pub max_body_len: usize,
}

impl Default for ProgramLimits {
    fn default() -> Self {
        ProgramLimits { max_blocks: 5, max_body_len: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub block: Option<usize>,
    pub instruction: Option<usize>,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.block, self.instruction) {
            (Some(b), Some(i)) => write!(f, "block {b}, instruction {i}: {}", self.message),
            (Some(b), None) => write!(f, "block {b}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, message: &str) -> bool {
        self.issues.iter().any(|i| i.message == message)
    }

    fn push(&mut self, block: Option<usize>, instruction: Option<usize>, message: &str) {
        self.issues.push(ValidationIssue { block, instruction, message: message.to_string() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        f.write_str(&lines.join("; "))
    }
}

pub fn validate_program(p: &Program, sb: &SandboxConfig) -> ValidationReport {
    validate_program_with(p, sb, &ProgramLimits::default())
}

pub fn validate_program_with(p: &Program, sb: &SandboxConfig, limits: &ProgramLimits) -> ValidationReport {
    let mut r = ValidationReport::default();
    if p.blocks.is_empty() {
        r.push(None, None, "no entry block");
        return r;
    }
    if p.block_index(p.entry).is_none() {
        r.push(None, None, "no entry block");
    }
    if p.blocks.len() > limits.max_blocks {
        r.push(None, None, "too many blocks");
    }
    let mut ids = BTreeSet::new();
    for (bi, b) in p.blocks.iter().enumerate() {
        if !ids.insert(b.id) {
            r.push(Some(bi), None, "duplicate block id");
        }
    }
    let mut exits = 0;
    for (bi, b) in p.blocks.iter().enumerate() {
        if b.body.len() > limits.max_body_len {
            r.push(Some(bi), None, "body too long");
        }
        for (ii, inst) in b.body.iter().enumerate() {
            if let Some(off) = inst.mem_offset() {
                let masked = ii > 0
                    && b.body[ii - 1] == Instruction::Alu { op: AluOp::And, dst: off, src: Operand::Imm(sb.mask()) };
                if !masked {
                    r.push(Some(bi), Some(ii), "unmasked memory operand");
                }
            }
        }
        if b.terminator == Terminator::Exit {
            exits += 1;
        }
        for t in b.terminator.targets() {
            if p.block_index(t).is_none() {
                r.push(Some(bi), Some(b.body.len()), "unknown block target");
            }
        }
    }
    if exits != 1 {
        r.push(None, None, "program must have exactly one exit block");
    }
    if has_cycle(p) {
        r.push(None, None, "control flow graph has a cycle");
    }
    r
}

fn has_cycle(p: &Program) -> bool {
    // Kahn's algorithm over the block graph; dangling targets are ignored here.
    let n = p.blocks.len();
    let mut indeg = vec![0usize; n];
    let succ: Vec<Vec<usize>> = p
        .blocks
        .iter()
        .map(|b| {
            let mut s: Vec<usize> = b.terminator.targets().into_iter().filter_map(|t| p.block_index(t)).collect();
            s.dedup();
            s
        })
        .collect();
    for s in &succ {
        for &t in s {
            indeg[t] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = ready.pop() {
        seen += 1;
        for &t in &succ[i] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.push(t);
            }
        }
    }
    seen != n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{BasicBlock, BlockId, Reg, Width};

    fn r(i: u8) -> Reg {
        Reg::new(i).unwrap()
    }

    fn minimal() -> Program {
        Program {
            blocks: vec![BasicBlock {
                id: BlockId(0),
                body: vec![Instruction::Movi { dst: r(0), imm: 1 }],
                terminator: Terminator::Exit,
            }],
            entry: BlockId(0),
        }
    }

    #[test]
    fn empty_program_has_no_entry() {
        let p = Program { blocks: vec![], entry: BlockId(0) };
        let rep = validate_program(&p, &SandboxConfig::default());
        assert!(rep.has("no entry block"));
    }

    #[test]
    fn minimal_program_is_valid() {
        assert!(validate_program(&minimal(), &SandboxConfig::default()).is_ok());
    }

    #[test]
    fn unmasked_load_is_reported() {
        let mut p = minimal();
        p.blocks[0].body.push(Instruction::Load { dst: r(1), offset: r(2), width: Width::B8 });
        let rep = validate_program(&p, &SandboxConfig::default());
        assert!(rep.has("unmasked memory operand"));
        assert_eq!(rep.issues[0].instruction, Some(1));
    }

    #[test]
    fn mask_must_match_sandbox() {
        let mut p = minimal();
        p.blocks[0].body.push(Instruction::Alu { op: AluOp::And, dst: r(2), src: Operand::Imm(0xfff) });
        p.blocks[0].body.push(Instruction::Load { dst: r(1), offset: r(2), width: Width::B8 });
        assert!(validate_program(&p, &SandboxConfig::new(1)).is_ok());
        assert!(!validate_program(&p, &SandboxConfig::new(2)).is_ok());
    }

    #[test]
    fn cycles_are_rejected() {
        let p = Program {
            blocks: vec![
                BasicBlock { id: BlockId(0), body: vec![], terminator: Terminator::Jump(BlockId(1)) },
                BasicBlock {
                    id: BlockId(1),
                    body: vec![],
                    terminator: Terminator::Branch {
                        cond: super::super::Cond::Z,
                        taken: BlockId(0),
                        fallthrough: BlockId(2),
                    },
                },
                BasicBlock { id: BlockId(2), body: vec![], terminator: Terminator::Exit },
            ],
            entry: BlockId(0),
        };
        assert!(validate_program(&p, &SandboxConfig::default()).has("control flow graph has a cycle"));
    }

    #[test]
    fn limits_are_enforced() {
        let mut p = minimal();
        p.blocks[0].body = vec![Instruction::Movi { dst: r(0), imm: 0 }; 13];
        assert!(validate_program(&p, &SandboxConfig::default()).has("body too long"));
        let relaxed = ProgramLimits { max_blocks: 5, max_body_len: 20 };
        assert!(validate_program_with(&p, &SandboxConfig::default(), &relaxed).is_ok());
    }
}
