//! Text assembly format.
//!
//! ```text
//! .bb0:
//! AND R2, 4095
//! LOAD.8 R1, [SB + R2]
//! CMP R1, 0
//! JZ .bb1
//! JMP .bb2
//! ```

use super::{AluOp, BasicBlock, BlockId, Cond, Instruction, Operand, Program, Reg, Terminator, Width};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write;

pub fn render_asm(p: &Program) -> String {
    let mut out = String::new();
    if p.blocks.first().map(|b| b.id) != Some(p.entry) {
        let _ = writeln!(out, ".entry {}", p.entry);
    }
    for b in &p.blocks {
        let _ = writeln!(out, "{}:", b.id);
        for i in &b.body {
            let _ = writeln!(out, "{}", render_instruction(i));
        }
        match b.terminator {
            Terminator::Branch { cond, taken, fallthrough } => {
                let _ = writeln!(out, "J{} {}", cond.mnemonic(), taken);
                let _ = writeln!(out, "JMP {}", fallthrough);
            }
            Terminator::Jump(t) => {
                let _ = writeln!(out, "JMP {}", t);
            }
            Terminator::Exit => out.push_str("EXIT\n"),
        }
    }
    out.pop();
    out
}

fn render_operand(o: Operand) -> String {
    match o {
        Operand::Reg(r) => r.to_string(),
        Operand::Imm(v) => render_imm(v),
    }
}

fn render_imm(v: u64) -> String {
    (v as i64).to_string()
}

pub(crate) fn render_instruction(i: &Instruction) -> String {
    match *i {
        Instruction::Alu { op, dst, src } => {
            format!("{} {}, {}", op.mnemonic(), dst, render_operand(src))
        }
        Instruction::Movi { dst, imm } => format!("MOVI {}, {}", dst, render_imm(imm)),
        Instruction::Cmp { lhs, rhs } => format!("CMP {}, {}", lhs, render_operand(rhs)),
        Instruction::Cmov { cond, dst, src } => {
            format!("CMOV{} {}, {}", cond.mnemonic(), dst, render_operand(src))
        }
        Instruction::Load { dst, offset, width } => {
            format!("LOAD.{} {}, [SB + {}]", width.bytes(), dst, offset)
        }
        Instruction::Store { src, offset, width } => {
            format!("STORE.{} [SB + {}], {}", width.bytes(), offset, src)
        }
    }
}

enum Line {
    Label(String),
    Entry(String),
    Inst(Instruction),
    Jcc(Cond, String),
    Jmp(String),
    Exit,
}

fn syntax(line: usize, msg: impl Into<String>) -> Error {
    Error::Syntax { line, msg: msg.into() }
}

fn semantic(line: usize, msg: impl Into<String>) -> Error {
    Error::Semantic { line, msg: msg.into() }
}

fn parse_reg(tok: &str, line: usize) -> Result<Reg> {
    let t = tok.trim();
    let digits = t.strip_prefix('R').ok_or_else(|| syntax(line, format!("expected register, found `{t}`")))?;
    let idx: u8 = digits.parse().map_err(|_| syntax(line, format!("expected register, found `{t}`")))?;
    Reg::new(idx).ok_or_else(|| semantic(line, format!("bad register `{t}`")))
}

fn parse_imm(tok: &str, line: usize) -> Result<u64> {
    let t = tok.trim();
    let bad = || syntax(line, format!("bad immediate `{t}`"));
    if let Some(neg) = t.strip_prefix('-') {
        let v: u64 = parse_unsigned(neg).ok_or_else(bad)?;
        return Ok(v.wrapping_neg());
    }
    parse_unsigned(t).ok_or_else(bad)
}

fn parse_unsigned(t: &str) -> Option<u64> {
    if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else {
        t.parse().ok()
    }
}

fn parse_operand(tok: &str, line: usize) -> Result<Operand> {
    let t = tok.trim();
    if t.starts_with('R') {
        parse_reg(t, line).map(Operand::Reg)
    } else {
        parse_imm(t, line).map(Operand::Imm)
    }
}

fn parse_mem(tok: &str, line: usize) -> Result<Reg> {
    let t = tok.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("expected memory operand, found `{t}`")))?;
    let (base, off) = inner.split_once('+').ok_or_else(|| syntax(line, "memory operand must be [SB + Rn]"))?;
    if base.trim() != "SB" {
        return Err(syntax(line, "memory operand base must be SB"));
    }
    parse_reg(off, line)
}

fn parse_label_ref(tok: &str, line: usize) -> Result<String> {
    let t = tok.trim();
    let ok = t.len() > 1 && t.starts_with('.') && t[1..].chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(t.to_string())
    } else {
        Err(syntax(line, format!("bad label `{t}`")))
    }
}

fn operands(rest: &str, n: usize, line: usize) -> Result<Vec<&str>> {
    let ops: Vec<&str> = if rest.trim().is_empty() { Vec::new() } else { rest.split(',').map(str::trim).collect() };
    if ops.len() != n {
        return Err(syntax(line, format!("expected {n} operand(s), found {}", ops.len())));
    }
    Ok(ops)
}

fn parse_width(suffix: &str, line: usize) -> Result<Width> {
    suffix.parse::<u64>().ok().and_then(Width::from_bytes).ok_or_else(|| syntax(line, format!("bad width `{suffix}`")))
}

fn parse_line(text: &str, line: usize) -> Result<Option<Line>> {
    let code = text.split('#').next().unwrap_or("").trim();
    if code.is_empty() {
        return Ok(None);
    }
    if let Some(label) = code.strip_suffix(':') {
        return parse_label_ref(label, line).map(|l| Some(Line::Label(l)));
    }
    let (mnem, rest) = code.split_once(char::is_whitespace).unwrap_or((code, ""));
    let parsed = match mnem {
        ".entry" => Line::Entry(parse_label_ref(rest, line)?),
        "EXIT" => {
            operands(rest, 0, line)?;
            Line::Exit
        }
        "JMP" => Line::Jmp(parse_label_ref(operands(rest, 1, line)?[0], line)?),
        "MOVI" => {
            let o = operands(rest, 2, line)?;
            Line::Inst(Instruction::Movi { dst: parse_reg(o[0], line)?, imm: parse_imm(o[1], line)? })
        }
        "CMP" => {
            let o = operands(rest, 2, line)?;
            Line::Inst(Instruction::Cmp { lhs: parse_reg(o[0], line)?, rhs: parse_operand(o[1], line)? })
        }
        m if AluOp::ALL.iter().any(|op| op.mnemonic() == m) => {
            let op = *AluOp::ALL.iter().find(|op| op.mnemonic() == m).expect("checked");
            let o = operands(rest, 2, line)?;
            Line::Inst(Instruction::Alu { op, dst: parse_reg(o[0], line)?, src: parse_operand(o[1], line)? })
        }
        m if m.starts_with("CMOV") => {
            let cond = Cond::from_mnemonic(&m[4..]).ok_or_else(|| syntax(line, format!("unknown mnemonic `{m}`")))?;
            let o = operands(rest, 2, line)?;
            Line::Inst(Instruction::Cmov { cond, dst: parse_reg(o[0], line)?, src: parse_operand(o[1], line)? })
        }
        m if m.starts_with("LOAD.") => {
            let width = parse_width(&m[5..], line)?;
            let o = operands(rest, 2, line)?;
            Line::Inst(Instruction::Load { dst: parse_reg(o[0], line)?, offset: parse_mem(o[1], line)?, width })
        }
        m if m.starts_with("STORE.") => {
            let width = parse_width(&m[6..], line)?;
            let o = operands(rest, 2, line)?;
            Line::Inst(Instruction::Store { offset: parse_mem(o[0], line)?, src: parse_reg(o[1], line)?, width })
        }
        m if m.starts_with('J') && Cond::from_mnemonic(&m[1..]).is_some() => {
            let cond = Cond::from_mnemonic(&m[1..]).expect("checked");
            Line::Jcc(cond, parse_label_ref(operands(rest, 1, line)?[0], line)?)
        }
        m => return Err(syntax(line, format!("unknown mnemonic `{m}`"))),
    };
    Ok(Some(parsed))
}

struct PendingBlock {
    label: String,
    body: Vec<Instruction>,
    term: Option<(usize, PendingTerm)>,
}

enum PendingTerm {
    Branch(Cond, String, Option<String>),
    Jump(String),
    Exit,
}

/// Parses the text format produced by [`render_asm`]. Block labels of the
/// form `.bbN` keep `N` as their id; any other label gets the next free id.
pub fn parse_asm(text: &str) -> Result<Program> {
    let mut blocks: Vec<PendingBlock> = Vec::new();
    let mut entry: Option<(usize, String)> = None;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let Some(parsed) = parse_line(raw, line)? else {
            continue;
        };
        if let Some(b) = blocks.last() {
            if let Some((_, PendingTerm::Branch(_, _, None))) = &b.term {
                if !matches!(parsed, Line::Jmp(_)) {
                    return Err(syntax(line, "conditional jump must be followed by JMP"));
                }
            }
        }
        match parsed {
            Line::Label(l) => {
                if let Some(b) = blocks.last() {
                    if b.term.is_none() {
                        return Err(syntax(line, format!("block {} has no terminator", b.label)));
                    }
                }
                if blocks.iter().any(|b| b.label == l) {
                    return Err(semantic(line, format!("duplicate label {l}")));
                }
                blocks.push(PendingBlock { label: l, body: Vec::new(), term: None });
            }
            Line::Entry(l) => {
                if !blocks.is_empty() || entry.is_some() {
                    return Err(syntax(line, ".entry must come first"));
                }
                entry = Some((line, l));
            }
            other => {
                let b = blocks.last_mut().ok_or_else(|| syntax(line, "instruction outside of a block"))?;
                match (other, &mut b.term) {
                    (Line::Jmp(t), Some((_, PendingTerm::Branch(_, _, ft @ None)))) => *ft = Some(t),
                    (_, Some(_)) => return Err(syntax(line, "instruction after block terminator")),
                    (Line::Inst(i), None) => b.body.push(i),
                    (Line::Jcc(c, t), term @ None) => *term = Some((line, PendingTerm::Branch(c, t, None))),
                    (Line::Jmp(t), term @ None) => *term = Some((line, PendingTerm::Jump(t))),
                    (Line::Exit, term @ None) => *term = Some((line, PendingTerm::Exit)),
                    (Line::Label(_) | Line::Entry(_), _) => unreachable!(),
                }
            }
        }
    }
    if let Some(b) = blocks.last() {
        match &b.term {
            None => return Err(syntax(last_line.max(1), format!("block {} has no terminator", b.label))),
            Some((l, PendingTerm::Branch(_, _, None))) => {
                return Err(syntax(*l, "conditional jump must be followed by JMP"))
            }
            _ => {}
        }
    }
    if blocks.is_empty() {
        return Err(syntax(1, "no blocks"));
    }

    let mut ids: BTreeMap<String, BlockId> = BTreeMap::new();
    let mut next_free = blocks.iter().filter_map(|b| numeric_id(&b.label)).max().map_or(0, |m| m + 1);
    for b in &blocks {
        let id = numeric_id(&b.label).unwrap_or_else(|| {
            next_free += 1;
            next_free - 1
        });
        if ids.values().any(|&v| v == BlockId(id)) {
            return Err(semantic(0, format!("label {} collides with an existing block id", b.label)));
        }
        ids.insert(b.label.clone(), BlockId(id));
    }
    let resolve = |label: &str, line: usize| -> Result<BlockId> {
        ids.get(label).copied().ok_or_else(|| semantic(line, format!("unknown label {label}")))
    };
    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (line, term) = b.term.expect("terminator checked");
        let terminator = match term {
            PendingTerm::Branch(cond, t, ft) => Terminator::Branch {
                cond,
                taken: resolve(&t, line)?,
                fallthrough: resolve(ft.as_deref().expect("checked"), line + 1)?,
            },
            PendingTerm::Jump(t) => Terminator::Jump(resolve(&t, line)?),
            PendingTerm::Exit => Terminator::Exit,
        };
        out.push(BasicBlock { id: ids[&b.label], body: b.body, terminator });
    }
    let entry = match entry {
        Some((line, l)) => resolve(&l, line)?,
        None => out[0].id,
    };
    Ok(Program { blocks: out, entry })
}

fn numeric_id(label: &str) -> Option<u32> {
    label.strip_prefix(".bb").and_then(|d| d.parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_listing() {
        let p = Program {
            blocks: vec![BasicBlock {
                id: BlockId(0),
                body: vec![Instruction::Movi { dst: Reg::new(0).unwrap(), imm: 1 }],
                terminator: Terminator::Exit,
            }],
            entry: BlockId(0),
        };
        assert_eq!(render_asm(&p), ".bb0:\nMOVI R0, 1\nEXIT");
        assert_eq!(parse_asm(".bb0:\nMOVI R0, 1\nEXIT").unwrap(), p);
    }

    #[test]
    fn unknown_label_is_semantic() {
        let err = parse_asm(".bb0:\nJMP .nowhere").unwrap_err();
        match err {
            Error::Semantic { msg, .. } => assert!(msg.contains("unknown label")),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn garbage_is_syntax_error_on_line_one() {
        let err = parse_asm("\u{1}\u{7f}garbage!!").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn bad_register_is_semantic() {
        assert!(matches!(parse_asm(".bb0:\nMOVI R9, 1\nEXIT"), Err(Error::Semantic { line: 2, .. })));
    }

    #[test]
    fn all_forms_round_trip() {
        let text = "\
.entry .bb1
.bb0:
EXIT
.bb1:
ADD R0, R1
SUB R2, -5
XOR R3, 255
OR R4, R4
MOVI R5, 9223372036854775807
CMP R0, 3
CMOVGE R1, R2
CMOVNS R1, 7
AND R2, 4095
LOAD.8 R1, [SB + R2]
AND R6, 4095
STORE.2 [SB + R6], R7
JL .bb0
JMP .bb0";
        let p = parse_asm(text).unwrap();
        assert_eq!(p.entry, BlockId(1));
        assert_eq!(render_asm(&p), text);
    }

    #[test]
    fn comments_and_hex_are_accepted() {
        let p = parse_asm(".bb0:  # entry\n  MOVI R0, 0x10 # sixteen\nEXIT\n").unwrap();
        assert_eq!(p.blocks[0].body[0], Instruction::Movi { dst: Reg::new(0).unwrap(), imm: 16 });
    }

    #[test]
    fn jcc_needs_fallthrough() {
        assert!(matches!(parse_asm(".bb0:\nJZ .bb1\n.bb1:\nEXIT"), Err(Error::Syntax { line: 3, .. })));
    }
}
