//! Sequential ISA interpreter producing contract traces.

use crate::error::{Error, Result};
use crate::generator::TestInput;
use crate::isa::{Flags, FlatOp, Flow, Instruction, Layout, Operand, Program, Reg};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Architectural step cap for the interpreter.
pub const STEP_CAP: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContractKind {
    CtSeq,
    CtCond,
    ArchSeq,
}

/// Leakage contract. `window` and `nesting_depth` only matter for `CT_COND`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContractId {
    pub kind: ContractKind,
    #[serde(default = "default_window")]
    pub window: u32,
    #[serde(default = "default_nesting")]
    pub nesting_depth: u32,
}

fn default_window() -> u32 {
    64
}

fn default_nesting() -> u32 {
    1
}

impl ContractId {
    pub fn ct_seq() -> Self {
        Self::of(ContractKind::CtSeq)
    }

    pub fn ct_cond() -> Self {
        Self::of(ContractKind::CtCond)
    }

    pub fn arch_seq() -> Self {
        Self::of(ContractKind::ArchSeq)
    }

    pub fn of(kind: ContractKind) -> Self {
        ContractId { kind, window: default_window(), nesting_depth: default_nesting() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.nesting_depth == 0 {
            return Err(Error::Config("contract window and nesting_depth must be >= 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ContractKind::CtSeq => f.write_str("CT_SEQ"),
            ContractKind::ArchSeq => f.write_str("ARCH_SEQ"),
            ContractKind::CtCond => {
                write!(f, "CT_COND(w={},d={})", self.window, self.nesting_depth)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObsKind {
    Pc,
    LoadAddr,
    StoreAddr,
    LoadValue,
    SpecBegin,
    SpecEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObsKind,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContractTrace {
    pub observations: Vec<Observation>,
    pub hash: u64,
}

impl ContractTrace {
    pub fn new(observations: Vec<Observation>) -> Self {
        let hash = digest(&observations);
        ContractTrace { observations, hash }
    }
}

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn digest(obs: &[Observation]) -> u64 {
    obs.iter().fold(FNV_OFFSET, |h, o| {
        let h = fnv1a(h, &[o.kind as u8]);
        fnv1a(h, &o.value.to_le_bytes())
    })
}

/// 64-bit FNV-1a digest over the observation list. The empty trace hashes
/// to the FNV offset basis.
pub fn trace_digest(t: &ContractTrace) -> u64 {
    digest(&t.observations)
}

/// Committed architectural state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub regs: [u64; Reg::COUNT],
    pub flags: Flags,
    pub memory: Vec<u8>,
}

impl ArchState {
    pub fn from_input(i: &TestInput) -> Self {
        ArchState { regs: i.regs, flags: Flags::default(), memory: i.memory.clone() }
    }
}

/// Input locations whose initial value flows into some observation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Footprint {
    pub regs: [bool; Reg::COUNT],
    pub memory: BTreeSet<u64>,
}

impl Footprint {
    fn add(&mut self, t: &[Src]) {
        for s in t {
            match *s {
                Src::Reg(r) => self.regs[r as usize] = true,
                Src::Mem(a) => {
                    self.memory.insert(a);
                }
            }
        }
    }
}

/// An input location a value may derive from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Src {
    Reg(u8),
    Mem(u64),
}

/// Sorted, deduplicated set of sources.
type Taint = Vec<Src>;

fn union(a: &[Src], b: &[Src]) -> Taint {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Dataflow from input locations, used to compute a [`Footprint`].
#[derive(Debug, Clone)]
struct Tracker {
    regs: [Taint; Reg::COUNT],
    flags: Taint,
    /// Committed memory bytes that have been overwritten.
    memory: BTreeMap<u64, Taint>,
    /// Per speculation layer, taint of shadow bytes.
    shadow: Vec<BTreeMap<u64, Taint>>,
    footprint: Footprint,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            regs: std::array::from_fn(|r| vec![Src::Reg(r as u8)]),
            flags: Vec::new(),
            memory: BTreeMap::new(),
            shadow: Vec::new(),
            footprint: Footprint::default(),
        }
    }

    fn byte(&self, a: u64) -> Taint {
        for layer in self.shadow.iter().rev() {
            if let Some(t) = layer.get(&a) {
                return t.clone();
            }
        }
        self.memory.get(&a).cloned().unwrap_or_else(|| vec![Src::Mem(a)])
    }

    fn set_byte(&mut self, a: u64, t: Taint) {
        match self.shadow.last_mut() {
            Some(layer) => layer.insert(a, t),
            None => self.memory.insert(a, t),
        };
    }

    fn operand(&self, o: Operand) -> Taint {
        match o {
            Operand::Reg(r) => self.regs[r.index()].clone(),
            Operand::Imm(_) => Vec::new(),
        }
    }
}

#[cfg(test)]
pub(crate) fn read_mem(mem: &[u8], addr: u64, width: u64) -> u64 {
    let mask = mem.len() as u64 - 1;
    (0..width).fold(0u64, |v, k| v | (u64::from(mem[((addr + k) & mask) as usize]) << (8 * k)))
}

struct Machine<'a> {
    layout: &'a Layout,
    contract: ContractId,
    mask: u64,
    regs: [u64; Reg::COUNT],
    flags: Flags,
    memory: Vec<u8>,
    shadow: Vec<BTreeMap<u64, u8>>,
    taint: Option<Box<Tracker>>,
    obs: Vec<Observation>,
    steps: u64,
}

impl<'a> Machine<'a> {
    fn new(layout: &'a Layout, i: &TestInput, contract: ContractId, track: bool) -> Self {
        Machine {
            layout,
            contract,
            mask: i.memory.len() as u64 - 1,
            regs: i.regs,
            flags: Flags::default(),
            memory: i.memory.clone(),
            shadow: Vec::new(),
            taint: track.then(|| Box::new(Tracker::new())),
            obs: Vec::new(),
            steps: 0,
        }
    }

    fn emit(&mut self, kind: ObsKind, value: u64) {
        self.obs.push(Observation { kind, value });
    }

    fn reg(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    fn set_reg(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = v;
    }

    fn track(&mut self, f: impl FnOnce(&mut Tracker)) {
        if let Some(t) = &mut self.taint {
            f(t);
        }
    }

    /// Marks the sources of register `r` as observed.
    fn observe_reg(&mut self, r: Reg) {
        self.track(|t| {
            let src = t.regs[r.index()].clone();
            t.footprint.add(&src);
        });
    }

    fn operand(&self, o: Operand) -> u64 {
        match o {
            Operand::Reg(r) => self.reg(r),
            Operand::Imm(v) => v,
        }
    }

    fn load_byte(&mut self, a: u64) -> u8 {
        for layer in self.shadow.iter().rev() {
            if let Some(&b) = layer.get(&a) {
                return b;
            }
        }
        self.memory[a as usize]
    }

    fn store_byte(&mut self, a: u64, b: u8) {
        match self.shadow.last_mut() {
            Some(layer) => {
                layer.insert(a, b);
            }
            None => self.memory[a as usize] = b,
        }
    }

    /// Executes the op at `pc` and returns the next pc, or `None` at exit.
    fn step(&mut self, pc: usize, depth: u32) -> Result<Option<usize>> {
        self.emit(ObsKind::Pc, pc as u64);
        match self.layout.ops[pc] {
            FlatOp::Inst(inst) => {
                self.exec(inst);
                Ok(Some(pc + 1))
            }
            FlatOp::Term(Flow::Next) => Ok(Some(pc + 1)),
            FlatOp::Term(Flow::Jump(t)) => Ok(Some(t)),
            FlatOp::Term(Flow::Exit) => Ok(None),
            FlatOp::Term(Flow::Branch { cond, taken, fallthrough }) => {
                self.track(|t| {
                    let src = t.flags.clone();
                    t.footprint.add(&src);
                });
                let t = cond.holds(self.flags);
                let (next, other) = if t { (taken, fallthrough) } else { (fallthrough, taken) };
                if self.contract.kind == ContractKind::CtCond && depth < self.contract.nesting_depth {
                    self.explore(pc, other, depth + 1)?;
                }
                Ok(Some(next))
            }
        }
    }

    fn exec(&mut self, inst: Instruction) {
        match inst {
            Instruction::Alu { op, dst, src } => {
                let r = op.apply(self.reg(dst), self.operand(src));
                self.set_reg(dst, r);
                self.flags = Flags::of(r);
                self.track(|t| {
                    let u = union(&t.regs[dst.index()], &t.operand(src));
                    t.flags = u.clone();
                    t.regs[dst.index()] = u;
                });
            }
            Instruction::Movi { dst, imm } => {
                self.set_reg(dst, imm);
                self.track(|t| t.regs[dst.index()].clear());
            }
            Instruction::Cmp { lhs, rhs } => {
                self.flags = Flags::of(self.reg(lhs).wrapping_sub(self.operand(rhs)));
                self.track(|t| t.flags = union(&t.regs[lhs.index()], &t.operand(rhs)));
            }
            Instruction::Cmov { cond, dst, src } => {
                let r = if cond.holds(self.flags) { self.operand(src) } else { self.reg(dst) };
                self.set_reg(dst, r);
                self.track(|t| {
                    let u = union(&t.regs[dst.index()], &t.operand(src));
                    t.regs[dst.index()] = union(&u, &t.flags);
                });
            }
            Instruction::Load { dst, offset, width } => {
                let addr = self.reg(offset) & self.mask;
                self.emit(ObsKind::LoadAddr, addr);
                self.observe_reg(offset);
                let mut v = 0u64;
                for k in 0..width.bytes() {
                    v |= u64::from(self.load_byte((addr + k) & self.mask)) << (8 * k);
                }
                let arch = self.contract.kind == ContractKind::ArchSeq;
                if arch {
                    self.emit(ObsKind::LoadValue, v);
                }
                let mask = self.mask;
                self.track(|t| {
                    let mut u = t.regs[offset.index()].clone();
                    for k in 0..width.bytes() {
                        u = union(&u, &t.byte((addr + k) & mask));
                    }
                    if arch {
                        t.footprint.add(&u);
                    }
                    t.regs[dst.index()] = u;
                });
                self.set_reg(dst, v);
            }
            Instruction::Store { src, offset, width } => {
                let addr = self.reg(offset) & self.mask;
                self.emit(ObsKind::StoreAddr, addr);
                self.observe_reg(offset);
                let v = self.reg(src);
                for k in 0..width.bytes() {
                    self.store_byte((addr + k) & self.mask, (v >> (8 * k)) as u8);
                }
                let mask = self.mask;
                self.track(|t| {
                    let u = t.regs[src.index()].clone();
                    for k in 0..width.bytes() {
                        t.set_byte((addr + k) & mask, u.clone());
                    }
                });
            }
        }
    }

    fn explore(&mut self, branch_pc: usize, start: usize, depth: u32) -> Result<()> {
        let saved = (self.regs, self.flags);
        let saved_taint = self.taint.as_ref().map(|t| (t.regs.clone(), t.flags.clone()));
        self.shadow.push(BTreeMap::new());
        self.track(|t| t.shadow.push(BTreeMap::new()));
        self.emit(ObsKind::SpecBegin, branch_pc as u64);
        let mut pc = Some(start);
        let mut n = 0;
        while let Some(p) = pc {
            if n >= self.contract.window {
                break;
            }
            pc = self.step(p, depth)?;
            n += 1;
        }
        self.emit(ObsKind::SpecEnd, branch_pc as u64);
        self.shadow.pop();
        (self.regs, self.flags) = saved;
        if let (Some(t), Some((regs, flags))) = (&mut self.taint, saved_taint) {
            t.shadow.pop();
            t.regs = regs;
            t.flags = flags;
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        if self.contract.kind == ContractKind::ArchSeq {
            // The register file is loaded from the input before the test
            // starts, so its initial values count as loaded values.
            for r in Reg::all() {
                let v = self.reg(r);
                self.emit(ObsKind::LoadValue, v);
                self.observe_reg(r);
            }
        }
        let mut pc = Some(self.layout.entry_pc);
        while let Some(p) = pc {
            self.steps += 1;
            if self.steps > STEP_CAP {
                return Err(Error::StepCapExceeded(STEP_CAP));
            }
            pc = self.step(p, 0)?;
        }
        Ok(())
    }
}

fn layout_of(p: &Program) -> Result<Layout> {
    Layout::new(p).ok_or_else(|| Error::InvalidProgram("terminator targets a missing block".into()))
}

fn check_input(i: &TestInput) -> Result<()> {
    if !i.memory.len().is_power_of_two() {
        return Err(Error::InvalidProgram("input memory size must be a power of two".into()));
    }
    Ok(())
}

pub fn collect_contract_trace(p: &Program, i: &TestInput, c: ContractId) -> Result<ContractTrace> {
    c.validate()?;
    check_input(i)?;
    let layout = layout_of(p)?;
    let mut m = Machine::new(&layout, i, c, false);
    m.run()?;
    Ok(ContractTrace::new(m.obs))
}

/// Trace together with the input locations it depends on.
pub fn contract_footprint(p: &Program, i: &TestInput, c: ContractId) -> Result<(ContractTrace, Footprint)> {
    c.validate()?;
    check_input(i)?;
    let layout = layout_of(p)?;
    let mut m = Machine::new(&layout, i, c, true);
    m.run()?;
    let fp = m.taint.take().map(|t| t.footprint).unwrap_or_default();
    Ok((ContractTrace::new(m.obs), fp))
}

/// Final architectural state after sequential execution.
pub fn execute_architectural(p: &Program, i: &TestInput) -> Result<ArchState> {
    execute_with(p, i, ContractId::ct_seq())
}

/// Final architectural state after collecting a trace under `c`.
pub fn execute_with(p: &Program, i: &TestInput, c: ContractId) -> Result<ArchState> {
    check_input(i)?;
    let layout = layout_of(p)?;
    let mut m = Machine::new(&layout, i, c, false);
    m.run()?;
    Ok(ArchState { regs: m.regs, flags: m.flags, memory: m.memory })
}
