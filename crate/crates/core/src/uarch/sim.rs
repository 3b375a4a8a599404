//! Cycle-driven out-of-order core with an L1D/TLB memory system.
//!
//! Per-cycle order: memory completions, execution completions (branch and
//! store resolution, squashes), commit, line-fill-buffer releases, the
//! in-order cache request queue, issue, fetch.

use super::config::{CacheConfig, PipelineConfig};
use super::context::{BranchPredictor, MicroArchContext};
use super::log::{DebugLog, Detail, LogKind, LogRecord, SquashCause};
use crate::defense::{AccessMode, BugFlag, DefenseId, DefensePolicy};
use crate::error::{Error, Result};
use crate::isa::{Flags, FlatOp, Flow, Instruction, Layout, Operand, Reg};
use std::collections::VecDeque;

const FLAGS_SLOT: usize = Reg::COUNT;
const NONE: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Src {
    Ready(u64),
    /// Waiting on (producer seq, reads the flags output).
    Wait(u64, bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Waiting,
    Executing,
    Done,
}

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    pc: usize,
    op: FlatOp,
    srcs: [Src; 3],
    nsrc: usize,
    roots: [Vec<u64>; 3],
    dst: Option<Reg>,
    sets_flags: bool,
    state: State,
    done_at: u64,
    result: u64,
    flags_out: Flags,
    out_roots: Vec<u64>,
    ghr: u64,
    resolved: bool,
    predicted_next: usize,
    actual_next: usize,
    addr: u64,
    width: u64,
    store_data: u64,
    addr_known: bool,
    /// Per loaded byte: 0 for memory, otherwise forwarding store seq + 1.
    byte_src: [u64; 8],
    pending: u32,
    mdp_waited: bool,
    lfb_unsafe: bool,
    lfb_tlb: bool,
    lfb_lines: Vec<u64>,
    expose_lines: Vec<u64>,
    undo: Vec<(u64, Option<u64>)>,
    taint_logged: bool,
    tlb_leaked: bool,
}

impl Entry {
    fn new(seq: u64, pc: usize, op: FlatOp, ghr: u64) -> Self {
        Entry {
            seq,
            pc,
            op,
            srcs: [Src::Ready(0); 3],
            nsrc: 0,
            roots: Default::default(),
            dst: None,
            sets_flags: false,
            state: State::Waiting,
            done_at: NONE,
            result: 0,
            flags_out: Flags::default(),
            out_roots: Vec::new(),
            ghr,
            resolved: true,
            predicted_next: pc + 1,
            actual_next: pc + 1,
            addr: 0,
            width: 0,
            store_data: 0,
            addr_known: false,
            byte_src: [0; 8],
            pending: 0,
            mdp_waited: false,
            lfb_unsafe: false,
            lfb_tlb: false,
            lfb_lines: Vec::new(),
            expose_lines: Vec::new(),
            undo: Vec::new(),
            taint_logged: false,
            tlb_leaked: false,
        }
    }

    fn is_load(&self) -> bool {
        matches!(self.op, FlatOp::Inst(Instruction::Load { .. }))
    }

    fn is_store(&self) -> bool {
        matches!(self.op, FlatOp::Inst(Instruction::Store { .. }))
    }

    fn is_cond(&self) -> bool {
        matches!(self.op, FlatOp::Term(Flow::Branch { .. }))
    }

    fn ready(&self) -> bool {
        self.srcs[..self.nsrc].iter().all(|s| matches!(s, Src::Ready(_)))
    }

    fn val(&self, k: usize) -> u64 {
        match self.srcs[k] {
            Src::Ready(v) => v,
            Src::Wait(..) => unreachable!("operand read before ready"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReqKind {
    Access(AccessMode),
    Expose,
}

#[derive(Debug, Clone, Copy)]
struct Req {
    owner: u64,
    pc: u64,
    line: u64,
    kind: ReqKind,
    committed: bool,
    spec: bool,
    replaced: bool,
    stall_logged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MshrKind {
    Fill(AccessMode),
    Replace,
    Expose,
}

#[derive(Debug, Clone, Copy)]
struct Waiter {
    owner: u64,
    pc: u64,
    track: bool,
    committed: bool,
}

#[derive(Debug, Clone)]
struct Mshr {
    line: u64,
    ready_at: u64,
    kind: MshrKind,
    waiters: Vec<Waiter>,
}

/// Whether a new request may merge into an in-flight fill. Invisible fills
/// belong to the load that issued them and never merge.
fn same_class(a: AccessMode, b: AccessMode) -> bool {
    matches!(
        (a, b),
        (AccessMode::Normal, AccessMode::Normal)
            | (AccessMode::Undoable { .. }, AccessMode::Undoable { .. })
            | (AccessMode::Delayed, AccessMode::Delayed)
    )
}

fn tainted(roots: &[u64], frontier: u64) -> bool {
    roots.iter().any(|&r| r > frontier)
}

/// Simulator output before projection.
pub(crate) struct SimOutput {
    pub ctx: MicroArchContext,
    pub log: DebugLog,
    pub committed: u64,
    pub cycles: u64,
    pub regs: [u64; Reg::COUNT],
    pub flags: Flags,
    pub memory: Vec<u8>,
}

pub(crate) struct Sim<'a> {
    layout: &'a Layout,
    pcfg: &'a PipelineConfig,
    ccfg: &'a CacheConfig,
    policy: &'a DefensePolicy,
    taint: bool,
    mask: u64,
    cycle: u64,
    regs: [u64; Reg::COUNT],
    flags: Flags,
    memory: Vec<u8>,
    rat: [Option<u64>; Reg::COUNT + 1],
    rob: VecDeque<Entry>,
    next_seq: u64,
    fetch_pc: Option<usize>,
    ctx: MicroArchContext,
    queue: VecDeque<Req>,
    mshrs: Vec<Mshr>,
    wakes: Vec<(u64, u64)>,
    spec_buf: Vec<(u64, u64)>,
    log: DebugLog,
    committed: u64,
    exit_cycle: Option<u64>,
}

impl<'a> Sim<'a> {
    pub(crate) fn new(
        layout: &'a Layout,
        regs: [u64; Reg::COUNT],
        memory: Vec<u8>,
        ctx: MicroArchContext,
        policy: &'a DefensePolicy,
        pcfg: &'a PipelineConfig,
        ccfg: &'a CacheConfig,
    ) -> Self {
        Sim {
            layout,
            pcfg,
            ccfg,
            policy,
            taint: policy.blocks_tainted(),
            mask: memory.len() as u64 - 1,
            cycle: 0,
            regs,
            flags: Flags::default(),
            memory,
            rat: [None; Reg::COUNT + 1],
            rob: VecDeque::with_capacity(pcfg.rob_size),
            next_seq: 0,
            fetch_pc: Some(layout.entry_pc),
            ctx,
            queue: VecDeque::new(),
            mshrs: Vec::new(),
            wakes: Vec::new(),
            spec_buf: Vec::new(),
            log: DebugLog::default(),
            committed: 0,
            exit_cycle: None,
        }
    }

    pub(crate) fn run(mut self) -> Result<SimOutput> {
        loop {
            if self.cycle > self.pcfg.cycle_cap {
                return Err(Error::StepCapExceeded(self.pcfg.cycle_cap));
            }
            self.complete_memory();
            self.complete_execution();
            self.commit();
            if let Some(c) = self.exit_cycle {
                if self.cycle >= c + self.pcfg.drain_after_last_commit {
                    break;
                }
            }
            self.release_safe_fills();
            self.process_queue();
            self.issue();
            self.fetch();
            self.cycle += 1;
        }
        let mut ctx = self.ctx;
        ctx.mshr_state.clear();
        Ok(SimOutput {
            ctx,
            log: self.log,
            committed: self.committed,
            cycles: self.cycle + 1,
            regs: self.regs,
            flags: self.flags,
            memory: self.memory,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn rec(&mut self, kind: LogKind, seq: Option<u64>, pc: Option<u64>, addr: Option<u64>, spec: bool, detail: Detail) {
        self.log.push(LogRecord { cycle: self.cycle, kind, seq, pc, addr, speculative: spec, detail });
    }

    fn idx_of(&self, seq: u64) -> Option<usize> {
        self.rob.binary_search_by_key(&seq, |e| e.seq).ok()
    }

    /// Seq of the oldest unresolved branch or unresolved store address.
    /// Every younger entry is speculative.
    fn frontier(&self) -> u64 {
        self.rob
            .iter()
            .find(|e| (e.is_cond() && !e.resolved) || (e.is_store() && !e.addr_known))
            .map_or(NONE, |e| e.seq)
    }

    fn lines_of(&self, addr: u64, width: u64) -> ([u64; 2], usize) {
        let l0 = self.ccfg.line_of(addr);
        let l1 = self.ccfg.line_of((addr + width - 1) & self.mask);
        if l0 == l1 {
            ([l0, l0], 1)
        } else {
            ([l0, l1], 2)
        }
    }

    fn tlb_access(&mut self, line: u64, seq: u64, pc: u64, spec: bool) {
        let page = self.ccfg.page_of(line);
        if self.ctx.tlb_access(self.ccfg, page) {
            self.rec(LogKind::TlbFill, Some(seq), Some(pc), Some(page * self.ccfg.page_size), spec, Detail::None);
        }
    }

    fn install(&mut self, line: u64, seq: Option<u64>, pc: Option<u64>, spec: bool) -> Option<u64> {
        let present = self.ctx.l1_contains(self.ccfg, line);
        let victim = self.ctx.l1_install(self.ccfg, line);
        if !present {
            self.rec(LogKind::L1Fill, seq, pc, Some(line), spec, Detail::None);
        }
        if let Some(v) = victim {
            self.rec(LogKind::L1Evict, seq, pc, Some(v), spec, Detail::None);
        }
        victim
    }

    // ---- memory completions ----

    fn complete_memory(&mut self) {
        let now = self.cycle;
        let mut due = Vec::new();
        let mut i = 0;
        while i < self.mshrs.len() {
            if self.mshrs[i].ready_at <= now {
                due.push(self.mshrs.remove(i));
            } else {
                i += 1;
            }
        }
        for m in due {
            let in_use = self.mshrs.len();
            self.rec(LogKind::MshrFree, None, None, Some(m.line), false, Detail::Mshr { in_use });
            match m.kind {
                MshrKind::Replace => {}
                MshrKind::Expose => {
                    let w = m.waiters[0];
                    self.install(m.line, Some(w.owner), Some(w.pc), false);
                    self.rec(LogKind::Expose, Some(w.owner), Some(w.pc), Some(m.line), false, Detail::None);
                }
                MshrKind::Fill(mode) => self.fill(m, mode),
            }
        }
        if !self.wakes.is_empty() {
            let mut ready = Vec::new();
            self.wakes.retain(|&(c, o)| {
                if c <= now {
                    ready.push(o);
                    false
                } else {
                    true
                }
            });
            for o in ready {
                self.wake(o);
            }
        }
    }

    fn fill(&mut self, m: Mshr, mode: AccessMode) {
        let alive: Vec<Waiter> =
            m.waiters.iter().copied().filter(|w| !w.committed && self.idx_of(w.owner).is_some()).collect();
        let any_committed = m.waiters.iter().any(|w| w.committed);
        let first = m.waiters[0];
        let frontier = self.frontier();
        let spec = alive.iter().any(|w| w.owner > frontier);
        match mode {
            AccessMode::Normal => {
                self.install(m.line, Some(first.owner), Some(first.pc), spec);
            }
            AccessMode::Invisible => {
                for w in &alive {
                    self.spec_buf.push((m.line, w.owner));
                }
            }
            AccessMode::Undoable { .. } => {
                let untracked = m.waiters.iter().any(|w| !w.track);
                if alive.is_empty() && !untracked && !any_committed {
                    self.rec(
                        LogKind::Cleanup,
                        Some(first.owner),
                        Some(first.pc),
                        Some(m.line),
                        true,
                        Detail::Cleanup { victim: None },
                    );
                } else {
                    let was_present = self.ctx.l1_contains(self.ccfg, m.line);
                    let mut victim = self.install(m.line, Some(first.owner), Some(first.pc), spec);
                    if !was_present {
                        for w in alive.iter().filter(|w| w.track) {
                            let i = self.idx_of(w.owner).expect("alive waiter");
                            self.rob[i].undo.push((m.line, victim.take()));
                        }
                    }
                }
            }
            AccessMode::Delayed => {
                let mut install_now = any_committed;
                for w in &alive {
                    let i = self.idx_of(w.owner).expect("alive waiter");
                    let e = &mut self.rob[i];
                    if e.lfb_unsafe && e.seq > frontier {
                        e.lfb_lines.push(m.line);
                    } else {
                        install_now = true;
                    }
                }
                if install_now {
                    self.install(m.line, Some(first.owner), Some(first.pc), false);
                }
            }
        }
        for w in alive {
            self.wake(w.owner);
        }
    }

    fn wake(&mut self, owner: u64) {
        if let Some(i) = self.idx_of(owner) {
            let e = &mut self.rob[i];
            if e.is_load() && e.state == State::Executing && e.pending > 0 {
                e.pending -= 1;
                if e.pending == 0 {
                    self.finish(i);
                }
            }
        }
    }

    // ---- execution completions ----

    fn complete_execution(&mut self) {
        let mut i = 0;
        while i < self.rob.len() {
            let e = &self.rob[i];
            if e.state == State::Executing && e.done_at <= self.cycle {
                if e.is_cond() {
                    self.resolve_branch(i);
                } else if e.is_store() {
                    self.resolve_store(i);
                } else {
                    self.finish(i);
                }
            }
            i += 1;
        }
    }

    fn finish(&mut self, i: usize) {
        if self.taint {
            let frontier = self.frontier();
            let e = &self.rob[i];
            let mut roots: Vec<u64> = e.roots[..e.nsrc].iter().flatten().copied().filter(|&r| r > frontier).collect();
            if e.is_load() {
                roots.push(e.seq);
            }
            roots.sort_unstable();
            roots.dedup();
            self.rob[i].out_roots = roots;
        }
        self.rob[i].state = State::Done;
        let (seq, result, flags) = {
            let e = &self.rob[i];
            (e.seq, e.result, e.flags_out.pack())
        };
        let taint = self.taint;
        let out_roots = if taint { self.rob[i].out_roots.clone() } else { Vec::new() };
        for j in i + 1..self.rob.len() {
            let c = &mut self.rob[j];
            for k in 0..c.nsrc {
                if let Src::Wait(s, f) = c.srcs[k] {
                    if s == seq {
                        c.srcs[k] = Src::Ready(if f { flags } else { result });
                        if taint {
                            c.roots[k] = out_roots.clone();
                        }
                    }
                }
            }
        }
    }

    fn resolve_branch(&mut self, i: usize) {
        if self.taint {
            let frontier = self.frontier();
            if tainted(&self.rob[i].roots[0], frontier) {
                // Resolution of a branch on tainted flags waits until the
                // flags are untainted.
                self.rob[i].done_at = self.cycle + 1;
                return;
            }
        }
        let (seq, pc, predicted, actual, taken_target, ghr) = {
            let e = &mut self.rob[i];
            e.resolved = true;
            let FlatOp::Term(Flow::Branch { taken, .. }) = e.op else { unreachable!() };
            (e.seq, e.pc, e.predicted_next, e.actual_next, taken, e.ghr)
        };
        self.finish(i);
        let spec = seq > self.frontier();
        self.rec(
            LogKind::Exec,
            Some(seq),
            Some(pc as u64),
            None,
            spec,
            Detail::Branch { predicted: predicted as u64, actual: Some(actual as u64) },
        );
        let was_taken = actual == taken_target;
        if was_taken {
            self.ctx.bp.btb_update(pc as u64, taken_target as u64);
        }
        if predicted != actual {
            let ghr = BranchPredictor::push_history(ghr, was_taken);
            self.squash(i + 1, SquashCause::BranchMispredict, pc as u64, actual, ghr);
        }
    }

    fn resolve_store(&mut self, i: usize) {
        let (seq, pc, addr, width) = {
            let e = &mut self.rob[i];
            e.addr_known = true;
            e.state = State::Done;
            (e.seq, e.pc as u64, e.addr, e.width)
        };
        let frontier = self.frontier();
        let spec = seq > frontier;
        self.rec(
            LogKind::Exec,
            Some(seq),
            Some(pc),
            Some(addr),
            spec,
            Detail::Mem { is_store: true, width: width as u8 },
        );
        let (lines, n) = self.lines_of(addr, width);
        if let Some(mode) = self.policy.store_mode(spec, n == 2) {
            for &line in &lines[..n] {
                if mode != AccessMode::Invisible && mode != AccessMode::Delayed {
                    self.tlb_access(line, seq, pc, spec);
                }
                if n == 2 {
                    self.rec(
                        LogKind::SplitReq,
                        Some(seq),
                        Some(pc),
                        Some(line),
                        spec,
                        Detail::Mem { is_store: true, width: width as u8 },
                    );
                }
                self.queue.push_back(Req {
                    owner: seq,
                    pc,
                    line,
                    kind: ReqKind::Access(mode),
                    committed: false,
                    spec,
                    replaced: false,
                    stall_logged: false,
                });
            }
        }
        // Memory-order check against younger loads that already read.
        let mask = self.mask;
        let mut victim = None;
        for j in i + 1..self.rob.len() {
            let l = &self.rob[j];
            if !l.is_load() || l.state == State::Waiting {
                continue;
            }
            let hit = (0..l.width as usize).any(|k| {
                let a = (l.addr + k as u64) & mask;
                let covered = (a.wrapping_sub(addr) & mask) < width;
                covered && (l.byte_src[k] == 0 || l.byte_src[k] - 1 < seq)
            });
            if hit {
                victim = Some(j);
                break;
            }
        }
        if let Some(j) = victim {
            let (lpc, lghr) = (self.rob[j].pc, self.rob[j].ghr);
            self.ctx.mdp.insert(lpc as u64, true);
            self.squash(j, SquashCause::MemoryOrder, pc, lpc, lghr);
        }
    }

    fn squash(&mut self, from: usize, cause: SquashCause, pc: u64, redirect: usize, ghr: u64) {
        let until = self.next_seq;
        let first = self.rob.get(from).map_or(until, |e| e.seq);
        let spec = first > self.frontier();
        self.rec(LogKind::Squash, Some(first), Some(pc), None, spec, Detail::Squash { cause, until });
        let squashed: Vec<Entry> = self.rob.drain(from..).collect();
        for e in squashed.iter().rev() {
            for &(line, victim) in e.undo.iter().rev() {
                self.ctx.l1_remove(self.ccfg, line);
                if let Some(v) = victim {
                    self.ctx.l1_reinstate_lru(self.ccfg, v);
                }
                self.rec(
                    LogKind::Cleanup,
                    Some(e.seq),
                    Some(e.pc as u64),
                    Some(line),
                    true,
                    Detail::Cleanup { victim },
                );
            }
        }
        self.queue.retain(|r| r.committed || r.owner < first);
        self.spec_buf.retain(|&(_, o)| o < first);
        self.wakes.retain(|&(_, o)| o < first);
        self.rat = [None; Reg::COUNT + 1];
        for e in &self.rob {
            if let Some(d) = e.dst {
                self.rat[d.index()] = Some(e.seq);
            }
            if e.sets_flags {
                self.rat[FLAGS_SLOT] = Some(e.seq);
            }
        }
        self.fetch_pc = Some(redirect);
        self.ctx.bp.ghr = ghr;
    }

    // ---- commit ----

    fn commit(&mut self) {
        for _ in 0..self.pcfg.commit_width {
            match self.rob.front() {
                Some(e) if e.state == State::Done => {}
                _ => break,
            }
            self.release_entry(0);
            let e = self.rob.pop_front().expect("head exists");
            let pc = e.pc as u64;
            let mut exit = false;
            match e.op {
                FlatOp::Inst(Instruction::Store { .. }) => {
                    for k in 0..e.width {
                        self.memory[((e.addr + k) & self.mask) as usize] = (e.store_data >> (8 * k)) as u8;
                    }
                    let (lines, n) = self.lines_of(e.addr, e.width);
                    for &line in &lines[..n] {
                        self.tlb_access(line, e.seq, pc, false);
                        self.queue.push_back(Req {
                            owner: e.seq,
                            pc,
                            line,
                            kind: ReqKind::Access(AccessMode::Normal),
                            committed: true,
                            spec: false,
                            replaced: false,
                            stall_logged: false,
                        });
                    }
                }
                FlatOp::Inst(Instruction::Load { .. }) => {
                    for &line in &e.expose_lines {
                        self.tlb_access(line, e.seq, pc, false);
                        self.queue.push_back(Req {
                            owner: e.seq,
                            pc,
                            line,
                            kind: ReqKind::Expose,
                            committed: true,
                            spec: false,
                            replaced: false,
                            stall_logged: false,
                        });
                    }
                    self.spec_buf.retain(|&(_, o)| o != e.seq);
                }
                FlatOp::Term(Flow::Branch { taken, .. }) => {
                    self.ctx.bp.train(pc, e.ghr, e.actual_next == taken);
                }
                FlatOp::Term(Flow::Exit) => exit = true,
                _ => {}
            }
            if let Some(d) = e.dst {
                self.regs[d.index()] = e.result;
                if self.rat[d.index()] == Some(e.seq) {
                    self.rat[d.index()] = None;
                }
            }
            if e.sets_flags {
                self.flags = e.flags_out;
                if self.rat[FLAGS_SLOT] == Some(e.seq) {
                    self.rat[FLAGS_SLOT] = None;
                }
            }
            self.rec(LogKind::Commit, Some(e.seq), Some(pc), None, false, Detail::None);
            self.committed += 1;
            if exit {
                self.exit_cycle = Some(self.cycle);
                break;
            }
        }
    }

    // ---- line-fill buffer ----

    fn release_entry(&mut self, i: usize) {
        if !self.rob[i].lfb_unsafe {
            return;
        }
        let e = &mut self.rob[i];
        e.lfb_unsafe = false;
        let lines = std::mem::take(&mut e.lfb_lines);
        let (seq, pc, tlb, addr) = (e.seq, e.pc as u64, e.lfb_tlb, e.addr);
        e.lfb_tlb = false;
        if tlb {
            let line = self.ccfg.line_of(addr);
            self.tlb_access(line, seq, pc, false);
        }
        for line in lines {
            self.install(line, Some(seq), Some(pc), false);
        }
    }

    fn release_safe_fills(&mut self) {
        if self.policy.id != DefenseId::LfbDelay {
            return;
        }
        let frontier = self.frontier();
        for i in 0..self.rob.len() {
            if self.rob[i].seq > frontier {
                break;
            }
            self.release_entry(i);
        }
    }

    // ---- cache request queue ----

    fn process_queue(&mut self) {
        while let Some(&front) = self.queue.front() {
            let mut r = front;
            if self.serve(&mut r) {
                self.queue.pop_front();
            } else {
                *self.queue.front_mut().expect("front exists") = r;
                break;
            }
        }
    }

    fn serve(&mut self, r: &mut Req) -> bool {
        let hit_lat = self.pcfg.load_hit_latency;
        match r.kind {
            ReqKind::Access(mode) => {
                let line = r.line;
                if self.ctx.l1_contains(self.ccfg, line) {
                    if mode == AccessMode::Normal {
                        self.ctx.l1_touch(self.ccfg, line);
                    }
                    self.rec(LogKind::L1Hit, Some(r.owner), Some(r.pc), Some(line), r.spec, Detail::None);
                    if !r.committed {
                        self.wakes.push((self.cycle + hit_lat, r.owner));
                    }
                    return true;
                }
                if mode == AccessMode::Invisible && self.spec_buf.iter().any(|&(l, o)| l == line && o <= r.owner) {
                    self.rec(
                        LogKind::L1Hit,
                        Some(r.owner),
                        Some(r.pc),
                        Some(line),
                        r.spec,
                        Detail::Note { text: "speculative buffer".into() },
                    );
                    self.spec_buf.push((line, r.owner));
                    self.wakes.push((self.cycle + hit_lat, r.owner));
                    return true;
                }
                let waiter = Waiter {
                    owner: r.owner,
                    pc: r.pc,
                    track: matches!(mode, AccessMode::Undoable { track: true }),
                    committed: r.committed,
                };
                if let Some(m) = self
                    .mshrs
                    .iter_mut()
                    .find(|m| m.line == line && matches!(m.kind, MshrKind::Fill(k) if same_class(k, mode)))
                {
                    m.waiters.push(waiter);
                    self.rec(LogKind::L1Miss, Some(r.owner), Some(r.pc), Some(line), r.spec, Detail::None);
                    return true;
                }
                if self.mshrs.len() >= self.ccfg.mshr_count {
                    if !r.stall_logged {
                        r.stall_logged = true;
                        let in_use = self.mshrs.len();
                        self.rec(
                            LogKind::MshrStall,
                            Some(r.owner),
                            Some(r.pc),
                            Some(line),
                            r.spec,
                            Detail::Mshr { in_use },
                        );
                    }
                    return false;
                }
                self.rec(LogKind::L1Miss, Some(r.owner), Some(r.pc), Some(line), r.spec, Detail::None);
                if mode == AccessMode::Invisible
                    && self.policy.has(BugFlag::EvictOnSpecMiss)
                    && self.ctx.l1_set_full(self.ccfg, line)
                {
                    if let Some(v) = self.ctx.l1_evict_lru(self.ccfg, line) {
                        self.rec(LogKind::L1Evict, Some(r.owner), Some(r.pc), Some(v), true, Detail::None);
                    }
                }
                let lat = if self.ccfg.l2_present(line) { self.pcfg.l2_hit_latency } else { self.pcfg.mem_latency };
                self.mshrs.push(Mshr {
                    line,
                    ready_at: self.cycle + lat,
                    kind: MshrKind::Fill(mode),
                    waiters: vec![waiter],
                });
                let in_use = self.mshrs.len();
                self.rec(LogKind::MshrAlloc, Some(r.owner), Some(r.pc), Some(line), r.spec, Detail::Mshr { in_use });
                true
            }
            ReqKind::Expose => {
                let line = r.line;
                if self.ctx.l1_touch(self.ccfg, line) {
                    self.rec(LogKind::Expose, Some(r.owner), Some(r.pc), Some(line), false, Detail::None);
                    return true;
                }
                if !r.replaced && self.ctx.l1_set_full(self.ccfg, line) {
                    if self.mshrs.len() >= self.ccfg.mshr_count {
                        self.expose_stall(r);
                        return false;
                    }
                    if let Some(v) = self.ctx.l1_evict_lru(self.ccfg, line) {
                        self.rec(LogKind::L1Evict, Some(r.owner), Some(r.pc), Some(v), false, Detail::None);
                    }
                    self.mshrs.push(Mshr {
                        line,
                        ready_at: self.cycle + self.pcfg.l2_hit_latency,
                        kind: MshrKind::Replace,
                        waiters: Vec::new(),
                    });
                    let in_use = self.mshrs.len();
                    self.rec(LogKind::MshrAlloc, Some(r.owner), Some(r.pc), Some(line), false, Detail::Mshr { in_use });
                    r.replaced = true;
                }
                if self.mshrs.len() >= self.ccfg.mshr_count {
                    self.expose_stall(r);
                    return false;
                }
                self.rec(LogKind::L1Miss, Some(r.owner), Some(r.pc), Some(line), false, Detail::None);
                self.mshrs.push(Mshr {
                    line,
                    ready_at: self.cycle + hit_lat,
                    kind: MshrKind::Expose,
                    waiters: vec![Waiter { owner: r.owner, pc: r.pc, track: false, committed: true }],
                });
                let in_use = self.mshrs.len();
                self.rec(LogKind::MshrAlloc, Some(r.owner), Some(r.pc), Some(line), false, Detail::Mshr { in_use });
                true
            }
        }
    }

    fn expose_stall(&mut self, r: &mut Req) {
        if !r.stall_logged {
            r.stall_logged = true;
            let in_use = self.mshrs.len();
            self.rec(LogKind::ExposeStall, Some(r.owner), Some(r.pc), Some(r.line), false, Detail::Mshr { in_use });
        }
    }

    // ---- issue ----

    fn issue(&mut self) {
        let frontier = self.frontier();
        let mut issued = 0;
        let mut i = 0;
        while i < self.rob.len() && issued < self.pcfg.issue_width {
            let e = &self.rob[i];
            if e.state == State::Waiting && e.ready() {
                let ok = if e.is_load() {
                    self.issue_load(i, frontier)
                } else if e.is_store() {
                    self.issue_store(i, frontier)
                } else {
                    self.issue_simple(i, frontier);
                    true
                };
                if ok {
                    issued += 1;
                }
            }
            i += 1;
        }
    }

    fn log_issue(&mut self, i: usize, frontier: u64) {
        let (seq, pc) = (self.rob[i].seq, self.rob[i].pc as u64);
        self.rec(LogKind::Issue, Some(seq), Some(pc), None, seq > frontier, Detail::None);
    }

    fn issue_simple(&mut self, i: usize, frontier: u64) {
        self.log_issue(i, frontier);
        let cycle = self.cycle;
        let branch_lat = self.pcfg.branch_resolve_latency;
        let e = &mut self.rob[i];
        e.state = State::Executing;
        e.done_at = cycle + 1;
        match e.op {
            FlatOp::Inst(Instruction::Alu { op, .. }) => {
                e.result = op.apply(e.val(0), e.val(1));
                e.flags_out = Flags::of(e.result);
            }
            FlatOp::Inst(Instruction::Movi { imm, .. }) => e.result = imm,
            FlatOp::Inst(Instruction::Cmp { .. }) => e.flags_out = Flags::of(e.val(0).wrapping_sub(e.val(1))),
            FlatOp::Inst(Instruction::Cmov { cond, .. }) => {
                e.result = if cond.holds(Flags::unpack(e.val(2))) { e.val(1) } else { e.val(0) };
            }
            FlatOp::Term(Flow::Branch { cond, taken, fallthrough }) => {
                e.actual_next = if cond.holds(Flags::unpack(e.val(0))) { taken } else { fallthrough };
                e.done_at = cycle + branch_lat;
            }
            _ => {}
        }
    }

    fn issue_load(&mut self, i: usize, frontier: u64) -> bool {
        let (seq, pc) = (self.rob[i].seq, self.rob[i].pc as u64);
        if self.taint && tainted(&self.rob[i].roots[0], frontier) {
            if !self.rob[i].taint_logged {
                self.rob[i].taint_logged = true;
                self.rec(LogKind::Taint, Some(seq), Some(pc), None, true, Detail::None);
            }
            return false;
        }
        let FlatOp::Inst(Instruction::Load { width, .. }) = self.rob[i].op else { unreachable!() };
        let w = width.bytes();
        let addr = self.rob[i].val(0) & self.mask;
        let unresolved = (0..i).any(|j| self.rob[j].is_store() && !self.rob[j].addr_known);
        if unresolved && self.ctx.mdp.get(&pc).copied().unwrap_or(false) {
            self.rob[i].mdp_waited = true;
            return false;
        }
        let mask = self.mask;
        let mut value = 0u64;
        let mut byte_src = [0u64; 8];
        let mut any_overlap = false;
        for k in 0..w {
            let a = (addr + k) & mask;
            let mut byte = self.memory[a as usize];
            for j in (0..i).rev() {
                let s = &self.rob[j];
                if s.is_store() && s.addr_known {
                    let off = a.wrapping_sub(s.addr) & mask;
                    if off < s.width {
                        byte = (s.store_data >> (8 * off)) as u8;
                        byte_src[k as usize] = s.seq + 1;
                        any_overlap = true;
                        break;
                    }
                }
            }
            value |= u64::from(byte) << (8 * k);
        }
        if self.rob[i].mdp_waited && !any_overlap {
            self.ctx.mdp.insert(pc, false);
        }
        let spec = seq > frontier;
        self.log_issue(i, frontier);
        self.rec(LogKind::Exec, Some(seq), Some(pc), Some(addr), spec, Detail::Mem { is_store: false, width: w as u8 });
        {
            let e = &mut self.rob[i];
            e.addr = addr;
            e.width = w;
            e.result = value;
            e.byte_src = byte_src;
            e.state = State::Executing;
        }
        if byte_src[..w as usize].iter().all(|&s| s != 0) {
            self.rob[i].done_at = self.cycle + self.pcfg.load_hit_latency;
            return true;
        }
        let (lines, n) = self.lines_of(addr, w);
        let mut unsafe_spec = spec;
        if spec && self.policy.id == DefenseId::LfbDelay && self.policy.has(BugFlag::FirstSpecLoadSafe) {
            let older_unsafe = (0..i).any(|j| {
                let o = &self.rob[j];
                o.is_load() && o.lfb_unsafe && o.seq > frontier
            });
            unsafe_spec = older_unsafe;
        }
        let mode = self.policy.load_mode(unsafe_spec, n == 2);
        match mode {
            AccessMode::Normal | AccessMode::Undoable { .. } => {
                for &line in &lines[..n] {
                    self.tlb_access(line, seq, pc, spec);
                }
            }
            AccessMode::Delayed => self.rob[i].lfb_tlb = true,
            AccessMode::Invisible => {}
        }
        for &line in &lines[..n] {
            if n == 2 {
                self.rec(
                    LogKind::SplitReq,
                    Some(seq),
                    Some(pc),
                    Some(line),
                    spec,
                    Detail::Mem { is_store: false, width: w as u8 },
                );
            }
            self.queue.push_back(Req {
                owner: seq,
                pc,
                line,
                kind: ReqKind::Access(mode),
                committed: false,
                spec,
                replaced: false,
                stall_logged: false,
            });
        }
        let e = &mut self.rob[i];
        e.pending = n as u32;
        e.lfb_unsafe = mode == AccessMode::Delayed;
        if mode == AccessMode::Invisible {
            e.expose_lines = lines[..n].to_vec();
        }
        true
    }

    fn issue_store(&mut self, i: usize, frontier: u64) -> bool {
        let (seq, pc) = (self.rob[i].seq, self.rob[i].pc as u64);
        let FlatOp::Inst(Instruction::Store { width, .. }) = self.rob[i].op else { unreachable!() };
        let addr = self.rob[i].val(0) & self.mask;
        if self.taint && tainted(&self.rob[i].roots[0], frontier) {
            if self.policy.has(BugFlag::TaintedStoreTlb) && !self.rob[i].tlb_leaked {
                self.rob[i].tlb_leaked = true;
                let line = self.ccfg.line_of(addr);
                self.tlb_access(line, seq, pc, true);
            }
            if !self.rob[i].taint_logged {
                self.rob[i].taint_logged = true;
                self.rec(LogKind::Taint, Some(seq), Some(pc), Some(addr), true, Detail::None);
            }
            return false;
        }
        self.log_issue(i, frontier);
        let cycle = self.cycle;
        let lat = self.pcfg.store_addr_resolve_latency;
        let e = &mut self.rob[i];
        e.addr = addr;
        e.width = width.bytes();
        e.store_data = e.val(1);
        e.state = State::Executing;
        e.done_at = cycle + lat;
        true
    }

    // ---- fetch ----

    fn rename(&self, slot: usize) -> (Src, Vec<u64>) {
        match self.rat[slot] {
            None => {
                let v = if slot == FLAGS_SLOT { self.flags.pack() } else { self.regs[slot] };
                (Src::Ready(v), Vec::new())
            }
            Some(seq) => {
                let e = &self.rob[self.idx_of(seq).expect("renamed producer in flight")];
                if e.state == State::Done {
                    let v = if slot == FLAGS_SLOT { e.flags_out.pack() } else { e.result };
                    (Src::Ready(v), if self.taint { e.out_roots.clone() } else { Vec::new() })
                } else {
                    (Src::Wait(seq, slot == FLAGS_SLOT), Vec::new())
                }
            }
        }
    }

    fn fetch(&mut self) {
        for _ in 0..self.pcfg.fetch_width {
            if self.rob.len() >= self.pcfg.rob_size {
                break;
            }
            let Some(pc) = self.fetch_pc else { break };
            let op = self.layout.ops[pc];
            let seq = self.next_seq;
            self.next_seq += 1;
            let spec = self.frontier() != NONE;
            let mut e = Entry::new(seq, pc, op, self.ctx.bp.ghr);
            enum S {
                R(Reg),
                O(Operand),
                F,
            }
            let srcs: Vec<S> = match op {
                FlatOp::Inst(Instruction::Alu { dst, src, .. }) => {
                    e.dst = Some(dst);
                    e.sets_flags = true;
                    vec![S::R(dst), S::O(src)]
                }
                FlatOp::Inst(Instruction::Movi { dst, .. }) => {
                    e.dst = Some(dst);
                    vec![]
                }
                FlatOp::Inst(Instruction::Cmp { lhs, rhs }) => {
                    e.sets_flags = true;
                    vec![S::R(lhs), S::O(rhs)]
                }
                FlatOp::Inst(Instruction::Cmov { dst, src, .. }) => {
                    e.dst = Some(dst);
                    vec![S::R(dst), S::O(src), S::F]
                }
                FlatOp::Inst(Instruction::Load { dst, offset, .. }) => {
                    e.dst = Some(dst);
                    vec![S::R(offset)]
                }
                FlatOp::Inst(Instruction::Store { src, offset, .. }) => {
                    vec![S::R(offset), S::R(src)]
                }
                FlatOp::Term(Flow::Branch { .. }) => vec![S::F],
                FlatOp::Term(_) => vec![],
            };
            for (k, s) in srcs.iter().enumerate() {
                let (src, roots) = match *s {
                    S::R(r) => self.rename(r.index()),
                    S::O(Operand::Reg(r)) => self.rename(r.index()),
                    S::O(Operand::Imm(v)) => (Src::Ready(v), Vec::new()),
                    S::F => self.rename(FLAGS_SLOT),
                };
                e.srcs[k] = src;
                e.roots[k] = roots;
            }
            e.nsrc = srcs.len();
            let mut detail = Detail::None;
            self.fetch_pc = match op {
                FlatOp::Inst(_) | FlatOp::Term(Flow::Next) => Some(pc + 1),
                FlatOp::Term(Flow::Jump(t)) => {
                    e.predicted_next = t;
                    e.actual_next = t;
                    Some(t)
                }
                FlatOp::Term(Flow::Exit) => None,
                FlatOp::Term(Flow::Branch { taken, fallthrough, .. }) => {
                    let bp = &self.ctx.bp;
                    let ghr = bp.ghr;
                    let pred_taken = bp.predict_taken(pc as u64, ghr) && bp.btb_target(pc as u64) == Some(taken as u64);
                    let next = if pred_taken { taken } else { fallthrough };
                    e.resolved = false;
                    e.predicted_next = next;
                    self.ctx.bp.ghr = BranchPredictor::push_history(ghr, pred_taken);
                    detail = Detail::Branch { predicted: next as u64, actual: None };
                    Some(next)
                }
            };
            if let Some(d) = e.dst {
                self.rat[d.index()] = Some(seq);
            }
            if e.sets_flags {
                self.rat[FLAGS_SLOT] = Some(seq);
            }
            self.rec(LogKind::Fetch, Some(seq), Some(pc as u64), None, spec, detail);
            self.rob.push_back(e);
        }
    }
}
