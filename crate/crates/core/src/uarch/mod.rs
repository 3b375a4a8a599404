//! Simplified cycle-level out-of-order CPU.

mod config;
mod context;
mod log;
mod sim;

pub use config::{CacheConfig, PipelineConfig};
pub use context::{
    reset_context, reset_line, restore_context, snapshot_context, BranchPredictor, BtbEntry, MicroArchContext,
    ResetPolicy, BTB_ENTRIES, GSHARE_ENTRIES, HISTORY_BITS,
};
pub use log::{BranchEvent, DebugLog, Detail, EventStreams, LogKind, LogRecord, MemEvent, SquashCause};

#[allow(unused_imports)]
pub(crate) use config::splitmix64;

use crate::contract::ArchState;
use crate::defense::DefensePolicy;
use crate::error::{Error, Result};
use crate::generator::TestInput;
use crate::isa::{Layout, Program};

/// Everything observable about one simulated test case.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_ctx: MicroArchContext,
    pub log: DebugLog,
    pub event_streams: EventStreams,
    pub committed_instruction_count: u64,
    pub cycles: u64,
    /// Committed registers, flags and memory.
    pub arch: ArchState,
}

/// Simulates `p` on `i` starting from `ctx`.
pub fn run_test(
    p: &Program,
    i: &TestInput,
    ctx: &MicroArchContext,
    defense: &DefensePolicy,
    pcfg: &PipelineConfig,
    ccfg: &CacheConfig,
) -> Result<RunResult> {
    let layout = Layout::new(p).ok_or_else(|| Error::InvalidProgram("terminator targets a missing block".into()))?;
    if !i.memory.len().is_power_of_two() {
        return Err(Error::InvalidProgram("input memory size must be a power of two".into()));
    }
    ctx.check(ccfg)?;
    let out = sim::Sim::new(&layout, i.regs, i.memory.clone(), ctx.clone(), defense, pcfg, ccfg).run()?;
    let event_streams = out.log.project();
    Ok(RunResult {
        final_ctx: out.ctx,
        log: out.log,
        event_streams,
        committed_instruction_count: out.committed,
        cycles: out.cycles,
        arch: ArchState { regs: out.regs, flags: out.flags, memory: out.memory },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::execute_architectural;
    use crate::defense::{baseline_hooks, cleanup_hooks, invisi_hooks, lfb_hooks, taint_hooks, BugFlag};
    use crate::generator::{generate_inputs, generate_program, GenConfig};
    use crate::isa::{parse_asm, SandboxConfig};

    fn run(src: &str, regs: [u64; 8], policy: &DefensePolicy) -> RunResult {
        let p = parse_asm(src).unwrap();
        let mut i = TestInput::zeroed(&SandboxConfig::default());
        i.regs = regs;
        let c = CacheConfig::default();
        run_test(&p, &i, &MicroArchContext::new(&c), policy, &PipelineConfig::default(), &c).unwrap()
    }

    #[test]
    fn alu_only_program_touches_nothing() {
        let r = run(".bb0:\nMOVI R0, 1\nADD R0, 2\nEXIT", [0; 8], &baseline_hooks());
        assert_eq!(r.final_ctx.resident_lines().count(), 0);
        assert!(r.final_ctx.tlb.is_empty());
        assert!(r.cycles <= 100, "{}", r.cycles);
        assert_eq!(r.arch.regs[0], 3);
        assert_eq!(r.committed_instruction_count, 3);
    }

    #[test]
    fn load_installs_line_and_page() {
        let r = run(".bb0:\nAND R1, 4095\nLOAD.8 R0, [SB + R1]\nEXIT", [0, 0x123, 0, 0, 0, 0, 0, 0], &baseline_hooks());
        let c = CacheConfig::default();
        assert!(r.final_ctx.l1_contains(&c, 0x100));
        assert_eq!(r.final_ctx.tlb, vec![0]);
        assert_eq!(r.event_streams.memory.len(), 1);
        assert_eq!(r.event_streams.memory[0].addr, 0x123);
    }

    #[test]
    fn store_forwards_to_younger_load() {
        let src = ".bb0:\nMOVI R2, 77\nAND R1, 4095\nSTORE.8 [SB + R1], R2\nAND R1, 4095\nLOAD.8 R3, [SB + R1]\nEXIT";
        let r = run(src, [0, 0x40, 0, 0, 0, 0, 0, 0], &baseline_hooks());
        assert_eq!(r.arch.regs[3], 77);
        assert_eq!(r.arch.memory[0x40], 77);
    }

    #[test]
    fn every_fill_follows_miss_and_alloc() {
        let cfg = GenConfig { rng_seed: 5, ..GenConfig::default() };
        let c = CacheConfig::default();
        for s in 0..50 {
            let g = cfg.with_seed(s);
            let p = generate_program(&g);
            for i in generate_inputs(&g, 3) {
                let r = run_test(&p, &i, &MicroArchContext::new(&c), &baseline_hooks(), &PipelineConfig::default(), &c)
                    .unwrap();
                for (n, rec) in r.log.iter().enumerate().filter(|(_, r)| r.kind == LogKind::L1Fill) {
                    let before = &r.log.records[..n];
                    let line = rec.addr;
                    assert!(before.iter().any(|b| b.kind == LogKind::L1Miss && b.addr == line));
                    assert!(before.iter().any(|b| b.kind == LogKind::MshrAlloc && b.addr == line));
                }
                let cycles: Vec<u64> = r.log.iter().map(|r| r.cycle).collect();
                assert!(cycles.windows(2).all(|w| w[0] <= w[1]));
                r.final_ctx.check(&c).unwrap();
            }
        }
    }

    #[test]
    fn architectural_results_match_interpreter_for_all_defenses() {
        let policies = [
            baseline_hooks(),
            invisi_hooks([BugFlag::EvictOnSpecMiss]).unwrap(),
            cleanup_hooks([]).unwrap(),
            taint_hooks([BugFlag::TaintedStoreTlb]).unwrap(),
            lfb_hooks([BugFlag::FirstSpecLoadSafe]).unwrap(),
        ];
        let c = CacheConfig::default();
        for s in 0..60 {
            let g = GenConfig::default().with_seed(1000 + s);
            let p = generate_program(&g);
            for i in generate_inputs(&g, 2) {
                let want = execute_architectural(&p, &i).unwrap();
                let mut ctx = MicroArchContext::new(&c);
                for pol in &policies {
                    let r = run_test(&p, &i, &ctx, pol, &PipelineConfig::default(), &c).unwrap();
                    assert_eq!(r.arch, want, "seed {s} {pol}");
                    ctx = r.final_ctx;
                }
            }
        }
    }

    #[test]
    fn run_is_deterministic() {
        let g = GenConfig::default().with_seed(77);
        let p = generate_program(&g);
        let i = &generate_inputs(&g, 1)[0];
        let c = CacheConfig::default();
        let ctx = MicroArchContext::new(&c);
        let a = run_test(&p, i, &ctx, &baseline_hooks(), &PipelineConfig::default(), &c).unwrap();
        let b = run_test(&p, i, &ctx, &baseline_hooks(), &PipelineConfig::default(), &c).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.final_ctx, b.final_ctx);
    }

    #[test]
    fn corrupt_context_is_rejected() {
        let c = CacheConfig::default();
        let mut ctx = MicroArchContext::new(&c);
        ctx.mshr_state.push(1);
        let p = parse_asm(".bb0:\nEXIT").unwrap();
        let i = TestInput::zeroed(&SandboxConfig::default());
        let e = run_test(&p, &i, &ctx, &baseline_hooks(), &PipelineConfig::default(), &c).unwrap_err();
        assert!(matches!(e, Error::ContextCorrupt(_)));
    }
}
