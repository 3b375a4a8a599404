//! Hand-written leak gadgets with pinned inputs and expected outcomes.

use crate::campaign::{run_batch_from, Preset, Target};
use crate::contract::{collect_contract_trace, ContractId};
use crate::defense::{BugFlag, DefenseId, DefensePolicy};
use crate::error::Result;
use crate::generator::TestInput;
use crate::isa::{parse_asm, validate_program, Program, SandboxConfig};
use crate::relational::Violation;
use crate::trace::MuTraceFormat;
use crate::uarch::CacheConfig;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Violates,
    Clean,
}

/// One configuration a gadget is checked under.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub defense: DefenseId,
    pub bugs: Vec<BugFlag>,
    pub contract: ContractId,
    pub preset: Preset,
    pub format: MuTraceFormat,
    pub expected: Expectation,
    /// Signature tag a confirmed violation must carry.
    pub tag: Option<&'static str>,
}

impl Scenario {
    fn new(defense: DefenseId, bugs: &[BugFlag], contract: ContractId, expected: Expectation) -> Self {
        Scenario {
            defense,
            bugs: bugs.to_vec(),
            contract,
            preset: Preset::Default,
            format: MuTraceFormat::L1dTlb,
            expected,
            tag: None,
        }
    }

    fn preset(mut self, p: Preset) -> Self {
        self.preset = p;
        self
    }

    fn format(mut self, f: MuTraceFormat) -> Self {
        self.format = f;
        self
    }

    fn tag(mut self, t: &'static str) -> Self {
        self.tag = Some(t);
        self
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.defense)?;
        if !self.bugs.is_empty() {
            write!(f, "{:?}", self.bugs)?;
        }
        write!(f, " {} {} {}", self.contract, self.preset, self.format)
    }
}

#[derive(Debug, Clone)]
pub struct Gadget {
    pub name: &'static str,
    pub source: &'static str,
    pub program: Program,
    pub sandbox_pages: u32,
    /// L2 presence seed the inputs were chosen against.
    pub l2_seed: u64,
    /// Contract under which every input pair has equal traces.
    pub contract: ContractId,
    pub input_pairs: Vec<(TestInput, TestInput)>,
    pub scenarios: Vec<Scenario>,
}

/// Result of running one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub candidates: u64,
    pub confirmed: Vec<Violation>,
    pub violates: bool,
}

impl Gadget {
    pub fn sandbox(&self) -> SandboxConfig {
        SandboxConfig::new(self.sandbox_pages)
    }

    pub fn target(&self, s: &Scenario) -> Result<Target> {
        let defense = DefensePolicy::new(s.defense, s.bugs.iter().copied())?.with_contract(s.contract);
        let mut t = Target::new(defense, s.contract, s.format);
        t.sandbox = self.sandbox();
        t.cache = s.preset.overlay().apply(&CacheConfig { l2_seed: self.l2_seed, ..CacheConfig::default() });
        Ok(t)
    }

    /// Runs every input pair from identical fresh contexts.
    pub fn evaluate(&self, s: &Scenario) -> Result<ScenarioOutcome> {
        let t = self.target(s)?;
        let ctx = t.reset(&t.initial_context());
        let mut out = ScenarioOutcome { candidates: 0, confirmed: Vec::new(), violates: false };
        for (a, b) in &self.input_pairs {
            let batch = run_batch_from(&t, &self.program, &[a.clone(), b.clone()], &[ctx.clone(), ctx.clone()])?;
            out.candidates += batch.candidates;
            out.confirmed.extend(batch.confirmed);
        }
        out.violates = out.confirmed.iter().any(|v| s.tag.is_none_or(|tag| v.signature_tags.iter().any(|t| t == tag)));
        Ok(out)
    }

    fn check_pairs(&self) -> Result<bool> {
        for (a, b) in &self.input_pairs {
            if collect_contract_trace(&self.program, a, self.contract)?
                != collect_contract_trace(&self.program, b, self.contract)?
            {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn input(pages: u32, regs: &[(usize, u64)], mem: &[(u64, u64)]) -> TestInput {
    let mut i = TestInput::zeroed(&SandboxConfig::new(pages));
    for &(r, v) in regs {
        i.regs[r] = v;
    }
    for &(a, v) in mem {
        i.memory[a as usize..a as usize + 8].copy_from_slice(&v.to_le_bytes());
    }
    i
}

/// Register and memory overrides for one side of a pair.
type Side<'a> = (&'a [(usize, u64)], &'a [(u64, u64)]);

fn pair(pages: u32, regs: &[(usize, u64)], mem: &[(u64, u64)], a: Side<'_>, b: Side<'_>) -> (TestInput, TestInput) {
    let side = |(r, m): Side<'_>| input(pages, &[regs, r].concat(), &[mem, m].concat());
    (side(a), side(b))
}

const SLOW: u64 = 0x400;

fn build(
    name: &'static str,
    source: &'static str,
    sandbox_pages: u32,
    contract: ContractId,
    input_pairs: Vec<(TestInput, TestInput)>,
    scenarios: Vec<Scenario>,
) -> Gadget {
    let program = parse_asm(source).unwrap_or_else(|e| panic!("gadget {name}: {e}"));
    let report = validate_program(&program, &SandboxConfig::new(sandbox_pages));
    assert!(report.is_ok(), "gadget {name}: {report}");
    let g = Gadget { name, source, program, sandbox_pages, l2_seed: 0, contract, input_pairs, scenarios };
    assert!(g.check_pairs().unwrap_or(false), "gadget {name}: input pair contract traces differ");
    g
}

pub fn corpus() -> Vec<Gadget> {
    use BugFlag::*;
    use DefenseId::*;
    use Expectation::*;
    let ct_seq = ContractId::ct_seq();
    let ct_cond = ContractId::ct_cond();
    let arch_seq = ContractId::arch_seq();
    let s = Scenario::new;
    vec![
        build(
            "V1_CACHE",
            include_str!("../gadgets/v1_cache.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(1, SLOW)], &[(SLOW, 1)], (&[(2, 0x100)], &[]), (&[(2, 0xa00)], &[]))],
            vec![
                s(Baseline, &[], ct_seq, Violates),
                s(Baseline, &[], ct_seq, Violates).format(MuTraceFormat::MemOrder),
                s(Baseline, &[], ct_cond, Clean),
                s(Invisi, &[], ct_seq, Clean),
                s(Cleanup, &[], ct_seq, Clean),
                s(LfbDelay, &[], ct_seq, Clean),
            ],
        ),
        build(
            "V1_BRANCH",
            include_str!("../gadgets/v1_branch.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(1, SLOW), (2, 0x100)], &[(SLOW, 1)], (&[], &[(0x100, 0)]), (&[], &[(0x100, 1)]))],
            vec![
                s(Baseline, &[], ct_seq, Violates).format(MuTraceFormat::BranchPredOrder),
                s(Baseline, &[], ct_seq, Violates).format(MuTraceFormat::BpState),
                s(Baseline, &[], ct_cond, Clean).format(MuTraceFormat::BranchPredOrder),
            ],
        ),
        build(
            "V4_BYPASS",
            include_str!("../gadgets/v4_bypass.asm"),
            1,
            ct_cond,
            vec![pair(1, &[(5, 0x48), (2, 0x40)], &[(0x48, 0x40)], (&[], &[(0x40, 0x100)]), (&[], &[(0x40, 0x200)]))],
            vec![
                s(Baseline, &[], ct_cond, Violates).tag("MEMORY_ORDER_SQUASH"),
                s(Baseline, &[], ct_seq, Violates).tag("MEMORY_ORDER_SQUASH"),
                s(Invisi, &[], ct_cond, Clean),
            ],
        ),
        build(
            "UV1_EVICT",
            include_str!("../gadgets/uv1_evict.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(0, 1)], &[], (&[(1, 0x100)], &[]), (&[(1, 0xa00)], &[]))],
            vec![s(Invisi, &[EvictOnSpecMiss], ct_seq, Violates), s(Invisi, &[], ct_seq, Clean)],
        ),
        build(
            "UV2_MSHR",
            include_str!("../gadgets/uv2_mshr.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(1, SLOW), (5, 0x800)], &[(SLOW, 1)], (&[(2, 0xd00)], &[]), (&[(2, 0x900)], &[]))],
            vec![
                s(Invisi, &[], ct_seq, Violates).preset(Preset::TinyMshr).tag("EXPOSE_STALL"),
                s(Invisi, &[], ct_seq, Clean),
            ],
        ),
        build(
            "UV3_SPEC_STORE",
            include_str!("../gadgets/uv3_spec_store.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(1, SLOW), (3, 5)], &[(SLOW, 1)], (&[(2, 0x100)], &[]), (&[(2, 0x200)], &[]))],
            vec![
                s(Cleanup, &[SkipSpecStoreCleanup], ct_seq, Violates).tag("SPEC_STORE_FILL"),
                s(Cleanup, &[], ct_seq, Clean),
            ],
        ),
        build(
            "UV4_SPLIT",
            include_str!("../gadgets/uv4_split.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(1, SLOW)], &[(SLOW, 1)], (&[(2, 0x13e)], &[]), (&[(2, 0x23e)], &[]))],
            vec![
                s(Cleanup, &[SkipSplitCleanup], ct_seq, Violates).tag("SPLIT_REQ_ADJACENT_LINES"),
                s(Cleanup, &[], ct_seq, Clean),
            ],
        ),
        build(
            "UV5_REORDER",
            include_str!("../gadgets/uv5_reorder.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(1, SLOW)], &[(SLOW, 0x800), (0x800, 1)], (&[(2, 0x800)], &[]), (&[(2, 0x900)], &[]))],
            vec![s(Cleanup, &[], ct_seq, Violates), s(Invisi, &[], ct_seq, Clean), s(LfbDelay, &[], ct_seq, Clean)],
        ),
        build(
            "UV6_FIRST_LOAD",
            include_str!("../gadgets/uv6_first_load.asm"),
            1,
            ct_seq,
            vec![pair(1, &[(1, SLOW)], &[(SLOW, 1)], (&[(2, 0x100)], &[]), (&[(2, 0x200)], &[]))],
            vec![
                s(LfbDelay, &[FirstSpecLoadSafe], ct_seq, Violates),
                s(LfbDelay, &[FirstSpecLoadSafe], arch_seq, Clean),
                s(LfbDelay, &[], ct_seq, Clean),
            ],
        ),
        build(
            "KV3_TLB_STORE",
            include_str!("../gadgets/kv3_tlb_store.asm"),
            128,
            arch_seq,
            vec![pair(
                128,
                &[(1, SLOW), (2, 0x880)],
                &[(SLOW, 1)],
                (&[], &[(0x880, 0x9000)]),
                (&[], &[(0x880, 0xd000)]),
            )],
            vec![s(Taint, &[TaintedStoreTlb], arch_seq, Violates).tag("TLB_ONLY_DIFF"), s(Taint, &[], arch_seq, Clean)],
        ),
    ]
}

pub fn by_name(name: &str) -> Option<Gadget> {
    corpus().into_iter().find(|g| g.name.eq_ignore_ascii_case(name))
}
