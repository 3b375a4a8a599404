//! Contract violation detection, validation and triage.

use crate::contract::{ContractId, ContractTrace};
use crate::error::Result;
use crate::generator::TestInput;
use crate::isa::{Program, SandboxConfig};
use crate::trace::{mutrace_diff, MuTrace, TraceDiff};
use crate::uarch::{CacheConfig, DebugLog, Detail, LogKind, LogRecord, MicroArchContext, SquashCause};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Inputs sharing one contract trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivClass {
    pub contract_digest: u64,
    /// Input indices in first-seen order.
    pub members: Vec<usize>,
    /// First member of each distinct microarchitectural trace.
    pub representatives: Vec<usize>,
}

impl EquivClass {
    pub fn violates(&self) -> bool {
        self.representatives.len() > 1
    }
}

/// A pair of inputs flagged by [`detect`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidatePair {
    pub a: usize,
    pub b: usize,
}

/// Groups inputs by full contract trace (digest first, then full compare).
pub fn equivalence_classes(ctraces: &[ContractTrace], mutraces: &[MuTrace]) -> Vec<EquivClass> {
    assert_eq!(ctraces.len(), mutraces.len(), "trace lists must be aligned");
    let mut by_digest: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut classes: Vec<EquivClass> = Vec::new();
    for (i, t) in ctraces.iter().enumerate() {
        let bucket = by_digest.entry(t.hash).or_default();
        match bucket.iter().copied().find(|&c| ctraces[classes[c].members[0]].observations == t.observations) {
            Some(c) => classes[c].members.push(i),
            None => {
                bucket.push(classes.len());
                classes.push(EquivClass { contract_digest: t.hash, members: vec![i], representatives: Vec::new() });
            }
        }
    }
    for c in &mut classes {
        let mut seen: Vec<&[u8]> = Vec::new();
        for &m in &c.members {
            let p = mutraces[m].payload.as_slice();
            if !seen.contains(&p) {
                seen.push(p);
                c.representatives.push(m);
            }
        }
    }
    classes
}

/// One candidate per pair of distinct microarchitectural traces within a
/// class, using the first-seen representative of each trace value.
pub fn detect(ctraces: &[ContractTrace], mutraces: &[MuTrace]) -> Vec<CandidatePair> {
    let mut out = Vec::new();
    for c in equivalence_classes(ctraces, mutraces) {
        let r = &c.representatives;
        for x in 0..r.len() {
            for y in x + 1..r.len() {
                out.push(CandidatePair { a: r[x], b: r[y] });
            }
        }
    }
    out
}

/// Quadratic reference comparator. Returns the smallest member index of
/// every class that contains two inputs with equal contract traces and
/// different microarchitectural traces.
pub fn brute_force_violating_classes(ctraces: &[ContractTrace], mutraces: &[MuTrace]) -> BTreeSet<usize> {
    let n = ctraces.len();
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if ctraces[i].observations == ctraces[j].observations && mutraces[i].payload != mutraces[j].payload {
                let first = (0..n).find(|&k| ctraces[k].observations == ctraces[i].observations).unwrap_or(i);
                out.insert(first);
            }
        }
    }
    out
}

/// Smallest member index of every class [`detect`] reports.
pub fn detected_classes(ctraces: &[ContractTrace], candidates: &[CandidatePair]) -> BTreeSet<usize> {
    candidates
        .iter()
        .map(|c| (0..ctraces.len()).find(|&k| ctraces[k].observations == ctraces[c.a].observations).unwrap_or(c.a))
        .collect()
}

/// A candidate or confirmed contract violation.
#[derive(Debug, Clone)]
pub struct Violation {
    pub program: Program,
    pub contract: ContractId,
    pub index_a: usize,
    pub index_b: usize,
    pub input_a: TestInput,
    pub input_b: TestInput,
    pub ctrace: ContractTrace,
    pub mutrace_a: MuTrace,
    pub mutrace_b: MuTrace,
    pub ctx_a: MicroArchContext,
    pub ctx_b: MicroArchContext,
    pub diff: TraceDiff,
    pub log_a: DebugLog,
    pub log_b: DebugLog,
    pub validated: bool,
    pub signature_tags: Vec<String>,
}

/// Per-input data needed to assemble a [`Violation`].
#[derive(Debug, Clone)]
pub struct Observed<'a> {
    pub index: usize,
    pub input: &'a TestInput,
    pub ctrace: &'a ContractTrace,
    pub mutrace: &'a MuTrace,
    pub ctx: &'a MicroArchContext,
    pub log: &'a DebugLog,
}

impl Violation {
    pub fn new(
        program: &Program,
        contract: ContractId,
        a: Observed<'_>,
        b: Observed<'_>,
        sb: &SandboxConfig,
        ccfg: &CacheConfig,
    ) -> Result<Self> {
        let diff = mutrace_diff(a.mutrace, b.mutrace, sb, ccfg)?;
        Ok(Violation {
            program: program.clone(),
            contract,
            index_a: a.index,
            index_b: b.index,
            input_a: a.input.clone(),
            input_b: b.input.clone(),
            ctrace: a.ctrace.clone(),
            mutrace_a: a.mutrace.clone(),
            mutrace_b: b.mutrace.clone(),
            ctx_a: a.ctx.clone(),
            ctx_b: b.ctx.clone(),
            diff,
            log_a: a.log.clone(),
            log_b: b.log.clone(),
            validated: false,
            signature_tags: Vec::new(),
        })
    }
}

/// Re-runs each input from the other's initial context. The candidate is
/// confirmed only if the traces still differ in both directions.
pub fn validate<F>(v: &mut Violation, mut rerun: F) -> Result<bool>
where
    F: FnMut(&TestInput, &MicroArchContext) -> Result<MuTrace>,
{
    let a_in_b = rerun(&v.input_a, &v.ctx_b)?;
    let b_in_a = rerun(&v.input_b, &v.ctx_a)?;
    v.validated = a_in_b.payload != v.mutrace_b.payload && b_in_a.payload != v.mutrace_a.payload;
    Ok(v.validated)
}

/// One log record as shown in a side-by-side report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowView {
    pub cycle: u64,
    pub kind: LogKind,
    pub pc: Option<u64>,
    pub addr: Option<u64>,
    pub is_store: bool,
    pub speculative: bool,
    pub squashed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideRow {
    pub a: Option<RowView>,
    pub b: Option<RowView>,
    pub differs: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquashView {
    pub cycle: u64,
    pub pc: Option<u64>,
    pub cause: SquashCause,
    pub squashed: u64,
}

/// Aligned memory accesses and stalls of both runs plus their squashes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideBySideReport {
    pub accesses: Vec<SideRow>,
    pub stalls: Vec<SideRow>,
    pub squashes_a: Vec<SquashView>,
    pub squashes_b: Vec<SquashView>,
}

impl SideBySideReport {
    pub fn highlighted(&self) -> impl Iterator<Item = &SideRow> {
        self.accesses.iter().chain(&self.stalls).filter(|r| r.differs)
    }

    pub fn render(&self) -> String {
        let cell = |r: &Option<RowView>| match r {
            None => format!("{:<44}", "-"),
            Some(v) => format!(
                "{:<44}",
                format!(
                    "{:>5} {:?} pc={} addr={}{}{}",
                    v.cycle,
                    v.kind,
                    v.pc.map_or("-".into(), |p| p.to_string()),
                    v.addr.map_or("-".into(), |a| format!("{a:#x}")),
                    if v.speculative { " spec" } else { "" },
                    if v.squashed { " squashed" } else { "" }
                )
            ),
        };
        let mut out = String::from("== memory accesses ==\n");
        for (title, rows) in [("", &self.accesses), ("== stalls ==\n", &self.stalls)] {
            out.push_str(title);
            for r in rows {
                out.push_str(if r.differs { "* " } else { "  " });
                out.push_str(&cell(&r.a));
                out.push_str(" | ");
                out.push_str(cell(&r.b).trim_end());
                out.push('\n');
            }
        }
        for (name, sq) in [("a", &self.squashes_a), ("b", &self.squashes_b)] {
            out.push_str(&format!("== squashes {name} ==\n"));
            for s in sq {
                out.push_str(&format!("{:>5} {:?} pc={:?} squashed={}\n", s.cycle, s.cause, s.pc, s.squashed));
            }
        }
        out
    }
}

fn squash_ranges(log: &DebugLog) -> Vec<(u64, u64)> {
    log.of_kind(LogKind::Squash)
        .filter_map(|r| match r.detail {
            Detail::Squash { until, .. } => Some((r.seq.unwrap_or(until), until)),
            _ => None,
        })
        .collect()
}

fn view(r: &LogRecord, ranges: &[(u64, u64)]) -> RowView {
    let squashed = r.seq.is_some_and(|s| ranges.iter().any(|&(lo, hi)| s >= lo && s < hi));
    RowView {
        cycle: r.cycle,
        kind: r.kind,
        pc: r.pc,
        addr: r.addr,
        is_store: matches!(r.detail, Detail::Mem { is_store: true, .. }),
        speculative: r.speculative,
        squashed,
    }
}

fn align(a: Vec<RowView>, b: Vec<RowView>) -> Vec<SideRow> {
    let n = a.len().max(b.len());
    let mut ia = a.into_iter();
    let mut ib = b.into_iter();
    (0..n)
        .map(|_| {
            let (x, y) = (ia.next(), ib.next());
            let differs = match (&x, &y) {
                (Some(x), Some(y)) => {
                    (x.kind, x.pc, x.addr, x.is_store, x.speculative, x.squashed)
                        != (y.kind, y.pc, y.addr, y.is_store, y.speculative, y.squashed)
                }
                _ => true,
            };
            SideRow { a: x, b: y, differs }
        })
        .collect()
}

fn squashes(log: &DebugLog) -> Vec<SquashView> {
    log.of_kind(LogKind::Squash)
        .filter_map(|r| match r.detail {
            Detail::Squash { cause, until } => {
                Some(SquashView { cycle: r.cycle, pc: r.pc, cause, squashed: until - r.seq.unwrap_or(until) })
            }
            _ => None,
        })
        .collect()
}

pub fn diff_log_pair(log_a: &DebugLog, log_b: &DebugLog) -> SideBySideReport {
    let rows = |log: &DebugLog, stalls: bool| -> Vec<RowView> {
        let ranges = squash_ranges(log);
        log.iter()
            .filter(|r| {
                if stalls {
                    matches!(r.kind, LogKind::MshrStall | LogKind::ExposeStall)
                } else {
                    r.kind == LogKind::Exec && matches!(r.detail, Detail::Mem { .. })
                }
            })
            .map(|r| view(r, &ranges))
            .collect()
    };
    SideBySideReport {
        accesses: align(rows(log_a, false), rows(log_b, false)),
        stalls: align(rows(log_a, true), rows(log_b, true)),
        squashes_a: squashes(log_a),
        squashes_b: squashes(log_b),
    }
}

pub fn diff_logs(v: &Violation) -> SideBySideReport {
    diff_log_pair(&v.log_a, &v.log_b)
}

type Predicate = Box<dyn Fn(&Violation) -> std::result::Result<bool, String> + Send + Sync>;

/// Named predicate over a violation's logs and trace difference.
pub struct SignatureRule {
    pub tag: String,
    pub predicate: Predicate,
}

impl SignatureRule {
    pub fn new(
        tag: impl Into<String>,
        f: impl Fn(&Violation) -> std::result::Result<bool, String> + Send + Sync + 'static,
    ) -> Self {
        SignatureRule { tag: tag.into(), predicate: Box::new(f) }
    }
}

impl std::fmt::Debug for SignatureRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SignatureRule").field("tag", &self.tag).finish()
    }
}

fn two_adjacent(lines: &[u64]) -> bool {
    lines.len() == 2 && lines[1] - lines[0] == 0x40
}

fn count(log: &DebugLog, kind: LogKind) -> usize {
    log.count(kind)
}

fn spec_store_fill(log: &DebugLog, lines: &[u64]) -> bool {
    let stores: BTreeSet<u64> = log
        .iter()
        .filter(|r| r.kind == LogKind::Exec && r.speculative && matches!(r.detail, Detail::Mem { is_store: true, .. }))
        .filter_map(|r| r.seq)
        .collect();
    log.iter().any(|r| {
        r.kind == LogKind::L1Fill
            && r.seq.is_some_and(|s| stores.contains(&s))
            && r.addr.is_some_and(|a| lines.contains(&a))
    })
}

pub fn builtin_rules() -> Vec<SignatureRule> {
    vec![
        SignatureRule::new("SPLIT_REQ_ADJACENT_LINES", |v| {
            let adjacent = two_adjacent(&v.diff.lines_only_a) || two_adjacent(&v.diff.lines_only_b);
            let split = count(&v.log_a, LogKind::SplitReq) + count(&v.log_b, LogKind::SplitReq) > 0;
            Ok(adjacent && split)
        }),
        SignatureRule::new("MSHR_STALL", |v| {
            Ok(count(&v.log_a, LogKind::MshrStall) != count(&v.log_b, LogKind::MshrStall))
        }),
        SignatureRule::new("EXPOSE_STALL", |v| {
            Ok(count(&v.log_a, LogKind::ExposeStall) != count(&v.log_b, LogKind::ExposeStall))
        }),
        SignatureRule::new("SPEC_STORE_FILL", |v| {
            Ok(spec_store_fill(&v.log_a, &v.diff.lines_only_a) || spec_store_fill(&v.log_b, &v.diff.lines_only_b))
        }),
        SignatureRule::new("TLB_ONLY_DIFF", |v| Ok(v.diff.tlb_only())),
        SignatureRule::new("MEMORY_ORDER_SQUASH", |v| {
            let mo = |log: &DebugLog| {
                log.of_kind(LogKind::Squash)
                    .any(|r| matches!(r.detail, Detail::Squash { cause: SquashCause::MemoryOrder, .. }))
            };
            Ok(mo(&v.log_a) || mo(&v.log_b))
        }),
    ]
}

/// Outcome of applying signature rules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignaturePartition {
    pub by_tag: BTreeMap<String, Vec<usize>>,
    pub untagged: Vec<usize>,
    /// (violation index, rule tag, message) for rules that failed.
    pub errors: Vec<(usize, String, String)>,
}

/// Tags each violation with every matching rule. A failing rule is
/// recorded and does not stop the others.
pub fn filter_by_signature(violations: &mut [Violation], rules: &[SignatureRule]) -> SignaturePartition {
    let mut out = SignaturePartition::default();
    for (i, v) in violations.iter_mut().enumerate() {
        for rule in rules {
            match (rule.predicate)(v) {
                Ok(true) => {
                    if !v.signature_tags.contains(&rule.tag) {
                        v.signature_tags.push(rule.tag.clone());
                    }
                    out.by_tag.entry(rule.tag.clone()).or_default().push(i);
                }
                Ok(false) => {}
                Err(e) => out.errors.push((i, rule.tag.clone(), e)),
            }
        }
        if v.signature_tags.is_empty() {
            out.untagged.push(i);
        }
    }
    out
}
