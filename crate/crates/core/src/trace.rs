//! Attacker-visible projections of a simulator run.

use crate::error::{Error, Result};
use crate::isa::SandboxConfig;
use crate::uarch::{reset_line, CacheConfig, MicroArchContext, RunResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MuTraceFormat {
    /// Final L1D and TLB contents.
    L1dTlb,
    /// Final branch predictor tables and history.
    BpState,
    /// Every executed memory access in order, wrong path included.
    MemOrder,
    /// Every fetched conditional branch with its predicted target.
    BranchPredOrder,
}

impl MuTraceFormat {
    pub const ALL: [MuTraceFormat; 4] =
        [MuTraceFormat::L1dTlb, MuTraceFormat::BpState, MuTraceFormat::MemOrder, MuTraceFormat::BranchPredOrder];

    pub fn name(self) -> &'static str {
        match self {
            MuTraceFormat::L1dTlb => "L1D_TLB",
            MuTraceFormat::BpState => "BP_STATE",
            MuTraceFormat::MemOrder => "MEM_ORDER",
            MuTraceFormat::BranchPredOrder => "BRANCH_PRED_ORDER",
        }
    }
}

impl fmt::Display for MuTraceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MuTraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MuTraceFormat::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown trace format `{s}`")))
    }
}

/// Canonical byte encoding of one observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MuTrace {
    pub format: MuTraceFormat,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
}

/// Decoded `L1D_TLB` payload. Lines and pages outside the sandbox never
/// appear; priming lines are visible only as a per-set count, the way a
/// prime+probe attacker sees them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct L1dTlbView {
    pub lines: Vec<u64>,
    pub pages: Vec<u64>,
    pub foreign_per_set: Vec<u8>,
}

impl L1dTlbView {
    pub fn of(ctx: &MicroArchContext, sb: &SandboxConfig, ccfg: &CacheConfig) -> Self {
        let size = sb.size();
        let mut lines: Vec<u64> = ctx.resident_lines().filter(|&l| l < size).collect();
        lines.sort_unstable();
        let sandbox_pages = size.div_ceil(ccfg.page_size);
        let mut pages: Vec<u64> = ctx.tlb.iter().copied().filter(|&p| p < sandbox_pages).collect();
        pages.sort_unstable();
        let foreign_per_set = ctx.l1_tags.iter().map(|set| set.iter().filter(|&&l| l >= size).count() as u8).collect();
        L1dTlbView { lines, pages, foreign_per_set }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * (self.lines.len() + self.pages.len()) + self.foreign_per_set.len());
        out.extend((self.lines.len() as u32).to_le_bytes());
        for l in &self.lines {
            out.extend(l.to_le_bytes());
        }
        out.extend((self.pages.len() as u32).to_le_bytes());
        for p in &self.pages {
            out.extend(p.to_le_bytes());
        }
        out.extend(&self.foreign_per_set);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let lines = cur.list()?;
        let pages = cur.list()?;
        let foreign_per_set = bytes[cur.pos..].to_vec();
        Ok(L1dTlbView { lines, pages, foreign_per_set })
    }

    /// Priming lines still resident. Evictions always take the oldest
    /// priming way first, so a per-set count identifies the lines exactly.
    pub fn priming_lines(&self, sb: &SandboxConfig, ccfg: &CacheConfig) -> BTreeSet<u64> {
        let mut out = BTreeSet::new();
        for (s, &n) in self.foreign_per_set.iter().enumerate() {
            let n = (n as usize).min(ccfg.l1_ways);
            for w in ccfg.l1_ways - n..ccfg.l1_ways {
                out.insert(reset_line(ccfg, sb, s, w));
            }
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s =
            self.bytes.get(self.pos..self.pos + N).ok_or_else(|| Error::Report("malformed L1D_TLB payload".into()))?;
        self.pos += N;
        Ok(s.try_into().expect("slice length checked"))
    }

    fn list(&mut self) -> Result<Vec<u64>> {
        let n = u32::from_le_bytes(self.take::<4>()?) as usize;
        (0..n).map(|_| Ok(u64::from_le_bytes(self.take::<8>()?))).collect()
    }
}

fn put_u64s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = u64>) {
    for v in vals {
        out.extend(v.to_le_bytes());
    }
}

pub fn extract(r: &RunResult, fmt: MuTraceFormat, sb: &SandboxConfig, ccfg: &CacheConfig) -> MuTrace {
    let payload = match fmt {
        MuTraceFormat::L1dTlb => L1dTlbView::of(&r.final_ctx, sb, ccfg).encode(),
        MuTraceFormat::BpState => {
            let bp = &r.final_ctx.bp;
            let mut out = bp.counters.clone();
            for e in &bp.btb {
                match e {
                    Some(e) => {
                        out.push(1);
                        put_u64s(&mut out, [e.pc, e.target]);
                    }
                    None => out.push(0),
                }
            }
            put_u64s(&mut out, [bp.ghr]);
            out
        }
        MuTraceFormat::MemOrder => {
            let mut out = Vec::with_capacity(r.event_streams.memory.len() * 17);
            for m in &r.event_streams.memory {
                put_u64s(&mut out, [m.pc, ccfg.line_of(m.addr)]);
                out.push(u8::from(m.is_store));
            }
            out
        }
        MuTraceFormat::BranchPredOrder => {
            let mut out = Vec::with_capacity(r.event_streams.branches.len() * 16);
            for b in &r.event_streams.branches {
                put_u64s(&mut out, [b.pc, b.predicted_target]);
            }
            out
        }
    };
    MuTrace { format: fmt, payload }
}

pub fn mutrace_equal(a: &MuTrace, b: &MuTrace) -> Result<bool> {
    if a.format != b.format {
        return Err(Error::FormatMismatch(a.format.to_string(), b.format.to_string()));
    }
    Ok(a.payload == b.payload)
}

/// Human-oriented difference between two traces of one format.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceDiff {
    pub lines_only_a: Vec<u64>,
    pub lines_only_b: Vec<u64>,
    pub pages_only_a: Vec<u64>,
    pub pages_only_b: Vec<u64>,
    /// First differing byte offset for formats without a structured view.
    pub first_mismatch: Option<usize>,
}

impl TraceDiff {
    pub fn is_empty(&self) -> bool {
        self.lines_only_a.is_empty()
            && self.lines_only_b.is_empty()
            && self.pages_only_a.is_empty()
            && self.pages_only_b.is_empty()
            && self.first_mismatch.is_none()
    }

    pub fn tlb_only(&self) -> bool {
        self.lines_only_a.is_empty()
            && self.lines_only_b.is_empty()
            && (!self.pages_only_a.is_empty() || !self.pages_only_b.is_empty())
    }
}

fn minus(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> Vec<u64> {
    a.difference(b).copied().collect()
}

pub fn mutrace_diff(a: &MuTrace, b: &MuTrace, sb: &SandboxConfig, ccfg: &CacheConfig) -> Result<TraceDiff> {
    if mutrace_equal(a, b)? {
        return Ok(TraceDiff::default());
    }
    if a.format == MuTraceFormat::L1dTlb {
        let va = L1dTlbView::decode(&a.payload)?;
        let vb = L1dTlbView::decode(&b.payload)?;
        let mut la: BTreeSet<u64> = va.lines.iter().copied().collect();
        la.extend(va.priming_lines(sb, ccfg));
        let mut lb: BTreeSet<u64> = vb.lines.iter().copied().collect();
        lb.extend(vb.priming_lines(sb, ccfg));
        let pa: BTreeSet<u64> = va.pages.iter().copied().collect();
        let pb: BTreeSet<u64> = vb.pages.iter().copied().collect();
        return Ok(TraceDiff {
            lines_only_a: minus(&la, &lb),
            lines_only_b: minus(&lb, &la),
            pages_only_a: minus(&pa, &pb),
            pages_only_b: minus(&pb, &pa),
            first_mismatch: None,
        });
    }
    let first = a.payload.iter().zip(&b.payload).position(|(x, y)| x != y);
    Ok(TraceDiff {
        first_mismatch: Some(first.unwrap_or(a.payload.len().min(b.payload.len()))),
        ..TraceDiff::default()
    })
}
