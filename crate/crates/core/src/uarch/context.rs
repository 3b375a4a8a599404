use super::config::CacheConfig;
use crate::error::{Error, Result};
use crate::isa::SandboxConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const GSHARE_ENTRIES: usize = 1024;
pub const BTB_ENTRIES: usize = 64;
pub const HISTORY_BITS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BtbEntry {
    pub pc: u64,
    pub target: u64,
}

/// gshare direction predictor, direct-mapped BTB and global history.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchPredictor {
    pub counters: Vec<u8>,
    pub btb: Vec<Option<BtbEntry>>,
    pub ghr: u64,
}

impl Default for BranchPredictor {
    fn default() -> Self {
        BranchPredictor { counters: vec![1; GSHARE_ENTRIES], btb: vec![None; BTB_ENTRIES], ghr: 0 }
    }
}

impl BranchPredictor {
    pub fn index(pc: u64, ghr: u64) -> usize {
        ((pc ^ ghr) as usize) & (GSHARE_ENTRIES - 1)
    }

    pub fn predict_taken(&self, pc: u64, ghr: u64) -> bool {
        self.counters[Self::index(pc, ghr)] >= 2
    }

    pub fn btb_target(&self, pc: u64) -> Option<u64> {
        self.btb[pc as usize % BTB_ENTRIES].filter(|e| e.pc == pc).map(|e| e.target)
    }

    pub fn btb_update(&mut self, pc: u64, target: u64) {
        self.btb[pc as usize % BTB_ENTRIES] = Some(BtbEntry { pc, target });
    }

    pub fn train(&mut self, pc: u64, ghr: u64, taken: bool) {
        let c = &mut self.counters[Self::index(pc, ghr)];
        *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
    }

    pub fn push_history(ghr: u64, taken: bool) -> u64 {
        ((ghr << 1) | u64::from(taken)) & ((1 << HISTORY_BITS) - 1)
    }
}

/// How the cache hierarchy is reset between test cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResetPolicy {
    FillOutsideSandbox,
    DirectInvalidate,
}

/// Complete microarchitectural state carried between test cases.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MicroArchContext {
    /// Per-set resident lines, least recently used first.
    pub l1_tags: Vec<Vec<u64>>,
    /// Resident page numbers, least recently used first.
    pub tlb: Vec<u64>,
    pub bp: BranchPredictor,
    /// PCs whose loads are predicted to alias an older store.
    pub mdp: BTreeMap<u64, bool>,
    /// Outstanding misses; always empty between tests.
    pub mshr_state: Vec<u64>,
}

impl MicroArchContext {
    pub fn new(ccfg: &CacheConfig) -> Self {
        MicroArchContext {
            l1_tags: vec![Vec::new(); ccfg.l1_sets],
            tlb: Vec::new(),
            bp: BranchPredictor::default(),
            mdp: BTreeMap::new(),
            mshr_state: Vec::new(),
        }
    }

    pub fn check(&self, ccfg: &CacheConfig) -> Result<()> {
        if self.l1_tags.len() != ccfg.l1_sets {
            return Err(Error::ContextCorrupt(format!(
                "context has {} sets, config expects {}",
                self.l1_tags.len(),
                ccfg.l1_sets
            )));
        }
        for (s, set) in self.l1_tags.iter().enumerate() {
            if set.len() > ccfg.l1_ways {
                return Err(Error::ContextCorrupt(format!("set {s} holds {} lines", set.len())));
            }
            if set.iter().any(|&l| ccfg.set_of(l) != s || l % ccfg.line_size != 0) {
                return Err(Error::ContextCorrupt(format!("set {s} holds a misplaced line")));
            }
        }
        if self.tlb.len() > ccfg.tlb_entries {
            return Err(Error::ContextCorrupt("tlb over capacity".into()));
        }
        if self.bp.counters.len() != GSHARE_ENTRIES || self.bp.btb.len() != BTB_ENTRIES {
            return Err(Error::ContextCorrupt("branch predictor tables have the wrong size".into()));
        }
        if !self.mshr_state.is_empty() {
            return Err(Error::ContextCorrupt("outstanding misses between tests".into()));
        }
        Ok(())
    }

    pub fn l1_contains(&self, ccfg: &CacheConfig, line: u64) -> bool {
        self.l1_tags[ccfg.set_of(line)].contains(&line)
    }

    pub fn l1_set_full(&self, ccfg: &CacheConfig, line: u64) -> bool {
        self.l1_tags[ccfg.set_of(line)].len() >= ccfg.l1_ways
    }

    /// Moves a resident line to the MRU position. Returns false if absent.
    pub fn l1_touch(&mut self, ccfg: &CacheConfig, line: u64) -> bool {
        let set = &mut self.l1_tags[ccfg.set_of(line)];
        match set.iter().position(|&l| l == line) {
            Some(p) => {
                let l = set.remove(p);
                set.push(l);
                true
            }
            None => false,
        }
    }

    /// Installs `line` as MRU, returning the evicted victim if the set was full.
    pub fn l1_install(&mut self, ccfg: &CacheConfig, line: u64) -> Option<u64> {
        if self.l1_touch(ccfg, line) {
            return None;
        }
        let set = &mut self.l1_tags[ccfg.set_of(line)];
        let victim = (set.len() >= ccfg.l1_ways).then(|| set.remove(0));
        set.push(line);
        victim
    }

    pub fn l1_evict_lru(&mut self, ccfg: &CacheConfig, line: u64) -> Option<u64> {
        let set = &mut self.l1_tags[ccfg.set_of(line)];
        (!set.is_empty()).then(|| set.remove(0))
    }

    pub fn l1_remove(&mut self, ccfg: &CacheConfig, line: u64) -> bool {
        let set = &mut self.l1_tags[ccfg.set_of(line)];
        match set.iter().position(|&l| l == line) {
            Some(p) => {
                set.remove(p);
                true
            }
            None => false,
        }
    }

    /// Puts `line` back at the LRU position if there is room.
    pub fn l1_reinstate_lru(&mut self, ccfg: &CacheConfig, line: u64) -> bool {
        let set = &mut self.l1_tags[ccfg.set_of(line)];
        if set.len() >= ccfg.l1_ways || set.contains(&line) {
            return false;
        }
        set.insert(0, line);
        true
    }

    pub fn tlb_contains(&self, page: u64) -> bool {
        self.tlb.contains(&page)
    }

    /// Looks up `page`, filling it on a miss. Returns true on a fill.
    pub fn tlb_access(&mut self, ccfg: &CacheConfig, page: u64) -> bool {
        if let Some(p) = self.tlb.iter().position(|&x| x == page) {
            let v = self.tlb.remove(p);
            self.tlb.push(v);
            return false;
        }
        if self.tlb.len() >= ccfg.tlb_entries {
            self.tlb.remove(0);
        }
        self.tlb.push(page);
        true
    }

    pub fn resident_lines(&self) -> impl Iterator<Item = u64> + '_ {
        self.l1_tags.iter().flatten().copied()
    }
}

/// Address of the priming line for (`set`, `way`). Ways live in distinct
/// regions above the sandbox so every priming line maps to its own set.
pub fn reset_line(ccfg: &CacheConfig, sb: &SandboxConfig, set: usize, way: usize) -> u64 {
    let stride = (2 * sb.size()).max(0x10000);
    let base = stride * (way as u64 + 1) + 0x3000;
    let sets = ccfg.l1_sets as u64;
    let base_set = (base / ccfg.line_size) % sets;
    let k = (set as u64 + sets - base_set) % sets;
    base + k * ccfg.line_size
}

/// Returns a copy of `ctx` with caches reset per `policy`. Predictor state
/// is carried over unchanged.
pub fn reset_context(
    ctx: &MicroArchContext,
    policy: ResetPolicy,
    sb: &SandboxConfig,
    ccfg: &CacheConfig,
) -> MicroArchContext {
    let mut out = ctx.clone();
    out.mshr_state.clear();
    out.l1_tags = vec![Vec::new(); ccfg.l1_sets];
    match policy {
        ResetPolicy::FillOutsideSandbox => {
            for (s, set) in out.l1_tags.iter_mut().enumerate() {
                *set = (0..ccfg.l1_ways).map(|w| reset_line(ccfg, sb, s, w)).collect();
            }
            let sandbox_pages = sb.size() / ccfg.page_size;
            out.tlb.retain(|&p| p >= sandbox_pages);
        }
        ResetPolicy::DirectInvalidate => out.tlb.clear(),
    }
    out
}

pub fn snapshot_context(ctx: &MicroArchContext) -> MicroArchContext {
    ctx.clone()
}

pub fn restore_context(snapshot: &MicroArchContext) -> MicroArchContext {
    snapshot.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_primes_every_set_outside_sandbox() {
        let c = CacheConfig::default();
        let sb = SandboxConfig::default();
        let ctx = reset_context(&MicroArchContext::new(&c), ResetPolicy::FillOutsideSandbox, &sb, &c);
        let lines: Vec<u64> = ctx.resident_lines().collect();
        assert_eq!(lines.len(), 512);
        assert!(lines.iter().all(|&l| l >= sb.size()));
        let mut uniq = lines.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 512);
        ctx.check(&c).unwrap();
    }

    #[test]
    fn priming_lines_follow_documented_layout() {
        let c = CacheConfig::default();
        let sb = SandboxConfig::default();
        assert_eq!(reset_line(&c, &sb, 0x28, 0), 0x13a00);
        assert_eq!(reset_line(&c, &sb, 0x04, 0), 0x13100);
        let big = SandboxConfig::new(128);
        assert!(reset_line(&c, &big, 0, 0) >= big.size());
    }

    #[test]
    fn invalidate_empties_caches_and_keeps_predictors() {
        let c = CacheConfig::default();
        let mut ctx = MicroArchContext::new(&c);
        ctx.l1_install(&c, 0x40);
        ctx.tlb_access(&c, 0);
        ctx.bp.train(3, 0, true);
        ctx.mdp.insert(5, true);
        for policy in [ResetPolicy::DirectInvalidate, ResetPolicy::FillOutsideSandbox] {
            let r = reset_context(&ctx, policy, &SandboxConfig::default(), &c);
            assert_eq!(r.bp, ctx.bp);
            assert_eq!(r.mdp, ctx.mdp);
            assert!(!r.tlb_contains(0));
            assert!(!r.l1_contains(&c, 0x40));
        }
        let r = reset_context(&ctx, ResetPolicy::DirectInvalidate, &SandboxConfig::default(), &c);
        assert_eq!(r.resident_lines().count(), 0);
    }

    #[test]
    fn lru_install_evicts_oldest() {
        let c = CacheConfig { l1_ways: 2, ..CacheConfig::default() };
        let mut ctx = MicroArchContext::new(&c);
        let stride = c.l1_sets as u64 * 64;
        assert_eq!(ctx.l1_install(&c, 0), None);
        assert_eq!(ctx.l1_install(&c, stride), None);
        ctx.l1_touch(&c, 0);
        assert_eq!(ctx.l1_install(&c, 2 * stride), Some(stride));
        assert!(ctx.l1_remove(&c, 0));
        assert!(ctx.l1_reinstate_lru(&c, stride));
        assert_eq!(ctx.l1_tags[0], vec![stride, 2 * stride]);
    }

    #[test]
    fn snapshot_round_trip() {
        let c = CacheConfig::default();
        let ctx =
            reset_context(&MicroArchContext::new(&c), ResetPolicy::FillOutsideSandbox, &SandboxConfig::default(), &c);
        assert_eq!(restore_context(&snapshot_context(&ctx)), ctx);
        assert_eq!(snapshot_context(&ctx), snapshot_context(&ctx));
    }

    #[test]
    fn gshare_counters_saturate() {
        let mut bp = BranchPredictor::default();
        assert!(!bp.predict_taken(10, 0));
        bp.train(10, 0, true);
        assert!(bp.predict_taken(10, 0));
        for _ in 0..5 {
            bp.train(10, 0, true);
        }
        assert_eq!(bp.counters[10], 3);
        assert_eq!(BranchPredictor::push_history(0x3ff, true), 0x3ff);
    }
}
