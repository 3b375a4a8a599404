use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Core timing parameters. All latencies are in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub rob_size: usize,
    pub fetch_width: usize,
    pub issue_width: usize,
    pub commit_width: usize,
    pub load_hit_latency: u64,
    pub l2_hit_latency: u64,
    pub mem_latency: u64,
    pub branch_resolve_latency: u64,
    pub store_addr_resolve_latency: u64,
    pub drain_after_last_commit: u64,
    pub cycle_cap: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rob_size: 64,
            fetch_width: 2,
            issue_width: 2,
            commit_width: 2,
            load_hit_latency: 2,
            l2_hit_latency: 20,
            mem_latency: 100,
            branch_resolve_latency: 6,
            store_addr_resolve_latency: 12,
            drain_after_last_commit: 0,
            cycle_cap: 1_000_000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let lat = [
            self.load_hit_latency,
            self.l2_hit_latency,
            self.mem_latency,
            self.branch_resolve_latency,
            self.store_addr_resolve_latency,
        ];
        if lat.contains(&0) {
            return Err(Error::Config("all latencies must be >= 1".into()));
        }
        if self.rob_size < 8 {
            return Err(Error::Config("rob_size must be >= 8".into()));
        }
        if self.fetch_width == 0 || self.issue_width == 0 || self.commit_width == 0 {
            return Err(Error::Config("pipeline widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// L1D, TLB and L2-presence parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub line_size: u64,
    pub l1_sets: usize,
    pub l1_ways: usize,
    pub mshr_count: usize,
    pub tlb_entries: usize,
    pub page_size: u64,
    pub l2_hit_probability: f64,
    pub l2_seed: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            line_size: 64,
            l1_sets: 64,
            l1_ways: 8,
            mshr_count: 256,
            tlb_entries: 64,
            page_size: 4096,
            l2_hit_probability: 0.5,
            l2_seed: 0,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.line_size.is_power_of_two() || !self.page_size.is_power_of_two() {
            return Err(Error::Config("line and page sizes must be powers of two".into()));
        }
        if !self.l1_sets.is_power_of_two() || self.l1_ways == 0 || self.l1_ways > 64 {
            return Err(Error::Config("l1_sets must be a power of two and l1_ways in 1..=64".into()));
        }
        if self.mshr_count == 0 || self.tlb_entries == 0 {
            return Err(Error::Config("mshr_count and tlb_entries must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.l2_hit_probability) {
            return Err(Error::Config("l2_hit_probability must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn capacity(&self) -> u64 {
        self.l1_sets as u64 * self.l1_ways as u64 * self.line_size
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr & !(self.line_size - 1)
    }

    pub fn set_of(&self, line: u64) -> usize {
        ((line / self.line_size) % self.l1_sets as u64) as usize
    }

    pub fn page_of(&self, addr: u64) -> u64 {
        addr / self.page_size
    }

    /// Deterministic "line present in L2" predicate.
    pub fn l2_present(&self, line: u64) -> bool {
        let h = splitmix64(self.l2_seed ^ splitmix64(line));
        (h as f64) < self.l2_hit_probability * (u64::MAX as f64)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_geometry() {
        let c = CacheConfig::default();
        assert_eq!(c.capacity(), 32 * 1024);
        assert_eq!(c.mshr_count, 256);
        let p = PipelineConfig::default();
        assert_eq!((p.rob_size, p.fetch_width, p.store_addr_resolve_latency), (64, 2, 12));
        assert!(p.validate().is_ok() && c.validate().is_ok());
    }

    #[test]
    fn l2_predicate_is_stable_and_balanced() {
        let c = CacheConfig { l2_seed: 7, ..CacheConfig::default() };
        let hits = (0..4096u64).filter(|l| c.l2_present(l * 64)).count();
        assert!((1700..2400).contains(&hits), "{hits}");
        assert_eq!(c.l2_present(0x3500), c.l2_present(0x3500));
        let always = CacheConfig { l2_hit_probability: 1.0, ..c };
        assert!((0..100u64).all(|l| always.l2_present(l * 64)));
        let never = CacheConfig { l2_hit_probability: 0.0, ..c };
        assert!((0..100u64).all(|l| !never.l2_present(l * 64)));
    }

    #[test]
    fn zero_latency_rejected() {
        let p = PipelineConfig { mem_latency: 0, ..PipelineConfig::default() };
        assert!(p.validate().is_err());
    }
}
