//! Secure-speculation policies with flag-controlled seeded bugs.
//!
//! Policies are plain data. The simulator consults them at four points:
//! load issue, load commit, squash and store address resolution.

use crate::contract::ContractId;
use crate::error::{Error, Result};
use crate::uarch::ResetPolicy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DefenseId {
    Baseline,
    Invisi,
    Cleanup,
    Taint,
    LfbDelay,
}

impl DefenseId {
    pub const ALL: [DefenseId; 5] =
        [DefenseId::Baseline, DefenseId::Invisi, DefenseId::Cleanup, DefenseId::Taint, DefenseId::LfbDelay];

    pub fn name(self) -> &'static str {
        match self {
            DefenseId::Baseline => "BASELINE",
            DefenseId::Invisi => "INVISI",
            DefenseId::Cleanup => "CLEANUP",
            DefenseId::Taint => "TAINT",
            DefenseId::LfbDelay => "LFB_DELAY",
        }
    }

    /// Bug flags that may be combined with this defense.
    pub fn allowed_bugs(self) -> &'static [BugFlag] {
        match self {
            DefenseId::Baseline => &[],
            DefenseId::Invisi => &[BugFlag::EvictOnSpecMiss, BugFlag::NoMshrPartition],
            DefenseId::Cleanup => &[BugFlag::SkipSpecStoreCleanup, BugFlag::SkipSplitCleanup],
            DefenseId::Taint => &[BugFlag::TaintedStoreTlb],
            DefenseId::LfbDelay => &[BugFlag::FirstSpecLoadSafe],
        }
    }

    pub fn default_contract(self) -> ContractId {
        match self {
            DefenseId::Taint => ContractId::arch_seq(),
            _ => ContractId::ct_seq(),
        }
    }

    pub fn default_reset_policy(self) -> ResetPolicy {
        match self {
            DefenseId::Cleanup | DefenseId::LfbDelay => ResetPolicy::DirectInvalidate,
            _ => ResetPolicy::FillOutsideSandbox,
        }
    }

    pub fn default_sandbox_pages(self) -> u32 {
        match self {
            DefenseId::Taint => 128,
            _ => 1,
        }
    }
}

impl fmt::Display for DefenseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefenseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefenseId::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown defense `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BugFlag {
    /// A speculative miss to a full set evicts the LRU line at request time.
    EvictOnSpecMiss,
    /// Speculative and committed loads share the MSHR pool.
    NoMshrPartition,
    /// Speculative store fills record no undo metadata.
    SkipSpecStoreCleanup,
    /// Split accesses record no undo metadata.
    SkipSplitCleanup,
    /// Stores blocked on a tainted address still fill the TLB.
    TaintedStoreTlb,
    /// A speculative load with no older unsafe load in flight counts as safe.
    FirstSpecLoadSafe,
}

/// Where a cache request gets its data and what it may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessMode {
    /// Installs, evicts, updates LRU and fills the TLB.
    Normal,
    /// Served through the speculative buffer; exposed at commit.
    Invisible,
    /// Installs immediately; `track` records undo metadata.
    Undoable { track: bool },
    /// Held in the line-fill buffer until the load is safe.
    Delayed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DefensePolicy {
    pub id: DefenseId,
    pub bug_flags: BTreeSet<BugFlag>,
    pub target_contract: ContractId,
}

impl DefensePolicy {
    pub fn new(id: DefenseId, bugs: impl IntoIterator<Item = BugFlag>) -> Result<Self> {
        let mut bug_flags: BTreeSet<BugFlag> = bugs.into_iter().collect();
        if id == DefenseId::Invisi {
            bug_flags.insert(BugFlag::NoMshrPartition);
        }
        let p = DefensePolicy { id, bug_flags, target_contract: id.default_contract() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = self.id.allowed_bugs();
        if let Some(b) = self.bug_flags.iter().find(|b| !allowed.contains(b)) {
            return Err(Error::Config(format!("bug flag {b:?} is not valid for {}", self.id)));
        }
        Ok(())
    }

    pub fn has(&self, bug: BugFlag) -> bool {
        self.bug_flags.contains(&bug)
    }

    pub fn with_contract(mut self, c: ContractId) -> Self {
        self.target_contract = c;
        self
    }

    /// Mode for a load's cache requests. `unsafe_spec` already accounts for
    /// any safety exceptions the policy grants.
    pub fn load_mode(&self, unsafe_spec: bool, split: bool) -> AccessMode {
        if !unsafe_spec {
            return AccessMode::Normal;
        }
        match self.id {
            DefenseId::Baseline | DefenseId::Taint => AccessMode::Normal,
            DefenseId::Invisi => AccessMode::Invisible,
            DefenseId::Cleanup => AccessMode::Undoable { track: !(split && self.has(BugFlag::SkipSplitCleanup)) },
            DefenseId::LfbDelay => AccessMode::Delayed,
        }
    }

    /// Mode for the ownership request a store issues once its address is
    /// known. `None` means the store touches no cache state until commit.
    pub fn store_mode(&self, speculative: bool, split: bool) -> Option<AccessMode> {
        if !speculative {
            return Some(AccessMode::Normal);
        }
        match self.id {
            DefenseId::Baseline | DefenseId::Taint => Some(AccessMode::Normal),
            DefenseId::Invisi | DefenseId::LfbDelay => None,
            DefenseId::Cleanup => {
                let skip = self.has(BugFlag::SkipSpecStoreCleanup) || (split && self.has(BugFlag::SkipSplitCleanup));
                Some(AccessMode::Undoable { track: !skip })
            }
        }
    }

    pub fn blocks_tainted(&self) -> bool {
        self.id == DefenseId::Taint
    }
}

impl fmt::Display for DefensePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id)?;
        if !self.bug_flags.is_empty() {
            let names: Vec<String> = self.bug_flags.iter().map(|b| format!("{b:?}")).collect();
            write!(f, "[{}]", names.join(","))?;
        }
        Ok(())
    }
}

pub fn baseline_hooks() -> DefensePolicy {
    DefensePolicy::new(DefenseId::Baseline, []).expect("baseline has no flags")
}

pub fn invisi_hooks(bugs: impl IntoIterator<Item = BugFlag>) -> Result<DefensePolicy> {
    DefensePolicy::new(DefenseId::Invisi, bugs)
}

pub fn cleanup_hooks(bugs: impl IntoIterator<Item = BugFlag>) -> Result<DefensePolicy> {
    DefensePolicy::new(DefenseId::Cleanup, bugs)
}

pub fn taint_hooks(bugs: impl IntoIterator<Item = BugFlag>) -> Result<DefensePolicy> {
    DefensePolicy::new(DefenseId::Taint, bugs)
}

pub fn lfb_hooks(bugs: impl IntoIterator<Item = BugFlag>) -> Result<DefensePolicy> {
    DefensePolicy::new(DefenseId::LfbDelay, bugs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::ContractKind;

    #[test]
    fn flags_are_checked_per_defense() {
        assert!(cleanup_hooks([BugFlag::EvictOnSpecMiss]).is_err());
        assert!(taint_hooks([BugFlag::TaintedStoreTlb]).is_ok());
        assert!(lfb_hooks([BugFlag::SkipSplitCleanup]).is_err());
    }

    #[test]
    fn invisi_always_shares_mshrs() {
        let p = invisi_hooks([]).unwrap();
        assert!(p.has(BugFlag::NoMshrPartition));
        assert!(!p.has(BugFlag::EvictOnSpecMiss));
    }

    #[test]
    fn target_contracts() {
        assert_eq!(taint_hooks([]).unwrap().target_contract.kind, ContractKind::ArchSeq);
        for p in [baseline_hooks(), invisi_hooks([]).unwrap(), cleanup_hooks([]).unwrap(), lfb_hooks([]).unwrap()] {
            assert_eq!(p.target_contract.kind, ContractKind::CtSeq);
        }
    }

    #[test]
    fn modes_follow_flags() {
        let c = cleanup_hooks([BugFlag::SkipSplitCleanup]).unwrap();
        assert_eq!(c.load_mode(true, true), AccessMode::Undoable { track: false });
        assert_eq!(c.load_mode(true, false), AccessMode::Undoable { track: true });
        assert_eq!(c.load_mode(false, true), AccessMode::Normal);
        let s = cleanup_hooks([BugFlag::SkipSpecStoreCleanup]).unwrap();
        assert_eq!(s.store_mode(true, false), Some(AccessMode::Undoable { track: false }));
        assert_eq!(invisi_hooks([]).unwrap().store_mode(true, false), None);
        assert_eq!(baseline_hooks().load_mode(true, false), AccessMode::Normal);
    }

    #[test]
    fn names_parse() {
        for d in DefenseId::ALL {
            assert_eq!(d.name().parse::<DefenseId>().unwrap(), d);
        }
        assert!("nope".parse::<DefenseId>().is_err());
        let json = serde_json::to_string(&BugFlag::EvictOnSpecMiss).unwrap();
        assert_eq!(json, "\"EVICT_ON_SPEC_MISS\"");
    }
}
