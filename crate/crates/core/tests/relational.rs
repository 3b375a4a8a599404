use leakcheck::contract::{ContractTrace, ObsKind, Observation};
use leakcheck::relational::{brute_force_violating_classes, detect, detected_classes, equivalence_classes};
use leakcheck::trace::{MuTrace, MuTraceFormat};
use proptest::prelude::*;

fn ctrace(id: u8) -> ContractTrace {
    ContractTrace::new(vec![Observation { kind: ObsKind::Pc, value: u64::from(id) }])
}

fn mutrace(id: u8) -> MuTrace {
    MuTrace { format: MuTraceFormat::MemOrder, payload: vec![id] }
}

fn traces(labels: &[(u8, u8)]) -> (Vec<ContractTrace>, Vec<MuTrace>) {
    labels.iter().map(|&(c, m)| (ctrace(c), mutrace(m))).unzip()
}

proptest! {
    #[test]
    fn detect_matches_brute_force(labels in prop::collection::vec((0u8..5, 0u8..4), 0..60)) {
        let (c, m) = traces(&labels);
        let candidates = detect(&c, &m);
        prop_assert_eq!(detected_classes(&c, &candidates), brute_force_violating_classes(&c, &m));
    }

    #[test]
    fn candidates_pair_distinct_traces_within_a_class(labels in prop::collection::vec((0u8..3, 0u8..3), 0..40)) {
        let (c, m) = traces(&labels);
        for p in detect(&c, &m) {
            prop_assert!(p.a < p.b);
            prop_assert_eq!(&c[p.a].observations, &c[p.b].observations);
            prop_assert_ne!(&m[p.a].payload, &m[p.b].payload);
        }
    }

    #[test]
    fn classes_partition_the_batch(labels in prop::collection::vec((0u8..6, 0u8..2), 0..50)) {
        let (c, m) = traces(&labels);
        let mut seen: Vec<usize> = equivalence_classes(&c, &m).into_iter().flat_map(|k| k.members).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
    }
}

#[test]
fn k_distinct_traces_give_k_choose_2_candidates() {
    let labels: Vec<(u8, u8)> = (0..12).map(|i| (0, i % 4)).collect();
    let (c, m) = traces(&labels);
    assert_eq!(detect(&c, &m).len(), 6);
}

#[test]
fn classes_without_partners_are_never_flagged() {
    let (c, m) = traces(&[(0, 0), (1, 1), (2, 2), (3, 3)]);
    assert!(detect(&c, &m).is_empty());
    assert!(brute_force_violating_classes(&c, &m).is_empty());
}
