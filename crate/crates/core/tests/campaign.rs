use leakcheck::campaign::{
    replay, run_batch, run_campaign, write_outputs, Budget, CampaignConfig, CampaignStats, Mode, ViolationReport,
};
use leakcheck::contract::ContractId;
use leakcheck::defense::DefenseId;
use leakcheck::gadgets;

fn baseline(cases: u64) -> CampaignConfig {
    CampaignConfig {
        seed: 2,
        defense: DefenseId::Baseline,
        contract: Some(ContractId::ct_seq()),
        budget: Budget { max_test_cases: Some(cases), max_violations: None },
        ..CampaignConfig::default()
    }
}

fn without_time(s: &CampaignStats) -> CampaignStats {
    CampaignStats { wall_time_secs: 0.0, throughput: 0.0, time_to_first_confirmed_secs: None, ..s.clone() }
}

#[test]
fn stats_account_for_every_test_case() {
    let out = run_campaign(&baseline(1000)).unwrap();
    let s = &out.stats;
    assert_eq!(s.test_cases_run, 1000);
    assert_eq!(s.test_cases_run, out.programs.iter().map(|p| p.test_cases).sum::<u64>());
    assert_eq!(s.programs_run, out.programs.len() as u64);
    assert!(s.confirmed_violations <= s.candidates);
    assert_eq!(s.confirmed_violations + s.invalidated_candidates, s.candidates);
    assert_eq!(s.confirmed_violations, out.reports.len() as u64);
    assert!(out.programs.windows(2).all(|w| w[0].index < w[1].index));
}

#[test]
fn single_worker_reruns_are_identical() {
    let cfg = baseline(1400);
    let a = run_campaign(&cfg).unwrap();
    let b = run_campaign(&cfg).unwrap();
    assert_eq!(without_time(&a.stats), without_time(&b.stats));
    assert_eq!(a.programs, b.programs);
    let json = |o: &leakcheck::campaign::CampaignOutcome| -> Vec<String> {
        o.reports.iter().map(|r| r.to_json().unwrap()).collect()
    };
    assert_eq!(json(&a), json(&b));
}

#[test]
fn parallel_results_are_ordered_by_program() {
    let one = run_campaign(&baseline(2800)).unwrap();
    let many = run_campaign(&CampaignConfig { workers: 4, ..baseline(2800) }).unwrap();
    assert_eq!(one.programs, many.programs);
    assert_eq!(one.reports, many.reports);
}

#[test]
fn violation_budget_stops_after_the_batch_that_reaches_it() {
    let cfg = CampaignConfig { budget: Budget { max_test_cases: None, max_violations: Some(1) }, ..baseline(0) };
    let out = run_campaign(&cfg).unwrap();
    assert!(out.stats.confirmed_violations >= 1);
    let last = out.programs.last().unwrap();
    assert!(last.confirmed >= 1);
    assert_eq!(out.programs.iter().filter(|p| p.confirmed > 0).count(), 1);
}

#[test]
fn reports_round_trip_and_replay() {
    let cfg = baseline(700);
    let out = run_campaign(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(dir.path(), &cfg, &out).unwrap();
    assert_eq!(paths.len(), out.reports.len() + 1);
    assert!(dir.path().join("summary.json").exists());
    for (path, report) in paths.iter().zip(&out.reports) {
        let loaded = ViolationReport::load(path).unwrap();
        assert_eq!(&loaded, report);
        assert!(replay(&loaded).unwrap().holds());
    }
}

#[test]
fn naive_and_opt_both_confirm_uv1() {
    let g = gadgets::by_name("UV1_EVICT").unwrap();
    let s = g.scenarios.iter().find(|s| s.expected == gadgets::Expectation::Violates).unwrap();
    let t = g.target(s).unwrap();
    let (a, b) = &g.input_pairs[0];
    for mode in [Mode::Opt, Mode::Naive] {
        let batch = run_batch(&t, &g.program, &[a.clone(), b.clone()], mode, 3).unwrap();
        assert_eq!(batch.confirmed.len(), 1, "{mode:?}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for text in ["program_count = 0", "inputs_per_program = 0", "workers = 0", "boost_fraction = 2.0", "color = 1"] {
        assert!(CampaignConfig::from_toml_str(text).is_err(), "{text}");
    }
    let bad_flag = "defense = \"BASELINE\"\nbug_flags = [\"EVICT_ON_SPEC_MISS\"]";
    assert!(CampaignConfig::from_toml_str(bad_flag).is_err());
}
