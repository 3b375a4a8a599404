use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use leakcheck::campaign::{run_campaign, Budget, CampaignConfig};
use leakcheck::contract::ContractId;
use leakcheck::defense::DefenseId;

const PROGRAMS: u64 = 16;
const INPUTS: u64 = 140;

fn config(workers: usize) -> CampaignConfig {
    CampaignConfig {
        seed: 2,
        defense: DefenseId::Baseline,
        contract: Some(ContractId::ct_seq()),
        program_count: PROGRAMS,
        inputs_per_program: INPUTS,
        workers,
        budget: Budget::default(),
        ..CampaignConfig::default()
    }
}

fn campaign(c: &mut Criterion) {
    let parallel = std::thread::available_parallelism().map_or(4, |n| n.get().max(2));
    let mut group = c.benchmark_group("campaign");
    group.sample_size(10);
    group.throughput(Throughput::Elements(PROGRAMS * INPUTS));
    for (label, workers) in [("sequential", 1), ("parallel", parallel)] {
        let cfg = config(workers);
        group.bench_with_input(BenchmarkId::new(label, workers), &cfg, |b, cfg| {
            b.iter(|| run_campaign(cfg).unwrap().stats.test_cases_run)
        });
    }
    group.finish();
}

criterion_group!(benches, campaign);
criterion_main!(benches);
