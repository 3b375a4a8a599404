use leakcheck::contract::{collect_contract_trace, ContractId};
use leakcheck::generator::{generate_inputs, generate_program, mutate_preserving_contract, GenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn mutants_keep_the_contract_trace() {
    for contract in [ContractId::ct_seq(), ContractId::ct_cond(), ContractId::arch_seq()] {
        let mut changed = 0;
        for seed in 0..40u64 {
            let gen = GenConfig::default().with_seed(seed);
            let p = generate_program(&gen);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in generate_inputs(&gen, 5) {
                let m = mutate_preserving_contract(&p, &i, contract, &mut rng).unwrap();
                assert_eq!(
                    collect_contract_trace(&p, &m.input, contract).unwrap(),
                    collect_contract_trace(&p, &i, contract).unwrap(),
                    "{contract} seed {seed}"
                );
                changed += usize::from(m.input != i);
            }
        }
        assert!(changed > 150, "{contract}: only {changed} of 200 mutants differ from their source");
    }
}

#[test]
fn ct_seq_mutants_vary_registers_the_contract_never_observes() {
    // R3 only feeds a store value, which CT_SEQ does not observe.
    let p = leakcheck::isa::parse_asm(".bb0:\nAND R1, 4095\nSTORE.8 [SB + R1], R3\nEXIT").unwrap();
    let gen = GenConfig::default().with_seed(7);
    let i = generate_inputs(&gen, 1).remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let distinct: std::collections::BTreeSet<u64> = (0..16)
        .map(|_| mutate_preserving_contract(&p, &i, ContractId::ct_seq(), &mut rng).unwrap().input.regs[3])
        .collect();
    assert!(distinct.len() > 8);
}
