//! Random programs, random inputs and contract-preserving input mutation.

use crate::contract::{collect_contract_trace, contract_footprint, ContractId};
use crate::error::{Error, Result};
use crate::isa::{
    AluOp, BasicBlock, BlockId, Cond, Instruction, Operand, Program, Reg, SandboxConfig, Terminator, Width,
};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Opcode {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Movi,
    Cmp,
    Cmov,
    Load,
    Store,
    Jcc,
    Jmp,
}

impl Opcode {
    pub const ALL: [Opcode; 12] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Movi,
        Opcode::Cmp,
        Opcode::Cmov,
        Opcode::Load,
        Opcode::Store,
        Opcode::Jcc,
        Opcode::Jmp,
    ];
    const COMPUTE: [Opcode; 8] =
        [Opcode::Add, Opcode::Sub, Opcode::And, Opcode::Or, Opcode::Xor, Opcode::Movi, Opcode::Cmp, Opcode::Cmov];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub rng_seed: u64,
    pub max_blocks: usize,
    pub max_body_len: usize,
    /// Relative weights. Memory opcodes only split the memory share between
    /// loads and stores; `Jcc`/`Jmp` pick non-final block terminators.
    pub opcode_weights: BTreeMap<Opcode, u32>,
    pub mem_op_fraction: f64,
    pub sandbox: SandboxConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        let opcode_weights = [
            (Opcode::Add, 3),
            (Opcode::Sub, 3),
            (Opcode::And, 2),
            (Opcode::Or, 2),
            (Opcode::Xor, 2),
            (Opcode::Movi, 2),
            (Opcode::Cmp, 4),
            (Opcode::Cmov, 2),
            (Opcode::Load, 3),
            (Opcode::Store, 2),
            (Opcode::Jcc, 4),
            (Opcode::Jmp, 1),
        ]
        .into_iter()
        .collect();
        GenConfig {
            rng_seed: 0,
            max_blocks: 5,
            max_body_len: 12,
            opcode_weights,
            mem_op_fraction: 0.4,
            sandbox: SandboxConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.max_blocks) {
            return Err(Error::Config("max_blocks must be in 1..=5".into()));
        }
        if self.max_body_len < 2 {
            return Err(Error::Config("max_body_len must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.mem_op_fraction) {
            return Err(Error::Config("mem_op_fraction must be in [0, 1]".into()));
        }
        if self.opcode_weights.values().all(|&w| w == 0) {
            return Err(Error::Config("at least one opcode weight must be positive".into()));
        }
        Ok(())
    }

    fn weight(&self, op: Opcode) -> u32 {
        self.opcode_weights.get(&op).copied().unwrap_or(0)
    }

    pub fn with_seed(&self, seed: u64) -> GenConfig {
        GenConfig { rng_seed: seed, ..self.clone() }
    }
}

/// Initial architectural state: registers plus the sandbox memory image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestInput {
    pub regs: [u64; Reg::COUNT],
    #[serde(with = "hex_bytes")]
    pub memory: Vec<u8>,
}

impl TestInput {
    pub fn zeroed(sb: &SandboxConfig) -> Self {
        TestInput { regs: [0; Reg::COUNT], memory: vec![0; sb.size() as usize] }
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const PROGRAM_STREAM: u64 = 1;
const INPUT_STREAM: u64 = 2;

fn random_reg(rng: &mut impl Rng) -> Reg {
    Reg::new(rng.gen_range(0..Reg::COUNT as u8)).expect("in range")
}

fn random_imm(rng: &mut impl Rng) -> u64 {
    match rng.gen_range(0..4) {
        0 => rng.gen(),
        1 => rng.gen_range(0..4096),
        _ => rng.gen_range(0..16),
    }
}

fn random_operand(rng: &mut impl Rng) -> Operand {
    if rng.gen_bool(0.5) {
        Operand::Reg(random_reg(rng))
    } else {
        Operand::Imm(random_imm(rng))
    }
}

fn random_cond(rng: &mut impl Rng) -> Cond {
    Cond::ALL[rng.gen_range(0..Cond::ALL.len())]
}

fn pick(cfg: &GenConfig, ops: &[Opcode], rng: &mut impl Rng) -> Option<Opcode> {
    let weights: Vec<u32> = ops.iter().map(|&o| cfg.weight(o)).collect();
    WeightedIndex::new(&weights).ok().map(|d| ops[d.sample(rng)])
}

fn compute_instruction(op: Opcode, rng: &mut impl Rng) -> Instruction {
    let mut alu = |op| Instruction::Alu { op, dst: random_reg(rng), src: random_operand(rng) };
    match op {
        Opcode::Add => alu(AluOp::Add),
        Opcode::Sub => alu(AluOp::Sub),
        Opcode::And => alu(AluOp::And),
        Opcode::Or => alu(AluOp::Or),
        Opcode::Xor => alu(AluOp::Xor),
        Opcode::Movi => Instruction::Movi { dst: random_reg(rng), imm: random_imm(rng) },
        Opcode::Cmp => Instruction::Cmp { lhs: random_reg(rng), rhs: random_operand(rng) },
        _ => Instruction::Cmov { cond: random_cond(rng), dst: random_reg(rng), src: random_operand(rng) },
    }
}

/// Generates a valid program as a deterministic function of `cfg`.
pub fn generate_program(cfg: &GenConfig) -> Program {
    let mut rng = rng_for(cfg.rng_seed, PROGRAM_STREAM);
    let n_blocks = rng.gen_range(1..=cfg.max_blocks.clamp(1, 5));
    let mask = cfg.sandbox.mask();
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let slots = rng.gen_range(1..=(cfg.max_body_len / 2).max(1));
        let mut body = Vec::new();
        for _ in 0..slots {
            let room = cfg.max_body_len - body.len();
            if room == 0 {
                break;
            }
            let mem = room >= 2 && rng.gen_bool(cfg.mem_op_fraction);
            let mem_op = if mem { pick(cfg, &[Opcode::Load, Opcode::Store], &mut rng) } else { None };
            match mem_op {
                Some(op) => {
                    let offset = random_reg(&mut rng);
                    let width = Width::ALL[rng.gen_range(0..4)];
                    body.push(Instruction::Alu { op: AluOp::And, dst: offset, src: Operand::Imm(mask) });
                    body.push(if op == Opcode::Load {
                        Instruction::Load { dst: random_reg(&mut rng), offset, width }
                    } else {
                        Instruction::Store { src: random_reg(&mut rng), offset, width }
                    });
                }
                None => {
                    let op = pick(cfg, &Opcode::COMPUTE, &mut rng).unwrap_or(Opcode::Movi);
                    body.push(compute_instruction(op, &mut rng));
                }
            }
        }
        let terminator = if b + 1 == n_blocks {
            Terminator::Exit
        } else {
            let target = |rng: &mut ChaCha8Rng| BlockId(rng.gen_range(b + 1..n_blocks) as u32);
            match pick(cfg, &[Opcode::Jcc, Opcode::Jmp], &mut rng) {
                Some(Opcode::Jcc) => {
                    let taken = target(&mut rng);
                    let fallthrough = BlockId(b as u32 + 1);
                    Terminator::Branch { cond: random_cond(&mut rng), taken, fallthrough }
                }
                _ => Terminator::Jump(target(&mut rng)),
            }
        };
        blocks.push(BasicBlock { id: BlockId(b as u32), body, terminator });
    }
    Program { blocks, entry: BlockId(0) }
}

/// Generates `n` independent random inputs, deterministic per seed.
pub fn generate_inputs(cfg: &GenConfig, n: usize) -> Vec<TestInput> {
    let mut rng = rng_for(cfg.rng_seed, INPUT_STREAM);
    (0..n).map(|_| random_input(&cfg.sandbox, &mut rng)).collect()
}

pub fn random_input(sb: &SandboxConfig, rng: &mut impl RngCore) -> TestInput {
    let mut regs = [0u64; Reg::COUNT];
    for r in &mut regs {
        *r = rng.next_u64();
    }
    let mut memory = vec![0u8; sb.size() as usize];
    rng.fill_bytes(&mut memory);
    TestInput { regs, memory }
}

/// Result of [`mutate_preserving_contract`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub input: TestInput,
    pub attempts: u32,
    /// True when every attempt failed verification and the original input
    /// was returned unchanged.
    pub fell_back: bool,
}

pub const MUTATION_ATTEMPTS: u32 = 8;

/// Re-randomizes the parts of `i` that the contract trace does not depend
/// on and verifies the trace is unchanged. Early attempts also perturb a
/// random subset of the bytes the trace did read; later attempts back off.
pub fn mutate_preserving_contract(
    p: &Program,
    i: &TestInput,
    contract: ContractId,
    rng: &mut impl RngCore,
) -> Result<Mutation> {
    let (trace, fp) = contract_footprint(p, i, contract)?;
    for attempt in 0..MUTATION_ATTEMPTS {
        let p_used = match attempt {
            0..=5 => 0.5f64.powi(attempt as i32 + 1),
            _ => 0.0,
        };
        let mut regs = i.regs;
        for (k, r) in regs.iter_mut().enumerate() {
            let draw = rng.next_u64();
            if !fp.regs[k] || coin(rng, p_used) {
                *r = draw;
            }
        }
        let mut memory = vec![0u8; i.memory.len()];
        rng.fill_bytes(&mut memory);
        for &a in &fp.memory {
            if !coin(rng, p_used) {
                memory[a as usize] = i.memory[a as usize];
            }
        }
        let candidate = TestInput { regs, memory };
        if collect_contract_trace(p, &candidate, contract)? == trace {
            return Ok(Mutation { input: candidate, attempts: attempt + 1, fell_back: false });
        }
    }
    Ok(Mutation { input: i.clone(), attempts: MUTATION_ATTEMPTS, fell_back: true })
}

fn coin(rng: &mut impl RngCore, p: f64) -> bool {
    p > 0.0 && (rng.next_u64() as f64 / u64::MAX as f64) < p
}
