//! Campaign orchestration: batched execution, validation, stats and reports.

use crate::contract::{collect_contract_trace, ContractId, ContractTrace};
use crate::defense::{BugFlag, DefenseId, DefensePolicy};
use crate::error::{Error, Result};
use crate::generator::{generate_inputs, generate_program, mutate_preserving_contract, GenConfig, TestInput};
use crate::isa::{parse_asm, render_asm, Program, SandboxConfig};
use crate::par::Workers;
use crate::relational::{
    builtin_rules, detect, diff_log_pair, filter_by_signature, validate, Observed, SideBySideReport, Violation,
};
use crate::trace::{extract, MuTrace, MuTraceFormat, TraceDiff};
use crate::uarch::{
    reset_context, run_test, splitmix64, CacheConfig, Detail, LogKind, LogRecord, MicroArchContext, PipelineConfig,
    ResetPolicy, RunResult,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// Fresh simulator per input, with a simulated startup cost.
    Naive,
    /// One simulator per program; predictors carry over between inputs.
    #[default]
    Opt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Preset {
    #[default]
    Default,
    SmallCache,
    TinyMshr,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Default, Preset::SmallCache, Preset::TinyMshr];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "DEFAULT",
            Preset::SmallCache => "SMALL_CACHE",
            Preset::TinyMshr => "TINY_MSHR",
        }
    }

    pub fn overlay(self) -> CacheOverlay {
        match self {
            Preset::Default => CacheOverlay { l1_ways: Some(8), mshr_count: Some(256) },
            Preset::SmallCache => CacheOverlay { l1_ways: Some(2), mshr_count: None },
            Preset::TinyMshr => CacheOverlay { l1_ways: Some(2), mshr_count: Some(2) },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Cache fields a preset overrides; `None` keeps the base value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheOverlay {
    pub l1_ways: Option<usize>,
    pub mshr_count: Option<usize>,
}

impl CacheOverlay {
    pub fn apply(&self, base: &CacheConfig) -> CacheConfig {
        CacheConfig {
            l1_ways: self.l1_ways.unwrap_or(base.l1_ways),
            mshr_count: self.mshr_count.unwrap_or(base.mshr_count),
            ..*base
        }
    }
}

pub fn amplification_preset(name: &str) -> Result<CacheOverlay> {
    Ok(name.parse::<Preset>()?.overlay())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_test_cases: Option<u64>,
    pub max_violations: Option<u64>,
}

/// Everything that determines how one test case is run and observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub defense: DefensePolicy,
    pub contract: ContractId,
    pub format: MuTraceFormat,
    pub reset_policy: ResetPolicy,
    pub sandbox: SandboxConfig,
    pub pipeline: PipelineConfig,
    pub cache: CacheConfig,
}

impl Target {
    pub fn new(defense: DefensePolicy, contract: ContractId, format: MuTraceFormat) -> Self {
        let id = defense.id;
        Target {
            defense,
            contract,
            format,
            reset_policy: id.default_reset_policy(),
            sandbox: SandboxConfig::new(id.default_sandbox_pages()),
            pipeline: PipelineConfig::default(),
            cache: CacheConfig::default(),
        }
    }

    /// Context every program starts from.
    pub fn initial_context(&self) -> MicroArchContext {
        MicroArchContext::new(&self.cache)
    }

    /// Applies the reset policy to `ctx`, keeping predictor state.
    pub fn reset(&self, ctx: &MicroArchContext) -> MicroArchContext {
        reset_context(ctx, self.reset_policy, &self.sandbox, &self.cache)
    }

    pub fn run(&self, p: &Program, i: &TestInput, ctx: &MicroArchContext) -> Result<RunResult> {
        run_test(p, i, ctx, &self.defense, &self.pipeline, &self.cache)
    }

    pub fn observe(&self, r: &RunResult) -> MuTrace {
        extract(r, self.format, &self.sandbox, &self.cache)
    }

    pub fn contract_trace(&self, p: &Program, i: &TestInput) -> Result<ContractTrace> {
        collect_contract_trace(p, i, self.contract)
    }
}

/// Results of running one program on a batch of inputs.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub test_cases: u64,
    pub candidates: u64,
    pub invalidated: u64,
    pub confirmed: Vec<Violation>,
}

struct Executed {
    ctx: MicroArchContext,
    result: RunResult,
    mutrace: MuTrace,
}

fn burn_startup(target: &Target, runs: u32) -> Result<()> {
    if runs == 0 {
        return Ok(());
    }
    let empty = parse_asm(".bb0:\nEXIT")?;
    let input = TestInput::zeroed(&target.sandbox);
    let mut ctx = target.initial_context();
    for _ in 0..runs {
        // Each empty test takes the same reset, run and trace path as a real one.
        let r = target.run(&empty, &input, &target.reset(&ctx))?;
        std::hint::black_box(target.observe(&r));
        ctx = r.final_ctx;
    }
    Ok(())
}

/// Runs `p` on every input, then detects and validates violations.
///
/// `Opt` threads one context through the batch, resetting caches before
/// each input. `Naive` starts every input from a fresh context after
/// `startup_runs` empty simulations.
pub fn run_batch(target: &Target, p: &Program, inputs: &[TestInput], mode: Mode, startup_runs: u32) -> Result<Batch> {
    let mut ctx = target.initial_context();
    let mut runs = Vec::with_capacity(inputs.len());
    for i in inputs {
        let init = match mode {
            Mode::Opt => target.reset(&ctx),
            Mode::Naive => {
                burn_startup(target, startup_runs)?;
                target.reset(&target.initial_context())
            }
        };
        let result = target.run(p, i, &init)?;
        let mutrace = target.observe(&result);
        if mode == Mode::Opt {
            ctx = result.final_ctx.clone();
        }
        runs.push(Executed { ctx: init, result, mutrace });
    }
    let ctraces = inputs.iter().map(|i| target.contract_trace(p, i)).collect::<Result<Vec<_>>>()?;
    let mutraces: Vec<MuTrace> = runs.iter().map(|r| r.mutrace.clone()).collect();
    analyze(target, p, inputs, &ctraces, &mutraces, &runs)
}

fn analyze(
    target: &Target,
    p: &Program,
    inputs: &[TestInput],
    ctraces: &[ContractTrace],
    mutraces: &[MuTrace],
    runs: &[Executed],
) -> Result<Batch> {
    let mut batch = Batch { test_cases: inputs.len() as u64, ..Batch::default() };
    let observed = |k: usize| Observed {
        index: k,
        input: &inputs[k],
        ctrace: &ctraces[k],
        mutrace: &mutraces[k],
        ctx: &runs[k].ctx,
        log: &runs[k].result.log,
    };
    for c in detect(ctraces, mutraces) {
        batch.candidates += 1;
        let mut v = Violation::new(p, target.contract, observed(c.a), observed(c.b), &target.sandbox, &target.cache)?;
        if validate(&mut v, |i, ctx| Ok(target.observe(&target.run(p, i, ctx)?)))? {
            batch.confirmed.push(v);
        } else {
            batch.invalidated += 1;
        }
    }
    filter_by_signature(&mut batch.confirmed, &builtin_rules());
    Ok(batch)
}

/// Runs each input of a batch from an explicitly given initial context
/// instead of threading one through. Used by gadgets and tests that pin
/// contexts.
pub fn run_batch_from(
    target: &Target,
    p: &Program,
    inputs: &[TestInput],
    contexts: &[MicroArchContext],
) -> Result<Batch> {
    assert_eq!(inputs.len(), contexts.len(), "inputs and contexts must be aligned");
    let mut runs = Vec::with_capacity(inputs.len());
    for (i, ctx) in inputs.iter().zip(contexts) {
        let result = target.run(p, i, ctx)?;
        let mutrace = target.observe(&result);
        runs.push(Executed { ctx: ctx.clone(), result, mutrace });
    }
    let ctraces = inputs.iter().map(|i| target.contract_trace(p, i)).collect::<Result<Vec<_>>>()?;
    let mutraces: Vec<MuTrace> = runs.iter().map(|r| r.mutrace.clone()).collect();
    analyze(target, p, inputs, &ctraces, &mutraces, &runs)
}

/// Campaign configuration, read from TOML. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub program_count: u64,
    pub inputs_per_program: u64,
    /// Defaults to the defense's target contract.
    pub contract: Option<ContractId>,
    pub defense: DefenseId,
    pub bug_flags: Vec<BugFlag>,
    pub format: MuTraceFormat,
    pub preset: Preset,
    /// Defaults to the defense's reset policy.
    pub reset_policy: Option<ResetPolicy>,
    /// Defaults to 128 for TAINT and 1 otherwise.
    pub sandbox_pages: Option<u32>,
    pub workers: usize,
    pub mode: Mode,
    /// Empty simulations charged per input in `NAIVE` mode.
    pub naive_startup_runs: u32,
    /// Share of each batch produced by contract-preserving mutation.
    pub boost_fraction: f64,
    pub output_dir: Option<PathBuf>,
    pub budget: Budget,
    pub generator: GenConfig,
    pub pipeline: PipelineConfig,
    pub cache: CacheConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            seed: 0,
            program_count: 200,
            inputs_per_program: 140,
            contract: None,
            defense: DefenseId::Baseline,
            bug_flags: Vec::new(),
            format: MuTraceFormat::L1dTlb,
            preset: Preset::Default,
            reset_policy: None,
            sandbox_pages: None,
            workers: 1,
            mode: Mode::Opt,
            naive_startup_runs: 200,
            boost_fraction: 0.5,
            output_dir: None,
            budget: Budget::default(),
            generator: GenConfig::default(),
            pipeline: PipelineConfig::default(),
            cache: CacheConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: CampaignConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.program_count == 0 || self.inputs_per_program == 0 || self.workers == 0 {
            return Err(Error::Config("program_count, inputs_per_program and workers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.boost_fraction) {
            return Err(Error::Config("boost_fraction must be in [0, 1]".into()));
        }
        self.generator.validate()?;
        self.target()?;
        Ok(())
    }

    pub fn contract(&self) -> ContractId {
        self.contract.unwrap_or_else(|| self.defense.default_contract())
    }

    pub fn target(&self) -> Result<Target> {
        let contract = self.contract();
        contract.validate()?;
        let defense = DefensePolicy::new(self.defense, self.bug_flags.iter().copied())?.with_contract(contract);
        let mut cache = self.preset.overlay().apply(&self.cache);
        cache.l2_seed ^= self.seed;
        cache.validate()?;
        self.pipeline.validate()?;
        Ok(Target {
            defense,
            contract,
            format: self.format,
            reset_policy: self.reset_policy.unwrap_or_else(|| self.defense.default_reset_policy()),
            sandbox: SandboxConfig::new(self.sandbox_pages.unwrap_or_else(|| self.defense.default_sandbox_pages())),
            pipeline: self.pipeline,
            cache,
        })
    }

    pub fn program_seed(&self, index: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(index.wrapping_add(1)))
    }
}

/// Base inputs followed by contract-preserving mutants of them. Returns the
/// inputs and the number of mutations that fell back to their source.
pub fn batch_inputs(
    gen: &GenConfig,
    p: &Program,
    contract: ContractId,
    n: usize,
    boost_fraction: f64,
) -> Result<(Vec<TestInput>, u64)> {
    let boosted = ((n as f64 * boost_fraction).floor() as usize).min(n.saturating_sub(1));
    let base_n = n - boosted;
    let mut inputs = generate_inputs(&gen.with_seed(splitmix64(gen.rng_seed ^ 0x1)), base_n);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(gen.rng_seed ^ 0x2));
    let mut fallbacks = 0;
    for j in 0..boosted {
        let m = mutate_preserving_contract(p, &inputs[j % base_n], contract, &mut rng)?;
        fallbacks += u64::from(m.fell_back);
        inputs.push(m.input);
    }
    Ok((inputs, fallbacks))
}

/// Self-contained record of one confirmed violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub version: u32,
    pub program_index: u64,
    pub program_seed: u64,
    pub program_asm: String,
    pub target: Target,
    pub index_a: usize,
    pub index_b: usize,
    pub input_a: TestInput,
    pub input_b: TestInput,
    pub ctx_a: MicroArchContext,
    pub ctx_b: MicroArchContext,
    pub contract_trace: ContractTrace,
    pub mutrace_a: MuTrace,
    pub mutrace_b: MuTrace,
    pub diff: TraceDiff,
    pub validated: bool,
    pub signature_tags: Vec<String>,
    pub log_excerpt_a: Vec<LogRecord>,
    pub log_excerpt_b: Vec<LogRecord>,
}

fn excerpt(log: &crate::uarch::DebugLog) -> Vec<LogRecord> {
    log.iter()
        .filter(|r| match r.kind {
            LogKind::Exec => matches!(r.detail, Detail::Mem { .. }),
            LogKind::Squash
            | LogKind::MshrStall
            | LogKind::ExposeStall
            | LogKind::SplitReq
            | LogKind::Cleanup
            | LogKind::Expose => true,
            _ => false,
        })
        .cloned()
        .collect()
}

impl ViolationReport {
    pub fn new(v: &Violation, target: &Target, program_index: u64, program_seed: u64) -> Self {
        ViolationReport {
            version: REPORT_VERSION,
            program_index,
            program_seed,
            program_asm: render_asm(&v.program),
            target: target.clone(),
            index_a: v.index_a,
            index_b: v.index_b,
            input_a: v.input_a.clone(),
            input_b: v.input_b.clone(),
            ctx_a: v.ctx_a.clone(),
            ctx_b: v.ctx_b.clone(),
            contract_trace: v.ctrace.clone(),
            mutrace_a: v.mutrace_a.clone(),
            mutrace_b: v.mutrace_b.clone(),
            diff: v.diff.clone(),
            validated: v.validated,
            signature_tags: v.signature_tags.clone(),
            log_excerpt_a: excerpt(&v.log_a),
            log_excerpt_b: excerpt(&v.log_b),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ViolationReport = serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))?;
        if r.version != REPORT_VERSION {
            return Err(Error::Report(format!("unsupported report version {}", r.version)));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn rerun(&self) -> Result<(Violation, bool)> {
        let t = &self.target;
        let p = parse_asm(&self.program_asm)?;
        let ra = t.run(&p, &self.input_a, &self.ctx_a)?;
        let rb = t.run(&p, &self.input_b, &self.ctx_b)?;
        let (ma, mb) = (t.observe(&ra), t.observe(&rb));
        let ca = t.contract_trace(&p, &self.input_a)?;
        let cb = t.contract_trace(&p, &self.input_b)?;
        let reproduced = ma == self.mutrace_a && mb == self.mutrace_b && ca == cb && ca == self.contract_trace;
        let side = |index, input, ctrace, mutrace, ctx, log| Observed { index, input, ctrace, mutrace, ctx, log };
        let v = Violation::new(
            &p,
            t.contract,
            side(self.index_a, &self.input_a, &ca, &ma, &self.ctx_a, &ra.log),
            side(self.index_b, &self.input_b, &cb, &mb, &self.ctx_b, &rb.log),
            &t.sandbox,
            &t.cache,
        )?;
        Ok((v, reproduced))
    }
}

/// Outcome of re-running a report end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    /// Both traces and the shared contract trace match the report.
    pub reproduced: bool,
    pub validated: bool,
}

impl ReplayOutcome {
    pub fn holds(&self) -> bool {
        self.reproduced && self.validated
    }
}

pub fn replay(report: &ViolationReport) -> Result<ReplayOutcome> {
    let (mut v, reproduced) = report.rerun()?;
    let t = &report.target;
    let p = v.program.clone();
    let validated = validate(&mut v, |i, ctx| Ok(t.observe(&t.run(&p, i, ctx)?)))?;
    Ok(ReplayOutcome { reproduced, validated })
}

pub fn diff_report(report: &ViolationReport) -> Result<SideBySideReport> {
    let (v, _) = report.rerun()?;
    Ok(diff_log_pair(&v.log_a, &v.log_b))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub programs_run: u64,
    pub test_cases_run: u64,
    pub candidates: u64,
    pub confirmed_violations: u64,
    pub invalidated_candidates: u64,
    pub mutation_fallbacks: u64,
    pub wall_time_secs: f64,
    /// Test cases per second.
    pub throughput: f64,
    pub time_to_first_confirmed_secs: Option<f64>,
    pub test_cases_to_first_confirmed: Option<u64>,
    pub tags: BTreeMap<String, u64>,
}

/// Per-program summary, ordered by program index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub index: u64,
    pub seed: u64,
    pub test_cases: u64,
    pub candidates: u64,
    pub confirmed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub stats: CampaignStats,
    pub programs: Vec<ProgramRecord>,
    pub reports: Vec<ViolationReport>,
}

struct ProgramOutcome {
    record: ProgramRecord,
    fallbacks: u64,
    reports: Vec<ViolationReport>,
}

fn run_program(cfg: &CampaignConfig, target: &Target, index: u64, n: u64) -> Result<ProgramOutcome> {
    let seed = cfg.program_seed(index);
    let gen = GenConfig { sandbox: target.sandbox, ..cfg.generator.with_seed(seed) };
    let p = generate_program(&gen);
    let (inputs, fallbacks) = batch_inputs(&gen, &p, target.contract, n as usize, cfg.boost_fraction)?;
    let batch = run_batch(target, &p, &inputs, cfg.mode, cfg.naive_startup_runs)?;
    let reports: Vec<ViolationReport> =
        batch.confirmed.iter().map(|v| ViolationReport::new(v, target, index, seed)).collect();
    Ok(ProgramOutcome {
        record: ProgramRecord {
            index,
            seed,
            test_cases: batch.test_cases,
            candidates: batch.candidates,
            confirmed: reports.len() as u64,
        },
        fallbacks,
        reports,
    })
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignOutcome> {
    cfg.validate()?;
    let target = cfg.target()?;
    let workers = Workers::new(cfg.workers);
    let max_cases = cfg.budget.max_test_cases.unwrap_or(u64::MAX);
    let max_violations = cfg.budget.max_violations.unwrap_or(u64::MAX);
    let chunk = (cfg.workers as u64 * 4).max(1);
    let start = Instant::now();
    let mut out = CampaignOutcome { stats: CampaignStats::default(), programs: Vec::new(), reports: Vec::new() };
    let mut next = 0u64;
    'outer: while next < cfg.program_count {
        let jobs: Vec<(u64, u64)> = (next..cfg.program_count.min(next + chunk))
            .map(|k| (k, max_cases.saturating_sub(k * cfg.inputs_per_program).min(cfg.inputs_per_program)))
            .filter(|&(_, n)| n > 0)
            .collect();
        if jobs.is_empty() {
            break;
        }
        next += chunk;
        let results = workers.map(jobs, |(k, n)| run_program(cfg, &target, k, n));
        for r in results {
            let r = r?;
            let s = &mut out.stats;
            s.programs_run += 1;
            s.test_cases_run += r.record.test_cases;
            s.candidates += r.record.candidates;
            s.confirmed_violations += r.record.confirmed;
            s.invalidated_candidates += r.record.candidates - r.record.confirmed;
            s.mutation_fallbacks += r.fallbacks;
            if r.record.confirmed > 0 && s.test_cases_to_first_confirmed.is_none() {
                s.test_cases_to_first_confirmed = Some(s.test_cases_run);
                s.time_to_first_confirmed_secs = Some(start.elapsed().as_secs_f64());
            }
            for rep in &r.reports {
                for t in &rep.signature_tags {
                    *s.tags.entry(t.clone()).or_default() += 1;
                }
            }
            out.programs.push(r.record);
            out.reports.extend(r.reports);
            if out.stats.confirmed_violations >= max_violations {
                break 'outer;
            }
        }
    }
    let s = &mut out.stats;
    s.wall_time_secs = start.elapsed().as_secs_f64();
    s.throughput = if s.wall_time_secs > 0.0 { s.test_cases_run as f64 / s.wall_time_secs } else { 0.0 };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub version: u32,
    pub config: CampaignConfig,
    pub stats: CampaignStats,
    pub programs: Vec<ProgramRecord>,
    pub reports: Vec<String>,
}

/// Writes one JSON file per violation plus `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &CampaignConfig, outcome: &CampaignOutcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    let mut paths = Vec::new();
    let mut per_program: BTreeMap<u64, usize> = BTreeMap::new();
    for r in &outcome.reports {
        let k = per_program.entry(r.program_index).or_default();
        let name = format!("violation-{:05}-{:03}.json", r.program_index, k);
        *k += 1;
        let path = dir.join(&name);
        std::fs::write(&path, r.to_json()?)?;
        names.push(name);
        paths.push(path);
    }
    let summary = CampaignSummary {
        version: REPORT_VERSION,
        config: cfg.clone(),
        stats: outcome.stats.clone(),
        programs: outcome.programs.clone(),
        reports: names,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Report(e.to_string()))?;
    let path = dir.join("summary.json");
    std::fs::write(&path, text)?;
    paths.push(path);
    Ok(paths)
}
