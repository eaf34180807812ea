//! Command implementations behind the `gbd-agent` binary.
//!
//! Every command is deterministic given its flags and seeds: reruns produce
//! byte-identical outputs. Options may also come from a config file of
//! `key=value` lines; explicit flags win over the file, the file wins over
//! defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{
    instance_is_feasible, oracle_solve, solve_agent, solve_classical, Decision, DriverConfig,
    GbdTrace, Termination, TRACE_SCHEMA,
};
use crate::graph::{read_json, read_jsonl, write_json, write_jsonl, DataError, DatasetSample};
use crate::policy::{load_params, save_params, Descriptor, HeadKind, PolicyError, PolicyParams};
use crate::problem::{
    enumerate_admissible, sample_instance, Assignment, InstanceRecord, ProblemInstance,
    PureBinaryConstraints,
};
use crate::training::{
    evaluate_policy, split_by_instance, stage1_train, stage2_finetune, PolicyMetrics, TrainConfig,
};

pub const MANIFEST_SCHEMA: &str = "v1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Key=value option file. Blank lines and `#` comments are ignored.
#[derive(Debug, Default, Clone)]
pub struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut map = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{} line {}: expected key=value",
                    path.display(),
                    idx + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }
}

/// Resolves one option: explicit flag, then config file, then default.
fn resolve<T: std::str::FromStr + Copy>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    Ok(flag.or(file.get(key)?).unwrap_or(default))
}

/// Driver options, all overridable from the config file.
pub fn driver_config(file: &FileConfig) -> Result<DriverConfig, CliError> {
    let d = DriverConfig::default();
    Ok(DriverConfig {
        epsilon: resolve(None, file, "epsilon", d.epsilon)?,
        eps_tol: resolve(None, file, "eps_tol", d.eps_tol)?,
        budget_min: resolve(None, file, "budget_min", d.budget_min)?,
        budget_max: resolve(None, file, "budget_max", d.budget_max)?,
        max_iterations: resolve(None, file, "max_iterations", d.max_iterations)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub schema: String,
    pub base_seed: u64,
    pub instances: Vec<InstanceRecord>,
}

/// Scans seeds upward from `base_seed`, keeping the first `count` instances
/// whose subproblem family is feasible for at least one admissible
/// assignment (a quarter of uniform draws are infeasible outright and have
/// no solution to learn from or compare against).
pub fn collect_feasible_instances(count: usize, base_seed: u64) -> Vec<ProblemInstance> {
    let mut out = Vec::with_capacity(count);
    let mut seed = base_seed;
    while out.len() < count {
        let inst = sample_instance(seed);
        if instance_is_feasible(&inst) {
            out.push(inst);
        }
        seed += 1;
    }
    out
}

pub struct GendataArgs {
    pub instances: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

pub fn cmd_gendata(args: &GendataArgs) -> Result<(), CliError> {
    if args.instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    let file = FileConfig::load(args.config.as_deref())?;
    let driver = driver_config(&file)?;
    let instances = collect_feasible_instances(args.instances, args.seed);
    let mut samples = Vec::new();
    for inst in &instances {
        let out = solve_classical(inst, &driver);
        if !out.trace.converged {
            return Err(CliError::Usage(format!(
                "instance seed {} did not converge ({:?})",
                inst.seed, out.trace.termination
            )));
        }
        samples.extend(out.samples);
    }
    write_jsonl(&args.out, &samples)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out));
    write_json(
        &manifest_path,
        &InstanceManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            base_seed: args.seed,
            instances: instances.iter().map(InstanceRecord::from).collect(),
        },
    )?;
    println!(
        "wrote {} samples from {} instances to {}",
        samples.len(),
        instances.len(),
        args.out.display()
    );
    Ok(())
}

fn default_manifest_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    One,
    Two,
    Both,
}

impl std::str::FromStr for TrainStage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown stage {other:?} (expected 1, 2 or both)")),
        }
    }
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub stage: TrainStage,
    pub head: HeadKind,
    pub model_in: Option<PathBuf>,
    pub omega: Option<f64>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr1: Option<f64>,
    pub lr2: Option<f64>,
    pub split: Option<f64>,
    pub holdout_out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

pub fn train_config(args: &TrainArgs, file: &FileConfig) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        stage1_lr: resolve(args.lr1, file, "stage1_lr", d.stage1_lr)?,
        stage2_lr: resolve(args.lr2, file, "stage2_lr", d.stage2_lr)?,
        batch_size: resolve(args.batch, file, "batch_size", d.batch_size)?,
        epochs: resolve(args.epochs, file, "epochs", d.epochs)?,
        omega: resolve(args.omega, file, "omega", d.omega)?,
        seed: resolve(args.seed, file, "train_seed", d.seed)?,
        split_fraction: resolve(args.split, file, "split_fraction", 0.0)?,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let config = train_config(args, &file)?;
    let all = read_jsonl(&args.data)?;
    if all.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: dataset is empty",
            args.data.display()
        )));
    }
    let (train, holdout) = if config.split_fraction > 0.0 {
        split_by_instance(&all, config.split_fraction, config.seed)
    } else {
        (all, Vec::new())
    };
    if let Some(path) = &args.holdout_out {
        write_jsonl(path, &holdout)?;
    }

    let admissible = enumerate_admissible(&PureBinaryConstraints::family()).expect("family");
    let params = match args.stage {
        TrainStage::One => {
            let desc = descriptor_for(args.head, admissible.len());
            stage1_train(&train, &admissible, &desc, &config).params
        }
        TrainStage::Both => {
            let desc = descriptor_for(args.head, admissible.len());
            let s1 = stage1_train(&train, &admissible, &desc, &config);
            stage2_finetune(&s1.params, &train, &admissible, &config).params
        }
        TrainStage::Two => {
            let model_in = args.model_in.as_ref().ok_or_else(|| {
                CliError::Usage("--stage 2 requires --model-in with stage-1 weights".into())
            })?;
            let base = load_params(model_in)?;
            stage2_finetune(&base, &train, &admissible, &config).params
        }
    };
    save_params(&params, &args.out)?;
    println!(
        "trained {:?} head, stages {:?}, wrote {}",
        params.descriptor.head,
        params.stages,
        args.out.display()
    );
    Ok(())
}

fn descriptor_for(head: HeadKind, n_actions: usize) -> Descriptor {
    match head {
        HeadKind::Combination => Descriptor::combination(n_actions),
        HeadKind::Independent => Descriptor::independent(),
    }
}

pub struct EvalArgs {
    pub data: PathBuf,
    pub models: Vec<PathBuf>,
    pub out: PathBuf,
}

pub fn metrics_csv(rows: &[(String, PolicyMetrics)]) -> String {
    let mut out = String::from("model,exact_match_num,exact_match_den,feas_num,feas_den\n");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{name},{},{},{},{}",
            m.exact_match_num, m.exact_match_den, m.feas_num, m.feas_den
        );
    }
    out
}

pub fn cmd_evalpolicy(args: &EvalArgs) -> Result<(), CliError> {
    if args.models.is_empty() {
        return Err(CliError::Usage("at least one --model is required".into()));
    }
    let dataset = read_jsonl(&args.data)?;
    let admissible = enumerate_admissible(&PureBinaryConstraints::family()).expect("family");
    let mut rows = Vec::new();
    for path in &args.models {
        let params = load_params(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        rows.push((name, evaluate_policy(&params, &dataset, &admissible)));
    }
    fs::write(&args.out, metrics_csv(&rows)).map_err(io_err(&args.out))?;
    println!("wrote {} model rows to {}", rows.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Classical,
    Agent,
    AgentIndependent,
    Oracle,
}

impl std::str::FromStr for SolveMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" => Ok(Self::Classical),
            "agent" => Ok(Self::Agent),
            "agent-independent" => Ok(Self::AgentIndependent),
            "oracle" => Ok(Self::Oracle),
            other => Err(format!(
                "unknown mode {other:?} (expected classical, agent, agent-independent or oracle)"
            )),
        }
    }
}

pub struct SolveArgs {
    pub seed: u64,
    pub mode: SolveMode,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub data_out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

fn oracle_trace(inst: &ProblemInstance, y: Assignment, z: f64) -> GbdTrace {
    GbdTrace {
        schema: TRACE_SCHEMA.to_string(),
        mode: "oracle".to_string(),
        instance: InstanceRecord::from(inst),
        iterations: Vec::new(),
        final_objective: Some(z),
        final_y: Some(y),
        iteration_count: 0,
        converged: true,
        termination: Termination::Converged,
    }
}

fn load_head_checked(path: &Path, expected: HeadKind) -> Result<PolicyParams, CliError> {
    let params = load_params(path)?;
    if params.descriptor.head != expected {
        return Err(CliError::Usage(format!(
            "{}: model has {:?} head, this mode needs {:?}",
            path.display(),
            params.descriptor.head,
            expected
        )));
    }
    Ok(params)
}

pub fn cmd_solve(args: &SolveArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let driver = driver_config(&file)?;
    let inst = sample_instance(args.seed);
    let trace = match args.mode {
        SolveMode::Classical => {
            let out = solve_classical(&inst, &driver);
            if let Some(path) = &args.data_out {
                write_jsonl(path, &out.samples)?;
            }
            out.trace
        }
        SolveMode::Agent => {
            let path = args.model.as_ref().ok_or_else(|| {
                CliError::Usage("--mode agent requires --model".into())
            })?;
            let params = load_head_checked(path, HeadKind::Combination)?;
            solve_agent(&inst, &params, &driver)
        }
        SolveMode::AgentIndependent => {
            let path = args.model.as_ref().ok_or_else(|| {
                CliError::Usage("--mode agent-independent requires --model".into())
            })?;
            let params = load_head_checked(path, HeadKind::Independent)?;
            solve_agent(&inst, &params, &driver)
        }
        SolveMode::Oracle => {
            let (y, z) = oracle_solve(&inst).map_err(|e| CliError::Usage(e.to_string()))?;
            oracle_trace(&inst, y, z)
        }
    };
    write_json(&args.out, &trace)?;
    println!(
        "{} on seed {}: converged={} objective={:?}",
        trace.mode, args.seed, trace.converged, trace.final_objective
    );
    Ok(())
}

pub struct ExperimentArgs {
    pub outdir: PathBuf,
    pub train_instances: Option<usize>,
    pub test_instances: Option<usize>,
    pub seed: Option<u64>,
    pub test_seed: Option<u64>,
    pub resume: bool,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleRecord {
    pub seed: u64,
    pub y: Assignment,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OracleFile {
    schema: String,
    records: Vec<OracleRecord>,
}

fn check_schema(path: &Path, found: &str, expected: &str) -> Result<(), CliError> {
    if found != expected {
        return Err(CliError::Usage(format!(
            "{}: schema {found:?}, expected {expected:?}",
            path.display()
        )));
    }
    Ok(())
}

fn check_traces(path: &Path, traces: &[GbdTrace]) -> Result<(), CliError> {
    for t in traces {
        check_schema(path, &t.schema, crate::driver::TRACE_SCHEMA)?;
    }
    Ok(())
}

/// Per-mode aggregates of a trace set against the oracle reference.
#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub instances: usize,
    pub solution_match: usize,
    pub converged: usize,
    pub total_iterations: usize,
    pub agent_accepted: usize,
    pub solver_override: usize,
    pub solver_fallback: usize,
    /// Master solves done exactly (classical iterations and fallbacks).
    pub exact_master_solves: usize,
    /// Master solves done under a node budget.
    pub budgeted_master_solves: usize,
    pub budgeted_nodes: usize,
}

pub fn summarize_traces(mode: &str, traces: &[GbdTrace], oracle: &[OracleRecord]) -> ModeSummary {
    let mut s = ModeSummary {
        mode: mode.to_string(),
        instances: traces.len(),
        solution_match: 0,
        converged: 0,
        total_iterations: 0,
        agent_accepted: 0,
        solver_override: 0,
        solver_fallback: 0,
        exact_master_solves: 0,
        budgeted_master_solves: 0,
        budgeted_nodes: 0,
    };
    for trace in traces {
        let reference = oracle.iter().find(|o| o.seed == trace.instance.seed);
        if trace.converged {
            s.converged += 1;
            if let (Some(obj), Some(oracle_rec)) = (trace.final_objective, reference) {
                if (obj - oracle_rec.objective).abs() <= 1e-3 {
                    s.solution_match += 1;
                }
            }
        }
        s.total_iterations += trace.iteration_count;
        for rec in &trace.iterations {
            match rec.decision {
                Some(Decision::AgentAccepted) => s.agent_accepted += 1,
                Some(Decision::SolverOverride) => s.solver_override += 1,
                Some(Decision::SolverFallback) => s.solver_fallback += 1,
                None => {}
            }
            match rec.node_budget {
                Some(budget) => {
                    s.budgeted_master_solves += 1;
                    s.budgeted_nodes += budget;
                }
                None => {
                    if rec.master_solved {
                        s.exact_master_solves += 1;
                    }
                }
            }
        }
    }
    s
}

fn pct(num: usize, den: usize) -> String {
    if den == 0 {
        "n/a".to_string()
    } else {
        format!("{:.1}%", 100.0 * num as f64 / den as f64)
    }
}

pub fn render_report(
    metrics: &[(String, PolicyMetrics)],
    summaries: &[ModeSummary],
    train_instances: usize,
    test_instances: usize,
    train_samples: usize,
    test_samples: usize,
) -> (String, String) {
    let mut csv = String::from(
        "mode,instances,solution_match,converged,total_iterations,agent_accepted,solver_override,solver_fallback,exact_master_solves,budgeted_master_solves,budgeted_nodes\n",
    );
    for s in summaries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.mode,
            s.instances,
            s.solution_match,
            s.converged,
            s.total_iterations,
            s.agent_accepted,
            s.solver_override,
            s.solver_fallback,
            s.exact_master_solves,
            s.budgeted_master_solves,
            s.budgeted_nodes
        );
    }

    let mut md = String::new();
    md.push_str("# Decomposition experiment report\n\n");
    let _ = writeln!(
        md,
        "Training data: {train_samples} samples from {train_instances} instances. \
         Evaluation data: {test_samples} samples from {test_instances} held-out instances.\n"
    );
    md.push_str("## Policy metrics\n\n");
    md.push_str("| model | exact match | feasibility |\n|---|---|---|\n");
    for (name, m) in metrics {
        let feas = match m.feasibility() {
            Some(_) => format!("{}/{} ({})", m.feas_num, m.feas_den, pct(m.feas_num, m.feas_den)),
            None => "n/a".to_string(),
        };
        let _ = writeln!(
            md,
            "| {name} | {}/{} ({}) | {feas} |",
            m.exact_match_num,
            m.exact_match_den,
            pct(m.exact_match_num, m.exact_match_den)
        );
    }
    md.push_str("\n## Driver comparison\n\n");
    md.push_str(
        "| mode | solution match | avg iterations | agent accepted | solver override | solver fallback | exact master solves | budgeted nodes |\n|---|---|---|---|---|---|---|---|\n",
    );
    for s in summaries {
        let decisions = s.agent_accepted + s.solver_override + s.solver_fallback;
        let avg_iters = s.total_iterations as f64 / s.instances.max(1) as f64;
        let _ = writeln!(
            md,
            "| {} | {}/{} | {:.2} | {} | {} | {} | {} | {} |",
            s.mode,
            s.solution_match,
            s.instances,
            avg_iters,
            pct(s.agent_accepted, decisions),
            pct(s.solver_override, decisions),
            pct(s.solver_fallback, decisions),
            s.exact_master_solves,
            s.budgeted_nodes
        );
    }
    md.push_str(
        "\nCounts are deterministic operation counts: exact master solves measure the work\n\
         the learned policies avoid, budgeted nodes the certification effort that replaces it.\n",
    );
    (csv, md)
}

/// Loads an artifact if present (resume mode), otherwise computes and
/// writes it.
fn cached<T, F>(resume: bool, path: &Path, compute: F) -> Result<T, CliError>
where
    T: Serialize + for<'de> Deserialize<'de>,
    F: FnOnce() -> Result<T, CliError>,
{
    if resume && path.exists() {
        return Ok(read_json(path)?);
    }
    let value = compute()?;
    write_json(path, &value)?;
    Ok(value)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let driver = driver_config(&file)?;
    let n_train = resolve(args.train_instances, &file, "train_instances", 50)?;
    let n_test = resolve(args.test_instances, &file, "test_instances", 30)?;
    let train_seed = resolve(args.seed, &file, "train_base_seed", 1000u64)?;
    let test_seed = resolve(args.test_seed, &file, "test_base_seed", 10_000u64)?;
    if n_train == 0 || n_test == 0 {
        return Err(CliError::Usage("instance counts must be at least 1".into()));
    }
    let train_args = TrainArgs {
        data: PathBuf::new(),
        out: PathBuf::new(),
        stage: TrainStage::Both,
        head: HeadKind::Combination,
        model_in: None,
        omega: None,
        seed: None,
        epochs: None,
        batch: None,
        lr1: None,
        lr2: None,
        split: None,
        holdout_out: None,
        config: args.config.clone(),
    };
    let tc = train_config(&train_args, &file)?;

    fs::create_dir_all(&args.outdir).map_err(io_err(&args.outdir))?;
    let p = |name: &str| args.outdir.join(name);

    // Expert data on the training pool.
    let train_manifest: InstanceManifest = cached(args.resume, &p("manifest_train.json"), || {
        Ok(InstanceManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            base_seed: train_seed,
            instances: collect_feasible_instances(n_train, train_seed)
                .iter()
                .map(InstanceRecord::from)
                .collect(),
        })
    })?;
    check_schema(&p("manifest_train.json"), &train_manifest.schema, MANIFEST_SCHEMA)?;
    let dataset_train_path = p("dataset_train.jsonl");
    let train_samples: Vec<DatasetSample> = if args.resume && dataset_train_path.exists() {
        read_jsonl(&dataset_train_path)?
    } else {
        let mut samples = Vec::new();
        for rec in &train_manifest.instances {
            let inst = ProblemInstance::from(rec.clone());
            samples.extend(solve_classical(&inst, &driver).samples);
        }
        write_jsonl(&dataset_train_path, &samples)?;
        samples
    };

    // Expert data and oracle reference on the held-out pool.
    let test_manifest: InstanceManifest = cached(args.resume, &p("manifest_test.json"), || {
        Ok(InstanceManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            base_seed: test_seed,
            instances: collect_feasible_instances(n_test, test_seed)
                .iter()
                .map(InstanceRecord::from)
                .collect(),
        })
    })?;
    check_schema(&p("manifest_test.json"), &test_manifest.schema, MANIFEST_SCHEMA)?;
    let test_instances: Vec<ProblemInstance> = test_manifest
        .instances
        .iter()
        .map(|r| ProblemInstance::from(r.clone()))
        .collect();
    let dataset_test_path = p("dataset_test.jsonl");
    let test_samples: Vec<DatasetSample> = if args.resume && dataset_test_path.exists() {
        read_jsonl(&dataset_test_path)?
    } else {
        let mut samples = Vec::new();
        for inst in &test_instances {
            samples.extend(solve_classical(inst, &driver).samples);
        }
        write_jsonl(&dataset_test_path, &samples)?;
        samples
    };
    let oracle_file: OracleFile = cached(args.resume, &p("oracle.json"), || {
        let records = test_instances
            .iter()
            .map(|inst| {
                oracle_solve(inst)
                    .map(|(y, z)| OracleRecord {
                        seed: inst.seed,
                        y,
                        objective: z,
                    })
                    .map_err(|e| CliError::Usage(format!("seed {}: {e}", inst.seed)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OracleFile {
            schema: MANIFEST_SCHEMA.to_string(),
            records,
        })
    })?;
    check_schema(&p("oracle.json"), &oracle_file.schema, MANIFEST_SCHEMA)?;
    let oracle = oracle_file.records;

    // Models: stage-1 baseline, stage-2 proposed, independent baseline.
    let admissible = enumerate_admissible(&PureBinaryConstraints::family()).expect("family");
    let model_stage1 = model_cached(args.resume, &p("model_stage1.json"), || {
        stage1_train(
            &train_samples,
            &admissible,
            &Descriptor::combination(admissible.len()),
            &tc,
        )
        .params
    })?;
    let model_proposed = model_cached(args.resume, &p("model_proposed.json"), || {
        stage2_finetune(&model_stage1, &train_samples, &admissible, &tc).params
    })?;
    let model_independent = model_cached(args.resume, &p("model_independent.json"), || {
        stage1_train(&train_samples, &admissible, &Descriptor::independent(), &tc).params
    })?;

    // Policy metrics on held-out expert samples.
    let metrics: Vec<(String, PolicyMetrics)> = vec![
        (
            "proposed".to_string(),
            evaluate_policy(&model_proposed, &test_samples, &admissible),
        ),
        (
            "stage1-baseline".to_string(),
            evaluate_policy(&model_stage1, &test_samples, &admissible),
        ),
        (
            "independent-il".to_string(),
            evaluate_policy(&model_independent, &test_samples, &admissible),
        ),
    ];
    fs::write(p("metrics.csv"), metrics_csv(&metrics)).map_err(io_err(&p("metrics.csv")))?;

    // Driver comparison on the held-out instances.
    let classical: Vec<GbdTrace> = cached(args.resume, &p("traces_classical.json"), || {
        Ok(test_instances
            .iter()
            .map(|inst| solve_classical(inst, &driver).trace)
            .collect())
    })?;
    check_traces(&p("traces_classical.json"), &classical)?;
    let agent: Vec<GbdTrace> = cached(args.resume, &p("traces_agent.json"), || {
        Ok(test_instances
            .iter()
            .map(|inst| solve_agent(inst, &model_proposed, &driver))
            .collect())
    })?;
    check_traces(&p("traces_agent.json"), &agent)?;
    let agent_independent: Vec<GbdTrace> =
        cached(args.resume, &p("traces_agent_independent.json"), || {
            Ok(test_instances
                .iter()
                .map(|inst| solve_agent(inst, &model_independent, &driver))
                .collect())
        })?;
    check_traces(&p("traces_agent_independent.json"), &agent_independent)?;

    let summaries = vec![
        summarize_traces("classical", &classical, &oracle),
        summarize_traces("agent", &agent, &oracle),
        summarize_traces("agent-independent", &agent_independent, &oracle),
    ];
    let (csv, md) = render_report(
        &metrics,
        &summaries,
        train_manifest.instances.len(),
        test_instances.len(),
        train_samples.len(),
        test_samples.len(),
    );
    fs::write(p("report.csv"), csv).map_err(io_err(&p("report.csv")))?;
    fs::write(p("report.md"), md).map_err(io_err(&p("report.md")))?;
    println!("experiment artifacts written to {}", args.outdir.display());
    Ok(())
}

/// Model files go through their own save/load path rather than the generic
/// JSON cache, so the schema validation applies on resume too.
fn model_cached<F>(resume: bool, path: &Path, compute: F) -> Result<PolicyParams, CliError>
where
    F: FnOnce() -> PolicyParams,
{
    if resume && path.exists() {
        return Ok(load_params(path)?);
    }
    let params = compute();
    save_params(&params, path)?;
    Ok(params)
}
