use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use topogen::diffusion::{make_schedule, sample, train, ConvConfig, ConvDenoiser, NoiseSchedule, SamplerConfig, ScheduleKind, TrainConfig, TrainingExample};
use topogen::guidance::Guidance;
use topogen::kernels::{KernelParams, KernelVariant, ModelVariant};
use topogen::metrics::{EvaluationRecord, TaskSplit};
use topogen::pipeline::benchmark::{sha256_hex, worker_count};
use topogen::pipeline::generate::{baseline_compliance, conditioning, evaluate_compliance};
use topogen::pipeline::io::{load_topology, read_problem, save_topology, stack_file};
use topogen::pipeline::{
    load_dataset, run_benchmark, save_dataset, synth_dataset, write_reports, BenchmarkConfig, Distribution,
    GuidanceSettings, ModelEntry, SynthConfig,
};
use topogen::simp::{refine_with, run_simp, SimpConfig};
use topogen::tensor_io::TensorFile;
use topogen::{DensityField, ProblemSpec};

/// Topology optimization with SIMP, kernel conditioning and diffusion sampling.
#[derive(Parser)]
#[command(name = "topogen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full SIMP optimization; writes the topology, its problem sidecar and a trace CSV.
    Optimize(OptimizeArgs),
    /// Build a conditioning stack for a problem.
    Kernels(KernelsArgs),
    /// Train a denoiser on a dataset directory.
    Train(TrainArgs),
    /// Sample a topology from a denoiser checkpoint.
    Sample(SampleArgs),
    /// Run a fixed number of SIMP iterations on an existing topology.
    Refine(RefineArgs),
    /// Score a topology against its problem.
    Evaluate(EvaluateArgs),
    /// Generate, refine and evaluate every variant on every task split.
    Benchmark(BenchmarkArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate random problems and their SIMP optima.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    Cantilever,
    HalfMbb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    In,
    Out,
}

#[derive(Args)]
struct ProblemArgs {
    /// Problem JSON; replaces the built-in case.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cantilever")]
    case: Case,
    #[arg(long, default_value_t = 16)]
    nelx: usize,
    #[arg(long, default_value_t = 16)]
    nely: usize,
    #[arg(long, default_value_t = 0.4)]
    vf: f64,
}

impl ProblemArgs {
    fn load(&self) -> anyhow::Result<ProblemSpec> {
        if let Some(path) = &self.problem {
            return Ok(read_problem(path)?);
        }
        Ok(match self.case {
            Case::Cantilever => ProblemSpec::cantilever(self.nelx, self.nely, self.vf)?,
            Case::HalfMbb => ProblemSpec::half_mbb(self.nelx, self.nely, self.vf)?,
        })
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value = "green_exp")]
    kernel: KernelVariant,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

impl KernelArgs {
    fn params(&self) -> anyhow::Result<KernelParams> {
        let mut p = KernelParams::with_variant(self.kernel);
        if let Some(a) = self.alpha {
            p.alpha = a;
        }
        if let Some(b) = self.beta {
            p.beta = b;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 3.0)]
    penal: f64,
    /// Sensitivity filter radius in elements.
    #[arg(long, default_value_t = 1.5)]
    rmin: f64,
    #[arg(long, default_value = "topology.tgt")]
    out: PathBuf,
}

#[derive(Args)]
struct KernelsArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "topodiff-ff")]
    variant: ModelVariant,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value = "stack.tgt")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (`NNNNN.json` + `NNNNN.tgt` pairs).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "topodiff-ff")]
    variant: ModelVariant,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Optimizer steps.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    /// Diffusion steps T of the training schedule.
    #[arg(long, default_value_t = 1000)]
    timesteps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.tgt")]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "topodiff-ff")]
    variant: ModelVariant,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Denoiser checkpoint; without one an untrained network is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Reverse steps.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    refine_iters: usize,
    #[arg(long, default_value_t = 0.0)]
    s_fm: f64,
    #[arg(long, default_value_t = 0.0)]
    s_c: f64,
    #[arg(long, default_value = "sample.tgt")]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, visible_alias = "refine-iters", default_value_t = 10)]
    iters: usize,
    /// Problem JSON when the topology has no sidecar.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Defaults to `<input stem>_refined.tgt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Baseline compliance; defaults to the problem's stored optimum, else a full SIMP run.
    #[arg(long)]
    baseline: Option<f64>,
    /// JSON output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    data: PathBuf,
    /// Variants to run; all four when absent.
    #[arg(long = "variant")]
    variants: Vec<ModelVariant>,
    /// `variant=path`, once per variant.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    /// Run variants without a checkpoint on untrained networks instead of skipping them.
    #[arg(long)]
    untrained: bool,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "task-1,task-2,task-3")]
    splits: Vec<String>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 10)]
    refine_iters: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 0.0)]
    s_fm: f64,
    #[arg(long, default_value_t = 0.0)]
    s_c: f64,
    /// Defaults to `TOPOGEN_WORKERS` or the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 3)]
    timing_repeats: usize,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 16)]
    nelx: usize,
    #[arg(long, default_value_t = 16)]
    nely: usize,
    #[arg(long, value_enum, default_value = "in")]
    dist: Dist,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    simp_iters: usize,
    #[arg(long, default_value = "dataset")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Optimize(a) => optimize(a),
        Command::Kernels(a) => kernels(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Dataset(DatasetCommand::Synth(a)) => synth(a),
    }
}

/// `dir/<stem><suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn optimize(a: OptimizeArgs) -> anyhow::Result<()> {
    let problem = a.problem.load()?;
    let cfg = SimpConfig {
        penal: a.penal,
        filter_radius: a.rmin,
        ..SimpConfig::for_problem(&problem).with_max_iters(a.iters)
    };
    let trace = run_simp(&problem, &cfg, &DensityField::uniform(problem.grid, problem.vf_target))?;
    let mut out_problem = problem.clone();
    out_problem.optimal_compliance = Some(trace.final_compliance);
    save_topology(&a.out, &trace.final_density, Some(&out_problem))?;
    let mut csv = String::from("iter,compliance,max_change\n");
    for (i, (c, d)) in trace.compliances.iter().zip(&trace.max_changes).enumerate() {
        csv.push_str(&format!("{},{c},{d}\n", i + 1));
    }
    let trace_path = sibling(&a.out, "_trace.csv");
    std::fs::write(&trace_path, csv)?;
    println!(
        "{} iterations (converged: {}), compliance {:.6}, mean density {:.4} -> {}, {}",
        trace.iterations(),
        trace.converged,
        trace.final_compliance,
        trace.final_density.mean(),
        a.out.display(),
        trace_path.display()
    );
    Ok(())
}

fn kernels(a: KernelsArgs) -> anyhow::Result<()> {
    let problem = a.problem.load()?;
    let stack = conditioning(&problem, a.variant, &a.kernel.params()?)?;
    stack_file(&stack)?.write(&a.out)?;
    let names: Vec<&str> = stack.names.iter().map(|c| c.as_str()).collect();
    println!("{} channels [{}] -> {}", names.len(), names.join(", "), a.out.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<(ConvDenoiser, NoiseSchedule)> {
    let file = TensorFile::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let (model, steps) = ConvDenoiser::from_tensor_file(&file)?;
    Ok((model, make_schedule(steps, ScheduleKind::Linear)?))
}

fn untrained() -> anyhow::Result<(ConvDenoiser, NoiseSchedule)> {
    Ok((ConvDenoiser::new(ConvConfig::default(), 0)?, make_schedule(1000, ScheduleKind::Linear)?))
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let records = load_dataset(&a.data)?;
    if records.is_empty() {
        bail!("dataset {} is empty", a.data.display());
    }
    let kernel = a.kernel.params()?;
    let data = records
        .iter()
        .map(|r| {
            Ok(TrainingExample {
                cond: conditioning(&r.problem, a.variant, &kernel)?,
                density: r.topology.values.clone(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let schedule = make_schedule(a.timesteps, ScheduleKind::Linear)?;
    let conv = ConvConfig {
        cond_channels: a.variant.channels().len(),
        hidden: a.hidden,
        embed_dim: a.embed_dim,
    };
    let mut model = ConvDenoiser::new(conv, a.seed)?;
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data, &schedule, &cfg)?;
    model.to_tensor_file(a.timesteps)?.write(&a.out)?;
    let loss_path = sibling(&a.out, "_loss.csv");
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(&loss_path, csv)?;
    let (start, end) = report.start_end((report.loss_curve.len() / 10).clamp(1, 100));
    println!(
        "trained on {} examples, loss {start:.4} -> {end:.4} -> {}, {}",
        data.len(),
        a.out.display(),
        loss_path.display()
    );
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> anyhow::Result<()> {
    let problem = a.problem.load()?;
    let (model, schedule) = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            log::warn!("no --checkpoint given; sampling from an untrained network");
            untrained()?
        }
    };
    let stack = conditioning(&problem, a.variant, &a.kernel.params()?)?;
    let guidance = Guidance::oracle(&problem, a.s_fm, a.s_c);
    let source = a.variant.guided().then_some(&guidance as &dyn topogen::diffusion::GuidanceSource);
    let mut topo = sample(&model, &stack, &schedule, &SamplerConfig::new(a.steps, a.seed), source)?;
    if a.refine_iters > 0 {
        topo = refine_with(&topo, &problem, &SimpConfig::for_problem(&problem), a.refine_iters)?.final_density;
    }
    save_topology(&a.out, &topo, Some(&problem))?;
    println!("sampled {}x{} topology, mean density {:.4} -> {}", topo.grid.nelx, topo.grid.nely, topo.mean(), a.out.display());
    Ok(())
}

/// Topology plus its problem: the sidecar, else `--problem`.
fn topology_and_problem(input: &Path, problem: Option<&Path>) -> anyhow::Result<(DensityField, ProblemSpec)> {
    let (topo, side) = load_topology(input).with_context(|| format!("reading {}", input.display()))?;
    let problem = match (problem, side) {
        (Some(p), _) => read_problem(p)?,
        (None, Some(p)) => p,
        (None, None) => bail!("{} has no problem sidecar; pass --problem", input.display()),
    };
    if problem.grid != topo.grid {
        bail!("problem grid does not match the topology");
    }
    Ok((topo, problem))
}

fn refine_cmd(a: RefineArgs) -> anyhow::Result<()> {
    let (topo, problem) = topology_and_problem(&a.input, a.problem.as_deref())?;
    let trace = refine_with(&topo, &problem, &SimpConfig::for_problem(&problem), a.iters)?;
    let out = a.out.unwrap_or_else(|| sibling(&a.input, "_refined.tgt"));
    save_topology(&out, &trace.final_density, Some(&problem))?;
    println!(
        "{} iterations, compliance {:.6} -> {}",
        a.iters,
        trace.final_compliance,
        out.display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let (topo, problem) = topology_and_problem(&a.input, a.problem.as_deref())?;
    let c_opt = match a.baseline {
        Some(c) => c,
        None => baseline_compliance(&problem)?,
    };
    let id = a.input.file_stem().unwrap_or_default().to_string_lossy().to_string();
    let record = EvaluationRecord::evaluate(
        id,
        &topo,
        evaluate_compliance(&problem, &topo),
        c_opt,
        problem.vf_target,
        &problem.loads,
        &problem.bcs,
        0.0,
        0.0,
    )?;
    let json = serde_json::to_string_pretty(&record)?;
    match a.out {
        Some(p) => std::fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&a.data)?;
    let variants = if a.variants.is_empty() { ModelVariant::ALL.to_vec() } else { a.variants.clone() };
    let mut checkpoints = Vec::new();
    for spec in &a.checkpoints {
        let (v, path) = spec.split_once('=').with_context(|| format!("--checkpoint expects variant=path, got {spec}"))?;
        checkpoints.push((v.parse::<ModelVariant>()?, PathBuf::from(path)));
    }
    let mut loaded = Vec::new();
    for &v in &variants {
        let entry = match checkpoints.iter().find(|(cv, _)| *cv == v) {
            Some((_, path)) => {
                let (m, s) = load_checkpoint(path)?;
                Some((m, s, Some(sha256_hex(&std::fs::read(path)?))))
            }
            None if a.untrained => {
                log::warn!("{v}: no checkpoint, using an untrained network");
                let (m, s) = untrained()?;
                Some((m, s, None))
            }
            None => None,
        };
        loaded.push((v, entry));
    }
    let fallback = make_schedule(1000, ScheduleKind::Linear)?;
    let models: Vec<ModelEntry> = loaded
        .iter()
        .map(|(v, e)| match e {
            Some((m, s, h)) => ModelEntry {
                variant: *v,
                model: Some(m),
                schedule: s.clone(),
                checkpoint_sha256: h.clone(),
            },
            None => ModelEntry {
                variant: *v,
                model: None,
                schedule: fallback.clone(),
                checkpoint_sha256: None,
            },
        })
        .collect();
    let splits = a
        .splits
        .iter()
        .map(|s| TaskSplit::parse(s).with_context(|| format!("unknown split {s}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let config = BenchmarkConfig {
        splits,
        seeds: a.seeds.clone(),
        steps: a.steps,
        refine_iters: a.refine_iters,
        kernel: a.kernel.params()?,
        guidance: GuidanceSettings { s_fm: a.s_fm, s_c: a.s_c },
        workers: a.workers.unwrap_or_else(worker_count),
        timing_repeats: a.timing_repeats,
    };
    let report = run_benchmark(&dataset, &models, &config)?;
    for p in write_reports(&a.out, &report)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let dist = match a.dist {
        Dist::In => Distribution::In,
        Dist::Out => Distribution::Out,
    };
    let mut cfg = SynthConfig::new(a.count, a.nelx, a.nely, dist, a.seed);
    cfg.simp_iters = a.simp_iters;
    let records = synth_dataset(&cfg)?;
    save_dataset(&a.out, &records)?;
    println!("{} records -> {}", records.len(), a.out.display());
    Ok(())
}
