use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use jobshop_core::format::{format_instance, read_instance, write_instance};
use jobshop_core::rules::pdr_dispatch;
use jobshop_core::{sgs_starts, Family, Instance, Rule, Size, State};
use jobshop_eval::{baseline_csv, baseline_report, cumulative_curve, evaluate, Method, Protocol};
use jobshop_gnn::{Params, Policy};
use jobshop_ppo::{TrainConfig, Trainer};

/// Environment variable naming the default output directory.
const OUT_DIR_VAR: &str = "JOBSHOP_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "jobshop", version, about = "Learned dispatching for job-shop scheduling under uncertainty")]
struct Cli {
    /// Worker threads for collection and evaluation; 1 gives bit-identical reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write random instances to files.
    Generate(GenerateArgs),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Mean makespan tables for a checkpoint and reference methods.
    Eval(EvalArgs),
    /// Per-instance dispatching-rule report.
    Baseline(BaselineArgs),
    /// Sorted replay makespans of several solvers on one instance.
    Curve(CurveArgs),
    /// Print an instance, its message-passing graph or a schedule.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    jobs: usize,
    #[arg(long)]
    machines: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Triangular durations around the generated ones.
    #[arg(long)]
    stochastic: bool,
    #[arg(long, default_value_t = 0.95)]
    low: f64,
    #[arg(long, default_value_t = 1.1)]
    high: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON training config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue the run stored in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Comma-separated sizes such as 6x6,10x10.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<Size>,
    /// Instances per size.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Duration scenarios per instance (ignored for deterministic instances).
    #[arg(long, default_value_t = 1)]
    scenarios: usize,
    /// Use the generated durations as they are.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value_t = 0.95)]
    low: f64,
    #[arg(long, default_value_t = 1.1)]
    high: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated dispatching rules to add as rows.
    #[arg(long, value_delimiter = ',')]
    rules: Vec<Rule>,
    /// Add the branch and bound solver with this time limit in seconds.
    #[arg(long)]
    exact: Option<f64>,
    #[arg(long, default_value_t = 32)]
    chunk: usize,
    /// Format printed on stdout.
    #[arg(long, default_value = "text", value_parser = ["text", "csv", "json"])]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// Instance files; when empty, instances are generated from --sizes.
    #[arg(long = "instance")]
    files: Vec<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_delimiter = ',')]
    rules: Vec<Rule>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    rules: Vec<Rule>,
    /// Add the branch and bound solver with this time limit in seconds.
    #[arg(long)]
    exact: Option<f64>,
    #[arg(long, default_value_t = 100)]
    scenarios: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    instance: PathBuf,
    /// Print the message-passing graph after `--prefix` dispatches.
    #[arg(long)]
    graph: bool,
    /// Print the complete schedule under mode durations.
    #[arg(long)]
    schedule: bool,
    /// Rule that produces the dispatches.
    #[arg(long, default_value = "MOPNR")]
    rule: Rule,
    /// Dispatch with this checkpoint's greedy policy instead of the rule.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    prefix: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn require_seed(seed: Option<u64>, command: &str) -> std::result::Result<u64, Failure> {
    match seed {
        Some(s) => Ok(s),
        None => usage(format!("{command} needs an explicit --seed")),
    }
}

/// `--out`, else `$JOBSHOP_OUT_DIR/<command>`, else `jobshop-out/<command>`.
fn out_dir(out: &Option<PathBuf>, command: &str) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_DIR_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("jobshop-out"))
            .join(command),
    }
}

fn write_manifest(dir: &Path, command: &str, details: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = serde_json::json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "feature_schema": jobshop_gnn::FEATURE_SCHEMA,
        "threads": rayon::current_num_threads(),
        "details": details,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing manifest in {}", dir.display()))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_policy(path: &Path) -> Result<Policy<f32>> {
    let params = Params::<f32>::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Policy::new(params))
}

fn load_instance(path: &Path) -> Result<Instance> {
    read_instance(path).with_context(|| format!("reading instance {}", path.display()))
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Curve(a) => curve(a),
        Command::Inspect(a) => inspect(a).map_err(Failure::Runtime),
    }
}

fn generate(a: &GenerateArgs) -> std::result::Result<(), Failure> {
    if a.jobs == 0 || a.machines == 0 {
        return usage("--jobs and --machines must be positive");
    }
    let family = Family {
        size: Size::new(a.jobs, a.machines),
        stochastic: a.stochastic,
        low: a.low,
        high: a.high,
    };
    let dir = out_dir(&a.out, "generate");
    write_manifest(&dir, "generate", serde_json::json!({ "family": family, "count": a.count, "seed": a.seed }))?;
    for k in 0..a.count {
        let s = jobshop_core::seed::derive(a.seed, &[k as u64]);
        let inst = family.generate(s).context("generating instance")?;
        let path = dir.join(format!("{}_{k:04}.txt", family.size));
        write_instance(&inst, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("wrote {} instances to {}", a.count, dir.display());
    Ok(())
}

fn train(a: &TrainArgs) -> std::result::Result<(), Failure> {
    let dir = out_dir(&a.out, "train");
    let mut trainer = if a.resume {
        if a.config.is_some() || a.seed.is_some() {
            return usage("--resume takes the config and seed from the run directory");
        }
        Trainer::resume(&dir).with_context(|| format!("resuming from {}", dir.display()))?
    } else {
        let mut config = match &a.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                TrainConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(s) = a.seed {
            config.seed = s;
        }
        if let Some(n) = a.iterations {
            config.iterations = n;
        }
        config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        write_manifest(&dir, "train", serde_json::to_value(&config).map_err(anyhow::Error::from)?)?;
        let t = Trainer::new(config, Some(&dir)).context("starting training")?;
        let rules: Vec<String> = t.validation.rules.iter().map(|(r, v)| format!("{r} {v:.2}")).collect();
        eprintln!("untrained validation {:.2} ({})", t.untrained_valid(), rules.join(", "));
        t
    };
    let target = a.iterations.unwrap_or(trainer.config.iterations);
    trainer
        .run(target, |r, t| {
            eprintln!(
                "iter {:>4}  return {:>8.4}  valid {:>9.2}  best {:>9.2}  kl {:.4}  ent {:.3}  {:.1}s",
                r.iteration, r.mean_return, r.valid_makespan, r.best_valid, r.stats.approx_kl, r.stats.entropy, t.total
            )
        })
        .context("training")?;
    let (it, best) = trainer.best();
    eprintln!("best validation {best:.2} at iteration {it}; outputs in {}", dir.display());
    Ok(())
}

fn protocol(p: &ProblemArgs, command: &str, chunk: usize) -> std::result::Result<Protocol, Failure> {
    let seed = require_seed(p.seed, command)?;
    if p.sizes.is_empty() {
        return usage(format!("{command} needs --sizes"));
    }
    if p.instances == 0 || p.scenarios == 0 {
        return usage("--instances and --scenarios must be positive");
    }
    Ok(Protocol {
        sizes: p.sizes.clone(),
        stochastic: !p.deterministic,
        low: p.low,
        high: p.high,
        n_instances: p.instances,
        n_scenarios: p.scenarios,
        seed,
        chunk,
    })
}

fn exact_method(secs: Option<f64>) -> std::result::Result<Option<Method>, Failure> {
    match secs {
        None => Ok(None),
        Some(s) if s.is_finite() && s >= 0.0 => Ok(Some(Method::Exact {
            time_limit: Duration::from_secs_f64(s),
        })),
        Some(s) => usage(format!("--exact {s} is not a valid time limit")),
    }
}

fn eval(a: &EvalArgs) -> std::result::Result<(), Failure> {
    let proto = protocol(&a.problem, "eval", a.chunk.max(1))?;
    let mut methods = Vec::new();
    if let Some(ck) = &a.checkpoint {
        let policy = load_policy(ck)?;
        let max = policy.config().max_machines;
        if let Some(s) = proto.sizes.iter().find(|s| s.machines > max) {
            return Err(Failure::Runtime(anyhow::anyhow!(
                "size {s} has more machines than the checkpoint supports ({max})"
            )));
        }
        methods.push(Method::Policy {
            name: "policy".into(),
            policy: Arc::new(policy),
        });
    }
    methods.extend(a.rules.iter().map(|&r| Method::Rule(r)));
    methods.extend(exact_method(a.exact)?);
    if methods.is_empty() {
        return usage("nothing to evaluate: give --checkpoint, --rules or --exact");
    }
    let dir = out_dir(&a.out, "eval");
    write_manifest(
        &dir,
        "eval",
        serde_json::json!({
            "checkpoint": a.checkpoint,
            "sizes": proto.sizes,
            "stochastic": proto.stochastic,
            "low": proto.low,
            "high": proto.high,
            "instances": proto.n_instances,
            "scenarios": proto.n_scenarios,
            "seed": proto.seed,
            "methods": methods.iter().map(Method::name).collect::<Vec<_>>(),
            "paired_scenarios": true,
        }),
    )?;
    let table = evaluate(&proto, &methods).context("evaluating")?;
    std::fs::write(dir.join("results.csv"), table.to_csv()).context("writing results.csv")?;
    std::fs::write(dir.join("results.json"), table.to_json()).context("writing results.json")?;
    let text = match a.format.as_str() {
        "csv" => table.to_csv(),
        "json" => table.to_json() + "\n",
        _ => table.to_text(),
    };
    Ok(emit(&text)?)
}

fn rules_or_all(rules: &[Rule]) -> Vec<Rule> {
    if rules.is_empty() {
        Rule::DETERMINISTIC.to_vec()
    } else {
        rules.to_vec()
    }
}

fn baseline(a: &BaselineArgs) -> std::result::Result<(), Failure> {
    let seed = require_seed(a.problem.seed, "baseline")?;
    let instances: Vec<(String, Arc<Instance>)> = if a.files.is_empty() {
        let proto = protocol(&a.problem, "baseline", 1)?;
        let mut out = Vec::new();
        for &size in &proto.sizes {
            let set = jobshop_eval::EvalSet::generate(proto.family(size), proto.n_instances, 1, seed)
                .context("generating instances")?;
            out.extend(set.instances.into_iter().enumerate().map(|(k, i)| (format!("{size}_{k:04}"), i)));
        }
        out
    } else {
        a.files
            .iter()
            .map(|p| Ok((p.display().to_string(), Arc::new(load_instance(p)?))))
            .collect::<Result<_>>()?
    };
    let rules = rules_or_all(&a.rules);
    let dir = out_dir(&a.out, "baseline");
    write_manifest(
        &dir,
        "baseline",
        serde_json::json!({
            "instances": instances.iter().map(|(n, _)| n).collect::<Vec<_>>(),
            "rules": rules.iter().map(Rule::to_string).collect::<Vec<_>>(),
            "scenarios": a.problem.scenarios,
            "seed": seed,
        }),
    )?;
    let csv = baseline_csv(&baseline_report(&instances, &rules, a.problem.scenarios, seed));
    std::fs::write(dir.join("baseline.csv"), &csv).context("writing baseline.csv")?;
    Ok(emit(&csv)?)
}

fn curve(a: &CurveArgs) -> std::result::Result<(), Failure> {
    let seed = require_seed(a.seed, "curve")?;
    if a.scenarios == 0 {
        return usage("--scenarios must be positive");
    }
    let inst = Arc::new(load_instance(&a.instance)?);
    let mut methods: Vec<Method> = Vec::new();
    if let Some(ck) = &a.checkpoint {
        methods.push(Method::Policy {
            name: "policy".into(),
            policy: Arc::new(load_policy(ck)?),
        });
    }
    methods.extend(rules_or_all(&a.rules).into_iter().map(Method::Rule));
    methods.extend(exact_method(a.exact)?);
    let mut solvers = Vec::new();
    for m in &methods {
        let (mut states, _) = m.schedule(std::slice::from_ref(&inst), 1).context("scheduling")?;
        solvers.push((m.name(), states.remove(0)));
    }
    let dir = out_dir(&a.out, "curve");
    write_manifest(
        &dir,
        "curve",
        serde_json::json!({
            "instance": a.instance,
            "checkpoint": a.checkpoint,
            "methods": methods.iter().map(Method::name).collect::<Vec<_>>(),
            "scenarios": a.scenarios,
            "seed": seed,
        }),
    )?;
    let curve = cumulative_curve(&inst, &solvers, a.scenarios, seed);
    std::fs::write(dir.join("curve.csv"), curve.to_csv()).context("writing curve.csv")?;
    std::fs::write(dir.join("curve.dat"), curve.to_gnuplot()).context("writing curve.dat")?;
    let means: String = curve
        .series
        .iter()
        .map(|(name, _)| format!("{name}: mean {:.2}\n", curve.mean(name).unwrap()))
        .collect();
    emit(&means)?;
    eprintln!("wrote curve.csv and curve.dat to {}", dir.display());
    Ok(())
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let inst = Arc::new(load_instance(&a.instance)?);
    let mut text = String::new();
    if !a.graph && !a.schedule {
        let kind = if inst.is_stochastic() { "triangular durations" } else { "deterministic" };
        text += &format!("{} jobs x {} machines, {kind}\n", inst.n_jobs(), inst.n_machines());
        text += &format_instance(&inst);
        return emit(&text);
    }
    let (full, options) = match &a.checkpoint {
        Some(ck) => {
            let policy = load_policy(ck)?;
            (policy.rollout_argmax(State::reset(inst.clone()))?, policy.config().rewire_options())
        }
        None => (pdr_dispatch(inst.clone(), a.rule), Default::default()),
    };
    if a.graph {
        if a.prefix > inst.n_ops() {
            bail!("--prefix {} exceeds the {} operations", a.prefix, inst.n_ops());
        }
        let state = State::from_order(inst.clone(), &full.dispatch_order()[..a.prefix])?;
        let graph = jobshop_core::rewire::features(&state, options);
        text += "# edges: src dst type\n";
        text += &graph.edge_list();
        text += "# node features\n";
        text += &graph.features_csv();
    }
    if a.schedule {
        let schedule = sgs_starts(&full, &inst.mode_durations())?;
        text += &format!("# makespan {}\n", schedule.makespan());
        text += &schedule.to_csv(&inst);
    }
    emit(&text)
}
