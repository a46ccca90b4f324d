//! `dgcnn` command line: data generation, DG solves, training, evaluation,
//! rate tables, warm-start benchmarks and the Darcy demo.
//!
//! Every flag can also be given in a `--config` file of `key = value`
//! lines, where `key` is the long flag name. Flags on the command line win.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use dgcnn::dg::{
    dg_error, exact_error, mass_error, relative_residual, solve_dg_with_report, DgConfig, DgOperators, Norm, Scheme, Source,
};
use dgcnn::io::{self, fmt_f64 as num};
use dgcnn::mesh::{build_mesh, vector_to_image, StructuredMesh};
use dgcnn::nn::{Activation, UNetConfig};
use dgcnn::symbolic::{parse_expr, BankKind, Manufactured};
use dgcnn::train::{
    evaluate, generate_dataset, interpolate_prediction, predict, rate_table, train_supervised_with, train_unsupervised_with,
    warmstart_benchmark, Metric, SupervisedConfig, UnsupervisedConfig, UnsupervisedRun, EXACT_QUAD_ORDER,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dgcnn", version, about = "DG Poisson solver with CNN surrogates")]
struct Cli {
    /// file of `key = value` lines supplying default flag values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw random manufactured solutions and store their DG labels
    GenData(GenDataArgs),
    /// Solve one DG problem
    Solve(SolveArgs),
    /// Train a network on a dataset with the supervised loss
    TrainSup(TrainSupArgs),
    /// Fit a network to one source with the label-free loss
    TrainUnsup(TrainUnsupArgs),
    /// Error table of a trained network on a dataset
    Eval(EvalArgs),
    /// Convergence rates from metrics files on successive grids
    Rates(RatesArgs),
    /// Gauss-Seidel from zero and from supplied initial guesses
    Warmstart(WarmstartArgs),
    /// Darcy source: solve, unsupervised fits on two grids, warm starts
    DarcyDemo(DarcyDemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BankArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Darcy,
    Sinsin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActivationArg {
    Identity,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Args)]
struct SchemeArgs {
    /// symmetry parameter: -1 for SIPG, 1 for NIPG
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    eps: i32,
    /// penalty parameter
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

impl SchemeArgs {
    fn config(&self) -> Result<DgConfig, CliError> {
        let scheme = Scheme::from_epsilon(self.eps).map_err(|e| CliError::Usage(e.to_string()))?;
        DgConfig::new(scheme, self.sigma).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Args)]
struct ProblemArgs {
    /// built-in problem
    #[arg(long, value_enum, conflicts_with = "expr")]
    scenario: Option<ScenarioArg>,
    /// manufactured solution u(x, y), e.g. "x*(1-x)*y*(1-y)"
    #[arg(long)]
    expr: Option<String>,
}

#[derive(Debug, Clone, Args)]
struct NetArgs {
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 7)]
    kernel: usize,
    #[arg(long, value_enum, default_value_t = ActivationArg::Identity)]
    activation: ActivationArg,
    /// add a bias to every convolution
    #[arg(long)]
    bias: bool,
}

impl NetArgs {
    fn config(&self, n: usize) -> Result<UNetConfig, CliError> {
        let mut cfg = UNetConfig::with(2 * n, self.channels, self.kernel);
        cfg.activation = match self.activation {
            ActivationArg::Identity => Activation::Identity,
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        };
        cfg.use_bias = self.bias;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// global gradient-norm clip
    #[arg(long, default_value_t = 1e-3)]
    clip: f64,
    #[arg(long, default_value_t = 1e-7)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, value_enum, default_value_t = BankArg::Train)]
    bank: BankArg,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    problem: ProblemArgs,
    /// element-wise CSV of the solution
    #[arg(long)]
    report: Option<PathBuf>,
    /// raw little-endian f64 dump of the coefficients
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainSupArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// defaults to min(32, dataset size)
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    net: NetArgs,
    /// checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// per-epoch loss CSV
    #[arg(long)]
    history: Option<PathBuf>,
    /// also store the optimizer moments in the checkpoint
    #[arg(long)]
    save_optimizer: bool,
}

#[derive(Debug, Args)]
struct TrainUnsupArgs {
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    problem: ProblemArgs,
    /// discontinuity penalty
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    net: NetArgs,
    /// raw dump of the best prediction
    #[arg(long)]
    dump: Option<PathBuf>,
    /// per-step loss CSV
    #[arg(long)]
    history: Option<PathBuf>,
    /// error summary CSV
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// trained checkpoint; without it the DG labels themselves are scored
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatesArgs {
    /// metrics CSVs from `eval`, coarse to fine
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    /// which reference the errors are measured against
    #[arg(long, value_enum, default_value_t = Reference::Exact)]
    against: Reference,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Reference {
    Exact,
    Dg,
}

#[derive(Debug, Args)]
struct WarmstartArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    problem: ProblemArgs,
    /// NAME=PATH of a raw coefficient dump; coarser grids are interpolated
    #[arg(long)]
    guess: Vec<String>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// residual histories, one column per guess
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DarcyDemoArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    coarse_n: usize,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 2000)]
    coarse_steps: usize,
    /// channels of the fine-grid network
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    coarse_channels: usize,
    #[arg(long, default_value_t = 7)]
    kernel: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

macro_rules! runtime {
    ($e:expr) => {
        $e.map_err(|e| CliError::Runtime(anyhow::Error::new(e)))
    };
}

/// Run the command line and return the process exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    match run(argv) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn command() -> clap::Command {
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let argv = merge_config(argv)?;
    let matches = match command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string().trim_end().trim_start_matches("error: ").to_string()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Solve(a) => solve(a),
        Command::TrainSup(a) => train_sup(a),
        Command::TrainUnsup(a) => train_unsup(a),
        Command::Eval(a) => eval(a),
        Command::Rates(a) => rates(a),
        Command::Warmstart(a) => warmstart(a),
        Command::DarcyDemo(a) => darcy_demo(a),
    }
}

// ---------------------------------------------------------------------------
// config files

/// `key = value` pairs; blank lines and `#` comments are ignored.
fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected `key = value`", i + 1)));
        };
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Splice config-file values in front of the subcommand's own flags so
/// that the command line overrides them.
fn merge_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
    let pairs = parse_config(&text)?;
    let cmd = command();
    let Some(pos) = argv
        .iter()
        .enumerate()
        .skip(1)
        .position(|(_, a)| cmd.get_subcommands().any(|s| s.get_name() == a))
        .map(|p| p + 1)
    else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(&argv[pos]).expect("found above");
    let mut extra = Vec::new();
    for (key, value) in pairs {
        if key == "config" {
            continue;
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(CliError::Usage(format!("config key `{key}` is not a flag of `{}`", sub.get_name())));
        };
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}={value}"));
        } else {
            match value.as_str() {
                "true" | "1" | "yes" => extra.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                _ => return Err(CliError::Usage(format!("config key `{key}` expects true or false, got `{value}`"))),
            }
        }
    }
    let mut merged = argv[..=pos].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[pos + 1..]);
    Ok(merged)
}

// ---------------------------------------------------------------------------
// helpers

fn require_file(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    runtime!(io::write_text(path, text))
}

enum Problem {
    Darcy,
    Manufactured(Box<Manufactured>),
}

impl Problem {
    fn from_args(p: &ProblemArgs, default: Option<ScenarioArg>) -> Result<Self, CliError> {
        if let Some(text) = &p.expr {
            let u = parse_expr(text).map_err(|e| CliError::Usage(format!("--expr: {e}")))?;
            return Ok(Problem::Manufactured(Box::new(Manufactured::new(u))));
        }
        match p.scenario.or(default) {
            Some(ScenarioArg::Darcy) => Ok(Problem::Darcy),
            Some(ScenarioArg::Sinsin) => Ok(Problem::Manufactured(Box::new(Manufactured::new(
                parse_expr("sin(pi*x)*sin(pi*y)").expect("valid"),
            )))),
            None => Err(CliError::Usage("give --scenario or --expr".into())),
        }
    }

    fn source(&self) -> Source {
        match self {
            Problem::Darcy => Source::darcy(),
            Problem::Manufactured(m) => Source::Expr(m.f.clone()),
        }
    }

    fn exact(&self) -> Option<&Manufactured> {
        match self {
            Problem::Darcy => None,
            Problem::Manufactured(m) => Some(m),
        }
    }
}

fn mesh(n: usize) -> Result<StructuredMesh, CliError> {
    build_mesh(n).map_err(|e| CliError::Usage(e.to_string()))
}

fn check_unit(name: &str, v: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(CliError::Usage(format!("--{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// subcommands

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let config = a.scheme.config()?;
    mesh(a.n)?;
    let bank = match a.bank {
        BankArg::Train => BankKind::Train,
        BankArg::Test => BankKind::Test,
    };
    let t = Instant::now();
    let data = runtime!(generate_dataset(a.n, a.count, bank, config, a.seed))?;
    runtime!(io::write_dataset(&a.out, &data))?;
    println!(
        "wrote {} samples on N={} ({} {}) to {} in {:.1} s",
        data.samples.len(),
        a.n,
        config.scheme.name(),
        config.sigma,
        a.out.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn solve(a: SolveArgs) -> Result<(), CliError> {
    let config = a.scheme.config()?;
    let problem = Problem::from_args(&a.problem, None)?;
    let m = mesh(a.n)?;
    let ops = DgOperators::assemble(&m, config);
    let rhs = runtime!(ops.rhs(&problem.source()))?;
    let (sol, report) = runtime!(solve_dg_with_report(&ops, &rhs))?;
    let res = runtime!(relative_residual(&ops, &rhs, &sol.coeffs))?;
    let mass = runtime!(mass_error(&ops, &rhs, &sol.coeffs))?;
    let max_mass = mass.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    println!(
        "N={} {} sigma={}: {} iterations, relative residual {res:.3e}, max element mass error {max_mass:.3e}",
        a.n,
        config.scheme.name(),
        config.sigma,
        report.iterations
    );
    if let Some(exact) = problem.exact() {
        let l2 = runtime!(exact_error(&m, exact, &sol.coeffs, Norm::L2, EXACT_QUAD_ORDER))?;
        let h1 = runtime!(exact_error(&m, exact, &sol.coeffs, Norm::H1, EXACT_QUAD_ORDER))?;
        println!("L2 error {l2:.6e}, broken H1 error {h1:.6e}");
    }
    let umax = sol.coeffs.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    println!("max |u_h| {umax:.6e}");
    if let Some(path) = &a.report {
        let mut s = String::from("element,i,j,x,y,mean,c0,c1,c2,c3,mass_error\n");
        let h = m.h();
        for e in 0..m.num_elements() {
            let (i, j) = m.element_coords(e);
            let c = &sol.coeffs[4 * e..4 * e + 4];
            let mean = 0.25 * c.iter().sum::<f64>();
            let _ = writeln!(
                s,
                "{e},{i},{j},{},{},{},{},{},{},{},{}",
                num((i as f64 + 0.5) * h),
                num((j as f64 + 0.5) * h),
                num(mean),
                num(c[0]),
                num(c[1]),
                num(c[2]),
                num(c[3]),
                num(mass[e])
            );
        }
        write_out(path, &s)?;
    }
    if let Some(path) = &a.dump {
        runtime!(io::write_f64_dump(path, &sol.coeffs))?;
    }
    Ok(())
}

fn train_sup(a: TrainSupArgs) -> Result<(), CliError> {
    require_file(&a.data)?;
    check_unit("beta", a.optim.beta)?;
    let data = runtime!(io::read_dataset(&a.data))?;
    let m = mesh(data.n)?;
    let ops = DgOperators::assemble(&m, data.config);
    let net_cfg = a.net.config(data.n)?;
    let cfg = SupervisedConfig {
        beta: a.optim.beta,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr0: a.optim.lr,
        seed: a.optim.seed,
        clip_norm: a.optim.clip,
        weight_decay: a.optim.weight_decay,
    };
    let t = Instant::now();
    let every = (a.epochs / 10).max(1);
    let run = runtime!(train_supervised_with(&data, &ops, &cfg, net_cfg, |epoch, loss| {
        if epoch % every == 0 || epoch + 1 == a.epochs {
            eprintln!("epoch {epoch:>4}  loss {loss:.6e}  {:.1} s", t.elapsed().as_secs_f64());
        }
    }))?;
    let state = a.save_optimizer.then_some(&run.optimizer);
    runtime!(io::save_checkpoint(&a.out, &run.net, state))?;
    if let Some(path) = &a.history {
        write_out(path, &io::series_csv("epoch", "loss", &run.epoch_losses))?;
    }
    println!(
        "trained {} parameters for {} epochs in {:.1} s, final loss {:.6e}",
        run.net.parameter_count(),
        a.epochs,
        t.elapsed().as_secs_f64(),
        run.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn unsup_report(
    m: &StructuredMesh,
    ops: &DgOperators,
    label: &[f64],
    exact: Option<&Manufactured>,
    run: &UnsupervisedRun,
) -> Result<String, CliError> {
    let mut s = String::from("quantity,value\n");
    let _ = writeln!(s, "best_step,{}", run.best_step);
    let _ = writeln!(s, "best_loss,{}", num(run.best_loss));
    if let Some(u) = exact {
        let l2 = runtime!(exact_error(m, u, &run.best, Norm::L2, EXACT_QUAD_ORDER))?;
        let h1 = runtime!(exact_error(m, u, &run.best, Norm::H1, EXACT_QUAD_ORDER))?;
        let _ = writeln!(s, "L2_vs_exact,{}", num(l2));
        let _ = writeln!(s, "H1_vs_exact,{}", num(h1));
    }
    let l2 = runtime!(dg_error(ops, label, &run.best, Norm::L2))?;
    let h1 = runtime!(dg_error(ops, label, &run.best, Norm::H1))?;
    let _ = writeln!(s, "L2_vs_dg,{}", num(l2));
    let _ = writeln!(s, "H1_vs_dg,{}", num(h1));
    Ok(s)
}

fn train_unsup(a: TrainUnsupArgs) -> Result<(), CliError> {
    check_unit("beta", a.optim.beta)?;
    if a.eta < 0.0 {
        return Err(CliError::Usage(format!("--eta must be non-negative, got {}", a.eta)));
    }
    let config = a.scheme.config()?;
    let problem = Problem::from_args(&a.problem, Some(ScenarioArg::Sinsin))?;
    let m = mesh(a.n)?;
    let ops = DgOperators::assemble(&m, config);
    let rhs = runtime!(ops.rhs(&problem.source()))?;
    let input = runtime!(vector_to_image(&rhs.proj_coeffs, m.layout()))?;
    let net_cfg = a.net.config(a.n)?;
    let cfg = UnsupervisedConfig {
        beta: a.optim.beta,
        sigma: config.sigma,
        eta: a.eta,
        steps: a.steps,
        lr0: a.optim.lr,
        seed: a.optim.seed,
        clip_norm: a.optim.clip,
        weight_decay: a.optim.weight_decay,
    };
    let t = Instant::now();
    let every = (a.steps / 10).max(1);
    let run = runtime!(train_unsupervised_with(&input, &ops, &rhs.element_source, &cfg, net_cfg, |step, loss| {
        if step % every == 0 {
            eprintln!("step {step:>6}  loss {loss:.6e}  {:.1} s", t.elapsed().as_secs_f64());
        }
    }))?;
    let (label, _) = runtime!(solve_dg_with_report(&ops, &rhs))?;
    let report = unsup_report(&m, &ops, &label.coeffs, problem.exact(), &run)?;
    print!("{}", report.lines().skip(1).map(|l| l.replace(',', " ") + "\n").collect::<String>());
    println!("{} steps in {:.1} s", a.steps, t.elapsed().as_secs_f64());
    if let Some(path) = &a.report {
        write_out(path, &report)?;
    }
    if let Some(path) = &a.history {
        let mut s = String::from("step,loss,best_loss\n");
        for (i, (l, b)) in run.losses.iter().zip(&run.best_losses).enumerate() {
            let _ = writeln!(s, "{i},{},{}", num(*l), num(*b));
        }
        write_out(path, &s)?;
    }
    if let Some(path) = &a.dump {
        runtime!(io::write_f64_dump(path, &run.best))?;
    }
    if let Some(path) = &a.checkpoint {
        runtime!(io::save_checkpoint(path, &run.net, None))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    require_file(&a.data)?;
    if let Some(model) = &a.model {
        require_file(model)?;
    }
    let data = runtime!(io::read_dataset(&a.data))?;
    let m = mesh(data.n)?;
    let ops = DgOperators::assemble(&m, data.config);
    let preds = match &a.model {
        Some(path) => {
            let net = io::load_checkpoint_for_grid(path, data.n).map_err(|e| match e {
                io::IoError::Config(msg) => CliError::Usage(msg),
                other => CliError::Runtime(other.into()),
            })?;
            let images: Vec<&[f64]> = data.samples.iter().map(|s| s.input.as_slice()).collect();
            runtime!(predict(&net, &images, m.layout(), 32))?
        }
        None => data.samples.iter().map(|s| s.label.clone()).collect(),
    };
    let table = runtime!(evaluate(&ops, &data.samples, &preds))?;
    for metric in Metric::ALL {
        if let Some(agg) = table.aggregate(metric) {
            println!(
                "{:<12} mean {:.4e}  std {:.4e}  median {:.4e}",
                metric.column(),
                agg.mean,
                agg.std,
                agg.median
            );
        }
    }
    if let Some(path) = &a.out {
        write_out(path, &io::metrics_csv(&table))?;
    }
    Ok(())
}

fn rates(a: RatesArgs) -> Result<(), CliError> {
    let mut levels = Vec::new();
    for path in &a.inputs {
        require_file(path)?;
        let text = runtime!(io::read_text(path))?;
        let table = runtime!(io::parse_metrics_csv(&text))?;
        if table.rows.is_empty() {
            return Err(CliError::Runtime(anyhow!("{} has no sample rows", path.display())));
        }
        let (l2, h1) = match a.against {
            Reference::Exact => (table.median(Metric::L2Exact), table.median(Metric::H1Exact)),
            Reference::Dg => (table.median(Metric::L2Dg), table.median(Metric::H1Dg)),
        };
        levels.push((table.n, l2, h1));
    }
    let rows = rate_table(&levels).map_err(|e| CliError::Usage(e.to_string()))?;
    let fmt = |r: Option<f64>| r.map_or(String::new(), |v| format!("{v:.4}"));
    let mut s = String::from("n,L2_median,H1_median,L2_rate,H1_rate\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.n, num(r.l2), num(r.h1), fmt(r.l2_rate), fmt(r.h1_rate));
        println!(
            "N={:<4} L2 {:.4e}  H1 {:.4e}  rates {} {}",
            r.n,
            r.l2,
            r.h1,
            fmt(r.l2_rate),
            fmt(r.h1_rate)
        );
    }
    if let Some(path) = &a.out {
        write_out(path, &s)?;
    }
    Ok(())
}

/// Read a raw guess and bring it to the `n` mesh.
fn load_guess(path: &Path, n: usize) -> Result<Vec<f64>, CliError> {
    require_file(path)?;
    let v = runtime!(io::read_f64_dump(path))?;
    let dofs = 4 * n * n;
    if v.len() == dofs {
        return Ok(v);
    }
    let coarse = ((v.len() / 4) as f64).sqrt().round() as usize;
    if 4 * coarse * coarse != v.len() || coarse == 0 {
        return Err(CliError::Usage(format!("{} does not hold a square-mesh DOF vector", path.display())));
    }
    runtime!(interpolate_prediction(&v, coarse, n))
}

fn history_csv(names: &[String], histories: &[&[f64]]) -> String {
    let mut s = String::from("iteration");
    for name in names {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    let len = histories.iter().map(|h| h.len()).max().unwrap_or(0);
    for i in 0..len {
        let _ = write!(s, "{i}");
        for h in histories {
            match h.get(i) {
                Some(v) => {
                    let _ = write!(s, ",{}", num(*v));
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

fn warmstart(a: WarmstartArgs) -> Result<(), CliError> {
    let config = a.scheme.config()?;
    let problem = Problem::from_args(&a.problem, Some(ScenarioArg::Darcy))?;
    let m = mesh(a.n)?;
    let ops = DgOperators::assemble(&m, config);
    let rhs = runtime!(ops.rhs(&problem.source()))?;
    let mut guesses = vec![("zero".to_string(), vec![0.0; m.num_dofs()])];
    for g in &a.guess {
        let Some((name, path)) = g.split_once('=') else {
            return Err(CliError::Usage(format!("--guess expects NAME=PATH, got `{g}`")));
        };
        guesses.push((name.to_string(), load_guess(Path::new(path), a.n)?));
    }
    let runs = runtime!(warmstart_benchmark(&ops, &rhs.load, &guesses, a.tol, a.max_iter))?;
    for r in &runs {
        println!(
            "{:<16} {:>7} sweeps  final residual {:.3e}{}",
            r.name,
            r.report.iterations,
            r.report.final_residual(),
            if r.report.converged { "" } else { "  (not converged)" }
        );
    }
    if let Some(path) = &a.out {
        let names: Vec<String> = runs.iter().map(|r| r.name.clone()).collect();
        let histories: Vec<&[f64]> = runs.iter().map(|r| r.report.residual_history.as_slice()).collect();
        write_out(path, &history_csv(&names, &histories))?;
    }
    Ok(())
}

fn darcy_demo(a: DarcyDemoArgs) -> Result<(), CliError> {
    let config = a.scheme.config()?;
    if a.coarse_n >= a.n {
        return Err(CliError::Usage("--coarse-n must be smaller than --n".into()));
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let t = Instant::now();
    let fit = |n: usize, channels: usize, steps: usize| -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let m = mesh(n)?;
        let ops = DgOperators::assemble(&m, config);
        let rhs = runtime!(ops.rhs(&Source::darcy()))?;
        let input = runtime!(vector_to_image(&rhs.proj_coeffs, m.layout()))?;
        let net_cfg = NetArgs {
            channels,
            kernel: a.kernel,
            activation: ActivationArg::Identity,
            bias: false,
        }
        .config(n)?;
        let cfg = UnsupervisedConfig {
            sigma: config.sigma,
            eta: a.eta,
            steps,
            seed: a.seed,
            ..UnsupervisedConfig::default()
        };
        let run = runtime!(train_unsupervised_with(&input, &ops, &rhs.element_source, &cfg, net_cfg, |_, _| {}))?;
        println!(
            "N={n}: {steps} unsupervised steps with {channels} channels, best loss {:.3e} at step {} ({:.1} s)",
            run.best_loss,
            run.best_step,
            t.elapsed().as_secs_f64()
        );
        Ok((run.best, run.losses))
    };
    let (fine, fine_losses) = fit(a.n, a.channels, a.steps)?;
    let (coarse, coarse_losses) = fit(a.coarse_n, a.coarse_channels, a.coarse_steps)?;
    let interpolated = runtime!(interpolate_prediction(&coarse, a.coarse_n, a.n))?;

    let m = mesh(a.n)?;
    let ops = DgOperators::assemble(&m, config);
    let rhs = runtime!(ops.rhs(&Source::darcy()))?;
    let (sol, _) = runtime!(solve_dg_with_report(&ops, &rhs))?;
    let umax = sol.coeffs.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    println!("DG solution on N={}: max |u_h| {umax:.4e}", a.n);
    let guesses = vec![
        ("zero".to_string(), vec![0.0; m.num_dofs()]),
        ("cnn".to_string(), fine.clone()),
        (format!("cnn_n{}", a.coarse_n), interpolated),
    ];
    let runs = runtime!(warmstart_benchmark(&ops, &rhs.load, &guesses, a.tol, 200_000))?;
    for r in &runs {
        println!("{:<10} {:>7} Gauss-Seidel sweeps to {:.0e}", r.name, r.report.iterations, a.tol);
    }
    if runs.iter().any(|r| !r.report.converged) {
        return Err(anyhow!("Gauss-Seidel did not converge from every guess").into());
    }
    if let Some(dir) = &a.out_dir {
        let names: Vec<String> = runs.iter().map(|r| r.name.clone()).collect();
        let histories: Vec<&[f64]> = runs.iter().map(|r| r.report.residual_history.as_slice()).collect();
        write_out(&dir.join("warmstart.csv"), &history_csv(&names, &histories))?;
        write_out(&dir.join("loss_fine.csv"), &io::series_csv("step", "loss", &fine_losses))?;
        write_out(&dir.join("loss_coarse.csv"), &io::series_csv("step", "loss", &coarse_losses))?;
        runtime!(io::write_f64_dump(dir.join("dg_solution.bin"), &sol.coeffs))?;
        runtime!(io::write_f64_dump(dir.join("cnn_prediction.bin"), &fine))?;
        runtime!(io::write_f64_dump(dir.join("cnn_coarse_prediction.bin"), &coarse))?;
    }
    Ok(())
}
