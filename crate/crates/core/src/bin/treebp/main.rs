//! `treebp` command-line interface.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use treebp::data::fetch::{fetch, Source};
use treebp::data::{load, Dataset, DatasetKind};
use treebp::grad::gradcheck::FdReport;
use treebp::grad::suite::{fd_lenet5, fd_tree3, pruned_equivalence_suite, Fault};
use treebp::grad::{Engine, HistScale};
use treebp::models::{count_gradient_instances, count_routes, Arch, Model};
use treebp::train::analysis::{gradient_histograms, sparsity_sweep};
use treebp::train::{
    builtin_plans, evaluate_report, load_checkpoint, plan_by_name, run_replicates, save_checkpoint, train, write_json,
    write_metrics_csv, Threshold, TrainOptions, TrainPlan,
};
use treebp::Activation;

const OPTIMIZER_HELP: &str = "\
Optimizer: SGD with Nesterov momentum and L2 decay, on mini-batch mean gradients g:
  g' = g + alpha*w;  v = mu*v + g';  w = w - eta*(g' + mu*v)";

#[derive(Parser)]
#[command(name = "treebp", version, about = "Tree-3 networks with single-route pruned backpropagation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Download and verify MNIST and/or CIFAR-10.
    Fetch(FetchArgs),
    /// Train a plan and write metrics, a summary and a checkpoint.
    Train(TrainArgs),
    /// Test-set accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Compare the pruned and reference backward passes, and both against finite differences.
    Gradcheck(GradcheckArgs),
    /// Per-stage zero-gradient fractions over the test set (CSV).
    Sparsity(SweepArgs),
    /// 1000-bin gradient magnitude histograms over the test set (CSV).
    Gradhist(HistArgs),
    /// Route and gradient-instance counts.
    Routes(RoutesArgs),
    /// List the built-in plans.
    Plans {
        /// Print every plan as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct DataArg {
    /// Dataset root (holds `mnist/` and `cifar-10-batches-bin/`).
    #[arg(long, env = "TREEBP_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetChoice {
    Mnist,
    Cifar10,
    All,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long, value_enum, default_value = "all")]
    dataset: DatasetChoice,
    #[command(flatten)]
    data: DataArg,
    /// Directory holding already-downloaded archives, instead of the network.
    #[arg(long)]
    from: Option<PathBuf>,
}

#[derive(Args)]
#[group(id = "plan_source", required = true, multiple = false)]
struct PlanArg {
    /// Built-in plan name (see `treebp plans`).
    #[arg(long, group = "plan_source")]
    plan: Option<String>,
    /// Plan as a JSON file.
    #[arg(long, group = "plan_source")]
    plan_file: Option<PathBuf>,
}

impl PlanArg {
    fn resolve(&self) -> Result<TrainPlan> {
        Ok(match (&self.plan, &self.plan_file) {
            (Some(name), _) => plan_by_name(name)?,
            (_, Some(path)) => TrainPlan::from_file(path).with_context(|| format!("reading {}", path.display()))?,
            _ => unreachable!("clap enforces one plan source"),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    plan: PlanArg,
    #[command(flatten)]
    data: DataArg,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Train this many seeds (seed, seed+1, ...) and write a summary.
    #[arg(long)]
    replicates: Option<usize>,
    /// Allow full-scale plans to run at their full length.
    #[arg(long)]
    full: bool,
    #[arg(long, value_enum)]
    pruned_bp: Option<OnOff>,
    /// Gradient threshold: a magnitude such as 1e-4, or an active share such as 0.6%.
    #[arg(long)]
    threshold: Option<Threshold>,
    /// Use only the first N training examples.
    #[arg(long)]
    dataset_size: Option<usize>,
    /// Evaluate on at most N test examples per epoch.
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArg,
    /// Evaluate on the first N test examples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum CheckArch {
    Tree3,
    Lenet5,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    SignFlip,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    arch: CheckArch,
    /// Random instances in the pruned-vs-reference suite.
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Args)]
struct ModelArg {
    /// Checkpoint to analyse.
    #[arg(long, conflicts_with_all = ["plan", "plan_file"])]
    checkpoint: Option<PathBuf>,
    /// Analyse a freshly initialized model of this plan.
    #[arg(long)]
    plan: Option<String>,
    #[arg(long)]
    plan_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl ModelArg {
    fn resolve(&self) -> Result<Model<f32>> {
        if let Some(p) = &self.checkpoint {
            return load_checkpoint(p).with_context(|| format!("loading {}", p.display()));
        }
        let plan = match (&self.plan, &self.plan_file) {
            (Some(_), Some(_)) => bail!("give either --plan or --plan-file, not both"),
            (Some(n), None) => plan_by_name(n)?,
            (None, Some(f)) => TrainPlan::from_file(f)?,
            (None, None) => bail!("give --checkpoint, --plan or --plan-file"),
        };
        Ok(Model::init(&plan.model_spec(), self.seed, plan.init)?)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    data: DataArg,
    /// Test examples swept.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    resamples: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HistArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    data: DataArg,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, value_enum, default_value = "log")]
    scale: ScaleArg,
    /// Directory for the histogram CSVs.
    #[arg(long, default_value = "gradhist")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Log,
    Linear,
}

#[derive(Args)]
struct RoutesArgs {
    #[arg(long, default_value = "tree3")]
    arch: Arch,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 16)]
    m: usize,
    /// Print only the gradient-instance count.
    #[arg(long)]
    instances: bool,
}

fn plans_help() -> String {
    let mut s = String::from("Built-in plans:\n");
    for p in builtin_plans() {
        s += &format!("  {:24} {}\n", p.name, p.describe());
    }
    s + "\n" + OPTIMIZER_HELP
}

fn main() -> ExitCode {
    let help = plans_help();
    let cmd = Cli::command().mut_subcommand("train", |c| c.after_help(help.clone()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Fetch(a) => cmd_fetch(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Sparsity(a) => cmd_sparsity(a),
        Cmd::Gradhist(a) => cmd_gradhist(a),
        Cmd::Routes(a) => cmd_routes(a),
        Cmd::Plans { json } => {
            for p in builtin_plans() {
                if json {
                    println!("{}", serde_json::to_string(&p)?);
                } else {
                    println!("{:24} {}", p.name, p.describe());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_fetch(a: FetchArgs) -> Result<ExitCode> {
    let kinds: &[DatasetKind] = match a.dataset {
        DatasetChoice::Mnist => &[DatasetKind::Mnist],
        DatasetChoice::Cifar10 => &[DatasetKind::Cifar10],
        DatasetChoice::All => &[DatasetKind::Mnist, DatasetKind::Cifar10],
    };
    let source = a.from.map(Source::Local);
    for &k in kinds {
        let dir = fetch(k, &a.data.data_dir, source.as_ref())?;
        println!("{}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_data(kind: DatasetKind, root: &Path) -> Result<(Dataset, Dataset)> {
    load(kind, root).with_context(|| format!("loading {kind:?} from {} (try `treebp fetch`)", root.display()))
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut plan = a.plan.resolve()?;
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    if let Some(e) = a.epochs {
        plan.epochs = e;
    }
    if plan.full_scale && !a.full && a.epochs.is_none() {
        bail!(
            "`{}` is a full-scale plan ({} epochs); pass --full to run it or --epochs to shorten it",
            plan.name,
            plan.epochs
        );
    }
    if let Some(p) = a.pruned_bp {
        plan.pruned_bp = matches!(p, OnOff::On);
    }
    if a.threshold.is_some() {
        plan.threshold = a.threshold;
    }
    if a.dataset_size.is_some() {
        plan.dataset_size = a.dataset_size;
    }
    plan.validate()?;
    let (train_set, test_set) = load_data(plan.model_spec().dataset(), &a.data.data_dir)?;
    let opts = TrainOptions {
        verbose: !a.quiet,
        test_limit: a.test_limit,
    };
    fs::create_dir_all(&a.out)?;
    let save = |p: &TrainPlan, r: &treebp::Result<(treebp::train::RunResult, Model<f32>)>| -> Result<PathBuf> {
        let dir = a.out.join(format!("{}-seed{}", p.name, p.seed));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("plan.json"), p.to_json() + "\n")?;
        if let Ok((res, model)) = r {
            write_metrics_csv(&dir.join("metrics.csv"), res)?;
            write_json(&dir.join("result.json"), res)?;
            save_checkpoint(model, &dir.join("model.ckpt"))?;
        }
        Ok(dir)
    };
    match a.replicates {
        None => {
            let r = train(&plan, &train_set, &test_set, &opts);
            let dir = save(&plan, &r)?;
            let (res, _) = r?;
            println!(
                "{}: final test accuracy {:.4} after {} epochs ({:.0}s); outputs in {}",
                plan.name,
                res.final_test_accuracy,
                res.epochs.len(),
                res.wall_time,
                dir.display()
            );
        }
        Some(n) => {
            let mut failures = Vec::new();
            let summary = run_replicates(&plan, n, &train_set, &test_set, &opts, |p, r| {
                if let Err(e) = save(p, r) {
                    failures.push(format!("seed {}: {e:#}", p.seed));
                }
            })?;
            let path = a.out.join(format!("{}-summary.json", plan.name));
            write_json(&path, &summary)?;
            println!(
                "{}: {} runs, mean {:.4} std {:.4}; summary in {}",
                plan.name,
                summary.n,
                summary.mean,
                summary.std,
                path.display()
            );
            for f in failures {
                eprintln!("warning: could not save outputs for {f}");
            }
            if summary.n < n {
                eprintln!("{} of {n} runs failed; see the summary", n - summary.n);
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let model = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (_, test) = load_data(model.spec().dataset(), &a.data.data_dir)?;
    let test = match a.limit {
        Some(n) => test.head(n),
        None => test,
    };
    let r = evaluate_report(&model, &test)?;
    println!(
        "{}: accuracy {:.4} mean loss {:.4} over {} examples",
        model.spec().describe(),
        r.accuracy,
        r.mean_loss,
        r.examples
    );
    Ok(ExitCode::SUCCESS)
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn fd_line(name: &str, r: &FdReport) -> bool {
    let ok = r.max_rel_err < 1e-6;
    print!(
        "{name}: fd max rel err {:.2e} over {} coordinates ({} skipped at kinks) < 1e-6: {}",
        r.max_rel_err,
        r.checked,
        r.skipped,
        pass(ok)
    );
    match (ok, r.worst) {
        (false, Some((t, i, a, n))) => println!(" [tensor {t} index {i}: analytic {a:e}, numeric {n:e}]"),
        _ => println!(),
    }
    ok
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let fault = match a.inject_fault {
        Some(FaultArg::SignFlip) => Fault::SignFlip,
        None => Fault::None,
    };
    let mut ok = true;
    if a.arch != CheckArch::Lenet5 {
        let r = pruned_equivalence_suite(a.cases, a.seed, 15, 16, fault)?;
        let good = r.passed(1e-5);
        println!(
            "tree3: pruned==reference over {} instances (64-bit mismatches {}, 32-bit max rel {:.2e}): {}",
            r.cases,
            r.f64_mismatches,
            r.f32_max_rel,
            pass(good)
        );
        if let Some(f) = r.first_failure.filter(|_| !good) {
            println!("  first failure: {f}");
        }
        ok &= good;
        ok &= fd_line("tree3 relu", &fd_tree3(a.seed, Activation::Relu, fault)?);
        ok &= fd_line("tree3 sigmoid", &fd_tree3(a.seed, Activation::Sigmoid, fault)?);
    }
    if a.arch != CheckArch::Tree3 {
        ok &= fd_line("lenet5", &fd_lenet5(a.seed, fault)?);
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_sparsity(a: SweepArgs) -> Result<ExitCode> {
    let model = a.model.resolve()?;
    let (_, test) = load_data(model.spec().dataset(), &a.data.data_dir)?;
    let s = sparsity_sweep(&model, &test, Some(a.samples), a.resamples, a.model.seed, Engine::select(true, &model))?;
    let out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "fraction_zero", "std", "examples", "resamples"])?;
    let (f, sd) = (s.fraction_zero(), s.resample_std());
    for (i, layer) in ["conv", "tree", "fc"].into_iter().enumerate() {
        w.write_record([
            layer.to_string(),
            f[i].to_string(),
            sd[i].to_string(),
            s.overall.sample_count.to_string(),
            s.resample_means.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradhist(a: HistArgs) -> Result<ExitCode> {
    let model = a.model.resolve()?;
    let (_, test) = load_data(model.spec().dataset(), &a.data.data_dir)?;
    let scale = match a.scale {
        ScaleArg::Log => HistScale::Log,
        ScaleArg::Linear => HistScale::Linear,
    };
    let h = gradient_histograms(&model, &test, Some(a.samples), a.model.seed, scale)?;
    fs::create_dir_all(&a.out)?;
    for (name, hist) in h.named() {
        let path = a.out.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["bin_low", "bin_high", "count"])?;
        for (lo, hi, c) in hist.rows() {
            w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        w.flush()?;
        println!("{}: {} values, delta0 (0.97 quantile) = {:e}", path.display(), hist.total(), hist.quantile(0.97));
    }
    println!("examples: {} correct, {} wrong", h.correct, h.wrong);
    Ok(ExitCode::SUCCESS)
}

fn cmd_routes(a: RoutesArgs) -> Result<ExitCode> {
    let inst = count_gradient_instances(a.arch, a.k, a.m);
    if a.instances {
        println!("{}", inst.pre_pool);
        return Ok(ExitCode::SUCCESS);
    }
    println!("{}", count_routes(a.arch));
    let (name, dims) = match a.arch {
        Arch::Tree3 => ("tree3", format!(" (K={}, M={})", a.k, a.m)),
        Arch::LeNet5 => ("lenet5", String::new()),
    };
    eprintln!(
        "{name}{dims}: layer-1 gradient instances {} before pooling, {} after",
        inst.pre_pool, inst.post_pool
    );
    Ok(ExitCode::SUCCESS)
}
