//! Subcommands.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pvbi::complexity::{table_report, ComplexityTable};
use pvbi::exec::Execution;
use pvbi::solver::SolverConfig;

use crate::config::{ExperimentConfig, ScenarioKind};
use crate::dataset::{dataset_files, family, load_dataset, write_dataset, Scenario};
use crate::experiments::{
    estimates_table, run_unrolled, solve_all, summary_table, sweep_table, trace_table, train_unrolled, training_sets,
    Evaluator, Method, Sweep,
};
use crate::io::{fmt_f64, fmt_opt, OutputDir, Table};

#[derive(Debug, Parser)]
#[command(name = "pvbi", version, about = "Particle-based stochastic VBI experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration overlaid on the scenario preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_scenario)]
    pub scenario: Option<ScenarioKind>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output (and dataset) directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing files.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic datasets with embedded truth.
    Generate,
    /// Run the solver over all repetitions of a generated dataset.
    Solve,
    /// Train the unrolled network and apply it to the dataset.
    UnfoldTrain,
    /// Run evaluation sweeps.
    Eval {
        /// Sweeps to run (default: all that apply to the scenario).
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<String>,
    },
    /// Print the complexity tables.
    Complexity {
        /// Table to print (default: both).
        #[arg(long)]
        example: Option<u8>,
        #[arg(long)]
        json: bool,
    },
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    match s {
        "example1" => Ok(ScenarioKind::Example1),
        "example2" => Ok(ScenarioKind::Example2),
        "toy" => Ok(ScenarioKind::Toy),
        _ => Err(format!("unknown scenario `{s}` (example1, example2, toy)")),
    }
}

/// Preset, file, environment and flags, in increasing precedence.
pub fn resolve_config(g: &GlobalArgs, env: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentConfig> {
    let mut env: Vec<(String, String)> = env.into_iter().collect();
    if let Some(s) = g.scenario {
        env.push(("PVBI_SCENARIO".into(), format!("\"{}\"", s.name())));
    }
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), env)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(r) = g.reps {
        cfg.repetitions = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execution(threads: Option<usize>) -> Result<Execution> {
    match threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(1) => Ok(Execution::Serial),
        Some(n) => {
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(Execution::Parallel)
        }
        None => Ok(Execution::Parallel),
    }
}

/// Parses `args` and runs the command, printing to `stdout`.
pub fn run<I, S>(args: I, env: impl IntoIterator<Item = (String, String)>, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    if let Command::Complexity { example, json } = &cli.command {
        return complexity(*example, *json, stdout);
    }
    let cfg = resolve_config(&cli.global, env)?;
    let exec = execution(cli.global.threads)?;
    let force = cli.global.force;
    match &cli.command {
        Command::Generate => generate(&cfg, exec, force),
        Command::Solve => solve(&cfg, exec, force, stdout),
        Command::UnfoldTrain => unfold_train(&cfg, exec, force, stdout),
        Command::Eval { sweep } => eval(&cfg, exec, force, sweep, stdout),
        Command::Complexity { .. } => unreachable!(),
    }
}

pub fn complexity(example: Option<u8>, json: bool, stdout: &mut dyn Write) -> Result<()> {
    let tables: Vec<ComplexityTable> = match example {
        Some(e) => vec![table_report(e)?],
        None => vec![table_report(1)?, table_report(2)?],
    };
    if json {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&tables)?)?;
    } else {
        for (i, t) in tables.iter().enumerate() {
            if i > 0 {
                writeln!(stdout)?;
            }
            write!(stdout, "{}", t.to_text())?;
        }
    }
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig, exec: Execution, force: bool) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, force)?;
    let mut names = dataset_files(cfg.scenario).to_vec();
    names.push("manifest_generate.json");
    out.check(&names)?;
    let instances = Scenario::from_config(cfg).instances(cfg.seed, &[family::TEST], cfg.repetitions, exec)?;
    write_dataset(&mut out, cfg.scenario, &instances)?;
    out.finish("generate", cfg)?;
    Ok(())
}

pub fn solve(cfg: &ExperimentConfig, exec: Execution, force: bool, stdout: &mut dyn Write) -> Result<()> {
    let instances = load_dataset(&cfg.out, cfg)?;
    let mut out = OutputDir::create(&cfg.out, force)?;
    out.check(&["trace.csv", "estimates.csv", "summary.csv", "manifest_solve.json"])?;
    let solver = SolverConfig {
        execution: exec,
        ..cfg.solver.clone()
    };
    let mut methods = vec![Method::Pspvbi];
    if cfg.reference_baseline {
        methods.push(Method::PvbiReference);
    }
    let mut runs = Vec::new();
    for m in methods {
        let r = solve_all(&instances, &solver, m, cfg.seed, &[family::TEST], exec)?;
        let excluded = r.iter().filter(|o| o.result.is_none()).count();
        if excluded > 0 {
            writeln!(
                stdout,
                "{}: {excluded} of {} repetitions excluded (non-finite)",
                m.name(),
                r.len()
            )?;
        }
        runs.push((m, r));
    }
    out.write_table("trace.csv", &trace_table(&instances, &runs))?;
    out.write_table("estimates.csv", &estimates_table(&instances, &runs))?;
    let summary = summary_table(&instances, &runs);
    out.write_table("summary.csv", &summary)?;
    out.finish("solve", cfg)?;
    print_table(stdout, &summary)
}

pub fn unfold_train(cfg: &ExperimentConfig, exec: Execution, force: bool, stdout: &mut dyn Write) -> Result<()> {
    let instances = load_dataset(&cfg.out, cfg)?;
    let mut out = OutputDir::create(&cfg.out, force)?;
    let params_file = if cfg.unfold.train.mode == pvbi::unfolding::OptimizeMode::HyperNet {
        "network.txt"
    } else {
        "steps.csv"
    };
    out.check(&[
        "history.csv",
        params_file,
        "unfold_estimates.csv",
        "manifest_unfold-train.json",
    ])?;
    let sets = training_sets(cfg, exec)?;
    let trained = train_unrolled(cfg, &sets, cfg.unfold.layers, exec)?;

    let mut hist = Table::new(&["iteration", "train_loss", "validation_loss"]);
    for h in &trained.history {
        hist.push(vec![
            h.iteration.to_string(),
            fmt_opt(h.train_loss),
            fmt_opt(h.validation_loss),
        ]);
    }
    out.write_table("history.csv", &hist)?;
    match &trained.hypernet {
        Some(h) => out.write(params_file, h.to_text(None).as_bytes())?,
        None => {
            let p = &trained.net.params;
            let mut t = Table::new(&["layer", "variable", "gamma_p", "gamma_w"]);
            for l in 0..p.layers {
                for j in 0..p.j0 {
                    t.push(vec![
                        l.to_string(),
                        j.to_string(),
                        fmt_f64(p.gamma_p[l][j]),
                        fmt_f64(p.gamma_w[l][j]),
                    ]);
                }
            }
            out.write_table(params_file, &t)?;
        }
    }

    let est = run_unrolled(
        &trained,
        &instances,
        cfg.solver.particles,
        cfg.seed,
        &[family::TEST],
        exec,
    )?;
    let mut t = Table::new(&["rep", "variable", "name", "truth", "mmse", "status"]);
    for (inst, e) in instances.iter().zip(&est) {
        for j in 0..inst.truth.len() {
            let (v, status) = match e {
                Some(e) => (fmt_f64(e[j]), "ok"),
                None => (String::new(), "excluded"),
            };
            t.push(vec![
                inst.rep.to_string(),
                j.to_string(),
                inst.model().variable_name(j),
                fmt_f64(inst.truth[j]),
                v,
                status.into(),
            ]);
        }
    }
    out.write_table("unfold_estimates.csv", &t)?;
    out.finish("unfold-train", cfg)?;
    writeln!(stdout, "best validation loss {:.6e}", trained.best_validation)?;
    Ok(())
}

pub fn eval(
    cfg: &ExperimentConfig,
    exec: Execution,
    force: bool,
    sweeps: &[String],
    stdout: &mut dyn Write,
) -> Result<()> {
    let sweeps: Vec<Sweep> = if sweeps.is_empty() {
        Sweep::defaults(cfg.scenario)
    } else {
        sweeps
            .iter()
            .map(|s| Sweep::parse(s).with_context(|| format!("unknown sweep `{s}`")))
            .collect::<Result<_>>()?
    };
    let mut out = OutputDir::create(&cfg.out, force)?;
    let names: Vec<String> = sweeps.iter().map(|s| format!("sweep_{}.csv", s.name())).collect();
    let mut check: Vec<&str> = names.iter().map(String::as_str).collect();
    check.push("manifest_eval.json");
    out.check(&check)?;
    let mut ev = Evaluator::new(cfg, exec);
    for (s, name) in sweeps.iter().zip(&names) {
        let rows = ev.run(*s)?;
        let t = sweep_table(&rows);
        out.write_table(name, &t)?;
        print_table(stdout, &t)?;
    }
    out.finish("eval", cfg)?;
    Ok(())
}

fn print_table(stdout: &mut dyn Write, t: &Table) -> Result<()> {
    stdout.write_all(&t.to_bytes()?)?;
    Ok(())
}
