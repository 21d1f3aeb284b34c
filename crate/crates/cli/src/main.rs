mod delays;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use delay_h2::benchmark::{impulse_mse, benchmark_model, time_grid, CASCADE_ORDER};
use delay_h2::h2::{compute_gap, h2_norm_sq, h2_norm_sq_state_space, optimality_residuals, OptimalityResiduals};
use delay_h2::io::{columns_csv, format_e12, impulse_csv, model_to_json, read_model, report_to_json, to_pretty, ModelFile};
use delay_h2::iodirka::{io_dirka_with_norm, IoDirkaConfig, ReductionReport, StoppingMode};
use delay_h2::{impulse_response, DelayedModel, PoleResidueModel};
use rayon::prelude::*;
use serde_json::json;

use delays::DelaySpec;

const THREADS_VAR: &str = "DELAY_H2_THREADS";

#[derive(Parser, Debug)]
#[command(name = "delay-h2", version, about = "H2-optimal reduced-order models with input/output delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reduce a model, optionally with input/output delays.
    Reduce(ReduceArgs),
    /// Regenerate the twenty-pole cascade benchmark and its comparison data.
    BenchPaper(BenchArgs),
    /// Sample the impulse response of a model file.
    Impulse(ImpulseArgs),
    /// Optimality residuals and gap of a candidate reduced model.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct ReduceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    order: usize,
    /// none, input, output, io, or mask:<input bits>,<output bits>
    #[arg(long, default_value = "input")]
    delays: DelaySpec,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args, Debug, Clone)]
struct Tuning {
    /// Seed of the randomized IRKA restart used when a run stalls.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    outer_max_iters: Option<usize>,
    #[arg(long)]
    residual_tol: Option<f64>,
    #[arg(long, value_enum)]
    stopping: Option<Stopping>,
    #[arg(long)]
    irka_tol: Option<f64>,
    #[arg(long)]
    irka_max_iters: Option<usize>,
    /// Upper end of the delay search box.
    #[arg(long)]
    tau_max: Option<f64>,
    /// Skip the IRKA pass at the final delays.
    #[arg(long)]
    no_final_irka: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Stopping {
    PoleVariation,
    OptimalityResidual,
    H2Error,
}

#[derive(Args, Debug)]
struct Grid {
    #[arg(long, default_value_t = 50.0)]
    t_max: f64,
    #[arg(long, default_value_t = 2000)]
    points: usize,
}

impl Grid {
    fn samples(&self) -> Result<Vec<f64>> {
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            bail!("--t-max must be positive, got {}", self.t_max);
        }
        if self.points < 2 {
            bail!("--points must be at least 2, got {}", self.points);
        }
        Ok(time_grid(self.t_max, self.points))
    }
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    grid: Grid,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args, Debug)]
struct ImpulseArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    grid: Grid,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Reduced model, delayed or not.
    #[arg(long)]
    candidate: PathBuf,
    /// Writes analysis.json here when given.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Converged runs exit 0, best-effort results 2, errors 1.
enum Outcome {
    Converged,
    NotConverged,
}

impl Tuning {
    fn config(&self, order: usize, input_mask: Vec<bool>, output_mask: Vec<bool>) -> Result<IoDirkaConfig> {
        if order == 0 {
            bail!("--order must be at least 1");
        }
        let mut cfg = IoDirkaConfig::new(order, input_mask, output_mask);
        cfg.irka.retry_seed = self.seed;
        if let Some(v) = self.outer_tol {
            cfg.outer_tol = v;
        }
        if let Some(v) = self.outer_max_iters {
            cfg.outer_max_iters = v;
        }
        if let Some(v) = self.residual_tol {
            cfg.residual_tol = v;
        }
        if let Some(v) = self.stopping {
            cfg.stopping_mode = match v {
                Stopping::PoleVariation => StoppingMode::PoleVariation,
                Stopping::OptimalityResidual => StoppingMode::OptimalityResidual,
                Stopping::H2Error => StoppingMode::H2Error,
            };
        }
        if let Some(v) = self.irka_tol {
            cfg.irka.shift_tol = v;
        }
        if let Some(v) = self.irka_max_iters {
            cfg.irka.max_iters = v;
        }
        cfg.search.tau_max = self.tau_max;
        cfg.final_irka_pass = !self.no_final_irka;
        Ok(cfg)
    }
}

/// `‖G‖²` from the file's own form: the Gramian for state-space input, the
/// residue sum otherwise.
fn norm_sq(file: &ModelFile, g: &PoleResidueModel) -> Result<f64> {
    Ok(match file {
        ModelFile::StateSpace(ss) => h2_norm_sq_state_space(ss)?,
        _ => h2_norm_sq(g)?,
    })
}

fn load(path: &Path) -> Result<ModelFile> {
    Ok(read_model(path)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => v.trim().parse().with_context(|| format!("{THREADS_VAR}={v:?} is not a thread count")),
        Err(_) => Ok(0),
    }
}

fn run_config(subcommand: &str, fields: serde_json::Value) -> String {
    let mut v = json!({
        "subcommand": subcommand,
        "version": env!("CARGO_PKG_VERSION"),
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
    });
    if let (Some(target), serde_json::Value::Object(extra)) = (v.as_object_mut(), fields) {
        target.extend(extra);
    }
    to_pretty(&v)
}

fn residual_line(r: &OptimalityResiduals) -> String {
    let [right, left, hermite, din, dout] = r.maxima();
    format!("residuals: right {right:.3e}  left {left:.3e}  hermite {hermite:.3e}  input delay {din:.3e}  output delay {dout:.3e}")
}

fn summary(report: &ReductionReport) -> String {
    let m = &report.model;
    format!(
        "converged: {} after {} outer iterations\ngap: J = {:.6e} (relative {:.6e})\ninput delays: {:?}\noutput delays: {:?}\n{}",
        report.converged,
        report.outer_iterations,
        report.gap.j,
        report.gap.relative(),
        m.input_delays.delays(),
        m.output_delays.delays(),
        residual_line(&report.residuals)
    )
}

fn reduce(args: &ReduceArgs) -> Result<Outcome> {
    let file = load(&args.model)?;
    let g = file.pole_residue()?;
    let (input_mask, output_mask) = args.delays.masks(g.nu(), g.ny())?;
    let cfg = args.tuning.config(args.order, input_mask, output_mask)?;
    let report = io_dirka_with_norm(&g, norm_sq(&file, &g)?, &cfg)?;

    out_dir(&args.out)?;
    write(&args.out.join("reduced.json"), &model_to_json(&ModelFile::Delayed(report.model.clone())))?;
    write(&args.out.join("report.json"), &report_to_json(&report))?;
    let echo = json!({
        "model": args.model,
        "model_kind": file.kind(),
        "order": args.order,
        "delays": args.delays.to_string(),
        "seed": args.tuning.seed,
        "threads": threads()?,
        "config": cfg,
    });
    write(&args.out.join("run-config.json"), &run_config("reduce", echo))?;
    println!("{}", summary(&report));
    Ok(if report.converged { Outcome::Converged } else { Outcome::NotConverged })
}

struct BenchRun {
    label: String,
    order: usize,
    delayed: bool,
    report: ReductionReport,
}

fn bench_paper(args: &BenchArgs) -> Result<Outcome> {
    let grid = args.grid.samples()?;
    let g = benchmark_model();
    let norm = h2_norm_sq(&g)?;
    let mut plan: Vec<(usize, bool)> = (2..=6).map(|n| (n, false)).collect();
    plan.extend([(2, true), (4, true)]);
    let configs = plan
        .iter()
        .map(|&(n, delayed)| args.tuning.config(n, vec![delayed], vec![false]))
        .collect::<Result<Vec<_>>>()?;
    let runs = plan
        .par_iter()
        .zip(&configs)
        .map(|(&(order, delayed), cfg)| {
            let label = format!("{}_n{order}", if delayed { "delayed" } else { "free" });
            let report = io_dirka_with_norm(&g, norm, cfg).with_context(|| format!("run {label}"))?;
            Ok(BenchRun {
                label,
                order,
                delayed,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    out_dir(&args.out)?;
    write(&args.out.join("paper20.json"), &model_to_json(&ModelFile::PoleResidue(g.clone())))?;
    let reference = impulse_response(&DelayedModel::undelayed(g.clone()), &grid)?;
    let mut columns = vec![("original".to_string(), reference.channel(0, 0).to_vec())];
    let mut table = String::from("model,order,delayed,tau,gap,mse,converged\n");
    println!("{:<10} {:>14} {:>14} {:>10}", "model", "gap", "mse", "tau");
    for run in &runs {
        let resp = impulse_response(&run.report.model, &grid)?;
        let mse = impulse_mse(&reference, &resp);
        let tau = run.report.model.input_delays.delays()[0];
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            run.label,
            run.order,
            run.delayed,
            format_e12(tau),
            format_e12(run.report.gap.j),
            format_e12(mse),
            run.report.converged
        ));
        println!("{:<10} {:>14.6e} {:>14.6e} {:>10.6}", run.label, run.report.gap.j, mse, tau);
        write(&args.out.join(format!("{}.json", run.label)), &report_to_json(&run.report))?;
        columns.push((run.label.clone(), resp.channel(0, 0).to_vec()));
    }
    write(&args.out.join("impulse.csv"), &columns_csv(&grid, &columns))?;
    write(&args.out.join("mse.csv"), &table)?;
    let echo = json!({
        "cascade_order": CASCADE_ORDER,
        "t_max": args.grid.t_max,
        "points": args.grid.points,
        "seed": args.tuning.seed,
        "threads": threads()?,
        "runs": plan.iter().zip(&configs).map(|(&(n, d), c)| json!({"order": n, "delayed": d, "config": c})).collect::<Vec<_>>(),
    });
    write(&args.out.join("run-config.json"), &run_config("bench-paper", echo))?;
    Ok(if runs.iter().all(|r| r.report.converged) { Outcome::Converged } else { Outcome::NotConverged })
}

fn impulse(args: &ImpulseArgs) -> Result<Outcome> {
    let model = load(&args.model)?.delayed()?;
    let csv = impulse_csv(&impulse_response(&model, &args.grid.samples()?)?);
    match &args.out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(Outcome::Converged)
}

fn analyze(args: &AnalyzeArgs) -> Result<Outcome> {
    let file = load(&args.model)?;
    let g = file.pole_residue()?;
    let candidate = load(&args.candidate)?.delayed()?;
    let (ny, nu) = (candidate.core.ny(), candidate.core.nu());
    if (ny, nu) != (g.ny(), g.nu()) {
        bail!(
            "dimension mismatch: model is {}x{}, candidate is {ny}x{nu}",
            g.ny(),
            g.nu()
        );
    }
    let gap = compute_gap(&g, &candidate, norm_sq(&file, &g)?)?;
    let residuals = optimality_residuals(&g, &candidate)?;
    println!("gap: J = {:.6e} (relative {:.6e})", gap.j, gap.relative());
    println!("{}", residual_line(&residuals));
    if let Some(dir) = &args.out {
        out_dir(dir)?;
        write(&dir.join("analysis.json"), &to_pretty(&json!({ "gap": gap, "residuals": residuals })))?;
        let echo = json!({ "model": args.model, "candidate": args.candidate });
        write(&dir.join("run-config.json"), &run_config("analyze", echo))?;
    }
    Ok(Outcome::Converged)
}

fn run(cli: &Cli) -> Result<Outcome> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads()?)
        .build_global()
        .context("starting the thread pool")?;
    match &cli.command {
        Command::Reduce(a) => reduce(a),
        Command::BenchPaper(a) => bench_paper(a),
        Command::Impulse(a) => impulse(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(Outcome::Converged) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: not converged, wrote the best iterate");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
