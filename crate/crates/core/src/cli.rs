//! Command-line front end. Every command writes CSV files with a header row
//! and floats in 17 significant digits; `train` also writes `summary.json`.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNormPlacement, Init, NetworkSpec};
use crate::optim::LrSchedule;
use crate::problems::{Problem, ProblemId};
use crate::reference::{fd_heat_solve, rk4_fhn, time_steps_for_alpha, FHN_DEFAULT_STEPS};
use crate::training::{evaluate, fit_sin3x, train, train_observed, TrainConfig, TrainHistory, UatConfig};
use crate::tuner::{random_search, write_csv as write_tune_csv, Objective, SearchSpace};

#[derive(Debug, Parser)]
#[command(name = "galerkin", version, about = "Deep Galerkin method solvers and oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one problem and write loss.csv, solution.csv, summary.json.
    Train(TrainArgs),
    /// Loss curves for batch sizes 1, 2, 4, ..., 1024.
    AblateBatch(AblateBatchArgs),
    /// Loss curves with batch norm off, before and after the activation.
    AblateBn(AblateBnArgs),
    /// Random search over batch size, iterations and learning rate.
    Tune(TuneArgs),
    /// Classical reference solutions.
    Oracle(OracleArgs),
    /// Fit sin(3x) with a 1-3-1 tanh network.
    UatDemo(UatArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, value_parser = parse_problem)]
    pub problem: Option<ProblemId>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lrate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "GF_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    /// `key = value` file overriding the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep every k-th iteration in loss.csv.
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Print the loss every this many iterations (0 disables).
    #[arg(long, default_value_t = 0)]
    pub progress: usize,
}

#[derive(Debug, Args)]
pub struct AblateBatchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Largest exponent of two.
    #[arg(long, default_value_t = 10)]
    pub max_exponent: u32,
}

#[derive(Debug, Args)]
pub struct AblateBnArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ObjectiveArg {
    Loss,
    Mae,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub concurrency: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Loss)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 1)]
    pub batch_min: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_max: usize,
    #[arg(long, default_value_t = 1000)]
    pub iters_min: usize,
    #[arg(long, default_value_t = 50_000)]
    pub iters_max: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub lr_max: f64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_parser = parse_problem)]
    pub problem: ProblemId,
    #[arg(long, env = "GF_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    /// Spatial intervals of the finite-difference grid, as `64` or `N=64`.
    #[arg(long, value_parser = parse_fd, default_value = "64")]
    pub fd: usize,
    /// Target `Δt/Δx²` of the finite-difference grid.
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    /// RK4 steps over the FitzHugh-Nagumo horizon.
    #[arg(long, default_value_t = FHN_DEFAULT_STEPS)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct UatArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lrate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "GF_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
}

fn parse_problem(s: &str) -> std::result::Result<ProblemId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fd(s: &str) -> std::result::Result<usize, String> {
    let v = s.strip_prefix("N=").unwrap_or(s);
    v.parse().map_err(|_| format!("expected N=<intervals>, got '{s}'"))
}

/// Keys accepted in a `--config` file. Flags override these.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<String>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub lrate: Option<f64>,
    pub seed: Option<u64>,
    pub hidden_size: Option<usize>,
    pub num_layers: Option<usize>,
    pub activation: Option<Activation>,
    pub gate_activation: Option<Activation>,
    pub batch_norm: Option<BatchNormPlacement>,
    pub init: Option<Init>,
    pub gain: Option<f64>,
    pub clip_norm: Option<f64>,
    pub milestones: Option<Vec<usize>>,
    pub gamma: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Paper defaults, then the config file, then flags.
pub fn resolve_config(common: &Common, fallback: ProblemId) -> Result<TrainConfig> {
    let file = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let problem = match (common.problem, &file.problem) {
        (Some(p), _) => p,
        (None, Some(s)) => s.parse()?,
        (None, None) => fallback,
    };
    let mut cfg = TrainConfig::for_problem(problem);
    apply_file(&mut cfg, &file)?;
    if let Some(v) = common.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = common.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = common.lrate {
        cfg.lr = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn apply_file(cfg: &mut TrainConfig, f: &ConfigFile) -> Result<()> {
    let net: &mut NetworkSpec = &mut cfg.network;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(cfg.iterations, f.iterations);
    set!(cfg.batch_size, f.batch_size);
    set!(cfg.lr, f.lrate);
    set!(cfg.seed, f.seed);
    set!(net.hidden_size, f.hidden_size);
    set!(net.num_layers, f.num_layers);
    set!(net.activation, f.activation);
    set!(net.gate_activation, f.gate_activation);
    set!(net.batch_norm, f.batch_norm);
    set!(net.init, f.init);
    set!(net.gain, f.gain);
    if f.clip_norm.is_some() {
        cfg.clip_norm = f.clip_norm;
    }
    if f.milestones.is_some() || f.gamma.is_some() {
        let milestones = f
            .milestones
            .clone()
            .unwrap_or_else(|| cfg.schedule.milestones().to_vec());
        let gamma = f.gamma.unwrap_or(cfg.schedule.gamma());
        cfg.schedule = LrSchedule::multi_step(milestones, gamma)?;
    }
    Ok(())
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration,loss,lr`, keeping every `thin`-th row and always the last.
pub fn write_loss_csv(path: &Path, history: &TrainHistory, thin: usize) -> Result<()> {
    let thin = thin.max(1);
    let last = history.loss.len() - 1;
    let rows = (0..history.loss.len())
        .filter(|&i| i % thin == 0 || i == last)
        .map(|i| vec![i.to_string(), fmt_f64(history.loss[i]), fmt_f64(history.lr[i])]);
    write_rows(path, &["iteration", "loss", "lr"], rows)
}

/// Grid coordinates, then per output component the prediction, oracle and
/// absolute error.
pub fn solution_header(problem: ProblemId) -> Vec<&'static str> {
    match problem {
        ProblemId::Heat1d => vec!["x", "t", "y_hat", "y_oracle", "abs_err"],
        ProblemId::Decay => vec!["t", "y_hat", "y_oracle", "abs_err"],
        ProblemId::Fhn => vec!["t", "y_hat", "w_hat", "y_oracle", "w_oracle", "abs_err_y", "abs_err_w"],
        ProblemId::Fredholm2 => vec!["x", "y_hat", "y_oracle", "abs_err"],
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    problem: ProblemId,
    final_mae: f64,
    final_loss: f64,
    iterations: usize,
    wall_time_s: f64,
    timestamp_unix_s: u64,
    config: &'a TrainConfig,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.common, ProblemId::Heat1d)?;
    let problem = Problem::new(cfg.problem);
    cfg.validate(&problem)?;
    let dir = &args.common.out;
    ensure_dir(dir)?;
    let every = args.progress;
    let (net, history) = train_observed(&problem, &cfg, |it, loss| {
        if every > 0 && (it + 1) % every == 0 {
            eprintln!("iteration {:>7}  loss {loss:.6e}", it + 1);
        }
    })?;
    write_loss_csv(&dir.join("loss.csv"), &history, args.thin)?;

    let ev = evaluate(&net, &problem)?;
    let header = solution_header(cfg.problem);
    let rows = (0..ev.grid.rows()).map(|r| {
        let mut row: Vec<String> = (0..ev.grid.cols()).map(|c| fmt_f64(ev.grid.get(r, c))).collect();
        let k = ev.prediction.cols();
        row.extend((0..k).map(|c| fmt_f64(ev.prediction.get(r, c))));
        row.extend((0..k).map(|c| fmt_f64(ev.oracle.get(r, c))));
        row.extend((0..k).map(|c| fmt_f64((ev.prediction.get(r, c) - ev.oracle.get(r, c)).abs())));
        row
    });
    write_rows(&dir.join("solution.csv"), &header, rows)?;
    net.save_json(&dir.join("params.json"))?;

    let summary = Summary {
        problem: cfg.problem,
        final_mae: history.final_mae,
        final_loss: history.final_loss(),
        iterations: history.loss.len(),
        wall_time_s: history.wall_time_s,
        timestamp_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: &cfg,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{}: final loss {:.6e}, MAE {:.6e} ({:.1} s)",
        cfg.problem,
        history.final_loss(),
        history.final_mae,
        history.wall_time_s
    );
    Ok(())
}

/// Series of equal length side by side: `iteration,<name>,...`.
fn write_wide(path: &Path, names: &[String], series: &[Vec<f64>]) -> Result<()> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    let mut header = vec!["iteration".to_string()];
    header.extend(names.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..len).map(|i| {
        let mut row = vec![i.to_string()];
        row.extend(series.iter().map(|s| s.get(i).map(|&v| fmt_f64(v)).unwrap_or_default()));
        row
    });
    write_rows(path, &header_refs, rows)
}

fn cmd_ablate_batch(args: &AblateBatchArgs) -> Result<()> {
    let mut base = resolve_config(&args.common, ProblemId::Heat1d)?;
    if args.common.iterations.is_none() {
        base.iterations = 1000;
    }
    if let Some(h) = args.hidden_size {
        base.network.hidden_size = h;
    }
    let problem = Problem::new(base.problem);
    let dir = &args.common.out;
    ensure_dir(dir)?;
    let mut names = Vec::new();
    let mut series = Vec::new();
    for e in 0..=args.max_exponent {
        let n = 1usize << e;
        let cfg = TrainConfig {
            batch_size: n,
            ..base.clone()
        };
        let (_, h) = train(&problem, &cfg)?;
        write_loss_csv(&dir.join(format!("loss_batch_{n}.csv")), &h, 1)?;
        println!("batch {n:>5}: final loss {:.6e}", h.final_loss());
        names.push(format!("n{n}"));
        series.push(h.loss);
    }
    write_wide(&dir.join("ablate_batch.csv"), &names, &series)
}

fn cmd_ablate_bn(args: &AblateBnArgs) -> Result<()> {
    let mut base = resolve_config(&args.common, ProblemId::Heat1d)?;
    if args.common.iterations.is_none() {
        base.iterations = 1000;
    }
    let problem = Problem::new(base.problem);
    let dir = &args.common.out;
    ensure_dir(dir)?;
    let mut names = Vec::new();
    let mut series = Vec::new();
    let mut status_rows = Vec::new();
    let mut failures = 0;
    for act in [Activation::Tanh, Activation::Relu] {
        for (label, placement) in [
            ("none", BatchNormPlacement::Off),
            ("before", BatchNormPlacement::BeforeActivation),
            ("after", BatchNormPlacement::AfterActivation),
        ] {
            let mut cfg = base.clone();
            cfg.network.activation = act;
            cfg.network.batch_norm = placement;
            let act_name = match act {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
                Activation::Sigmoid => "sigmoid",
            };
            let name = format!("{act_name}_{label}");
            match train(&problem, &cfg) {
                Ok((_, h)) => {
                    write_loss_csv(&dir.join(format!("loss_{name}.csv")), &h, 1)?;
                    println!("{name:>12}: final loss {:.6e}", h.final_loss());
                    status_rows.push(vec![name.clone(), "ok".into(), fmt_f64(h.final_loss())]);
                    series.push(h.loss);
                }
                Err(e @ Error::NonFinite { .. }) => {
                    eprintln!("{name}: {e}");
                    failures += 1;
                    status_rows.push(vec![name.clone(), "failed".into(), fmt_f64(f64::NAN)]);
                    series.push(Vec::new());
                }
                Err(e) => return Err(e),
            }
            names.push(name);
        }
    }
    write_wide(&dir.join("ablate_bn.csv"), &names, &series)?;
    write_rows(
        &dir.join("ablate_bn_status.csv"),
        &["series", "status", "final_loss"],
        status_rows,
    )?;
    if failures > 0 {
        return Err(Error::NonFinite {
            iteration: 0,
            lr: base.lr,
        });
    }
    Ok(())
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let base = resolve_config(&args.common, ProblemId::Heat1d)?;
    let problem = Problem::new(base.problem);
    let space = SearchSpace {
        batch_size: (args.batch_min, args.batch_max),
        iterations: (args.iters_min, args.iters_max),
        lr: (args.lr_min, args.lr_max),
        trials: args.trials,
        concurrency: args.concurrency,
    };
    let objective = match args.objective {
        ObjectiveArg::Loss => Objective::FinalLoss,
        ObjectiveArg::Mae => Objective::FinalMae,
    };
    ensure_dir(&args.common.out)?;
    let results = random_search(&space, &problem, &base, objective, base.seed)?;
    let file = fs::File::create(args.common.out.join("tune.csv"))?;
    write_tune_csv(&results, std::io::BufWriter::new(file))?;
    if let Some(best) = results.first() {
        println!(
            "best trial {}: batch {}, iterations {}, lr {:.3e}, objective {:.6e}",
            best.trial, best.params.batch_size, best.params.iterations, best.params.lr, best.objective
        );
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let problem = Problem::new(args.problem);
    match args.problem {
        ProblemId::Heat1d => {
            let (x_hi, t_max) = (crate::problems::HEAT_X_MAX, crate::problems::HEAT_T_MAX);
            let m = time_steps_for_alpha(0.0, x_hi, t_max, args.fd, args.alpha);
            let grid = fd_heat_solve(0.0, x_hi, t_max, args.fd, m, f64::sin, (0.0, 0.0))?;
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for (j, level) in grid.u.iter().enumerate() {
                for (i, &u) in level.iter().enumerate() {
                    let exact = crate::problems::heat_exact(grid.x[i], grid.t[j]);
                    let err = (u - exact).abs();
                    worst = worst.max(err);
                    rows.push(vec![
                        fmt_f64(grid.x[i]),
                        fmt_f64(grid.t[j]),
                        fmt_f64(u),
                        fmt_f64(exact),
                        fmt_f64(err),
                    ]);
                }
            }
            write_rows(
                &args.out.join("fd_heat.csv"),
                &["x", "t", "u_fd", "u_exact", "abs_err"],
                rows,
            )?;
            write_rows(
                &args.out.join("fd_heat_summary.csv"),
                &["n_space", "n_time", "alpha", "max_abs_err"],
                [vec![
                    args.fd.to_string(),
                    m.to_string(),
                    fmt_f64(grid.alpha),
                    fmt_f64(worst),
                ]],
            )?;
            println!("FD N={} M={m} alpha={:.4}: max error {worst:.3e}", args.fd, grid.alpha);
        }
        ProblemId::Fhn => {
            let tr = rk4_fhn(problem.fhn_params(), crate::problems::FHN_T_MAX, args.steps)?;
            let rows = (0..tr.t.len()).map(|k| vec![fmt_f64(tr.t[k]), fmt_f64(tr.y[k]), fmt_f64(tr.w[k])]);
            write_rows(&args.out.join("fhn_rk4.csv"), &["t", "y", "w"], rows)?;
            println!("RK4 trajectory with {} rows", tr.t.len());
        }
        ProblemId::Decay | ProblemId::Fredholm2 => {
            let grid = problem.eval_grid();
            let y = problem.oracle(&grid)?;
            let name = if args.problem == ProblemId::Decay { "t" } else { "x" };
            let rows = (0..grid.rows()).map(|r| vec![fmt_f64(grid.get(r, 0)), fmt_f64(y.get(r, 0))]);
            write_rows(
                &args.out.join(format!("{}_exact.csv", args.problem)),
                &[name, "y"],
                rows,
            )?;
        }
    }
    Ok(())
}

fn cmd_uat(args: &UatArgs) -> Result<()> {
    let mut cfg = UatConfig::default();
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.lrate {
        cfg.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    ensure_dir(&args.out)?;
    let fit = fit_sin3x(&cfg)?;
    let rows = (0..fit.x.rows()).map(|r| {
        let (t, p) = (fit.target.get(r, 0), fit.prediction.get(r, 0));
        vec![fmt_f64(fit.x.get(r, 0)), fmt_f64(t), fmt_f64(p), fmt_f64((t - p).abs())]
    });
    write_rows(&args.out.join("uat_fit.csv"), &["x", "y", "y_hat", "abs_err"], rows)?;
    let loss_rows = fit
        .loss
        .iter()
        .enumerate()
        .map(|(i, &l)| vec![i.to_string(), fmt_f64(l)]);
    write_rows(&args.out.join("uat_loss.csv"), &["iteration", "loss"], loss_rows)?;
    println!("sin(3x) fit: MAE {:.6e}", fit.mae);
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::AblateBatch(a) => cmd_ablate_batch(a),
        Command::AblateBn(a) => cmd_ablate_bn(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::UatDemo(a) => cmd_uat(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
