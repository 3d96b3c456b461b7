//! Command-line entry point for the full pipeline: demonstration
//! generation, both training stages, evaluation, latency benchmarking,
//! ablations, and plotting.

use clap::{Args, Parser, Subcommand};
use dcdp_core::config::Config;
use dcdp_core::demos;
use dcdp_core::diffusion::{self, DiffusionPolicy};
use dcdp_core::env::PerturbKind;
use dcdp_core::eval::{
    self, bench_latency, plot_success_bars, plot_trajectory, results_from_csv, run_ablation,
    run_eval, write_results, EvalConfig, ResultRow,
};
use dcdp_core::runtime::RuntimeMode;
use dcdp_core::vae::{train_stage1, Stage1Model};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dcdp", about = "Dynamic closed-loop corrected diffusion policy on PushT", version)]
struct Cli {
    /// Config file (key=value lines); DCDP_* environment variables override
    /// file values, and explicit flags override both.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted expert demonstrations
    GenDemos(GenDemosArgs),
    /// Train the diffusion policy (stage 0, later frozen)
    TrainDp(TrainDpArgs),
    /// Train the fast dynamic encoder + action VAE (stage 1)
    TrainFast(TrainFastArgs),
    /// Evaluate a runtime mode over fixed seeds
    Eval(EvalArgs),
    /// Per-step policy-compute latency benchmark (single-threaded)
    BenchLatency(BenchArgs),
    /// Retrain stage 1 with components disabled and emit the ablation grid
    Ablate(AblateArgs),
    /// Render SVG plots from a results CSV
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDemosArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainDpArgs {
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFastArgs {
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// disable temporal attention (identity over tokens)
    #[arg(long)]
    ablate_ta: bool,
    /// disable the self-supervised differential loss
    #[arg(long)]
    ablate_ssd: bool,
    /// disable the fusion cross-attention
    #[arg(long)]
    ablate_dca: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// ol | cl | te | dcdp
    #[arg(long)]
    mode: String,
    /// none | constant | random
    #[arg(long, default_value = "none")]
    perturb: String,
    /// perturbation magnitude (workspace units per step)
    #[arg(long)]
    mag: Option<f64>,
    /// inclusive seed range `a..b` or a single count `n` (meaning 0..n-1)
    #[arg(long, default_value = "0..49")]
    seeds: String,
    #[arg(long)]
    dp: PathBuf,
    /// stage-1 checkpoint; required for dcdp mode
    #[arg(long)]
    fast: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// also write trajectory SVGs (seed 0) into this directory
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dp: PathBuf,
    #[arg(long)]
    fast: PathBuf,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// write `mode,mean_ms,p95_ms,steps` rows here (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    dp: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// with checkpoints, also render a trajectory overlay per results row
    #[arg(long)]
    dp: Option<PathBuf>,
    #[arg(long)]
    fast: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, String> {
    let mut cfg = match path {
        Some(p) => Config::load(p).map_err(|e| e.to_string())?,
        None => Config::default(),
    };
    cfg.apply_env().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// `a..b` (inclusive) or `n` meaning `0..=n-1`.
fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?;
        if b < a {
            return Err(format!("empty seed range `{s}`"));
        }
        Ok((a..=b).collect())
    } else {
        let n: u64 = s.trim().parse().map_err(|_| format!("bad seed count `{s}`"))?;
        Ok((0..n).collect())
    }
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.config)?;

    match cli.command {
        Command::GenDemos(a) => {
            let ds = demos::generate(a.n, a.seed, cfg.demo_jitter).map_err(|e| e.to_string())?;
            demos::save(&ds, &a.out).map_err(|e| e.to_string())?;
            println!(
                "wrote {} episodes ({} steps) to {} [checksum {:016x}]",
                ds.episodes.len(),
                ds.total_steps(),
                a.out.display(),
                demos::dataset_checksum(&ds)
            );
        }
        Command::TrainDp(a) => {
            let ds = demos::load(&a.demos).map_err(|e| e.to_string())?;
            let mut cfg = cfg;
            if let Some(e) = a.epochs {
                cfg.epochs_dp = e;
            }
            let dp = diffusion::train(&ds, &cfg, a.seed);
            dp.save(&a.out).map_err(|e| e.to_string())?;
            println!(
                "trained diffusion policy ({} epochs) -> {} [checksum {:016x}]",
                cfg.epochs_dp,
                a.out.display(),
                dp.checksum()
            );
        }
        Command::TrainFast(a) => {
            let ds = demos::load(&a.demos).map_err(|e| e.to_string())?;
            let mut cfg = cfg;
            if let Some(e) = a.epochs {
                cfg.epochs_stage1 = e;
            }
            let model = train_stage1(&ds, &cfg, a.seed, a.ablate_ssd, a.ablate_ta, a.ablate_dca);
            model.save(&a.out).map_err(|e| e.to_string())?;
            println!(
                "trained stage-1 model ({} epochs) -> {} [checksum {:016x}]",
                cfg.epochs_stage1,
                a.out.display(),
                model.checksum()
            );
        }
        Command::Eval(a) => {
            let mode = RuntimeMode::parse(&a.mode).ok_or(format!("unknown mode `{}`", a.mode))?;
            let perturb =
                PerturbKind::parse(&a.perturb).ok_or(format!("unknown perturbation `{}`", a.perturb))?;
            let dp = DiffusionPolicy::load(&a.dp).map_err(|e| e.to_string())?;
            let stage1 = match (&a.fast, mode) {
                (Some(p), _) => Some(Stage1Model::load(p).map_err(|e| e.to_string())?),
                (None, RuntimeMode::Dcdp) => {
                    return Err("dcdp mode requires --fast <ckpt>".into())
                }
                _ => None,
            };
            let mut ecfg = EvalConfig::new(&cfg, mode, perturb);
            ecfg.seeds = parse_seeds(&a.seeds)?;
            if let Some(m) = a.mag {
                ecfg.magnitude = m;
            }
            let (row, _) = run_eval(&dp, stage1.as_ref(), &ecfg);
            print_rows(&[row.clone()]);
            write_results(&[row.clone()], &a.out).map_err(|e| e.to_string())?;
            if let Some(dir) = &a.plot_dir {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                let schedule = eval::schedule_for_cli(perturb, ecfg.magnitude, ecfg.seeds[0]);
                let res = eval::rollout(
                    &dp,
                    stage1.as_ref(),
                    mode,
                    ecfg.seeds[0],
                    schedule,
                    ecfg.t_max,
                    ecfg.sigma_star,
                    true,
                );
                let goal = dcdp_core::env::GoalSpec::default();
                let title = format!("{} / {}", row.mode, row.perturb);
                let svg = plot_trajectory(&res.trace, &goal, &title);
                let name = format!("traj_{}_{}.svg", row.mode, row.perturb);
                std::fs::write(dir.join(name), svg).map_err(|e| e.to_string())?;
            }
            println!("results -> {}", a.out.display());
        }
        Command::BenchLatency(a) => {
            let dp = DiffusionPolicy::load(&a.dp).map_err(|e| e.to_string())?;
            let stage1 = Stage1Model::load(&a.fast).map_err(|e| e.to_string())?;
            let warmup = a.warmup.unwrap_or(cfg.bench_warmup);
            let steps = a.steps.unwrap_or(cfg.bench_steps);
            let mut lines = vec!["mode,mean_ms,p95_ms,steps".to_string()];
            let mut ol_mean = 0.0;
            for mode in [
                RuntimeMode::OpenLoop,
                RuntimeMode::ClosedLoop,
                RuntimeMode::TemporalEnsemble,
                RuntimeMode::Dcdp,
            ] {
                let s1 = if mode == RuntimeMode::Dcdp { Some(&stage1) } else { None };
                let stats = bench_latency(&dp, s1, mode, warmup, steps);
                if mode == RuntimeMode::OpenLoop {
                    ol_mean = stats.mean_ms;
                }
                println!(
                    "{:>4}: mean {:.3} ms  p95 {:.3} ms  ({} steps, x{:.2} of ol)",
                    mode.as_str(),
                    stats.mean_ms,
                    stats.p95_ms,
                    stats.steps,
                    stats.mean_ms / ol_mean
                );
                lines.push(format!(
                    "{},{:.6},{:.6},{}",
                    mode.as_str(),
                    stats.mean_ms,
                    stats.p95_ms,
                    stats.steps
                ));
            }
            if let Some(out) = &a.out {
                std::fs::write(out, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
                println!("latency table -> {}", out.display());
            }
        }
        Command::Ablate(a) => {
            let ds = demos::load(&a.demos).map_err(|e| e.to_string())?;
            let dp = DiffusionPolicy::load(&a.dp).map_err(|e| e.to_string())?;
            let rows = run_ablation(&ds, &dp, &cfg, a.seed);
            print_rows(&rows);
            write_results(&rows, &a.out).map_err(|e| e.to_string())?;
            println!("ablation grid -> {}", a.out.display());
        }
        Command::Plot(a) => {
            let text = std::fs::read_to_string(&a.results).map_err(|e| e.to_string())?;
            let rows = results_from_csv(&text).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| e.to_string())?;
            let bars = plot_success_bars(&rows);
            std::fs::write(a.out_dir.join("success_rates.svg"), bars)
                .map_err(|e| e.to_string())?;
            if let (Some(dp_path), Some(fast_path)) = (&a.dp, &a.fast) {
                let dp = DiffusionPolicy::load(dp_path).map_err(|e| e.to_string())?;
                let stage1 = Stage1Model::load(fast_path).map_err(|e| e.to_string())?;
                for row in &rows {
                    let Some(mode) = RuntimeMode::parse(&row.mode) else { continue };
                    let Some(perturb) = PerturbKind::parse(&row.perturb) else { continue };
                    let s1 = if mode == RuntimeMode::Dcdp { Some(&stage1) } else { None };
                    let schedule = eval::schedule_for_cli(perturb, row.magnitude, 0);
                    let res = eval::rollout(&dp, s1, mode, 0, schedule, cfg.t_max, cfg.sigma_star, true);
                    let title = format!("{} / {}", row.mode, row.perturb);
                    let svg = plot_trajectory(&res.trace, &dcdp_core::env::GoalSpec::default(), &title);
                    let name = format!("traj_{}_{}.svg", row.mode, row.perturb);
                    std::fs::write(a.out_dir.join(name), svg).map_err(|e| e.to_string())?;
                }
            }
            println!("plots -> {}", a.out_dir.display());
        }
    }
    Ok(())
}

fn print_rows(rows: &[ResultRow]) {
    println!(
        "{:<6} {:<9} {:>5} {:<8} {:>7} {:>8} {:>10}",
        "mode", "perturb", "mag", "flags", "succ%", "sigma", "steps"
    );
    for r in rows {
        println!(
            "{:<6} {:<9} {:>5} {:<8} {:>7.1} {:>8.3} {:>10.1}",
            r.mode, r.perturb, r.magnitude, r.flags, r.success_rate, r.mean_sigma, r.mean_steps
        );
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
