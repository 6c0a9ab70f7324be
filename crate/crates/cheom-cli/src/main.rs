//! Command-line front end: parse scenario configs, dispatch runs / scans /
//! comparisons, emit CSV and JSON artifacts with full provenance.
//!
//! Exit codes: 0 success, 1 engine/runtime failure, 2 config or usage
//! validation failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cheom::config::{self, ConfigFile, ConventionFlags};
use cheom::experiments::{
    feedback_master_equation, lambda_scan, oracle_compare, run_ensemble, run_trajectory,
    switching_protocol, Scenario,
};

mod output;

use output::{write_atomic, CsvTable};

#[derive(Parser)]
#[command(
    name = "cheom",
    version,
    about = "Conditioned hierarchy simulations of monitored cavity QED"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory count override.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Time step override.
    #[arg(long)]
    dt: Option<f64>,
    /// Truncation depth override.
    #[arg(long)]
    kmax: Option<usize>,
    /// Horizon override.
    #[arg(long)]
    t_final: Option<f64>,
    /// Output directory (default: ./cheom-out/<name>-<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap; overrides RAYON_NUM_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single conditioned trajectory and write its series.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Which trajectory of the ensemble seed plan to run.
        #[arg(long, default_value_t = 0)]
        trajectory_index: u64,
    },
    /// Run the configured ensemble and write per-point statistics.
    Ensemble {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Scan constant feedback strengths through the deterministic feedback
    /// master equation.
    ScanLambda {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, allow_hyphen_values = true)]
        lambda_min: f64,
        #[arg(long, allow_hyphen_values = true)]
        lambda_max: f64,
        #[arg(long, default_value_t = 0.01)]
        lambda_step: f64,
    },
    /// Alternating-sign feedback sequence through the deterministic
    /// feedback master equation.
    SwitchProtocol {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, allow_hyphen_values = true)]
        lambda_plus: f64,
        #[arg(long, allow_hyphen_values = true)]
        lambda_minus: f64,
        #[arg(long)]
        t1: f64,
        #[arg(long)]
        t2: f64,
    },
    /// Shared-path mean trace distance of truncated hierarchies and
    /// baselines against the exact conditioned master equation.
    CompareOracle {
        /// Scenario config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated truncation depths, e.g. 1,2,4,6.
        #[arg(long, value_delimiter = ',')]
        kmax: Vec<usize>,
        /// Also run the conditioned Redfield and bad-cavity baselines.
        #[arg(long, default_value_t = true)]
        baselines: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the closed-form auxiliary count for a truncation.
    CountAux {
        #[arg(long)]
        modes: usize,
        #[arg(long)]
        kmax: usize,
    },
    /// Parse and validate a config without writing anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e {
                cheom::Error::Config { .. } | cheom::Error::NoisePathDecode(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> cheom::Result<()> {
    match cli.command {
        Command::CountAux { modes, kmax } => {
            let k = cheom::engine::auxiliary_count(modes, kmax)?;
            println!("{k}");
            Ok(())
        }
        Command::Validate { config } => {
            let scenario = config::parse_config(&config)?;
            println!(
                "ok: {} ({} modes, k_max {}, {} auxiliaries)",
                scenario.name,
                scenario.modes.len(),
                scenario.k_max,
                scenario.space()?.len()
            );
            Ok(())
        }
        Command::Run { common, trajectory_index } => {
            let ctx = Context::prepare(&common, "run")?;
            let started = Instant::now();
            let record = run_trajectory(&ctx.scenario, trajectory_index)?;
            let mut table = CsvTable::new("t");
            table.set_axis(&record.t);
            for (name, values) in &record.series {
                table.add_column(name, values);
            }
            ctx.write_csv("observables.csv", &table)?;
            if !record.currents.is_empty() {
                let mut cur = CsvTable::new("t");
                cur.set_axis(&record.t[1..]);
                for (name, values) in &record.currents {
                    cur.add_column(name, values);
                }
                ctx.write_csv("currents.csv", &cur)?;
            }
            if !record.jump_times.is_empty() {
                let mut rows = String::from("mode,t\n");
                for (mode, t) in &record.jump_times {
                    rows.push_str(&format!("{mode},{}\n", output::fmt_f64(*t)));
                }
                write_atomic(&ctx.dir.join("jumps.csv"), rows.as_bytes())?;
            }
            ctx.finish(started, serde_json::json!({ "trajectory_index": trajectory_index }))
        }
        Command::Ensemble { common } => {
            let ctx = Context::prepare(&common, "ensemble")?;
            let started = Instant::now();
            let m = ctx.scenario.trajectories;
            let stats = run_ensemble(&ctx.scenario, m)?;
            let mut table = CsvTable::new("t");
            table.set_axis(&stats.t);
            for (name, values) in &stats.mean {
                table.add_column(&format!("{name}.mean"), values);
                table.add_column(&format!("{name}.sem"), &stats.sem[name]);
            }
            table.add_column("entropy_of_mean", &stats.entropy_of_mean);
            if let Some(gain) = stats.information_gain() {
                table.add_column("info_gain", &gain);
            }
            ctx.write_csv("ensemble.csv", &table)?;
            ctx.finish(
                started,
                serde_json::json!({
                    "trajectories": m,
                    "jump_counts": stats.jump_counts,
                }),
            )
        }
        Command::ScanLambda { common, lambda_min, lambda_max, lambda_step } => {
            if !(lambda_step > 0.0) || lambda_max < lambda_min {
                return Err(cheom::Error::Config {
                    path: "lambda scan".into(),
                    message: "need lambda_min <= lambda_max and lambda_step > 0".into(),
                });
            }
            let ctx = Context::prepare(&common, "scan-lambda")?;
            let started = Instant::now();
            let n = ((lambda_max - lambda_min) / lambda_step).round() as usize;
            let lambdas: Vec<f64> = (0..=n).map(|i| lambda_min + i as f64 * lambda_step).collect();
            let points = lambda_scan(&ctx.scenario, &lambdas)?;
            let mut rows = String::from("lambda,min_xi2,t_at_min\n");
            for p in &points {
                rows.push_str(&format!(
                    "{},{},{}\n",
                    output::fmt_f64(p.lambda),
                    output::fmt_f64(p.min_xi2),
                    output::fmt_f64(p.t_at_min)
                ));
            }
            write_atomic(&ctx.dir.join("scan.csv"), rows.as_bytes())?;
            let best = points.iter().min_by(|a, b| a.min_xi2.total_cmp(&b.min_xi2));
            ctx.finish(
                started,
                serde_json::json!({
                    "lambda_min": lambda_min,
                    "lambda_max": lambda_max,
                    "lambda_step": lambda_step,
                    "best": best.map(|p| serde_json::json!({
                        "lambda": p.lambda, "min_xi2": p.min_xi2, "t_at_min": p.t_at_min,
                    })),
                }),
            )
        }
        Command::SwitchProtocol { common, lambda_plus, lambda_minus, t1, t2 } => {
            let ctx = Context::prepare(&common, "switch-protocol")?;
            let started = Instant::now();
            let switched = switching_protocol(&ctx.scenario, lambda_plus, lambda_minus, t1, t2)?;
            let constant = |lambda: f64| -> cheom::Result<Vec<f64>> {
                let mut s = ctx.scenario.clone();
                s.feedback = Some(cheom::engine::FeedbackSpec {
                    mode_index: 0,
                    operator: s
                        .spin
                        .as_ref()
                        .map(|sp| sp.jy.clone())
                        .expect("switching validated the spin context"),
                    law: cheom::engine::FeedbackLaw::Schedule(
                        cheom::engine::LambdaSchedule::constant(lambda),
                    ),
                });
                if !s.outputs.contains(&cheom::experiments::Observable::SpinSqueezing) {
                    s.outputs.push(cheom::experiments::Observable::SpinSqueezing);
                }
                Ok(feedback_master_equation(&s)?.series["xi2"].clone())
            };
            let xi_plus = constant(lambda_plus)?;
            let xi_minus = constant(lambda_minus)?;
            let mut table = CsvTable::new("t");
            table.set_axis(&switched.t);
            table.add_column("xi2_switch", &switched.series["xi2"]);
            table.add_column("xi2_plus", &xi_plus);
            table.add_column("xi2_minus", &xi_minus);
            ctx.write_csv("switching.csv", &table)?;
            ctx.finish(
                started,
                serde_json::json!({
                    "lambda_plus": lambda_plus, "lambda_minus": lambda_minus,
                    "t1": t1, "t2": t2,
                }),
            )
        }
        Command::CompareOracle {
            config,
            kmax,
            baselines,
            seed,
            trajectories,
            dt,
            t_final,
            out,
            threads,
        } => {
            if kmax.is_empty() {
                return Err(cheom::Error::Config {
                    path: "kmax".into(),
                    message: "need at least one truncation depth".into(),
                });
            }
            let common = CommonArgs {
                config,
                seed,
                trajectories,
                dt,
                kmax: None,
                t_final,
                out,
                threads,
            };
            let ctx = Context::prepare(&common, "compare-oracle")?;
            let started = Instant::now();
            let m = ctx.scenario.trajectories;
            let cmp = oracle_compare(&ctx.scenario, m, &kmax, baselines)?;
            let mut table = CsvTable::new("t");
            table.set_axis(&cmp.t);
            for (name, values) in &cmp.mean_distance {
                table.add_column(name, values);
            }
            ctx.write_csv("distances.csv", &table)?;
            let averages: serde_json::Map<String, serde_json::Value> = cmp
                .mean_distance
                .keys()
                .map(|k| (k.clone(), serde_json::json!(cmp.time_average(k).unwrap_or(f64::NAN))))
                .collect();
            ctx.finish(
                started,
                serde_json::json!({ "trajectories": m, "time_averaged_distance": averages }),
            )
        }
    }
}

/// Prepared invocation: parsed config with overrides folded in, plus the
/// output directory.
struct Context {
    scenario: Scenario,
    config_echo: ConfigFile,
    dir: PathBuf,
    subcommand: &'static str,
    cmdline: String,
}

impl Context {
    fn prepare(common: &CommonArgs, subcommand: &'static str) -> cheom::Result<Self> {
        if let Some(n) = common.threads {
            // flag wins over RAYON_NUM_THREADS; ignore failure if a pool
            // already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let text = std::fs::read_to_string(&common.config)?;
        let mut file = config::deserialize(&text)?;
        // fold overrides into the echoed config so the manifest alone
        // reproduces the run
        if let Some(seed) = common.seed {
            file.ensemble.master_seed = seed;
        }
        if let Some(m) = common.trajectories {
            file.ensemble.trajectories = m;
        }
        if let Some(dt) = common.dt {
            file.dt = dt;
        }
        if let Some(k) = common.kmax {
            file.k_max = k;
        }
        if let Some(t) = common.t_final {
            file.t_final = t;
        }
        let scenario = config::build_scenario(&file)?;
        let dir = common.out.clone().unwrap_or_else(|| {
            PathBuf::from("cheom-out").join(format!("{}-{subcommand}", file.name))
        });
        std::fs::create_dir_all(&dir)?;
        let cmdline: Vec<String> = std::env::args().collect();
        Ok(Self { scenario, config_echo: file, dir, subcommand, cmdline: cmdline.join(" ") })
    }

    fn write_csv(&self, name: &str, table: &CsvTable) -> cheom::Result<()> {
        write_atomic(&self.dir.join(name), table.render().as_bytes())
    }

    fn finish(&self, started: Instant, extra: serde_json::Value) -> cheom::Result<()> {
        let manifest = serde_json::json!({
            "name": self.scenario.name,
            "subcommand": self.subcommand,
            "software_version": env!("CARGO_PKG_VERSION"),
            "unit_frequency": self.scenario.unit_frequency,
            "master_seed": self.scenario.master_seed,
            "config": self.config_echo,
            "conventions": ConventionFlags::new(self.scenario.theta),
            "command_line": self.cmdline,
            "wall_time_s": started.elapsed().as_secs_f64(),
            "details": extra,
        });
        let pretty = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.dir.join("manifest.json"), pretty.as_bytes())?;
        println!("wrote {}", self.dir.display());
        Ok(())
    }
}
