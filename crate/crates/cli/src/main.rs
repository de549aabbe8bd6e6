use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iosuav::config::Profile;
use iosuav::harness::{self, ExperimentPlan, Level, Sweep};
use iosuav::schemes::SchemeId;

#[derive(Parser)]
#[command(name = "iosuav", version, about = "UAV trajectory and omni-surface phase optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML scene file; unset keys fall back to the profile.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the selected schemes and write result files.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Comma-separated subset of IA,RA,IA-FT,CUC.
        #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
        schemes: Option<Vec<SchemeId>>,
        /// Mission durations in seconds, e.g. 60,100,150.
        #[arg(long, value_delimiter = ',', conflicts_with = "sweep_m")]
        sweep_t: Option<Vec<f64>>,
        /// Element counts, e.g. 16,64,256.
        #[arg(long, value_delimiter = ',')]
        sweep_m: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1000)]
        mc_draws: usize,
    },
    /// Run the oracle suite and print PASS/FAIL per check.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fast", value_parser = parse_level)]
        level: Level,
    },
    /// Write a commented scene template.
    InitConfig {
        #[arg(default_value = "iosuav.toml")]
        path: PathBuf,
        #[arg(long, default_value = "desk", value_parser = parse_profile)]
        profile: Profile,
        #[arg(long)]
        force: bool,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: iosuav::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<SchemeId, String> {
    s.parse().map_err(|e: iosuav::Error| e.to_string())
}

fn parse_level(s: &str) -> Result<Level, String> {
    s.parse().map_err(|e: iosuav::Error| e.to_string())
}

fn run(cli: Cli) -> iosuav::Result<bool> {
    match cli.command {
        Command::Run {
            common,
            out,
            schemes,
            sweep_t,
            sweep_m,
            mc_draws,
        } => {
            let mut plan = ExperimentPlan::new(common.profile, common.config, out)?;
            plan.seed = common.seed;
            plan.mc_draws = mc_draws;
            if let Some(s) = schemes {
                plan.schemes = s;
            }
            plan.sweep = match (sweep_t, sweep_m) {
                (Some(t), _) => Sweep::T(t),
                (_, Some(m)) => Sweep::M(m),
                _ => Sweep::None,
            };
            let summary = harness::cmd_run(&plan)?;
            println!("{:<6} {:>12} {:>12} {:>12} {:>10}", "scheme", "sweep", "det_rate", "mc_rate", "±95%");
            for c in &summary.cells {
                let r = &c.result;
                println!(
                    "{:<6} {:>12} {:>12.6} {:>12.6} {:>10.6}",
                    r.scheme.to_string(),
                    c.sweep_value,
                    r.deterministic_rate,
                    r.mc_rate.mean,
                    r.mc_rate.half_width
                );
            }
            println!("wrote {} files to {}", summary.files.len(), plan.out_dir.display());
            Ok(true)
        }
        Command::Validate { common, level } => {
            let scene = match &common.config {
                Some(p) => iosuav::config::load_scene(p, common.profile)?,
                None => common.profile.scene(),
            };
            let report = harness::cmd_validate(&scene, level, common.seed)?;
            print!("{}", report.render());
            Ok(report.passed())
        }
        Command::InitConfig { path, profile, force } => {
            harness::cmd_init_config(&path, profile, force)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
