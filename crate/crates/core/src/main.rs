use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qtensor_control::{Error, Preset, ProblemConfig, Result, Setup};

#[derive(Parser)]
#[command(
    name = "qtctl",
    version,
    about = "Q-tensor gradient flow and optimal boundary control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the boundary control of an experiment and write all artifacts.
    Run(Overrides),
    /// Run the state equation once under the initial control.
    Forward(Overrides),
    /// Print the resolved configuration as TOML.
    ShowConfig(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// Experiment preset (1, 2 or 3); ignored when --config is given.
    #[arg(long, default_value_t = 1)]
    preset: u8,
    /// Configuration file (TOML) replacing the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Subdivisions per side of the unit square or cube.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tf: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep forward states on disk instead of in memory.
    #[arg(long)]
    checkpoint: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ProblemConfig> {
        let mut cfg = match &self.config {
            Some(path) => ProblemConfig::load(path)?,
            None => ProblemConfig::preset(Preset::try_from(self.preset).map_err(Error::Config)?),
        };
        if let Some(n) = self.n {
            cfg.n_per_side = n;
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(tf) = self.tf {
            cfg.t_final = tf;
        }
        if let Some(it) = self.max_iters {
            cfg.optimizer.max_iter = it;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.output.checkpoint |= self.checkpoint;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ShowConfig(o) => {
            print!("{}", o.resolve()?.to_toml_string()?);
        }
        Command::Forward(o) => {
            let cfg = o.resolve()?;
            let setup = Setup::new(&cfg)?;
            let out = setup.run_forward()?;
            setup.write_forward(&cfg.output.dir, &out)?;
            println!(
                "objective {:.6e}, {} Newton iterations, {} defects",
                out.objective,
                out.report.total_iterations(),
                out.defects.defects.len()
            );
            print_defects(&out.defects);
        }
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let setup = Setup::new(&cfg)?;
            println!(
                "{:>5} {:>14} {:>12} {:>10} {:>7} {:>7}",
                "iter", "objective", "residual", "step", "trials", "active"
            );
            let out = setup.run_optimization(|r| {
                println!(
                    "{:>5} {:>14.6e} {:>12.4e} {:>10.3e} {:>7} {:>7.3}",
                    r.iter,
                    r.objective,
                    r.residual,
                    r.step,
                    r.line_search_trials,
                    r.active_fraction
                )
            })?;
            setup.write_optimization(&cfg.output.dir, &out)?;
            println!(
                "status {:?}, objective {:.6e}",
                out.result.status, out.result.objective
            );
            print_defects(&out.defects);
        }
    }
    Ok(())
}

fn print_defects(report: &qtensor_control::DefectReport) {
    for d in &report.defects {
        println!(
            "defect at ({:.4}, {:.4}, {:.4}), lambda_max {:.4}",
            d.position[0], d.position[1], d.position[2], d.lambda_max
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.class(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
