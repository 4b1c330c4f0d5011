use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cutflux::driver::{
    manufactured_g_case, run_experiment, ExperimentSpec, Metric, RefinementMode,
};
use cutflux::experiments::ExampleName;

#[derive(Parser)]
#[command(
    name = "cutflux",
    version,
    about = "CutFEM interface solver with conservative flux reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one benchmark with uniform or adaptive refinement.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// ellipse, lshape, petal, linear-patch or manufactured-g.
    #[arg(long)]
    example: ExampleName,
    /// Contrast parameter (defaults to the example's value).
    #[arg(long)]
    mu: Option<f64>,
    /// uniform or amr.
    #[arg(long, default_value = "amr")]
    mode: RefinementMode,
    /// Dörfler marking fraction.
    #[arg(long, default_value_t = 0.35)]
    theta_mark: f64,
    /// Stop once the number of dofs reaches this value.
    #[arg(long)]
    max_dofs: Option<usize>,
    /// Upper bound on the number of solves.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Nitsche penalty.
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    /// Ghost penalty.
    #[arg(long, default_value_t = 0.1)]
    gamma_g: f64,
    /// Initial subdivisions per axis.
    #[arg(long)]
    n0: Option<usize>,
    /// Directory for convergence.csv and one VTK file per iteration.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn spec(self) -> ExperimentSpec {
        let mut spec = match (self.example, self.mode) {
            (ExampleName::ManufacturedG, RefinementMode::Amr) => manufactured_g_case(),
            (example, mode) => ExperimentSpec::new(example, mode),
        };
        spec.theta_mark = self.theta_mark;
        spec.gamma = self.gamma;
        spec.gamma_g = self.gamma_g;
        spec.out_dir = self.out;
        if let Some(mu) = self.mu {
            spec.mu = mu;
        }
        if let Some(n) = self.max_dofs {
            spec.max_dofs = n;
        }
        if let Some(n) = self.max_iters {
            spec.max_iters = n;
        }
        if let Some(n) = self.n0 {
            spec.n0 = n;
        }
        spec
    }
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let spec = args.spec();
    let table = run_experiment(&spec)
        .with_context(|| format!("{} ({}, mu = {})", spec.example, spec.mode, spec.mu))?;
    println!(
        "{:>4} {:>8} {:>12} {:>12} {:>12} {:>12} {:>8} {:>10}",
        "iter", "N", "energy", "flux", "eta", "eta_gamma", "eff", "cons"
    );
    for r in &table.rows {
        println!(
            "{:>4} {:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.3} {:>10.2e}",
            r.iter,
            r.n_dofs,
            r.energy_error,
            r.flux_error,
            r.eta,
            r.eta_gamma,
            r.effectivity,
            r.max_conservation_defect
        );
    }
    for (name, metric) in [
        ("energy", Metric::EnergyError),
        ("flux", Metric::FluxError),
        ("eta", Metric::Eta),
    ] {
        if let Some(s) = table.slope(metric, 4) {
            println!("slope {name}: {s:.3}");
        }
    }
    if let Some(dir) = &spec.out_dir {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
    }
}
