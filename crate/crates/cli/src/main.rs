//! Batch driver for subdivision-surface isogeometric analysis experiments.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use subdiv_iga::harness::{
    parse_config_file, parse_quadrature, report_timing, run_case, CaseName, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "subdiv-iga",
    about = "Isogeometric Laplace-Beltrami experiments on Catmull-Clark subdivision surfaces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CaseArgs {
    /// Built-in case name (plate-test{1..4}-mesh{1,2}, cylinder-regular,
    /// cylinder-4ev, cylinder-7ev, hemisphere, custom) or a path to a
    /// key=value config file.
    #[arg(long)]
    case: String,
    /// Number of refinement levels to run.
    #[arg(long)]
    levels: Option<usize>,
    /// Quadrature for irregular elements: standard or adaptive:N.
    #[arg(long)]
    quadrature: Option<String>,
    /// Penalty factor for the Dirichlet boundary terms.
    #[arg(long)]
    beta: Option<f64>,
    /// Quad OBJ file for the custom case.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Output directory for the CSV reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for assembly (results are thread-count independent).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a case over its refinement levels and write convergence,
    /// point-wise error and sparsity reports.
    Run(CaseArgs),
    /// Time assembly with standard and adaptive quadrature (n_d = 0, 3, 7).
    Timing(CaseArgs),
}

fn resolve(args: &CaseArgs) -> Result<RunConfig, String> {
    let mut config = if std::path::Path::new(&args.case).is_file() {
        parse_config_file(&args.case).map_err(|e| e.to_string())?
    } else {
        let case = CaseName::parse(&args.case).map_err(|e| e.to_string())?;
        RunConfig::new(case, "out")
    };
    if let Some(levels) = args.levels {
        config.levels = levels;
    }
    if let Some(q) = &args.quadrature {
        config.quadrature = parse_quadrature(q).ok_or_else(|| format!("bad quadrature '{q}'"))?;
    }
    if let Some(beta) = args.beta {
        config.beta = beta;
    }
    if let Some(mesh) = &args.mesh {
        config.mesh_path = Some(mesh.clone());
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    if config.levels == 0 {
        return Err("levels must be at least 1".into());
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => resolve(args).and_then(|config| {
            let artifacts = run_case(&config).map_err(|e| e.to_string())?;
            println!(
                "case {} ({}), beta {:.1e}",
                config.case.as_str(),
                config.quadrature.description(),
                config.beta
            );
            println!(
                "{:>5} {:>10} {:>8} {:>12} {:>12} {:>8} {:>8}",
                "level", "elements", "dofs", "e_L2", "e_H1", "rate_L2", "rate_H1"
            );
            for r in &artifacts.levels {
                println!(
                    "{:>5} {:>10} {:>8} {:>12.4e} {:>12.4e} {:>8.3} {:>8.3}",
                    r.level, r.n_elements, r.n_dofs, r.e_l2, r.e_h1, r.rate_l2, r.rate_h1
                );
            }
            println!(
                "wrote {}, {}, {}",
                artifacts.convergence_csv.display(),
                artifacts.pointwise_csv.display(),
                artifacts.sparsity_csv.display()
            );
            Ok(())
        }),
        Command::Timing(args) => resolve(args).and_then(|config| {
            let rows = report_timing(&config).map_err(|e| e.to_string())?;
            println!(
                "{:>5} {:>10} {:>4} {:>12} {:>10}",
                "level", "elements", "n_d", "e_L2", "assembly"
            );
            for r in &rows {
                println!(
                    "{:>5} {:>10} {:>4} {:>12.4e} {:>9.3}s",
                    r.level, r.n_elements, r.depth, r.e_l2, r.assembly_seconds
                );
            }
            println!("wrote {}", config.out_dir.join("timing.csv").display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
