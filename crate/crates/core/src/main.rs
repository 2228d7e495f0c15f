//! Command-line driver: tableau inspection, config validation, ground-state
//! preparation, time evolution, and the convergence experiment.
//!
//! Exit codes: 0 success, 2 configuration/validation failure, 1 runtime
//! failure (divergence, numerics, io).

use clap::{Parser, Subcommand};
use rotgpe::config::{canonical_echo, parse_config, RunConfig};
use rotgpe::convergence::{report_csv, run_convergence_experiment, ConvergenceSpec};
use rotgpe::error::{Error, Result};
use rotgpe::groundstate::{ground_state, isotropic_trap};
use rotgpe::io::{read_field, write_field, write_field_vtk, write_timeseries_csv, FieldHeader};
use rotgpe::mesh::{build_dofmap, build_mesh, ComplexField, DofMap, Mesh};
use rotgpe::operators::{assemble_operators, validate_trap, DiscreteOperators, GpeProblem};
use rotgpe::stepper::{evolve, StepperConfig};
use rotgpe::tableau::build_tableau;
use std::cell::RefCell;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "rotgpe",
    version,
    about = "Energy-conserving continuous Galerkin solver for the rotating Gross-Pitaevskii equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the cG(q) coefficient tables as CSV
    Tableau {
        /// Polynomial degree (stage count) of the integrator
        #[arg(long)]
        q: usize,
    },
    /// Parse a config, assemble the operators, and check the trap condition
    Validate { config: PathBuf },
    /// Minimize the isotropic-trap energy and write the state to a field file
    Groundstate {
        config: PathBuf,
        /// Output field file
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evolve an initial state and record diagnostics and snapshots
    Evolve {
        config: PathBuf,
        /// Initial field file; computed as the ground state when omitted
        #[arg(long)]
        initial: Option<PathBuf>,
        /// Evolve even if the trap condition check fails
        #[arg(long)]
        force: bool,
    },
    /// Run the (q, tau) convergence experiment against a reference run
    Converge {
        config: PathBuf,
        /// Initial field file; computed as the ground state when omitted
        #[arg(long)]
        initial: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Tableau { q } => {
            let tableau = build_tableau(q)?;
            print!("{}", tableau.to_csv());
            Ok(())
        }
        Command::Validate { config } => cmd_validate(&config),
        Command::Groundstate { config, output } => cmd_groundstate(&config, &output),
        Command::Evolve {
            config,
            initial,
            force,
        } => cmd_evolve(&config, initial.as_deref(), force),
        Command::Converge { config, initial } => cmd_converge(&config, initial.as_deref()),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

fn problem_of(cfg: &RunConfig) -> GpeProblem {
    GpeProblem {
        omega: cfg.omega,
        beta: cfg.beta,
        potential: cfg.potential.clone(),
        lambda_margin: cfg.lambda_margin,
    }
}

struct Discretization {
    mesh: Mesh,
    dofs: DofMap,
    ops: DiscreteOperators,
}

fn discretize(cfg: &RunConfig, problem: &GpeProblem) -> Result<Discretization> {
    let mesh = build_mesh(cfg.r, cfg.n_h)?;
    let dofs = build_dofmap(&mesh);
    let ops = assemble_operators(&mesh, &dofs, problem)?;
    Ok(Discretization { mesh, dofs, ops })
}

fn cmd_validate(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let problem = problem_of(&cfg);
    let d = discretize(&cfg, &problem)?;
    print!("{}", canonical_echo(&cfg));
    let trap = validate_trap(&problem, &d.mesh);
    if trap.pass {
        println!("trap check: PASS (worst margin {:.6e})", trap.worst_margin);
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "trap check FAILED (worst margin {:.6e}): the potential does not dominate \
             the rotation term at margin lambda = {}",
            trap.worst_margin, cfg.lambda_margin
        )))
    }
}

/// Ground state of the isotropic trap x^2 + y^2 at the configured rotation
/// and interaction; this is the standard initial condition for evolve runs.
fn compute_ground_state(cfg: &RunConfig) -> Result<ComplexField> {
    let problem = isotropic_trap(cfg.omega, cfg.beta, cfg.lambda_margin);
    let d = discretize(cfg, &problem)?;
    let gs = ground_state(&problem, &d.mesh, &d.dofs, &d.ops, &cfg.gs)?;
    eprintln!(
        "ground state: E = {:.12e}, mu = {:.12e}, residual = {:.3e}, {} iterations",
        gs.energy, gs.chemical_potential, gs.residual, gs.iters
    );
    Ok(gs.field)
}

fn cmd_groundstate(config: &Path, output: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let field = compute_ground_state(&cfg)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let header = FieldHeader {
        n_h: cfg.n_h,
        q: cfg.q,
        r: cfg.r,
        t: 0.0,
    };
    write_field(&header, &field, output)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn load_initial(cfg: &RunConfig, initial: Option<&Path>) -> Result<ComplexField> {
    match initial {
        Some(path) => {
            let (header, field) = read_field(path)?;
            if header.n_h != cfg.n_h || header.r != cfg.r {
                return Err(Error::Data(format!(
                    "initial field {} was computed for n_h = {}, r = {}, but the config \
                     has n_h = {}, r = {}",
                    path.display(),
                    header.n_h,
                    header.r,
                    cfg.n_h,
                    cfg.r
                )));
            }
            Ok(field)
        }
        None => {
            eprintln!("no --initial given; computing the isotropic-trap ground state");
            compute_ground_state(cfg)
        }
    }
}

fn check_trap(cfg: &RunConfig, problem: &GpeProblem, mesh: &Mesh, force: bool) -> Result<()> {
    let trap = validate_trap(problem, mesh);
    if trap.pass {
        return Ok(());
    }
    let msg = format!(
        "trap check FAILED (worst margin {:.6e}) at margin lambda = {}",
        trap.worst_margin, cfg.lambda_margin
    );
    if force {
        eprintln!("warning: {msg}; continuing because --force was given");
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{msg}; rerun with --force to evolve anyway"
        )))
    }
}

fn cmd_evolve(config: &Path, initial: Option<&Path>, force: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let problem = problem_of(&cfg);
    let d = discretize(&cfg, &problem)?;
    check_trap(&cfg, &problem, &d.mesh, force)?;
    let u0 = load_initial(&cfg, initial)?;
    if u0.len() != d.dofs.n_dofs {
        return Err(Error::Data(format!(
            "initial field has {} coefficients, mesh has {} unknowns",
            u0.len(),
            d.dofs.n_dofs
        )));
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.txt"), canonical_echo(&cfg))?;

    let tableau = build_tableau(cfg.q)?;
    let stepper_cfg = StepperConfig {
        tau: cfg.tau,
        eps_fp: cfg.eps_fp,
        max_fp_iters: cfg.max_fp_iters,
        t_final: cfg.t_final,
    };

    // Snapshots are written from inside the march; the first io failure is
    // kept and reported after the run.
    let snapshot_io: RefCell<Option<Error>> = RefCell::new(None);
    let result = evolve(
        &u0,
        &problem,
        &tableau,
        &d.ops,
        &d.mesh,
        &d.dofs,
        stepper_cfg,
        |n, _t, field| {
            if cfg.formats.vtk
                && cfg.snapshot_stride > 0
                && n % cfg.snapshot_stride == 0
                && snapshot_io.borrow().is_none()
            {
                let path = cfg.output_dir.join(format!("snapshot_{n:06}.vtk"));
                if let Err(e) = write_field_vtk(field, &d.mesh, &d.dofs, &path) {
                    *snapshot_io.borrow_mut() = Some(e);
                }
            }
        },
    )?;

    if cfg.formats.csv {
        write_timeseries_csv(&result.diagnostics, &cfg.output_dir.join("diagnostics.csv"))?;
    }
    if let Some(e) = snapshot_io.into_inner() {
        return Err(e);
    }

    let last = result
        .diagnostics
        .rows
        .last()
        .expect("evolve always records the initial node");
    let header = FieldHeader {
        n_h: cfg.n_h,
        q: cfg.q,
        r: cfg.r,
        t: last.t,
    };
    write_field(
        &header,
        &result.final_field,
        &cfg.output_dir.join("final_field.bin"),
    )?;
    if cfg.formats.vtk {
        write_field_vtk(
            &result.final_field,
            &d.mesh,
            &d.dofs,
            &cfg.output_dir.join("final.vtk"),
        )?;
    }

    if let Some(e) = result.error {
        eprintln!(
            "run aborted at step {} of {}; partial diagnostics written to {}",
            result.diagnostics.rows.len() - 1,
            (cfg.t_final / cfg.tau).round() as usize,
            cfg.output_dir.display()
        );
        return Err(e);
    }

    let first = &result.diagnostics.rows[0];
    let drift = result
        .diagnostics
        .rows
        .iter()
        .map(|r| (r.energy - first.energy).abs())
        .fold(0.0f64, f64::max);
    println!(
        "evolved {} steps to t = {:.6}; energy {:.12e} (max drift {:.3e}), mass {:.12e}",
        result.diagnostics.rows.len() - 1,
        last.t,
        last.energy,
        drift,
        last.mass
    );
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_converge(config: &Path, initial: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let problem = problem_of(&cfg);
    let d = discretize(&cfg, &problem)?;
    check_trap(&cfg, &problem, &d.mesh, false)?;
    let u0 = load_initial(&cfg, initial)?;

    let spec = ConvergenceSpec {
        q_list: cfg.q_list.clone(),
        tau_list: cfg.tau_list.clone(),
        ref_q: cfg.ref_q,
        ref_tau: cfg.ref_tau,
        t_final: cfg.t_final,
        eps_fp: cfg.eps_fp,
        max_fp_iters: cfg.max_fp_iters,
    };
    let report = run_convergence_experiment(&u0, &problem, &d.mesh, &d.dofs, &d.ops, &spec)?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.txt"), canonical_echo(&cfg))?;
    std::fs::write(cfg.output_dir.join("report.csv"), report_csv(&report))?;

    for c in &report.cells {
        if let Err(msg) = &c.outcome {
            eprintln!("cell q={} tau={:.6e} failed: {msg}", c.q, c.tau);
        }
    }
    for (q, slope) in &report.slopes {
        match slope {
            Some(s) => println!("slope q={q}: {s:.4}"),
            None => println!("slope q={q}: not fitted (needs 3 successful cells)"),
        }
    }
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}
