//! Command line driver: runs the convergence studies, exports graded
//! meshes, and checks the core solver invariants.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dirichlet_control::experiments::{csv_line, markdown_line, CSV_HEADER, MARKDOWN_HEADER};
use dirichlet_control::{
    eoc, example1, example2, extrapolate_objective, initial_mesh, make_lshape, refine_graded,
    run_with, solve_monolithic, CoefficientSet, ControlProblem, Error, ErrorMode, Example,
    ReducedSystem, Result, RunConfig, SolverChoice, TriMesh,
};

#[derive(Parser)]
#[command(name = "dirichlet-control", version)]
#[command(about = "Dirichlet boundary control with energy regularization on graded meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a study across refinement levels and emit its table.
    Solve(SolveArgs),
    /// Mesh tools.
    Mesh {
        #[command(subcommand)]
        command: MeshCommand,
    },
    /// Run the built-in invariant checks.
    Check,
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Write the graded mesh of a refinement level as plain text.
    Export {
        /// Corner grading exponent in (0, 1].
        #[arg(long, default_value_t = 0.5)]
        mu: f64,
        /// Refinement level, 0 for the initial mesh.
        #[arg(long)]
        level: u32,
        /// Destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Which study: 1 (smooth, closed-form optimum) or 2 (non-coercive).
    #[arg(long)]
    example: Option<u8>,
    /// Corner grading exponent in (0, 1].
    #[arg(long)]
    mu: Option<f64>,
    /// Inclusive level range, e.g. 1..7.
    #[arg(long)]
    levels: Option<String>,
    /// Weight of the control seminorm in the objective.
    #[arg(long)]
    kappa: Option<f64>,
    /// Relative residual tolerance of the conjugate gradient loop.
    #[arg(long = "pcg-tol")]
    pcg_tol: Option<f64>,
    /// reduced, monolithic, or both (both cross-checks the objectives).
    #[arg(long)]
    solver: Option<String>,
    /// Table format: csv or md.
    #[arg(long)]
    format: Option<String>,
    /// Table destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Error column: exact or consecutive.
    #[arg(long = "error-mode")]
    error_mode: Option<String>,
    /// key=value file supplying any flag not given explicitly.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy)]
enum TableFormat {
    Csv,
    Markdown,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => solve(args),
        Command::Mesh {
            command: MeshCommand::Export { mu, level, out },
        } => export_mesh(mu, level, out),
        Command::Check => check(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Fills flags the command line left unset from a key=value file; lines
/// that are empty or start with `#` are skipped.
fn apply_config_file(args: &mut SolveArgs, path: &PathBuf) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("{}:{}: expected key=value", path.display(), number + 1)))?;
        let (key, value) = (key.trim(), value.trim().to_string());
        let parse_err = |e: &dyn std::fmt::Display| {
            config_err(format!("{}:{}: {key}: {e}", path.display(), number + 1))
        };
        match key {
            "example" => fill(&mut args.example, || value.parse().map_err(|e| parse_err(&e)))?,
            "mu" => fill(&mut args.mu, || value.parse().map_err(|e| parse_err(&e)))?,
            "levels" => fill(&mut args.levels, || Ok(value.clone()))?,
            "kappa" => fill(&mut args.kappa, || value.parse().map_err(|e| parse_err(&e)))?,
            "pcg-tol" => fill(&mut args.pcg_tol, || value.parse().map_err(|e| parse_err(&e)))?,
            "solver" => fill(&mut args.solver, || Ok(value.clone()))?,
            "format" => fill(&mut args.format, || Ok(value.clone()))?,
            "out" => fill(&mut args.out, || Ok(PathBuf::from(&value)))?,
            "error-mode" => fill(&mut args.error_mode, || Ok(value.clone()))?,
            _ => {
                return Err(config_err(format!(
                    "{}:{}: unknown key {key:?}",
                    path.display(),
                    number + 1
                )))
            }
        }
    }
    Ok(())
}

fn fill<T>(slot: &mut Option<T>, value: impl FnOnce() -> Result<T>) -> Result<()> {
    if slot.is_none() {
        *slot = Some(value()?);
    }
    Ok(())
}

/// Parses an inclusive level range written as `A..B` or `A..=B`.
fn parse_levels(text: &str) -> Result<(u32, u32)> {
    let (first, last) = text
        .split_once("..")
        .ok_or_else(|| config_err(format!("levels must look like 1..7, got {text:?}")))?;
    let last = last.strip_prefix('=').unwrap_or(last);
    let parse = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|e| config_err(format!("levels {text:?}: {e}")))
    };
    Ok((parse(first)?, parse(last)?))
}

fn build_run_config(args: &SolveArgs) -> Result<(RunConfig, TableFormat)> {
    let example = match args.example {
        Some(1) => Example::One,
        Some(2) => Example::Two,
        Some(n) => return Err(config_err(format!("example must be 1 or 2, got {n}"))),
        None => return Err(config_err("missing required option: example")),
    };
    let mut config = RunConfig::new(example);
    if let Some(mu) = args.mu {
        config.mu = mu;
    }
    if let Some(text) = &args.levels {
        config.levels = parse_levels(text)?;
    }
    if let Some(kappa) = args.kappa {
        config.kappa = kappa;
    }
    if let Some(tol) = args.pcg_tol {
        config.pcg_tol = tol;
    }
    if let Some(solver) = &args.solver {
        config.solver = match solver.as_str() {
            "reduced" => SolverChoice::Reduced,
            "monolithic" => SolverChoice::Monolithic,
            "both" => SolverChoice::Both,
            other => {
                return Err(config_err(format!(
                    "solver must be reduced, monolithic or both, got {other:?}"
                )))
            }
        };
    }
    if let Some(mode) = &args.error_mode {
        config.error_mode = match mode.as_str() {
            "exact" => ErrorMode::Exact,
            "consecutive" => ErrorMode::Consecutive,
            other => {
                return Err(config_err(format!(
                    "error-mode must be exact or consecutive, got {other:?}"
                )))
            }
        };
    }
    let format = match args.format.as_deref() {
        None | Some("csv") => TableFormat::Csv,
        Some("md") => TableFormat::Markdown,
        Some(other) => return Err(config_err(format!("format must be csv or md, got {other:?}"))),
    };
    config.validate()?;
    Ok((config, format))
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| {
            Error::Io(io::Error::new(
                e.kind(),
                format!("cannot create {}: {e}", p.display()),
            ))
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn solve(mut args: SolveArgs) -> Result<()> {
    if let Some(path) = args.config.take() {
        apply_config_file(&mut args, &path)?;
    }
    let (config, format) = build_run_config(&args)?;

    // Each row is written and flushed as soon as its level finishes, so a
    // failure deep in the hierarchy still leaves the table so far on disk.
    let mut out = open_output(&args.out)?;
    match format {
        TableFormat::Csv => writeln!(out, "{CSV_HEADER}")?,
        TableFormat::Markdown => writeln!(out, "{MARKDOWN_HEADER}")?,
    }
    let rows = run_with(&config, &mut |row| {
        let line = match format {
            TableFormat::Csv => csv_line(row),
            TableFormat::Markdown => markdown_line(row),
        };
        writeln!(out, "{line}")?;
        out.flush()?;
        Ok(())
    })?;
    drop(out);

    if let Some(limit) = extrapolate_objective(&rows) {
        eprintln!("objective extrapolates to {limit:.8}");
    }
    Ok(())
}

fn export_mesh(mu: f64, level: u32, out: Option<PathBuf>) -> Result<()> {
    if level > 12 {
        return Err(config_err(format!("level must be at most 12, got {level}")));
    }
    let spec = make_lshape(mu)?;
    let mut mesh = initial_mesh(&spec)?;
    for j in 1..=level {
        mesh = refine_graded(&mesh, &spec, j)?;
    }
    let mut writer = open_output(&out)?;
    mesh.export(&mut writer)?;
    writer.flush()?;
    Ok(())
}

/// Deterministic xorshift generator for the randomized checks, so that
/// repeated runs test identical vectors.
struct Rng(u64);

impl Rng {
    fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    fn vector(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.next_f64()).collect()
    }
}

fn ensure(ok: bool, what: &str, detail: String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what}: {detail}")))
    }
}

fn graded_mesh(mu: f64, level: u32) -> Result<TriMesh> {
    let spec = make_lshape(mu)?;
    let mut mesh = initial_mesh(&spec)?;
    for j in 1..=level {
        mesh = refine_graded(&mesh, &spec, j)?;
    }
    Ok(mesh)
}

fn check() -> Result<()> {
    check_mesh_suite()?;
    println!("ok mesh suite: conforming, area 3, angles >= 20 deg (mu 0.5, 2/3, 1; levels <= 4)");
    check_harmonic_extension()?;
    println!("ok harmonic extension reproduces constant and affine traces");
    check_patch_test()?;
    println!("ok patch test: affine state through the Laplace operator at levels 1-4");
    check_reduced_operator()?;
    println!("ok reduced operator is symmetric positive on 10 random vector pairs");
    check_gradient()?;
    println!("ok gradient matches central finite differences on both studies");
    check_solver_agreement()?;
    println!("ok reduced and monolithic solvers agree on both studies");
    check_rate_methodology()?;
    println!("ok consecutive-difference rates recover s = 0.5, 1, 2 exactly");
    Ok(())
}

fn check_mesh_suite() -> Result<()> {
    for mu in [0.5, 2.0 / 3.0, 1.0] {
        let spec = make_lshape(mu)?;
        let mut mesh = initial_mesh(&spec)?;
        for level in 1..=4 {
            mesh = refine_graded(&mesh, &spec, level)?;
            mesh.validate_conforming(&spec)?;
            ensure(
                (mesh.total_area() - 3.0).abs() < 1e-12,
                "mesh suite",
                format!("mu {mu} level {level}: area {}", mesh.total_area()),
            )?;
            ensure(
                mesh.min_angle_deg() >= 20.0,
                "mesh suite",
                format!("mu {mu} level {level}: min angle {}", mesh.min_angle_deg()),
            )?;
        }
    }
    Ok(())
}

fn check_harmonic_extension() -> Result<()> {
    let mesh = graded_mesh(0.5, 3)?;
    let system = ReducedSystem::new(&mesh, &example1(0.1).problem)?;
    let affine = |p: [f64; 2]| 2.0 * p[0] - 3.0 * p[1] + 0.25;
    for (name, f) in [
        ("constant", &(|_: [f64; 2]| 1.0) as &dyn Fn([f64; 2]) -> f64),
        ("affine", &affine),
    ] {
        let trace: Vec<f64> = mesh.boundary.iter().map(|&b| f(mesh.coords[b])).collect();
        let extension = system.harmonic_extension(&trace)?;
        let worst = extension
            .iter()
            .zip(&mesh.coords)
            .map(|(v, &p)| (v - f(p)).abs())
            .fold(0.0f64, f64::max);
        ensure(
            worst <= 1e-12,
            "harmonic extension",
            format!("{name} trace deviates by {worst:.3e}"),
        )?;
    }
    Ok(())
}

fn check_patch_test() -> Result<()> {
    let problem = ControlProblem {
        coeffs: CoefficientSet::laplace(),
        y_d: std::sync::Arc::new(|_| 0.0),
        u_d: std::sync::Arc::new(|_| 0.0),
        kappa: 0.1,
    };
    let spec = make_lshape(0.5)?;
    let mut mesh = initial_mesh(&spec)?;
    for level in 1..=4 {
        mesh = refine_graded(&mesh, &spec, level)?;
        let system = ReducedSystem::new(&mesh, &problem)?;
        let affine = |p: [f64; 2]| 0.5 * p[0] + 1.5 * p[1] - 2.0;
        let trace: Vec<f64> = mesh.boundary.iter().map(|&b| affine(mesh.coords[b])).collect();
        let state = system.state(&trace)?;
        let worst = state
            .iter()
            .zip(&mesh.coords)
            .map(|(v, &p)| (v - affine(p)).abs())
            .fold(0.0f64, f64::max);
        ensure(
            worst <= 1e-12,
            "patch test",
            format!("level {level}: affine state deviates by {worst:.3e}"),
        )?;
    }
    Ok(())
}

fn check_reduced_operator() -> Result<()> {
    let mesh = graded_mesh(0.5, 2)?;
    let system = ReducedSystem::new(&mesh, &example1(0.1).problem)?;
    let n = system.boundary_dim();
    let mut rng = Rng(0x9e3779b97f4a7c15);
    for trial in 0..10 {
        let u = rng.vector(n);
        let v = rng.vector(n);
        let tu = system.apply_reduced(&u)?;
        let tv = system.apply_reduced(&v)?;
        let utv: f64 = u.iter().zip(&tv).map(|(a, b)| a * b).sum();
        let vtu: f64 = v.iter().zip(&tu).map(|(a, b)| a * b).sum();
        let scale = utv.abs().max(vtu.abs()).max(1e-30);
        ensure(
            ((utv - vtu) / scale).abs() <= 1e-9,
            "reduced operator",
            format!("trial {trial}: asymmetry {:.3e}", (utv - vtu) / scale),
        )?;
        let utu: f64 = u.iter().zip(&tu).map(|(a, b)| a * b).sum();
        ensure(
            utu > 0.0,
            "reduced operator",
            format!("trial {trial}: quadratic form {utu:.3e} not positive"),
        )?;
    }
    Ok(())
}

fn check_gradient() -> Result<()> {
    for (name, study) in [("smooth", example1(0.1)), ("non-coercive", example2(0.1))] {
        let mesh = graded_mesh(0.5, 2)?;
        let system = ReducedSystem::new(&mesh, &study.problem)?;
        let n = system.boundary_dim();
        let mut rng = Rng(0x2545f4914f6cdd1d);
        let u = rng.vector(n);
        let gradient = system.gradient(&u)?;
        for trial in 0..3 {
            let d = rng.vector(n);
            let eps = 1e-5;
            let shift = |sign: f64| -> Vec<f64> {
                u.iter().zip(&d).map(|(a, b)| a + sign * eps * b).collect()
            };
            let fd = (system.objective(&shift(1.0))? - system.objective(&shift(-1.0))?)
                / (2.0 * eps);
            let directional: f64 = gradient.iter().zip(&d).map(|(a, b)| a * b).sum();
            let rel = (fd - directional).abs() / directional.abs().max(1e-12);
            ensure(
                rel <= 1e-6,
                "gradient",
                format!("{name} study, direction {trial}: relative gap {rel:.3e}"),
            )?;
        }
    }
    Ok(())
}

fn check_solver_agreement() -> Result<()> {
    for (name, study) in [("smooth", example1(0.1)), ("non-coercive", example2(0.1))] {
        let mesh = graded_mesh(0.5, 3)?;
        let system = ReducedSystem::new(&mesh, &study.problem)?;
        let (reduced, _) = system.solve(1e-10)?;
        let direct = solve_monolithic(&mesh, &study.problem)?;
        let worst = reduced
            .iter()
            .zip(&direct.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        ensure(
            worst <= 1e-8,
            "solver agreement",
            format!("{name} study: controls differ by {worst:.3e}"),
        )?;
    }
    Ok(())
}

fn check_rate_methodology() -> Result<()> {
    for s in [0.5, 1.0, 2.0] {
        let h = |j: i32| 0.5f64.powi(j);
        let z = |j: i32| h(j).powf(s);
        for j in 1..=8 {
            let coarse = (z(j) - z(j + 1)).abs();
            let fine = (z(j + 1) - z(j + 2)).abs();
            let rate = eoc(coarse, fine)?;
            ensure(
                (rate - s).abs() <= 1e-12,
                "rate methodology",
                format!("s = {s}, level {j}: rate {rate}"),
            )?;
        }
    }
    Ok(())
}
