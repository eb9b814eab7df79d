//! The two convergence studies and their table output.
//!
//! The first study has smooth coefficients and a desired state
//! manufactured so the optimal solution is known in closed form; errors
//! are measured against it directly. The second has radially singular,
//! non-coercive coefficients and no closed form, so errors are measured
//! between consecutive refinement levels instead. Either way the error
//! column combines state, control and adjoint: the H¹ error of the state,
//! the H¹ error of the harmonic extension of the control, and the energy
//! error of the adjoint.

use std::sync::Arc;

use crate::assemble::{CoefficientSet, ScalarField, VectorField};
use crate::control::{solve_monolithic, ControlProblem, ReducedSystem};
use crate::convergence::{
    bump, bump_d1, bump_d2, h1_seminorm_error, l2_error, singular_gradient, singular_value,
};
use crate::mesh::{initial_mesh, make_lshape, prolong_nodal, refine_graded, Point, TriMesh};
use crate::{Error, Result};

/// Deepest level at which `SolverChoice::Both` runs the coupled sparse
/// solve next to the iterative one and compares objectives.
pub const CROSS_CHECK_MAX_LEVEL: u32 = 5;

/// Largest allowed objective discrepancy between the two solvers.
pub const CROSS_CHECK_TOL: f64 = 1e-9;

/// The built-in study problems.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Example {
    One,
    Two,
}

/// How the error column is measured: against the closed-form optimum, or
/// between consecutive refinement levels.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ErrorMode {
    Exact,
    Consecutive,
}

/// Which optimality-system solver produces the reported solution.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SolverChoice {
    Reduced,
    Monolithic,
    Both,
}

/// Closed-form optimum of a study problem: the optimal state, the
/// harmonic extension of the optimal control, and the adjoint state,
/// each with its gradient.
pub struct ExactSolution {
    pub state: ScalarField,
    pub state_gradient: VectorField,
    pub extension: ScalarField,
    pub extension_gradient: VectorField,
    pub adjoint: ScalarField,
    pub adjoint_gradient: VectorField,
}

/// A control problem together with its closed-form optimum, when one is
/// known.
pub struct Study {
    pub problem: ControlProblem,
    pub exact: Option<ExactSolution>,
}

/// Everything that determines a convergence run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub example: Example,
    /// Grading exponent for the re-entrant corner, in (0, 1].
    pub mu: f64,
    /// First and last reported refinement level.
    pub levels: (u32, u32),
    pub kappa: f64,
    pub pcg_tol: f64,
    pub solver: SolverChoice,
    pub error_mode: ErrorMode,
}

/// One reported refinement level.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: u32,
    /// Number of mesh nodes.
    pub dim: usize,
    /// Discrete objective at the computed optimal control.
    pub objective: f64,
    /// Total unknowns of the optimality system: state, adjoint and
    /// extension interior values plus the boundary control.
    pub unknowns: usize,
    /// Combined error; absent on the last row of a consecutive run.
    pub error: Option<f64>,
    /// Observed convergence rate against the previous row.
    pub rate: Option<f64>,
}

impl Example {
    pub fn study(self, kappa: f64) -> Study {
        match self {
            Example::One => example1(kappa),
            Example::Two => example2(kappa),
        }
    }

    /// The second study has no closed form, so it defaults to consecutive
    /// errors; the first defaults to exact ones.
    pub fn default_error_mode(self) -> ErrorMode {
        match self {
            Example::One => ErrorMode::Exact,
            Example::Two => ErrorMode::Consecutive,
        }
    }
}

impl RunConfig {
    pub fn new(example: Example) -> Self {
        RunConfig {
            example,
            mu: 0.5,
            levels: (1, 7),
            kappa: 0.1,
            pcg_tol: 1e-10,
            solver: SolverChoice::Reduced,
            error_mode: example.default_error_mode(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!(
                "mu must lie in (0, 1], got {}",
                self.mu
            )));
        }
        let (first, last) = self.levels;
        if first < 1 || last > 12 || first > last {
            return Err(Error::Config(format!(
                "levels must satisfy 1 <= first <= last <= 12, got {first}..{last}"
            )));
        }
        if !(self.pcg_tol > 0.0 && self.pcg_tol < 1.0) {
            return Err(Error::Config(format!(
                "pcg tolerance must lie in (0, 1), got {}",
                self.pcg_tol
            )));
        }
        if self.example == Example::Two && self.error_mode == ErrorMode::Exact {
            return Err(Error::Config(
                "the non-coercive study has no closed-form optimum; use consecutive errors".into(),
            ));
        }
        Ok(())
    }
}

/// Smooth-coefficient study: advection `(-2x₁, -2x₂)`, reaction `4/3`.
/// The desired state is manufactured so that the optimal control is the
/// boundary trace of the corner-singular harmonic function and the
/// adjoint is a product of polynomial bumps.
pub fn example1(kappa: f64) -> Study {
    let coeffs = CoefficientSet {
        advection: Arc::new(|p: Point| [-2.0 * p[0], -2.0 * p[1]]),
        reaction: Arc::new(|_| 4.0 / 3.0),
    };
    let problem = ControlProblem {
        coeffs,
        y_d: Arc::new(|p: Point| singular_value(p) - adjoint_image(p)),
        u_d: Arc::new(singular_value),
        kappa,
    };
    let exact = ExactSolution {
        state: Arc::new(singular_value),
        state_gradient: Arc::new(singular_gradient),
        extension: Arc::new(singular_value),
        extension_gradient: Arc::new(singular_gradient),
        adjoint: Arc::new(|p: Point| bump(p[0]) * bump(p[1])),
        adjoint_gradient: Arc::new(|p: Point| {
            [bump_d1(p[0]) * bump(p[1]), bump(p[0]) * bump_d1(p[1])]
        }),
    };
    Study {
        problem,
        exact: Some(exact),
    }
}

/// Non-coercive study: radially singular advection `6 r^{-1.25} (x₁, x₂)`
/// and reaction `r^{-1.25}` blowing up at the re-entrant corner, constant
/// desired state, zero control shift.
pub fn example2(kappa: f64) -> Study {
    let coeffs = CoefficientSet {
        advection: Arc::new(|p: Point| {
            let s = 6.0 * radial_power(p);
            [s * p[0], s * p[1]]
        }),
        reaction: Arc::new(radial_power),
    };
    Study {
        problem: ControlProblem {
            coeffs,
            y_d: Arc::new(|_| 1.0),
            u_d: Arc::new(|_| 0.0),
            kappa,
        },
        exact: None,
    }
}

/// Image of the product-bump adjoint under the formal adjoint operator
/// `φ ↦ -Δφ - ∇·(bφ) + a₀φ` of the smooth study coefficients.
fn adjoint_image(p: Point) -> f64 {
    let (x, y) = (p[0], p[1]);
    -bump_d2(x) * bump(y) - bump(x) * bump_d2(y)
        + 2.0 * x * bump_d1(x) * bump(y)
        + 2.0 * y * bump(x) * bump_d1(y)
        + (16.0 / 3.0) * bump(x) * bump(y)
}

/// `r^{-1.25}`; evaluated only at quadrature points, which never coincide
/// with the corner.
fn radial_power(p: Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).powf(-0.625)
}

struct LevelData {
    system: ReducedSystem,
    control: Vec<f64>,
    state: Vec<f64>,
    adjoint: Vec<f64>,
    objective: f64,
}

impl LevelData {
    fn dim(&self) -> usize {
        self.system.mesh().num_nodes()
    }
}

/// Coarse-level fields kept alive for the next consecutive comparison,
/// without the factorizations.
struct HeldLevel {
    mesh: TriMesh,
    control: Vec<f64>,
    state: Vec<f64>,
    adjoint: Vec<f64>,
}

struct PartialRow {
    level: u32,
    dim: usize,
    objective: f64,
}

impl PartialRow {
    fn into_row(self, error: Option<f64>, rate: Option<f64>) -> ConvergenceRow {
        ConvergenceRow {
            level: self.level,
            dim: self.dim,
            objective: self.objective,
            unknowns: 2 * self.dim,
            error,
            rate,
        }
    }
}

fn solve_level(mesh: &TriMesh, study: &Study, config: &RunConfig) -> Result<LevelData> {
    let system = ReducedSystem::new(mesh, &study.problem)?;
    let control = match config.solver {
        SolverChoice::Reduced => system.solve(config.pcg_tol)?.0,
        SolverChoice::Monolithic => solve_monolithic(mesh, &study.problem)?.u,
        SolverChoice::Both => {
            let (u, _) = system.solve(config.pcg_tol)?;
            if mesh.level <= CROSS_CHECK_MAX_LEVEL {
                let direct = solve_monolithic(mesh, &study.problem)?;
                let gap = (system.objective(&u)? - system.objective(&direct.u)?).abs();
                if gap > CROSS_CHECK_TOL {
                    return Err(Error::Numerical(format!(
                        "solver cross-check failed at level {}: objectives differ by {gap:.3e}",
                        mesh.level
                    )));
                }
            }
            u
        }
    };
    let state = system.state(&control)?;
    let adjoint = system.adjoint(&control)?;
    let objective = system.objective(&control)?;
    Ok(LevelData {
        system,
        control,
        state,
        adjoint,
        objective,
    })
}

// Error columns add up three distances: state, control (through its
// harmonic extension), and adjoint.  Each H¹-type distance is reported as
// the sum of its L² part and its seminorm part; the adjoint vanishes on
// the boundary, so its natural distance is the seminorm alone.
fn exact_error(data: &LevelData, exact: &ExactSolution) -> Result<f64> {
    let mesh = data.system.mesh();
    let state_err = l2_error(mesh, &data.state, &*exact.state)
        + h1_seminorm_error(mesh, &data.state, &*exact.state_gradient);
    let extension = data.system.harmonic_extension(&data.control)?;
    let control_err = l2_error(mesh, &extension, &*exact.extension)
        + h1_seminorm_error(mesh, &extension, &*exact.extension_gradient);
    let adjoint_err = h1_seminorm_error(mesh, &data.adjoint, &*exact.adjoint_gradient);
    Ok(state_err + control_err + adjoint_err)
}

fn sub(a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn consecutive_error(coarse: &HeldLevel, fine: &LevelData) -> Result<f64> {
    let fm = fine.system.mesh();
    let dy = sub(prolong_nodal(&coarse.mesh, fm, &coarse.state)?, &fine.state);
    let state_err = fine.system.l2_norm(&dy)? + fine.system.h1_seminorm(&dy)?;
    let dphi = sub(
        prolong_nodal(&coarse.mesh, fm, &coarse.adjoint)?,
        &fine.adjoint,
    );
    let adjoint_err = fine.system.h1_seminorm(&dphi)?;

    // The coarse control prolongs exactly through any nodal extension of
    // its boundary values: new boundary nodes are midpoints of coarse
    // boundary edges, so interior values cannot leak into the trace.
    let mut coarse_full = vec![0.0; coarse.mesh.num_nodes()];
    for (k, &b) in coarse.mesh.boundary.iter().enumerate() {
        coarse_full[b] = coarse.control[k];
    }
    let prolonged = prolong_nodal(&coarse.mesh, fm, &coarse_full)?;
    let du: Vec<f64> = fm
        .boundary
        .iter()
        .zip(&fine.control)
        .map(|(&b, &uf)| prolonged[b] - uf)
        .collect();
    let extension = fine.system.harmonic_extension(&du)?;
    let control_err = fine.system.l2_norm(&extension)? + fine.system.h1_seminorm(&extension)?;
    Ok(state_err + control_err + adjoint_err)
}

fn rate_from(prev: Option<f64>, current: f64) -> Option<f64> {
    match prev {
        Some(p) if p > 0.0 && current > 0.0 => Some((p / current).log2()),
        _ => None,
    }
}

fn push_row(
    rows: &mut Vec<ConvergenceRow>,
    on_row: &mut dyn FnMut(&ConvergenceRow) -> Result<()>,
    row: ConvergenceRow,
) -> Result<()> {
    on_row(&row)?;
    rows.push(row);
    Ok(())
}

/// Runs one of the built-in studies.
pub fn run(config: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    run_with(config, &mut |_| Ok(()))
}

/// Like [`run`], but streams every finished row to `on_row` before the
/// next level is solved, so a failure deep in the hierarchy still leaves
/// the finished part of the table with the caller.
pub fn run_with(
    config: &RunConfig,
    on_row: &mut dyn FnMut(&ConvergenceRow) -> Result<()>,
) -> Result<Vec<ConvergenceRow>> {
    let study = config.example.study(config.kappa);
    run_study(&study, config, on_row)
}

/// Runs a convergence study over `config.levels` on meshes graded by
/// `config.mu`, reporting one row per level. In consecutive error mode
/// the error of a row is only known once the next level is solved, and
/// the last row's error stays empty.
pub fn run_study(
    study: &Study,
    config: &RunConfig,
    on_row: &mut dyn FnMut(&ConvergenceRow) -> Result<()>,
) -> Result<Vec<ConvergenceRow>> {
    config.validate()?;
    if config.error_mode == ErrorMode::Exact && study.exact.is_none() {
        return Err(Error::Config(
            "exact error mode needs a closed-form optimum; use consecutive errors".into(),
        ));
    }
    let spec = make_lshape(config.mu)?;
    let (first, last) = config.levels;

    let mut rows = Vec::new();
    let mut mesh = initial_mesh(&spec)?;
    let mut prev_error: Option<f64> = None;
    let mut held: Option<(HeldLevel, PartialRow)> = None;

    for level in 1..=last {
        mesh = refine_graded(&mesh, &spec, level)?;
        if level < first {
            continue;
        }
        let data = match solve_level(&mesh, study, config) {
            Ok(data) => data,
            Err(e) => {
                if let Some((_, partial)) = held.take() {
                    push_row(&mut rows, on_row, partial.into_row(None, None))?;
                }
                return Err(e);
            }
        };
        let partial = PartialRow {
            level,
            dim: data.dim(),
            objective: data.objective,
        };
        match config.error_mode {
            ErrorMode::Exact => {
                let exact = study.exact.as_ref().expect("checked above");
                let error = exact_error(&data, exact)?;
                let rate = rate_from(prev_error, error);
                prev_error = Some(error);
                push_row(&mut rows, on_row, partial.into_row(Some(error), rate))?;
            }
            ErrorMode::Consecutive => {
                if let Some((coarse, coarse_partial)) = held.take() {
                    let error = consecutive_error(&coarse, &data)?;
                    let rate = rate_from(prev_error, error);
                    prev_error = Some(error);
                    push_row(&mut rows, on_row, coarse_partial.into_row(Some(error), rate))?;
                }
                held = Some((
                    HeldLevel {
                        mesh: data.system.mesh().clone(),
                        control: data.control,
                        state: data.state,
                        adjoint: data.adjoint,
                    },
                    partial,
                ));
            }
        }
    }
    if let Some((_, partial)) = held.take() {
        push_row(&mut rows, on_row, partial.into_row(None, None))?;
    }
    Ok(rows)
}

/// Column header of the convergence-table CSV format.
pub const CSV_HEADER: &str = "j,dimYh,Jh,nj,ej,sj";

/// Markdown table header matching the CSV columns.
pub const MARKDOWN_HEADER: &str = "| j | dimYh | Jh | nj | ej | sj |\n|--:|--:|--:|--:|--:|--:|";

fn format_scientific(x: f64) -> String {
    let s = format!("{x:.2e}");
    let (mantissa, exponent) = s.split_once('e').expect("exponential format");
    let (sign, digits) = match exponent.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exponent),
    };
    format!("{mantissa}e{sign}{digits:0>2}")
}

/// One CSV data line, without the trailing newline. Missing error and
/// rate cells are left empty.
pub fn csv_line(row: &ConvergenceRow) -> String {
    format!(
        "{},{},{:.8},{},{},{}",
        row.level,
        row.dim,
        row.objective,
        row.unknowns,
        row.error.map(format_scientific).unwrap_or_default(),
        row.rate.map(|s| format!("{s:.2}")).unwrap_or_default(),
    )
}

/// One Markdown table line; missing cells show a dash.
pub fn markdown_line(row: &ConvergenceRow) -> String {
    format!(
        "| {} | {} | {:.8} | {} | {} | {} |",
        row.level,
        row.dim,
        row.objective,
        row.unknowns,
        row.error.map(format_scientific).unwrap_or_else(|| "-".into()),
        row.rate
            .map(|s| format!("{s:.2}"))
            .unwrap_or_else(|| "-".into()),
    )
}

fn require_rows(rows: &[ConvergenceRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("no rows to format".into()));
    }
    Ok(())
}

/// Renders rows as CSV, one line per row under [`CSV_HEADER`].
pub fn to_csv(rows: &[ConvergenceRow]) -> Result<String> {
    require_rows(rows)?;
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&csv_line(row));
        out.push('\n');
    }
    Ok(out)
}

/// Renders rows as a Markdown table.
pub fn to_markdown(rows: &[ConvergenceRow]) -> Result<String> {
    require_rows(rows)?;
    let mut out = String::from(MARKDOWN_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&markdown_line(row));
        out.push('\n');
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(text: &str, line: usize, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    text.trim().parse().map_err(|e| {
        Error::Config(format!("table line {line}: bad {what} value {text:?}: {e}"))
    })
}

fn parse_optional(text: &str, line: usize, what: &str) -> Result<Option<f64>> {
    if text.trim().is_empty() {
        Ok(None)
    } else {
        parse_field(text, line, what).map(Some)
    }
}

/// Parses a table produced by [`to_csv`]. Values round-trip at the
/// printed precision: parsing and re-rendering reproduces the text.
pub fn parse_csv(text: &str) -> Result<Vec<ConvergenceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "expected table header {:?}, got {:?}",
                CSV_HEADER,
                other.map(|(_, l)| l).unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let n = k + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Config(format!(
                "table line {n}: expected 6 fields, got {}",
                fields.len()
            )));
        }
        rows.push(ConvergenceRow {
            level: parse_field(fields[0], n, "level")?,
            dim: parse_field(fields[1], n, "dimension")?,
            objective: parse_field(fields[2], n, "objective")?,
            unknowns: parse_field(fields[3], n, "unknown count")?,
            error: parse_optional(fields[4], n, "error")?,
            rate: parse_optional(fields[5], n, "rate")?,
        });
    }
    Ok(rows)
}

/// Aitken extrapolation of the objective column to its limit from the
/// last three rows; `None` when the increments do not contract.
pub fn extrapolate_objective(rows: &[ConvergenceRow]) -> Option<f64> {
    let [a, b, c] = match rows {
        [.., x, y, z] => [x.objective, y.objective, z.objective],
        _ => return None,
    };
    let (d1, d2) = (b - a, c - b);
    if d1 - d2 == 0.0 {
        return None;
    }
    let value = c + d2 * d2 / (d1 - d2);
    value.is_finite().then_some(value)
}
