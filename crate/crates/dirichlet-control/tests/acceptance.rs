//! End-to-end acceptance checks. Each numbered criterion prints one
//! PASS/FAIL line (visible with `cargo test --test acceptance --
//! --nocapture`); the test fails if any criterion fails.

use std::time::{Duration, Instant};

use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use dirichlet_control::{
    eoc, example1, example2, initial_mesh, make_lshape, refine_graded, run, run_with,
    solve_monolithic, CoefficientSet, ControlProblem, ConvergenceRow, Example, ReducedSystem,
    RunConfig, TriMesh,
};

const TWO_THIRDS: f64 = 2.0 / 3.0;

fn graded_mesh(mu: f64, level: u32) -> TriMesh {
    let spec = make_lshape(mu).unwrap();
    let mut mesh = initial_mesh(&spec).unwrap();
    for j in 1..=level {
        mesh = refine_graded(&mesh, &spec, j).unwrap();
    }
    mesh
}

fn study_rows(example: Example, mu: f64, last_level: u32) -> Vec<ConvergenceRow> {
    let mut config = RunConfig::new(example);
    config.mu = mu;
    config.levels = (1, last_level);
    run(&config).unwrap()
}

/// Rate printed at a given level, from rows starting at level 1.
fn rate_at(rows: &[ConvergenceRow], level: u32) -> f64 {
    let row = &rows[(level - 1) as usize];
    assert_eq!(row.level, level);
    row.rate.unwrap()
}

fn fail_if(condition: bool, message: String) -> Result<(), String> {
    if condition {
        Err(message)
    } else {
        Ok(())
    }
}

/// Objective anchors at levels 3..6, rates at levels 5..7, and a wall
/// clock budget of two minutes through level 6, all on the mu = 0.5
/// grading of the smooth study.
fn criterion_objective_anchors(rows: &[ConvergenceRow], through_level6: Duration) -> Result<(), String> {
    let anchors = [
        (3, 0.19746119),
        (4, 0.20884268),
        (5, 0.21215944),
        (6, 0.21301698),
    ];
    for (level, expected) in anchors {
        let got = rows[level - 1].objective;
        fail_if(
            (got - expected).abs() > 5e-4,
            format!("objective at level {level}: {got:.8} vs {expected:.8}"),
        )?;
    }
    for level in 5..=7 {
        let rate = rate_at(rows, level);
        fail_if(
            !(0.95..=1.25).contains(&rate),
            format!("rate at level {level}: {rate:.2} outside [0.95, 1.25]"),
        )?;
    }
    fail_if(
        through_level6 > Duration::from_secs(120),
        format!("levels 1..6 took {through_level6:.1?}, budget is 120 s"),
    )
}

/// The weaker grading converges with the reduced rate: within
/// [0.85, 1.05] at levels 6..8 and strictly below the mu = 0.5 rates.
fn criterion_reduced_grading_rates(
    strong: &[ConvergenceRow],
    weak: &[ConvergenceRow],
) -> Result<(), String> {
    for level in 6..=8 {
        let rate = rate_at(weak, level);
        fail_if(
            !(0.85..=1.05).contains(&rate),
            format!("rate at level {level}: {rate:.2} outside [0.85, 1.05]"),
        )?;
        let reference = rate_at(strong, level);
        fail_if(
            rate >= reference,
            format!("rate at level {level}: {rate:.2} not below the mu = 0.5 rate {reference:.2}"),
        )?;
    }
    Ok(())
}

/// The non-coercive study converges at first order in the consecutive
/// differences and hits the objective anchor at level 5.
fn criterion_non_coercive(rows: &[ConvergenceRow]) -> Result<(), String> {
    for level in 4..=7 {
        let rate = rate_at(rows, level);
        fail_if(
            (rate - 1.0).abs() > 0.05,
            format!("rate at level {level}: {rate:.2} vs 1.00 +- 0.05"),
        )?;
    }
    let got = rows[4].objective;
    fail_if(
        (got - 0.01373023).abs() > 5e-4,
        format!("objective at level 5: {got:.8} vs 0.01373023"),
    )
}

/// The iterative reduced solver and the direct monolithic solver agree
/// on the control up to 1e-8 in the max norm on both studies.
fn criterion_solver_agreement() -> Result<(), String> {
    for (name, study) in [("smooth", example1(0.1)), ("non-coercive", example2(0.1))] {
        for level in 1..=5 {
            let mesh = graded_mesh(0.5, level);
            let system = ReducedSystem::new(&mesh, &study.problem).unwrap();
            let (reduced, _) = system
                .solve(1e-10)
                .map_err(|e| format!("{name} study, level {level}: {e}"))?;
            let direct = solve_monolithic(&mesh, &study.problem)
                .map_err(|e| format!("{name} study, level {level}: {e}"))?;
            let worst = reduced
                .iter()
                .zip(&direct.u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            fail_if(
                worst > 1e-8,
                format!("{name} study, level {level}: controls differ by {worst:.3e}"),
            )?;
        }
    }
    Ok(())
}

/// The analytic gradient matches central finite differences of the
/// objective along five random directions on both studies.
fn criterion_gradient() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, study) in [("smooth", example1(0.1)), ("non-coercive", example2(0.1))] {
        let mesh = graded_mesh(0.5, 3);
        let system = ReducedSystem::new(&mesh, &study.problem).unwrap();
        let n = system.boundary_dim();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let gradient = system.gradient(&u).unwrap();
        for trial in 0..5 {
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let eps = 1e-5;
            let at = |sign: f64| {
                let shifted: Vec<f64> =
                    u.iter().zip(&d).map(|(a, b)| a + sign * eps * b).collect();
                system.objective(&shifted).unwrap()
            };
            let fd = (at(1.0) - at(-1.0)) / (2.0 * eps);
            let directional: f64 = gradient.iter().zip(&d).map(|(a, b)| a * b).sum();
            let rel = (fd - directional).abs() / directional.abs().max(1e-12);
            fail_if(
                rel > 1e-6,
                format!("{name} study, direction {trial}: relative gap {rel:.3e}"),
            )?;
        }
    }
    Ok(())
}

/// The reduced operator is symmetric and positive definite on random
/// vectors, and the harmonic extension reproduces constant and affine
/// traces to 1e-12.
fn criterion_operator_and_extension() -> Result<(), String> {
    let mesh = graded_mesh(0.5, 3);
    let system = ReducedSystem::new(&mesh, &example1(0.1).problem).unwrap();
    let n = system.boundary_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for trial in 0..10 {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let tu = system.apply_reduced(&u).unwrap();
        let tv = system.apply_reduced(&v).unwrap();
        let utv: f64 = u.iter().zip(&tv).map(|(a, b)| a * b).sum();
        let vtu: f64 = v.iter().zip(&tu).map(|(a, b)| a * b).sum();
        fail_if(
            (utv - vtu).abs() > 1e-10 * norm(&tu) * norm(&v),
            format!("trial {trial}: asymmetry {:.3e}", (utv - vtu).abs()),
        )?;
        let utu: f64 = u.iter().zip(&tu).map(|(a, b)| a * b).sum();
        fail_if(
            utu <= 0.0,
            format!("trial {trial}: quadratic form {utu:.3e} not positive"),
        )?;
    }
    let affine = |p: [f64; 2]| 2.0 * p[0] - 3.0 * p[1] + 0.25;
    for (name, f) in [
        ("constant", &(|_: [f64; 2]| 1.0) as &dyn Fn([f64; 2]) -> f64),
        ("affine", &affine),
    ] {
        let trace: Vec<f64> = mesh.boundary.iter().map(|&b| f(mesh.coords[b])).collect();
        let extension = system.harmonic_extension(&trace).unwrap();
        let worst = extension
            .iter()
            .zip(&mesh.coords)
            .map(|(v, &p)| (v - f(p)).abs())
            .fold(0.0f64, f64::max);
        fail_if(
            worst > 1e-12,
            format!("{name} trace: extension deviates by {worst:.3e}"),
        )?;
    }
    Ok(())
}

/// With pure Laplace coefficients an affine boundary trace propagates
/// to the exactly affine state on every level.
fn criterion_patch_test() -> Result<(), String> {
    let problem = ControlProblem {
        coeffs: CoefficientSet::laplace(),
        y_d: std::sync::Arc::new(|_| 0.0),
        u_d: std::sync::Arc::new(|_| 0.0),
        kappa: 0.1,
    };
    let spec = make_lshape(0.5).unwrap();
    let mut mesh = initial_mesh(&spec).unwrap();
    for level in 1..=7 {
        mesh = refine_graded(&mesh, &spec, level).unwrap();
        let system = ReducedSystem::new(&mesh, &problem).unwrap();
        let affine = |p: [f64; 2]| 0.5 * p[0] + 1.5 * p[1] - 2.0;
        let trace: Vec<f64> = mesh.boundary.iter().map(|&b| affine(mesh.coords[b])).collect();
        let state = system.state(&trace).unwrap();
        let worst = state
            .iter()
            .zip(&mesh.coords)
            .map(|(v, &p)| (v - affine(p)).abs())
            .fold(0.0f64, f64::max);
        fail_if(
            worst > 1e-12,
            format!("level {level}: affine state deviates by {worst:.3e}"),
        )?;
    }
    Ok(())
}

/// The rate computation recovers prescribed orders s = 0.5, 1, 2 from
/// synthetic sequences z_j = h_j^s to machine precision.
fn criterion_rate_methodology() -> Result<(), String> {
    for s in [0.5, 1.0, 2.0] {
        let h = |j: i32| 0.5f64.powi(j);
        let z = |j: i32| h(j).powf(s);
        for j in 1..=8 {
            let coarse = (z(j) - z(j + 1)).abs();
            let fine = (z(j + 1) - z(j + 2)).abs();
            let rate = eoc(coarse, fine).unwrap();
            fail_if(
                (rate - s).abs() > 1e-12,
                format!("s = {s}, step {j}: rate {rate}"),
            )?;
        }
    }
    Ok(())
}

fn diameter(p: &[[f64; 2]; 3]) -> f64 {
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
}

fn signed_area(p: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

/// Mesh hierarchy invariants for all three gradings through level 7:
/// conformity, positive element areas, nested node coordinates, the
/// graded size bound with a single constant fixed at level 3, and a
/// uniform minimum angle.
fn criterion_mesh_suite() -> Result<(), String> {
    for mu in [0.5, TWO_THIRDS, 1.0] {
        let spec = make_lshape(mu).map_err(|e| e.to_string())?;
        let mut mesh = initial_mesh(&spec).map_err(|e| e.to_string())?;
        let mut grading_constant = None;
        for level in 1..=7 {
            let fine = refine_graded(&mesh, &spec, level).map_err(|e| e.to_string())?;
            fail_if(
                fine.coords[..mesh.num_nodes()] != mesh.coords[..],
                format!("mu {mu}, level {level}: coarse nodes not nested"),
            )?;
            mesh = fine;
            mesh.validate_conforming(&spec).map_err(|e| {
                format!("mu {mu}, level {level}: {e}")
            })?;
            fail_if(
                mesh.min_angle_deg() < 20.0,
                format!("mu {mu}, level {level}: min angle {:.2}", mesh.min_angle_deg()),
            )?;

            let h = mesh.h;
            let mut worst_ratio = 0.0f64;
            for t in 0..mesh.num_tris() {
                let p = mesh.tri_coords(t);
                fail_if(
                    signed_area(&p).abs() <= 0.0,
                    format!("mu {mu}, level {level}: degenerate triangle"),
                )?;
                let r = p
                    .iter()
                    .map(|q| (q[0].powi(2) + q[1].powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                let allowed = h * r.max(h.powf(1.0 / mu)).powf(1.0 - mu);
                worst_ratio = worst_ratio.max(diameter(&p) / allowed);
            }
            if level == 3 {
                fail_if(
                    worst_ratio > 4.0,
                    format!("mu {mu}: grading constant {worst_ratio:.2} exceeds 4"),
                )?;
                grading_constant = Some(worst_ratio);
            }
            if let Some(c) = grading_constant {
                fail_if(
                    worst_ratio > c * (1.0 + 1e-9),
                    format!(
                        "mu {mu}, level {level}: size ratio {worst_ratio:.3} exceeds the level-3 constant {c:.3}"
                    ),
                )?;
            }
        }
    }
    Ok(())
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let mut through_level6 = Duration::ZERO;
    let mut config = RunConfig::new(Example::One);
    config.levels = (1, 8);
    let strong = run_with(&config, &mut |row| {
        if row.level == 6 {
            through_level6 = start.elapsed();
        }
        Ok(())
    })
    .unwrap();
    let weak = study_rows(Example::One, TWO_THIRDS, 8);
    let non_coercive = study_rows(Example::Two, 0.5, 8);

    let results: Vec<(&str, Result<(), String>)> = vec![
        (
            "objective anchors and rates, smooth study, mu = 0.5",
            criterion_objective_anchors(&strong, through_level6),
        ),
        (
            "reduced rates under the weaker grading, mu = 2/3",
            criterion_reduced_grading_rates(&strong, &weak),
        ),
        (
            "first-order consecutive rates, non-coercive study",
            criterion_non_coercive(&non_coercive),
        ),
        ("reduced and monolithic solvers agree", criterion_solver_agreement()),
        ("gradient matches finite differences", criterion_gradient()),
        (
            "reduced operator symmetric positive, extension exact on affine data",
            criterion_operator_and_extension(),
        ),
        ("patch test on every level", criterion_patch_test()),
        ("rate methodology on synthetic sequences", criterion_rate_methodology()),
        ("mesh suite for all gradings", criterion_mesh_suite()),
    ];

    let mut failures = 0;
    for (number, (label, result)) in results.iter().enumerate() {
        match result {
            Ok(()) => println!("PASS {}: {label}", number + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {}: {label}: {why}", number + 1);
            }
        }
    }
    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
