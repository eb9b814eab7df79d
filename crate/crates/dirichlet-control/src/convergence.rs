//! Error norms against closed-form solutions and observed convergence
//! rates.
//!
//! Errors of piecewise linear functions are integrated element by element
//! with the degree-5 rule. Rates compare consecutive levels of the mesh
//! hierarchy, on which the mesh size halves per level.

use crate::assemble::gradients;
use crate::mesh::{Point, TriMesh};
use crate::quadrature::QuadRule;
use crate::{Error, Result};

/// Squared L² and H¹-seminorm errors of the nodal field `vh` against a
/// function given by values and gradients.
fn error_parts(
    mesh: &TriMesh,
    vh: &[f64],
    value: &dyn Fn(Point) -> f64,
    grad: &dyn Fn(Point) -> [f64; 2],
) -> (f64, f64) {
    let rule = QuadRule::degree5();
    let mut l2 = 0.0;
    let mut semi = 0.0;
    for t in 0..mesh.num_tris() {
        let tri = mesh.tris[t];
        let p = mesh.tri_coords(t);
        let (g, area) = gradients(&p);
        let nodal = [vh[tri[0]], vh[tri[1]], vh[tri[2]]];
        let vh_grad = [
            nodal[0] * g[0][0] + nodal[1] * g[1][0] + nodal[2] * g[2][0],
            nodal[0] * g[0][1] + nodal[1] * g[1][1] + nodal[2] * g[2][1],
        ];
        for (lambda, w) in rule.points.iter().zip(&rule.weights) {
            let x = QuadRule::physical_point(*lambda, p);
            let vh_at: f64 = (0..3).map(|i| nodal[i] * lambda[i]).sum();
            let dv = vh_at - value(x);
            l2 += w * area * dv * dv;
            let gx = grad(x);
            let dx = vh_grad[0] - gx[0];
            let dy = vh_grad[1] - gx[1];
            semi += w * area * (dx * dx + dy * dy);
        }
    }
    (l2, semi)
}

/// L² error `‖vh - v‖`.
pub fn l2_error(mesh: &TriMesh, vh: &[f64], value: &dyn Fn(Point) -> f64) -> f64 {
    error_parts(mesh, vh, value, &|_| [0.0, 0.0]).0.sqrt()
}

/// H¹-seminorm error `‖∇vh - ∇v‖`.
pub fn h1_seminorm_error(mesh: &TriMesh, vh: &[f64], grad: &dyn Fn(Point) -> [f64; 2]) -> f64 {
    error_parts(mesh, vh, &|_| 0.0, grad).1.sqrt()
}

/// Full H¹ error `(‖vh - v‖² + ‖∇vh - ∇v‖²)^{1/2}`.
pub fn h1_error(
    mesh: &TriMesh,
    vh: &[f64],
    value: &dyn Fn(Point) -> f64,
    grad: &dyn Fn(Point) -> [f64; 2],
) -> f64 {
    let (l2, semi) = error_parts(mesh, vh, value, grad);
    (l2 + semi).sqrt()
}

/// Observed convergence rate between consecutive levels: the base-2
/// logarithm of the error reduction, since the mesh size halves per
/// level. Both errors must be positive.
pub fn eoc(coarse_error: f64, fine_error: f64) -> Result<f64> {
    if !(coarse_error > 0.0 && fine_error > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rates need positive errors, got {coarse_error} and {fine_error}"
        )));
    }
    Ok((coarse_error / fine_error).log2())
}

/// The harmonic function `r^{2/3} sin(2θ/3)` with the angle measured
/// counterclockwise from the positive x-axis into `[0, 2π)`, so it
/// vanishes on both edges meeting at the reentrant corner of the
/// L-shape.
pub fn singular_value(p: Point) -> f64 {
    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let theta = angle(p);
    r.powf(2.0 / 3.0) * (2.0 * theta / 3.0).sin()
}

/// Gradient of [`singular_value`]; unbounded like `r^{-1/3}` at the
/// corner, where this returns zero instead of overflowing.
pub fn singular_gradient(p: Point) -> [f64; 2] {
    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let theta = angle(p);
    let scale = (2.0 / 3.0) * r.powf(-1.0 / 3.0);
    let (s, c) = (2.0 * theta / 3.0).sin_cos();
    let (st, ct) = theta.sin_cos();
    [scale * (s * ct - c * st), scale * (s * st + c * ct)]
}

fn angle(p: Point) -> f64 {
    let theta = p[1].atan2(p[0]);
    if theta < 0.0 {
        theta + 2.0 * std::f64::consts::PI
    } else {
        theta
    }
}

/// The polynomial `t²(1 - t²)²`, vanishing with its derivative at
/// `t = ±1` and at `t = 0` to first order.
pub fn bump(t: f64) -> f64 {
    t * t - 2.0 * t.powi(4) + t.powi(6)
}

/// First derivative of [`bump`].
pub fn bump_d1(t: f64) -> f64 {
    2.0 * t - 8.0 * t.powi(3) + 6.0 * t.powi(5)
}

/// Second derivative of [`bump`].
pub fn bump_d2(t: f64) -> f64 {
    2.0 - 24.0 * t * t + 30.0 * t.powi(4)
}
