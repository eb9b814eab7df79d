//! Piecewise linear finite element assembly on triangle meshes.
//!
//! Mass and stiffness matrices use closed-form element integrals. The
//! convection-diffusion-reaction operator integrates its variable
//! coefficients with the edge-midpoint rule, which is exact for the
//! degree-2 integrands of polynomial coefficients and fixes the sampling
//! convention for rough ones. Load vectors use the degree-5 rule.

use std::sync::Arc;

use crate::mesh::{Point, TriMesh};
use crate::quadrature::QuadRule;
use crate::sparse::CsrMatrix;

/// Scalar coefficient or data function evaluated at physical points.
pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Vector-valued coefficient evaluated at physical points.
pub type VectorField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// Coefficients of the operator `-Δy + b·∇y + a₀y`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub advection: VectorField,
    pub reaction: ScalarField,
}

impl CoefficientSet {
    /// Pure Laplacian: `b = 0`, `a₀ = 0`.
    pub fn laplace() -> Self {
        CoefficientSet {
            advection: Arc::new(|_| [0.0, 0.0]),
            reaction: Arc::new(|_| 0.0),
        }
    }
}

/// Gradients of the three barycentric basis functions on a triangle,
/// together with its area. Constant per element.
pub(crate) fn gradients(p: &[Point; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    (g, area)
}

/// Assembles the mass matrix `M_ij = ∫ ψ_j ψ_i` from the exact element
/// integrals `(area/12) [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn assemble_mass(mesh: &TriMesh) -> CsrMatrix {
    let n = mesh.num_nodes();
    let mut triplets = Vec::with_capacity(9 * mesh.num_tris());
    for t in 0..mesh.num_tris() {
        let v = mesh.tris[t];
        let scale = mesh.tri_area(t) / 12.0;
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { 2.0 } else { 1.0 };
                triplets.push((v[i], v[j], scale * w));
            }
        }
    }
    let mut m = CsrMatrix::from_triplets(n, n, &triplets).expect("valid mass triplets");
    m.symmetric = true;
    m
}

/// Assembles the stiffness matrix `K_ij = ∫ ∇ψ_j · ∇ψ_i` from the exact
/// element integrals `area ∇λ_i · ∇λ_j`.
pub fn assemble_stiffness(mesh: &TriMesh) -> CsrMatrix {
    let n = mesh.num_nodes();
    let mut triplets = Vec::with_capacity(9 * mesh.num_tris());
    for t in 0..mesh.num_tris() {
        let v = mesh.tris[t];
        let (g, area) = gradients(&mesh.tri_coords(t));
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((v[i], v[j], area * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
            }
        }
    }
    let mut k = CsrMatrix::from_triplets(n, n, &triplets).expect("valid stiffness triplets");
    k.symmetric = true;
    k
}

/// Assembles the operator matrix with entries `a_ij = 𝔞(ψ_j, ψ_i)` for
/// the bilinear form `𝔞(y, v) = ∫ ∇y·∇v + (b·∇y) v + a₀ y v`. Rows index
/// test functions, columns trial functions, so the matrix is generally
/// not symmetric.
///
/// Coefficients are sampled with the edge-midpoint rule. For polynomial
/// `b` and constant `a₀` the element integrands have degree two and the
/// rule is exact; for coefficients with a corner singularity it fixes a
/// deterministic sampling convention that keeps every evaluation point
/// away from the corner.
pub fn assemble_operator(mesh: &TriMesh, coeffs: &CoefficientSet) -> CsrMatrix {
    let n = mesh.num_nodes();
    let rule = QuadRule::edge_midpoints();
    let mut triplets = Vec::with_capacity(9 * mesh.num_tris());
    for t in 0..mesh.num_tris() {
        let v = mesh.tris[t];
        let p = mesh.tri_coords(t);
        let (g, area) = gradients(&p);
        let mut local = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                local[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
        for (lambda, w) in rule.points.iter().zip(&rule.weights) {
            let x = QuadRule::physical_point(*lambda, p);
            let b = (coeffs.advection)(x);
            let a0 = (coeffs.reaction)(x);
            let scale = w * area;
            for i in 0..3 {
                for j in 0..3 {
                    let conv = (b[0] * g[j][0] + b[1] * g[j][1]) * lambda[i];
                    let reac = a0 * lambda[j] * lambda[i];
                    local[i][j] += scale * (conv + reac);
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((v[i], v[j], local[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets).expect("valid operator triplets")
}

/// Assembles the load vector `f_i = ∫ f ψ_i` with the degree-5 rule.
pub fn assemble_load(mesh: &TriMesh, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
    let rule = QuadRule::degree5();
    let mut out = vec![0.0; mesh.num_nodes()];
    for t in 0..mesh.num_tris() {
        let v = mesh.tris[t];
        let p = mesh.tri_coords(t);
        let area = mesh.tri_area(t);
        for (lambda, w) in rule.points.iter().zip(&rule.weights) {
            let x = QuadRule::physical_point(*lambda, p);
            let fx = f(x) * w * area;
            for i in 0..3 {
                out[v[i]] += fx * lambda[i];
            }
        }
    }
    out
}

/// Nodal interpolation: evaluates `f` at every mesh node.
pub fn interpolate(mesh: &TriMesh, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
    mesh.coords.iter().map(|&p| f(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{initial_mesh, make_lshape, refine_graded};

    fn lshape_mesh(level: u32) -> TriMesh {
        let spec = make_lshape(0.5).unwrap();
        let mesh = initial_mesh(&spec).unwrap();
        refine_graded(&mesh, &spec, level).unwrap()
    }

    /// Evaluates the hat function of `node` at `x` by barycentric search.
    fn hat(mesh: &TriMesh, node: usize, x: Point) -> f64 {
        for t in 0..mesh.num_tris() {
            let p = mesh.tri_coords(t);
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (x[1] - p[0][1]))
                / det;
            let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1])
                - (x[0] - p[0][0]) * (p[1][1] - p[0][1]))
                / det;
            let l0 = 1.0 - l1 - l2;
            if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                for i in 0..3 {
                    if mesh.tris[t][i] == node {
                        return [l0, l1, l2][i];
                    }
                }
                return 0.0;
            }
        }
        0.0
    }

    #[test]
    fn mass_entries_sum_to_domain_area() {
        let mesh = lshape_mesh(2);
        let m = assemble_mass(&mesh);
        let total: f64 = m.triplets().map(|(_, _, v)| v).sum();
        assert!((total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = lshape_mesh(2);
        let k = assemble_stiffness(&mesh);
        let ones = vec![1.0; mesh.num_nodes()];
        let r = k.matvec(&ones);
        assert!(r.iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn stiffness_energy_of_affine_matches_area() {
        let mesh = lshape_mesh(2);
        let k = assemble_stiffness(&mesh);
        let u: Vec<f64> = mesh.coords.iter().map(|p| 2.0 * p[0] - 3.0 * p[1]).collect();
        let ku = k.matvec(&u);
        let energy: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        assert!((energy - 13.0 * 3.0).abs() < 1e-11);
    }

    #[test]
    fn mass_quadratic_form_matches_quadrature() {
        let mesh = lshape_mesh(2);
        let m = assemble_mass(&mesh);
        let u: Vec<f64> = mesh.coords.iter().map(|p| p[0] * p[1] + 0.5).collect();
        let v: Vec<f64> = mesh.coords.iter().map(|p| p[0] - p[1] * p[1]).collect();
        let mu = m.matvec(&u);
        let bilinear: f64 = v.iter().zip(&mu).map(|(a, b)| a * b).sum();
        let rule = QuadRule::degree5();
        let mut exact = 0.0;
        for t in 0..mesh.num_tris() {
            let tri = mesh.tris[t];
            let uv = [u[tri[0]], u[tri[1]], u[tri[2]]];
            let vv = [v[tri[0]], v[tri[1]], v[tri[2]]];
            for (lambda, w) in rule.points.iter().zip(&rule.weights) {
                let ul: f64 = (0..3).map(|i| uv[i] * lambda[i]).sum();
                let vl: f64 = (0..3).map(|i| vv[i] * lambda[i]).sum();
                exact += w * mesh.tri_area(t) * ul * vl;
            }
        }
        assert!((bilinear - exact).abs() < 1e-13 * exact.abs().max(1.0));
    }

    #[test]
    fn operator_with_zero_coefficients_is_stiffness() {
        let mesh = lshape_mesh(2);
        let a = assemble_operator(&mesh, &CoefficientSet::laplace());
        let k = assemble_stiffness(&mesh);
        for ((i, j, av), (ki, kj, kv)) in a.triplets().zip(k.triplets()) {
            assert_eq!((i, j), (ki, kj));
            assert!((av - kv).abs() < 1e-14);
        }
    }

    #[test]
    fn operator_entries_match_direct_integration() {
        let mesh = lshape_mesh(1);
        let coeffs = CoefficientSet {
            advection: Arc::new(|p: Point| [-2.0 * p[0], -2.0 * p[1]]),
            reaction: Arc::new(|_| 4.0 / 3.0),
        };
        let a = assemble_operator(&mesh, &coeffs);

        // Independent path: integrate 𝔞(ψ_j, ψ_i) entry by entry,
        // evaluating the global hat functions pointwise and taking their
        // gradients by central differences. The quadrature points are
        // interior to elements, so the differences never straddle a kink.
        let rule = QuadRule::degree5();
        let eps = 1e-6;
        let pairs: Vec<(usize, usize)> = a
            .triplets()
            .map(|(i, j, _)| (i, j))
            .filter(|&(i, j)| (i * 7 + j * 13) % 29 == 0)
            .take(12)
            .collect();
        for (i, j) in pairs {
            let mut val = 0.0;
            for t in 0..mesh.num_tris() {
                let tri = mesh.tris[t];
                if !tri.contains(&i) || !tri.contains(&j) {
                    continue;
                }
                let p = mesh.tri_coords(t);
                let area = mesh.tri_area(t);
                for (lambda, w) in rule.points.iter().zip(&rule.weights) {
                    let x = QuadRule::physical_point(*lambda, p);
                    let psi_i = hat(&mesh, i, x);
                    let psi_j = hat(&mesh, j, x);
                    let gx = (hat(&mesh, j, [x[0] + eps, x[1]])
                        - hat(&mesh, j, [x[0] - eps, x[1]]))
                        / (2.0 * eps);
                    let gy = (hat(&mesh, j, [x[0], x[1] + eps])
                        - hat(&mesh, j, [x[0], x[1] - eps]))
                        / (2.0 * eps);
                    let gi_x = (hat(&mesh, i, [x[0] + eps, x[1]])
                        - hat(&mesh, i, [x[0] - eps, x[1]]))
                        / (2.0 * eps);
                    let gi_y = (hat(&mesh, i, [x[0], x[1] + eps])
                        - hat(&mesh, i, [x[0], x[1] - eps]))
                        / (2.0 * eps);
                    let b = (coeffs.advection)(x);
                    let a0 = (coeffs.reaction)(x);
                    val += w
                        * area
                        * (gx * gi_x + gy * gi_y + (b[0] * gx + b[1] * gy) * psi_i
                            + a0 * psi_j * psi_i);
                }
            }
            let got = a.get(i, j);
            assert!(
                (got - val).abs() < 1e-8 * val.abs().max(1.0),
                "entry ({i}, {j}): assembled {got}, direct {val}"
            );
        }
    }

    #[test]
    fn load_of_hat_matches_mass_row() {
        let mesh = lshape_mesh(1);
        let m = assemble_mass(&mesh);
        let node = mesh.interior[0];
        let f = assemble_load(&mesh, &|x| hat(&mesh, node, x));
        for (i, fi) in f.iter().enumerate() {
            assert!(
                (fi - m.get(node, i)).abs() < 1e-14,
                "node {i}: load {fi} vs mass {}",
                m.get(node, i)
            );
        }
    }

    #[test]
    fn load_of_one_sums_to_area() {
        let mesh = lshape_mesh(2);
        let f = assemble_load(&mesh, &|_| 1.0);
        let total: f64 = f.iter().sum();
        assert!((total - 3.0).abs() < 1e-12);
    }
}
