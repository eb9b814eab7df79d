//! Reduced formulation of the Dirichlet boundary control problem.
//!
//! The control `u` lives on the boundary nodes. Eliminating the state and
//! adjoint turns the optimality system into a dense symmetric positive
//! definite operator `T` on the boundary, applied matrix-free through
//! three sparse triangular solves, and solved by preconditioned conjugate
//! gradients. A sparse solve of the full coupled optimality system serves
//! as an independent cross-check.

use crate::assemble::{
    assemble_mass, assemble_operator, assemble_stiffness, interpolate, CoefficientSet,
    ScalarField,
};
use crate::mesh::TriMesh;
use crate::solver::{pcg, Factorization, PcgReport};
use crate::sparse::{CsrMatrix, Select};
use crate::{Error, Result};

/// Continuous problem data: minimize
/// `½‖y - y_d‖² + (κ/2)|u - u_d|²` subject to `-Δy + b·∇y + a₀y = 0`
/// with `y = u` on the boundary, where the control seminorm is the
/// energy of the discrete harmonic extension of `u - u_d`.
#[derive(Clone)]
pub struct ControlProblem {
    pub coeffs: CoefficientSet,
    pub y_d: ScalarField,
    pub u_d: ScalarField,
    pub kappa: f64,
}

/// Everything needed to apply the reduced operator on one mesh: the
/// assembled matrices, the index split into interior and boundary nodes,
/// and the three factorizations that are reused across all iterations.
pub struct ReducedSystem {
    mesh: TriMesh,
    kappa: f64,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    a_ib: CsrMatrix,
    k_ib: CsrMatrix,
    fa_ii: Factorization,
    fk_ii: Factorization,
    fa_bb: Factorization,
    y_d_nodal: Vec<f64>,
    y_d_data: Vec<f64>,
    z_tilde: Vec<f64>,
    rhs: Vec<f64>,
}

fn gather(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

impl ReducedSystem {
    pub fn new(mesh: &TriMesh, problem: &ControlProblem) -> Result<Self> {
        if problem.kappa <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "regularization parameter must be positive, got {}",
                problem.kappa
            )));
        }
        let interior = Select::Of(&mesh.interior);
        let boundary = Select::Of(&mesh.boundary);

        let mass = assemble_mass(mesh);
        let stiffness = assemble_stiffness(mesh);
        let operator = assemble_operator(mesh, &problem.coeffs);

        let a_ii = operator.extract(interior, interior)?;
        let a_ib = operator.extract(interior, boundary)?;
        let a_bb = operator.extract(boundary, boundary)?;
        let k_ii = stiffness.extract(interior, interior)?;
        let k_ib = stiffness.extract(interior, boundary)?;

        let fa_ii = Factorization::general(&a_ii)?;
        let fk_ii = Factorization::symmetric_positive(&k_ii)?;
        let fa_bb = Factorization::general(&a_bb)?;

        // The desired state enters through its nodal interpolant: the
        // misfit is measured against the interpolant, and the adjoint
        // data is the matching mass-weighted vector.
        let y_d_nodal = interpolate(mesh, &*problem.y_d);
        let y_d_data = mass.matvec(&y_d_nodal);

        let mut partial = ReducedSystem {
            mesh: mesh.clone(),
            kappa: problem.kappa,
            mass,
            stiffness,
            a_ib,
            k_ib,
            fa_ii,
            fk_ii,
            fa_bb,
            y_d_nodal,
            y_d_data,
            z_tilde: Vec::new(),
            rhs: Vec::new(),
        };

        // Shifted control data: interpolate u_d at the boundary nodes and
        // extend harmonically, so the seminorm penalizes u - u_d.
        let u_d_values: Vec<f64> = partial
            .mesh
            .boundary
            .iter()
            .map(|&b| (problem.u_d)(partial.mesh.coords[b]))
            .collect();
        partial.z_tilde = partial.harmonic_extension(&u_d_values)?;

        // Constant part of the gradient: the adjoint response to the
        // desired state plus the data terms on the boundary rows.
        let minus_data_i: Vec<f64> = partial
            .mesh
            .interior
            .iter()
            .map(|&i| -partial.y_d_data[i])
            .collect();
        let phi_tilde_i = partial.fa_ii.solve_transpose(&minus_data_i)?;
        let k_z_tilde = partial.stiffness.matvec(&partial.z_tilde);
        partial.rhs = partial
            .mesh
            .boundary
            .iter()
            .zip(partial.a_ib.matvec_transpose(&phi_tilde_i))
            .map(|(&b, a_phi)| partial.y_d_data[b] + a_phi + partial.kappa * k_z_tilde[b])
            .collect();

        Ok(partial)
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn boundary_dim(&self) -> usize {
        self.mesh.boundary.len()
    }

    pub fn interior_dim(&self) -> usize {
        self.mesh.interior.len()
    }

    /// Total triangular solves spent so far across all factorizations.
    pub fn solve_count(&self) -> u64 {
        self.fa_ii.solve_count() + self.fk_ii.solve_count() + self.fa_bb.solve_count()
    }

    fn check_control(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.mesh.boundary.len() {
            return Err(Error::InvalidParameter(format!(
                "control has {} values for {} boundary nodes",
                u.len(),
                self.mesh.boundary.len()
            )));
        }
        Ok(())
    }

    fn check_nodal(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.mesh.num_nodes() {
            return Err(Error::InvalidParameter(format!(
                "got {} values for {} nodes",
                v.len(),
                self.mesh.num_nodes()
            )));
        }
        Ok(())
    }

    /// Expands boundary values and interior values into a full nodal
    /// vector.
    fn full_vector(&self, interior: &[f64], boundary: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.num_nodes()];
        for (&i, &v) in self.mesh.interior.iter().zip(interior) {
            out[i] = v;
        }
        for (&b, &v) in self.mesh.boundary.iter().zip(boundary) {
            out[b] = v;
        }
        out
    }

    /// Solves the state equation with boundary data `u`; returns the full
    /// nodal state vector.
    pub fn state(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_control(u)?;
        let rhs: Vec<f64> = self.a_ib.matvec(u).iter().map(|v| -v).collect();
        let y_i = self.fa_ii.solve(&rhs)?;
        Ok(self.full_vector(&y_i, u))
    }

    /// Discrete harmonic extension of boundary values `v`: the full nodal
    /// vector agreeing with `v` on the boundary whose interior values make
    /// the stiffness residual vanish on interior nodes.
    pub fn harmonic_extension(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_control(v)?;
        let rhs: Vec<f64> = self.k_ib.matvec(v).iter().map(|x| -x).collect();
        let z_i = self.fk_ii.solve(&rhs)?;
        Ok(self.full_vector(&z_i, v))
    }

    /// Energy seminorm of boundary values `v`: the square root of the
    /// stiffness quadratic form of the harmonic extension of `v`.
    pub fn control_seminorm(&self, v: &[f64]) -> Result<f64> {
        let z = self.harmonic_extension(v)?;
        self.h1_seminorm(&z)
    }

    /// H¹ seminorm of a nodal vector, `(vᵀKv)^{1/2}`.
    pub fn h1_seminorm(&self, v: &[f64]) -> Result<f64> {
        self.check_nodal(v)?;
        let kv = self.stiffness.matvec(v);
        let energy: f64 = v.iter().zip(&kv).map(|(a, b)| a * b).sum();
        Ok(energy.max(0.0).sqrt())
    }

    /// L² norm of a nodal vector, `(vᵀMv)^{1/2}`.
    pub fn l2_norm(&self, v: &[f64]) -> Result<f64> {
        self.check_nodal(v)?;
        let mv = self.mass.matvec(v);
        let quad: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        Ok(quad.max(0.0).sqrt())
    }

    /// Adjoint state for the control `u`: vanishes on the boundary, and on
    /// interior nodes solves the transposed operator against the mass
    /// residual of the state.
    pub fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        let y = self.state(u)?;
        let my = self.mass.matvec(&y);
        let rhs: Vec<f64> = self
            .mesh
            .interior
            .iter()
            .map(|&i| my[i] - self.y_d_data[i])
            .collect();
        let phi_i = self.fa_ii.solve_transpose(&rhs)?;
        Ok(self.full_vector(&phi_i, &vec![0.0; self.boundary_dim()]))
    }

    /// Applies the reduced operator `T`: the control-to-gradient map with
    /// the data terms removed. Costs one state solve, one adjoint solve
    /// and one harmonic extension.
    pub fn apply_reduced(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_control(u)?;
        let y = self.state(u)?;
        let my = self.mass.matvec(&y);
        let phi_hat_i = self
            .fa_ii
            .solve_transpose(&gather(&my, &self.mesh.interior))?;
        let z = self.harmonic_extension(u)?;
        let kz = self.stiffness.matvec(&z);
        let a_phi = self.a_ib.matvec_transpose(&phi_hat_i);
        Ok(self
            .mesh
            .boundary
            .iter()
            .zip(a_phi)
            .map(|(&b, ap)| my[b] - ap + self.kappa * kz[b])
            .collect())
    }

    /// Right-hand side `w` of the reduced equation `T u = w`.
    pub fn reduced_rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Gradient of the discrete objective at `u`.
    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let tu = self.apply_reduced(u)?;
        Ok(tu.iter().zip(&self.rhs).map(|(t, w)| t - w).collect())
    }

    /// Value of the discrete objective at `u`: the mass-weighted misfit
    /// of the state against the interpolated desired state plus the
    /// scaled energy of the harmonic extension of `u - u_d`.
    pub fn objective(&self, u: &[f64]) -> Result<f64> {
        let y = self.state(u)?;
        let dy: Vec<f64> = y.iter().zip(&self.y_d_nodal).map(|(a, b)| a - b).collect();
        let mdy = self.mass.matvec(&dy);
        let misfit: f64 = dy.iter().zip(&mdy).map(|(a, b)| a * b).sum();
        let z = self.harmonic_extension(u)?;
        let dz: Vec<f64> = z.iter().zip(&self.z_tilde).map(|(a, b)| a - b).collect();
        let kdz = self.stiffness.matvec(&dz);
        let energy: f64 = dz.iter().zip(&kdz).map(|(a, b)| a * b).sum();
        Ok(0.5 * misfit + 0.5 * self.kappa * energy)
    }

    /// Solves the reduced optimality system `T u = w` by preconditioned
    /// conjugate gradients, preconditioning with the inverse of
    /// `A_BB A_BBᵀ` realized as two triangular solves per application.
    pub fn solve(&self, tol: f64) -> Result<(Vec<f64>, PcgReport)> {
        let max_iterations = 10 * self.boundary_dim();
        let rhs = self.rhs.clone();
        let (u, report) = pcg(
            &mut |v| self.apply_reduced(v),
            &rhs,
            &mut |r| {
                let w = self.fa_bb.solve(r)?;
                self.fa_bb.solve_transpose(&w)
            },
            tol,
            max_iterations,
        )?;
        if !report.converged {
            return Err(Error::NoConvergence {
                iterations: report.iterations,
                residual: report.relative_residual,
            });
        }
        Ok((u, report))
    }
}

/// Solution of the coupled optimality system solved in one shot.
pub struct MonolithicSolution {
    pub u: Vec<f64>,
    pub state: Vec<f64>,
    pub adjoint_interior: Vec<f64>,
    pub harmonic: Vec<f64>,
}

/// Solves the full coupled optimality system (harmonic extension, state,
/// adjoint and boundary stationarity) as one sparse linear system. Serves
/// as an independent check on the reduced solver: both must produce the
/// same control up to solver tolerances.
pub fn solve_monolithic(mesh: &TriMesh, problem: &ControlProblem) -> Result<MonolithicSolution> {
    if problem.kappa <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "regularization parameter must be positive, got {}",
            problem.kappa
        )));
    }
    let interior = &mesh.interior;
    let boundary = &mesh.boundary;
    let ni = interior.len();
    let nb = boundary.len();
    let n = 3 * ni + nb;
    let kappa = problem.kappa;

    let mass = assemble_mass(mesh);
    let stiffness = assemble_stiffness(mesh);
    let operator = assemble_operator(mesh, &problem.coeffs);
    let y_d_data = mass.matvec(&interpolate(mesh, &*problem.y_d));

    let mut position = vec![usize::MAX; mesh.num_nodes()];
    for (r, &i) in interior.iter().enumerate() {
        position[i] = r;
    }
    let mut is_interior = vec![false; mesh.num_nodes()];
    for &i in interior {
        is_interior[i] = true;
    }
    let mut boundary_position = vec![usize::MAX; mesh.num_nodes()];
    for (r, &b) in boundary.iter().enumerate() {
        boundary_position[b] = r;
    }

    // Unknown layout: harmonic extension interior, state interior,
    // adjoint interior, then the boundary control.
    let z_of = |i: usize| position[i];
    let y_of = |i: usize| ni + position[i];
    let phi_of = |i: usize| 2 * ni + position[i];
    let u_of = |b: usize| 3 * ni + boundary_position[b];

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs = vec![0.0; n];

    // Harmonic extension rows: K_II z_I + K_IB u = 0.
    for (i, j, v) in stiffness.triplets() {
        if is_interior[i] {
            let col = if is_interior[j] { z_of(j) } else { u_of(j) };
            triplets.push((z_of(i), col, v));
        }
    }
    // Adjoint rows: A_IIᵀ φ_I - M_II y_I - M_IB u = -(M I_h y_d)_I.
    for (i, j, v) in operator.triplets() {
        if is_interior[i] && is_interior[j] {
            triplets.push((ni + position[j], phi_of(i), v));
        }
    }
    for (i, j, v) in mass.triplets() {
        if is_interior[i] {
            let col = if is_interior[j] { y_of(j) } else { u_of(j) };
            triplets.push((ni + position[i], col, -v));
        }
    }
    for &i in interior {
        rhs[ni + position[i]] = -y_d_data[i];
    }
    // State rows: A_II y_I + A_IB u = 0.
    for (i, j, v) in operator.triplets() {
        if is_interior[i] {
            let col = if is_interior[j] { y_of(j) } else { u_of(j) };
            triplets.push((2 * ni + position[i], col, v));
        }
    }
    // Stationarity rows on the boundary:
    // κ K_BI z_I + M_BI y_I - A_IBᵀ φ_I + (M_BB + κ K_BB) u
    //   = (M I_h y_d)_B + κ (K z̃)_B.
    for (i, j, v) in stiffness.triplets() {
        if !is_interior[i] {
            let col = if is_interior[j] { z_of(j) } else { u_of(j) };
            triplets.push((u_of(i), col, kappa * v));
        }
    }
    for (i, j, v) in mass.triplets() {
        if !is_interior[i] {
            let col = if is_interior[j] { y_of(j) } else { u_of(j) };
            triplets.push((u_of(i), col, v));
        }
    }
    for (i, j, v) in operator.triplets() {
        if is_interior[i] && !is_interior[j] {
            triplets.push((u_of(j), phi_of(i), -v));
        }
    }

    let u_d_values: Vec<f64> = boundary.iter().map(|&b| (problem.u_d)(mesh.coords[b])).collect();
    let k_ii = stiffness.extract(Select::Of(interior), Select::Of(interior))?;
    let k_ib = stiffness.extract(Select::Of(interior), Select::Of(boundary))?;
    let fk_ii = Factorization::symmetric_positive(&k_ii)?;
    let neg_kib_ud: Vec<f64> = k_ib.matvec(&u_d_values).iter().map(|v| -v).collect();
    let z_tilde_i = fk_ii.solve(&neg_kib_ud)?;
    let mut z_tilde = vec![0.0; mesh.num_nodes()];
    for (&i, &v) in interior.iter().zip(&z_tilde_i) {
        z_tilde[i] = v;
    }
    for (&b, &v) in boundary.iter().zip(&u_d_values) {
        z_tilde[b] = v;
    }
    let k_z_tilde = stiffness.matvec(&z_tilde);
    for &b in boundary {
        rhs[u_of(b)] = y_d_data[b] + kappa * k_z_tilde[b];
    }

    let system = CsrMatrix::from_triplets(n, n, &triplets)?;
    let factorization = Factorization::general(&system)?;
    let solution = factorization.solve(&rhs)?;

    let u: Vec<f64> = (0..nb).map(|r| solution[3 * ni + r]).collect();
    let mut state = vec![0.0; mesh.num_nodes()];
    let mut harmonic = vec![0.0; mesh.num_nodes()];
    for (r, &i) in interior.iter().enumerate() {
        state[i] = solution[ni + r];
        harmonic[i] = solution[r];
    }
    for (r, &b) in boundary.iter().enumerate() {
        state[b] = u[r];
        harmonic[b] = u[r];
    }
    let adjoint_interior: Vec<f64> = (0..ni).map(|r| solution[2 * ni + r]).collect();
    Ok(MonolithicSolution {
        u,
        state,
        adjoint_interior,
        harmonic,
    })
}
