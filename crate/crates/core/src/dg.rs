//! Interior-penalty discontinuous Galerkin discretization of
//! `-Δu = f` in `(0,1)^2`, `u = 0` on the boundary, with bilinear elements.
//!
//! For trial `w` and test `v` the bilinear form is
//!
//! ```text
//! a(w, v) = Σ_E ∫_E ∇w·∇v
//!         - Σ_γ ∫_γ {∇w·n_γ}[v] + ε Σ_γ ∫_γ {∇v·n_γ}[w]
//!         - Σ_∂Ω ∫ ∇w·n v     + ε Σ_∂Ω ∫ ∇v·n w
//!         + Σ_γ (σ/h) ∫_γ [w][v] + Σ_∂Ω (σ/h) ∫ w v
//! ```
//!
//! Elements are squares of side `h√2`, so on an `n x n` grid `h = 1/(n√2)`.
//! with ε = -1 (SIPG) or +1 (NIPG). Row `i` of the system matrix holds the
//! test function ψ_i, column `j` the trial function ψ_j.

use thiserror::Error;

use crate::mesh::{
    basis_gradients, basis_values, gauss_rule, tensor_rule, Side, StructuredMesh,
};
use crate::sparse::{bicgstab, norm2, BandedLu, CsrMatrix, Preconditioner, SolveReport, SparseError};
use crate::symbolic::{Expr, Manufactured};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgError {
    #[error("invalid DG configuration: {0}")]
    Config(String),
    #[error("source is not finite at ({x}, {y})")]
    SourceEvaluation { x: f64, y: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("linear solve failed: {0}")]
    Solve(#[from] SparseError),
}

/// Symmetrization choice of the interior penalty family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// ε = -1
    Sipg,
    /// ε = +1
    Nipg,
}

impl Scheme {
    pub fn epsilon(self) -> f64 {
        match self {
            Scheme::Sipg => -1.0,
            Scheme::Nipg => 1.0,
        }
    }

    pub fn from_epsilon(eps: i32) -> Result<Self, DgError> {
        match eps {
            -1 => Ok(Scheme::Sipg),
            1 => Ok(Scheme::Nipg),
            other => Err(DgError::Config(format!("epsilon must be -1 or +1, got {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sipg => "SIPG",
            Scheme::Nipg => "NIPG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgConfig {
    pub scheme: Scheme,
    pub sigma: f64,
}

impl DgConfig {
    pub fn new(scheme: Scheme, sigma: f64) -> Result<Self, DgError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(DgError::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { scheme, sigma })
    }

    pub fn sipg(sigma: f64) -> Self {
        Self::new(Scheme::Sipg, sigma).expect("positive sigma")
    }

    pub fn nipg(sigma: f64) -> Self {
        Self::new(Scheme::Nipg, sigma).expect("positive sigma")
    }

    pub fn epsilon(&self) -> f64 {
        self.scheme.epsilon()
    }

    /// Penalty coefficient `σ/h` on an edge of length `side`. The mesh size
    /// `h` is tied to the element side by `side = h√2`.
    pub fn penalty(&self, side: f64) -> f64 {
        self.sigma * std::f64::consts::SQRT_2 / side
    }
}

/// Right-hand side of the Poisson problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Expr(Expr),
    /// Piecewise constant on a uniform `cells x cells` grid, row-major with
    /// rows bottom-up in y.
    Raster { cells: usize, values: Vec<f64> },
}

impl Source {
    /// Source/sink pair of the single phase flow case: +1 on
    /// `(7h, 17h)^2`, -1 on `(47h, 57h)^2`, `h = 1/64`.
    pub fn darcy() -> Self {
        let cells = 64;
        let mut values = vec![0.0; cells * cells];
        for j in 0..cells {
            for i in 0..cells {
                if (7..17).contains(&i) && (7..17).contains(&j) {
                    values[j * cells + i] = 1.0;
                } else if (47..57).contains(&i) && (47..57).contains(&j) {
                    values[j * cells + i] = -1.0;
                }
            }
        }
        Source::Raster { cells, values }
    }
}

/// Stiffness of the bilinear basis on the reference square. Scale-invariant
/// in 2D, so it is also every element's physical stiffness.
pub fn local_stiffness() -> [[f64; 4]; 4] {
    let rule = gauss_rule(2).expect("2-point rule");
    let mut k = [[0.0; 4]; 4];
    for (xr, yr, w) in tensor_rule(&rule) {
        let g = basis_gradients(xr, yr);
        for i in 0..4 {
            for j in 0..4 {
                k[i][j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    k
}

/// Mass matrix of an element of side `h`: `(h^2/4) M_ref`.
pub fn local_mass(h: f64) -> [[f64; 4]; 4] {
    let rule = gauss_rule(2).expect("2-point rule");
    let mut m = [[0.0; 4]; 4];
    let jac = 0.25 * h * h;
    for (xr, yr, w) in tensor_rule(&rule) {
        let v = basis_values(xr, yr);
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] += jac * w * v[i] * v[j];
            }
        }
    }
    m
}

/// Solve a 4x4 system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

fn opposite(side: Side) -> Side {
    match side {
        Side::Left => Side::Right,
        Side::Right => Side::Left,
        Side::Bottom => Side::Top,
        Side::Top => Side::Bottom,
    }
}

/// Basis traces on one face of an element at an edge quadrature point.
struct FaceTrace {
    values: [f64; 4],
    /// physical gradients
    grads: [[f64; 2]; 4],
}

fn face_trace(side: Side, t: f64, h: f64) -> FaceTrace {
    let (xr, yr) = side.reference_point(t);
    let values = basis_values(xr, yr);
    let mut grads = basis_gradients(xr, yr);
    for g in grads.iter_mut() {
        g[0] *= 2.0 / h;
        g[1] *= 2.0 / h;
    }
    FaceTrace { values, grads }
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Mesh-level operators for one `(mesh, ε, σ)` configuration.
#[derive(Debug, Clone)]
pub struct DgOperators {
    pub mesh: StructuredMesh,
    pub config: DgConfig,
    /// system matrix, `4n^2 x 4n^2`
    pub a: CsrMatrix,
    /// block-diagonal L2 mass matrix
    pub mass: CsrMatrix,
    /// block-diagonal broken stiffness matrix
    pub stiffness: CsrMatrix,
    /// element-wise mass-error operator, `n^2 x 4n^2`
    pub mass_error: CsrMatrix,
    /// interior jump form `Σ_γ ∫_γ [u][v]`
    pub jump: CsrMatrix,
}

/// Source-dependent data on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DgRhs {
    /// `∫_Ω f ψ_i`
    pub load: Vec<f64>,
    /// coefficients of the L2 projection of `f`
    pub proj_coeffs: Vec<f64>,
    /// `∫_E f` per element
    pub element_source: Vec<f64>,
}

impl DgOperators {
    pub fn assemble(mesh: &StructuredMesh, config: DgConfig) -> Self {
        let h = mesh.h();
        let ndofs = mesh.num_dofs();
        let eps = config.epsilon();
        let penalty = config.penalty(h);
        let edge_rule = gauss_rule(2).expect("2-point rule");

        let k_loc = local_stiffness();
        let m_loc = local_mass(h);
        let mut a_trip = Vec::with_capacity(ndofs * 20);
        let mut m_trip = Vec::with_capacity(ndofs * 4);
        let mut k_trip = Vec::with_capacity(ndofs * 4);
        for e in 0..mesh.num_elements() {
            for i in 0..4 {
                for j in 0..4 {
                    a_trip.push((4 * e + i, 4 * e + j, k_loc[i][j]));
                    k_trip.push((4 * e + i, 4 * e + j, k_loc[i][j]));
                    m_trip.push((4 * e + i, 4 * e + j, m_loc[i][j]));
                }
            }
        }

        let mut j_trip = Vec::with_capacity(mesh.interior_edges().len() * 64);
        for edge in mesh.interior_edges() {
            let e2 = edge.second.expect("interior edge");
            let elems = [(edge.first, edge.first_side, 1.0), (e2, opposite(edge.first_side), -1.0)];
            let n = edge.normal;
            for (t, w) in edge_rule.iter() {
                let ds = 0.5 * h * w;
                let traces: Vec<FaceTrace> = elems.iter().map(|&(_, s, _)| face_trace(s, t, h)).collect();
                for (ta, &(ea, _, sa)) in traces.iter().zip(&elems) {
                    for (tb, &(eb, _, sb)) in traces.iter().zip(&elems) {
                        for p in 0..4 {
                            for r in 0..4 {
                                // test ψ_p on ea, trial ψ_r on eb
                                let jump_v = sa * ta.values[p];
                                let jump_w = sb * tb.values[r];
                                let avg_grad_w = 0.5 * dot2(tb.grads[r], n);
                                let avg_grad_v = 0.5 * dot2(ta.grads[p], n);
                                let val = -avg_grad_w * jump_v + eps * avg_grad_v * jump_w
                                    + penalty * jump_w * jump_v;
                                a_trip.push((4 * ea + p, 4 * eb + r, ds * val));
                                j_trip.push((4 * ea + p, 4 * eb + r, ds * jump_w * jump_v));
                            }
                        }
                    }
                }
            }
        }
        for edge in mesh.boundary_edges() {
            let e = edge.first;
            let n = edge.normal;
            for (t, w) in edge_rule.iter() {
                let ds = 0.5 * h * w;
                let tr = face_trace(edge.first_side, t, h);
                for p in 0..4 {
                    for r in 0..4 {
                        let val = -dot2(tr.grads[r], n) * tr.values[p]
                            + eps * dot2(tr.grads[p], n) * tr.values[r]
                            + penalty * tr.values[r] * tr.values[p];
                        a_trip.push((4 * e + p, 4 * e + r, ds * val));
                    }
                }
            }
        }

        let a = CsrMatrix::from_triplets(ndofs, ndofs, &a_trip).expect("in range");
        let mass = CsrMatrix::from_triplets(ndofs, ndofs, &m_trip).expect("in range");
        let stiffness = CsrMatrix::from_triplets(ndofs, ndofs, &k_trip).expect("in range");
        let jump = CsrMatrix::from_triplets(ndofs, ndofs, &j_trip).expect("in range");
        let mass_error = assemble_mass_error(mesh, config);
        Self {
            mesh: mesh.clone(),
            config,
            a,
            mass,
            stiffness,
            mass_error,
            jump,
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    /// Loads, projection coefficients and element integrals of `source`.
    pub fn rhs(&self, source: &Source) -> Result<DgRhs, DgError> {
        let mesh = &self.mesh;
        let h = mesh.h();
        let nel = mesh.num_elements();
        let mut load = vec![0.0; 4 * nel];
        let mut element_source = vec![0.0; nel];
        match source {
            Source::Expr(f) => {
                let rule = tensor_rule(&gauss_rule(4).expect("4-point rule"));
                let jac = 0.25 * h * h;
                for e in 0..nel {
                    for &(xr, yr, w) in &rule {
                        let (x, y) = mesh.map_to_physical(e, xr, yr);
                        let fv = f.eval(x, y);
                        if !fv.is_finite() {
                            return Err(DgError::SourceEvaluation { x, y });
                        }
                        let psi = basis_values(xr, yr);
                        for l in 0..4 {
                            load[4 * e + l] += jac * w * fv * psi[l];
                        }
                        element_source[e] += jac * w * fv;
                    }
                }
            }
            Source::Raster { cells, values } => {
                raster_integrals(mesh, *cells, values, &mut load, &mut element_source)?;
            }
        }
        let m_loc = local_mass(h);
        let mut proj_coeffs = vec![0.0; 4 * nel];
        for e in 0..nel {
            let b = [load[4 * e], load[4 * e + 1], load[4 * e + 2], load[4 * e + 3]];
            let c = solve4(m_loc, b);
            proj_coeffs[4 * e..4 * e + 4].copy_from_slice(&c);
        }
        Ok(DgRhs {
            load,
            proj_coeffs,
            element_source,
        })
    }
}

fn raster_integrals(
    mesh: &StructuredMesh,
    cells: usize,
    values: &[f64],
    load: &mut [f64],
    element_source: &mut [f64],
) -> Result<(), DgError> {
    let n = mesh.n();
    let h = mesh.h();
    if values.len() != cells * cells || cells == 0 {
        return Err(DgError::Dimension(format!(
            "raster of {} values for {cells}x{cells} cells",
            values.len()
        )));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        let c = 1.0 / cells as f64;
        return Err(DgError::SourceEvaluation {
            x: ((k % cells) as f64 + 0.5) * c,
            y: ((k / cells) as f64 + 0.5) * c,
        });
    }
    if !cells.is_multiple_of(n) && !n.is_multiple_of(cells) {
        return Err(DgError::Dimension(format!(
            "raster with {cells} cells per side does not nest with a {n}x{n} mesh"
        )));
    }
    let jac = 0.25 * h * h;
    if cells <= n {
        // each element sits inside one raster cell; ∫_E ψ_l = h^2/4
        let ratio = n / cells;
        for e in 0..mesh.num_elements() {
            let (i, j) = mesh.element_coords(e);
            let fv = values[(j / ratio) * cells + i / ratio];
            for l in 0..4 {
                load[4 * e + l] = fv * jac;
            }
            element_source[e] = fv * h * h;
        }
        return Ok(());
    }
    // several cells per element: integrate ψ_l exactly over each sub-square
    let sub = cells / n;
    let rule = tensor_rule(&gauss_rule(2).expect("2-point rule"));
    let sub_width = 2.0 / sub as f64;
    for e in 0..mesh.num_elements() {
        let (i, j) = mesh.element_coords(e);
        for b in 0..sub {
            for a in 0..sub {
                let fv = values[(j * sub + b) * cells + i * sub + a];
                if fv == 0.0 {
                    continue;
                }
                let x0 = -1.0 + a as f64 * sub_width;
                let y0 = -1.0 + b as f64 * sub_width;
                let sub_jac = jac * 0.25 * sub_width * sub_width;
                for &(sx, sy, w) in &rule {
                    let xr = x0 + 0.5 * (sx + 1.0) * sub_width;
                    let yr = y0 + 0.5 * (sy + 1.0) * sub_width;
                    let psi = basis_values(xr, yr);
                    for l in 0..4 {
                        load[4 * e + l] += sub_jac * w * fv * psi[l];
                    }
                }
                element_source[e] += fv * (h / sub as f64).powi(2);
            }
        }
    }
    Ok(())
}

/// Mass-error operator assembled element by element from the flux form
///
/// ```text
/// ℓ_E(u) = -∫_∂E {∇u·n_E} + (σ/h) Σ_{γ⊂∂E} ∫_γ (u|_E - u|_{E^γ}) - ∫_E f
/// ```
///
/// where boundary faces use the full trace and zero exterior data.
fn assemble_mass_error(mesh: &StructuredMesh, config: DgConfig) -> CsrMatrix {
    let h = mesh.h();
    let penalty = config.penalty(h);
    let rule = gauss_rule(2).expect("2-point rule");
    let mut trip = Vec::with_capacity(mesh.num_elements() * 20);
    for e in 0..mesh.num_elements() {
        for side in Side::ALL {
            let n_out = side.outward_normal();
            let neighbor = mesh.neighbor(e, side);
            for (t, w) in rule.iter() {
                let ds = 0.5 * h * w;
                let own = face_trace(side, t, h);
                match neighbor {
                    Some(nb) => {
                        let other = face_trace(opposite(side), t, h);
                        for r in 0..4 {
                            let v_own = -0.5 * dot2(own.grads[r], n_out) + penalty * own.values[r];
                            let v_nb = -0.5 * dot2(other.grads[r], n_out) - penalty * other.values[r];
                            trip.push((e, 4 * e + r, ds * v_own));
                            trip.push((e, 4 * nb + r, ds * v_nb));
                        }
                    }
                    None => {
                        for r in 0..4 {
                            let v = -dot2(own.grads[r], n_out) + penalty * own.values[r];
                            trip.push((e, 4 * e + r, ds * v));
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_elements(), mesh.num_dofs(), &trip).expect("in range")
}

/// A function of the broken bilinear space.
#[derive(Debug, Clone, PartialEq)]
pub struct DgFunction {
    pub n: usize,
    pub coeffs: Vec<f64>,
}

impl DgFunction {
    pub fn zeros(n: usize) -> Self {
        Self { n, coeffs: vec![0.0; 4 * n * n] }
    }

    /// Nodal interpolant of `u` element by element.
    pub fn interpolate(mesh: &StructuredMesh, u: impl Fn(f64, f64) -> f64) -> Self {
        let mut coeffs = vec![0.0; mesh.num_dofs()];
        for e in 0..mesh.num_elements() {
            for (l, &(xr, yr)) in crate::mesh::REFERENCE_NODES.iter().enumerate() {
                let (x, y) = mesh.map_to_physical(e, xr, yr);
                coeffs[4 * e + l] = u(x, y);
            }
        }
        Self { n: mesh.n(), coeffs }
    }

    fn locate(&self, x: f64, y: f64) -> (usize, f64, f64) {
        let n = self.n as f64;
        let i = ((x * n).floor().max(0.0) as usize).min(self.n - 1);
        let j = ((y * n).floor().max(0.0) as usize).min(self.n - 1);
        let xr = 2.0 * (x * n - i as f64) - 1.0;
        let yr = 2.0 * (y * n - j as f64) - 1.0;
        (j * self.n + i, xr, yr)
    }

    /// Value at `(x, y)`; points on element boundaries take the trace of
    /// the element on their upper-right side (clamped at the domain edge).
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (e, xr, yr) = self.locate(x, y);
        let psi = basis_values(xr, yr);
        (0..4).map(|l| self.coeffs[4 * e + l] * psi[l]).sum()
    }
}

/// Solve `A α = load` with Jacobi-preconditioned BiCGStab to relative residual 1e-12.
pub fn solve_dg(ops: &DgOperators, rhs: &DgRhs) -> Result<DgFunction, DgError> {
    Ok(solve_dg_with_report(ops, rhs)?.0)
}

pub const LABEL_SOLVE_TOL: f64 = 1e-12;

pub fn solve_dg_with_report(ops: &DgOperators, rhs: &DgRhs) -> Result<(DgFunction, SolveReport), DgError> {
    let n = ops.num_dofs();
    if rhs.load.len() != n {
        return Err(DgError::Dimension(format!("load has {} entries, system has {n}", rhs.load.len())));
    }
    let max_iter = 4 * n + 1000;
    let report = match bicgstab(&ops.a, &rhs.load, &vec![0.0; n], LABEL_SOLVE_TOL, max_iter, Preconditioner::Jacobi) {
        Ok(rep) if rep.converged => rep,
        // SIPG with a small penalty is indefinite and can have vanishing
        // diagonal entries; fall back to a direct banded solve
        Ok(_) | Err(SparseError::Breakdown(_)) => direct_solve(&ops.a, &rhs.load)?,
        Err(e) => return Err(e.into()),
    };
    Ok((
        DgFunction {
            n: ops.mesh.n(),
            coeffs: report.solution.clone(),
        },
        report,
    ))
}

/// Banded LU followed by iterative refinement until the relative residual
/// reaches the label tolerance.
fn direct_solve(a: &CsrMatrix, b: &[f64]) -> Result<SolveReport, DgError> {
    let lu = BandedLu::factor(a)?;
    let bnorm = norm2(b);
    let residual = |x: &[f64]| -> Result<(Vec<f64>, f64), DgError> {
        let ax = a.spmv(x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let rn = norm2(&r);
        Ok((r, if bnorm > 0.0 { rn / bnorm } else { rn }))
    };
    let mut x = lu.solve(b)?;
    let (mut r, mut res) = residual(&x)?;
    let mut history = vec![res];
    while res > LABEL_SOLVE_TOL && history.len() <= 5 {
        let dx = lu.solve(&r)?;
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        (r, res) = residual(&x)?;
        history.push(res);
    }
    let report = SolveReport {
        solution: x,
        iterations: history.len(),
        converged: res <= LABEL_SOLVE_TOL,
        residual_history: history,
    };
    if !report.converged {
        return Err(DgError::Solve(SparseError::NotConverged(Box::new(report))));
    }
    Ok(report)
}

/// Element-wise mass error `B α - c`.
pub fn mass_error(ops: &DgOperators, rhs: &DgRhs, alpha: &[f64]) -> Result<Vec<f64>, DgError> {
    let b_alpha = ops.mass_error.spmv(alpha)?;
    if rhs.element_source.len() != b_alpha.len() {
        return Err(DgError::Dimension("element source size".into()));
    }
    Ok(b_alpha.iter().zip(&rhs.element_source).map(|(p, q)| p - q).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L2,
    /// broken H1 seminorm
    H1,
}

/// Difference norm of two DG functions on the same mesh, computed exactly
/// from the block mass or stiffness matrices.
pub fn dg_error(ops: &DgOperators, reference: &[f64], approx: &[f64], norm: Norm) -> Result<f64, DgError> {
    if reference.len() != approx.len() || reference.len() != ops.num_dofs() {
        return Err(DgError::Dimension(format!(
            "mesh mismatch: {} vs {} DOFs on a {}-DOF mesh",
            reference.len(),
            approx.len(),
            ops.num_dofs()
        )));
    }
    let delta: Vec<f64> = reference.iter().zip(approx).map(|(p, q)| p - q).collect();
    let matrix = match norm {
        Norm::L2 => &ops.mass,
        Norm::H1 => &ops.stiffness,
    };
    Ok(matrix.quadratic_form(&delta)?.max(0.0).sqrt())
}

/// Error of a DG function against an analytic solution, by tensor Gauss
/// quadrature with `quad_order` points per direction on every element.
pub fn exact_error(
    mesh: &StructuredMesh,
    exact: &Manufactured,
    approx: &[f64],
    norm: Norm,
    quad_order: usize,
) -> Result<f64, DgError> {
    if approx.len() != mesh.num_dofs() {
        return Err(DgError::Dimension(format!(
            "mesh mismatch: {} DOFs for a {}-DOF mesh",
            approx.len(),
            mesh.num_dofs()
        )));
    }
    let rule = tensor_rule(&gauss_rule(quad_order).map_err(|e| DgError::Config(e.to_string()))?);
    let h = mesh.h();
    let jac = 0.25 * h * h;
    let mut total = 0.0;
    for e in 0..mesh.num_elements() {
        let alpha = &approx[4 * e..4 * e + 4];
        for &(xr, yr, w) in &rule {
            let (x, y) = mesh.map_to_physical(e, xr, yr);
            let d = match norm {
                Norm::L2 => {
                    let psi = basis_values(xr, yr);
                    let uh: f64 = (0..4).map(|l| alpha[l] * psi[l]).sum();
                    let diff = exact.u.eval(x, y) - uh;
                    diff * diff
                }
                Norm::H1 => {
                    let g = basis_gradients(xr, yr);
                    let gx: f64 = (0..4).map(|l| alpha[l] * g[l][0]).sum::<f64>() * 2.0 / h;
                    let gy: f64 = (0..4).map(|l| alpha[l] * g[l][1]).sum::<f64>() * 2.0 / h;
                    let dx = exact.ux.eval(x, y) - gx;
                    let dy = exact.uy.eval(x, y) - gy;
                    dx * dx + dy * dy
                }
            };
            total += jac * w * d;
        }
    }
    Ok(total.sqrt())
}

/// `log2(e_coarse / e_fine)` for a refinement by two.
pub fn convergence_rate(e_coarse: f64, e_fine: f64) -> Result<f64, DgError> {
    if !(e_coarse > 0.0 && e_fine > 0.0) {
        return Err(DgError::Config(format!(
            "convergence rate needs positive errors, got {e_coarse} and {e_fine}"
        )));
    }
    Ok((e_coarse / e_fine).log2())
}

/// `||r|| / ||load||` of a candidate solution.
pub fn relative_residual(ops: &DgOperators, rhs: &DgRhs, alpha: &[f64]) -> Result<f64, DgError> {
    let ax = ops.a.spmv(alpha)?;
    let r: Vec<f64> = ax.iter().zip(&rhs.load).map(|(p, q)| p - q).collect();
    let b = norm2(&rhs.load);
    Ok(if b > 0.0 { norm2(&r) / b } else { norm2(&r) })
}
