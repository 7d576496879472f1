//! Matrix-free elliptic solvers on the interior nodes of a grid, with
//! homogeneous Dirichlet data eliminated.
//!
//! Both the anisotropic pressure operator `u -> -div(A grad u)` and the
//! implicit time-step operator `u -> u - sigma lap u` share one
//! Jacobi-preconditioned conjugate gradient loop. The pressure operator
//! reuses the same interior stencil as [`crate::grid::div_anisotropic`],
//! which makes it exactly self-adjoint in the plain dot product.

use crate::error::{Error, Result};
use crate::grid::{aniso_interior, Grid2D, Matrix2Field, ScalarField, VectorField2};
use crate::model::conductivity;

/// Tolerances and limits for the conjugate gradient loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target relative residual `|b - M u| / |b|`.
    pub rel_tol: f64,
    /// Iteration cap before the solve is declared stalled.
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-10,
            max_iters: 50_000,
        }
    }
}

/// Convergence report of a single linear solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub iters: usize,
    /// Final relative residual.
    pub residual: f64,
}

/// A symmetric positive definite operator acting on interior nodes.
pub trait InteriorOperator {
    fn grid(&self) -> &Grid2D;
    /// Apply the operator, reading the state from a full-grid vector whose
    /// boundary entries are zero, writing interior values only.
    fn apply_from_full(&self, full: &[f64], out: &mut [f64]);
    /// Operator diagonal over interior nodes, for Jacobi preconditioning.
    fn diagonal(&self) -> Vec<f64>;
}

/// `u -> -div(A grad u)` with `u = 0` on the boundary.
pub struct PressureSystem {
    a: Matrix2Field,
}

impl PressureSystem {
    pub fn new(a: Matrix2Field) -> Result<Self> {
        if !a.is_symmetric() {
            return Err(Error::NonSymmetricMatrix);
        }
        for (k, ((&a11, &a12), &a22)) in a
            .a11()
            .iter()
            .zip(a.a12())
            .zip(a.a22())
            .enumerate()
        {
            let det = a11 * a22 - a12 * a12;
            if !(a11 > 0.0 && a22 > 0.0 && det > 0.0) || !det.is_finite() {
                let (nx, _) = (a.grid().nx(), a.grid().ny());
                return Err(Error::NonFinite {
                    field: "conductivity (not positive definite)",
                    i: k % nx,
                    j: k / nx,
                    value: det,
                });
            }
        }
        Ok(PressureSystem { a })
    }

    /// Conductivity for a given vector field `m`.
    pub fn from_m(m: &VectorField2) -> Result<Self> {
        PressureSystem::new(conductivity(m))
    }

    pub fn coefficients(&self) -> &Matrix2Field {
        &self.a
    }
}

impl InteriorOperator for PressureSystem {
    fn grid(&self) -> &Grid2D {
        self.a.grid()
    }

    fn apply_from_full(&self, full: &[f64], out: &mut [f64]) {
        let g = self.a.grid();
        let (nx, ny) = (g.nx(), g.ny());
        let (a11, a12, a22) = (self.a.a11(), self.a.a12(), self.a.a22());
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let kk = (j - 1) * (nx - 2) + (i - 1);
                out[kk] = -aniso_interior(
                    a11,
                    a12,
                    a22,
                    |k| full[k],
                    nx,
                    g.hx(),
                    g.hy(),
                    i,
                    j,
                );
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let g = self.a.grid();
        let (nx, ny) = (g.nx(), g.ny());
        let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
        let (a11, a22) = (self.a.a11(), self.a.a22());
        let mut diag = Vec::with_capacity((nx - 2) * (ny - 2));
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                // The mixed stencil never touches the center node, so the
                // diagonal comes from the face-averaged fluxes alone.
                let dx = 0.5 * (2.0 * a11[k] + a11[k + 1] + a11[k - 1]) / hx2;
                let dy = 0.5 * (2.0 * a22[k] + a22[k + nx] + a22[k - nx]) / hy2;
                diag.push(dx + dy);
            }
        }
        diag
    }
}

/// `u -> u - sigma lap u` with `u = 0` on the boundary (`sigma >= 0`).
pub struct HelmholtzSystem {
    grid: Grid2D,
    sigma: f64,
}

impl HelmholtzSystem {
    pub fn new(grid: Grid2D, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::BadParameter {
                name: "sigma",
                value: sigma,
                constraint: "sigma >= 0".into(),
            });
        }
        Ok(HelmholtzSystem { grid, sigma })
    }
}

impl InteriorOperator for HelmholtzSystem {
    fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn apply_from_full(&self, full: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let (hx2, hy2) = (
            self.grid.hx() * self.grid.hx(),
            self.grid.hy() * self.grid.hy(),
        );
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                let kk = (j - 1) * (nx - 2) + (i - 1);
                let lap = (full[k + 1] - 2.0 * full[k] + full[k - 1]) / hx2
                    + (full[k + nx] - 2.0 * full[k] + full[k - nx]) / hy2;
                out[kk] = full[k] - self.sigma * lap;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let d = 1.0
            + self.sigma
                * (2.0 / (self.grid.hx() * self.grid.hx())
                    + 2.0 / (self.grid.hy() * self.grid.hy()));
        vec![d; (nx - 2) * (ny - 2)]
    }
}

fn scatter_interior(grid: &Grid2D, interior: &[f64], full: &mut [f64]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    for j in 1..ny - 1 {
        let src = &interior[(j - 1) * (nx - 2)..j * (nx - 2)];
        full[j * nx + 1..j * nx + nx - 1].copy_from_slice(src);
    }
}

fn gather_interior(grid: &Grid2D, full: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = Vec::with_capacity((nx - 2) * (ny - 2));
    for j in 1..ny - 1 {
        out.extend_from_slice(&full[j * nx + 1..j * nx + nx - 1]);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients on interior unknowns.
///
/// `rhs` and the returned solution are full-grid fields; the solution is
/// zero on the boundary. `warm` seeds the iteration when its grid matches.
pub fn solve(
    op: &dyn InteriorOperator,
    rhs: &ScalarField,
    warm: Option<&ScalarField>,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    let grid = op.grid().clone();
    if rhs.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    rhs.ensure_finite("elliptic right-hand side")?;
    let n = (grid.nx() - 2) * (grid.ny() - 2);
    let b = gather_interior(&grid, rhs.values());
    let norm_b = dot(&b, &b).sqrt();
    if norm_b == 0.0 {
        return Ok((
            ScalarField::zeros(grid),
            SolveReport {
                iters: 0,
                residual: 0.0,
            },
        ));
    }

    let mut u = match warm {
        Some(w) if w.grid() == &grid => gather_interior(&grid, w.values()),
        _ => vec![0.0; n],
    };
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|&d| 1.0 / d).collect();

    let mut full = vec![0.0; grid.n_nodes()];
    let mut q = vec![0.0; n];
    scatter_interior(&grid, &u, &mut full);
    op.apply_from_full(&full, &mut q);
    let mut r: Vec<f64> = b.iter().zip(&q).map(|(bi, qi)| bi - qi).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = dot(&r, &r).sqrt() / norm_b;
    let mut history = vec![rel];

    let mut iters = 0;
    while rel > opts.rel_tol {
        if iters >= opts.max_iters {
            let tail = history.len().saturating_sub(10);
            return Err(Error::SolverStalled {
                iters,
                residual: rel,
                history: history[tail..].to_vec(),
            });
        }
        scatter_interior(&grid, &p, &mut full);
        op.apply_from_full(&full, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            let tail = history.len().saturating_sub(10);
            return Err(Error::SolverStalled {
                iters,
                residual: rel,
                history: history[tail..].to_vec(),
            });
        }
        let alpha = rz / pq;
        for k in 0..n {
            u[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        rel = dot(&r, &r).sqrt() / norm_b;
        history.push(rel);
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        iters += 1;
    }

    let mut out = vec![0.0; grid.n_nodes()];
    scatter_interior(&grid, &u, &mut out);
    let field = ScalarField::new(grid, out)?;
    field.ensure_finite("elliptic solution")?;
    Ok((
        field,
        SolveReport {
            iters,
            residual: rel,
        },
    ))
}

/// Solve `-div((I + m m^T) grad p) = s` with `p = 0` on the boundary.
pub fn solve_pressure(
    m: &VectorField2,
    s: &ScalarField,
    warm: Option<&ScalarField>,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    if m.grid() != s.grid() {
        return Err(Error::GridMismatch);
    }
    let sys = PressureSystem::from_m(m)?;
    solve(&sys, s, warm, opts)
}

/// Solve the initial pressure problem `-div((I + m0 m0^T) grad p0) = s`
/// with `p0 = 0` on the boundary, for initial conductance `m0` vanishing
/// on the boundary. Also returns `sup |grad p0|`, the quantity the
/// small-data condition of the decay analysis is phrased in.
pub fn solve_p0(
    m0: &VectorField2,
    s: &ScalarField,
    opts: &SolverOptions,
) -> Result<(ScalarField, f64, SolveReport)> {
    let g = m0.grid().clone();
    for (i, j) in g.iter_nodes() {
        if g.is_boundary(i, j) {
            let (m1, m2) = m0.at(i, j);
            if m1 != 0.0 || m2 != 0.0 {
                return Err(Error::NonFinite {
                    field: "m0 (nonzero on boundary)",
                    i,
                    j,
                    value: if m1 != 0.0 { m1 } else { m2 },
                });
            }
        }
    }
    let (p0, report) = solve_pressure(m0, s, None, opts)?;
    let grad = crate::grid::gradient(&p0);
    let sup = grad
        .c1()
        .iter()
        .zip(grad.c2())
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    Ok((p0, sup, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{div_anisotropic, gradient, integrate, lp_norm};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_interior(grid: &Grid2D, rng: &mut impl Rng) -> Vec<f64> {
        (0..(grid.nx() - 2) * (grid.ny() - 2))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect()
    }

    fn apply_vec(op: &dyn InteriorOperator, x: &[f64]) -> Vec<f64> {
        let grid = op.grid().clone();
        let mut full = vec![0.0; grid.n_nodes()];
        scatter_interior(&grid, x, &mut full);
        let mut out = vec![0.0; x.len()];
        op.apply_from_full(&full, &mut out);
        out
    }

    fn solve_iso(
        s: &ScalarField,
        warm: Option<&ScalarField>,
        opts: &SolverOptions,
    ) -> Result<(ScalarField, SolveReport)> {
        solve_pressure(&VectorField2::zeros(s.grid().clone()), s, warm, opts)
    }

    fn wavy_system(grid: &Grid2D) -> PressureSystem {
        let m = VectorField2::from_fns(
            grid.clone(),
            |x, y| 0.8 * (PI * x).sin() * (2.0 * PI * y).sin(),
            |x, y| 0.6 * (2.0 * PI * x).sin() * (PI * y).sin(),
        );
        PressureSystem::from_m(&m).unwrap()
    }

    #[test]
    fn identity_coefficients_give_five_point_stencil() {
        let g = Grid2D::unit_square(4).unwrap();
        let sys = PressureSystem::new(Matrix2Field::identity(g.clone())).unwrap();
        let n = (g.nx() - 2) * (g.ny() - 2);
        // Basis vector at interior node (2, 2), interior index 1*3+1 = 4.
        let mut x = vec![0.0; n];
        x[4] = 1.0;
        let y = apply_vec(&sys, &x);
        let h2 = 16.0; // 1/h^2 with h = 1/4
        for (kk, &val) in y.iter().enumerate() {
            let expected = match kk {
                4 => 4.0 * h2,
                1 | 3 | 5 | 7 => -h2,
                _ => 0.0,
            };
            assert!(
                (val - expected).abs() < 1e-12,
                "stencil weight at {kk}: {val} vs {expected}"
            );
        }
    }

    #[test]
    fn operator_is_self_adjoint() {
        let g = Grid2D::unit_square(16).unwrap();
        let sys = wavy_system(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let x = random_interior(&g, &mut rng);
            let y = random_interior(&g, &mut rng);
            let mx = apply_vec(&sys, &x);
            let my = apply_vec(&sys, &y);
            let lhs = dot(&mx, &y);
            let rhs = dot(&x, &my);
            let scale = dot(&mx, &mx).sqrt() * dot(&y, &y).sqrt();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * scale.max(1.0),
                "adjoint defect {} vs scale {scale}",
                (lhs - rhs).abs()
            );
        }
    }

    #[test]
    fn quadratic_form_dominates_isotropic_one() {
        let g = Grid2D::unit_square(12).unwrap();
        let aniso = wavy_system(&g);
        let iso = PressureSystem::new(Matrix2Field::identity(g.clone())).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = random_interior(&g, &mut rng);
            let qa = dot(&apply_vec(&aniso, &x), &x);
            let qi = dot(&apply_vec(&iso, &x), &x);
            assert!(qi > 0.0, "isotropic quadratic form must be positive");
            assert!(
                qa >= qi - 1e-10 * qa.abs(),
                "anisotropic form {qa} below isotropic form {qi}"
            );
        }
    }

    #[test]
    fn apply_agrees_with_divergence_operator() {
        let g = Grid2D::unit_square(10).unwrap();
        let sys = wavy_system(&g);
        let f = ScalarField::from_fn(g.clone(), |x, y| {
            (PI * x).sin() * (PI * y).sin() * (1.0 + 0.3 * x)
        });
        // Zero out the boundary so the eliminated system sees the same data.
        let mut vals = f.values().to_vec();
        for (i, j) in g.iter_nodes() {
            if g.is_boundary(i, j) {
                vals[g.idx(i, j)] = 0.0;
            }
        }
        let f = ScalarField::new(g.clone(), vals).unwrap();
        let direct = div_anisotropic(sys.coefficients(), &f).unwrap();
        let x = gather_interior(&g, f.values());
        let y = apply_vec(&sys, &x);
        for j in 1..g.ny() - 1 {
            for i in 1..g.nx() - 1 {
                let kk = (j - 1) * (g.nx() - 2) + (i - 1);
                assert_eq!(
                    y[kk],
                    -direct.values()[g.idx(i, j)],
                    "operator and divergence disagree at ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn isotropic_solve_recovers_biquadratic_exactly() {
        // The five-point stencil is exact on x(1-x)y(1-y), so the discrete
        // solution matches the continuum one up to solver tolerance.
        let g = Grid2D::unit_square(20).unwrap();
        let s = ScalarField::from_fn(g.clone(), |x, y| {
            2.0 * (y * (1.0 - y) + x * (1.0 - x))
        });
        let (p, report) = solve_iso(&s, None, &SolverOptions::default()).unwrap();
        let exact = ScalarField::from_fn(g.clone(), |x, y| x * (1.0 - x) * y * (1.0 - y));
        let worst = p
            .values()
            .iter()
            .zip(exact.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "nodal error {worst}, report {report:?}");
        assert!(report.residual <= 1e-10);
    }

    #[test]
    fn anisotropic_solve_converges_at_second_order() {
        // Coefficients from m = (x, y); the manufactured source for
        // p = sin(pi x) sin(pi y) is expanded by hand below.
        let p_exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let source = |x: f64, y: f64| {
            let (sx, cx) = (PI * x).sin_cos();
            let (sy, cy) = (PI * y).sin_cos();
            PI * PI * (2.0 + x * x + y * y) * sx * sy
                - 2.0 * x * y * PI * PI * cx * cy
                - 3.0 * x * PI * cx * sy
                - 3.0 * y * PI * sx * cy
        };
        let mut errs = Vec::new();
        for cells in [16usize, 32, 64] {
            let g = Grid2D::unit_square(cells).unwrap();
            let m = VectorField2::from_fns(g.clone(), |x, _| x, |_, y| y);
            let s = ScalarField::from_fn(g.clone(), source);
            let (p, _) = solve_pressure(&m, &s, None, &SolverOptions::default()).unwrap();
            let mut err = ScalarField::zeros(g.clone());
            for (i, j) in g.iter_nodes() {
                let e = p.at(i, j) - p_exact(g.x(i), g.y(j));
                err.set(i, j, e);
            }
            errs.push(lp_norm(&err, 2.0, None).unwrap());
        }
        for win in errs.windows(2) {
            let ratio = win[0] / win[1];
            assert!(
                (3.5..4.6).contains(&ratio),
                "L2 error ratio {ratio}; errors {errs:?}"
            );
        }
    }

    #[test]
    fn trace_source_consistent_on_solved_pressure() {
        // On a discrete solution, w = -(div A . grad p + s) and the trace
        // A : hess p approximate the same continuum quantity; their gap
        // shrinks at second order away from the boundary.
        let source = |x: f64, y: f64| {
            let (sx, cx) = (PI * x).sin_cos();
            let (sy, cy) = (PI * y).sin_cos();
            PI * PI * (2.0 + x * x + y * y) * sx * sy
                - 2.0 * x * y * PI * PI * cx * cy
                - 3.0 * x * PI * cx * sy
                - 3.0 * y * PI * sx * cy
        };
        let mut gaps = Vec::new();
        for cells in [32usize, 64] {
            let g = Grid2D::unit_square(cells).unwrap();
            let m = VectorField2::from_fns(g.clone(), |x, _| x, |_, y| y);
            let s = ScalarField::from_fn(g.clone(), source);
            let (p, _) = solve_pressure(&m, &s, None, &SolverOptions::default()).unwrap();
            let a = conductivity(&m);
            let w = crate::model::compute_w(&a, &gradient(&p), &s).unwrap();
            let hess = crate::grid::hessian(&p);
            let mut gap = 0.0f64;
            for j in 2..g.ny() - 2 {
                for i in 2..g.nx() - 2 {
                    let k = g.idx(i, j);
                    let trace = a.a11()[k] * hess.a11()[k]
                        + 2.0 * a.a12()[k] * hess.a12()[k]
                        + a.a22()[k] * hess.a22()[k];
                    gap = gap.max((w.values()[k] - trace).abs());
                }
            }
            gaps.push(gap);
        }
        let ratio = gaps[0] / gaps[1];
        assert!(
            (2.5..6.0).contains(&ratio),
            "trace gap ratio {ratio}; gaps {gaps:?}"
        );
    }

    #[test]
    fn energy_identity_between_source_and_gradient() {
        // On a solution, the quadratic form of the gradient matches the
        // work of the source: int A grad p . grad p = int s p, up to
        // quadrature error that shrinks under refinement.
        let mut defects = Vec::new();
        for cells in [32usize, 64] {
            let g = Grid2D::unit_square(cells).unwrap();
            let m = VectorField2::from_fns(
                g.clone(),
                |x, y| 0.8 * (PI * x).sin() * (2.0 * PI * y).sin(),
                |x, y| 0.6 * (2.0 * PI * x).sin() * (PI * y).sin(),
            );
            let s = ScalarField::from_fn(g.clone(), |x, y| {
                25.0 * (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / (2.0 * 0.15 * 0.15)).exp()
            });
            let (p, _) = solve_pressure(&m, &s, None, &SolverOptions::default()).unwrap();
            let a = conductivity(&m);
            let gp = gradient(&p);
            let flux = a.apply(&gp).unwrap();
            let energy_density = ScalarField::new(
                g.clone(),
                flux.c1()
                    .iter()
                    .zip(flux.c2())
                    .zip(gp.c1().iter().zip(gp.c2()))
                    .map(|((f1, f2), (g1, g2))| f1 * g1 + f2 * g2)
                    .collect(),
            )
            .unwrap();
            let work_density = ScalarField::new(
                g.clone(),
                s.values()
                    .iter()
                    .zip(p.values())
                    .map(|(a, b)| a * b)
                    .collect(),
            )
            .unwrap();
            let lhs = integrate(&energy_density, None).unwrap();
            let rhs = integrate(&work_density, None).unwrap();
            assert!(rhs > 0.0);
            defects.push((lhs - rhs).abs() / rhs);
        }
        assert!(
            defects[0] < 5e-2,
            "coarse energy defect too large: {defects:?}"
        );
        assert!(
            defects[1] < defects[0] / 2.0,
            "energy defect must shrink under refinement: {defects:?}"
        );
    }

    #[test]
    fn positive_source_gives_positive_solution() {
        let g = Grid2D::unit_square(32).unwrap();
        let s = ScalarField::from_fn(g.clone(), |x, y| {
            25.0 * (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / (2.0 * 0.15 * 0.15)).exp()
        });
        let (p, _) = solve_iso(&s, None, &SolverOptions::default()).unwrap();
        let max = lp_norm(&p, f64::INFINITY, None).unwrap();
        assert!(max > 0.0);
        for (i, j) in g.iter_nodes() {
            assert!(
                p.at(i, j) >= -1e-12 * max,
                "interior minimum principle violated at ({i}, {j}): {}",
                p.at(i, j)
            );
        }
    }

    #[test]
    fn solution_inherits_diagonal_symmetry() {
        // Data symmetric under (x, y) -> (y, x) on a square grid must give
        // a symmetric solution; this pins the index conventions.
        let g = Grid2D::unit_square(24).unwrap();
        let m = VectorField2::from_fns(
            g.clone(),
            |x, y| 0.5 * (PI * x).sin() * (PI * y).sin(),
            |x, y| 0.5 * (PI * x).sin() * (PI * y).sin(),
        );
        let s = ScalarField::from_fn(g.clone(), |x, y| {
            25.0 * (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / (2.0 * 0.15 * 0.15)).exp()
        });
        let (p, _) = solve_pressure(&m, &s, None, &SolverOptions::default()).unwrap();
        let mut worst = 0.0f64;
        for (i, j) in g.iter_nodes() {
            worst = worst.max((p.at(i, j) - p.at(j, i)).abs());
        }
        let scale = lp_norm(&p, f64::INFINITY, None).unwrap();
        assert!(worst <= 1e-8 * scale, "asymmetry {worst} vs scale {scale}");
    }

    #[test]
    fn warm_start_and_edge_cases() {
        let g = Grid2D::unit_square(32).unwrap();
        let s = ScalarField::from_fn(g.clone(), |x, y| {
            (PI * x).sin() * (2.0 * PI * y).sin() + 0.5
        });
        let opts = SolverOptions::default();
        let (p, cold) = solve_iso(&s, None, &opts).unwrap();
        let s2 = s.map(|v| v * 1.01);
        let (_, warm) = solve_iso(&s2, Some(&p), &opts).unwrap();
        let (_, cold2) = solve_iso(&s2, None, &opts).unwrap();
        assert!(
            warm.iters < cold2.iters,
            "warm start {} should beat cold start {}",
            warm.iters,
            cold2.iters
        );
        assert!(cold.iters > 0);

        // Zero right-hand side short-circuits.
        let zero = ScalarField::zeros(g.clone());
        let (pz, rz) = solve_iso(&zero, None, &opts).unwrap();
        assert!(pz.values().iter().all(|&v| v == 0.0));
        assert_eq!(rz.iters, 0);

        // An impossible iteration budget reports a stall with history.
        let tight = SolverOptions {
            rel_tol: 1e-10,
            max_iters: 2,
        };
        match solve_iso(&s, None, &tight) {
            Err(Error::SolverStalled { iters, history, .. }) => {
                assert_eq!(iters, 2);
                assert!(!history.is_empty());
            }
            other => panic!("expected stall, got {other:?}"),
        }
    }

    #[test]
    fn helmholtz_solve_matches_eigenvalue_relation() {
        // sin(a pi x) sin(b pi y) is an exact eigenfunction of the discrete
        // Laplacian, so (I - sigma lap) u = lambda u with a closed-form
        // lambda; the solve must invert that relation to solver tolerance.
        let g = Grid2D::unit_square(16).unwrap();
        let (h, sigma) = (g.hx(), 0.01);
        let (a, b) = (2.0, 3.0);
        let mu = (4.0 / (h * h)) * ((a * PI * h / 2.0).sin().powi(2))
            + (4.0 / (h * h)) * ((b * PI * h / 2.0).sin().powi(2));
        let lambda = 1.0 + sigma * mu;
        let u = ScalarField::from_fn(g.clone(), |x, y| {
            (a * PI * x).sin() * (b * PI * y).sin()
        });
        let rhs = u.map(|v| lambda * v);
        let sys = HelmholtzSystem::new(g.clone(), sigma).unwrap();
        let (sol, _) = solve(&sys, &rhs, None, &SolverOptions::default()).unwrap();
        let worst = sol
            .values()
            .iter()
            .zip(u.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "eigen relation residual {worst}");
    }

    #[test]
    fn initial_pressure_solve() {
        let g = Grid2D::unit_square(24).unwrap();
        let opts = SolverOptions::default();
        // Zero source gives the zero solution and zero gradient bound.
        let m0 = VectorField2::from_fns(
            g.clone(),
            |x, y| 0.5 * (PI * x).sin() * (PI * y).sin(),
            |x, y| -0.5 * (PI * x).sin() * (PI * y).sin(),
        )
        .zeroed_boundary();
        let zero = ScalarField::zeros(g.clone());
        let (p0, sup, _) = solve_p0(&m0, &zero, &opts).unwrap();
        assert!(p0.values().iter().all(|&v| v == 0.0));
        assert_eq!(sup, 0.0);
        // With m0 = 0 the solve agrees with the isotropic one.
        let s = ScalarField::from_fn(g.clone(), |x, y| {
            (PI * x).sin() * (PI * y).sin()
        });
        let (pa, sup_a, _) = solve_p0(&VectorField2::zeros(g.clone()), &s, &opts).unwrap();
        let (pb, _) = solve_iso(&s, None, &opts).unwrap();
        let diff = pa
            .values()
            .iter()
            .zip(pb.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
        assert!(sup_a > 0.0);
        // Boundary-supported m0 is rejected.
        let bad = VectorField2::from_fns(g.clone(), |_, _| 1.0, |_, _| 0.0);
        assert!(solve_p0(&bad, &s, &opts).is_err());
    }

    #[test]
    fn solution_respects_x_reflection() {
        // Reflecting the data across x = 1/2 (with the sign flip on the
        // first vector component) must reflect the solution.
        let g = Grid2D::unit_square(20).unwrap();
        let m1 = |x: f64, y: f64| 0.7 * (PI * x).sin() * (2.0 * PI * y).sin() * x;
        let m2 = |x: f64, y: f64| 0.4 * (2.0 * PI * x).sin() * (PI * y).sin();
        let src = |x: f64, y: f64| (1.0 + x) * (PI * y).sin() * (PI * x).sin();
        let opts = SolverOptions::default();
        let m = VectorField2::from_fns(g.clone(), m1, m2);
        let s = ScalarField::from_fn(g.clone(), src);
        let (p, _) = solve_pressure(&m, &s, None, &opts).unwrap();
        let mr = VectorField2::from_fns(
            g.clone(),
            move |x, y| -m1(1.0 - x, y),
            move |x, y| m2(1.0 - x, y),
        );
        let sr = ScalarField::from_fn(g.clone(), move |x, y| src(1.0 - x, y));
        let (pr, _) = solve_pressure(&mr, &sr, None, &opts).unwrap();
        let scale = lp_norm(&p, f64::INFINITY, None).unwrap();
        let mut worst = 0.0f64;
        for (i, j) in g.iter_nodes() {
            worst = worst.max((pr.at(i, j) - p.at(g.nx() - 1 - i, j)).abs());
        }
        assert!(
            worst <= 1e-8 * scale,
            "reflection defect {worst} vs scale {scale}"
        );
    }

    #[test]
    fn rejects_bad_coefficients() {
        let g = Grid2D::unit_square(6).unwrap();
        let n = g.n_nodes();
        let a = Matrix2Field::full(
            g.clone(),
            vec![1.0; n],
            vec![0.1; n],
            vec![0.2; n],
            vec![1.0; n],
        )
        .unwrap();
        assert!(matches!(
            PressureSystem::new(a),
            Err(Error::NonSymmetricMatrix)
        ));
        // Indefinite symmetric coefficients are rejected too.
        let a = Matrix2Field::symmetric(g.clone(), vec![1.0; n], vec![2.0; n], vec![1.0; n])
            .unwrap();
        assert!(PressureSystem::new(a).is_err());
        assert!(HelmholtzSystem::new(g, -0.5).is_err());
    }
}
