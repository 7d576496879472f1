//! Verification battery for the derived interior machinery.
//!
//! Everything here cross-checks two independent routes to the same
//! quantity: closed-form evaluators of manufactured states against the
//! discrete operators, pointwise algebraic identities of the Hessian
//! reconstruction, weak residuals of the derived equations for `v` and
//! `ln v`, the level-set truncation profile, and the recursive-sequence
//! convergence lemma.

use crate::elliptic::{solve_pressure, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{gradient, lp_norm, Grid2D, ScalarField, VectorField2};
use crate::model::{AuxFields, Params, State};
use serde::Serialize;

// ---------------------------------------------------------------------------
// Manufactured states
// ---------------------------------------------------------------------------

/// A smooth state `(p*, m*)` with closed-form derivatives, plus the induced
/// source `s* = -div(A(m*) grad p*)` making the pressure equation exact.
#[derive(Clone, Copy)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub p: fn(f64, f64) -> f64,
    /// `(p_x, p_y)`
    pub grad_p: fn(f64, f64) -> (f64, f64),
    /// `(p_xx, p_xy, p_yy)`
    pub hess_p: fn(f64, f64) -> (f64, f64, f64),
    pub m: fn(f64, f64) -> (f64, f64),
    /// `(dm1/dx, dm1/dy, dm2/dx, dm2/dy)`
    pub grad_m: fn(f64, f64) -> (f64, f64, f64, f64),
    /// Componentwise Laplacian of `m`, when available (used by the coupled
    /// step row of the convergence table).
    pub lap_m: Option<fn(f64, f64) -> (f64, f64)>,
    /// Box `(x_lo, y_lo, x_hi, y_hi)` on which `v* >= v_floor`.
    pub v_box: (f64, f64, f64, f64),
    pub v_floor: f64,
    /// Whether `p*` and `m*` vanish on the unit-square boundary (required
    /// for solver-based rows).
    pub boundary_compatible: bool,
}

/// Which `w` enters the derived coefficients: the trace `A : hess p`
/// (equivalently, the consistent choice when the source is the induced
/// one), or the value obtained by dropping the source entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceChoice {
    Induced,
    Zero,
}

/// Which derived equation the weak residual tests: the one for `v` (with
/// `1/v` weights) or the one for `ln v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualForm {
    V,
    LogV,
}

impl ManufacturedCase {
    pub fn default_trig() -> Self {
        use std::f64::consts::PI;
        ManufacturedCase {
            name: "trig",
            p: |x, y| (PI * x).sin() * (PI * y).sin(),
            grad_p: |x, y| {
                (
                    PI * (PI * x).cos() * (PI * y).sin(),
                    PI * (PI * x).sin() * (PI * y).cos(),
                )
            },
            hess_p: |x, y| {
                let pi2 = PI * PI;
                (
                    -pi2 * (PI * x).sin() * (PI * y).sin(),
                    pi2 * (PI * x).cos() * (PI * y).cos(),
                    -pi2 * (PI * x).sin() * (PI * y).sin(),
                )
            },
            m: |x, y| {
                (
                    0.8 * (PI * x).sin() * (2.0 * PI * y).sin(),
                    0.6 * (2.0 * PI * x).sin() * (PI * y).sin(),
                )
            },
            grad_m: |x, y| {
                (
                    0.8 * PI * (PI * x).cos() * (2.0 * PI * y).sin(),
                    1.6 * PI * (PI * x).sin() * (2.0 * PI * y).cos(),
                    1.2 * PI * (2.0 * PI * x).cos() * (PI * y).sin(),
                    0.6 * PI * (2.0 * PI * x).sin() * (PI * y).cos(),
                )
            },
            lap_m: Some(|x, y| {
                let k = -5.0 * PI * PI;
                (
                    k * 0.8 * (PI * x).sin() * (2.0 * PI * y).sin(),
                    k * 0.6 * (2.0 * PI * x).sin() * (PI * y).sin(),
                )
            }),
            v_box: (0.15, 0.15, 0.45, 0.45),
            v_floor: 1e-2,
            boundary_compatible: true,
        }
    }

    /// Quadratic pressure with constant conductance: the Hessian is
    /// constant and every identity check is exact arithmetic.
    pub fn quadratic() -> Self {
        ManufacturedCase {
            name: "quadratic",
            p: |x, y| 0.5 * x * x + 0.3 * x * y + 0.7 * y * y + 0.2 * x - 0.1 * y,
            grad_p: |x, y| (x + 0.3 * y + 0.2, 0.3 * x + 1.4 * y - 0.1),
            hess_p: |_, _| (1.0, 0.3, 1.4),
            m: |_, _| (0.6, -0.4),
            grad_m: |_, _| (0.0, 0.0, 0.0, 0.0),
            lap_m: Some(|_, _| (0.0, 0.0)),
            v_box: (0.1, 0.1, 0.9, 0.9),
            v_floor: 1e-2,
            boundary_compatible: false,
        }
    }

    /// One-dimensional structure `m = (m1(x), 0)`, `p = p(x)`: every
    /// derived field depends on `x` alone, so weak residuals factor into
    /// one-dimensional integrals.
    pub fn one_d() -> Self {
        use std::f64::consts::PI;
        ManufacturedCase {
            name: "one_d",
            p: |x, _| (0.5 * PI * x).sin(),
            grad_p: |x, _| (0.5 * PI * (0.5 * PI * x).cos(), 0.0),
            hess_p: |x, _| (-0.25 * PI * PI * (0.5 * PI * x).sin(), 0.0, 0.0),
            m: |x, _| (0.9 * (PI * x).sin(), 0.0),
            grad_m: |x, _| (0.9 * PI * (PI * x).cos(), 0.0, 0.0, 0.0),
            lap_m: None,
            v_box: (0.05, 0.05, 0.8, 0.95),
            v_floor: 1e-2,
            boundary_compatible: false,
        }
    }

    /// Constant conductance and linear pressure: all derived coefficient
    /// fields vanish identically.
    pub fn constant_linear() -> Self {
        ManufacturedCase {
            name: "constant_linear",
            p: |x, y| 2.0 * x + y - 1.5,
            grad_p: |_, _| (2.0, 1.0),
            hess_p: |_, _| (0.0, 0.0, 0.0),
            m: |_, _| (0.7, -0.5),
            grad_m: |_, _| (0.0, 0.0, 0.0, 0.0),
            lap_m: Some(|_, _| (0.0, 0.0)),
            v_box: (0.05, 0.05, 0.95, 0.95),
            v_floor: 1e-2,
            boundary_compatible: false,
        }
    }

    /// All analytic derived quantities at one point.
    pub fn at(&self, x: f64, y: f64) -> CasePoint {
        let (p1, p2) = (self.grad_p)(x, y);
        let (p11, p12, p22) = (self.hess_p)(x, y);
        let (m1, m2) = (self.m)(x, y);
        let (dm1x, dm1y, dm2x, dm2y) = (self.grad_m)(x, y);

        let a11 = 1.0 + m1 * m1;
        let a12 = m1 * m2;
        let a22 = 1.0 + m2 * m2;
        let det_a = 1.0 + m1 * m1 + m2 * m2;

        let da11 = (2.0 * m1 * dm1x, 2.0 * m1 * dm1y);
        let da12 = (m1 * dm2x + m2 * dm1x, m1 * dm2y + m2 * dm1y);
        let da22 = (2.0 * m2 * dm2x, 2.0 * m2 * dm2y);
        let dd1 = 2.0 * (m1 * dm1x + m2 * dm2x);
        let dd2 = 2.0 * (m1 * dm1y + m2 * dm2y);

        let nu1 = a11 * p1 + a12 * p2;
        let nu2 = a12 * p1 + a22 * p2;
        let md = m1 * p1 + m2 * p2;
        let v = p1 * p1 + p2 * p2 + md * md;

        let w_trace = a11 * p11 + 2.0 * a12 * p12 + a22 * p22;
        let div1 = da11.0 + da12.1;
        let div2 = da12.0 + da22.1;
        let w_nosource = -(div1 * p1 + div2 * p2);
        let s_induced = -(w_trace + div1 * p1 + div2 * p2);

        let e1 = 2.0 * (p11 * nu1 + p12 * nu2);
        let e2 = 2.0 * (p12 * nu1 + p22 * nu2);

        let q1 = da11.0 * p1 * p1 + 2.0 * da12.0 * p1 * p2 + da22.0 * p2 * p2;
        let q2 = da11.1 * p1 * p1 + 2.0 * da12.1 * p1 * p2 + da22.1 * p2 * p2;
        let (g1, g2) = if v > 0.0 { (q1 / v, q2 / v) } else { (0.0, 0.0) };
        let ag1 = a11 * g1 + a12 * g2;
        let ag2 = a12 * g1 + a22 * g2;

        let cross = a11 * a22 - 2.0 * a12 * a12;
        let a1 = [[a11 * nu1, a12 * a11 * p1 - cross * p2], [a11 * nu2, a22 * nu1]];
        let a2 = [
            [a11 * nu2, a22 * nu1],
            [-cross * p1 + a12 * a22 * p2, a22 * nu2],
        ];
        let a3 = [[-nu1 * nu1, -nu1 * nu2], [-nu1 * nu2, -nu2 * nu2]];

        let (h1, h2) = if v > 0.0 {
            let row1 = (p1 * a1[0][0] + p2 * a1[1][0], p1 * a1[0][1] + p2 * a1[1][1]);
            let row2 = (p1 * a2[0][0] + p2 * a2[1][0], p1 * a2[0][1] + p2 * a2[1][1]);
            let inv = 1.0 / (det_a * v);
            (
                (row1.0 * dd1 + row1.1 * dd2) * inv - ag1,
                (row2.0 * dd1 + row2.1 * dd2) * inv - ag2,
            )
        } else {
            (0.0, 0.0)
        };

        CasePoint {
            p1,
            p2,
            p11,
            p12,
            p22,
            m1,
            m2,
            a11,
            a12,
            a22,
            det_a,
            nu1,
            nu2,
            v,
            w_trace,
            w_nosource,
            s_induced,
            e1,
            e2,
            g1,
            g2,
            ag1,
            ag2,
            dd1,
            dd2,
            h1,
            h2,
            a1,
            a2,
            a3,
        }
    }

    /// Induced source making `-div(A grad p) = s` exact.
    pub fn source(&self, x: f64, y: f64) -> f64 {
        self.at(x, y).s_induced
    }

    /// Sample `(m, p, s)` on a grid. For boundary-compatible cases the
    /// boundary ring of `m` and `p` is set to exactly zero.
    pub fn fields(&self, grid: &Grid2D) -> (VectorField2, ScalarField, ScalarField) {
        let m = VectorField2::from_fns(grid.clone(), |x, y| (self.m)(x, y).0, |x, y| {
            (self.m)(x, y).1
        });
        let p = ScalarField::from_fn(grid.clone(), self.p);
        let s = ScalarField::from_fn(grid.clone(), |x, y| self.source(x, y));
        if self.boundary_compatible {
            (m.zeroed_boundary(), p.zeroed_boundary(), s)
        } else {
            (m, p, s)
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.v_box;
        x >= x0 - 1e-12 && x <= x1 + 1e-12 && y >= y0 - 1e-12 && y <= y1 + 1e-12
    }
}

/// Closed-form values of every derived quantity at a point.
#[derive(Debug, Clone, Copy)]
pub struct CasePoint {
    pub p1: f64,
    pub p2: f64,
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
    pub m1: f64,
    pub m2: f64,
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
    pub det_a: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub v: f64,
    /// `A : hess p`
    pub w_trace: f64,
    /// `-(div A . grad p)`: the trace source with `s` dropped
    pub w_nosource: f64,
    pub s_induced: f64,
    pub e1: f64,
    pub e2: f64,
    pub g1: f64,
    pub g2: f64,
    /// `A G`
    pub ag1: f64,
    pub ag2: f64,
    /// `grad det A`
    pub dd1: f64,
    pub dd2: f64,
    /// Drift coefficients of the derived equation
    pub h1: f64,
    pub h2: f64,
    pub a1: [[f64; 2]; 2],
    pub a2: [[f64; 2]; 2],
    pub a3: [[f64; 2]; 2],
}

impl CasePoint {
    pub fn w(&self, mode: SourceChoice) -> f64 {
        match mode {
            SourceChoice::Induced => self.w_trace,
            SourceChoice::Zero => self.w_nosource,
        }
    }

    /// Flux correction for a given trace source value.
    pub fn k_flux(&self, w: f64) -> (f64, f64) {
        (
            self.ag1 + 2.0 * w * self.nu1 / self.v,
            self.ag2 + 2.0 * w * self.nu2 / self.v,
        )
    }

    /// Zero-order source for a given trace source value.
    pub fn h_source(&self, w: f64) -> f64 {
        let b1 = 2.0 * w * self.nu1 / self.v - self.h1;
        let b2 = 2.0 * w * self.nu2 / self.v - self.h2;
        let a3gp1 = self.a3[0][0] * self.p1 + self.a3[0][1] * self.p2;
        let a3gp2 = self.a3[1][0] * self.p1 + self.a3[1][1] * self.p2;
        b1 * self.g1
            + b2 * self.g2
            + (2.0 * w / (self.det_a * self.v * self.v)) * (a3gp1 * self.dd1 + a3gp2 * self.dd2)
    }

    /// The matrix `[[-p_yy, p_xy], [p_xy, -p_xx]]` reconstructed from the
    /// two auxiliary matrices and the rank-one correction, as
    /// `(A1 E, A2 E) / (2 det A v) + (w / (det A v)) A3` with columns
    /// `A1 E` and `A2 E`. Returns `(top-left, top-right, bottom-left,
    /// bottom-right)`.
    pub fn adjugate_representation(&self, w: f64) -> (f64, f64, f64, f64) {
        let a1e = (
            self.a1[0][0] * self.e1 + self.a1[0][1] * self.e2,
            self.a1[1][0] * self.e1 + self.a1[1][1] * self.e2,
        );
        let a2e = (
            self.a2[0][0] * self.e1 + self.a2[0][1] * self.e2,
            self.a2[1][0] * self.e1 + self.a2[1][1] * self.e2,
        );
        let inv2 = 1.0 / (2.0 * self.det_a * self.v);
        let invw = w / (self.det_a * self.v);
        (
            a1e.0 * inv2 + invw * self.a3[0][0],
            a2e.0 * inv2 + invw * self.a3[0][1],
            a1e.1 * inv2 + invw * self.a3[1][0],
            a2e.1 * inv2 + invw * self.a3[1][1],
        )
    }
}

// ---------------------------------------------------------------------------
// Pointwise identity checks
// ---------------------------------------------------------------------------

fn sample_points(
    case: &ManufacturedCase,
    n: usize,
    seed: u64,
    respect_floor: bool,
) -> Vec<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pts.len() < n && attempts < 1000 * n {
        attempts += 1;
        let x: f64 = rng.gen_range(0.0..1.0);
        let y: f64 = rng.gen_range(0.0..1.0);
        if respect_floor && case.at(x, y).v < case.v_floor {
            continue;
        }
        pts.push((x, y));
    }
    pts
}

/// Max relative defect of `A (hess p) A = w A + det(A) M` over sampled
/// points, with `M = [[-p_yy, p_xy], [p_xy, -p_xx]]` and `w = A : hess p`.
/// Pure closed-form 2x2 arithmetic; the defect is rounding noise.
pub fn hessian_identity_check(case: &ManufacturedCase, samples: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in sample_points(case, samples, seed, false) {
        let c = case.at(x, y);
        let a = [[c.a11, c.a12], [c.a12, c.a22]];
        let hess = [[c.p11, c.p12], [c.p12, c.p22]];
        // lhs = A hess A
        let mut ah = [[0.0; 2]; 2];
        for (i, row) in ah.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = a[i][0] * hess[0][j] + a[i][1] * hess[1][j];
            }
        }
        let mut lhs = [[0.0; 2]; 2];
        for (i, row) in lhs.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = ah[i][0] * a[0][j] + ah[i][1] * a[1][j];
            }
        }
        let m_adj = [[-c.p22, c.p12], [c.p12, -c.p11]];
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let rhs = c.w_trace * a[i][j] + c.det_a * m_adj[i][j];
                num += (lhs[i][j] - rhs) * (lhs[i][j] - rhs);
                den += lhs[i][j] * lhs[i][j];
            }
        }
        worst = worst.max((num / den.max(1e-30)).sqrt());
    }
    worst
}

/// Results of the three-equation reconstruction checks at sampled points
/// with `v >= v_floor`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CramerReport {
    /// `det E = 4 det(A) v`, relative.
    pub det_rel_error: f64,
    /// Second derivatives reconstructed by the closed-form solution of the
    /// three-equation system, against the analytic Hessian; relative.
    pub reconstruction_rel_error: f64,
    /// Matrix-form reconstruction through the auxiliary matrices; relative.
    pub representation_rel_error: f64,
    /// Residual of the second equation with the second-derivative factor
    /// restored: `2 nu1 p_xy + 2 nu2 p_yy - e2`.
    pub row2_restored_residual: f64,
    /// Residual of the second equation as printed in the source derivation,
    /// which omits that factor: `2 nu1 p_xy + 2 nu2 - e2`. Large in
    /// general; recorded for the report, not asserted small.
    pub row2_printed_residual: f64,
    pub samples: usize,
}

pub fn cramer_check(case: &ManufacturedCase, samples: usize, seed: u64) -> CramerReport {
    let pts = sample_points(case, samples, seed, true);
    let mut det_err = 0.0f64;
    let mut rec_err = 0.0f64;
    let mut rep_err = 0.0f64;
    let mut restored = 0.0f64;
    let mut printed = 0.0f64;
    for &(x, y) in &pts {
        let c = case.at(x, y);
        let w = c.w_trace;

        // 3x3 determinant of the system matrix, expanded numerically.
        let det_e = 2.0 * c.nu1 * (2.0 * c.nu1 * c.a22 - 2.0 * c.nu2 * 2.0 * c.a12)
            - 2.0 * c.nu2 * (-2.0 * c.nu2 * c.a11);
        let target = 4.0 * c.det_a * c.v;
        det_err = det_err.max((det_e - target).abs() / target.abs());

        let inv = 1.0 / (2.0 * c.det_a * c.v);
        let cross = c.a22 * c.a11 - 2.0 * c.a12 * c.a12;
        let r11 = inv
            * (((cross * c.p1 - c.a12 * c.a22 * c.p2) * c.e1) - c.a22 * c.nu2 * c.e2
                + 2.0 * w * c.nu2 * c.nu2);
        let r12 = inv * (c.a11 * c.nu2 * c.e1 + c.a22 * c.nu1 * c.e2 - 2.0 * w * c.nu1 * c.nu2);
        let r22 = inv
            * (-c.a11 * c.nu1 * c.e1
                + (-c.a12 * c.a11 * c.p1 + cross * c.p2) * c.e2
                + 2.0 * w * c.nu1 * c.nu1);
        let scale = (c.p11 * c.p11 + c.p12 * c.p12 + c.p22 * c.p22).sqrt().max(1e-30);
        rec_err = rec_err.max(
            ((r11 - c.p11).abs().max((r12 - c.p12).abs()).max((r22 - c.p22).abs())) / scale,
        );

        let (tl, tr, bl, br) = c.adjugate_representation(w);
        rep_err = rep_err.max(
            ((tl + c.p22).abs())
                .max((tr - c.p12).abs())
                .max((bl - c.p12).abs())
                .max((br + c.p11).abs())
                / scale,
        );

        let escale = (c.e1 * c.e1 + c.e2 * c.e2).sqrt().max(1.0);
        restored = restored
            .max((2.0 * c.nu1 * c.p12 + 2.0 * c.nu2 * c.p22 - c.e2).abs() / escale);
        printed = printed.max((2.0 * c.nu1 * c.p12 + 2.0 * c.nu2 - c.e2).abs() / escale);
    }
    CramerReport {
        det_rel_error: det_err,
        reconstruction_rel_error: rec_err,
        representation_rel_error: rep_err,
        row2_restored_residual: restored,
        row2_printed_residual: printed,
        samples: pts.len(),
    }
}

/// Sup defect of the discrete gradient of `ln v*` against the analytic
/// `G + E / v`, measured at probe points shared between a grid of `cells`
/// cells and its doubling. Probes are the coarse interior nodes with
/// `v* >= max(v_floor, 0.05)`; the higher floor keeps the log derivatives
/// bounded so the defect scales cleanly like `h^2`. Returns
/// `(coarse_error, fine_error, probes)`; the error ratio is close to 4.
pub fn log_gradient_pair(case: &ManufacturedCase, cells: usize) -> Result<(f64, f64, usize)> {
    let coarse = Grid2D::unit_square(cells)?;
    let fine = Grid2D::unit_square(2 * cells)?;
    let build = |g: &Grid2D| -> VectorField2 {
        let mut ln_v = ScalarField::zeros(g.clone());
        for (i, j) in g.iter_nodes() {
            ln_v.values_mut()[g.idx(i, j)] = case.at(g.x(i), g.y(j)).v.ln();
        }
        gradient(&ln_v)
    };
    let grad_c = build(&coarse);
    let grad_f = build(&fine);
    let floor = case.v_floor.max(0.05);
    let mut err_c = 0.0f64;
    let mut err_f = 0.0f64;
    let mut probes = 0usize;
    for j in 2..coarse.ny() - 2 {
        for i in 2..coarse.nx() - 2 {
            let c = case.at(coarse.x(i), coarse.y(j));
            if c.v < floor {
                continue;
            }
            let t1 = c.g1 + c.e1 / c.v;
            let t2 = c.g2 + c.e2 / c.v;
            let kc = coarse.idx(i, j);
            let kf = fine.idx(2 * i, 2 * j);
            err_c = err_c
                .max((grad_c.c1()[kc] - t1).abs())
                .max((grad_c.c2()[kc] - t2).abs());
            err_f = err_f
                .max((grad_f.c1()[kf] - t1).abs())
                .max((grad_f.c2()[kf] - t2).abs());
            probes += 1;
        }
    }
    if probes == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((err_c, err_f, probes))
}

// ---------------------------------------------------------------------------
// Weak residuals
// ---------------------------------------------------------------------------

/// Tensor-product smooth bump supported on
/// `[x0 - rx, x0 + rx] x [y0 - ry, y0 + ry]`.
#[derive(Debug, Clone, Copy)]
pub struct TestBump {
    pub x0: f64,
    pub y0: f64,
    pub rx: f64,
    pub ry: f64,
}

fn bump(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

fn bump_d(t: f64) -> f64 {
    if t.abs() < 1.0 {
        let u = 1.0 - t * t;
        (-1.0 / u).exp() * (-2.0 * t / (u * u))
    } else {
        0.0
    }
}

impl TestBump {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        bump((x - self.x0) / self.rx) * bump((y - self.y0) / self.ry)
    }

    pub fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        let tx = (x - self.x0) / self.rx;
        let ty = (y - self.y0) / self.ry;
        (
            bump_d(tx) / self.rx * bump(ty),
            bump(tx) * bump_d(ty) / self.ry,
        )
    }

    fn support(&self) -> (f64, f64, f64, f64) {
        (
            self.x0 - self.rx,
            self.y0 - self.ry,
            self.x0 + self.rx,
            self.y0 + self.ry,
        )
    }
}

/// Three concentric bumps at shrinking scales inside the case's
/// above-floor box.
pub fn default_bumps(case: &ManufacturedCase) -> Vec<TestBump> {
    let (x0, y0, x1, y1) = case.v_box;
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let (hx, hy) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
    [1.0, 0.75, 0.5]
        .iter()
        .map(|&s| TestBump {
            x0: cx,
            y0: cy,
            rx: s * hx,
            ry: s * hy,
        })
        .collect()
}

/// Weak residual of the chosen derived equation against one test bump,
/// assembled on an `cells`-cell grid: analytic coefficient fields, the
/// discrete gradient of the (analytic) nodal `v` or `ln v`, and trapezoid
/// quadrature. Vanishes under refinement for `SourceChoice::Induced`.
pub fn weak_residual(
    case: &ManufacturedCase,
    cells: usize,
    psi: &TestBump,
    form: ResidualForm,
    source: SourceChoice,
) -> Result<f64> {
    let (sx0, sy0, sx1, sy1) = psi.support();
    if !(case.contains(sx0, sy0) && case.contains(sx1, sy1)) {
        return Err(Error::BallOutsideDomain {
            x0: psi.x0,
            y0: psi.y0,
            radius: psi.rx.max(psi.ry),
        });
    }
    let g = Grid2D::unit_square(cells)?;

    // Nodal field whose discrete gradient enters the residual.
    let mut carrier = ScalarField::zeros(g.clone());
    for (i, j) in g.iter_nodes() {
        let v = case.at(g.x(i), g.y(j)).v;
        carrier.values_mut()[g.idx(i, j)] = match form {
            ResidualForm::V => v,
            ResidualForm::LogV => v.ln(),
        };
    }
    let grad_c = gradient(&carrier);

    let mut total = 0.0;
    for (i, j) in g.iter_nodes() {
        let (x, y) = (g.x(i), g.y(j));
        let psi_v = psi.value(x, y);
        let (psi_x, psi_y) = psi.grad(x, y);
        if psi_v == 0.0 && psi_x == 0.0 && psi_y == 0.0 {
            continue;
        }
        let c = case.at(x, y);
        if c.v < case.v_floor {
            return Err(Error::BadParameter {
                name: "v_floor",
                value: c.v,
                constraint: format!(
                    "test support must stay above the floor {}",
                    case.v_floor
                ),
            });
        }
        let w = c.w(source);
        let (k1, k2) = c.k_flux(w);
        let h = c.h_source(w);
        let k = g.idx(i, j);
        let (d1, d2) = (grad_c.c1()[k], grad_c.c2()[k]);
        let flux1 = c.a11 * d1 + c.a12 * d2;
        let flux2 = c.a12 * d1 + c.a22 * d2;
        let integrand = match form {
            ResidualForm::V => {
                (flux1 * psi_x + flux2 * psi_y) / c.v
                    + (c.h1 * d1 + c.h2 * d2) / c.v * psi_v
                    + h * psi_v
                    - (k1 * psi_x + k2 * psi_y)
            }
            ResidualForm::LogV => {
                (flux1 * psi_x + flux2 * psi_y)
                    + (c.h1 * d1 + c.h2 * d2) * psi_v
                    + h * psi_v
                    - (k1 * psi_x + k2 * psi_y)
            }
        };
        total += g.cell_weight(i, j) * integrand;
    }
    Ok(total)
}

/// Residuals of one equation form across a grid sequence, with the fitted
/// decay order of the worst bump residual.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualStudy {
    pub form: String,
    pub cells: Vec<usize>,
    /// Max `|R|` over the three default bumps at each resolution.
    pub residuals: Vec<f64>,
    pub observed_order: f64,
}

pub fn residual_study(
    case: &ManufacturedCase,
    cells: &[usize],
    form: ResidualForm,
) -> Result<ResidualStudy> {
    let bumps = default_bumps(case);
    let mut residuals = Vec::with_capacity(cells.len());
    for &n in cells {
        let mut worst = 0.0f64;
        for b in &bumps {
            worst = worst.max(weak_residual(case, n, b, form, SourceChoice::Induced)?.abs());
        }
        residuals.push(worst);
    }
    Ok(ResidualStudy {
        form: match form {
            ResidualForm::V => "v".into(),
            ResidualForm::LogV => "log_v".into(),
        },
        cells: cells.to_vec(),
        residuals: residuals.clone(),
        observed_order: order_slope(cells, &residuals),
    })
}

/// Least-squares decay order: slope of `-log2 e` against `log2 cells`.
pub fn order_slope(cells: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = cells.iter().map(|&c| (c as f64).log2()).collect();
    let ys: Vec<f64> = errors.iter().map(|&e| e.max(1e-300).log2()).collect();
    -least_squares(&xs, &ys).1
}

/// `(intercept, slope)` of the ordinary least squares line.
fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (sy / n.max(1.0), 0.0);
    }
    let slope = (n * sxy - sx * sy) / denom;
    ((sy - slope * sx) / n, slope)
}

/// Independent high-resolution evaluation of the weak residual for the
/// one-dimensionally structured case: the integral factors as
/// `(int_x grad-part + value-part dx) * (int_y psi2 dy)`, each side
/// computed by composite Simpson quadrature on the closed forms.
pub fn one_d_residual_oracle(
    case: &ManufacturedCase,
    psi: &TestBump,
    form: ResidualForm,
    source: SourceChoice,
) -> f64 {
    let fx = |x: f64| {
        let c = case.at(x, 0.5);
        let w = c.w(source);
        let (k1, _) = c.k_flux(w);
        let h = c.h_source(w);
        let vprime = c.v * c.g1 + c.e1;
        let tx = (x - psi.x0) / psi.rx;
        let psi1 = bump(tx);
        let psi1d = bump_d(tx) / psi.rx;
        match form {
            ResidualForm::V => {
                (c.a11 * vprime / c.v - k1) * psi1d + (c.h1 * vprime / c.v + h) * psi1
            }
            ResidualForm::LogV => {
                let phiprime = vprime / c.v;
                (c.a11 * phiprime - k1) * psi1d + (c.h1 * phiprime + h) * psi1
            }
        }
    };
    let fy = |y: f64| bump((y - psi.y0) / psi.ry);
    let ix = simpson(&fx, psi.x0 - psi.rx, psi.x0 + psi.rx, 4000);
    let iy = simpson(&fy, psi.y0 - psi.ry, psi.y0 + psi.ry, 4000);
    ix * iy
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

// ---------------------------------------------------------------------------
// Level-set truncation profile
// ---------------------------------------------------------------------------

pub const DEFAULT_LEVELS: usize = 40;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LevelRow {
    pub n: usize,
    /// Shrinking ball radius `R/2 + R/2^(n+1)`.
    pub radius: f64,
    /// Rising truncation level `K - K/2^(n+1)`.
    pub level: f64,
    /// Measure of the super-level set at this level inside the previous
    /// ball.
    pub measure: f64,
    /// Truncation norm `(int_ball [(sqrt v - sqrt level)+]^{2r})^{1/r}`.
    pub y: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecursionFit {
    pub c: f64,
    pub b: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeGiorgiReport {
    pub center: (f64, f64),
    pub radius: f64,
    pub r_exp: f64,
    /// Level scale `K`.
    pub k_scale: f64,
    pub k_from_formula: bool,
    /// Coefficient norms over the first super-level set.
    pub gamma_s1: f64,
    /// Same norms over the whole ball (used to close the `K` formula).
    pub gamma_ball: f64,
    pub sup_half_ball: f64,
    pub sup_bounded_by_k: bool,
    pub levels: Vec<LevelRow>,
    pub fit: Option<RecursionFit>,
    /// Final truncation norm fell below `1e-12`.
    pub converged: bool,
}

impl DeGiorgiReport {
    /// CSV rows `(n, level, measure, y)` matching [`LEVEL_CSV_HEADER`].
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.levels
            .iter()
            .map(|l| vec![l.n as f64, l.level, l.measure, l.y])
            .collect()
    }
}

pub const LEVEL_CSV_HEADER: &str = "n,k_n,s_measure,y_n";

fn ball_mask(g: &Grid2D, center: (f64, f64), radius: f64) -> Vec<bool> {
    let r2 = radius * radius + 1e-12;
    let mut mask = vec![false; g.n_nodes()];
    for (i, j) in g.iter_nodes() {
        let dx = g.x(i) - center.0;
        let dy = g.y(j) - center.1;
        mask[g.idx(i, j)] = dx * dx + dy * dy <= r2;
    }
    mask
}

fn gamma_norms(
    aux: &AuxFields,
    mask: &[bool],
    radius: f64,
    r_exp: f64,
) -> Result<f64> {
    if !mask.iter().any(|&b| b) {
        return Ok(0.0);
    }
    let q = r_exp / (r_exp - 1.0);
    let q2 = 2.0 * r_exp / (r_exp - 1.0);
    let det_norm = lp_norm(&aux.det_a, q, Some(mask))?;
    let h_mag = aux.drift.magnitude();
    let k_mag = aux.k_flux.magnitude();
    let h_norm = lp_norm(&h_mag, q2, Some(mask))?;
    let hsrc_norm = lp_norm(&aux.h_src, q, Some(mask))?;
    let k_norm = lp_norm(&k_mag, q2, Some(mask))?;
    Ok(det_norm + radius * radius * (h_norm * h_norm + hsrc_norm + k_norm * k_norm))
}

/// Level-set truncation profile of `v` on the ball `B_radius(center)`.
///
/// When `k_scale` is not given it is chosen by the closed formula
/// `K = (1/R^2) |v|_{r,B} (Gamma_B + R^{2(r-1)/r}) + 2`, which dominates
/// the scale the shrinking-ball argument needs; the recursion constants
/// `(c, b)` are then fitted from the observed levels with the derivation's
/// exponent `alpha = 1` held fixed.
pub fn de_giorgi_profile(
    aux: &AuxFields,
    center: (f64, f64),
    radius: f64,
    params: &Params,
    k_scale: Option<f64>,
    n_levels: usize,
) -> Result<DeGiorgiReport> {
    let g = aux.v.grid().clone();
    let (x_lo, y_lo) = (g.x(0), g.y(0));
    let (x_hi, y_hi) = (g.x(g.nx() - 1), g.y(g.ny() - 1));
    if !(radius > 0.0)
        || center.0 - radius < x_lo - 1e-12
        || center.0 + radius > x_hi + 1e-12
        || center.1 - radius < y_lo - 1e-12
        || center.1 + radius > y_hi + 1e-12
    {
        return Err(Error::BallOutsideDomain {
            x0: center.0,
            y0: center.1,
            radius,
        });
    }
    let ball = ball_mask(&g, center, radius);
    if !ball.iter().any(|&b| b) {
        return Err(Error::EmptyBall {
            x0: center.0,
            y0: center.1,
            radius,
        });
    }
    let r = params.r_exp;
    let gamma_ball = gamma_norms(aux, &ball, radius, r)?;

    let k = match k_scale {
        Some(k) => {
            if !(k >= 2.0) {
                return Err(Error::BadParameter {
                    name: "k_scale",
                    value: k,
                    constraint: "level scale must be at least 2".into(),
                });
            }
            k
        }
        None => {
            let v_norm = lp_norm(&aux.v, r, Some(&ball))?;
            (v_norm / (radius * radius)) * (gamma_ball + radius.powf(2.0 * (r - 1.0) / r))
                + 2.0
        }
    };

    // First super-level set: nodes of the full ball with v >= K_1.
    let k1 = k - k / 4.0;
    let mut s1 = ball.clone();
    for (idx, keep) in s1.iter_mut().enumerate() {
        *keep = *keep && aux.v.values()[idx] >= k1;
    }
    let gamma_s1 = gamma_norms(aux, &s1, radius, r)?;

    let mut levels = Vec::with_capacity(n_levels + 1);
    let mut prev_mask = ball.clone();
    for n in 0..=n_levels {
        let pow = (2.0f64).powi(n as i32 + 1);
        let rn = radius / 2.0 + radius / pow;
        let kn = k - k / pow;
        let mask_n = ball_mask(&g, center, rn);

        // y_n over the current ball.
        let sqrt_kn = kn.sqrt();
        let mut acc = 0.0;
        for (idx, &inside) in mask_n.iter().enumerate() {
            if !inside {
                continue;
            }
            let excess = aux.v.values()[idx].max(0.0).sqrt() - sqrt_kn;
            if excess > 0.0 {
                let (i, j) = g.pos(idx);
                acc += g.cell_weight(i, j) * excess.powf(2.0 * r);
            }
        }
        let y = if acc == 0.0 { 0.0 } else { acc.powf(1.0 / r) };

        // Super-level measure inside the previous ball.
        let mut measure = 0.0;
        for (idx, &inside) in prev_mask.iter().enumerate() {
            if inside && aux.v.values()[idx] >= kn {
                let (i, j) = g.pos(idx);
                measure += g.cell_weight(i, j);
            }
        }

        levels.push(LevelRow {
            n,
            radius: rn,
            level: kn,
            measure,
            y,
        });
        prev_mask = mask_n;
    }

    // Fit y_{n+1} = c b^n y_n^2 by least squares in log space.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for win in levels.windows(2) {
        let (y0, y1) = (win[0].y, win[1].y);
        if y0 > 1e-250 && y1 > 1e-250 {
            xs.push(win[0].n as f64);
            ys.push((y1 / (y0 * y0)).ln());
        }
    }
    let fit = if xs.len() >= 2 {
        let (intercept, slope) = least_squares(&xs, &ys);
        Some(RecursionFit {
            c: intercept.exp(),
            b: slope.exp(),
            alpha: 1.0,
        })
    } else {
        None
    };

    let half = ball_mask(&g, center, radius / 2.0);
    let mut sup_half = 0.0f64;
    for (idx, &inside) in half.iter().enumerate() {
        if inside {
            sup_half = sup_half.max(aux.v.values()[idx]);
        }
    }

    let converged = levels.last().map(|l| l.y < 1e-12).unwrap_or(false);
    Ok(DeGiorgiReport {
        center,
        radius,
        r_exp: r,
        k_scale: k,
        k_from_formula: k_scale.is_none(),
        gamma_s1,
        gamma_ball,
        sup_half_ball: sup_half,
        sup_bounded_by_k: sup_half <= k,
        levels,
        fit,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Recursive sequence lemma
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct YnbReport {
    pub values: Vec<f64>,
    pub converges: bool,
    pub diverges: bool,
    /// Sufficient smallness threshold `c^(-1/alpha) b^(-1/alpha^2)`.
    pub threshold: f64,
    pub below_threshold: bool,
}

/// Iterate `y_{n+1} = c b^n y_n^{1+alpha}` as an equality and report
/// whether the sequence collapses to zero. Starting at or below the
/// threshold is sufficient for collapse; above it the behavior is not
/// asserted either way.
pub fn ynb_sequence(c: f64, b: f64, alpha: f64, y0: f64, n: usize) -> Result<YnbReport> {
    for (name, value, ok, constraint) in [
        ("c", c, c > 0.0, "c > 0"),
        ("b", b, b > 1.0, "b > 1"),
        ("alpha", alpha, alpha > 0.0, "alpha > 0"),
        ("y0", y0, y0 >= 0.0, "y0 >= 0"),
    ] {
        if !ok || !value.is_finite() {
            return Err(Error::BadParameter {
                name,
                value,
                constraint: constraint.into(),
            });
        }
    }
    let threshold = c.powf(-1.0 / alpha) * b.powf(-1.0 / (alpha * alpha));
    let mut values = vec![y0];
    let mut y = y0;
    for k in 0..n {
        y = c * b.powi(k as i32) * y.powf(1.0 + alpha);
        values.push(y);
        if !y.is_finite() || y > 1e60 || y < 1e-200 {
            break;
        }
    }
    // The recursion is dichotomous: it either collapses (doubly
    // exponentially below the threshold, geometrically like b^-n exactly
    // at it) or blows up doubly exponentially. A small final value can
    // therefore be read as collapse.
    let last = *values.last().expect("nonempty");
    Ok(YnbReport {
        converges: last < 1e-12,
        diverges: !last.is_finite() || last > 1e60,
        threshold,
        below_threshold: y0 <= threshold,
        values,
    })
}

// ---------------------------------------------------------------------------
// Operator convergence table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MmsRow {
    pub operator: String,
    pub cells: Vec<usize>,
    /// Weighted L2 error at each resolution.
    pub errors: Vec<f64>,
    /// None when every error sits at rounding level.
    pub observed_order: Option<f64>,
    /// Largest relative linear-solver residual, for solver-backed rows.
    pub max_solver_residual: Option<f64>,
}

fn finish_row(
    operator: &str,
    cells: &[usize],
    errors: Vec<f64>,
    max_solver_residual: Option<f64>,
) -> MmsRow {
    let observed_order = if errors.iter().all(|&e| e < 1e-11) {
        None
    } else {
        Some(order_slope(cells, &errors))
    };
    MmsRow {
        operator: operator.into(),
        cells: cells.to_vec(),
        errors,
        observed_order,
        max_solver_residual,
    }
}

/// Convergence table of the discrete operators against the closed forms
/// of a manufactured case: gradient, Hessian, divergence form, pressure
/// solve, and one coupled implicit-explicit step (solver rows only for
/// boundary-compatible cases).
pub fn mms_convergence(
    case: &ManufacturedCase,
    cells: &[usize],
    solver: &SolverOptions,
) -> Result<Vec<MmsRow>> {
    let mut grad_errs = Vec::new();
    let mut hess_errs = Vec::new();
    let mut div_errs = Vec::new();
    let mut solve_errs = Vec::new();
    let mut step_errs = Vec::new();
    let mut worst_res = 0.0f64;

    for &n in cells {
        let g = Grid2D::unit_square(n)?;
        let (m, p, s) = case.fields(&g);
        let a = crate::model::conductivity(&m);

        let grad = gradient(&p);
        let hess = crate::grid::hessian(&p);
        let div = crate::grid::div_anisotropic(&a, &p)?;

        let mut grad_sq = ScalarField::zeros(g.clone());
        let mut hess_sq = ScalarField::zeros(g.clone());
        let mut div_sq = ScalarField::zeros(g.clone());
        for (i, j) in g.iter_nodes() {
            let k = g.idx(i, j);
            let c = case.at(g.x(i), g.y(j));
            let e1 = grad.c1()[k] - c.p1;
            let e2 = grad.c2()[k] - c.p2;
            grad_sq.values_mut()[k] = e1 * e1 + e2 * e2;
            let h11 = hess.a11()[k] - c.p11;
            let h12 = hess.a12()[k] - c.p12;
            let h22 = hess.a22()[k] - c.p22;
            hess_sq.values_mut()[k] = h11 * h11 + 2.0 * h12 * h12 + h22 * h22;
            let d = div.values()[k] + c.s_induced;
            div_sq.values_mut()[k] = d * d;
        }
        grad_errs.push(crate::grid::integrate(&grad_sq, None)?.sqrt());
        hess_errs.push(crate::grid::integrate(&hess_sq, None)?.sqrt());
        div_errs.push(crate::grid::integrate(&div_sq, None)?.sqrt());

        if case.boundary_compatible {
            let (ph, rep) = solve_pressure(&m, &s, None, solver)?;
            worst_res = worst_res.max(rep.residual);
            let mut err_sq = ScalarField::zeros(g.clone());
            for (i, j) in g.iter_nodes() {
                let d = ph.at(i, j) - (case.p)(g.x(i), g.y(j));
                err_sq.values_mut()[g.idx(i, j)] = d * d;
            }
            solve_errs.push(crate::grid::integrate(&err_sq, None)?.sqrt());

            if let Some(lap_m) = case.lap_m {
                let params = Params::default();
                // dt = h^2 keeps the splitting gap of the implicit step at
                // the same order as the spatial truncation, so the row
                // converges at second order per unit time.
                let dt = g.hx() * g.hx();
                let state = State::new(m.clone(), ph.clone(), 0.0)?;
                let (next, _) =
                    crate::dynamics::step_conductance(&state, &s, &params, dt, solver)?;
                // Forward-Euler target on the closed forms (reaction is m
                // itself at the default exponent).
                let mut err_sq = ScalarField::zeros(g.clone());
                for (i, j) in g.iter_nodes() {
                    if g.is_boundary(i, j) {
                        continue;
                    }
                    let (x, y) = (g.x(i), g.y(j));
                    let c = case.at(x, y);
                    let (l1, l2) = lap_m(x, y);
                    let md = c.m1 * c.p1 + c.m2 * c.p2;
                    let t1 = c.m1 + dt * (params.alpha * params.alpha * l1 - c.m1
                        + params.beta * params.beta * md * c.p1);
                    let t2 = c.m2 + dt * (params.alpha * params.alpha * l2 - c.m2
                        + params.beta * params.beta * md * c.p2);
                    let d1 = next.m.at(i, j).0 - t1;
                    let d2 = next.m.at(i, j).1 - t2;
                    err_sq.values_mut()[g.idx(i, j)] = d1 * d1 + d2 * d2;
                }
                // Normalize by dt so the row measures the one-step defect
                // per unit time.
                step_errs.push(crate::grid::integrate(&err_sq, None)?.sqrt() / dt);
            }
        }
    }

    let mut rows = vec![
        finish_row("gradient", cells, grad_errs, None),
        finish_row("hessian", cells, hess_errs, None),
        finish_row("divergence_form", cells, div_errs, None),
    ];
    if !solve_errs.is_empty() {
        rows.push(finish_row(
            "pressure_solve",
            cells,
            solve_errs,
            Some(worst_res),
        ));
    }
    if !step_errs.is_empty() {
        rows.push(finish_row("coupled_step", cells, step_errs, Some(worst_res)));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Battery entry point
// ---------------------------------------------------------------------------

/// One named check with its headline number and pass verdict.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub observed_order: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, max_error: f64) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            max_error,
            observed_order: None,
            detail: String::new(),
        }
    }

    fn with_order(mut self, order: f64) -> Self {
        self.observed_order = Some(order);
        self
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }
}

/// Run the full identity battery on the standard manufactured cases.
pub fn identity_battery() -> Result<Vec<CheckResult>> {
    let trig = ManufacturedCase::default_trig();
    let quad = ManufacturedCase::quadratic();
    let one_d = ManufacturedCase::one_d();
    let constant = ManufacturedCase::constant_linear();
    let mut out = Vec::new();

    let e_trig = hessian_identity_check(&trig, 10_000, 11);
    let e_quad = hessian_identity_check(&quad, 1_000, 12);
    let e = e_trig.max(e_quad);
    out.push(
        CheckResult::new("hessian_product_identity", e <= 1e-12, e)
            .with_detail(format!("trig {e_trig:.3e}, quadratic {e_quad:.3e}")),
    );

    let cr = cramer_check(&trig, 10_000, 13);
    out.push(CheckResult::new(
        "system_determinant",
        cr.det_rel_error <= 1e-12,
        cr.det_rel_error,
    ));
    out.push(CheckResult::new(
        "cramer_reconstruction",
        cr.reconstruction_rel_error <= 1e-10,
        cr.reconstruction_rel_error,
    ));
    out.push(CheckResult::new(
        "adjugate_representation",
        cr.representation_rel_error <= 1e-10,
        cr.representation_rel_error,
    ));
    out.push(
        CheckResult::new(
            "second_equation_readings",
            cr.row2_restored_residual <= 1e-12,
            cr.row2_restored_residual,
        )
        .with_detail(format!(
            "restored-factor residual {:.3e}; as-printed residual {:.3e}",
            cr.row2_restored_residual, cr.row2_printed_residual
        )),
    );

    let (lc, lf, probes) = log_gradient_pair(&trig, 128)?;
    let ratio = lc / lf;
    out.push(
        CheckResult::new(
            "log_gradient_identity",
            (3.0..5.0).contains(&ratio) && probes >= 10_000,
            lf,
        )
        .with_order(ratio.log2())
        .with_detail(format!("errors {lc:.3e} -> {lf:.3e} at {probes} probes")),
    );

    for form in [ResidualForm::V, ResidualForm::LogV] {
        let study = residual_study(&trig, &[64, 128, 256, 512], form)?;
        let name = match form {
            ResidualForm::V => "weak_residual_v",
            ResidualForm::LogV => "weak_residual_log",
        };
        let worst = study.residuals.iter().cloned().fold(0.0, f64::max);
        out.push(
            CheckResult::new(name, study.observed_order >= 0.8, worst)
                .with_order(study.observed_order)
                .with_detail(format!("residuals {:?}", study.residuals)),
        );
    }

    // Constant coefficients: the residual is exactly zero term by term.
    let flat_bump = TestBump {
        x0: 0.5,
        y0: 0.5,
        rx: 0.3,
        ry: 0.3,
    };
    let flat = weak_residual(&constant, 64, &flat_bump, ResidualForm::V, SourceChoice::Induced)?
        .abs()
        .max(
            weak_residual(
                &constant,
                64,
                &flat_bump,
                ResidualForm::LogV,
                SourceChoice::Induced,
            )?
            .abs(),
        );
    out.push(CheckResult::new("constant_case_residual", flat <= 1e-10, flat));

    // Separable oracle with the source dropped (nonzero target).
    let bump_1d = TestBump {
        x0: 0.45,
        y0: 0.5,
        rx: 0.35,
        ry: 0.4,
    };
    let oracle = one_d_residual_oracle(&one_d, &bump_1d, ResidualForm::V, SourceChoice::Zero);
    let r256 = weak_residual(&one_d, 256, &bump_1d, ResidualForm::V, SourceChoice::Zero)?;
    let r512 = weak_residual(&one_d, 512, &bump_1d, ResidualForm::V, SourceChoice::Zero)?;
    let (d256, d512) = ((r256 - oracle).abs(), (r512 - oracle).abs());
    let ok = oracle.abs() > 1e-4 && d512 < d256 && d256 / d512 > 2.5;
    out.push(
        CheckResult::new("separable_oracle", ok, d512)
            .with_detail(format!("oracle {oracle:.6e}, gaps {d256:.3e} -> {d512:.3e}")),
    );

    // Recursion lemma sweep: starting below the threshold always
    // collapses. The exact threshold start is neutrally stable and
    // rounding noise doubles per iteration, so the sweep stays strictly
    // inside; the boundary itself is pinned by the dyadic case below,
    // whose trajectory is representable exactly.
    let mut sweep_ok = true;
    let mut tested = 0usize;
    for &c in &[0.5, 1.0, 2.0, 5.0, 10.0] {
        for &b in &[1.5, 2.0, 4.0, 8.0, 16.0] {
            for &frac in &[0.1, 0.3, 0.5, 0.9, 0.999] {
                let rep = ynb_sequence(c, b, 1.0, frac * c.powf(-1.0) * b.powf(-1.0), 200)?;
                tested += 1;
                if !(rep.below_threshold && rep.converges) {
                    sweep_ok = false;
                }
            }
        }
    }
    let dyadic = ynb_sequence(1.0, 4.0, 1.0, 0.25, 60)?;
    let dyadic_exact = dyadic
        .values
        .iter()
        .enumerate()
        .take(25)
        .all(|(n, &y)| y == (2.0f64).powi(-2 * (n as i32) - 2));
    out.push(
        CheckResult::new("recursion_lemma_sweep", sweep_ok && dyadic_exact, 0.0)
            .with_detail(format!(
                "{tested} strictly-below triples; exact-threshold dyadic trajectory {}",
                if dyadic_exact { "reproduced" } else { "broken" }
            )),
    );

    Ok(out)
}
