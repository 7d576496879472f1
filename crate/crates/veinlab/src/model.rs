//! Model parameters and the pointwise fields derived from a state
//! `(m, p)`: the conductivity tensor `A = I + m m^T`, the gradient energy
//! density `v = A grad p . grad p`, the trace source `w`, and the
//! coefficient fields of the derived elliptic equation satisfied by `v`.

use crate::error::{Error, Result};
use crate::grid::{
    gradient, hessian, jacobian, Grid2D, Matrix2Field, ScalarField, VectorField2,
};
use serde::Serialize;

/// Physical and numerical parameters of the coupled model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    /// Conductance diffusion coefficient (`alpha^2` multiplies the Laplacian).
    pub alpha: f64,
    /// Coupling strength (`beta^2` multiplies the alignment forcing).
    pub beta: f64,
    /// Relaxation exponent; the decay term is `|m|^(2(gamma-1)) m`.
    pub gamma: f64,
    /// Regularization added to `|m|^2` inside the decay term.
    pub eps_reg: f64,
    /// Threshold below which `1/v`-weighted fields are masked to zero.
    pub v_min: f64,
    /// Integrability exponent used by the level-set profiler.
    pub r_exp: f64,
    /// Gradient-scaling exponent; the reference rate is `t^(-1 + delta/2)`.
    pub delta_exp: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            eps_reg: 0.0,
            v_min: 1.0,
            r_exp: 2.0,
            delta_exp: 2.5,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64, bool, &str); 7] = [
            ("alpha", self.alpha, self.alpha > 0.0, "alpha > 0"),
            // beta = 0 is admitted so decoupled (pure decay) runs can be
            // configured; the model itself takes beta > 0.
            ("beta", self.beta, self.beta >= 0.0, "beta >= 0"),
            (
                "gamma",
                self.gamma,
                self.gamma > 0.5,
                "the relaxation exponent hypothesis gamma > 1/2",
            ),
            ("eps_reg", self.eps_reg, self.eps_reg >= 0.0, "eps_reg >= 0"),
            ("v_min", self.v_min, self.v_min > 0.0, "v_min > 0"),
            ("r_exp", self.r_exp, self.r_exp > 1.0, "r_exp > 1"),
            (
                "delta_exp",
                self.delta_exp,
                self.delta_exp > 2.0 && self.delta_exp < 3.0,
                "delta_exp in (2, 3)",
            ),
        ];
        for (name, value, ok, constraint) in checks {
            if !ok || !value.is_finite() {
                return Err(Error::BadParameter {
                    name,
                    value,
                    constraint: constraint.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Discrete state of the coupled system at time `t`.
#[derive(Debug, Clone)]
pub struct State {
    pub m: VectorField2,
    pub p: ScalarField,
    pub t: f64,
}

impl State {
    /// Both `m` and `p` must vanish identically on the boundary nodes.
    pub fn new(m: VectorField2, p: ScalarField, t: f64) -> Result<Self> {
        if m.grid() != p.grid() {
            return Err(Error::GridMismatch);
        }
        let s = State { m, p, t };
        s.check_boundary()?;
        Ok(s)
    }

    pub fn grid(&self) -> &Grid2D {
        self.p.grid()
    }

    pub fn check_boundary(&self) -> Result<()> {
        let g = self.p.grid().clone();
        for (i, j) in g.iter_nodes() {
            if !g.is_boundary(i, j) {
                continue;
            }
            let (m1, m2) = self.m.at(i, j);
            let p = self.p.at(i, j);
            if m1 != 0.0 || m2 != 0.0 {
                return Err(Error::NonFinite {
                    field: "m (nonzero on boundary)",
                    i,
                    j,
                    value: if m1 != 0.0 { m1 } else { m2 },
                });
            }
            if p != 0.0 {
                return Err(Error::NonFinite {
                    field: "p (nonzero on boundary)",
                    i,
                    j,
                    value: p,
                });
            }
        }
        Ok(())
    }
}

/// Conductivity tensor `A = I + m m^T` (symmetric, eigenvalues `1` and
/// `1 + |m|^2`).
pub fn conductivity(m: &VectorField2) -> Matrix2Field {
    let n = m.grid().n_nodes();
    let (c1, c2) = (m.c1(), m.c2());
    let mut a11 = Vec::with_capacity(n);
    let mut a12 = Vec::with_capacity(n);
    let mut a22 = Vec::with_capacity(n);
    for k in 0..n {
        a11.push(1.0 + c1[k] * c1[k]);
        a12.push(c1[k] * c2[k]);
        a22.push(1.0 + c2[k] * c2[k]);
    }
    Matrix2Field::symmetric(m.grid().clone(), a11, a12, a22)
        .expect("lengths match by construction")
}

/// Closed-form spectral check of the stored conductivity entries on
/// `samples` random nodes: the eigenvalues must be `1` and `1 + |m|^2`
/// to `1e-12`, and in particular never drop below `1 - 1e-12`.
pub fn conductivity_spectrum_check(
    a: &Matrix2Field,
    m: &VectorField2,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = a.grid().clone();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let i = rng.gen_range(0..g.nx());
        let j = rng.gen_range(0..g.ny());
        let (a11, a12, _, a22) = a.at(i, j);
        let tr = a11 + a22;
        let det = a11 * a22 - a12 * a12;
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        let lo = 0.5 * (tr - disc);
        let hi = 0.5 * (tr + disc);
        let (m1, m2) = m.at(i, j);
        if lo < 1.0 - 1e-12 {
            return Err(Error::EigenvalueBelowOne {
                i,
                j,
                m1,
                m2,
                eig: lo,
            });
        }
        let msq = m1 * m1 + m2 * m2;
        worst = worst
            .max((lo - 1.0).abs())
            .max((hi - (1.0 + msq)).abs() / (1.0 + msq));
    }
    Ok(worst)
}

/// Gradient energy density `v = |grad p|^2 + (m . grad p)^2`
/// (equal to `A grad p . grad p`).
pub fn compute_v(m: &VectorField2, grad_p: &VectorField2) -> Result<ScalarField> {
    if m.grid() != grad_p.grid() {
        return Err(Error::GridMismatch);
    }
    let n = m.grid().n_nodes();
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let (p1, p2) = (grad_p.c1()[k], grad_p.c2()[k]);
        let md = m.c1()[k] * p1 + m.c2()[k] * p2;
        values.push(p1 * p1 + p2 * p2 + md * md);
    }
    ScalarField::new(m.grid().clone(), values)
}

/// Trace source `w = -(div A . grad p + s)`, with `div A` the row vector of
/// column divergences computed by the discrete gradient of each entry of
/// `A`. On a solution of the pressure equation, `w` equals `A : hess p`.
pub fn compute_w(
    a: &Matrix2Field,
    grad_p: &VectorField2,
    s: &ScalarField,
) -> Result<ScalarField> {
    if !a.is_symmetric() {
        return Err(Error::NonSymmetricMatrix);
    }
    if a.grid() != grad_p.grid() || a.grid() != s.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = a.grid().clone();
    let da11 = gradient(&ScalarField::new(grid.clone(), a.a11().to_vec())?);
    let da12 = gradient(&ScalarField::new(grid.clone(), a.a12().to_vec())?);
    let da22 = gradient(&ScalarField::new(grid.clone(), a.a22().to_vec())?);
    let n = grid.n_nodes();
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let div1 = da11.c1()[k] + da12.c2()[k];
        let div2 = da12.c1()[k] + da22.c2()[k];
        values.push(-(div1 * grad_p.c1()[k] + div2 * grad_p.c2()[k] + s.values()[k]));
    }
    ScalarField::new(grid, values)
}

/// Decay term `(|m|^2 + eps_reg)^(gamma - 1) m`.
///
/// With `gamma < 1` the exponent is negative, so `eps_reg = 0` is rejected
/// (the term would blow up where `m` vanishes).
pub fn reaction_term(m: &VectorField2, params: &Params) -> Result<VectorField2> {
    if params.gamma < 1.0 && params.eps_reg == 0.0 {
        return Err(Error::BadParameter {
            name: "eps_reg",
            value: 0.0,
            constraint: "eps_reg > 0 is required when gamma < 1".into(),
        });
    }
    let n = m.grid().n_nodes();
    let expo = params.gamma - 1.0;
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for k in 0..n {
        let (m1, m2) = (m.c1()[k], m.c2()[k]);
        let base = m1 * m1 + m2 * m2 + params.eps_reg;
        let factor = if expo == 0.0 { 1.0 } else { base.powf(expo) };
        c1.push(factor * m1);
        c2.push(factor * m2);
    }
    VectorField2::new(m.grid().clone(), c1, c2)
}

/// Alignment forcing `beta^2 (m . grad p) grad p`.
pub fn forcing_term(
    m: &VectorField2,
    grad_p: &VectorField2,
    params: &Params,
) -> Result<VectorField2> {
    if m.grid() != grad_p.grid() {
        return Err(Error::GridMismatch);
    }
    let n = m.grid().n_nodes();
    let b2 = params.beta * params.beta;
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for k in 0..n {
        let (p1, p2) = (grad_p.c1()[k], grad_p.c2()[k]);
        let md = m.c1()[k] * p1 + m.c2()[k] * p2;
        c1.push(b2 * md * p1);
        c2.push(b2 * md * p2);
    }
    VectorField2::new(m.grid().clone(), c1, c2)
}

/// All derived coefficient fields of the equation satisfied by `v`.
///
/// Fields carrying a `1/v` weight (`g`, `drift`, `k_flux`, `h_src`) are set
/// to zero off the mask `{v >= v_min}`.
#[derive(Debug, Clone)]
pub struct AuxFields {
    /// Conductivity `A = I + m m^T`.
    pub a: Matrix2Field,
    /// `det A = 1 + |m|^2`.
    pub det_a: ScalarField,
    /// Gradient energy density `v = A grad p . grad p`.
    pub v: ScalarField,
    /// Trace source `w = -(div A . grad p + s)`.
    pub w: ScalarField,
    /// Conductivity flux `nu = A grad p`.
    pub nu: VectorField2,
    /// `e = 2 (hess p) A grad p`; satisfies `grad v = v g + e`.
    pub e: VectorField2,
    /// Logarithmic coefficient gradient `g_i = (A_xi grad p . grad p) / v`.
    pub g: VectorField2,
    /// First reconstruction matrix of the Hessian representation.
    pub a1: Matrix2Field,
    /// Second reconstruction matrix.
    pub a2: Matrix2Field,
    /// Rank-one matrix `-nu nu^T` (negative semidefinite).
    pub a3: Matrix2Field,
    /// Drift coefficient of the derived equation for `v`.
    pub drift: VectorField2,
    /// Flux correction whose divergence closes the derived equation.
    pub k_flux: VectorField2,
    /// Zero-order source of the derived equation.
    pub h_src: ScalarField,
    /// Coefficient scale bound `d = (1 + |m|^2) |m| |grad m|`.
    pub d: ScalarField,
    /// Nodes with `v >= v_min`.
    pub mask: Vec<bool>,
}

/// Assemble every derived field from nodal `(m, p, s)` with discrete
/// derivatives.
pub fn compute_aux(
    m: &VectorField2,
    p: &ScalarField,
    s: &ScalarField,
    params: &Params,
) -> Result<AuxFields> {
    if m.grid() != p.grid() || m.grid() != s.grid() {
        return Err(Error::GridMismatch);
    }
    params.validate()?;
    let grid = p.grid().clone();
    let n = grid.n_nodes();

    let a = conductivity(m);
    let grad_p = gradient(p);
    let hess_p = hessian(p);
    let v = compute_v(m, &grad_p)?;
    let w = compute_w(&a, &grad_p, s)?;

    let det_a = {
        let mut values = Vec::with_capacity(n);
        for k in 0..n {
            let (m1, m2) = (m.c1()[k], m.c2()[k]);
            values.push(1.0 + m1 * m1 + m2 * m2);
        }
        ScalarField::new(grid.clone(), values)?
    };

    // Discrete gradients of the coefficient entries and of det A.
    let da11 = gradient(&ScalarField::new(grid.clone(), a.a11().to_vec())?);
    let da12 = gradient(&ScalarField::new(grid.clone(), a.a12().to_vec())?);
    let da22 = gradient(&ScalarField::new(grid.clone(), a.a22().to_vec())?);
    let grad_det = gradient(&det_a);

    let mask: Vec<bool> = v.values().iter().map(|&vv| vv >= params.v_min).collect();

    let mut nu = VectorField2::zeros(grid.clone());
    let mut e = VectorField2::zeros(grid.clone());
    let mut g = VectorField2::zeros(grid.clone());
    let mut drift = VectorField2::zeros(grid.clone());
    let mut k_flux = VectorField2::zeros(grid.clone());
    let mut h_src = ScalarField::zeros(grid.clone());
    let mut d = ScalarField::zeros(grid.clone());
    let (mut a1_11, mut a1_12, mut a1_21, mut a1_22) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut a2_11, mut a2_12, mut a2_21, mut a2_22) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut a3_11, mut a3_12, mut a3_22) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);

    let jac_m = jacobian(m);
    let jm21 = jac_m.a21().to_vec();

    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let k = grid.idx(i, j);
            let (a11, a12, _, a22) = a.at(i, j);
            let (p1, p2) = grad_p.at(i, j);
            let (h11, h12, _, h22) = hess_p.at(i, j);
            let vv = v.values()[k];
            let ww = w.values()[k];
            let det = det_a.values()[k];

            let nu1 = a11 * p1 + a12 * p2;
            let nu2 = a12 * p1 + a22 * p2;
            nu.set(i, j, nu1, nu2);

            let e1 = 2.0 * (h11 * nu1 + h12 * nu2);
            let e2 = 2.0 * (h12 * nu1 + h22 * nu2);
            e.set(i, j, e1, e2);

            // Reconstruction matrices.
            let cross = a11 * a22 - 2.0 * a12 * a12;
            a1_11[k] = a11 * nu1;
            a1_12[k] = a12 * a11 * p1 - cross * p2;
            a1_21[k] = a11 * nu2;
            a1_22[k] = a22 * nu1;
            a2_11[k] = a11 * nu2;
            a2_12[k] = a22 * nu1;
            a2_21[k] = -cross * p1 + a12 * a22 * p2;
            a2_22[k] = a22 * nu2;
            a3_11[k] = -nu1 * nu1;
            a3_12[k] = -nu1 * nu2;
            a3_22[k] = -nu2 * nu2;

            let (m1, m2) = m.at(i, j);
            let msq = m1 * m1 + m2 * m2;
            let grad_m_sq = jac_m.a11()[k] * jac_m.a11()[k]
                + jac_m.a12()[k] * jac_m.a12()[k]
                + jm21[k] * jm21[k]
                + jac_m.a22()[k] * jac_m.a22()[k];
            d.values_mut()[k] = (1.0 + msq) * msq.sqrt() * grad_m_sq.sqrt();

            if !mask[k] {
                continue;
            }

            // Directional coefficient derivatives contracted with grad p.
            let q1 = da11.c1()[k] * p1 * p1
                + 2.0 * da12.c1()[k] * p1 * p2
                + da22.c1()[k] * p2 * p2;
            let q2 = da11.c2()[k] * p1 * p1
                + 2.0 * da12.c2()[k] * p1 * p2
                + da22.c2()[k] * p2 * p2;
            let g1 = q1 / vv;
            let g2 = q2 / vv;
            g.set(i, j, g1, g2);

            let ag1 = a11 * g1 + a12 * g2;
            let ag2 = a12 * g1 + a22 * g2;

            // Rows (grad p)^T A1 and (grad p)^T A2, dotted with grad(det A).
            let (gd1, gd2) = grad_det.at(i, j);
            let row1_1 = p1 * a1_11[k] + p2 * a1_21[k];
            let row1_2 = p1 * a1_12[k] + p2 * a1_22[k];
            let row2_1 = p1 * a2_11[k] + p2 * a2_21[k];
            let row2_2 = p1 * a2_12[k] + p2 * a2_22[k];
            let inv_dv = 1.0 / (det * vv);
            let h1 = (row1_1 * gd1 + row1_2 * gd2) * inv_dv - ag1;
            let h2 = (row2_1 * gd1 + row2_2 * gd2) * inv_dv - ag2;
            drift.set(i, j, h1, h2);

            let k1 = ag1 + 2.0 * ww * nu1 / vv;
            let k2 = ag2 + 2.0 * ww * nu2 / vv;
            k_flux.set(i, j, k1, k2);

            // Zero-order source: (2 w nu / v - drift) . g
            //                    + (2 w / (det v^2)) (A3 grad p . grad det A).
            let b1 = 2.0 * ww * nu1 / vv - h1;
            let b2 = 2.0 * ww * nu2 / vv - h2;
            let a3gp1 = a3_11[k] * p1 + a3_12[k] * p2;
            let a3gp2 = a3_12[k] * p1 + a3_22[k] * p2;
            h_src.values_mut()[k] = b1 * g1
                + b2 * g2
                + (2.0 * ww / (det * vv * vv)) * (a3gp1 * gd1 + a3gp2 * gd2);
        }
    }

    Ok(AuxFields {
        a,
        det_a,
        v,
        w,
        nu,
        e,
        g,
        a1: Matrix2Field::full(grid.clone(), a1_11, a1_12, a1_21, a1_22)?,
        a2: Matrix2Field::full(grid.clone(), a2_11, a2_12, a2_21, a2_22)?,
        a3: Matrix2Field::symmetric(grid.clone(), a3_11, a3_12, a3_22)?,
        drift,
        k_flux,
        h_src,
        d,
        mask,
    })
}

/// Maximum masked ratios of the derived coefficients against their scale
/// bounds. Nodes where a denominator falls below `1e-12` are skipped.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoefficientRatios {
    /// `|drift| / d`
    pub drift_over_d: f64,
    /// `|k_flux| / (d + (1 + |m|^2)^(3/2) |s|)`
    pub k_over_scale: f64,
    /// `|h_src| / (d^2 + (1 + |m|^2) s^2)`
    pub h_over_scale: f64,
}

pub fn coefficient_ratios(
    aux: &AuxFields,
    m: &VectorField2,
    s: &ScalarField,
) -> CoefficientRatios {
    let n = s.grid().n_nodes();
    let mut r1 = 0.0f64;
    let mut r2 = 0.0f64;
    let mut r3 = 0.0f64;
    for k in 0..n {
        if !aux.mask[k] {
            continue;
        }
        let dd = aux.d.values()[k];
        let (m1, m2) = (m.c1()[k], m.c2()[k]);
        let det = 1.0 + m1 * m1 + m2 * m2;
        let sv = s.values()[k];
        let drift_mag = aux.drift.c1()[k].hypot(aux.drift.c2()[k]);
        let k_mag = aux.k_flux.c1()[k].hypot(aux.k_flux.c2()[k]);
        let h_mag = aux.h_src.values()[k].abs();
        if dd > 1e-12 {
            r1 = r1.max(drift_mag / dd);
        }
        let k_scale = dd + det.powf(1.5) * sv.abs();
        if k_scale > 1e-12 {
            r2 = r2.max(k_mag / k_scale);
        }
        let h_scale = dd * dd + det * sv * sv;
        if h_scale > 1e-12 {
            r3 = r3.max(h_mag / h_scale);
        }
    }
    CoefficientRatios {
        drift_over_d: r1,
        k_over_scale: r2,
        h_over_scale: r3,
    }
}
