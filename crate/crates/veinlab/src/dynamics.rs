//! Time integration of the conductance equation coupled to the pressure
//! solve, with per-step monitors for the two energy balances and the
//! sup-norm bounds.
//!
//! The conductance update is IMEX Euler: diffusion implicit (one Helmholtz
//! solve per component), reaction and alignment forcing explicit. After
//! each update the pressure is re-solved with the new conductivity.

use crate::elliptic::{solve, solve_p0, solve_pressure, HelmholtzSystem, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{gradient, integrate, jacobian, Grid2D, ScalarField, VectorField2};
use crate::model::{forcing_term, reaction_term, Params, State};
use serde::Serialize;

/// Everything a single run needs besides the initial data and the source.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub params: Params,
    pub dt: f64,
    pub t_final: f64,
    /// Keep a full state every this many steps (0 = initial/final only).
    pub snapshot_stride: usize,
    pub solver: SolverOptions,
}

/// Forcing-scale time step guard: a quarter of the smaller grid spacing.
pub fn default_dt(grid: &Grid2D) -> f64 {
    0.25 * grid.hx().min(grid.hy())
}

impl SimulationConfig {
    pub fn new(grid: &Grid2D, t_final: f64) -> Self {
        SimulationConfig {
            params: Params::default(),
            dt: default_dt(grid),
            t_final,
            snapshot_stride: 0,
            solver: SolverOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::BadParameter {
                name: "dt",
                value: self.dt,
                constraint: "dt > 0".into(),
            });
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::BadParameter {
                name: "t_final",
                value: self.t_final,
                constraint: "t_final >= 0".into(),
            });
        }
        Ok(())
    }
}

/// Per-step scalar diagnostics. The energy columns carry the running
/// left- and right-hand sides of the two balances up to the record time.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub sup_grad_p: f64,
    pub sup_grad_m: f64,
    pub sup_v: f64,
    pub l2_m: f64,
    pub l2_grad_m: f64,
    pub l2gamma_m: f64,
    pub energy5_lhs: f64,
    pub energy5_rhs: f64,
    pub energy5_rel_residual: f64,
    pub energy6_lhs: f64,
    pub energy6_rhs: f64,
    pub energy6_rel_residual: f64,
    pub cg_iters: usize,
}

impl MonitorRecord {
    pub const CSV_HEADER: &'static str = "t,sup_grad_p,sup_grad_m,sup_v,l2_m,\
        l2_grad_m,l2gamma_m,energy5_lhs,energy5_rhs,energy5_rel_residual,\
        energy6_lhs,energy6_rhs,energy6_rel_residual,cg_iters";

    pub fn csv_row(&self) -> Vec<f64> {
        vec![
            self.t,
            self.sup_grad_p,
            self.sup_grad_m,
            self.sup_v,
            self.l2_m,
            self.l2_grad_m,
            self.l2gamma_m,
            self.energy5_lhs,
            self.energy5_rhs,
            self.energy5_rel_residual,
            self.energy6_lhs,
            self.energy6_rhs,
            self.energy6_rel_residual,
            self.cg_iters as f64,
        ]
    }
}

/// A completed (or aborted) run: end states, per-step records, and any
/// stride snapshots.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: Params,
    pub dt: f64,
    pub source: ScalarField,
    pub initial: State,
    pub final_state: State,
    pub records: Vec<MonitorRecord>,
    pub snapshots: Vec<State>,
}

/// A run that failed mid-flight; `partial` holds everything up to the
/// last completed step.
#[derive(Debug)]
pub struct SimAbort {
    pub error: Error,
    pub partial: Trajectory,
}

/// Spot values of the spatial integrands entering the energy balances.
#[derive(Debug, Clone, Copy, Default)]
struct Integrands {
    grad_m_sq: f64,
    m_dot_gp_sq: f64,
    m_pow_2gamma: f64,
    grad_p_sq: f64,
    s_p: f64,
    m_sq: f64,
}

#[derive(Debug, Clone, Copy)]
struct Observation {
    integ: Integrands,
    sup_grad_p: f64,
    sup_grad_m: f64,
    sup_v: f64,
}

fn observe(state: &State, s: &ScalarField, params: &Params) -> Result<Observation> {
    let g = state.grid().clone();
    let grad_p = gradient(&state.p);
    let jac_m = jacobian(&state.m);
    let n = g.n_nodes();

    let mut grad_m_sq = ScalarField::zeros(g.clone());
    let mut m_dot_gp_sq = ScalarField::zeros(g.clone());
    let mut m_pow = ScalarField::zeros(g.clone());
    let mut grad_p_sq = ScalarField::zeros(g.clone());
    let mut s_p = ScalarField::zeros(g.clone());
    let mut m_sq = ScalarField::zeros(g.clone());

    let mut sup_grad_p = 0.0f64;
    let mut sup_grad_m = 0.0f64;
    let mut sup_v = 0.0f64;

    for k in 0..n {
        let (p1, p2) = (grad_p.c1()[k], grad_p.c2()[k]);
        let (m1, m2) = (state.m.c1()[k], state.m.c2()[k]);
        let gp2 = p1 * p1 + p2 * p2;
        let md = m1 * p1 + m2 * p2;
        let msq = m1 * m1 + m2 * m2;
        let jm2 = jac_m.a11()[k] * jac_m.a11()[k]
            + jac_m.a12()[k] * jac_m.a12()[k]
            + jac_m.a21()[k] * jac_m.a21()[k]
            + jac_m.a22()[k] * jac_m.a22()[k];
        grad_m_sq.values_mut()[k] = jm2;
        m_dot_gp_sq.values_mut()[k] = md * md;
        m_pow.values_mut()[k] = if msq == 0.0 {
            0.0
        } else {
            msq.powf(params.gamma)
        };
        grad_p_sq.values_mut()[k] = gp2;
        s_p.values_mut()[k] = s.values()[k] * state.p.values()[k];
        m_sq.values_mut()[k] = msq;
        sup_grad_p = sup_grad_p.max(gp2.sqrt());
        sup_grad_m = sup_grad_m.max(jm2.sqrt());
        sup_v = sup_v.max(gp2 + md * md);
    }

    Ok(Observation {
        integ: Integrands {
            grad_m_sq: integrate(&grad_m_sq, None)?,
            m_dot_gp_sq: integrate(&m_dot_gp_sq, None)?,
            m_pow_2gamma: integrate(&m_pow, None)?,
            grad_p_sq: integrate(&grad_p_sq, None)?,
            s_p: integrate(&s_p, None)?,
            m_sq: integrate(&m_sq, None)?,
        },
        sup_grad_p,
        sup_grad_m,
        sup_v,
    })
}

/// Running trapezoid time integrals of the [`Integrands`], plus the
/// rectangle-rule integral of `|dm/dt|^2`.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulators {
    grad_m_sq: f64,
    m_dot_gp_sq: f64,
    m_pow_2gamma: f64,
    grad_p_sq: f64,
    s_p: f64,
    dm_dt_sq: f64,
}

impl Accumulators {
    fn advance(&mut self, dt: f64, prev: &Integrands, cur: &Integrands) {
        let half = 0.5 * dt;
        self.grad_m_sq += half * (prev.grad_m_sq + cur.grad_m_sq);
        self.m_dot_gp_sq += half * (prev.m_dot_gp_sq + cur.m_dot_gp_sq);
        self.m_pow_2gamma += half * (prev.m_pow_2gamma + cur.m_pow_2gamma);
        self.grad_p_sq += half * (prev.grad_p_sq + cur.grad_p_sq);
        self.s_p += half * (prev.s_p + cur.s_p);
    }
}

fn rel_residual(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

fn make_record(
    t: f64,
    obs: &Observation,
    acc: &Accumulators,
    first: &Integrands,
    init_spot6: f64,
    params: &Params,
    cg_iters: usize,
) -> MonitorRecord {
    let b2 = params.beta * params.beta;
    let a2 = params.alpha * params.alpha;
    let i = &obs.integ;

    let energy5_lhs = 0.5 * i.m_sq
        + a2 * acc.grad_m_sq
        + b2 * acc.m_dot_gp_sq
        + acc.m_pow_2gamma
        + 2.0 * b2 * acc.grad_p_sq;
    let energy5_rhs = 0.5 * first.m_sq + 2.0 * b2 * acc.s_p;

    let energy6_lhs = acc.dm_dt_sq + spot_terms_6(i, params);
    let energy6_rhs = init_spot6;

    MonitorRecord {
        t,
        sup_grad_p: obs.sup_grad_p,
        sup_grad_m: obs.sup_grad_m,
        sup_v: obs.sup_v,
        l2_m: i.m_sq.sqrt(),
        l2_grad_m: i.grad_m_sq.sqrt(),
        l2gamma_m: if i.m_pow_2gamma == 0.0 {
            0.0
        } else {
            i.m_pow_2gamma.powf(1.0 / (2.0 * params.gamma))
        },
        energy5_lhs,
        energy5_rhs,
        energy5_rel_residual: rel_residual(energy5_lhs, energy5_rhs),
        energy6_lhs,
        energy6_rhs,
        energy6_rel_residual: rel_residual(energy6_lhs, energy6_rhs),
        cg_iters,
    }
}

/// The instantaneous terms of the second balance: `(alpha^2/2)|grad m|^2 +
/// (beta^2/2)(m.grad p)^2 + (beta^2/2)|grad p|^2 + (1/2 gamma)|m|^{2 gamma}`,
/// integrated in space.
fn spot_terms_6(i: &Integrands, params: &Params) -> f64 {
    let b2 = params.beta * params.beta;
    let a2 = params.alpha * params.alpha;
    0.5 * a2 * i.grad_m_sq
        + 0.5 * b2 * i.m_dot_gp_sq
        + 0.5 * b2 * i.grad_p_sq
        + i.m_pow_2gamma / (2.0 * params.gamma)
}

/// One IMEX step: implicit diffusion, explicit reaction and forcing, then
/// a fresh pressure solve with the updated conductivity. Returns the new
/// state and the total CG iterations spent.
pub fn step_conductance(
    state: &State,
    s: &ScalarField,
    params: &Params,
    dt: f64,
    solver: &SolverOptions,
) -> Result<(State, usize)> {
    let g = state.grid().clone();
    let grad_p = gradient(&state.p);
    let forcing = forcing_term(&state.m, &grad_p, params)?;
    let reaction = reaction_term(&state.m, params)?;

    let mut iters = 0;
    let sigma = dt * params.alpha * params.alpha;
    let helm = HelmholtzSystem::new(g.clone(), sigma)?;
    let mut new_components = Vec::with_capacity(2);
    for c in 0..2 {
        let (mc, fc, rc) = match c {
            0 => (state.m.c1(), forcing.c1(), reaction.c1()),
            _ => (state.m.c2(), forcing.c2(), reaction.c2()),
        };
        let rhs_vals: Vec<f64> = (0..g.n_nodes())
            .map(|k| mc[k] + dt * (fc[k] - rc[k]))
            .collect();
        let rhs = ScalarField::new(g.clone(), rhs_vals)?;
        let warm = state.m.component(c);
        let (sol, rep) = solve(&helm, &rhs, Some(&warm), solver)?;
        iters += rep.iters;
        new_components.push(sol);
    }
    let m_new = VectorField2::from_components(
        new_components[0].clone(),
        new_components[1].clone(),
    )?;
    m_new.ensure_finite("m after implicit step")?;

    let (p_new, rep) = solve_pressure(&m_new, s, Some(&state.p), solver)?;
    iters += rep.iters;
    p_new.ensure_finite("p after pressure solve")?;

    Ok((State::new(m_new, p_new, state.t + dt)?, iters))
}

/// Run the coupled system from `m0` to `t_final`. On failure the partial
/// trajectory up to the last good step is returned inside the error.
pub fn run_simulation(
    m0: &VectorField2,
    s: &ScalarField,
    cfg: &SimulationConfig,
) -> std::result::Result<Trajectory, Box<SimAbort>> {
    // Validation failures happen before any state exists; report them with
    // an empty single-state trajectory built from the inputs as-is.
    let build_seed = |error: Error| -> Box<SimAbort> {
        let grid = m0.grid().clone();
        let zero_p = ScalarField::zeros(grid.clone());
        let state = State {
            m: m0.clone(),
            p: zero_p,
            t: 0.0,
        };
        Box::new(SimAbort {
            error,
            partial: Trajectory {
                params: cfg.params,
                dt: cfg.dt,
                source: s.clone(),
                initial: state.clone(),
                final_state: state,
                records: Vec::new(),
                snapshots: Vec::new(),
            },
        })
    };

    if let Err(e) = cfg.validate() {
        return Err(build_seed(e));
    }
    if m0.grid() != s.grid() {
        return Err(build_seed(Error::GridMismatch));
    }
    if let Err(e) = m0.ensure_finite("m0").and_then(|_| s.ensure_finite("s")) {
        return Err(build_seed(e));
    }

    let (p0, _, rep0) = match solve_p0(m0, s, &cfg.solver) {
        Ok(x) => x,
        Err(e) => return Err(build_seed(e)),
    };
    let state0 = match State::new(m0.clone(), p0, 0.0) {
        Ok(st) => st,
        Err(e) => return Err(build_seed(e)),
    };

    let params = cfg.params;
    let obs0 = match observe(&state0, s, &params) {
        Ok(o) => o,
        Err(e) => return Err(build_seed(e)),
    };
    let first = obs0.integ;
    let init_spot6 = spot_terms_6(&first, &params);
    let mut acc = Accumulators::default();
    let mut records = vec![make_record(
        0.0,
        &obs0,
        &acc,
        &first,
        init_spot6,
        &params,
        rep0.iters,
    )];
    let mut snapshots = vec![state0.clone()];

    let mut state = state0.clone();
    let mut prev_integ = first;
    let mut step = 0usize;
    let finish = |state: &State, records: &[MonitorRecord], snapshots: &[State]| Trajectory {
        params,
        dt: cfg.dt,
        source: s.clone(),
        initial: state0.clone(),
        final_state: state.clone(),
        records: records.to_vec(),
        snapshots: snapshots.to_vec(),
    };

    while state.t < cfg.t_final - 1e-12 {
        step += 1;
        let dt = cfg.dt.min(cfg.t_final - state.t);
        let stepped = step_conductance(&state, s, &params, dt, &cfg.solver);
        let (new_state, iters) = match stepped {
            Ok(x) => x,
            Err(e) => {
                let error = match e {
                    Error::NonFinite { field, .. } => Error::NonFiniteState {
                        field,
                        step,
                        t: state.t,
                    },
                    other => Error::ImplicitSolve {
                        step,
                        source: Box::new(other),
                    },
                };
                return Err(Box::new(SimAbort {
                    error,
                    partial: finish(&state, &records, &snapshots),
                }));
            }
        };

        let obs = match observe(&new_state, s, &params) {
            Ok(o) => o,
            Err(e) => {
                return Err(Box::new(SimAbort {
                    error: Error::ImplicitSolve {
                        step,
                        source: Box::new(e),
                    },
                    partial: finish(&state, &records, &snapshots),
                }))
            }
        };

        // Rectangle rule for the time-derivative integral: |dm|^2 / dt.
        let mut dm_sq = ScalarField::zeros(state.grid().clone());
        for k in 0..state.grid().n_nodes() {
            let d1 = new_state.m.c1()[k] - state.m.c1()[k];
            let d2 = new_state.m.c2()[k] - state.m.c2()[k];
            dm_sq.values_mut()[k] = d1 * d1 + d2 * d2;
        }
        acc.dm_dt_sq += integrate(&dm_sq, None).unwrap_or(f64::NAN) / dt;
        acc.advance(dt, &prev_integ, &obs.integ);
        prev_integ = obs.integ;
        state = new_state;

        records.push(make_record(
            state.t,
            &obs,
            &acc,
            &first,
            init_spot6,
            &params,
            iters,
        ));
        if cfg.snapshot_stride > 0 && step % cfg.snapshot_stride == 0 {
            snapshots.push(state.clone());
        }
    }

    Ok(finish(&state, &records, &snapshots))
}

/// A balance report at one time: both sides and their relative gap.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyReport {
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_residual: f64,
}

fn record_at(traj: &Trajectory, tau: f64) -> Result<&MonitorRecord> {
    let t_final = traj.final_state.t;
    if !(tau >= -1e-12 && tau <= t_final + 1e-9) {
        return Err(Error::TimeOutsideTrajectory { t: tau, t_final });
    }
    traj.records
        .iter()
        .min_by(|a, b| {
            (a.t - tau)
                .abs()
                .partial_cmp(&(b.t - tau).abs())
                .expect("record times are finite")
        })
        .ok_or(Error::TimeOutsideTrajectory { t: tau, t_final })
}

/// First balance: `(1/2)|m(tau)|^2 + alpha^2 int |grad m|^2 +
/// beta^2 int (m.grad p)^2 + int |m|^{2 gamma} + 2 beta^2 int |grad p|^2`
/// against `(1/2)|m0|^2 + 2 beta^2 int s p`, time integrals over `(0, tau)`.
pub fn energy_identity_5(traj: &Trajectory, tau: f64) -> Result<EnergyReport> {
    let r = record_at(traj, tau)?;
    Ok(EnergyReport {
        tau: r.t,
        lhs: r.energy5_lhs,
        rhs: r.energy5_rhs,
        rel_residual: r.energy5_rel_residual,
    })
}

/// Second balance: `int |dm/dt|^2` plus the instantaneous terms at `tau`
/// against the same instantaneous terms at time zero.
pub fn energy_identity_6(traj: &Trajectory, tau: f64) -> Result<EnergyReport> {
    let r = record_at(traj, tau)?;
    Ok(EnergyReport {
        tau: r.t,
        lhs: r.energy6_lhs,
        rhs: r.energy6_rhs,
        rel_residual: r.energy6_rel_residual,
    })
}

/// Fitted constants of the two sup-norm bounds tracked over a run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradientBoundReport {
    /// Smallest `c` with `sup_v <= c (sup_grad_m^{2r} + 1)` at every
    /// recorded time.
    pub c1: f64,
    /// Smallest `c` with
    /// `sup_grad_m <= c T^{-1 + delta/2} (sup_grad_p^2 + 1) + c`
    /// over the whole run.
    pub c2: f64,
    pub sup_v_run: f64,
    pub sup_grad_m_run: f64,
    pub sup_grad_p_run: f64,
}

pub fn gradient_bound_monitor(traj: &Trajectory, params: &Params) -> GradientBoundReport {
    let two_r = 2.0 * params.r_exp;
    let mut c1 = 0.0f64;
    let mut sup_v_run = 0.0f64;
    let mut sup_gm_run = 0.0f64;
    let mut sup_gp_run = 0.0f64;
    for r in &traj.records {
        c1 = c1.max(r.sup_v / (r.sup_grad_m.powf(two_r) + 1.0));
        sup_v_run = sup_v_run.max(r.sup_v);
        sup_gm_run = sup_gm_run.max(r.sup_grad_m);
        sup_gp_run = sup_gp_run.max(r.sup_grad_p);
    }
    let t_final = traj.final_state.t;
    let c2 = if sup_gm_run == 0.0 {
        0.0
    } else if t_final > 0.0 {
        let rate = t_final.powf(-1.0 + params.delta_exp / 2.0);
        sup_gm_run / (rate * (sup_gp_run * sup_gp_run + 1.0) + 1.0)
    } else {
        sup_gm_run / (sup_gp_run * sup_gp_run + 2.0)
    };
    GradientBoundReport {
        c1,
        c2,
        sup_v_run,
        sup_grad_m_run: sup_gm_run,
        sup_grad_p_run: sup_gp_run,
    }
}

/// Gaussian bump centered at `(1/2, 1/2)`: the default source of the
/// reference configuration.
pub fn default_source(grid: &Grid2D) -> ScalarField {
    ScalarField::from_fn(grid.clone(), |x, y| {
        25.0 * (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / (2.0 * 0.15 * 0.15)).exp()
    })
}

/// Lowest-mode initial conductance of the reference configuration.
pub fn default_m0(grid: &Grid2D) -> VectorField2 {
    VectorField2::from_fns(
        grid.clone(),
        |x, y| 0.5 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin(),
        |x, y| -0.5 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin(),
    )
    .zeroed_boundary()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{InteriorOperator, PressureSystem};
    use crate::grid::lp_norm;
    use std::f64::consts::PI;

    #[test]
    fn zero_data_stays_exactly_zero() {
        let g = Grid2D::unit_square(12).unwrap();
        let m0 = VectorField2::zeros(g.clone());
        let s = ScalarField::zeros(g.clone());
        let mut cfg = SimulationConfig::new(&g, 0.1);
        cfg.snapshot_stride = 2;
        let traj = run_simulation(&m0, &s, &cfg).unwrap();
        assert!(traj.records.len() > 2);
        let fin = &traj.final_state;
        assert!(fin.m.c1().iter().all(|&x| x == 0.0));
        assert!(fin.m.c2().iter().all(|&x| x == 0.0));
        assert!(fin.p.values().iter().all(|&x| x == 0.0));
        for r in &traj.records {
            assert_eq!(r.sup_v, 0.0);
            assert_eq!(r.energy5_rel_residual, 0.0);
            assert_eq!(r.energy6_rel_residual, 0.0);
            assert_eq!(r.cg_iters, 0);
        }
        let fit = gradient_bound_monitor(&traj, &cfg.params);
        assert_eq!(fit.c1, 0.0);
        assert_eq!(fit.c2, 0.0);
    }

    #[test]
    fn t_zero_gives_single_state() {
        let g = Grid2D::unit_square(8).unwrap();
        let m0 = default_m0(&g);
        let s = default_source(&g);
        let cfg = SimulationConfig::new(&g, 0.0);
        let traj = run_simulation(&m0, &s, &cfg).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.final_state.t, 0.0);
        assert_eq!(traj.records[0].energy5_rel_residual, 0.0);
    }

    #[test]
    fn decoupled_step_matches_discrete_eigen_amplification() {
        // With beta = 0, gamma = 1, s = 0 the update is linear and
        // sin(a pi x) sin(b pi y) is an exact discrete eigenfunction:
        // one IMEX step multiplies it by (1 - dt) / (1 + dt alpha^2 mu).
        let g = Grid2D::unit_square(16).unwrap();
        let h = g.hx();
        let (a, b) = (1.0f64, 2.0f64);
        let mu = (4.0 / (h * h)) * ((a * PI * h / 2.0).sin().powi(2))
            + (4.0 / (h * h)) * ((b * PI * h / 2.0).sin().powi(2));
        let params = Params {
            beta: 0.0,
            alpha: 0.8,
            ..Params::default()
        };
        let dt = 0.01;
        let rho = (1.0 - dt) / (1.0 + dt * params.alpha * params.alpha * mu);

        let mode = |x: f64, y: f64| (a * PI * x).sin() * (b * PI * y).sin();
        let m0 = VectorField2::from_fns(g.clone(), mode, |x, y| -0.5 * mode(x, y))
            .zeroed_boundary();
        let s = ScalarField::zeros(g.clone());
        let state = State::new(m0.clone(), ScalarField::zeros(g.clone()), 0.0).unwrap();
        let tight = SolverOptions {
            rel_tol: 1e-13,
            ..SolverOptions::default()
        };
        let (next, _) = step_conductance(&state, &s, &params, dt, &tight).unwrap();
        let mut worst = 0.0f64;
        for k in 0..g.n_nodes() {
            worst = worst.max((next.m.c1()[k] - rho * m0.c1()[k]).abs());
            worst = worst.max((next.m.c2()[k] - rho * m0.c2()[k]).abs());
        }
        assert!(worst < 1e-10, "eigenmode amplification defect {worst}");
    }

    #[test]
    fn decoupled_decay_tracks_continuum_rate() {
        // beta = 0, gamma = 1: each mode decays like exp(-(1 + alpha^2 mu) t)
        // in the continuum; the IMEX orbit converges to it as dt -> 0.
        let g = Grid2D::unit_square(32).unwrap();
        let mode = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let m0 = VectorField2::from_fns(g.clone(), mode, mode).zeroed_boundary();
        let s = ScalarField::zeros(g.clone());
        let params = Params {
            beta: 0.0,
            ..Params::default()
        };
        let t_final = 0.25;
        let mut gaps = Vec::new();
        for steps in [32usize, 64] {
            let cfg = SimulationConfig {
                params,
                dt: t_final / steps as f64,
                t_final,
                snapshot_stride: 0,
                solver: SolverOptions::default(),
            };
            let traj = run_simulation(&m0, &s, &cfg).unwrap();
            // Continuum factor for the (1,1) mode of the discrete operator.
            let h = g.hx();
            let mu = 2.0 * (4.0 / (h * h)) * ((PI * h / 2.0).sin().powi(2));
            let target = (-(1.0 + mu) * t_final).exp();
            let got = traj.final_state.m.c1()[g.idx(16, 16)] / m0.c1()[g.idx(16, 16)];
            gaps.push((got - target).abs());
        }
        let ratio = gaps[0] / gaps[1];
        assert!(
            (1.5..3.0).contains(&ratio),
            "first-order in dt expected, ratio {ratio}, gaps {gaps:?}"
        );
    }

    #[test]
    fn l2_norm_nonincreasing_in_decoupled_decay() {
        let g = Grid2D::unit_square(16).unwrap();
        let m0 = VectorField2::from_fns(
            g.clone(),
            |x, y| (PI * x).sin() * (2.0 * PI * y).sin(),
            |x, y| 0.3 * (2.0 * PI * x).sin() * (PI * y).sin(),
        )
        .zeroed_boundary();
        let s = ScalarField::zeros(g.clone());
        let cfg = SimulationConfig {
            params: Params {
                beta: 0.0,
                ..Params::default()
            },
            ..SimulationConfig::new(&g, 0.2)
        };
        let traj = run_simulation(&m0, &s, &cfg).unwrap();
        for win in traj.records.windows(2) {
            assert!(
                win[1].l2_m <= win[0].l2_m + 1e-12,
                "decay run must not grow: {} -> {}",
                win[0].l2_m,
                win[1].l2_m
            );
        }
    }

    #[test]
    fn boundary_zero_every_step_and_symmetry_preserved() {
        let g = Grid2D::unit_square(16).unwrap();
        // Data symmetric under the diagonal swap (x, y) -> (y, x) with both
        // components equal stays symmetric: m1(x,y) = m2(y,x) at all times.
        let m0 = VectorField2::from_fns(
            g.clone(),
            |x, y| 0.4 * (PI * x).sin() * (PI * y).sin(),
            |x, y| 0.4 * (PI * x).sin() * (PI * y).sin(),
        )
        .zeroed_boundary();
        let s = default_source(&g);
        let mut cfg = SimulationConfig::new(&g, 0.1);
        cfg.snapshot_stride = 1;
        let traj = run_simulation(&m0, &s, &cfg).unwrap();
        for snap in &traj.snapshots {
            snap.check_boundary().unwrap();
            let mut worst = 0.0f64;
            for (i, j) in g.iter_nodes() {
                worst = worst.max((snap.m.at(i, j).0 - snap.m.at(j, i).1).abs());
                worst = worst.max((snap.p.at(i, j) - snap.p.at(j, i)).abs());
            }
            let scale = lp_norm(&snap.p, f64::INFINITY, None).unwrap().max(1.0);
            assert!(
                worst < 1e-7 * scale,
                "diagonal symmetry broken at t = {}: {worst}",
                snap.t
            );
        }
    }

    #[test]
    fn testing_identity_holds_each_step() {
        // Interior summation by parts: <M p, p> = <s, p> once p solves the
        // discrete system, so the plain-product defect is at solver level.
        let g = Grid2D::unit_square(16).unwrap();
        let m0 = default_m0(&g);
        let s = default_source(&g);
        let mut cfg = SimulationConfig::new(&g, 0.05);
        cfg.snapshot_stride = 1;
        let traj = run_simulation(&m0, &s, &cfg).unwrap();
        for snap in &traj.snapshots {
            let sys = PressureSystem::from_m(&snap.m).unwrap();
            let (nx, ny) = (g.nx(), g.ny());
            let mut interior_p = Vec::new();
            let mut interior_s = Vec::new();
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    interior_p.push(snap.p.at(i, j));
                    interior_s.push(s.at(i, j));
                }
            }
            let mut full = vec![0.0; g.n_nodes()];
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    full[g.idx(i, j)] = snap.p.at(i, j);
                }
            }
            let mut out = vec![0.0; interior_p.len()];
            sys.apply_from_full(&full, &mut out);
            let mp_p: f64 = out.iter().zip(&interior_p).map(|(a, b)| a * b).sum();
            let s_p: f64 = interior_s.iter().zip(&interior_p).map(|(a, b)| a * b).sum();
            let defect = (mp_p - s_p).abs() / s_p.abs().max(1e-30);
            assert!(defect < 1e-7, "testing identity defect {defect} at t={}", snap.t);
        }
    }

    #[test]
    fn sup_v_dominates_sup_grad_p_squared() {
        let g = Grid2D::unit_square(16).unwrap();
        let traj = run_simulation(
            &default_m0(&g),
            &default_source(&g),
            &SimulationConfig::new(&g, 0.1),
        )
        .unwrap();
        for r in &traj.records {
            assert!(r.sup_v >= r.sup_grad_p * r.sup_grad_p - 1e-10);
            assert!(r.t >= 0.0 && r.sup_v.is_finite());
        }
    }

    #[test]
    fn energy_residuals_shrink_under_refinement() {
        let mut res5 = Vec::new();
        let mut res6 = Vec::new();
        for (cells, steps) in [(16usize, 32usize), (32, 64)] {
            let g = Grid2D::unit_square(cells).unwrap();
            let cfg = SimulationConfig {
                params: Params::default(),
                dt: 0.25 / steps as f64 * 4.0,
                t_final: 0.25,
                snapshot_stride: 0,
                solver: SolverOptions::default(),
            };
            let traj = run_simulation(&default_m0(&g), &default_source(&g), &cfg).unwrap();
            let r5 = energy_identity_5(&traj, 0.25).unwrap();
            let r6 = energy_identity_6(&traj, 0.25).unwrap();
            res5.push(r5.rel_residual);
            res6.push(r6.rel_residual);
        }
        assert!(
            res5[1] < res5[0],
            "balance residual must shrink: {res5:?}"
        );
        assert!(
            res6[1] < res6[0] * 1.05,
            "second balance must not grow: {res6:?}"
        );
    }

    #[test]
    fn energy_report_time_handling() {
        let g = Grid2D::unit_square(8).unwrap();
        let traj = run_simulation(
            &default_m0(&g),
            &default_source(&g),
            &SimulationConfig::new(&g, 0.05),
        )
        .unwrap();
        assert!(energy_identity_5(&traj, 0.02).is_ok());
        assert!(matches!(
            energy_identity_5(&traj, 1.0),
            Err(Error::TimeOutsideTrajectory { .. })
        ));
        assert!(energy_identity_6(&traj, 0.0).unwrap().rel_residual == 0.0);
    }

    #[test]
    fn time_step_halving_self_consistency() {
        // First-order scheme: the final-time observable changes by O(dt),
        // so successive halvings shrink the change by about half.
        let g = Grid2D::unit_square(16).unwrap();
        let m0 = default_m0(&g);
        let s = default_source(&g);
        let run = |steps: usize| {
            let cfg = SimulationConfig {
                params: Params::default(),
                dt: 0.25 / steps as f64,
                t_final: 0.25,
                snapshot_stride: 0,
                solver: SolverOptions::default(),
            };
            let traj = run_simulation(&m0, &s, &cfg).unwrap();
            traj.records.last().unwrap().sup_grad_p
        };
        let (g1, g2, g3) = (run(16), run(32), run(64));
        let d1 = (g1 - g2).abs();
        let d2 = (g2 - g3).abs();
        assert!(d2 < d1, "halving dt must reduce the change: {d1} vs {d2}");
        let ratio = d1 / d2;
        assert!(
            (1.4..3.4).contains(&ratio),
            "expected roughly first order in dt, ratio {ratio}"
        );
    }

    #[test]
    fn abort_keeps_partial_trajectory() {
        let g = Grid2D::unit_square(8).unwrap();
        let m0 = default_m0(&g);
        let s = default_source(&g);
        let cfg = SimulationConfig {
            params: Params::default(),
            dt: 0.01,
            t_final: 0.05,
            snapshot_stride: 0,
            solver: SolverOptions {
                rel_tol: 1e-10,
                max_iters: 1,
            },
        };
        match run_simulation(&m0, &s, &cfg) {
            Err(abort) => {
                assert!(matches!(
                    abort.error,
                    Error::ImplicitSolve { .. } | Error::SolverStalled { .. }
                ));
            }
            Ok(_) => panic!("expected an aborted run"),
        }
        // Bad config reports before any work.
        let bad = SimulationConfig {
            dt: -1.0,
            ..SimulationConfig::new(&g, 0.1)
        };
        let abort = run_simulation(&m0, &s, &bad).unwrap_err();
        assert!(matches!(abort.error, Error::BadParameter { name: "dt", .. }));
        assert!(abort.partial.records.is_empty());
    }

    #[test]
    fn gradient_bound_fit_matches_definition() {
        let g = Grid2D::unit_square(16).unwrap();
        let cfg = SimulationConfig::new(&g, 0.2);
        let traj = run_simulation(&default_m0(&g), &default_source(&g), &cfg).unwrap();
        let fit = gradient_bound_monitor(&traj, &cfg.params);
        assert!(fit.c1 > 0.0 && fit.c1.is_finite());
        assert!(fit.c2 > 0.0 && fit.c2.is_finite());
        // The fitted constants make both bounds hold with equality at the
        // binding record.
        let two_r = 2.0 * cfg.params.r_exp;
        for r in &traj.records {
            assert!(r.sup_v <= fit.c1 * (r.sup_grad_m.powf(two_r) + 1.0) + 1e-12);
        }
        let rate = cfg
            .t_final
            .powf(-1.0 + cfg.params.delta_exp / 2.0);
        let bound = fit.c2 * (rate * (fit.sup_grad_p_run.powi(2) + 1.0) + 1.0);
        assert!(fit.sup_grad_m_run <= bound + 1e-12);
    }
}
