//! A 2D numerical laboratory for a coupled pressure/conductance model of
//! biological transport networks.
//!
//! The continuous model couples a Darcy pressure equation,
//! `-div[(I + m m^T) grad p] = s` with `p = 0` on the boundary, to a
//! reaction-diffusion law for the conductance vector `m`,
//! `m_t - alpha^2 lap m + |m|^(2(gamma-1)) m = beta^2 (m . grad p) grad p`.
//! The crate discretizes both on structured grids and, beyond plain
//! simulation, numerically checks the algebraic and integral identities
//! that govern the gradient field: energy balances, the derived elliptic
//! equation for `v = A grad p . grad p`, a level-set iteration for bounding
//! `v`, and heat-kernel potential bounds for `grad m`.
//!
//! Modules:
//! - [`grid`]: structured grids, nodal fields, finite-difference operators
//! - [`model`]: model parameters, conductivity tensor, derived fields
//! - [`elliptic`]: symmetric positive definite pressure solve
//! - [`dynamics`]: semi-implicit time stepping and energy monitors
//! - [`verify`]: identity checks, manufactured solutions, level-set profiler
//! - [`heatpot`]: Duhamel heat potentials and gradient scaling
//! - [`config`]: run configuration parsing
//! - [`run`]: command-line entry points and file outputs

pub mod config;
pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod heatpot;
pub mod io;
pub mod model;
pub mod run;
pub mod verify;

pub use error::{Error, Result};

// Compile and run the code blocks of the guide as doctests, so the book
// cannot drift from the crate it documents.
#[cfg(doctest)]
mod booktest {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(grids_and_fields, "../../../book/src/grids-and-fields.md");
    chapter!(model, "../../../book/src/model.md");
    chapter!(pressure_solve, "../../../book/src/pressure-solve.md");
    chapter!(time_stepping, "../../../book/src/time-stepping.md");
    chapter!(derived_equation, "../../../book/src/derived-equation.md");
    chapter!(truncation_profile, "../../../book/src/truncation-profile.md");
    chapter!(heat_potential, "../../../book/src/heat-potential.md");
    chapter!(cli, "../../../book/src/cli.md");
}
