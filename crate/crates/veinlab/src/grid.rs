//! Structured rectangular grids, nodal fields, and second-order
//! finite-difference operators.
//!
//! All fields are collocated at grid nodes and stored row-major
//! (`index = j * nx + i`). Derivatives use central differences in the
//! interior and one-sided second-order stencils on the boundary, so every
//! operator is second-order accurate up to and including boundary nodes.
//! Integrals and `L^p` norms use trapezoidal cell weights (half weight on
//! edges, quarter weight on corners).

use crate::error::{Error, Result};

/// Uniform rectangular grid of `nx * ny` nodes with spacings `hx`, `hy`
/// and lower-left corner `(x0, y0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    x0: f64,
    y0: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::GridTooSmall { nx, ny });
        }
        if !(hx.is_finite() && hy.is_finite() && hx > 0.0 && hy > 0.0) {
            return Err(Error::BadSpacing { hx, hy });
        }
        Ok(Grid2D {
            nx,
            ny,
            hx,
            hy,
            x0,
            y0,
        })
    }

    /// Unit square `[0,1]^2` split into `cells x cells` cells, so
    /// `cells + 1` nodes per axis and spacing `1 / cells`.
    pub fn unit_square(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::GridTooSmall {
                nx: cells + 1,
                ny: cells + 1,
            });
        }
        let h = 1.0 / cells as f64;
        Grid2D::new(cells + 1, cells + 1, h, h, 0.0, 0.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Inverse of [`idx`](Self::idx).
    #[inline]
    pub fn pos(&self, k: usize) -> (usize, usize) {
        debug_assert!(k < self.n_nodes());
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    #[inline]
    pub fn cell_weight(&self, i: usize, j: usize) -> f64 {
        let cx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let cy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        cx * cy * self.hx * self.hy
    }

    pub fn area(&self) -> f64 {
        (self.nx - 1) as f64 * self.hx * (self.ny - 1) as f64 * self.hy
    }

    /// Row-major iterator over node indices `(i, j)`.
    pub fn iter_nodes(&self) -> impl Iterator<Item = (usize, usize)> {
        let nx = self.nx;
        let ny = self.ny;
        (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j)))
    }
}

/// Scalar field sampled at the nodes of a [`Grid2D`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::FieldLength {
                got: values.len(),
                want: grid.n_nodes(),
            });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        let n = grid.n_nodes();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_nodes());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = value;
    }

    /// Errors with the offending node if any value is not finite.
    pub fn ensure_finite(&self, field: &'static str) -> Result<()> {
        for (k, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                let (i, j) = self.grid.pos(k);
                return Err(Error::NonFinite {
                    field,
                    i,
                    j,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Pointwise map onto a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Set the boundary ring to exactly zero (see
    /// [`VectorField2::zeroed_boundary`]).
    pub fn zeroed_boundary(mut self) -> Self {
        let grid = self.grid.clone();
        for (i, j) in grid.iter_nodes() {
            if grid.is_boundary(i, j) {
                self.values[grid.idx(i, j)] = 0.0;
            }
        }
        self
    }
}

/// Vector field with components `(c1, c2)` along the two axes.
#[derive(Debug, Clone)]
pub struct VectorField2 {
    grid: Grid2D,
    c1: Vec<f64>,
    c2: Vec<f64>,
}

impl VectorField2 {
    pub fn new(grid: Grid2D, c1: Vec<f64>, c2: Vec<f64>) -> Result<Self> {
        if c1.len() != grid.n_nodes() || c2.len() != grid.n_nodes() {
            return Err(Error::FieldLength {
                got: c1.len().max(c2.len()),
                want: grid.n_nodes(),
            });
        }
        Ok(VectorField2 { grid, c1, c2 })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        let n = grid.n_nodes();
        VectorField2 {
            grid,
            c1: vec![0.0; n],
            c2: vec![0.0; n],
        }
    }

    pub fn from_fns(
        grid: Grid2D,
        f1: impl Fn(f64, f64) -> f64,
        f2: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let a = ScalarField::from_fn(grid.clone(), f1);
        let b = ScalarField::from_fn(grid.clone(), f2);
        VectorField2 {
            grid,
            c1: a.values,
            c2: b.values,
        }
    }

    pub fn from_components(c1: ScalarField, c2: ScalarField) -> Result<Self> {
        if c1.grid != c2.grid {
            return Err(Error::GridMismatch);
        }
        Ok(VectorField2 {
            grid: c1.grid,
            c1: c1.values,
            c2: c2.values,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn c1(&self) -> &[f64] {
        &self.c1
    }

    pub fn c2(&self) -> &[f64] {
        &self.c2
    }

    pub fn c1_mut(&mut self) -> &mut [f64] {
        &mut self.c1
    }

    pub fn c2_mut(&mut self) -> &mut [f64] {
        &mut self.c2
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.grid.idx(i, j);
        (self.c1[k], self.c2[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v1: f64, v2: f64) {
        let k = self.grid.idx(i, j);
        self.c1[k] = v1;
        self.c2[k] = v2;
    }

    /// Set both components to exactly zero on the boundary ring, as
    /// required of Dirichlet-compatible data (analytic formulas often
    /// leave rounding dust there).
    pub fn zeroed_boundary(mut self) -> Self {
        let grid = self.grid.clone();
        for (i, j) in grid.iter_nodes() {
            if grid.is_boundary(i, j) {
                let k = grid.idx(i, j);
                self.c1[k] = 0.0;
                self.c2[k] = 0.0;
            }
        }
        self
    }

    /// Pointwise Euclidean magnitude `sqrt(c1^2 + c2^2)`.
    pub fn magnitude(&self) -> ScalarField {
        let values = self
            .c1
            .iter()
            .zip(&self.c2)
            .map(|(&a, &b)| a.hypot(b))
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn component(&self, which: usize) -> ScalarField {
        let values = if which == 0 {
            self.c1.clone()
        } else {
            self.c2.clone()
        };
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn ensure_finite(&self, field: &'static str) -> Result<()> {
        for (k, (&a, &b)) in self.c1.iter().zip(&self.c2).enumerate() {
            if !(a.is_finite() && b.is_finite()) {
                let (i, j) = self.grid.pos(k);
                return Err(Error::NonFinite {
                    field,
                    i,
                    j,
                    value: if a.is_finite() { b } else { a },
                });
            }
        }
        Ok(())
    }
}

/// 2x2 matrix field. Entry `(r, c)` is the value at matrix row `r`,
/// column `c`. A symmetric field stores `a12` once, so `a12 == a21`
/// holds exactly.
#[derive(Debug, Clone)]
pub struct Matrix2Field {
    grid: Grid2D,
    a11: Vec<f64>,
    a12: Vec<f64>,
    /// `None` means the field is symmetric and `a21` aliases `a12`.
    a21: Option<Vec<f64>>,
    a22: Vec<f64>,
}

impl Matrix2Field {
    pub fn symmetric(grid: Grid2D, a11: Vec<f64>, a12: Vec<f64>, a22: Vec<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        if a11.len() != n || a12.len() != n || a22.len() != n {
            return Err(Error::FieldLength {
                got: a11.len().max(a12.len()).max(a22.len()),
                want: n,
            });
        }
        Ok(Matrix2Field {
            grid,
            a11,
            a12,
            a21: None,
            a22,
        })
    }

    pub fn full(
        grid: Grid2D,
        a11: Vec<f64>,
        a12: Vec<f64>,
        a21: Vec<f64>,
        a22: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        if a11.len() != n || a12.len() != n || a21.len() != n || a22.len() != n {
            return Err(Error::FieldLength {
                got: a11.len(),
                want: n,
            });
        }
        Ok(Matrix2Field {
            grid,
            a11,
            a12,
            a21: Some(a21),
            a22,
        })
    }

    pub fn identity(grid: Grid2D) -> Self {
        let n = grid.n_nodes();
        Matrix2Field {
            grid,
            a11: vec![1.0; n],
            a12: vec![0.0; n],
            a21: None,
            a22: vec![1.0; n],
        }
    }

    pub fn from_fns(
        grid: Grid2D,
        f11: impl Fn(f64, f64) -> f64,
        f12: impl Fn(f64, f64) -> f64,
        f21: impl Fn(f64, f64) -> f64,
        f22: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let a11 = ScalarField::from_fn(grid.clone(), f11).values;
        let a12 = ScalarField::from_fn(grid.clone(), f12).values;
        let a21 = ScalarField::from_fn(grid.clone(), f21).values;
        let a22 = ScalarField::from_fn(grid.clone(), f22).values;
        Matrix2Field {
            grid,
            a11,
            a12,
            a21: Some(a21),
            a22,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn is_symmetric(&self) -> bool {
        self.a21.is_none()
    }

    pub fn a11(&self) -> &[f64] {
        &self.a11
    }

    pub fn a12(&self) -> &[f64] {
        &self.a12
    }

    pub fn a21(&self) -> &[f64] {
        self.a21.as_deref().unwrap_or(&self.a12)
    }

    pub fn a22(&self) -> &[f64] {
        &self.a22
    }

    /// Matrix value at node `(i, j)` as `(a11, a12, a21, a22)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> (f64, f64, f64, f64) {
        let k = self.grid.idx(i, j);
        let a21 = match &self.a21 {
            Some(v) => v[k],
            None => self.a12[k],
        };
        (self.a11[k], self.a12[k], a21, self.a22[k])
    }

    /// Pointwise matrix-vector product.
    pub fn apply(&self, f: &VectorField2) -> Result<VectorField2> {
        if self.grid != f.grid {
            return Err(Error::GridMismatch);
        }
        let n = self.grid.n_nodes();
        let a21 = self.a21();
        let mut c1 = Vec::with_capacity(n);
        let mut c2 = Vec::with_capacity(n);
        for k in 0..n {
            c1.push(self.a11[k] * f.c1[k] + self.a12[k] * f.c2[k]);
            c2.push(a21[k] * f.c1[k] + self.a22[k] * f.c2[k]);
        }
        // a21() borrows self, so build after the loop.
        Ok(VectorField2 {
            grid: self.grid.clone(),
            c1,
            c2,
        })
    }

    /// Pointwise Frobenius norm.
    pub fn frobenius(&self) -> ScalarField {
        let a21 = self.a21.as_deref().unwrap_or(&self.a12);
        let values = (0..self.grid.n_nodes())
            .map(|k| {
                (self.a11[k] * self.a11[k]
                    + self.a12[k] * self.a12[k]
                    + a21[k] * a21[k]
                    + self.a22[k] * self.a22[k])
                    .sqrt()
            })
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }
}

// ---------------------------------------------------------------------------
// 1D difference stencils
// ---------------------------------------------------------------------------

/// First derivative along a 1D line given by `get(k)`, `k = 0..n`.
/// Central in the interior, one-sided second order at the ends.
#[inline]
fn d1_line(get: impl Fn(usize) -> f64, n: usize, h: f64, k: usize) -> f64 {
    if k == 0 {
        (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
    } else if k == n - 1 {
        (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h)
    } else {
        (get(k + 1) - get(k - 1)) / (2.0 * h)
    }
}

/// Second derivative along a 1D line. Central in the interior; at the ends
/// a one-sided four-point stencil (second order) when the line is long
/// enough, otherwise the three-point constant-curvature value.
#[inline]
fn d2_line(get: impl Fn(usize) -> f64, n: usize, h: f64, k: usize) -> f64 {
    let h2 = h * h;
    if k == 0 {
        if n >= 4 {
            (2.0 * get(0) - 5.0 * get(1) + 4.0 * get(2) - get(3)) / h2
        } else {
            (get(0) - 2.0 * get(1) + get(2)) / h2
        }
    } else if k == n - 1 {
        if n >= 4 {
            (2.0 * get(n - 1) - 5.0 * get(n - 2) + 4.0 * get(n - 3) - get(n - 4)) / h2
        } else {
            (get(n - 1) - 2.0 * get(n - 2) + get(n - 3)) / h2
        }
    } else {
        (get(k - 1) - 2.0 * get(k) + get(k + 1)) / h2
    }
}

// ---------------------------------------------------------------------------
// Differential operators
// ---------------------------------------------------------------------------

/// Gradient `(df/dx, df/dy)`, second order at every node.
pub fn gradient(f: &ScalarField) -> VectorField2 {
    let g = &f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let n = g.n_nodes();
    let mut c1 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            c1[row + i] = d1_line(|k| f.values[row + k], nx, g.hx, i);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            c2[j * nx + i] = d1_line(|k| f.values[k * nx + i], ny, g.hy, j);
        }
    }
    VectorField2 {
        grid: g.clone(),
        c1,
        c2,
    }
}

/// Divergence `d(c1)/dx + d(c2)/dy`.
pub fn divergence(f: &VectorField2) -> ScalarField {
    let g = &f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut values = vec![0.0; g.n_nodes()];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            values[row + i] = d1_line(|k| f.c1[row + k], nx, g.hx, i);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            values[j * nx + i] += d1_line(|k| f.c2[k * nx + i], ny, g.hy, j);
        }
    }
    ScalarField {
        grid: g.clone(),
        values,
    }
}

/// Five-point Laplacian (one-sided second-derivative stencils on the
/// boundary).
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut values = vec![0.0; g.n_nodes()];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            values[row + i] = d2_line(|k| f.values[row + k], nx, g.hx, i);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            values[j * nx + i] += d2_line(|k| f.values[k * nx + i], ny, g.hy, j);
        }
    }
    ScalarField {
        grid: g.clone(),
        values,
    }
}

/// Symmetric Hessian `[[fxx, fxy], [fxy, fyy]]`. The mixed derivative is
/// the x-derivative of the y-derivative; the 1D stencils along different
/// axes commute, so this choice is unbiased, and the result is stored
/// symmetric.
pub fn hessian(f: &ScalarField) -> Matrix2Field {
    let g = &f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let n = g.n_nodes();
    let mut fxx = vec![0.0; n];
    let mut fyy = vec![0.0; n];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            fxx[row + i] = d2_line(|k| f.values[row + k], nx, g.hx, i);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            fyy[j * nx + i] = d2_line(|k| f.values[k * nx + i], ny, g.hy, j);
        }
    }
    let gy = {
        let mut gy = vec![0.0; n];
        for i in 0..nx {
            for j in 0..ny {
                gy[j * nx + i] = d1_line(|k| f.values[k * nx + i], ny, g.hy, j);
            }
        }
        gy
    };
    let mut fxy = vec![0.0; n];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            fxy[row + i] = d1_line(|k| gy[row + k], nx, g.hx, i);
        }
    }
    Matrix2Field {
        grid: g.clone(),
        a11: fxx,
        a12: fxy,
        a21: None,
        a22: fyy,
    }
}

/// Jacobian of a vector field with entry `(r, c) = d(f_c)/d(x_r)`:
/// row = derivative direction, column = component.
pub fn jacobian(f: &VectorField2) -> Matrix2Field {
    let g1 = gradient(&f.component(0));
    let g2 = gradient(&f.component(1));
    Matrix2Field {
        grid: f.grid.clone(),
        a11: g1.c1,
        a12: g2.c1,
        a21: Some(g1.c2),
        a22: g2.c2,
    }
}

/// Anisotropic diffusion `div(A grad f)` for symmetric `A`.
///
/// Interior nodes use the conservative form: face fluxes with
/// arithmetically averaged diagonal coefficients, and central mixed terms
/// with node-centered `a12` (the combination keeps the assembled operator
/// exactly symmetric). Boundary nodes use the expanded form
/// `A : hess f + div A . grad f` with one-sided stencils.
pub fn div_anisotropic(a: &Matrix2Field, f: &ScalarField) -> Result<ScalarField> {
    if !a.is_symmetric() {
        return Err(Error::NonSymmetricMatrix);
    }
    if a.grid != f.grid {
        return Err(Error::GridMismatch);
    }
    let g = &f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut values = vec![0.0; g.n_nodes()];

    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            values[j * nx + i] = aniso_interior(
                &a.a11,
                &a.a12,
                &a.a22,
                |k| f.values[k],
                nx,
                g.hx,
                g.hy,
                i,
                j,
            );
        }
    }

    // Boundary: expanded non-conservative form with one-sided stencils.
    let grad_f = gradient(f);
    let hess_f = hessian(f);
    let da11 = gradient(&ScalarField {
        grid: g.clone(),
        values: a.a11.clone(),
    });
    let da12 = gradient(&ScalarField {
        grid: g.clone(),
        values: a.a12.clone(),
    });
    let da22 = gradient(&ScalarField {
        grid: g.clone(),
        values: a.a22.clone(),
    });
    for j in 0..ny {
        for i in 0..nx {
            if !g.is_boundary(i, j) {
                continue;
            }
            let k = g.idx(i, j);
            let (fxx, fxy, _, fyy) = hess_f.at(i, j);
            let (fx, fy) = grad_f.at(i, j);
            let div_col1 = da11.c1[k] + da12.c2[k];
            let div_col2 = da12.c1[k] + da22.c2[k];
            values[k] = a.a11[k] * fxx
                + 2.0 * a.a12[k] * fxy
                + a.a22[k] * fyy
                + div_col1 * fx
                + div_col2 * fy;
        }
    }

    Ok(ScalarField {
        grid: g.clone(),
        values,
    })
}

/// Interior stencil of `div(A grad f)` shared with the assembled pressure
/// operator. `get(k)` reads the row-major nodal value of `f`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn aniso_interior(
    a11: &[f64],
    a12: &[f64],
    a22: &[f64],
    get: impl Fn(usize) -> f64,
    nx: usize,
    hx: f64,
    hy: f64,
    i: usize,
    j: usize,
) -> f64 {
    let k = j * nx + i;
    let ke = k + 1;
    let kw = k - 1;
    let kn = k + nx;
    let ks = k - nx;

    let fe = 0.5 * (a11[k] + a11[ke]) * (get(ke) - get(k));
    let fw = 0.5 * (a11[kw] + a11[k]) * (get(k) - get(kw));
    let fn_ = 0.5 * (a22[k] + a22[kn]) * (get(kn) - get(k));
    let fs = 0.5 * (a22[ks] + a22[k]) * (get(k) - get(ks));
    let diag = (fe - fw) / (hx * hx) + (fn_ - fs) / (hy * hy);

    // d/dx(a12 df/dy) + d/dy(a12 df/dx), both with central differences.
    let dy_e = (get(ke + nx) - get(ke - nx)) / (2.0 * hy);
    let dy_w = (get(kw + nx) - get(kw - nx)) / (2.0 * hy);
    let dx_n = (get(kn + 1) - get(kn - 1)) / (2.0 * hx);
    let dx_s = (get(ks + 1) - get(ks - 1)) / (2.0 * hx);
    let mixed = (a12[ke] * dy_e - a12[kw] * dy_w) / (2.0 * hx)
        + (a12[kn] * dx_n - a12[ks] * dx_s) / (2.0 * hy);

    diag + mixed
}

// ---------------------------------------------------------------------------
// Norms and integrals
// ---------------------------------------------------------------------------

/// Trapezoid integral of `f` over the (optionally masked) domain.
pub fn integrate(f: &ScalarField, mask: Option<&[bool]>) -> Result<f64> {
    masked_reduce(f, mask, |acc, w, v| acc + w * v)
}

/// `L^p` norm with trapezoidal cell weights; `p = f64::INFINITY` gives the
/// max norm over the (optionally masked) nodes.
pub fn lp_norm(f: &ScalarField, p: f64, mask: Option<&[bool]>) -> Result<f64> {
    if p.is_infinite() && p > 0.0 {
        return masked_reduce(f, mask, |acc, _, v| acc.max(v.abs()));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::BadExponent { p });
    }
    let s = masked_reduce(f, mask, |acc, w, v| acc + w * v.abs().powf(p))?;
    Ok(s.powf(1.0 / p))
}

fn masked_reduce(
    f: &ScalarField,
    mask: Option<&[bool]>,
    op: impl Fn(f64, f64, f64) -> f64,
) -> Result<f64> {
    if let Some(m) = mask {
        if m.len() != f.grid.n_nodes() {
            return Err(Error::FieldLength {
                got: m.len(),
                want: f.grid.n_nodes(),
            });
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::EmptyMask);
        }
    }
    let g = &f.grid;
    let mut acc = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = j * g.nx + i;
            if mask.map_or(true, |m| m[k]) {
                acc = op(acc, g.cell_weight(i, j), f.values[k]);
            }
        }
    }
    Ok(acc)
}

/// Both sides of the interpolation bound
/// `||f||_q <= eps ||f||_r + eps^(-mu) ||f||_l` with
/// `mu = (1/l - 1/q) / (1/q - 1/r)`, for `1 <= l < q < r <= inf`.
#[derive(Debug, Clone, Copy)]
pub struct InterpolationBound {
    pub lhs: f64,
    pub rhs: f64,
    pub mu: f64,
}

pub fn interpolation_bound(
    f: &ScalarField,
    ell: f64,
    q: f64,
    r: f64,
    eps: f64,
) -> Result<InterpolationBound> {
    if !(ell >= 1.0 && ell < q && q < r) {
        return Err(Error::BadExponent { p: q });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::BadParameter {
            name: "eps",
            value: eps,
            constraint: "eps must be positive and finite".into(),
        });
    }
    let inv = |p: f64| if p.is_infinite() { 0.0 } else { 1.0 / p };
    let mu = (inv(ell) - inv(q)) / (inv(q) - inv(r));
    let lhs = lp_norm(f, q, None)?;
    let rhs = eps * lp_norm(f, r, None)? + eps.powf(-mu) * lp_norm(f, ell, None)?;
    Ok(InterpolationBound { lhs, rhs, mu })
}

// ---------------------------------------------------------------------------
// Matrix calculus identity residuals
// ---------------------------------------------------------------------------

/// Max-norm residuals of four product/divergence rules evaluated with the
/// discrete operators:
///
/// 1. `grad(F . G) = (grad F) G + (grad G) F`
/// 2. `div(A F) = A : grad F + (div A) . F`
/// 3. `grad(A F) = (grad F) A^T + (A_x1 F, A_x2 F)^T`
/// 4. `div(p A) = p div A + (grad p)^T A`
///
/// Here `grad F` has entry `(r, c) = d(f_c)/d(x_r)` and `div A` is the row
/// vector of column divergences. Each residual is `O(h^2)` for smooth data
/// because both sides discretize the same exact identity.
#[derive(Debug, Clone, Copy)]
pub struct CalculusResiduals {
    pub product_rule: f64,
    pub matrix_divergence: f64,
    pub matrix_gradient: f64,
    pub scalar_matrix_divergence: f64,
}

pub fn calculus_identities_check(
    a: &Matrix2Field,
    f: &VectorField2,
    g: &VectorField2,
    p: &ScalarField,
) -> Result<CalculusResiduals> {
    let grid = a.grid.clone();
    if f.grid != grid || g.grid != grid || p.grid != grid {
        return Err(Error::GridMismatch);
    }
    let n = grid.n_nodes();
    let a21 = a.a21().to_vec();

    // Shared discrete derivatives.
    let jf = jacobian(f);
    let jg = jacobian(g);
    let gp = gradient(p);
    let da11 = gradient(&ScalarField {
        grid: grid.clone(),
        values: a.a11.clone(),
    });
    let da12 = gradient(&ScalarField {
        grid: grid.clone(),
        values: a.a12.clone(),
    });
    let da21 = gradient(&ScalarField {
        grid: grid.clone(),
        values: a21.clone(),
    });
    let da22 = gradient(&ScalarField {
        grid: grid.clone(),
        values: a.a22.clone(),
    });
    // div A = (div of column 1, div of column 2).
    let diva1: Vec<f64> = (0..n).map(|k| da11.c1[k] + da21.c2[k]).collect();
    let diva2: Vec<f64> = (0..n).map(|k| da12.c1[k] + da22.c2[k]).collect();

    // 1. grad(F . G) vs (grad F) G + (grad G) F
    let dot_fg = ScalarField {
        grid: grid.clone(),
        values: (0..n)
            .map(|k| f.c1[k] * g.c1[k] + f.c2[k] * g.c2[k])
            .collect(),
    };
    let lhs1 = gradient(&dot_fg);
    let mut r1 = 0.0f64;
    for k in 0..n {
        let rhs_x = jf.a11[k] * g.c1[k] + jf.a12[k] * g.c2[k] + jg.a11[k] * f.c1[k]
            + jg.a12[k] * f.c2[k];
        let rhs_y = jf.a21.as_ref().unwrap()[k] * g.c1[k]
            + jf.a22[k] * g.c2[k]
            + jg.a21.as_ref().unwrap()[k] * f.c1[k]
            + jg.a22[k] * f.c2[k];
        r1 = r1.max((lhs1.c1[k] - rhs_x).abs()).max((lhs1.c2[k] - rhs_y).abs());
    }

    // Nodal product A F.
    let af = VectorField2 {
        grid: grid.clone(),
        c1: (0..n).map(|k| a.a11[k] * f.c1[k] + a.a12[k] * f.c2[k]).collect(),
        c2: (0..n).map(|k| a21[k] * f.c1[k] + a.a22[k] * f.c2[k]).collect(),
    };

    // 2. div(A F) vs A : grad F + div A . F
    let lhs2 = divergence(&af);
    let jf21 = jf.a21.as_ref().unwrap();
    let mut r2 = 0.0f64;
    for k in 0..n {
        let contraction =
            a.a11[k] * jf.a11[k] + a.a12[k] * jf.a12[k] + a21[k] * jf21[k] + a.a22[k] * jf.a22[k];
        let rhs = contraction + diva1[k] * f.c1[k] + diva2[k] * f.c2[k];
        r2 = r2.max((lhs2.values[k] - rhs).abs());
    }

    // 3. grad(A F) vs (grad F) A^T + (A_x1 F, A_x2 F)^T
    let jaf = jacobian(&af);
    let jaf21 = jaf.a21.as_ref().unwrap();
    let mut r3 = 0.0f64;
    for k in 0..n {
        // (grad F A^T)(r, c) = sum_k jf(r, k) * a(c, k)
        let t11 = jf.a11[k] * a.a11[k] + jf.a12[k] * a.a12[k];
        let t12 = jf.a11[k] * a21[k] + jf.a12[k] * a.a22[k];
        let t21 = jf21[k] * a.a11[k] + jf.a22[k] * a.a12[k];
        let t22 = jf21[k] * a21[k] + jf.a22[k] * a.a22[k];
        // (A_xr F)(c) = sum_k d(a(c, k))/d(x_r) * f_k
        let s11 = da11.c1[k] * f.c1[k] + da12.c1[k] * f.c2[k];
        let s12 = da21.c1[k] * f.c1[k] + da22.c1[k] * f.c2[k];
        let s21 = da11.c2[k] * f.c1[k] + da12.c2[k] * f.c2[k];
        let s22 = da21.c2[k] * f.c1[k] + da22.c2[k] * f.c2[k];
        r3 = r3
            .max((jaf.a11[k] - (t11 + s11)).abs())
            .max((jaf.a12[k] - (t12 + s12)).abs())
            .max((jaf21[k] - (t21 + s21)).abs())
            .max((jaf.a22[k] - (t22 + s22)).abs());
    }

    // 4. div(p A) vs p div A + (grad p)^T A, column by column.
    let pa_col1 = VectorField2 {
        grid: grid.clone(),
        c1: (0..n).map(|k| p.values[k] * a.a11[k]).collect(),
        c2: (0..n).map(|k| p.values[k] * a21[k]).collect(),
    };
    let pa_col2 = VectorField2 {
        grid: grid.clone(),
        c1: (0..n).map(|k| p.values[k] * a.a12[k]).collect(),
        c2: (0..n).map(|k| p.values[k] * a.a22[k]).collect(),
    };
    let lhs4_1 = divergence(&pa_col1);
    let lhs4_2 = divergence(&pa_col2);
    let mut r4 = 0.0f64;
    for k in 0..n {
        let rhs1 = p.values[k] * diva1[k] + gp.c1[k] * a.a11[k] + gp.c2[k] * a21[k];
        let rhs2 = p.values[k] * diva2[k] + gp.c1[k] * a.a12[k] + gp.c2[k] * a.a22[k];
        r4 = r4
            .max((lhs4_1.values[k] - rhs1).abs())
            .max((lhs4_2.values[k] - rhs2).abs());
    }

    Ok(CalculusResiduals {
        product_rule: r1,
        matrix_divergence: r2,
        matrix_gradient: r3,
        scalar_matrix_divergence: r4,
    })
}
