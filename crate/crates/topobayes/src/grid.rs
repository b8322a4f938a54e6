//! Uniform grids and piecewise-linear fields.
//!
//! A 1D field is the vector of knot values `y_j = q(x_j)` on a uniform
//! partition of `(a, b)`; a 2D field stores knot values of a tensor grid in
//! row-major order with the x index varying fastest:
//! `values[iy * (mx + 1) + ix]`.

use crate::error::{Error, Result};

/// Uniform 1D partition of `(a, b)` with knots `x_0 .. x_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub a: f64,
    pub b: f64,
    pub m: usize,
    pub h: f64,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, m: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Grid(format!("non-finite bounds ({a}, {b})")));
        }
        if b <= a {
            return Err(Error::Grid(format!("need b > a, got ({a}, {b})")));
        }
        if m < 2 {
            return Err(Error::Grid(format!("need m >= 2, got {m}")));
        }
        Ok(Grid1D {
            a,
            b,
            m,
            h: (b - a) / m as f64,
        })
    }

    pub fn n_knots(&self) -> usize {
        self.m + 1
    }

    /// Knot coordinate `x_j`. Endpoints are reproduced exactly; interior
    /// knots use the ratio form `a + (j/m)(b-a)` so that refining the grid
    /// by an integer factor reproduces shared knots bit-for-bit.
    pub fn knot(&self, j: usize) -> f64 {
        debug_assert!(j <= self.m);
        if j == 0 {
            self.a
        } else if j == self.m {
            self.b
        } else {
            self.a + (j as f64 / self.m as f64) * (self.b - self.a)
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.m).map(|j| self.knot(j)).collect()
    }

    /// Grid with the same bounds and `factor * m` intervals.
    pub fn refine(&self, factor: usize) -> Result<Grid1D> {
        Grid1D::new(self.a, self.b, self.m * factor)
    }
}

/// Uniform tensor grid on the rectangle `(ax, bx) x (ay, by)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub ax: f64,
    pub bx: f64,
    pub ay: f64,
    pub by: f64,
    pub mx: usize,
    pub my: usize,
    pub hx: f64,
    pub hy: f64,
}

impl Grid2D {
    pub fn new(ax: f64, bx: f64, ay: f64, by: f64, mx: usize, my: usize) -> Result<Self> {
        let gx = Grid1D::new(ax, bx, mx)?;
        let gy = Grid1D::new(ay, by, my)?;
        Ok(Grid2D {
            ax,
            bx,
            ay,
            by,
            mx,
            my,
            hx: gx.h,
            hy: gy.h,
        })
    }

    pub fn square(a: f64, b: f64, m: usize) -> Result<Self> {
        Grid2D::new(a, b, a, b, m, m)
    }

    pub fn nx(&self) -> usize {
        self.mx + 1
    }

    pub fn ny(&self) -> usize {
        self.my + 1
    }

    pub fn n_knots(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn x_axis(&self) -> Grid1D {
        Grid1D::new(self.ax, self.bx, self.mx).expect("validated at construction")
    }

    pub fn y_axis(&self) -> Grid1D {
        Grid1D::new(self.ay, self.by, self.my).expect("validated at construction")
    }

    /// Flattened index of knot `(ix, iy)`; x varies fastest.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.mx && iy <= self.my);
        iy * self.nx() + ix
    }

    /// Inverse of [`Grid2D::index`].
    pub fn unindex(&self, k: usize) -> (usize, usize) {
        (k % self.nx(), k / self.nx())
    }

    pub fn knot(&self, ix: usize, iy: usize) -> (f64, f64) {
        (self.x_axis().knot(ix), self.y_axis().knot(iy))
    }
}

/// Either a 1D partition or a 2D tensor grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    One(Grid1D),
    Two(Grid2D),
}

impl Grid {
    pub fn n_knots(&self) -> usize {
        match self {
            Grid::One(g) => g.n_knots(),
            Grid::Two(g) => g.n_knots(),
        }
    }

    pub fn as_1d(&self) -> Result<&Grid1D> {
        match self {
            Grid::One(g) => Ok(g),
            Grid::Two(_) => Err(Error::DimensionMismatch("expected a 1D grid".into())),
        }
    }

    pub fn as_2d(&self) -> Result<&Grid2D> {
        match self {
            Grid::Two(g) => Ok(g),
            Grid::One(_) => Err(Error::DimensionMismatch("expected a 2D grid".into())),
        }
    }
}

impl From<Grid1D> for Grid {
    fn from(g: Grid1D) -> Self {
        Grid::One(g)
    }
}

impl From<Grid2D> for Grid {
    fn from(g: Grid2D) -> Self {
        Grid::Two(g)
    }
}

/// Knot values of a piecewise-linear function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if values.len() != grid.n_knots() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values for {} knots",
                values.len(),
                grid.n_knots()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at knot {i}")));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: impl Into<Grid>) -> Self {
        let grid = grid.into();
        let n = grid.n_knots();
        Field {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: impl Into<Grid>, c: f64) -> Result<Self> {
        let grid = grid.into();
        let n = grid.n_knots();
        Field::new(grid, vec![c; n])
    }

    /// Sample a function of the knot coordinates (1D grids).
    pub fn from_fn_1d(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..=grid.m).map(|j| f(grid.knot(j))).collect();
        Field::new(grid, values)
    }

    /// Sample a function of the knot coordinates (2D grids).
    pub fn from_fn_2d(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.n_knots());
        for iy in 0..=grid.my {
            for ix in 0..=grid.mx {
                let (x, y) = grid.knot(ix, iy);
                values.push(f(x, y));
            }
        }
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row `iy` of a 2D field as a contiguous slice.
    pub fn row(&self, iy: usize) -> Result<&[f64]> {
        let g = self.grid.as_2d()?;
        let nx = g.nx();
        Ok(&self.values[iy * nx..(iy + 1) * nx])
    }

    /// Column `ix` of a 2D field, copied into a fresh vector.
    pub fn column(&self, ix: usize) -> Result<Vec<f64>> {
        let g = self.grid.as_2d()?;
        let nx = g.nx();
        Ok((0..=g.my).map(|iy| self.values[iy * nx + ix]).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Euclidean norm of the knot-value vector.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Relative L2 error `|a - b| / |b|` over knot values (`|a|` if `b = 0`).
pub fn relative_l2_error(a: &Field, b: &Field) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(
            "fields of different length".into(),
        ));
    }
    let diff: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let denom = b.norm();
    Ok(if denom > 0.0 { diff / denom } else { diff })
}
