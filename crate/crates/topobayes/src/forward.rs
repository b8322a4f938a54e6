//! Finite-difference solution of `-Laplace(u) + q u = f` with zero boundary
//! values, synthetic observation data, and the data-misfit functional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Grid1D, Grid2D};
use crate::linalg::{solve_tridiagonal, BandedCholesky};

/// Source term `f`, either constant or tabulated at the grid knots.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceTerm {
    Constant(f64),
    Knots(Vec<f64>),
}

impl SourceTerm {
    pub fn from_fn_1d(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        SourceTerm::Knots((0..=grid.m).map(|j| f(grid.knot(j))).collect())
    }

    pub fn from_fn_2d(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut v = Vec::with_capacity(grid.n_knots());
        for iy in 0..=grid.my {
            for ix in 0..=grid.mx {
                let (x, y) = grid.knot(ix, iy);
                v.push(f(x, y));
            }
        }
        SourceTerm::Knots(v)
    }

    fn value_at(&self, k: usize, n_knots: usize) -> Result<f64> {
        let v = match self {
            SourceTerm::Constant(c) => *c,
            SourceTerm::Knots(vals) => {
                if vals.len() != n_knots {
                    return Err(Error::DimensionMismatch(format!(
                        "source term has {} values for {} knots",
                        vals.len(),
                        n_knots
                    )));
                }
                vals[k]
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("source term at knot {k}")));
        }
        Ok(v)
    }
}

/// Solve the two-point boundary-value problem on a 1D grid by tridiagonal
/// elimination of the centered second-order stencil.
pub fn solve_forward_1d(q: &Field, f: &SourceTerm) -> Result<Field> {
    let grid = *q.grid().as_1d()?;
    let m = grid.m;
    let n_int = m - 1;
    let h2 = grid.h * grid.h;
    let qv = q.values();

    let mut diag = Vec::with_capacity(n_int);
    let mut rhs = Vec::with_capacity(n_int);
    for j in 1..m {
        diag.push(2.0 / h2 + qv[j]);
        rhs.push(f.value_at(j, m + 1)?);
    }
    let off = vec![-1.0 / h2; n_int - 1];
    let interior = solve_tridiagonal(&off, &diag, &off, &rhs)?;

    let mut u = vec![0.0; m + 1];
    u[1..m].copy_from_slice(&interior);
    Field::new(grid, u)
}

/// Solve the 2D problem with the five-point stencil; the interior system is
/// symmetric positive definite for `q >= 0` and is factored directly within
/// its band.
pub fn solve_forward_2d(q: &Field, f: &SourceTerm) -> Result<Field> {
    let grid = *q.grid().as_2d()?;
    let (mx, my) = (grid.mx, grid.my);
    let (ix_n, iy_n) = (mx - 1, my - 1); // interior counts
    let n = ix_n * iy_n;
    let bw = ix_n;
    let w = bw + 1;
    let (cx, cy) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
    let qv = q.values();

    let mut band = vec![0.0; n * w];
    let mut rhs = vec![0.0; n];
    for iy in 1..my {
        for ix in 1..mx {
            let p = (iy - 1) * ix_n + (ix - 1);
            band[p * w + bw] = 2.0 * cx + 2.0 * cy + qv[grid.index(ix, iy)];
            if ix > 1 {
                band[p * w + bw - 1] = -cx;
            }
            if iy > 1 {
                band[p * w] = -cy;
            }
            rhs[p] = f.value_at(grid.index(ix, iy), grid.n_knots())?;
        }
    }
    let ch = BandedCholesky::factor(band, n, bw)?;
    let interior = ch.solve(&rhs)?;

    let mut u = vec![0.0; grid.n_knots()];
    for iy in 1..my {
        for ix in 1..mx {
            u[grid.index(ix, iy)] = interior[(iy - 1) * ix_n + (ix - 1)];
        }
    }
    Field::new(grid, u)
}

/// Solve on either grid kind.
pub fn solve_forward(q: &Field, f: &SourceTerm) -> Result<Field> {
    match q.grid() {
        Grid::One(_) => solve_forward_1d(q, f),
        Grid::Two(_) => solve_forward_2d(q, f),
    }
}

/// Observation locations, noisy values, and the noise level used both for
/// generation and misfit weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationData {
    /// Flattened knot indices of the observation points.
    pub locations: Vec<usize>,
    pub values: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ObservationData {
    /// CSV with columns `(index, x[, y], value)`; sigma and seed ride along
    /// as comment lines.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut out = String::new();
        out.push_str(&format!("# sigma={}\n# seed={}\n", self.noise_sigma, self.seed));
        match grid {
            Grid::One(g) => {
                out.push_str("index,x,value\n");
                for (&k, &v) in self.locations.iter().zip(&self.values) {
                    out.push_str(&format!("{},{},{}\n", k, g.knot(k), v));
                }
            }
            Grid::Two(g) => {
                out.push_str("index,x,y,value\n");
                for (&k, &v) in self.locations.iter().zip(&self.values) {
                    let (ix, iy) = g.unindex(k);
                    let (x, y) = g.knot(ix, iy);
                    out.push_str(&format!("{},{},{},{}\n", k, x, y, v));
                }
            }
        }
        out
    }
}

/// Interior knot indices in flattened order, subsampled by `stride`.
pub fn interior_locations(grid: &Grid, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    let all: Vec<usize> = match grid {
        Grid::One(g) => (1..g.m).collect(),
        Grid::Two(g) => {
            let mut v = Vec::with_capacity((g.mx - 1) * (g.my - 1));
            for iy in 1..g.my {
                for ix in 1..g.mx {
                    v.push(g.index(ix, iy));
                }
            }
            v
        }
    };
    Ok(all.into_iter().step_by(stride).collect())
}

/// Root-mean-square of a vector's components.
fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn noisy_values(exact: &[f64], noise_rel: f64, seed: u64) -> (Vec<f64>, f64) {
    let sigma = noise_rel * rms(exact);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = exact
        .iter()
        .map(|&u| u + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (values, sigma)
}

/// Solve the forward problem for the exact coefficient and perturb the
/// observed components with independent Gaussian noise whose standard
/// deviation is `noise_rel` times the RMS of the observed solution.
pub fn generate_data(
    q_true: &Field,
    f: &SourceTerm,
    noise_rel: f64,
    seed: u64,
    stride: usize,
) -> Result<ObservationData> {
    if noise_rel < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise_rel must be >= 0, got {noise_rel}"
        )));
    }
    let u = solve_forward(q_true, f)?;
    let locations = interior_locations(q_true.grid(), stride)?;
    let exact: Vec<f64> = locations.iter().map(|&k| u.values()[k]).collect();
    let (values, noise_sigma) = noisy_values(&exact, noise_rel, seed);
    Ok(ObservationData {
        locations,
        values,
        noise_sigma,
        seed,
    })
}

/// Like [`generate_data`], but the forward solution is computed on a grid
/// refined by `factor` and restricted back to the knots of `q_true`'s grid,
/// so that the data does not inherit the inversion grid's discretization
/// error.
pub fn generate_data_refined(
    q_exact_fine: &Field,
    target_grid: &Grid,
    f: &SourceTerm,
    noise_rel: f64,
    seed: u64,
    stride: usize,
) -> Result<ObservationData> {
    let u_fine = solve_forward(q_exact_fine, f)?;
    let u = restrict_to_grid(&u_fine, target_grid)?;
    let locations = interior_locations(target_grid, stride)?;
    let exact: Vec<f64> = locations.iter().map(|&k| u.values()[k]).collect();
    let (values, noise_sigma) = noisy_values(&exact, noise_rel, seed);
    Ok(ObservationData {
        locations,
        values,
        noise_sigma,
        seed,
    })
}

/// Restrict a field on an integer refinement of `coarse` back to `coarse`
/// by subsampling shared knots.
pub fn restrict_to_grid(fine: &Field, coarse: &Grid) -> Result<Field> {
    match (fine.grid(), coarse) {
        (Grid::One(gf), Grid::One(gc)) => {
            if gf.m % gc.m != 0 || gf.a != gc.a || gf.b != gc.b {
                return Err(Error::DimensionMismatch(
                    "fine grid is not an integer refinement".into(),
                ));
            }
            let r = gf.m / gc.m;
            let vals = (0..=gc.m).map(|j| fine.values()[r * j]).collect();
            Field::new(*gc, vals)
        }
        (Grid::Two(gf), Grid::Two(gc)) => {
            if gf.mx % gc.mx != 0
                || gf.my % gc.my != 0
                || (gf.ax, gf.bx, gf.ay, gf.by) != (gc.ax, gc.bx, gc.ay, gc.by)
            {
                return Err(Error::DimensionMismatch(
                    "fine grid is not an integer refinement".into(),
                ));
            }
            let (rx, ry) = (gf.mx / gc.mx, gf.my / gc.my);
            let mut vals = Vec::with_capacity(gc.n_knots());
            for iy in 0..=gc.my {
                for ix in 0..=gc.mx {
                    vals.push(fine.values()[gf.index(rx * ix, ry * iy)]);
                }
            }
            Field::new(*gc, vals)
        }
        _ => Err(Error::DimensionMismatch(
            "grid dimensionalities differ".into(),
        )),
    }
}

/// Noise-weighted half squared residual between the predicted solution at
/// the observation knots and the observed values. A zero recorded sigma
/// falls back to unit weighting so that noise-free data stays usable.
pub fn misfit(q: &Field, data: &ObservationData, f: &SourceTerm) -> Result<f64> {
    let u = solve_forward(q, f)?;
    let sigma = if data.noise_sigma > 0.0 {
        data.noise_sigma
    } else {
        1.0
    };
    let mut sum = 0.0;
    for (&k, &v) in data.locations.iter().zip(&data.values) {
        let r = (u.values()[k] - v) / sigma;
        sum += r * r;
    }
    if !sum.is_finite() {
        return Err(Error::NonFinite("misfit".into()));
    }
    Ok(0.5 * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn manufactured_error_1d(m: usize, c: f64) -> f64 {
        let g = Grid1D::new(0.0, 1.0, m).unwrap();
        let q = Field::constant(g, c).unwrap();
        let f = SourceTerm::from_fn_1d(&g, |x| (PI * PI + c) * (PI * x).sin());
        let u = solve_forward_1d(&q, &f).unwrap();
        let exact: Vec<f64> = g.knots().iter().map(|&x| (PI * x).sin()).collect();
        max_abs_diff(u.values(), &exact)
    }

    fn manufactured_error_2d(m: usize, c: f64) -> f64 {
        let g = Grid2D::square(0.0, 1.0, m).unwrap();
        let q = Field::constant(g, c).unwrap();
        let f =
            SourceTerm::from_fn_2d(&g, |x, y| (2.0 * PI * PI + c) * (PI * x).sin() * (PI * y).sin());
        let u = solve_forward_2d(&q, &f).unwrap();
        let exact = Field::from_fn_2d(g, |x, y| (PI * x).sin() * (PI * y).sin()).unwrap();
        max_abs_diff(u.values(), exact.values())
    }

    #[test]
    fn manufactured_solution_1d() {
        // q = 0 and q = c against u = sin(pi x)
        assert!(manufactured_error_1d(200, 0.0) < 4.0 * (1.0f64 / 200.0).powi(2));
        assert!(manufactured_error_1d(200, 1.0) < 4.0 * (1.0f64 / 200.0).powi(2));
    }

    #[test]
    fn convergence_order_1d() {
        let errs: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&m| manufactured_error_1d(m, 1.0))
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.8..=2.2).contains(&order), "order {order}");
        }
    }

    #[test]
    fn convergence_order_2d() {
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&m| manufactured_error_2d(m, 1.0))
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.8..=2.2).contains(&order), "order {order}");
        }
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let g = Grid1D::new(0.0, 1.0, 40).unwrap();
        let q = Field::constant(g, 0.7).unwrap();
        let u = solve_forward_1d(&q, &SourceTerm::Constant(0.0)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));

        let g2 = Grid2D::square(0.0, 1.0, 10).unwrap();
        let q2 = Field::constant(g2, 0.3).unwrap();
        let u2 = solve_forward_2d(&q2, &SourceTerm::Constant(0.0)).unwrap();
        assert!(u2.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generate_data_noise_free_and_deterministic() {
        let g = Grid1D::new(0.0, 1.0, 30).unwrap();
        let q = Field::constant(g, 1.0).unwrap();
        let f = SourceTerm::Constant(1.0);
        let d0 = generate_data(&q, &f, 0.0, 7, 1).unwrap();
        let u = solve_forward_1d(&q, &f).unwrap();
        for (&k, &v) in d0.locations.iter().zip(&d0.values) {
            assert_eq!(v, u.values()[k]);
        }
        assert_eq!(d0.noise_sigma, 0.0);

        let a = generate_data(&q, &f, 1e-3, 11, 1).unwrap();
        let b = generate_data(&q, &f, 1e-3, 11, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_data(&q, &f, 1e-3, 12, 1).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn noise_level_matches_request() {
        let g = Grid1D::new(0.0, 1.0, 400).unwrap();
        let q = crate::targets::target_example(1, &Grid::One(g)).unwrap();
        let f = SourceTerm::Constant(1.0);
        let noise_rel = 1e-3;
        let d = generate_data(&q, &f, noise_rel, 3, 1).unwrap();
        let u = solve_forward_1d(&q, &f).unwrap();
        let exact: Vec<f64> = d.locations.iter().map(|&k| u.values()[k]).collect();
        let noise: Vec<f64> = d
            .values
            .iter()
            .zip(&exact)
            .map(|(a, b)| a - b)
            .collect();
        let ratio = super::rms(&noise) / super::rms(&exact);
        // one observed ratio, ~400 components: stay within 15% of nominal
        assert!(
            (ratio - noise_rel).abs() < 0.15 * noise_rel,
            "noise ratio {ratio}"
        );
    }

    #[test]
    fn misfit_values() {
        let g = Grid1D::new(0.0, 1.0, 20).unwrap();
        let q = Field::constant(g, 1.0).unwrap();
        let f = SourceTerm::Constant(1.0);
        let d = generate_data(&q, &f, 0.0, 1, 1).unwrap();
        // perfect fit
        assert_eq!(misfit(&q, &d, &f).unwrap(), 0.0);

        // residual (3, 4) with sigma 1 -> 12.5
        let u = solve_forward_1d(&q, &f).unwrap();
        let mut d2 = ObservationData {
            locations: vec![3, 4],
            values: vec![u.values()[3] + 3.0, u.values()[4] + 4.0],
            noise_sigma: 1.0,
            seed: 0,
        };
        assert!((misfit(&q, &d2, &f).unwrap() - 12.5).abs() < 1e-12);

        // doubling sigma divides the misfit by 4
        d2.noise_sigma = 2.0;
        assert!((misfit(&q, &d2, &f).unwrap() - 12.5 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn refined_generation_restricts_exactly() {
        let g = Grid1D::new(0.0, 1.0, 20).unwrap();
        let fine = g.refine(2).unwrap();
        let q_fine = crate::targets::target_example(2, &Grid::One(fine)).unwrap();
        let d = generate_data_refined(&q_fine, &Grid::One(g), &SourceTerm::Constant(1.0), 0.0, 5, 1)
            .unwrap();
        assert_eq!(d.locations.len(), g.m - 1);
        // data comes from the finer solve, so it must differ from the
        // same-grid solve somewhere
        let q = crate::targets::target_example(2, &Grid::One(g)).unwrap();
        let u = solve_forward_1d(&q, &SourceTerm::Constant(1.0)).unwrap();
        let same: Vec<f64> = d.locations.iter().map(|&k| u.values()[k]).collect();
        assert!(max_abs_diff(&d.values, &same) > 0.0);
    }

    #[test]
    fn observation_csv_layout() {
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let q = Field::constant(g, 1.0).unwrap();
        let d = generate_data(&q, &SourceTerm::Constant(1.0), 0.0, 9, 1).unwrap();
        let csv = d.to_csv(&Grid::One(g));
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# sigma="));
        assert!(lines[1].starts_with("# seed=9"));
        assert_eq!(lines[2], "index,x,value");
        assert_eq!(lines.len(), 3 + 3);
    }
}
