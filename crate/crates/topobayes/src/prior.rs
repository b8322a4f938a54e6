//! Discretized Gaussian prior covariances and exact sampling.
//!
//! Kernel covariances are assembled on the grid knots and Cholesky-factored
//! with an escalating diagonal jitter. The squared-exponential kernel in 2D
//! separates into a product over the axes, so its factor is kept as a
//! Kronecker pair of 1D factors. The inverse-Laplacian covariance is held
//! in its sine eigenbasis and needs no jitter.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Grid1D};
use crate::linalg::DenseCholesky;

const JITTER_START_REL: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Prior covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-|x-y|^2 / (2 l^2))`
    SquaredExponential { l: f64 },
    /// `exp(-2 sin^2(pi |x-y| / p) / l^2)`, 1D only
    PeriodicSquaredExponential { l: f64, p: f64 },
    /// Inverse Laplacian power `(-Laplace)^{-s}` with zero boundary values
    SpectralLaplacian { s: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "kernel parameter {name} must be positive, got {v}"
            )))
        };
        match *self {
            KernelSpec::SquaredExponential { l } => {
                if !(l > 0.0) {
                    return bad("l", l);
                }
            }
            KernelSpec::PeriodicSquaredExponential { l, p } => {
                if !(l > 0.0) {
                    return bad("l", l);
                }
                if !(p > 0.0) {
                    return bad("p", p);
                }
            }
            KernelSpec::SpectralLaplacian { s } => {
                if !(s > 0.0) {
                    return bad("s", s);
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::SquaredExponential { .. } => "squared_exponential",
            KernelSpec::PeriodicSquaredExponential { .. } => "periodic_squared_exponential",
            KernelSpec::SpectralLaplacian { .. } => "spectral_laplacian",
        }
    }
}

/// Pointwise kernel value for the two stationary kernels; the spectral
/// covariance has no pointwise kernel.
pub fn kernel_value(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch("kernel points".into()));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    match *spec {
        KernelSpec::SquaredExponential { l } => Ok((-d2 / (2.0 * l * l)).exp()),
        KernelSpec::PeriodicSquaredExponential { l, p } => {
            let s = (PI * d2.sqrt() / p).sin();
            Ok((-2.0 * s * s / (l * l)).exp())
        }
        KernelSpec::SpectralLaplacian { .. } => Err(Error::Unsupported(
            "spectral covariance has no pointwise kernel".into(),
        )),
    }
}

fn kernel_distance(spec: &KernelSpec, d: f64) -> f64 {
    match *spec {
        KernelSpec::SquaredExponential { l } => (-d * d / (2.0 * l * l)).exp(),
        KernelSpec::PeriodicSquaredExponential { l, p } => {
            let s = (PI * d / p).sin();
            (-2.0 * s * s / (l * l)).exp()
        }
        KernelSpec::SpectralLaplacian { .. } => unreachable!(),
    }
}

/// Sine modes on an interval, boundary rows exactly zero; `modes[j][k-1] =
/// phi_k(x_j)` for `k = 1..m-1`.
#[derive(Debug, Clone)]
struct SineBasis {
    n_knots: usize,
    n_modes: usize,
    modes: Vec<f64>,
}

impl SineBasis {
    fn new(grid: &Grid1D) -> Self {
        let n_knots = grid.n_knots();
        let n_modes = grid.m - 1;
        let len = grid.b - grid.a;
        let scale = (2.0 / len).sqrt();
        let mut modes = vec![0.0; n_knots * n_modes];
        for j in 1..grid.m {
            let t = j as f64 / grid.m as f64;
            for k in 1..=n_modes {
                modes[j * n_modes + (k - 1)] = scale * (k as f64 * PI * t).sin();
            }
        }
        SineBasis {
            n_knots,
            n_modes,
            modes,
        }
    }

    fn value(&self, j: usize, k: usize) -> f64 {
        self.modes[j * self.n_modes + k]
    }
}

#[derive(Debug, Clone)]
enum Factor {
    /// Dense Cholesky factor on all knots.
    Dense(DenseCholesky),
    /// Separable 2D kernel: per-axis Cholesky factors.
    Kronecker { lx: DenseCholesky, ly: DenseCholesky },
    /// 1D sine basis with per-mode standard deviations.
    Spectral1D { basis: SineBasis, sqrt_eig: Vec<f64> },
    /// Tensor sine basis; `sqrt_eig[ky][kx]` does not separate over axes.
    Spectral2D {
        basis_x: SineBasis,
        basis_y: SineBasis,
        sqrt_eig: Vec<f64>,
    },
}

/// A prior covariance with a square-root factor for exact sampling.
#[derive(Debug, Clone)]
pub struct FactorizedCovariance {
    grid: Grid,
    spec: KernelSpec,
    factor: Factor,
    jitter: f64,
}

fn factor_gram(spec: &KernelSpec, knots: &[f64]) -> Result<(DenseCholesky, f64)> {
    let n = knots.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = kernel_distance(spec, (knots[i] - knots[j]).abs());
        }
    }
    // unit diagonal for both kernels, so the relative start is absolute too
    let mut jitter = JITTER_START_REL;
    loop {
        let mut a = gram.clone();
        for i in 0..n {
            a[i * n + i] += jitter;
        }
        match DenseCholesky::factor(&a, n) {
            Ok(ch) => return Ok((ch, jitter)),
            Err(_) if jitter < JITTER_MAX => jitter *= 10.0,
            Err(_) => return Err(Error::Factorization { jitter }),
        }
    }
}

/// Build the square-root factor of a prior covariance on a grid.
pub fn build_covariance(spec: &KernelSpec, grid: &Grid) -> Result<FactorizedCovariance> {
    spec.validate()?;
    let factor = match (grid, spec) {
        (Grid::One(g), KernelSpec::SpectralLaplacian { s }) => {
            let len = g.b - g.a;
            let sqrt_eig = (1..g.m)
                .map(|k| (k as f64 * PI / len).powf(-*s))
                .collect();
            Factor::Spectral1D {
                basis: SineBasis::new(g),
                sqrt_eig,
            }
        }
        (Grid::One(g), _) => {
            let (ch, jitter) = factor_gram(spec, &g.knots())?;
            return Ok(FactorizedCovariance {
                grid: *grid,
                spec: *spec,
                factor: Factor::Dense(ch),
                jitter,
            });
        }
        (Grid::Two(g), KernelSpec::SquaredExponential { .. }) => {
            let (lx, jx) = factor_gram(spec, &g.x_axis().knots())?;
            let (ly, jy) = factor_gram(spec, &g.y_axis().knots())?;
            // effective diagonal inflation of (Cx + jx)(Cy + jy) vs Cx*Cy
            let jitter = (1.0 + jx) * (1.0 + jy) - 1.0;
            return Ok(FactorizedCovariance {
                grid: *grid,
                spec: *spec,
                factor: Factor::Kronecker { lx, ly },
                jitter,
            });
        }
        (Grid::Two(_), KernelSpec::PeriodicSquaredExponential { .. }) => {
            return Err(Error::Unsupported(
                "the periodic kernel is offered for 1D grids only".into(),
            ));
        }
        (Grid::Two(g), KernelSpec::SpectralLaplacian { s }) => {
            let (lx, ly) = (g.bx - g.ax, g.by - g.ay);
            let (kx_max, ky_max) = (g.mx - 1, g.my - 1);
            let mut sqrt_eig = vec![0.0; kx_max * ky_max];
            for ky in 1..=ky_max {
                for kx in 1..=kx_max {
                    let lam = (kx as f64 * PI / lx).powi(2) + (ky as f64 * PI / ly).powi(2);
                    sqrt_eig[(ky - 1) * kx_max + (kx - 1)] = lam.powf(-*s / 2.0);
                }
            }
            Factor::Spectral2D {
                basis_x: SineBasis::new(&g.x_axis()),
                basis_y: SineBasis::new(&g.y_axis()),
                sqrt_eig,
            }
        }
    };
    Ok(FactorizedCovariance {
        grid: *grid,
        spec: *spec,
        factor,
        jitter: 0.0,
    })
}

impl FactorizedCovariance {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Diagonal regularization actually applied, as seen on the covariance
    /// diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of independent standard normals one draw consumes.
    pub fn latent_dim(&self) -> usize {
        match &self.factor {
            Factor::Dense(ch) => ch.n(),
            Factor::Kronecker { lx, ly } => lx.n() * ly.n(),
            Factor::Spectral1D { sqrt_eig, .. } => sqrt_eig.len(),
            Factor::Spectral2D { sqrt_eig, .. } => sqrt_eig.len(),
        }
    }

    /// Apply the square-root factor to a latent vector.
    pub fn apply_factor(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch(format!(
                "latent vector has length {}, expected {}",
                z.len(),
                self.latent_dim()
            )));
        }
        Ok(match &self.factor {
            Factor::Dense(ch) => ch.apply(z),
            Factor::Kronecker { lx, ly } => {
                let (nx, ny) = (lx.n(), ly.n());
                // t = (I kron Lx) z, then out = (Ly kron I) t
                let mut t = vec![0.0; nx * ny];
                for jy in 0..ny {
                    let v = lx.apply(&z[jy * nx..(jy + 1) * nx]);
                    t[jy * nx..(jy + 1) * nx].copy_from_slice(&v);
                }
                kron_y_apply(ly, &t, nx, ny)
            }
            Factor::Spectral1D { basis, sqrt_eig } => {
                let mut out = vec![0.0; basis.n_knots];
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..basis.n_modes)
                        .map(|k| basis.value(j, k) * sqrt_eig[k] * z[k])
                        .sum();
                }
                out
            }
            Factor::Spectral2D {
                basis_x,
                basis_y,
                sqrt_eig,
            } => {
                let (kx_max, ky_max) = (basis_x.n_modes, basis_y.n_modes);
                let (nx, ny) = (basis_x.n_knots, basis_y.n_knots);
                // scale each mode, contract over kx, then over ky
                let mut t = vec![0.0; kx_max * ky_max];
                for (t, (z, e)) in t.iter_mut().zip(z.iter().zip(sqrt_eig)) {
                    *t = z * e;
                }
                let mut s = vec![0.0; nx * ky_max];
                for ky in 0..ky_max {
                    for jx in 0..nx {
                        s[ky * nx + jx] = (0..kx_max)
                            .map(|kx| basis_x.value(jx, kx) * t[ky * kx_max + kx])
                            .sum();
                    }
                }
                let mut out = vec![0.0; nx * ny];
                for jy in 0..ny {
                    for jx in 0..nx {
                        out[jy * nx + jx] = (0..ky_max)
                            .map(|ky| basis_y.value(jy, ky) * s[ky * nx + jx])
                            .sum();
                    }
                }
                out
            }
        })
    }

    /// Draw a zero-mean field with this covariance.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Field> {
        let z: Vec<f64> = (0..self.latent_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Field::new(self.grid, self.apply_factor(&z)?)
    }

    /// Diagonal of the factored covariance (jitter included).
    pub fn diagonal(&self) -> Vec<f64> {
        match &self.factor {
            Factor::Dense(ch) => ch.gram_diagonal(),
            Factor::Kronecker { lx, ly } => {
                let dx = lx.gram_diagonal();
                let dy = ly.gram_diagonal();
                let mut out = Vec::with_capacity(dx.len() * dy.len());
                for y in &dy {
                    for x in &dx {
                        out.push(x * y);
                    }
                }
                out
            }
            Factor::Spectral1D { basis, sqrt_eig } => (0..basis.n_knots)
                .map(|j| {
                    (0..basis.n_modes)
                        .map(|k| (basis.value(j, k) * sqrt_eig[k]).powi(2))
                        .sum()
                })
                .collect(),
            Factor::Spectral2D {
                basis_x,
                basis_y,
                sqrt_eig,
            } => {
                let (kx_max, ky_max) = (basis_x.n_modes, basis_y.n_modes);
                let (nx, ny) = (basis_x.n_knots, basis_y.n_knots);
                // b[jx][ky] = sum_kx eig * phi_x^2
                let mut b = vec![0.0; nx * ky_max];
                for jx in 0..nx {
                    for ky in 0..ky_max {
                        b[jx * ky_max + ky] = (0..kx_max)
                            .map(|kx| {
                                sqrt_eig[ky * kx_max + kx].powi(2)
                                    * basis_x.value(jx, kx).powi(2)
                            })
                            .sum();
                    }
                }
                let mut out = vec![0.0; nx * ny];
                for jy in 0..ny {
                    for jx in 0..nx {
                        out[jy * nx + jx] = (0..ky_max)
                            .map(|ky| basis_y.value(jy, ky).powi(2) * b[jx * ky_max + ky])
                            .sum();
                    }
                }
                out
            }
        }
    }
}

fn kron_y_apply(ly: &DenseCholesky, t: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    // out[iy, :] = sum_{jy <= iy} Ly[iy, jy] t[jy, :]
    let mut out = vec![0.0; nx * ny];
    for iy in 0..ny {
        for jy in 0..=iy {
            let c = ly_entry(ly, iy, jy);
            if c != 0.0 {
                let src = &t[jy * nx..(jy + 1) * nx];
                let dst = &mut out[iy * nx..(iy + 1) * nx];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
    }
    out
}

fn ly_entry(ch: &DenseCholesky, i: usize, j: usize) -> f64 {
    ch.row(i)[j]
}

/// Draw one prior sample (thin wrapper over [`FactorizedCovariance::sample`]).
pub fn sample_prior(cov: &FactorizedCovariance, rng: &mut impl Rng) -> Result<Field> {
    cov.sample(rng)
}
