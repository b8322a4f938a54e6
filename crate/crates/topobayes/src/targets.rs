//! Exact target coefficients used by the preset experiments.
//!
//! Targets 0-4 are functions on an interval, 5-6 on a square. Piecewise
//! definitions keep their half-open conventions as written; at a knot that
//! lands on a jump, the inequality of the defining formula decides the value.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const N_EXAMPLES: usize = 7;

/// Truncated Weierstrass series `sum_{n=0}^{K} a^n cos(b^n pi x)`.
pub fn weierstrass_truncated(x: f64, a: f64, b: f64, k: u32) -> f64 {
    assert!(a > 0.0 && a < 1.0, "amplitude ratio must be in (0, 1)");
    let mut sum = 0.0;
    let mut an = 1.0;
    let mut bn = 1.0;
    for _ in 0..=k {
        sum += an * (bn * PI * x).cos();
        an *= a;
        bn *= b;
    }
    sum
}

/// Domain of an example target: `(a, b)` in 1D, `(a, b)^2` in 2D.
pub fn example_domain(id: usize) -> Result<(f64, f64, bool)> {
    match id {
        0 | 1 | 2 | 4 => Ok((0.0, 1.0, false)),
        3 => Ok((0.0, 2.5, false)),
        5 => Ok((0.0, 1.0, true)),
        6 => Ok((0.0, 2.0, true)),
        _ => Err(Error::InvalidParameter(format!(
            "unknown example id {id}, expected 0..={}",
            N_EXAMPLES - 1
        ))),
    }
}

pub fn example_is_2d(id: usize) -> Result<bool> {
    example_domain(id).map(|(_, _, two_d)| two_d)
}

fn target_value_1d(id: usize, x: f64) -> f64 {
    match id {
        0 => 1.0 + x * (1.0 - x) * (4.0 * PI * x).sin(),
        1 => {
            if (1.0 / 3.0..2.0 / 3.0).contains(&x) {
                1.5
            } else {
                0.5
            }
        }
        2 => {
            if x < 0.3 {
                0.5
            } else if x < 0.7 {
                1.0
            } else {
                1.5
            }
        }
        3 => {
            if x < 0.5 {
                0.5
            } else if x < 1.0 {
                1.0
            } else if x < 1.5 {
                0.5
            } else if x < 2.0 {
                1.5
            } else {
                0.5
            }
        }
        4 => 2.0 / PI * weierstrass_truncated(x, 0.4, 4.0, 10).atan() + 1.0,
        _ => unreachable!("1d target for id {id}"),
    }
}

fn target_value_2d(id: usize, x: f64, y: f64) -> f64 {
    match id {
        5 => {
            if (x - 0.5).powi(2) + (y - 0.5).powi(2) <= 0.25 * 0.25 {
                1.5
            } else {
                0.5
            }
        }
        6 => {
            if (x - 0.6).powi(2) + (y - 0.6).powi(2) <= 0.3 * 0.3 {
                1.0
            } else if (x - 1.4).powi(2) + (y - 1.4).powi(2) <= 0.3 * 0.3 {
                1.5
            } else {
                0.5
            }
        }
        _ => unreachable!("2d target for id {id}"),
    }
}

/// Exact target coefficient of an example, sampled at the grid knots.
pub fn target_example(id: usize, grid: &Grid) -> Result<Field> {
    let two_d = example_is_2d(id)?;
    match (grid, two_d) {
        (Grid::One(g), false) => Field::from_fn_1d(*g, |x| target_value_1d(id, x)),
        (Grid::Two(g), true) => Field::from_fn_2d(*g, |x, y| target_value_2d(id, x, y)),
        (Grid::One(_), true) => Err(Error::DimensionMismatch(format!(
            "example {id} is 2D but the grid is 1D"
        ))),
        (Grid::Two(_), false) => Err(Error::DimensionMismatch(format!(
            "example {id} is 1D but the grid is 2D"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid1D, Grid2D};

    #[test]
    fn weierstrass_values() {
        // x = 0: plain geometric series, summed independently in closed form.
        let expect = (1.0 - 0.4f64.powi(11)) / 0.6;
        assert!((weierstrass_truncated(0.0, 0.4, 4.0, 10) - expect).abs() < 1e-12);
        assert!((weierstrass_truncated(0.0, 0.5, 3.0, 0) - 1.0).abs() < 1e-15);
        assert!((weierstrass_truncated(1.0, 0.4, 4.0, 0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn weierstrass_tail_bound() {
        // Truncating later changes the sum by at most the geometric tail.
        let a = 0.4f64;
        for k in [0u32, 3, 7] {
            let tail = a.powi(k as i32 + 1) / (1.0 - a);
            for x in [0.0, 0.17, 0.83, 1.0] {
                let lo = weierstrass_truncated(x, a, 4.0, k);
                let hi = weierstrass_truncated(x, a, 4.0, k + 5);
                assert!((hi - lo).abs() <= tail + 1e-12);
            }
        }
    }

    #[test]
    fn example_point_values() {
        assert!((target_value_1d(0, 0.5) - 1.0).abs() < 1e-12);
        assert_eq!(target_value_1d(1, 0.5), 1.5);
        assert_eq!(target_value_1d(1, 0.1), 0.5);
        assert_eq!(target_value_1d(2, 0.0), 0.5);
        assert_eq!(target_value_1d(2, 0.9), 1.5);
        assert_eq!(target_value_2d(5, 0.5, 0.5), 1.5);
        assert_eq!(target_value_2d(6, 1.4, 1.4), 1.5);
        assert_eq!(target_value_2d(6, 0.6, 0.6), 1.0);
    }

    #[test]
    fn jump_conventions() {
        // Half-open intervals: the left edge belongs to the piece, the right
        // edge to the next one.
        assert_eq!(target_value_1d(2, 0.3), 1.0);
        assert_eq!(target_value_1d(2, 0.7), 1.5);
        assert_eq!(target_value_1d(3, 0.5), 1.0);
        assert_eq!(target_value_1d(3, 2.0), 0.5);
        // Disk boundary is inclusive.
        assert_eq!(target_value_2d(5, 0.75, 0.5), 1.5);
    }

    #[test]
    fn dimensionality_is_checked() {
        let g1 = Grid::One(Grid1D::new(0.0, 1.0, 10).unwrap());
        let g2 = Grid::Two(Grid2D::square(0.0, 1.0, 8).unwrap());
        assert!(target_example(5, &g1).is_err());
        assert!(target_example(0, &g2).is_err());
        assert!(target_example(7, &g1).is_err());
        assert!(target_example(0, &g1).is_ok());
        assert!(target_example(5, &g2).is_ok());
    }

    #[test]
    fn refinement_consistency() {
        for id in 0..=4 {
            let g = Grid1D::new(0.0, if id == 3 { 2.5 } else { 1.0 }, 30).unwrap();
            let f = g.refine(2).unwrap();
            let coarse = target_example(id, &Grid::One(g)).unwrap();
            let fine = target_example(id, &Grid::One(f)).unwrap();
            for j in 0..=g.m {
                assert_eq!(coarse.values()[j], fine.values()[2 * j], "example {id}");
            }
        }
    }
}
