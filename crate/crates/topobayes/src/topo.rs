//! Persistence pairing of local extrema for 1D knot-value vectors, the
//! persistence distance, discrete total variation, and the regularizers
//! built on them.
//!
//! Pairing follows the merge picture of sublevel sets: a local minimum
//! creates a component, a local maximum merges two components and is paired
//! with the closer-valued of its two surviving neighbor minima. Running the
//! same procedure on the negated signal yields a second pair set; together
//! with the global min-max pair they form the full pair multiset.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::grid::Field;

/// Local extrema of a knot-value vector under the left-sided plateau
/// convention: only the left knot of a value plateau can be an extremum,
/// and the last knot is extremal only when strictly above/below its
/// predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremaReport {
    pub minima_indices: Vec<usize>,
    pub maxima_indices: Vec<usize>,
    pub minima_values: Vec<f64>,
    pub maxima_values: Vec<f64>,
    /// Extremum knot with the highest index, if any extrema exist.
    pub i_max: Option<usize>,
    /// Minimum knot with the smallest value (smallest index on ties).
    pub global_min_index: Option<usize>,
    /// Maximum knot with the largest value (smallest index on ties).
    pub global_max_index: Option<usize>,
}

/// Which pairing pass produced a persistence pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOrigin {
    /// From the signal itself (minima create, maxima merge).
    Sublevel,
    /// From the negated signal.
    Superlevel,
    /// The global minimum paired with the global maximum.
    Global,
}

impl PairOrigin {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairOrigin::Sublevel => "sublevel",
            PairOrigin::Superlevel => "superlevel",
            PairOrigin::Global => "global",
        }
    }
}

/// A pair of knots, ordered by position, with their value gap.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistencePair {
    pub lo: usize,
    pub hi: usize,
    pub value_lo: f64,
    pub value_hi: f64,
    pub persistence: f64,
    pub origin: PairOrigin,
    /// Nesting depth among pairs of the same origin (outermost = 0).
    pub kappa: usize,
}

/// Multiset of persistence pairs; a pair found by both passes appears twice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PersistencePair>,
}

impl PairSet {
    pub fn of_origin(&self, origin: PairOrigin) -> impl Iterator<Item = &PersistencePair> {
        self.pairs.iter().filter(move |p| p.origin == origin)
    }

    /// Sum of persistences over the sublevel and superlevel pairs; the
    /// global pair is excluded.
    pub fn distance(&self) -> f64 {
        self.pairs
            .iter()
            .filter(|p| p.origin != PairOrigin::Global)
            .map(|p| p.persistence)
            .sum()
    }

    /// CSV rows `(origin, lo, hi, value_lo, value_hi, persistence, kappa)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("origin,lo,hi,value_lo,value_hi,persistence,kappa\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.origin.as_str(),
                p.lo,
                p.hi,
                p.value_lo,
                p.value_hi,
                p.persistence,
                p.kappa
            ));
        }
        out
    }
}

/// Classify the local extrema of `y` (length >= 2).
pub fn classify_extrema(y: &[f64]) -> ExtremaReport {
    assert!(y.len() >= 2, "need at least two knots");
    let m = y.len() - 1;
    let mut minima = Vec::new();
    let mut maxima = Vec::new();

    // x_0: scan its plateau; extremal if the first differing value decides.
    let mut nu = 0;
    while nu < m && y[nu + 1] == y[0] {
        nu += 1;
    }
    if nu < m {
        if y[nu + 1] > y[0] {
            minima.push(0);
        } else {
            maxima.push(0);
        }
    }

    // interior knots: left neighbor strict, plateau to the right, then strict.
    for l in 1..m {
        if y[l - 1] > y[l] {
            let mut j = l + 1;
            while j <= m && y[j] == y[l] {
                j += 1;
            }
            if j <= m && y[j] > y[l] {
                minima.push(l);
            }
        } else if y[l - 1] < y[l] {
            let mut j = l + 1;
            while j <= m && y[j] == y[l] {
                j += 1;
            }
            if j <= m && y[j] < y[l] {
                maxima.push(l);
            }
        }
    }

    // x_m: extremal only on a strict step.
    if y[m - 1] > y[m] {
        minima.push(m);
    } else if y[m - 1] < y[m] {
        maxima.push(m);
    }

    let minima_values: Vec<f64> = minima.iter().map(|&i| y[i]).collect();
    let maxima_values: Vec<f64> = maxima.iter().map(|&i| y[i]).collect();
    let i_max = minima.iter().chain(&maxima).copied().max();
    let global_min_index = argbest(&minima, &minima_values, |a, b| a < b);
    let global_max_index = argbest(&maxima, &maxima_values, |a, b| a > b);

    ExtremaReport {
        minima_indices: minima,
        maxima_indices: maxima,
        minima_values,
        maxima_values,
        i_max,
        global_min_index,
        global_max_index,
    }
}

fn argbest(indices: &[usize], values: &[f64], better: impl Fn(f64, f64) -> bool) -> Option<usize> {
    // strict comparison, so the smallest index wins on ties
    let mut best: Option<(usize, f64)> = None;
    for (&i, &v) in indices.iter().zip(values) {
        if best.is_none_or(|(_, bv)| better(v, bv)) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Pair each interior local maximum of `y` with a neighboring minimum,
/// processing maxima in increasing value order (smaller knot first on
/// ties). The maximum is matched to whichever surviving spatial-neighbor
/// minimum has the smaller value gap; on a gap tie the right neighbor
/// wins. Paired minima leave the candidate set. Maxima at knot 0 or at the
/// highest-index extremum are skipped.
pub fn sublevel_pairs(y: &[f64]) -> Vec<(usize, usize)> {
    let report = classify_extrema(y);
    let mut order: Vec<usize> = report.maxima_indices.clone();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));

    let mut candidates: BTreeSet<usize> = report.minima_indices.iter().copied().collect();
    let mut pairs = Vec::new();
    for k in order {
        if k == 0 || Some(k) == report.i_max {
            continue;
        }
        let left = candidates.range(..k).next_back().copied();
        let right = candidates.range(k + 1..).next().copied();
        let chosen = match (left, right) {
            (Some(a), Some(b)) => {
                let ga = (y[k] - y[a]).abs();
                let gb = (y[k] - y[b]).abs();
                // ga == gb resolves to the larger knot coordinate
                Some(if ga < gb { a } else { b })
            }
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        };
        if let Some(t) = chosen {
            candidates.remove(&t);
            pairs.push((k.min(t), k.max(t)));
        }
    }
    pairs
}

/// Full pair multiset: sublevel pairs of `y`, sublevel pairs of `-y`
/// (mapped back), and the global min-max pair, with nesting orders.
pub fn persistence_pairs(y: &[f64]) -> PairSet {
    assert!(y.len() >= 2, "need at least two knots");
    let report = classify_extrema(y);
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();

    let mut pairs = Vec::new();
    for (lo, hi) in sublevel_pairs(y) {
        pairs.push(make_pair(y, lo, hi, PairOrigin::Sublevel));
    }
    for (lo, hi) in sublevel_pairs(&neg) {
        pairs.push(make_pair(y, lo, hi, PairOrigin::Superlevel));
    }

    // Global pair; for a constant vector every knot attains both extremes,
    // and the endpoints keep the knots distinct.
    let gmin = report
        .global_min_index
        .unwrap_or_else(|| argbest_all(y, |a, b| a < b));
    let gmax = report
        .global_max_index
        .unwrap_or_else(|| argbest_all(y, |a, b| a > b));
    let (lo, hi) = if gmin == gmax {
        (0, y.len() - 1)
    } else {
        (gmin.min(gmax), gmin.max(gmax))
    };
    pairs.push(make_pair(y, lo, hi, PairOrigin::Global));

    assign_nesting_orders(&mut pairs);
    PairSet { pairs }
}

fn make_pair(y: &[f64], lo: usize, hi: usize, origin: PairOrigin) -> PersistencePair {
    PersistencePair {
        lo,
        hi,
        value_lo: y[lo],
        value_hi: y[hi],
        persistence: (y[lo] - y[hi]).abs(),
        origin,
        kappa: 0,
    }
}

fn argbest_all(y: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate().skip(1) {
        if better(v, y[best]) {
            best = i;
        }
    }
    best
}

/// Nesting depth per origin: a pair's order is the number of same-origin
/// pairs whose knot interval strictly contains its own. Within one origin
/// every knot appears at most once, so containment is automatically strict.
fn assign_nesting_orders(pairs: &mut [PersistencePair]) {
    for i in 0..pairs.len() {
        if pairs[i].origin == PairOrigin::Global {
            pairs[i].kappa = 0;
            continue;
        }
        let mut depth = 0;
        for j in 0..pairs.len() {
            if i != j
                && pairs[j].origin == pairs[i].origin
                && pairs[j].lo < pairs[i].lo
                && pairs[i].hi < pairs[j].hi
            {
                depth += 1;
            }
        }
        pairs[i].kappa = depth;
    }
}

/// Sum of value gaps over the sublevel and superlevel pair multisets.
pub fn persistence_distance(y: &[f64]) -> f64 {
    persistence_pairs(y).distance()
}

/// Pair set of a field. A 1D field is paired directly; for a 2D field every
/// grid row and column is paired as a 1D signal and the knot indices are
/// reported in the flattened grid numbering.
pub fn field_pairs(q: &Field) -> Result<PairSet> {
    match q.grid() {
        crate::grid::Grid::One(_) => Ok(persistence_pairs(q.values())),
        crate::grid::Grid::Two(g) => {
            let g = *g;
            let mut pairs = Vec::new();
            for iy in 0..=g.my {
                for mut p in persistence_pairs(q.row(iy)?).pairs {
                    p.lo = g.index(p.lo, iy);
                    p.hi = g.index(p.hi, iy);
                    pairs.push(p);
                }
            }
            for ix in 0..=g.mx {
                for mut p in persistence_pairs(&q.column(ix)?).pairs {
                    p.lo = g.index(ix, p.lo);
                    p.hi = g.index(ix, p.hi);
                    pairs.push(p);
                }
            }
            Ok(PairSet { pairs })
        }
    }
}

/// Discrete total variation `sum_j |y_{j+1} - y_j|`.
pub fn discrete_tv(y: &[f64]) -> f64 {
    y.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// How the pair-order factor of the weight is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightRule {
    /// `(kappa + 1) * theta`
    #[default]
    Product,
    /// `(kappa + 1) ^ theta`
    Power,
}

/// Weight of one pair: large for small persistences (noise suppression),
/// decaying as the persistence grows so significant features survive.
pub fn tp_weight(kappa: usize, persistence: f64, theta: f64, beta: f64) -> f64 {
    tp_weight_with_rule(kappa, persistence, theta, beta, WeightRule::Product)
}

pub fn tp_weight_with_rule(
    kappa: usize,
    persistence: f64,
    theta: f64,
    beta: f64,
    rule: WeightRule,
) -> f64 {
    let order = match rule {
        WeightRule::Product => (kappa as f64 + 1.0) * theta,
        WeightRule::Power => (kappa as f64 + 1.0).powf(theta),
    };
    order / (1.0 + beta * persistence)
}

/// Parameters of the persistence-weighted regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpParams {
    pub theta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub rule: WeightRule,
}

impl TpParams {
    pub fn new(theta: f64, beta: f64, lambda: f64) -> Self {
        TpParams {
            theta,
            beta,
            lambda,
            rule: WeightRule::Product,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "theta must be > 1, got {}",
                self.theta
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn tp_sum(y: &[f64], params: &TpParams) -> f64 {
    persistence_pairs(y)
        .pairs
        .iter()
        .map(|p| {
            tp_weight_with_rule(p.kappa, p.persistence, params.theta, params.beta, params.rule)
                * p.persistence
        })
        .sum()
}

/// Weighted persistence penalty over the full pair multiset of a vector,
/// global pair included.
pub fn tp_regularizer_1d(y: &[f64], params: &TpParams) -> f64 {
    params.lambda * tp_sum(y, params)
}

/// 2D penalty: the 1D penalty summed over every grid row and every grid
/// column, with the global weight applied once.
pub fn tp_regularizer_2d(q: &Field, params: &TpParams) -> Result<f64> {
    let g = *q.grid().as_2d()?;
    let mut sum = 0.0;
    for iy in 0..=g.my {
        sum += tp_sum(q.row(iy)?, params);
    }
    for ix in 0..=g.mx {
        sum += tp_sum(&q.column(ix)?, params);
    }
    Ok(params.lambda * sum)
}

/// Total-variation penalty. 1D: `lambda * TV(y)`. 2D: isotropic forward
/// differences, `lambda * sum hx hy sqrt((dx/hx)^2 + (dy/hy)^2)` with
/// one-sided closure on the last row and column.
pub fn tv_regularizer(q: &Field, lambda: f64) -> Result<f64> {
    match q.grid() {
        crate::grid::Grid::One(_) => Ok(lambda * discrete_tv(q.values())),
        crate::grid::Grid::Two(g) => {
            let (nx, ny) = (g.nx(), g.ny());
            let v = q.values();
            let mut sum = 0.0;
            for iy in 0..ny {
                for ix in 0..nx {
                    let k = iy * nx + ix;
                    let dx = if ix + 1 < nx { v[k + 1] - v[k] } else { 0.0 };
                    let dy = if iy + 1 < ny { v[k + nx] - v[k] } else { 0.0 };
                    sum += g.hx * g.hy * ((dx / g.hx).powi(2) + (dy / g.hy).powi(2)).sqrt();
                }
            }
            Ok(lambda * sum)
        }
    }
}
