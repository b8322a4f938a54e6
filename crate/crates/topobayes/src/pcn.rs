//! Preconditioned Crank-Nicolson Metropolis-Hastings over a discretized
//! field, with burn-in/thinning bookkeeping and posterior summaries.
//!
//! The proposal `sqrt(1 - rho^2) q + rho xi` leaves the Gaussian reference
//! measure invariant, so the acceptance ratio involves only the potential
//! (misfit plus regularizer). The walk lives on the latent Gaussian field;
//! the potential is evaluated on the physical field after the optional
//! positivity transform, and recorded states are physical.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::prior::FactorizedCovariance;

/// Map from the latent Gaussian field to the physical coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    #[default]
    Identity,
    /// `q = exp(g)`; keeps the physical field strictly positive.
    Exponential,
}

impl Transform {
    pub fn apply(&self, latent: &Field) -> Result<Field> {
        match self {
            Transform::Identity => Ok(latent.clone()),
            Transform::Exponential => latent.map(f64::exp),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Exponential => "exponential",
        }
    }
}

type Hook = Arc<dyn Fn(&Field) -> Result<f64> + Send + Sync>;

/// Negative log posterior density relative to the Gaussian reference:
/// data misfit plus regularizer, evaluated on the physical field.
#[derive(Clone)]
pub struct PotentialSpec {
    misfit: Hook,
    regularizer: Hook,
    transform: Transform,
}

impl PotentialSpec {
    pub fn new(
        misfit: impl Fn(&Field) -> Result<f64> + Send + Sync + 'static,
        regularizer: impl Fn(&Field) -> Result<f64> + Send + Sync + 'static,
        transform: Transform,
    ) -> Self {
        PotentialSpec {
            misfit: Arc::new(misfit),
            regularizer: Arc::new(regularizer),
            transform,
        }
    }

    /// Potential that is identically zero; the chain then samples the prior.
    pub fn zero() -> Self {
        PotentialSpec::new(|_| Ok(0.0), |_| Ok(0.0), Transform::Identity)
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    /// Evaluate on a latent state; returns the physical field and the total.
    pub fn evaluate(&self, latent: &Field) -> Result<(Field, f64)> {
        let physical = self.transform.apply(latent)?;
        let phi = (self.misfit)(&physical)?;
        let r = (self.regularizer)(&physical)?;
        let total = phi + r;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "potential (misfit {phi}, regularizer {r})"
            )));
        }
        Ok((physical, total))
    }
}

/// One proposal step: variance-preserving combination of the current state
/// with a fresh prior draw.
pub fn pcn_propose(current: &Field, rho: f64, xi: &Field) -> Field {
    let c = (1.0 - rho * rho).sqrt();
    let values = current
        .values()
        .iter()
        .zip(xi.values())
        .map(|(q, x)| c * q + rho * x)
        .collect();
    Field::new(*current.grid(), values).expect("inputs are finite")
}

/// Metropolis acceptance for negative log densities: accept when
/// `min(1, exp(phi_current - phi_proposal)) > u`.
pub fn mh_accept(phi_current: f64, phi_proposal: f64, u: f64) -> bool {
    let alpha = if phi_proposal <= phi_current {
        1.0
    } else {
        (phi_current - phi_proposal).exp()
    };
    alpha > u
}

/// Which states a chain keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Storage {
    /// Every state of the chain.
    Full,
    /// Only the states a later `summarize(burn_in_fraction, lag)` will use.
    Retained { burn_in_fraction: f64, lag: usize },
}

#[derive(Debug, Clone)]
pub struct ChainOptions {
    pub rho: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub storage: Storage,
    /// Latent starting state; the default is the zero field.
    pub initial: Option<Field>,
}

impl ChainOptions {
    pub fn new(rho: f64, n_steps: usize, seed: u64) -> Self {
        ChainOptions {
            rho,
            n_steps,
            seed,
            storage: Storage::Full,
            initial: None,
        }
    }

    pub fn retained(mut self, burn_in_fraction: f64, lag: usize) -> Self {
        self.storage = Storage::Retained {
            burn_in_fraction,
            lag,
        };
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
        }
        if let Storage::Retained {
            burn_in_fraction,
            lag,
        } = self.storage
        {
            check_summary_params(burn_in_fraction, lag)?;
        }
        Ok(())
    }
}

fn check_summary_params(burn_in_fraction: f64, lag: usize) -> Result<()> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::InvalidParameter(format!(
            "burn_in_fraction must lie in [0, 1), got {burn_in_fraction}"
        )));
    }
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be >= 1".into()));
    }
    Ok(())
}

/// Step indices (1-based) kept after burn-in and thinning: drop the first
/// `ceil(burn_in_fraction * n)` states, then take every `lag`-th.
pub fn retained_indices(n_steps: usize, burn_in_fraction: f64, lag: usize) -> Vec<usize> {
    let discard = (burn_in_fraction * n_steps as f64).ceil() as usize;
    (discard + 1..=n_steps).step_by(lag).collect()
}

/// Record of a pCN run. Stored states are physical fields, keyed by their
/// 1-based step index; potentials and accept flags cover every step.
#[derive(Debug, Clone)]
pub struct Chain {
    grid: crate::grid::Grid,
    stored: Vec<(usize, Vec<f64>)>,
    pub potentials: Vec<f64>,
    pub accept_flags: Vec<bool>,
    pub rho: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accept_flags.is_empty() {
            return 0.0;
        }
        self.accept_flags.iter().filter(|&&a| a).count() as f64 / self.accept_flags.len() as f64
    }

    pub fn stored_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.stored.iter().map(|(s, _)| *s)
    }

    pub fn state_at(&self, step: usize) -> Option<&[f64]> {
        self.stored
            .binary_search_by_key(&step, |(s, _)| *s)
            .ok()
            .map(|i| self.stored[i].1.as_slice())
    }
}

/// Posterior mean and spread over the retained states.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub mean: Field,
    pub std: Field,
    pub acceptance_rate: f64,
    pub retained_count: usize,
}

/// Run a pCN chain. The chain starts from the zero latent field unless an
/// initial state is supplied, draws one prior sample and one uniform per
/// step, and is fully determined by the seed.
pub fn run_chain(
    potential: &PotentialSpec,
    cov: &FactorizedCovariance,
    opts: &ChainOptions,
) -> Result<Chain> {
    opts.validate()?;
    let grid = *cov.grid();
    let mut latent = match &opts.initial {
        Some(f) => {
            if f.grid() != &grid {
                return Err(Error::DimensionMismatch(
                    "initial state grid differs from the covariance grid".into(),
                ));
            }
            f.clone()
        }
        None => Field::zeros(grid),
    };
    let (mut physical, mut phi) = potential
        .evaluate(&latent)
        .map_err(|e| step_error(0, e))?;

    let keep: Option<Vec<usize>> = match opts.storage {
        Storage::Full => None,
        Storage::Retained {
            burn_in_fraction,
            lag,
        } => Some(retained_indices(opts.n_steps, burn_in_fraction, lag)),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stored = Vec::new();
    let mut potentials = Vec::with_capacity(opts.n_steps);
    let mut accept_flags = Vec::with_capacity(opts.n_steps);

    for step in 1..=opts.n_steps {
        let xi = cov.sample(&mut rng).map_err(|e| step_error(step, e))?;
        let proposal = pcn_propose(&latent, opts.rho, &xi);
        let (prop_physical, prop_phi) = potential
            .evaluate(&proposal)
            .map_err(|e| step_error(step, e))?;
        let u: f64 = rng.random();
        let accept = mh_accept(phi, prop_phi, u);
        if accept {
            latent = proposal;
            physical = prop_physical;
            phi = prop_phi;
        }
        potentials.push(phi);
        accept_flags.push(accept);
        let keep_this = match &keep {
            None => true,
            Some(k) => k.binary_search(&step).is_ok(),
        };
        if keep_this {
            stored.push((step, physical.values().to_vec()));
        }
    }

    Ok(Chain {
        grid,
        stored,
        potentials,
        accept_flags,
        rho: opts.rho,
        n_steps: opts.n_steps,
        seed: opts.seed,
    })
}

fn step_error(step: usize, e: Error) -> Error {
    Error::Chain {
        step,
        message: e.to_string(),
    }
}

/// Discard burn-in, thin by `lag`, and average the remaining states. The
/// standard deviation is the population value over the retained states.
pub fn summarize(chain: &Chain, burn_in_fraction: f64, lag: usize) -> Result<PosteriorSummary> {
    check_summary_params(burn_in_fraction, lag)?;
    let idx = retained_indices(chain.n_steps, burn_in_fraction, lag);
    if idx.is_empty() {
        return Err(Error::EmptySelection(
            "no states survive burn-in and thinning".into(),
        ));
    }
    let n_knots = chain.grid.n_knots();
    let mut mean = vec![0.0; n_knots];
    let mut sq = vec![0.0; n_knots];
    for &step in &idx {
        let state = chain.state_at(step).ok_or_else(|| {
            Error::EmptySelection(format!(
                "state {step} was not stored; rerun with matching storage"
            ))
        })?;
        for (j, &v) in state.iter().enumerate() {
            mean[j] += v;
            sq[j] += v * v;
        }
    }
    let n = idx.len() as f64;
    let mut std = vec![0.0; n_knots];
    for j in 0..n_knots {
        mean[j] /= n;
        std[j] = (sq[j] / n - mean[j] * mean[j]).max(0.0).sqrt();
    }
    Ok(PosteriorSummary {
        mean: Field::new(chain.grid, mean)?,
        std: Field::new(chain.grid, std)?,
        acceptance_rate: chain.acceptance_rate(),
        retained_count: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use crate::prior::{build_covariance, KernelSpec};

    fn unit_cov(m: usize) -> FactorizedCovariance {
        let g = Grid1D::new(0.0, 1.0, m).unwrap();
        build_covariance(
            &KernelSpec::PeriodicSquaredExponential { l: 1.0, p: 1.0 },
            &g.into(),
        )
        .unwrap()
    }

    #[test]
    fn propose_endpoints() {
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let cur = Field::constant(g, 1.0).unwrap();
        let xi = Field::constant(g, 1.0).unwrap();
        assert_eq!(pcn_propose(&cur, 0.0, &xi).values(), cur.values());
        assert_eq!(pcn_propose(&cur, 1.0, &xi).values(), xi.values());
        let p = pcn_propose(&cur, 0.6, &xi);
        for &v in p.values() {
            assert!((v - 1.4).abs() < 1e-12);
        }
    }

    #[test]
    fn accept_rule() {
        // downhill always accepted
        assert!(mh_accept(5.0, 1.0, 0.999999));
        // equal potentials accepted for any u < 1
        assert!(mh_accept(2.0, 2.0, 0.9999999));
        // uphill by ln 2 accepted exactly when u < 1/2
        assert!(mh_accept(0.0, 2f64.ln(), 0.49));
        assert!(!mh_accept(0.0, 2f64.ln(), 0.51));
        // large uphill must not overflow
        assert!(!mh_accept(0.0, 1e308, 1e-12));
    }

    #[test]
    fn zero_potential_accepts_everything() {
        let cov = unit_cov(16);
        let chain = run_chain(
            &PotentialSpec::zero(),
            &cov,
            &ChainOptions::new(0.3, 500, 1),
        )
        .unwrap();
        assert_eq!(chain.acceptance_rate(), 1.0);
        assert!(chain.potentials.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn chains_are_reproducible() {
        let cov = unit_cov(12);
        let opts = ChainOptions::new(0.5, 200, 99);
        let a = run_chain(&PotentialSpec::zero(), &cov, &opts).unwrap();
        let b = run_chain(&PotentialSpec::zero(), &cov, &opts).unwrap();
        assert_eq!(a.accept_flags, b.accept_flags);
        let last = a.n_steps;
        assert_eq!(a.state_at(last).unwrap(), b.state_at(last).unwrap());
    }

    #[test]
    fn retained_index_convention() {
        assert_eq!(retained_indices(20, 0.5, 5), vec![11, 16]);
        assert_eq!(retained_indices(4, 0.0, 1), vec![1, 2, 3, 4]);
        assert_eq!(retained_indices(1, 0.9, 1), Vec::<usize>::new());
    }

    #[test]
    fn summarize_identical_states() {
        let cov = unit_cov(8);
        // rho = 0: the chain never moves off its start
        let opts = ChainOptions {
            rho: 0.0,
            n_steps: 10,
            seed: 5,
            storage: Storage::Full,
            initial: Some(Field::constant(Grid1D::new(0.0, 1.0, 8).unwrap(), 1.5).unwrap()),
        };
        let chain = run_chain(&PotentialSpec::zero(), &cov, &opts).unwrap();
        let s = summarize(&chain, 0.0, 2).unwrap();
        for (&m, &sd) in s.mean.values().iter().zip(s.std.values()) {
            assert!((m - 1.5).abs() < 1e-12);
            assert!(sd.abs() < 1e-12);
        }
        assert_eq!(s.retained_count, 5);
    }

    #[test]
    fn retained_storage_matches_full() {
        let cov = unit_cov(6);
        let full = run_chain(
            &PotentialSpec::zero(),
            &cov,
            &ChainOptions::new(0.7, 40, 3),
        )
        .unwrap();
        let thin = run_chain(
            &PotentialSpec::zero(),
            &cov,
            &ChainOptions::new(0.7, 40, 3).retained(0.5, 5),
        )
        .unwrap();
        let a = summarize(&full, 0.5, 5).unwrap();
        let b = summarize(&thin, 0.5, 5).unwrap();
        assert_eq!(a.mean.values(), b.mean.values());
        assert_eq!(a.std.values(), b.std.values());
        // asking the thinned chain for other indices fails
        assert!(summarize(&thin, 0.0, 1).is_err());
    }

    #[test]
    fn exponential_transform_stays_positive() {
        let cov = unit_cov(10);
        let seen = std::sync::Arc::new(std::sync::Mutex::new(true));
        let seen2 = seen.clone();
        let potential = PotentialSpec::new(
            move |q: &Field| {
                let ok = q.values().iter().all(|&v| v > 0.0);
                *seen2.lock().unwrap() &= ok;
                Ok(0.0)
            },
            |_| Ok(0.0),
            Transform::Exponential,
        );
        let chain = run_chain(&potential, &cov, &ChainOptions::new(0.8, 300, 2)).unwrap();
        assert!(*seen.lock().unwrap());
        // recorded states are physical, hence positive
        for step in chain.stored_steps().collect::<Vec<_>>() {
            assert!(chain.state_at(step).unwrap().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn non_finite_potential_reports_step() {
        let cov = unit_cov(6);
        let potential = PotentialSpec::new(
            |q: &Field| {
                if q.values().iter().any(|&v| v.abs() > 0.0) {
                    Ok(f64::INFINITY)
                } else {
                    Ok(0.0)
                }
            },
            |_| Ok(0.0),
            Transform::Identity,
        );
        let err = run_chain(&potential, &cov, &ChainOptions::new(0.5, 10, 3)).unwrap_err();
        match err {
            Error::Chain { step, .. } => assert_eq!(step, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn prior_invariance_marginals() {
        // zero potential with a full refresh: retained states are iid prior
        // draws; check a middle-knot marginal with a KS test at 1% level
        let cov = unit_cov(20);
        let chain = run_chain(
            &PotentialSpec::zero(),
            &cov,
            &ChainOptions::new(1.0, 20_000, 17),
        )
        .unwrap();
        let s = summarize(&chain, 0.5, 5).unwrap();
        let idx = retained_indices(chain.n_steps, 0.5, 5);
        let sigma = cov.diagonal()[10].sqrt();
        let mut xs: Vec<f64> = idx
            .iter()
            .map(|&st| chain.state_at(st).unwrap()[10] / sigma)
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut d = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = 0.5 * (1.0 + libm::erf(x / 2.0f64.sqrt()));
            d = d.max((f - i as f64 / n).abs());
            d = d.max(((i + 1) as f64 / n - f).abs());
        }
        let critical = 1.62762 / n.sqrt(); // alpha = 0.01
        assert!(d < critical, "KS statistic {d} vs {critical}");
        assert_eq!(s.acceptance_rate, 1.0);
    }

    #[test]
    fn acceptance_rate_decreases_with_rho() {
        use crate::forward::{generate_data, misfit, SourceTerm};
        use crate::targets::target_example;

        let g = Grid1D::new(0.0, 1.0, 40).unwrap();
        let grid = crate::grid::Grid::One(g);
        let q_true = target_example(1, &grid).unwrap();
        let f = SourceTerm::Constant(1.0);
        let data = generate_data(&q_true, &f, 1e-3, 4, 1).unwrap();
        let cov = build_covariance(
            &KernelSpec::PeriodicSquaredExponential { l: 0.2, p: 1.0 },
            &grid,
        )
        .unwrap();
        let f2 = f.clone();
        let potential = PotentialSpec::new(
            move |q: &Field| misfit(q, &data, &f2),
            |_| Ok(0.0),
            Transform::Identity,
        );
        let mut rates = Vec::new();
        for &rho in &[0.002, 0.01, 0.05] {
            let chain =
                run_chain(&potential, &cov, &ChainOptions::new(rho, 2_000, 8)).unwrap();
            rates.push(chain.acceptance_rate());
        }
        assert!(
            rates[0] >= rates[1] && rates[1] >= rates[2],
            "rates {rates:?}"
        );
    }
}
