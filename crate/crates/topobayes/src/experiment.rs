//! Experiment configuration, the preset catalogue, and the end-to-end
//! pipeline: data generation, potential assembly, sampling, summaries, and
//! CSV artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    generate_data, generate_data_refined, misfit, ObservationData, SourceTerm,
};
use crate::grid::{relative_l2_error, Field, Grid, Grid1D, Grid2D};
use crate::pcn::{
    run_chain, summarize, ChainOptions, PosteriorSummary, PotentialSpec, Storage, Transform,
};
use crate::prior::{build_covariance, FactorizedCovariance, KernelSpec};
use crate::targets::{example_domain, target_example};
use crate::topo::{field_pairs, tp_regularizer_1d, tp_regularizer_2d, tv_regularizer, TpParams,
    WeightRule};

const DEFAULT_M_1D: usize = 100;
const DEFAULT_M_2D: usize = 64;

fn d_source() -> f64 {
    1.0
}
fn d_noise_rel() -> f64 {
    1e-3
}
fn d_stride() -> usize {
    1
}
fn d_theta() -> f64 {
    3.0
}
fn d_beta() -> f64 {
    1e-3
}
fn d_lambda() -> f64 {
    1.0
}
fn d_rho() -> f64 {
    0.01
}
fn d_n_samples() -> usize {
    10_000
}
fn d_burn_in() -> f64 {
    0.5
}
fn d_lag() -> usize {
    5
}
fn d_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Preset target id (0-6).
    pub example: Option<usize>,
    /// Custom 1D target: one value per knot, CSV or plain lines.
    pub target_file: Option<PathBuf>,
    /// Domain bounds for a custom target (defaults 0 and 1).
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// Interval count for 1D problems.
    pub m: Option<usize>,
    /// Interval counts for 2D problems.
    pub mx: Option<usize>,
    pub my: Option<usize>,
    /// Constant source term.
    #[serde(default = "d_source")]
    pub source: f64,
    #[serde(default = "d_noise_rel")]
    pub noise_rel: f64,
    /// Keep every k-th interior knot as an observation point.
    #[serde(default = "d_stride")]
    pub obs_stride: usize,
    /// Generate data on a twice-refined grid to avoid the inverse crime.
    #[serde(default)]
    pub fine_data_grid: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            example: Some(0),
            target_file: None,
            a: None,
            b: None,
            m: None,
            mx: None,
            my: None,
            source: d_source(),
            noise_rel: d_noise_rel(),
            obs_stride: d_stride(),
            fine_data_grid: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    SquaredExponential,
    PeriodicSquaredExponential,
    SpectralLaplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub l: Option<f64>,
    pub p: Option<f64>,
    pub s: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            kind: PriorKind::SquaredExponential,
            l: Some(0.1),
            p: None,
            s: None,
        }
    }
}

impl PriorConfig {
    pub fn to_kernel_spec(&self) -> Result<KernelSpec> {
        let need = |field: &str, v: Option<f64>| {
            v.ok_or_else(|| {
                Error::config(
                    format!("prior.{field}"),
                    format!("required for kind {:?}", self.kind),
                )
            })
        };
        let spec = match self.kind {
            PriorKind::SquaredExponential => KernelSpec::SquaredExponential {
                l: need("l", self.l)?,
            },
            PriorKind::PeriodicSquaredExponential => KernelSpec::PeriodicSquaredExponential {
                l: need("l", self.l)?,
                p: need("p", self.p)?,
            },
            PriorKind::SpectralLaplacian => KernelSpec::SpectralLaplacian {
                s: need("s", self.s)?,
            },
        };
        spec.validate()
            .map_err(|e| Error::config("prior", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Tv,
    Tp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default)]
    pub weight_rule: WeightRuleName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightRuleName {
    #[default]
    Product,
    Power,
}

impl From<WeightRuleName> for WeightRule {
    fn from(w: WeightRuleName) -> WeightRule {
        match w {
            WeightRuleName::Product => WeightRule::Product,
            WeightRuleName::Power => WeightRule::Power,
        }
    }
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            kind: RegularizerKind::Tp,
            lambda: d_lambda(),
            theta: d_theta(),
            beta: d_beta(),
            weight_rule: WeightRuleName::Product,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformName {
    #[default]
    Identity,
    Exponential,
}

impl From<TransformName> for Transform {
    fn from(t: TransformName) -> Transform {
        match t {
            TransformName::Identity => Transform::Identity,
            TransformName::Exponential => Transform::Exponential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_n_samples")]
    pub n_samples: usize,
    #[serde(default = "d_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default = "d_lag")]
    pub lag: usize,
    #[serde(default)]
    pub transform: TransformName,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Keep every chain state instead of only the retained ones.
    #[serde(default)]
    pub store_full_chain: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            rho: d_rho(),
            n_samples: d_n_samples(),
            burn_in_fraction: d_burn_in(),
            lag: d_lag(),
            transform: TransformName::Identity,
            seed: d_seed(),
            store_full_chain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        match (p.example, &p.target_file) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "problem",
                    "give either example or target_file, not both",
                ));
            }
            (None, None) => {
                return Err(Error::config(
                    "problem",
                    "one of example or target_file is required",
                ));
            }
            (Some(id), None) => {
                let (_, _, two_d) = example_domain(id)
                    .map_err(|e| Error::config("problem.example", e.to_string()))?;
                if two_d {
                    if p.m.is_some() {
                        return Err(Error::config(
                            "problem.m",
                            format!("example {id} is 2D; use mx/my"),
                        ));
                    }
                } else if p.mx.is_some() || p.my.is_some() {
                    return Err(Error::config(
                        "problem.mx",
                        format!("example {id} is 1D; use m"),
                    ));
                }
            }
            (None, Some(_)) => {
                if let (Some(a), Some(b)) = (p.a.or(Some(0.0)), p.b.or(Some(1.0))) {
                    if b <= a {
                        return Err(Error::config("problem.b", "need b > a"));
                    }
                }
            }
        }
        if let Some(m) = p.m {
            if m < 2 {
                return Err(Error::config("problem.m", "need m >= 2"));
            }
        }
        for (key, v) in [("problem.mx", p.mx), ("problem.my", p.my)] {
            if let Some(m) = v {
                if m < 2 {
                    return Err(Error::config(key, "need at least 2 intervals"));
                }
            }
        }
        if p.noise_rel < 0.0 {
            return Err(Error::config("problem.noise_rel", "must be >= 0"));
        }
        if p.obs_stride == 0 {
            return Err(Error::config("problem.obs_stride", "must be >= 1"));
        }
        if !p.source.is_finite() {
            return Err(Error::config("problem.source", "must be finite"));
        }

        self.prior.to_kernel_spec()?;

        let r = &self.regularizer;
        if r.lambda < 0.0 {
            return Err(Error::config("regularizer.lambda", "must be >= 0"));
        }
        if r.kind == RegularizerKind::Tp {
            TpParams {
                theta: r.theta,
                beta: r.beta,
                lambda: r.lambda,
                rule: r.weight_rule.into(),
            }
            .validate()
            .map_err(|e| Error::config("regularizer", e.to_string()))?;
        }

        let s = &self.sampler;
        if !(0.0..=1.0).contains(&s.rho) {
            return Err(Error::config("sampler.rho", "must lie in [0, 1]"));
        }
        if s.n_samples == 0 {
            return Err(Error::config("sampler.n_samples", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&s.burn_in_fraction) {
            return Err(Error::config("sampler.burn_in_fraction", "must lie in [0, 1)"));
        }
        if s.lag == 0 {
            return Err(Error::config("sampler.lag", "must be >= 1"));
        }
        Ok(())
    }

    /// Seed used for data generation.
    pub fn data_seed(&self) -> u64 {
        self.sampler.seed
    }

    /// Seed used by the chain; offset so the noise and the proposals draw
    /// from different streams.
    pub fn chain_seed(&self) -> u64 {
        self.sampler.seed.wrapping_add(1)
    }
}

/// Parse a TOML config file; unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Where a preset parameter comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamOrigin {
    /// Stated for this experiment.
    Stated,
    /// Carried over from an earlier experiment.
    Inherited(&'static str),
    /// Implementation default, not stated anywhere.
    Default,
}

/// A named experiment configuration plus the provenance of each parameter.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub config: ExperimentConfig,
    pub origins: BTreeMap<&'static str, ParamOrigin>,
}

pub const PRESET_NAMES: [&str; 7] = [
    "example0", "example1", "example2", "example3", "example4", "example5", "example6",
];

/// Build a preset by name.
pub fn preset(name: &str) -> Result<Preset> {
    let id = PRESET_NAMES
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| {
            Error::config(
                "preset",
                format!("unknown preset `{name}`; available: {}", PRESET_NAMES.join(", ")),
            )
        })?;
    Ok(preset_by_id(id))
}

fn preset_by_id(id: usize) -> Preset {
    use ParamOrigin::*;
    let name = PRESET_NAMES[id];
    let mut config = ExperimentConfig {
        problem: ProblemConfig {
            example: Some(id),
            ..ProblemConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let mut origins: BTreeMap<&'static str, ParamOrigin> = BTreeMap::new();
    origins.insert("problem.example", Stated);
    origins.insert("problem.noise_rel", if id == 0 { Stated } else { Inherited("example0") });
    origins.insert("problem.source", Default);
    origins.insert("problem.grid", Default);
    origins.insert("sampler.burn_in_fraction", if id == 0 { Stated } else { Inherited("example0") });
    origins.insert("sampler.lag", if id == 0 { Stated } else { Inherited("example0") });
    origins.insert("sampler.seed", Default);
    origins.insert("regularizer.kind", Default);

    let set = |origins: &mut BTreeMap<&'static str, ParamOrigin>,
               key: &'static str,
               origin: ParamOrigin| {
        origins.insert(key, origin);
    };

    match id {
        0 => {
            config.prior = PriorConfig {
                kind: PriorKind::PeriodicSquaredExponential,
                l: Some(1.0),
                p: Some(1.0),
                s: Some(1.5),
            };
            config.regularizer.lambda = 4.0;
            config.sampler.rho = 0.002;
            config.sampler.n_samples = 100_000;
            for k in [
                "prior.kind",
                "prior.l",
                "prior.p",
                "prior.s",
                "regularizer.lambda",
                "regularizer.theta",
                "regularizer.beta",
                "sampler.rho",
                "sampler.n_samples",
            ] {
                set(&mut origins, k, Stated);
            }
            set(&mut origins, "sampler.transform", Default);
        }
        1 => {
            config.prior = PriorConfig {
                kind: PriorKind::PeriodicSquaredExponential,
                l: Some(0.2),
                p: Some(1.0),
                s: Some(1.6),
            };
            config.regularizer.lambda = 20.0;
            config.sampler.rho = 0.01;
            config.sampler.n_samples = 100_000;
            for k in ["prior.l", "prior.s", "regularizer.lambda", "sampler.rho"] {
                set(&mut origins, k, Stated);
            }
            set(&mut origins, "prior.kind", Inherited("example0"));
            set(&mut origins, "prior.p", Inherited("example0"));
            set(&mut origins, "regularizer.theta", Inherited("example0"));
            set(&mut origins, "regularizer.beta", Inherited("example0"));
            set(&mut origins, "sampler.n_samples", Inherited("example0"));
            set(&mut origins, "sampler.transform", Default);
        }
        2 => {
            config.prior = PriorConfig {
                kind: PriorKind::SquaredExponential,
                l: Some(0.05),
                p: None,
                s: None,
            };
            config.regularizer.lambda = 10.0;
            // the stated transition parameter names the proposal step
            config.sampler.rho = 0.005;
            config.sampler.n_samples = 100_000;
            for k in ["prior.kind", "prior.l", "regularizer.lambda", "sampler.rho"] {
                set(&mut origins, k, Stated);
            }
            set(&mut origins, "regularizer.theta", Inherited("example0"));
            set(&mut origins, "regularizer.beta", Inherited("example0"));
            set(&mut origins, "sampler.n_samples", Inherited("example0"));
            set(&mut origins, "sampler.transform", Default);
        }
        3 => {
            config.prior = PriorConfig {
                kind: PriorKind::PeriodicSquaredExponential,
                l: Some(0.2),
                p: Some(2.5),
                s: None,
            };
            config.regularizer.lambda = 20.0;
            config.sampler.rho = 0.005;
            config.sampler.n_samples = 200_000;
            for k in [
                "prior.kind",
                "prior.l",
                "prior.p",
                "regularizer.lambda",
                "regularizer.theta",
                "regularizer.beta",
                "sampler.n_samples",
            ] {
                set(&mut origins, k, Stated);
            }
            set(&mut origins, "sampler.rho", Inherited("example2"));
            set(&mut origins, "sampler.transform", Default);
        }
        4 => {
            config.prior = PriorConfig {
                kind: PriorKind::SquaredExponential,
                l: Some(0.01),
                p: None,
                s: None,
            };
            config.regularizer.lambda = 5.0;
            config.sampler.rho = 0.005;
            config.sampler.n_samples = 200_000;
            config.sampler.transform = TransformName::Exponential;
            for k in ["prior.kind", "prior.l", "regularizer.lambda", "sampler.transform"] {
                set(&mut origins, k, Stated);
            }
            set(&mut origins, "regularizer.theta", Inherited("example0"));
            set(&mut origins, "regularizer.beta", Inherited("example0"));
            set(&mut origins, "sampler.rho", Inherited("example2"));
            set(&mut origins, "sampler.n_samples", Inherited("example3"));
        }
        5 => {
            config.prior = PriorConfig {
                kind: PriorKind::SquaredExponential,
                l: Some(0.1),
                p: None,
                s: None,
            };
            config.regularizer.lambda = 2.0;
            config.sampler.rho = 0.01;
            config.sampler.n_samples = 40_000;
            for k in ["prior.kind", "prior.l", "regularizer.lambda", "sampler.n_samples"] {
                set(&mut origins, k, Stated);
            }
            set(&mut origins, "regularizer.theta", Inherited("example0"));
            set(&mut origins, "regularizer.beta", Inherited("example0"));
            set(&mut origins, "sampler.rho", Inherited("example1"));
            set(&mut origins, "sampler.transform", Inherited("example1"));
        }
        6 => {
            config.prior = PriorConfig {
                kind: PriorKind::SquaredExponential,
                l: Some(0.1),
                p: None,
                s: None,
            };
            config.regularizer.lambda = 5.0;
            config.sampler.rho = 0.01;
            config.sampler.n_samples = 40_000;
            for k in ["prior.l", "regularizer.lambda"] {
                set(&mut origins, k, Stated);
            }
            set(&mut origins, "prior.kind", Inherited("example5"));
            set(&mut origins, "regularizer.theta", Inherited("example0"));
            set(&mut origins, "regularizer.beta", Inherited("example0"));
            set(&mut origins, "sampler.rho", Inherited("example1"));
            set(&mut origins, "sampler.n_samples", Inherited("example5"));
            set(&mut origins, "sampler.transform", Inherited("example1"));
        }
        _ => unreachable!(),
    }

    Preset {
        name,
        config,
        origins,
    }
}

/// All presets with their provenance tables.
pub fn all_presets() -> Vec<Preset> {
    (0..PRESET_NAMES.len()).map(preset_by_id).collect()
}

/// Assembled pieces of one experiment.
pub struct Problem {
    pub grid: Grid,
    pub q_true: Field,
    pub data: ObservationData,
    pub cov: FactorizedCovariance,
    pub potential: PotentialSpec,
    pub source: SourceTerm,
}

fn read_signal_values(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_signal_csv(&text)
        .ok_or_else(|| Error::config(path.display().to_string(), "no numeric signal column found"))
}

/// Extract a signal from CSV-ish text: comment lines (`#`) are skipped, a
/// header row is detected by failing to parse, and the last numeric column
/// of each row is used.
pub fn parse_signal_csv(text: &str) -> Option<Vec<f64>> {
    let mut values = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let last = line.split(',').next_back()?.trim();
        match last.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if values.is_empty() => continue, // header row
            Err(_) => return None,
        }
    }
    if values.len() >= 2 {
        Some(values)
    } else {
        None
    }
}

/// Build the grid, target, data, covariance, and potential for a config.
pub fn assemble(config: &ExperimentConfig) -> Result<Problem> {
    config.validate()?;
    let p = &config.problem;

    let (grid, q_true) = match (p.example, &p.target_file) {
        (Some(id), None) => {
            let (a, b, two_d) = example_domain(id)?;
            let grid = if two_d {
                Grid::Two(Grid2D::new(
                    a,
                    b,
                    a,
                    b,
                    p.mx.unwrap_or(DEFAULT_M_2D),
                    p.my.unwrap_or(DEFAULT_M_2D),
                )?)
            } else {
                Grid::One(Grid1D::new(a, b, p.m.unwrap_or(DEFAULT_M_1D))?)
            };
            (grid, target_example(id, &grid)?)
        }
        (None, Some(path)) => {
            let values = read_signal_values(path)?;
            let grid = Grid::One(Grid1D::new(
                p.a.unwrap_or(0.0),
                p.b.unwrap_or(1.0),
                values.len() - 1,
            )?);
            (grid, Field::new(grid, values)?)
        }
        _ => unreachable!("validated"),
    };

    let source = SourceTerm::Constant(p.source);
    let data = if p.fine_data_grid {
        let id = p.example.ok_or_else(|| {
            Error::config("problem.fine_data_grid", "needs a preset target")
        })?;
        let fine = match &grid {
            Grid::One(g) => Grid::One(g.refine(2)?),
            Grid::Two(g) => Grid::Two(Grid2D::new(g.ax, g.bx, g.ay, g.by, 2 * g.mx, 2 * g.my)?),
        };
        let q_fine = target_example(id, &fine)?;
        generate_data_refined(
            &q_fine,
            &grid,
            &source,
            p.noise_rel,
            config.data_seed(),
            p.obs_stride,
        )?
    } else {
        generate_data(&q_true, &source, p.noise_rel, config.data_seed(), p.obs_stride)?
    };

    let cov = build_covariance(&config.prior.to_kernel_spec()?, &grid)?;

    let data_for_hook = data.clone();
    let source_for_hook = source.clone();
    let misfit_hook =
        move |q: &Field| misfit(q, &data_for_hook, &source_for_hook);

    let reg = config.regularizer.clone();
    let regularizer_hook = move |q: &Field| -> Result<f64> {
        match reg.kind {
            RegularizerKind::None => Ok(0.0),
            RegularizerKind::Tv => tv_regularizer(q, reg.lambda),
            RegularizerKind::Tp => {
                let params = TpParams {
                    theta: reg.theta,
                    beta: reg.beta,
                    lambda: reg.lambda,
                    rule: reg.weight_rule.into(),
                };
                match q.grid() {
                    Grid::One(_) => Ok(tp_regularizer_1d(q.values(), &params)),
                    Grid::Two(_) => tp_regularizer_2d(q, &params),
                }
            }
        }
    };

    let potential = PotentialSpec::new(
        misfit_hook,
        regularizer_hook,
        config.sampler.transform.into(),
    );

    Ok(Problem {
        grid,
        q_true,
        data,
        cov,
        potential,
        source,
    })
}

/// Outcome of one experiment run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub error_l2_rel: f64,
    pub acceptance_rate: f64,
    pub retained_count: usize,
    pub duration: Duration,
    pub artifacts: Vec<PathBuf>,
}

/// Run the full pipeline and, if an output directory is configured, emit
/// the CSV artifacts and the metadata sidecar.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let problem = assemble(config)?;
    let s = &config.sampler;

    let mut opts = ChainOptions::new(s.rho, s.n_samples, config.chain_seed());
    if !s.store_full_chain {
        opts.storage = Storage::Retained {
            burn_in_fraction: s.burn_in_fraction,
            lag: s.lag,
        };
    }
    let chain = run_chain(&problem.potential, &problem.cov, &opts)?;
    let summary = summarize(&chain, s.burn_in_fraction, s.lag)?;
    let error = relative_l2_error(&summary.mean, &problem.q_true)?;

    let mut artifacts = Vec::new();
    if let Some(dir) = &config.output.dir {
        artifacts = emit_outputs(&summary, &problem.q_true, dir)?;
        let obs_path = dir.join("observations.csv");
        fs::write(&obs_path, problem.data.to_csv(&problem.grid))
            .map_err(|e| Error::io(&obs_path, e))?;
        artifacts.push(obs_path);
        let meta_path = dir.join("run.meta");
        fs::write(
            &meta_path,
            run_metadata(config, &problem, &summary, error, start.elapsed()),
        )
        .map_err(|e| Error::io(&meta_path, e))?;
        artifacts.push(meta_path);
    }

    Ok(RunReport {
        error_l2_rel: error,
        acceptance_rate: summary.acceptance_rate,
        retained_count: summary.retained_count,
        duration: start.elapsed(),
        artifacts,
    })
}

/// Write the reconstruction and pair-set CSVs for a posterior summary.
pub fn emit_outputs(
    summary: &PosteriorSummary,
    q_true: &Field,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if dir.as_os_str().is_empty() {
        return Err(Error::InvalidParameter("empty output directory".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let recon_path = dir.join("reconstruction.csv");
    fs::write(&recon_path, reconstruction_csv(summary, q_true)?)
        .map_err(|e| Error::io(&recon_path, e))?;

    let pairs_path = dir.join("pairs.csv");
    fs::write(&pairs_path, field_pairs(&summary.mean)?.to_csv())
        .map_err(|e| Error::io(&pairs_path, e))?;

    Ok(vec![recon_path, pairs_path])
}

fn reconstruction_csv(summary: &PosteriorSummary, q_true: &Field) -> Result<String> {
    if q_true.len() != summary.mean.len() {
        return Err(Error::DimensionMismatch(
            "target and summary grids differ".into(),
        ));
    }
    let mut out = String::new();
    match q_true.grid() {
        Grid::One(g) => {
            out.push_str("x,q_true,q_mean,q_std\n");
            for j in 0..=g.m {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    g.knot(j),
                    q_true.values()[j],
                    summary.mean.values()[j],
                    summary.std.values()[j]
                );
            }
        }
        Grid::Two(g) => {
            out.push_str("x,y,q_true,q_mean,q_std\n");
            for iy in 0..=g.my {
                for ix in 0..=g.mx {
                    let k = g.index(ix, iy);
                    let (x, y) = g.knot(ix, iy);
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        x,
                        y,
                        q_true.values()[k],
                        summary.mean.values()[k],
                        summary.std.values()[k]
                    );
                }
            }
        }
    }
    Ok(out)
}

fn run_metadata(
    config: &ExperimentConfig,
    problem: &Problem,
    summary: &PosteriorSummary,
    error: f64,
    duration: Duration,
) -> String {
    let mut out = String::new();
    let p = &config.problem;
    match p.example {
        Some(id) => {
            let _ = writeln!(out, "example={id}");
        }
        None => {
            let _ = writeln!(out, "target_file={}", p.target_file.as_ref().unwrap().display());
        }
    }
    match &problem.grid {
        Grid::One(g) => {
            let _ = writeln!(out, "grid_m={}", g.m);
            let _ = writeln!(out, "domain=({},{})", g.a, g.b);
        }
        Grid::Two(g) => {
            let _ = writeln!(out, "grid_mx={}", g.mx);
            let _ = writeln!(out, "grid_my={}", g.my);
            let _ = writeln!(out, "domain=({},{})x({},{})", g.ax, g.bx, g.ay, g.by);
        }
    }
    let _ = writeln!(out, "source={}", p.source);
    let _ = writeln!(out, "noise_rel={}", p.noise_rel);
    let _ = writeln!(out, "obs_stride={}", p.obs_stride);
    let _ = writeln!(out, "fine_data_grid={}", p.fine_data_grid);
    let _ = writeln!(out, "sigma={}", problem.data.noise_sigma);
    let _ = writeln!(out, "n_observations={}", problem.data.locations.len());
    let _ = writeln!(out, "prior_kind={}", problem.cov.spec().name());
    if let Some(l) = config.prior.l {
        let _ = writeln!(out, "prior_l={l}");
    }
    if let Some(pp) = config.prior.p {
        let _ = writeln!(out, "prior_p={pp}");
    }
    if let Some(s) = config.prior.s {
        let _ = writeln!(out, "prior_s={s}");
    }
    let _ = writeln!(out, "jitter={}", problem.cov.jitter());
    let r = &config.regularizer;
    let kind = match r.kind {
        RegularizerKind::None => "none",
        RegularizerKind::Tv => "tv",
        RegularizerKind::Tp => "tp",
    };
    let _ = writeln!(out, "regularizer={kind}");
    let _ = writeln!(out, "lambda={}", r.lambda);
    if r.kind == RegularizerKind::Tp {
        let _ = writeln!(out, "theta={}", r.theta);
        let _ = writeln!(out, "beta={}", r.beta);
        let rule = match r.weight_rule {
            WeightRuleName::Product => "product",
            WeightRuleName::Power => "power",
        };
        let _ = writeln!(out, "weight_rule={rule}");
    }
    let s = &config.sampler;
    let _ = writeln!(out, "rho={}", s.rho);
    let _ = writeln!(out, "n_samples={}", s.n_samples);
    let _ = writeln!(out, "burn_in_fraction={}", s.burn_in_fraction);
    let _ = writeln!(out, "lag={}", s.lag);
    let transform = match s.transform {
        TransformName::Identity => "identity",
        TransformName::Exponential => "exponential",
    };
    let _ = writeln!(out, "transform={transform}");
    let _ = writeln!(out, "seed={}", s.seed);
    let _ = writeln!(out, "data_seed={}", config.data_seed());
    let _ = writeln!(out, "chain_seed={}", config.chain_seed());
    let _ = writeln!(out, "acceptance_rate={}", summary.acceptance_rate);
    let _ = writeln!(out, "retained_samples={}", summary.retained_count);
    let _ = writeln!(out, "error_l2_rel={error}");
    let _ = writeln!(out, "duration_secs={}", duration.as_secs_f64());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_example0_parameters() {
        let p = preset("example0").unwrap();
        let c = &p.config;
        assert_eq!(c.prior.l, Some(1.0));
        assert_eq!(c.prior.p, Some(1.0));
        assert_eq!(c.regularizer.theta, 3.0);
        assert_eq!(c.regularizer.beta, 0.001);
        assert_eq!(c.regularizer.lambda, 4.0);
        assert_eq!(c.sampler.rho, 0.002);
        assert_eq!(c.sampler.n_samples, 100_000);
    }

    #[test]
    fn preset_example3_parameters() {
        let p = preset("example3").unwrap();
        let c = &p.config;
        assert_eq!(c.prior.l, Some(0.2));
        assert_eq!(c.prior.p, Some(2.5));
        assert_eq!(c.regularizer.lambda, 20.0);
        assert_eq!(c.sampler.n_samples, 200_000);
        assert_eq!(
            p.origins.get("sampler.rho"),
            Some(&ParamOrigin::Inherited("example2"))
        );
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(preset("example9").is_err());
    }

    #[test]
    fn config_rejects_out_of_range() {
        let mut c = preset("example0").unwrap().config;
        c.sampler.rho = 1.5;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("sampler.rho"));

        let mut c = preset("example0").unwrap().config;
        c.problem.obs_stride = 0;
        assert!(c.validate().is_err());

        let mut c = preset("example5").unwrap().config;
        c.problem.m = Some(40);
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("2D"), "{err}");
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let text = r#"
[problem]
example = 1
m = 60

[prior]
kind = "periodic_squared_exponential"
l = 0.2
p = 1.0

[regularizer]
kind = "tp"
lambda = 20.0

[sampler]
rho = 0.01
n_samples = 500
seed = 7

[output]
"#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.problem.m, Some(60));
        assert_eq!(c.sampler.lag, 5);

        let bad = "[problem]\nexample = 1\nunknown_knob = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn signal_csv_parsing() {
        assert_eq!(
            parse_signal_csv("# c\nindex,value\n0,0.5\n1,0.25\n2,1.0\n"),
            Some(vec![0.5, 0.25, 1.0])
        );
        assert_eq!(parse_signal_csv("1.0\n2.0\n"), Some(vec![1.0, 2.0]));
        assert_eq!(parse_signal_csv("1.0\n"), None);
        assert_eq!(parse_signal_csv("a,b\n1,x\n"), None);
    }

    #[test]
    fn smoke_run_noise_free() {
        let mut c = preset("example1").unwrap().config;
        c.problem.m = Some(30);
        c.problem.noise_rel = 0.0;
        c.regularizer.kind = RegularizerKind::None;
        c.sampler.n_samples = 50;
        c.sampler.burn_in_fraction = 0.5;
        c.sampler.lag = 2;
        let report = run_experiment(&c).unwrap();
        assert!(report.error_l2_rel.is_finite());
        assert!(report.artifacts.is_empty());
    }

    #[test]
    fn deterministic_error_metric() {
        let mut c = preset("example2").unwrap().config;
        c.problem.m = Some(40);
        c.sampler.n_samples = 300;
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.error_l2_rel, b.error_l2_rel);
        assert_eq!(a.acceptance_rate, b.acceptance_rate);
    }

    #[test]
    fn informed_start_beats_zero_field() {
        use crate::pcn::{run_chain, summarize, ChainOptions};

        let mut c = preset("example1").unwrap().config;
        c.problem.m = Some(40);
        c.regularizer.kind = RegularizerKind::None;
        let problem = assemble(&c).unwrap();

        let mut opts = ChainOptions::new(c.sampler.rho, 1, c.chain_seed());
        opts.initial = Some(problem.q_true.clone());
        let chain = run_chain(&problem.potential, &problem.cov, &opts).unwrap();
        let summary = summarize(&chain, 0.0, 1).unwrap();
        let err = relative_l2_error(&summary.mean, &problem.q_true).unwrap();

        let zero = Field::zeros(problem.grid);
        let zero_err = relative_l2_error(&zero, &problem.q_true).unwrap();
        assert!(err < zero_err, "{err} vs {zero_err}");
    }

    #[test]
    fn emit_outputs_writes_csvs() {
        let dir = std::env::temp_dir().join(format!("topobayes-test-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let mut c = preset("example1").unwrap().config;
        c.problem.m = Some(24);
        c.sampler.n_samples = 60;
        c.sampler.lag = 3;
        c.output.dir = Some(dir.clone());
        let report = run_experiment(&c).unwrap();
        assert_eq!(report.artifacts.len(), 4);
        let recon = fs::read_to_string(dir.join("reconstruction.csv")).unwrap();
        assert!(recon.starts_with("x,q_true,q_mean,q_std\n"));
        assert_eq!(recon.lines().count(), 1 + 25);
        let pairs = fs::read_to_string(dir.join("pairs.csv")).unwrap();
        assert!(pairs.starts_with("origin,lo,hi,"));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn empty_output_dir_is_an_error() {
        let mut c = preset("example1").unwrap().config;
        c.problem.m = Some(20);
        c.sampler.n_samples = 20;
        c.sampler.lag = 1;
        c.output.dir = Some(PathBuf::new());
        assert!(run_experiment(&c).is_err());
    }
}
