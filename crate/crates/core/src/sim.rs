//! Data generation and seeded Monte Carlo experiments.
//!
//! Each replication draws a fresh design, an alternative (when the source is
//! random) and the noise, from three independent ChaCha streams keyed by
//! `(seed, replication)`. Results therefore do not depend on how
//! replications are scheduled across worker threads.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisEvaluator, DesignPoint};
use crate::error::{domain, Error, Result};
use crate::extremal::{CoefficientSource, ExtremalProblem, ExtremalSolution};
use crate::families::{Family, MultiIndex};
use crate::numeric::{normal_cdf, CompensatedSum};
use crate::testing::{decide, h_shift, threshold_np, Sample, TestSpec, UStatistic, VarianceMode};

/// Default half-width `delta` of the prior's scales `(1 - delta, 1 + delta)`.
pub const DEFAULT_PRIOR_DELTA: f64 = 0.05;

/// Two-sided 95% normal quantile used by [`wilson_interval`].
const Z95: f64 = 1.959963984540054;

/// A one-dimensional distribution function used for the Smirnov transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cdf {
    Uniform,
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
    /// Piecewise-linear through `(y, F(y))` knots; 0 before the first knot
    /// and 1 after the last.
    Table { knots: Vec<(f64, f64)> },
}

impl Cdf {
    pub fn validate(&self) -> Result<()> {
        match self {
            Cdf::Uniform => Ok(()),
            Cdf::Exponential { rate } if !(rate.is_finite() && *rate > 0.0) => {
                domain(format!("exponential rate must be positive, got {rate}"))
            }
            Cdf::Normal { sd, mean } if !(sd.is_finite() && *sd > 0.0 && mean.is_finite()) => {
                domain(format!("normal cdf needs finite mean and positive sd, got ({mean}, {sd})"))
            }
            Cdf::Table { knots } => {
                if knots.len() < 2 {
                    return domain("cdf table needs at least two knots");
                }
                if knots.iter().any(|(y, p)| !y.is_finite() || !(0.0..=1.0).contains(p)) {
                    return domain("cdf table values must be finite with F in [0,1]");
                }
                if knots.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 >= w[0].1)) {
                    return domain("cdf table must have increasing y and nondecreasing F");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Cdf::Uniform => y.clamp(0.0, 1.0),
            Cdf::Exponential { rate } => {
                if y <= 0.0 {
                    0.0
                } else {
                    -(-rate * y).exp_m1()
                }
            }
            Cdf::Normal { mean, sd } => normal_cdf((y - mean) / sd),
            Cdf::Table { knots } => {
                let (first, last) = (knots[0], knots[knots.len() - 1]);
                if y < first.0 {
                    return 0.0;
                }
                if y >= last.0 {
                    return 1.0;
                }
                let i = knots.partition_point(|k| k.0 <= y) - 1;
                let (a, b) = (knots[i], knots[i + 1]);
                a.1 + (b.1 - a.1) * (y - a.0) / (b.0 - a.0)
            }
        }
    }

    /// Draw `y` from the distribution itself (not its transform).
    pub fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Cdf::Uniform => rng.gen::<f64>(),
            Cdf::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            Cdf::Normal { mean, sd } => Normal::new(*mean, *sd).expect("validated sd").sample(rng),
            Cdf::Table { knots } => {
                let p: f64 = rng.gen();
                let i = knots.partition_point(|k| k.1 < p).clamp(1, knots.len() - 1);
                let (a, b) = (knots[i - 1], knots[i]);
                if b.1 > a.1 {
                    a.0 + (b.0 - a.0) * (p - a.1) / (b.1 - a.1)
                } else {
                    b.0
                }
            }
        }
    }
}

/// Distribution of the design points.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cdfs", rename_all = "snake_case")]
pub enum DesignModel {
    #[default]
    Uniform,
    /// Independent coordinates with the given distribution functions, mapped
    /// to the cube by `t^k = F_k(y^k)`.
    ProductCdf(Vec<Cdf>),
}

impl DesignModel {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            DesignModel::Uniform => Ok(()),
            DesignModel::ProductCdf(cdfs) if cdfs.len() != d => {
                domain(format!("design has {} cdfs for d = {d}", cdfs.len()))
            }
            DesignModel::ProductCdf(cdfs) => cdfs.iter().try_for_each(Cdf::validate),
        }
    }
}

/// Map raw product-density draws onto the cube coordinate-wise.
pub fn smirnov_transform(model: &DesignModel, raw: &[Vec<f64>]) -> Result<Vec<DesignPoint>> {
    raw.iter()
        .map(|y| {
            let t = match model {
                DesignModel::Uniform => y.clone(),
                DesignModel::ProductCdf(cdfs) => {
                    if cdfs.len() != y.len() {
                        return domain(format!("point has {} coordinates, model {}", y.len(), cdfs.len()));
                    }
                    cdfs.iter().zip(y).map(|(f, &v)| f.cdf(v)).collect()
                }
            };
            DesignPoint::new(t)
        })
        .collect()
}

/// `n` iid design points. A product design is transformed to the uniform
/// law, so both models draw uniforms directly.
pub fn sample_design<R: Rng + ?Sized>(
    model: &DesignModel,
    n: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<DesignPoint>> {
    model.validate(d)?;
    Ok((0..n)
        .map(|_| DesignPoint::new((0..d).map(|_| rng.gen::<f64>()).collect()).expect("unit draws"))
        .collect())
}

/// `x_i = sum_l theta_l phi_l(t_i) + tau xi_i`.
pub fn sample_response<R: Rng + ?Sized>(
    theta: &[(MultiIndex, f64)],
    basis: Basis,
    points: Vec<DesignPoint>,
    tau: f64,
    rng: &mut R,
) -> Result<Sample> {
    if !(tau.is_finite() && tau >= 0.0) {
        return domain(format!("noise level must be nonnegative, got {tau}"));
    }
    let signal = Signal::new(basis, theta);
    let mut scratch = signal.evaluator.scratch();
    let mut row = vec![0.0; signal.evaluator.len()];
    let responses = points
        .iter()
        .map(|t| {
            let xi: f64 = StandardNormal.sample(rng);
            signal.value(t, &mut row, &mut scratch) + tau * xi
        })
        .collect();
    Sample::new(points, responses)
}

struct Signal {
    evaluator: BasisEvaluator,
    coeffs: Vec<f64>,
}

impl Signal {
    fn new(basis: Basis, theta: &[(MultiIndex, f64)]) -> Self {
        let (indices, coeffs) = theta.iter().cloned().unzip();
        Signal { evaluator: BasisEvaluator::new(basis, indices), coeffs }
    }

    fn value(&self, t: &[f64], row: &mut [f64], scratch: &mut crate::basis::Scratch) -> f64 {
        if self.coeffs.is_empty() {
            return 0.0;
        }
        self.evaluator.eval_into(t, row, scratch);
        row.iter().zip(&self.coeffs).map(|(p, c)| p * c).sum()
    }
}

/// Signs of a deterministic least-favorable alternative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignRule {
    #[default]
    AllPositive,
    Rademacher,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlternativeSource {
    Null,
    Fixed(Vec<(MultiIndex, f64)>),
    /// `theta_l = +- v_l / sqrt(n)`.
    LeastFavorable { solution: ExtremalSolution, signs: SignRule },
    /// `theta_l ~ N(0, v_l^2 / n)`; the solution should be solved at
    /// `(b, B) = (1 - delta, 1 + delta)`, see [`prior_problem`].
    GaussianPrior { solution: ExtremalSolution },
}

impl AlternativeSource {
    pub fn mode(&self) -> &'static str {
        match self {
            AlternativeSource::Null => "null",
            AlternativeSource::Fixed(_) => "fixed",
            AlternativeSource::LeastFavorable { signs: SignRule::AllPositive, .. } => "lf",
            AlternativeSource::LeastFavorable { signs: SignRule::Rademacher, .. } => "lf-rademacher",
            AlternativeSource::GaussianPrior { .. } => "prior",
        }
    }

    pub fn solution(&self) -> Option<&ExtremalSolution> {
        match self {
            AlternativeSource::LeastFavorable { solution, .. }
            | AlternativeSource::GaussianPrior { solution } => Some(solution),
            _ => None,
        }
    }

    fn support(&self) -> Vec<MultiIndex> {
        match self {
            AlternativeSource::Null => Vec::new(),
            AlternativeSource::Fixed(theta) => theta.iter().map(|(l, _)| l.clone()).collect(),
            AlternativeSource::LeastFavorable { solution, .. }
            | AlternativeSource::GaussianPrior { solution } => {
                solution.weights.iter().map(|w| w.index.clone()).collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AlternativeSource::Fixed(theta) => {
                match theta.iter().find(|(_, t)| !t.is_finite()) {
                    Some((l, t)) => domain(format!("coefficient of {l} is not finite: {t}")),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// The extremal problem whose solution parametrizes the Gaussian prior.
pub fn prior_problem(source: impl Into<CoefficientSource>, n: u64, r_n: f64, delta: f64) -> Result<ExtremalProblem> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0,1), got {delta}"));
    }
    Ok(ExtremalProblem::new(source, n, r_n).with_scales(1.0 - delta, 1.0 + delta))
}

/// One draw of the coefficient vector `theta`.
pub fn draw_alternative<R: Rng + ?Sized>(source: &AlternativeSource, rng: &mut R) -> Vec<(MultiIndex, f64)> {
    match source {
        AlternativeSource::Null => Vec::new(),
        AlternativeSource::Fixed(theta) => theta.clone(),
        AlternativeSource::LeastFavorable { solution, signs } => {
            let sn = (solution.n as f64).sqrt();
            solution
                .weights
                .iter()
                .map(|w| {
                    let mag = w.v_sq.sqrt() / sn;
                    let sign = match signs {
                        SignRule::AllPositive => 1.0,
                        SignRule::Rademacher if rng.gen::<bool>() => 1.0,
                        SignRule::Rademacher => -1.0,
                    };
                    (w.index.clone(), sign * mag)
                })
                .collect()
        }
        AlternativeSource::GaussianPrior { solution } => {
            let sn = (solution.n as f64).sqrt();
            solution
                .weights
                .iter()
                .map(|w| {
                    let z: f64 = StandardNormal.sample(rng);
                    (w.index.clone(), z * w.v_sq.sqrt() / sn)
                })
                .collect()
        }
    }
}

/// Whether `theta` lies in `{sum theta^2 >= (B r)^2, sum c^2 theta^2 <= b^2}`.
pub fn in_alternative_set<F>(theta: &[(MultiIndex, f64)], coefficient: F, r_n: f64, b: f64, big_b: f64) -> Result<bool>
where
    F: Fn(&MultiIndex) -> Result<f64>,
{
    let mut norm = CompensatedSum::new();
    let mut smooth = CompensatedSum::new();
    for (l, t) in theta {
        let c = coefficient(l)?;
        norm.add(t * t);
        smooth.add(c * c * t * t);
    }
    Ok(norm.value() >= (big_b * r_n).powi(2) && smooth.value() <= b * b)
}

/// Coefficient lookup over the members of a solution.
pub fn solution_coefficients(solution: &ExtremalSolution) -> impl Fn(&MultiIndex) -> Result<f64> + '_ {
    let map: HashMap<&MultiIndex, f64> =
        solution.weights.iter().map(|w| (&w.index, w.coefficient)).collect();
    move |l| {
        map.get(l)
            .copied()
            .ok_or_else(|| Error::Domain(format!("index {l} is not in the solution")))
    }
}

/// Gaussian error predictions at detectability `u_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedErrors {
    /// `Phi(H^(alpha) - u_n)`.
    pub beta: f64,
    /// `2 Phi(-u_n / 2)`, total error of the test at threshold `u_n / 2`.
    pub gamma: f64,
    /// `2 Phi(-u_n)`, the alternative form of the total error.
    pub gamma_alt: f64,
}

pub fn predicted_errors(alpha: f64, u_n: f64) -> Result<PredictedErrors> {
    let h = threshold_np(alpha)?;
    if !(u_n >= 0.0) {
        return domain(format!("u_n must be nonnegative, got {u_n}"));
    }
    Ok(PredictedErrors {
        beta: normal_cdf(h - u_n),
        gamma: 2.0 * normal_cdf(-u_n / 2.0),
        gamma_alt: 2.0 * normal_cdf(-u_n),
    })
}

/// 95% Wilson score interval for `k` successes out of `m`.
pub fn wilson_interval(k: u64, m: u64) -> (f64, f64) {
    if m == 0 {
        return (0.0, 1.0);
    }
    let m = m as f64;
    let p = k as f64 / m;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / m;
    let centre = (p + z2 / (2.0 * m)) / denom;
    let half = Z95 * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloConfig {
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    pub replications: u64,
    pub seed: u64,
    pub workers: usize,
}

impl MonteCarloConfig {
    pub fn new(n: usize, d: usize, replications: u64, seed: u64) -> Self {
        MonteCarloConfig { n, d, tau: 1.0, replications, seed, workers: 1 }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Parameters of the family behind a run, carried into the CSV row.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilyColumns {
    pub family: String,
    pub d: Option<usize>,
    pub sigma: Option<f64>,
    pub s: Option<f64>,
    pub kappa: Option<f64>,
    pub m: Option<usize>,
}

impl From<&Family> for FamilyColumns {
    fn from(f: &Family) -> Self {
        let r = crate::families::FamilyRecord::from(f.clone());
        FamilyColumns {
            family: r.variant,
            d: r.d,
            sigma: r.sigma,
            s: r.s,
            kappa: r.kappa,
            m: r.m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub schema_version: u32,
    #[serde(flatten)]
    pub family: FamilyColumns,
    pub mode: String,
    pub variance: String,
    pub n: usize,
    pub r_n: Option<f64>,
    /// Kernel size `N`.
    pub index_count: usize,
    #[serde(rename = "C")]
    pub cutoff: Option<f64>,
    pub u_n: Option<f64>,
    #[serde(rename = "H")]
    pub threshold: f64,
    pub replications: u64,
    pub rejections: u64,
    pub empirical_rate: f64,
    pub wilson_ci: (f64, f64),
    /// Predicted rejection rate: `1 - Phi(H)` under the null and
    /// `1 - Phi(H - u)` otherwise, with `u = u_n` or `h_n(theta)`.
    pub predicted: Option<f64>,
    pub mean_u: f64,
    pub sd_u: f64,
    pub seed: u64,
    pub runtime: f64,
}

pub const CSV_HEADER: &str =
    "family,d,sigma,s,kappa,m,n,r_n,N,C,u_n,H,mode,reps,rejections,rate,ci_lo,ci_hi,predicted,seed";

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MonteCarloReport {
    pub fn with_family(mut self, family: &Family) -> Self {
        self.family = family.into();
        self
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// JSON without the wall-clock field.
    pub fn to_json_without_runtime(&self) -> serde_json::Value {
        let mut v = self.to_json();
        v.as_object_mut().expect("object").remove("runtime");
        v
    }

    /// One row matching [`CSV_HEADER`].
    pub fn to_csv_row(&self) -> String {
        let f = &self.family;
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.family,
            opt(f.d),
            opt(f.sigma),
            opt(f.s),
            opt(f.kappa),
            opt(f.m),
            self.n,
            opt(self.r_n),
            self.index_count,
            opt(self.cutoff),
            opt(self.u_n),
            self.threshold,
            self.mode,
            self.replications,
            self.rejections,
            self.empirical_rate,
            self.wilson_ci.0,
            self.wilson_ci.1,
            opt(self.predicted),
            self.seed
        );
        row
    }
}

/// Per-replication `(design, alternative, noise)` generators.
fn streams(seed: u64, rep: u64) -> [ChaCha8Rng; 3] {
    std::array::from_fn(|sub| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep * 4 + sub as u64);
        rng
    })
}

/// Run `replications` independent tests and aggregate the rejections.
pub fn monte_carlo(
    spec: &TestSpec,
    source: &AlternativeSource,
    model: &DesignModel,
    config: &MonteCarloConfig,
) -> Result<MonteCarloReport> {
    let start = Instant::now();
    spec.validate()?;
    source.validate()?;
    model.validate(config.d)?;
    if config.replications == 0 {
        return domain("replications must be at least 1");
    }
    if config.n == 0 {
        return domain("sample size must be at least 1");
    }
    if config.workers == 0 {
        return domain("workers must be at least 1");
    }
    if !(config.tau.is_finite() && config.tau >= 0.0) {
        return domain(format!("noise level must be nonnegative, got {}", config.tau));
    }
    let support = source.support();
    let need = spec
        .required_dimension()
        .max(support.iter().map(MultiIndex::len).max().unwrap_or(0));
    if config.d < need {
        return domain(format!("indices need d >= {need}, got d = {}", config.d));
    }

    let stat = UStatistic::new(spec);
    // positions of the alternative's indices inside the kernel row, when
    // they are all present there
    let position: HashMap<&MultiIndex, usize> =
        stat.evaluator().indices().iter().enumerate().map(|(i, l)| (l, i)).collect();
    let shared: Option<Vec<usize>> = support.iter().map(|l| position.get(l).copied()).collect();
    let own_eval = match shared {
        Some(_) => None,
        None => Some(BasisEvaluator::new(spec.basis, support.clone())),
    };

    let run = |rep: u64| -> Result<(f64, bool)> {
        let [mut design_rng, mut alt_rng, mut noise_rng] = streams(config.seed, rep);
        let points = sample_design(model, config.n, config.d, &mut design_rng)?;
        let theta: Vec<f64> = draw_alternative(source, &mut alt_rng).into_iter().map(|(_, t)| t).collect();
        let mut acc = stat.accumulator();
        let mut row = vec![0.0; stat.evaluator().len()];
        let mut scratch = stat.evaluator().scratch();
        let mut alt_row = vec![0.0; support.len()];
        let mut alt_scratch = own_eval.as_ref().map(BasisEvaluator::scratch);
        for t in &points {
            stat.evaluator().eval_into(t, &mut row, &mut scratch);
            let f = match (&shared, &own_eval, alt_scratch.as_mut()) {
                (Some(pos), _, _) => pos.iter().zip(&theta).map(|(&i, c)| row[i] * c).sum(),
                (None, Some(ev), Some(sc)) => {
                    ev.eval_into(t, &mut alt_row, sc);
                    alt_row.iter().zip(&theta).map(|(p, c)| p * c).sum()
                }
                _ => 0.0,
            };
            let xi: f64 = StandardNormal.sample(&mut noise_rng);
            acc.push(f + config.tau * xi, &row);
        }
        let u = acc.finish()?;
        Ok((u, decide(u, spec.threshold)))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(f64, bool)>> =
        pool.install(|| (0..config.replications).into_par_iter().map(run).collect());

    let mut rejections = 0u64;
    let mut s1 = CompensatedSum::new();
    let mut s2 = CompensatedSum::new();
    for (index, r) in results.into_iter().enumerate() {
        let (u, reject) = r.map_err(|e| Error::Replication { index, source: Box::new(e) })?;
        rejections += reject as u64;
        s1.add(u);
        s2.add(u * u);
    }
    let m = config.replications as f64;
    let mean_u = s1.value() / m;
    let sd_u = if config.replications > 1 {
        ((s2.value() - m * mean_u * mean_u) / (m - 1.0)).max(0.0).sqrt()
    } else {
        0.0
    };

    let solution = source.solution();
    let u_n = match source {
        AlternativeSource::Null => None,
        AlternativeSource::Fixed(theta) => Some(h_shift(theta, spec, config.n as u64)),
        _ => solution.map(ExtremalSolution::u),
    };
    let predicted = match source {
        AlternativeSource::Null => Some(1.0 - normal_cdf(spec.threshold)),
        _ => u_n.map(|u| 1.0 - normal_cdf(spec.threshold - u)),
    };

    Ok(MonteCarloReport {
        schema_version: 1,
        family: FamilyColumns::default(),
        mode: source.mode().to_string(),
        variance: match spec.variance_mode {
            VarianceMode::Known(_) => "known".into(),
            VarianceMode::PlugIn => "plugin".into(),
        },
        n: config.n,
        r_n: solution.map(|s| s.r_n),
        index_count: spec.weights.len(),
        cutoff: solution.map(|s| s.cutoff).filter(|c| c.is_finite()),
        u_n,
        threshold: spec.threshold,
        replications: config.replications,
        rejections,
        empirical_rate: rejections as f64 / m,
        wilson_ci: wilson_interval(rejections, config.replications),
        predicted,
        mean_u,
        sd_u,
        seed: config.seed,
        runtime: start.elapsed().as_secs_f64(),
    })
}
