//! The water-filling extremal problem
//!
//! ```text
//! u^2(b,B) = inf 1/2 sum v_l^4
//!   subject to  sum v_l^2 >= n (B r)^2,   sum c_l^2 v_l^2 <= n b^2,
//! ```
//!
//! whose solution has the form `v_l^2 = z0^2 (1 - (c_l/C)^2)_+`, together with
//! the balance equation `C^4 N(C) ~ n^2` that fixes the separation rate, the
//! closed-form sharp asymptotics available for several families, and the
//! normalized kernel weights of the sharp test.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::families::{enumerate_below_with_cap, Family, MultiIndex, DEFAULT_MAX_INDICES};
use crate::numeric::{binomial, gamma, CompensatedSum};

/// Where the coefficients `c_l` come from.
#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientSource {
    Family(Family),
    /// A finite, explicitly listed family (used for synthetic instances).
    Explicit(Vec<(MultiIndex, f64)>),
}

impl From<Family> for CoefficientSource {
    fn from(f: Family) -> Self {
        CoefficientSource::Family(f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalProblem {
    pub source: CoefficientSource,
    pub n: u64,
    pub r_n: f64,
    /// Norm-budget scale `b`.
    pub b: f64,
    /// Radius scale `B`.
    pub big_b: f64,
    pub max_indices: usize,
}

impl ExtremalProblem {
    pub fn new(source: impl Into<CoefficientSource>, n: u64, r_n: f64) -> Self {
        ExtremalProblem {
            source: source.into(),
            n,
            r_n,
            b: 1.0,
            big_b: 1.0,
            max_indices: DEFAULT_MAX_INDICES,
        }
    }

    pub fn with_scales(mut self, b: f64, big_b: f64) -> Self {
        self.b = b;
        self.big_b = big_b;
        self
    }

    pub fn with_max_indices(mut self, cap: usize) -> Self {
        self.max_indices = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return domain(format!("sample size n must be at least 2, got {}", self.n));
        }
        for (name, x) in [("r_n", self.r_n), ("b", self.b), ("B", self.big_b)] {
            if !(x.is_finite() && x > 0.0) {
                return domain(format!("{name} must be positive and finite, got {x}"));
            }
        }
        match &self.source {
            CoefficientSource::Family(f) => f.validate(),
            CoefficientSource::Explicit(m) if m.is_empty() => domain("explicit family is empty"),
            CoefficientSource::Explicit(m) => match m.iter().find(|(_, c)| !(*c >= 0.0 && c.is_finite())) {
                Some((l, c)) => domain(format!("coefficient of {l} must be finite and nonnegative, got {c}")),
                None => Ok(()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalWeight {
    pub index: MultiIndex,
    #[serde(rename = "c")]
    pub coefficient: f64,
    pub v_sq: f64,
}

/// Water-filling solution of the extremal problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalSolution {
    pub n: u64,
    pub r_n: f64,
    pub b: f64,
    pub big_b: f64,
    /// Cutoff `C`; infinite when the smoothness constraint never binds.
    pub cutoff: f64,
    /// `z0^2`.
    pub level: f64,
    /// Members of `N(C)` with their `v_l^2`.
    pub weights: Vec<ExtremalWeight>,
    pub i0: f64,
    pub i1: f64,
    pub i2: f64,
    pub u_squared: f64,
    pub second_constraint_active: bool,
    /// Relative residual of `sum v^2 = n (B r)^2`.
    pub norm_residual: f64,
    /// Relative residual of `sum c^2 v^2 = n b^2`; zero when inactive.
    pub smoothness_residual: f64,
}

impl ExtremalSolution {
    pub fn u(&self) -> f64 {
        self.u_squared.sqrt()
    }

    /// `N(C)`.
    pub fn count(&self) -> usize {
        self.weights.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SolutionJson::from(self)).expect("solution serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let j: SolutionJson =
            serde_json::from_value(value.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(j.into())
    }
}

#[derive(Serialize, Deserialize)]
struct SolutionJson {
    schema_version: u32,
    #[serde(rename = "C")]
    cutoff: Option<f64>,
    z0_sq: f64,
    u_sq: f64,
    #[serde(rename = "I0")]
    i0: f64,
    #[serde(rename = "I1")]
    i1: f64,
    #[serde(rename = "I2")]
    i2: f64,
    weights: Vec<ExtremalWeight>,
    n: u64,
    r_n: f64,
    b: f64,
    #[serde(rename = "B")]
    big_b: f64,
    second_constraint_active: bool,
    norm_residual: f64,
    smoothness_residual: f64,
}

impl From<&ExtremalSolution> for SolutionJson {
    fn from(s: &ExtremalSolution) -> Self {
        SolutionJson {
            schema_version: 1,
            cutoff: s.cutoff.is_finite().then_some(s.cutoff),
            z0_sq: s.level,
            u_sq: s.u_squared,
            i0: s.i0,
            i1: s.i1,
            i2: s.i2,
            weights: s.weights.clone(),
            n: s.n,
            r_n: s.r_n,
            b: s.b,
            big_b: s.big_b,
            second_constraint_active: s.second_constraint_active,
            norm_residual: s.norm_residual,
            smoothness_residual: s.smoothness_residual,
        }
    }
}

impl From<SolutionJson> for ExtremalSolution {
    fn from(j: SolutionJson) -> Self {
        ExtremalSolution {
            n: j.n,
            r_n: j.r_n,
            b: j.b,
            big_b: j.big_b,
            cutoff: j.cutoff.unwrap_or(f64::INFINITY),
            level: j.z0_sq,
            weights: j.weights,
            i0: j.i0,
            i1: j.i1,
            i2: j.i2,
            u_squared: j.u_sq,
            second_constraint_active: j.second_constraint_active,
            norm_residual: j.norm_residual,
            smoothness_residual: j.smoothness_residual,
        }
    }
}

/// `(I0, I1, I2)` over the coefficients below `cutoff`.
fn i_sums(coeffs: &[f64], cutoff: f64) -> (f64, f64, f64) {
    let mut i0 = CompensatedSum::new();
    let mut i1 = CompensatedSum::new();
    let mut i2 = CompensatedSum::new();
    let below = coeffs.partition_point(|&c| c < cutoff);
    for &c in &coeffs[..below] {
        let y = if cutoff.is_finite() { (c / cutoff).powi(2) } else { 0.0 };
        let w = 1.0 - y;
        i0.add(w * w);
        i1.add(w);
        i2.add(y * w);
    }
    (i0.value(), i1.value(), i2.value())
}

/// `C^2 I2 / I1`, the weighted mean of `c_l^2` under weights `(1 - (c_l/C)^2)_+`.
fn ratio(coeffs: &[f64], cutoff: f64) -> f64 {
    let (_, i1, i2) = i_sums(coeffs, cutoff);
    if i1 > 0.0 {
        cutoff * cutoff * i2 / i1
    } else {
        // limit as C decreases to min c_l
        coeffs.first().map_or(0.0, |c| c * c)
    }
}

/// Members sorted by coefficient, plus whether they exhaust the lattice.
struct Spectrum {
    members: Vec<(MultiIndex, f64)>,
    coeffs: Vec<f64>,
    complete: bool,
}

impl Spectrum {
    fn new(mut members: Vec<(MultiIndex, f64)>, complete: bool) -> Self {
        members.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        let coeffs = members.iter().map(|m| m.1).collect();
        Spectrum { members, coeffs, complete }
    }

    fn mean_square(&self) -> f64 {
        let s: CompensatedSum = self.coeffs.iter().map(|c| c * c).collect();
        s.value() / self.coeffs.len() as f64
    }
}

fn finite_spectrum(problem: &ExtremalProblem) -> Result<Option<Spectrum>> {
    match &problem.source {
        CoefficientSource::Explicit(m) => Ok(Some(Spectrum::new(m.clone(), true))),
        CoefficientSource::Family(f) if f.has_finite_lattice() => {
            // m = 0: the lattice is {0} with c_0 = 1
            let set = enumerate_below_with_cap(f, 2.0, problem.max_indices)?;
            Ok(Some(Spectrum::new(set.members().to_vec(), true)))
        }
        CoefficientSource::Family(_) => Ok(None),
    }
}

/// Solve the extremal problem by water-filling.
///
/// The cutoff solves `C^2 I2(C) / I1(C) = b^2 / (B r)^2` (the left side is
/// nondecreasing in `C`) by bracketed bisection; `z0^2` then follows from the
/// norm constraint and `u^2 = z0^4 I0 / 2`.
pub fn solve_extremal(problem: &ExtremalProblem) -> Result<ExtremalSolution> {
    problem.validate()?;
    let n = problem.n as f64;
    let radius_sq = (problem.big_b * problem.r_n).powi(2);
    let norm_budget = n * radius_sq;
    let smooth_budget = n * problem.b * problem.b;
    let target = problem.b * problem.b / radius_sq;

    let (spectrum, mut hi) = match finite_spectrum(problem)? {
        Some(spec) => {
            if target >= spec.mean_square() {
                return Ok(slack_solution(problem, &spec, norm_budget));
            }
            let top = spec.coeffs.last().copied().unwrap_or(1.0).max(target.sqrt());
            let mut hi = 2.0 * top.max(f64::MIN_POSITIVE);
            while ratio(&spec.coeffs, hi) < target {
                hi *= 2.0;
            }
            (spec, hi)
        }
        None => {
            let CoefficientSource::Family(family) = &problem.source else { unreachable!() };
            // the root satisfies C^2 > target
            let mut hi = 2.0 * target.sqrt();
            loop {
                let set = enumerate_below_with_cap(family, hi, problem.max_indices)?;
                if !set.is_empty() {
                    let spec = Spectrum::new(set.members().to_vec(), false);
                    if ratio(&spec.coeffs, hi) >= target {
                        break (spec, hi);
                    }
                }
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::Infeasible("no finite cutoff balances the constraints".into()));
                }
            }
        }
    };

    let c_min = spectrum.coeffs[0];
    if !(c_min * c_min < target) {
        return Err(Error::Infeasible(format!(
            "r_n = {} is too large: the smallest coefficient {c_min} forces sum c^2 v^2 > n b^2 \
             whenever sum v^2 >= n (B r)^2 (needs B r < b / c_min = {})",
            problem.r_n,
            problem.b / c_min / problem.big_b
        )));
    }

    let mut lo = c_min.max(target.sqrt());
    for _ in 0..400 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ratio(&spectrum.coeffs, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let cutoff = 0.5 * (lo + hi);
    let (i0, i1, i2) = i_sums(&spectrum.coeffs, cutoff);
    let level = norm_budget / i1;
    let weights = spectrum
        .members
        .iter()
        .take_while(|(_, c)| *c < cutoff)
        .map(|(l, c)| ExtremalWeight {
            index: l.clone(),
            coefficient: *c,
            v_sq: level * (1.0 - (c / cutoff).powi(2)),
        })
        .collect::<Vec<_>>();
    let norm_sum: CompensatedSum = weights.iter().map(|w| w.v_sq).collect();
    let smooth_sum: CompensatedSum = weights.iter().map(|w| w.coefficient.powi(2) * w.v_sq).collect();
    debug_assert!(spectrum.complete || cutoff < f64::INFINITY);
    Ok(ExtremalSolution {
        n: problem.n,
        r_n: problem.r_n,
        b: problem.b,
        big_b: problem.big_b,
        cutoff,
        level,
        weights,
        i0,
        i1,
        i2,
        u_squared: 0.5 * level * level * i0,
        second_constraint_active: true,
        norm_residual: (norm_sum.value() - norm_budget).abs() / norm_budget,
        smoothness_residual: (smooth_sum.value() - smooth_budget).abs() / smooth_budget,
    })
}

/// Finite family whose smoothness constraint never binds: equal weights.
fn slack_solution(problem: &ExtremalProblem, spec: &Spectrum, norm_budget: f64) -> ExtremalSolution {
    let k = spec.members.len() as f64;
    let level = norm_budget / k;
    ExtremalSolution {
        n: problem.n,
        r_n: problem.r_n,
        b: problem.b,
        big_b: problem.big_b,
        cutoff: f64::INFINITY,
        level,
        weights: spec
            .members
            .iter()
            .map(|(l, c)| ExtremalWeight { index: l.clone(), coefficient: *c, v_sq: level })
            .collect(),
        i0: k,
        i1: k,
        i2: 0.0,
        u_squared: norm_budget * norm_budget / (2.0 * k),
        second_constraint_active: false,
        norm_residual: 0.0,
        smoothness_residual: 0.0,
    }
}

/// Normalized sharp-test weights `w_l = (1 - (c_l/C)^2)_+ / w_n`,
/// `w_n^2 = 1/2 sum (1 - (c_l/C)^2)^2`, so that `1/2 sum w_l^2 = 1`.
pub fn test_weights(solution: &ExtremalSolution) -> Result<Vec<(MultiIndex, f64)>> {
    let raw: Vec<f64> = solution
        .weights
        .iter()
        .map(|w| {
            if solution.cutoff.is_finite() {
                (1.0 - (w.coefficient / solution.cutoff).powi(2)).max(0.0)
            } else {
                1.0
            }
        })
        .collect();
    let half_sq: CompensatedSum = raw.iter().map(|x| 0.5 * x * x).collect();
    let wn = half_sq.value().sqrt();
    if !(wn > 0.0) {
        return domain("degenerate extremal solution: all weights vanish");
    }
    Ok(solution
        .weights
        .iter()
        .zip(raw)
        .map(|(w, x)| (w.index.clone(), x / wn))
        .collect())
}

/// `n^2 r^4 / (2N)`, the detectability of the rate-optimal test.
pub fn u_squared_rate(n: u64, r_n: f64, count: usize) -> f64 {
    let n = n as f64;
    n * n * r_n.powi(4) / (2.0 * count as f64)
}

/// Solution of the balance equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancePoint {
    /// `C_n = inf{C > 0 : C^4 N(C) >= n^2}`.
    pub cutoff: f64,
    /// `N` just above `C_n`, i.e. the count that satisfies the inequality.
    pub count: usize,
}

pub fn balance_constant(family: &Family, n: u64) -> Result<BalancePoint> {
    balance_constant_with_cap(family, n, DEFAULT_MAX_INDICES)
}

pub fn balance_constant_with_cap(family: &Family, n: u64, cap: usize) -> Result<BalancePoint> {
    family.validate()?;
    if n < 2 {
        return domain(format!("sample size n must be at least 2, got {n}"));
    }
    let n_sq = (n as f64).powi(2);
    let mut hi = 1.0;
    let members = loop {
        let set = enumerate_below_with_cap(family, hi, cap)?;
        if hi.powi(4) * set.size() as f64 >= n_sq {
            break set.members().iter().map(|m| m.1).collect::<Vec<_>>();
        }
        hi *= 2.0;
    };
    let mut coeffs = members;
    coeffs.sort_by(f64::total_cmp);
    // walk the constancy intervals (v_j, v_{j+1}] of the left-continuous N(C)
    let mut start = 0;
    while start < coeffs.len() {
        let v = coeffs[start];
        let end = coeffs.partition_point(|&c| c <= v);
        let count = end;
        let next = coeffs.get(end).copied().unwrap_or(hi);
        let smooth = (n_sq / count as f64).powf(0.25);
        let candidate = smooth.max(v);
        if candidate <= next {
            return Ok(BalancePoint { cutoff: candidate, count });
        }
        start = end;
    }
    unreachable!("hi^4 N(hi) >= n^2 guarantees a solution below hi")
}

/// `r_n^* = 1 / C_n`.
pub fn separation_rate(family: &Family, n: u64) -> Result<f64> {
    Ok(1.0 / balance_constant(family, n)?.cutoff)
}

pub fn separation_rate_with_cap(family: &Family, n: u64, cap: usize) -> Result<f64> {
    Ok(1.0 / balance_constant_with_cap(family, n, cap)?.cutoff)
}

/// Sharp constant of the coordinate-sum Sobolev norm.
pub fn sobolev_sum_constant(d: usize, sigma: f64) -> f64 {
    let d = d as f64;
    PI.powf(d) * (1.0 + 2.0 * sigma / d) * gamma(1.0 + d / (2.0 * sigma))
        / ((1.0 + 4.0 * sigma / d).powf(1.0 + d / (2.0 * sigma)) * gamma(1.0 + 0.5 / sigma).powf(d))
}

/// Sharp constant of the Euclidean Sobolev norm.
pub fn sobolev_euclid_constant(d: usize, sigma: f64) -> f64 {
    let d = d as f64;
    PI.powf(d) * (1.0 + 2.0 * sigma / d) * gamma(1.0 + d / 2.0)
        / ((1.0 + 4.0 * sigma / d).powf(1.0 + d / (2.0 * sigma)) * gamma(1.5).powf(d))
}

/// Sharp constant of the tensor-product Sobolev norm.
pub fn tensor_constant(d: usize, sigma: f64) -> f64 {
    let b = (2.0 * sigma + 1.0) / (2.0 * sigma);
    2.0 * b * gamma(d as f64) * (PI * sigma).powf(d as f64) / (1.0 + 4.0 * sigma).powf(b)
}

/// Closed-form leading asymptotics of `u_n^2`, where the constants are known.
pub fn asymptotic_u_squared(family: &Family, n: u64, r_n: f64) -> Option<f64> {
    if family.validate().is_err() || !(r_n > 0.0 && r_n < 1.0) || n < 3 {
        return None;
    }
    let nf = n as f64;
    let base = nf * nf;
    let log_inv_r = (1.0 / r_n).ln();
    match *family {
        Family::SobolevSum { d, sigma } => {
            Some(sobolev_sum_constant(d, sigma) * base * r_n.powf(4.0 + d as f64 / sigma))
        }
        Family::SobolevEuclid { d, sigma } => {
            Some(sobolev_euclid_constant(d, sigma) * base * r_n.powf(4.0 + d as f64 / sigma))
        }
        Family::TensorSobolev { d, sigma } => Some(
            tensor_constant(d, sigma) * base * r_n.powf(4.0 + 1.0 / sigma)
                / log_inv_r.powi(d as i32 - 1),
        ),
        Family::AnovaExact { d, m, sigma } | Family::AnovaAtMost { d, m, sigma } => {
            if m == 0 {
                return None;
            }
            let mult = binomial(d as u32, m as u32);
            Some(
                tensor_constant(m, sigma) * base * r_n.powf(4.0 + 1.0 / sigma)
                    / (mult * log_inv_r.powi(m as i32 - 1)),
            )
        }
        Family::AnalyticStrip { d, kappa } => {
            let d = d as f64;
            Some((PI * kappa).powf(d) * gamma(d + 1.0) * base * r_n.powi(4) / (2.0 * nf.ln().powf(d)))
        }
        Family::SloanWozniakowski { .. } => None,
    }
}

/// Find `r_n` whose extremal value `u_n(b, B)` equals `target_u`.
pub fn radius_for_detectability(
    family: &Family,
    n: u64,
    target_u: f64,
    b: f64,
    big_b: f64,
    cap: usize,
) -> Result<ExtremalSolution> {
    if !(target_u > 0.0 && target_u.is_finite()) {
        return domain(format!("target u must be positive, got {target_u}"));
    }
    let solve = |r: f64| {
        solve_extremal(&ExtremalProblem::new(family.clone(), n, r).with_scales(b, big_b).with_max_indices(cap))
    };
    let c_min = min_coefficient(family)?;
    // u^2 increases with r up to the feasibility edge B r = b / c_min
    let mut hi = b / (big_b * c_min) * (1.0 - 1e-9);
    let top = solve(hi)?;
    if top.u() < target_u {
        return Err(Error::Infeasible(format!(
            "largest feasible radius {hi} only reaches u = {}",
            top.u()
        )));
    }
    let mut lo = hi / 2.0;
    while solve(lo)?.u() > target_u {
        hi = lo;
        lo /= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if solve(mid)?.u() < target_u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    solve(0.5 * (lo + hi))
}

/// Smallest coefficient in the family's lattice.
pub fn min_coefficient(family: &Family) -> Result<f64> {
    let mut c = 2.0;
    loop {
        let set = enumerate_below_with_cap(family, c, DEFAULT_MAX_INDICES)?;
        if let Some(m) = set.members().iter().map(|m| m.1).min_by(f64::total_cmp) {
            return Ok(m);
        }
        c *= 2.0;
    }
}

/// Ratios `u^2(1, B) / u^2(1, 1)` over a grid of `B`, a numerical probe of
/// how sensitive the detectability is to the radius scale.
pub fn radius_scale_probe(problem: &ExtremalProblem, scales: &[f64]) -> Result<Vec<(f64, f64)>> {
    let base = solve_extremal(&problem.clone().with_scales(1.0, 1.0))?.u_squared;
    scales
        .iter()
        .map(|&s| {
            let u2 = solve_extremal(&problem.clone().with_scales(1.0, s))?.u_squared;
            Ok((s, u2 / base))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(coeffs: &[f64]) -> CoefficientSource {
        CoefficientSource::Explicit(
            coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| (MultiIndex::new(vec![i as i64 + 1]), c))
                .collect(),
        )
    }

    #[test]
    fn single_level_synthetic_is_slack() {
        let p = ExtremalProblem::new(synthetic(&[1.0; 4]), 100, 0.5);
        let s = solve_extremal(&p).unwrap();
        assert!(!s.second_constraint_active);
        assert!(s.cutoff.is_infinite());
        for w in &s.weights {
            assert!((w.v_sq - 6.25).abs() < 1e-12);
        }
        assert!((s.u_squared - 78.125).abs() < 1e-10);
    }

    #[test]
    fn infeasible_radius() {
        let f = Family::SobolevSum { d: 1, sigma: 1.0 };
        // c_min = 2 pi, so r >= 1/(2 pi) cannot satisfy both constraints
        let err = solve_extremal(&ExtremalProblem::new(f, 100, 0.2)).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn solution_invariants_for_a_family() {
        let f = Family::SobolevSum { d: 2, sigma: 1.5 };
        let s = solve_extremal(&ExtremalProblem::new(f, 5000, 0.01)).unwrap();
        assert!(s.second_constraint_active);
        assert!(s.norm_residual < 1e-8 && s.smoothness_residual < 1e-8);
        assert!((s.i1 - s.i0 - s.i2).abs() < 1e-9 * s.i1);
        assert!(s.cutoff.powi(2) >= 1.0 / (0.01f64 * 0.01));
        for w in &s.weights {
            let expect = s.level * (1.0 - (w.coefficient / s.cutoff).powi(2));
            assert!((w.v_sq - expect).abs() <= 1e-12 * s.level);
        }
        let half: f64 = s.weights.iter().map(|w| 0.5 * w.v_sq * w.v_sq).sum();
        assert!((half - s.u_squared).abs() < 1e-9 * s.u_squared);
        let w = test_weights(&s).unwrap();
        let norm: f64 = w.iter().map(|(_, x)| 0.5 * x * x).sum();
        assert!((norm - 1.0).abs() < 1e-10);
        // equivalent form v^2 / u
        for ((_, x), ew) in w.iter().zip(&s.weights) {
            assert!((x - ew.v_sq / s.u()).abs() < 1e-9 * x.max(1e-300));
        }
    }

    #[test]
    fn rate_weight_recovery() {
        let p = ExtremalProblem::new(synthetic(&[3.0; 50]), 100, 0.1);
        let s = solve_extremal(&p).unwrap();
        for (_, w) in test_weights(&s).unwrap() {
            assert!((w - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_clamp_at_cutoff() {
        let s = ExtremalSolution {
            n: 10,
            r_n: 0.1,
            b: 1.0,
            big_b: 1.0,
            cutoff: 2.0,
            level: 1.0,
            weights: vec![
                ExtremalWeight { index: MultiIndex::new(vec![1]), coefficient: 1.0, v_sq: 0.75 },
                ExtremalWeight { index: MultiIndex::new(vec![2]), coefficient: 2.0, v_sq: 0.0 },
            ],
            i0: 0.5625,
            i1: 0.75,
            i2: 0.1875,
            u_squared: 0.28,
            second_constraint_active: true,
            norm_residual: 0.0,
            smoothness_residual: 0.0,
        };
        let w = test_weights(&s).unwrap();
        assert_eq!(w[1].1, 0.0);
        assert!((w[0].1 - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn balance_examples() {
        let f = Family::SobolevSum { d: 1, sigma: 1.0 };
        let p = balance_constant(&f, 1000).unwrap();
        assert_eq!(p.count, 6);
        assert!((p.cutoff.powi(4) * 6.0 - 1e6).abs() < 1e-6);
        assert!((p.cutoff - 20.205).abs() < 1e-3);
        assert!((1.0 / p.cutoff - (1e6f64 / 6.0).powf(-0.25)).abs() < 1e-15);
        assert!((1.0 / p.cutoff - 0.04948).abs() < 2e-5);

        let p = balance_constant(&f, 3).unwrap();
        assert_eq!(p.cutoff, f.coefficient(&MultiIndex::new(vec![1])).unwrap());
        assert_eq!(p.count, 2);
        assert!((p.cutoff - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn rate_formula_examples() {
        assert!((u_squared_rate(1000, 0.05, 6) - 0.520833333333).abs() < 1e-10);
        assert_eq!(u_squared_rate(77, 0.0, 3), 0.0);
        assert!((u_squared_rate(100, 0.1, 50) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_u_squared_examples() {
        let f = Family::SobolevSum { d: 1, sigma: 2.0 };
        let c1 = 5.0 * PI / 9f64.powf(1.25);
        assert!((sobolev_sum_constant(1, 2.0) - c1).abs() < 1e-12);
        let v = asymptotic_u_squared(&f, 10_000, 0.01).unwrap();
        assert!((v / (c1 * 1e8 * 0.01f64.powf(4.5)) - 1.0).abs() < 1e-12);
        let t = asymptotic_u_squared(&Family::TensorSobolev { d: 1, sigma: 2.0 }, 10_000, 0.01).unwrap();
        assert!((t / v - 1.0).abs() < 1e-12);
        let e = asymptotic_u_squared(&Family::SobolevEuclid { d: 1, sigma: 2.0 }, 10_000, 0.01).unwrap();
        assert!((e / v - 1.0).abs() < 1e-12);
        assert!(asymptotic_u_squared(&Family::SloanWozniakowski { sigma: 1.0, s: 2.0 }, 100, 0.1).is_none());
    }

    #[test]
    fn detectability_tuning_hits_target() {
        let f = Family::SobolevSum { d: 1, sigma: 1.0 };
        let s = radius_for_detectability(&f, 2000, 2.0, 1.0, 1.0, DEFAULT_MAX_INDICES).unwrap();
        assert!((s.u() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn solution_json_round_trip() {
        let f = Family::SobolevSum { d: 1, sigma: 2.0 };
        let s = solve_extremal(&ExtremalProblem::new(f, 2000, 0.01)).unwrap();
        let json = s.to_json();
        for key in ["C", "z0_sq", "u_sq", "I0", "I1", "I2", "weights"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(json["weights"][0].get("index").is_some() && json["weights"][0].get("v_sq").is_some());
        assert_eq!(ExtremalSolution::from_json(&json).unwrap(), s);
    }
}
