//! U-statistic tests for the regression model `x_i = f(t_i) + xi_i`.
//!
//! The statistic is
//!
//! ```text
//! U_n = 1/(n tau^2) sum_{i<k} x_i x_k G_n(t_i, t_k),
//! G_n(t', t'') = sum_l w_l phi_l(t') phi_l(t''),
//! ```
//!
//! with weights normalized so that `1/2 sum w_l^2 = 1`. Under the null it is
//! centered with variance `(n-1)/n`; the test rejects when `U_n > H`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisEvaluator, DesignPoint};
use crate::error::{domain, Error, Result};
use crate::families::{IndexSet, MultiIndex};
use crate::numeric::{normal_quantile, sum, CompensatedSum};

/// Tolerance on the kernel normalization `1/2 sum w^2 = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Observations `(t_i, x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    points: Vec<DesignPoint>,
    responses: Vec<f64>,
}

impl Sample {
    pub fn new(points: Vec<DesignPoint>, responses: Vec<f64>) -> Result<Self> {
        if points.len() != responses.len() {
            return domain(format!(
                "{} design points but {} responses",
                points.len(),
                responses.len()
            ));
        }
        if points.is_empty() {
            return domain("sample is empty");
        }
        let d = points[0].dim();
        if let Some(p) = points.iter().find(|p| p.dim() != d) {
            return domain(format!("mixed design dimensions {d} and {}", p.dim()));
        }
        if let Some(x) = responses.iter().find(|x| !x.is_finite()) {
            return domain(format!("response {x} is not finite"));
        }
        Ok(Sample { points, responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn points(&self) -> &[DesignPoint] {
        &self.points
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// CSV with header `t_1,...,t_d,x`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        let header: Vec<String> = (1..=d).map(|k| format!("t_{k}")).collect();
        let _ = writeln!(out, "{},x", header.join(","));
        for (p, x) in self.points.iter().zip(&self.responses) {
            for u in p.iter() {
                let _ = write!(out, "{u},");
            }
            let _ = writeln!(out, "{x}");
        }
        out
    }

    /// Parse the CSV written by [`Sample::to_csv`]. When `dimension` is
    /// given the header must declare exactly that many design columns.
    pub fn from_csv(text: &str, dimension: Option<usize>) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty data file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let d = cols.len().saturating_sub(1);
        let expected: Vec<String> = (1..=d).map(|k| format!("t_{k}")).chain(["x".into()]).collect();
        if d == 0 || cols != expected {
            return Err(Error::Parse(format!(
                "header must be t_1,...,t_d,x; got {header:?}"
            )));
        }
        if let Some(want) = dimension.filter(|&w| w != d) {
            return Err(Error::Parse(format!("data has d={d}, expected d={want}")));
        }
        let mut points = Vec::new();
        let mut responses = Vec::new();
        for (row, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            if vals.len() != d + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    vals.len(),
                    d + 1
                )));
            }
            responses.push(vals[d]);
            points.push(
                DesignPoint::new(vals[..d].to_vec())
                    .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?,
            );
        }
        if points.is_empty() {
            return Err(Error::Parse("data file has no rows".into()));
        }
        Sample::new(points, responses).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// How the noise level `tau^2` in the kernel factor is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Known(f64),
    /// Mean of squared responses.
    PlugIn,
}

/// A fully specified test `1{U_n > H}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSpec {
    pub basis: Basis,
    pub weights: Vec<(MultiIndex, f64)>,
    pub threshold: f64,
    pub variance_mode: VarianceMode,
    pub alpha: Option<f64>,
}

impl TestSpec {
    pub fn new(
        basis: Basis,
        weights: Vec<(MultiIndex, f64)>,
        threshold: f64,
        variance_mode: VarianceMode,
    ) -> Result<Self> {
        let spec = TestSpec { basis, weights, threshold, variance_mode, alpha: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Neyman-Pearson spec at level `alpha`.
    pub fn at_level(
        basis: Basis,
        weights: Vec<(MultiIndex, f64)>,
        alpha: f64,
        variance_mode: VarianceMode,
    ) -> Result<Self> {
        let mut spec = TestSpec::new(basis, weights, threshold_np(alpha)?, variance_mode)?;
        spec.alpha = Some(alpha);
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return domain("test has no kernel weights");
        }
        if let Some((l, w)) = self.weights.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return domain(format!("weight of {l} must be finite and nonnegative, got {w}"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some((l, _)) = self.weights.iter().find(|(l, _)| !seen.insert(l)) {
            return domain(format!("index {l} listed twice"));
        }
        let half = 0.5 * sum(self.weights.iter().map(|(_, w)| w * w));
        if (half - 1.0).abs() > NORMALIZATION_TOL {
            return domain(format!("kernel weights must satisfy 1/2 sum w^2 = 1, got {half}"));
        }
        if !self.threshold.is_finite() {
            return domain("threshold must be finite");
        }
        if let VarianceMode::Known(t) = self.variance_mode {
            if !(t.is_finite() && t > 0.0) {
                return domain(format!("known variance must be positive, got {t}"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return domain(format!("alpha must lie in (0,1), got {a}"));
            }
        }
        Ok(())
    }

    pub fn required_dimension(&self) -> usize {
        self.weights.iter().map(|(l, _)| l.len()).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SpecJson {
            schema_version: 1,
            basis: self.basis,
            weights: self
                .weights
                .iter()
                .map(|(index, weight)| WeightJson { index: index.clone(), weight: *weight })
                .collect(),
            threshold: self.threshold,
            variance_mode: self.variance_mode,
            alpha: self.alpha,
        })
        .expect("spec serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let j: SpecJson =
            serde_json::from_value(value.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        let spec = TestSpec {
            basis: j.basis,
            weights: j.weights.into_iter().map(|w| (w.index, w.weight)).collect(),
            threshold: j.threshold,
            variance_mode: j.variance_mode,
            alpha: j.alpha,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightJson {
    index: MultiIndex,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct SpecJson {
    schema_version: u32,
    basis: Basis,
    weights: Vec<WeightJson>,
    threshold: f64,
    variance_mode: VarianceMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

/// Kernel weights as `index,weight` CSV.
pub fn weights_to_csv(weights: &[(MultiIndex, f64)]) -> String {
    let mut out = String::from("# schema_version: 1\nindex,weight\n");
    for (l, w) in weights {
        let _ = writeln!(out, "{l},{w}");
    }
    out
}

pub fn weights_from_csv(text: &str) -> Result<Vec<(MultiIndex, f64)>> {
    crate::families::parse_index_csv(text, "weight")
}

/// Rate-optimal kernel: `w_l = sqrt(2/N)` on every member.
pub fn rate_weights(members: &IndexSet) -> Result<Vec<(MultiIndex, f64)>> {
    if members.is_empty() {
        return domain("rate weights need a nonempty index set");
    }
    let w = (2.0 / members.size() as f64).sqrt();
    Ok(members.indices().map(|l| (l.clone(), w)).collect())
}

/// `H^(alpha)`, the upper `alpha` quantile of the standard normal.
pub fn threshold_np(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0,1), got {alpha}"));
    }
    Ok(-normal_quantile(alpha))
}

/// Threshold `u_n / 2` minimizing the total error `alpha + beta`.
pub fn threshold_total(u_n: f64) -> f64 {
    u_n / 2.0
}

pub fn decide(u: f64, threshold: f64) -> bool {
    u > threshold
}

/// Plug-in noise level `(1/n) sum x_i^2`.
pub fn estimate_variance(sample: &Sample) -> f64 {
    sum(sample.responses.iter().map(|x| x * x)) / sample.len() as f64
}

fn resolve_variance(mode: VarianceMode, sum_sq: f64, n: usize) -> Result<f64> {
    match mode {
        VarianceMode::Known(t) => Ok(t),
        VarianceMode::PlugIn if n < 2 => domain("plug-in variance needs n >= 2"),
        VarianceMode::PlugIn => {
            let t = sum_sq / n as f64;
            if t > 0.0 {
                Ok(t)
            } else {
                Err(Error::DegenerateSample("all responses are zero".into()))
            }
        }
    }
}

/// `h_n(theta) = 1/2 sum_l w_l n theta_l^2`; indices outside the kernel
/// support contribute nothing.
pub fn h_shift(theta: &[(MultiIndex, f64)], spec: &TestSpec, n: u64) -> f64 {
    let w: HashMap<&MultiIndex, f64> = spec.weights.iter().map(|(l, w)| (l, *w)).collect();
    let n = n as f64;
    0.5 * sum(theta
        .iter()
        .filter_map(|(l, t)| w.get(l).map(|w| w * n * t * t)))
}

/// `(n r^2 / sqrt(2N)) (1 - (r C)^-2)`, floored at zero.
pub fn h_lower_bound(n: u64, r_n: f64, count: usize, cutoff: f64) -> f64 {
    let corr = if cutoff.is_finite() { (r_n * cutoff).powi(-2) } else { 0.0 };
    (n as f64 * r_n * r_n / (2.0 * count as f64).sqrt()) * (1.0 - corr).max(0.0)
}

/// Reusable spectral evaluator for one [`TestSpec`].
#[derive(Clone, Debug)]
pub struct UStatistic {
    evaluator: BasisEvaluator,
    weights: Vec<f64>,
    variance_mode: VarianceMode,
}

impl UStatistic {
    pub fn new(spec: &TestSpec) -> Self {
        let (indices, weights) = spec.weights.iter().cloned().unzip();
        UStatistic {
            evaluator: BasisEvaluator::new(spec.basis, indices),
            weights,
            variance_mode: spec.variance_mode,
        }
    }

    pub fn evaluator(&self) -> &BasisEvaluator {
        &self.evaluator
    }

    pub fn evaluate(&self, sample: &Sample) -> Result<f64> {
        check_dimension(sample, self.evaluator.required_dimension())?;
        let mut acc = self.accumulator();
        let mut row = vec![0.0; self.evaluator.len()];
        let mut scratch = self.evaluator.scratch();
        for (t, &x) in sample.points.iter().zip(&sample.responses) {
            self.evaluator.eval_into(t, &mut row, &mut scratch);
            acc.push(x, &row);
        }
        acc.finish()
    }

    pub(crate) fn accumulator(&self) -> PairAccumulator<'_> {
        PairAccumulator {
            stat: self,
            p: vec![CompensatedSum::new(); self.weights.len()],
            q: vec![CompensatedSum::new(); self.weights.len()],
            sum_sq: CompensatedSum::new(),
            n: 0,
        }
    }
}

/// Streaming projections `p_l = sum x_i phi_l(t_i)`, `q_l = sum x_i^2 phi_l(t_i)^2`.
pub(crate) struct PairAccumulator<'a> {
    stat: &'a UStatistic,
    p: Vec<CompensatedSum>,
    q: Vec<CompensatedSum>,
    sum_sq: CompensatedSum,
    n: usize,
}

impl PairAccumulator<'_> {
    pub(crate) fn push(&mut self, x: f64, row: &[f64]) {
        for ((p, q), &phi) in self.p.iter_mut().zip(&mut self.q).zip(row) {
            let y = x * phi;
            p.add(y);
            q.add(y * y);
        }
        self.sum_sq.add(x * x);
        self.n += 1;
    }

    pub(crate) fn finish(&self) -> Result<f64> {
        if self.n == 0 {
            return domain("U-statistic of an empty sample");
        }
        let tau_sq = resolve_variance(self.stat.variance_mode, self.sum_sq.value(), self.n)?;
        let pairs: CompensatedSum = self
            .stat
            .weights
            .iter()
            .zip(self.p.iter().zip(&self.q))
            .map(|(w, (p, q))| {
                let p = p.value();
                0.5 * w * (p * p - q.value())
            })
            .collect();
        Ok(pairs.value() / (self.n as f64 * tau_sq))
    }
}

fn check_dimension(sample: &Sample, required: usize) -> Result<()> {
    if sample.dim() < required {
        return domain(format!(
            "kernel needs d >= {required} but the sample has d = {}",
            sample.dim()
        ));
    }
    Ok(())
}

/// `U_n` in `O(nN)` through per-index projections.
pub fn u_statistic(sample: &Sample, spec: &TestSpec) -> Result<f64> {
    UStatistic::new(spec).evaluate(sample)
}

/// `U_n` by the direct pair sum; `O(n^2 N)`.
pub fn u_statistic_naive(sample: &Sample, spec: &TestSpec) -> Result<f64> {
    check_dimension(sample, spec.required_dimension())?;
    let n = sample.len();
    let phi: Vec<Vec<f64>> = sample
        .points
        .iter()
        .map(|t| spec.weights.iter().map(|(l, _)| spec.basis.eval(l, t)).collect())
        .collect();
    let x = &sample.responses;
    let mut pairs = CompensatedSum::new();
    for i in 0..n {
        for k in i + 1..n {
            let g = sum(spec.weights.iter().enumerate().map(|(j, (_, w))| w * phi[i][j] * phi[k][j]));
            pairs.add(x[i] * x[k] * g);
        }
    }
    let tau_sq = resolve_variance(spec.variance_mode, sum(x.iter().map(|v| v * v)), n)?;
    Ok(pairs.value() / (n as f64 * tau_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn pt(v: &[f64]) -> DesignPoint {
        DesignPoint::new(v.to_vec()).unwrap()
    }

    fn constant_spec() -> TestSpec {
        TestSpec::new(Basis::Fourier, vec![(MultiIndex::zero(), SQRT_2)], 1.64485, VarianceMode::Known(1.0))
            .unwrap()
    }

    #[test]
    fn two_point_example() {
        let s = Sample::new(vec![pt(&[0.1]), pt(&[0.9])], vec![1.0, 1.0]).unwrap();
        let spec = constant_spec();
        let u = u_statistic(&s, &spec).unwrap();
        assert!((u - 0.5 * SQRT_2).abs() < 1e-15);
        assert!((u_statistic_naive(&s, &spec).unwrap() - u).abs() < 1e-15);
        assert!(!decide(u, spec.threshold));
    }

    #[test]
    fn single_observation_is_zero() {
        let s = Sample::new(vec![pt(&[0.3])], vec![2.0]).unwrap();
        assert_eq!(u_statistic(&s, &constant_spec()).unwrap(), 0.0);
        assert_eq!(u_statistic_naive(&s, &constant_spec()).unwrap(), 0.0);
    }

    #[test]
    fn zeroed_response_drops_its_pairs() {
        let s = Sample::new(vec![pt(&[0.1]), pt(&[0.9]), pt(&[0.5])], vec![1.0, 1.0, 0.0]).unwrap();
        // K(z1,z2) = 1 * 1 * sqrt2 * 1 * 1
        let u = u_statistic_naive(&s, &constant_spec()).unwrap();
        assert!((u - SQRT_2 / 3.0).abs() < 1e-15);
        let zero = Sample::new(s.points().to_vec(), vec![0.0; 3]).unwrap();
        assert_eq!(u_statistic_naive(&zero, &constant_spec()).unwrap(), 0.0);
    }

    #[test]
    fn rate_weight_values() {
        let members: Vec<_> = (1..=50).map(|j| (MultiIndex::new(vec![j]), j as f64)).collect();
        let set = IndexSet::from_members(100.0, Some(1), members).unwrap();
        let w = rate_weights(&set).unwrap();
        assert!(w.iter().all(|(_, w)| (w - 0.2).abs() < 1e-15));
        assert!((0.5 * w.iter().map(|(_, w)| w * w).sum::<f64>() - 1.0).abs() < 1e-12);
        let two = IndexSet::from_members(5.0, Some(1), vec![(MultiIndex::new(vec![1]), 1.0), (MultiIndex::new(vec![-1]), 1.0)]).unwrap();
        assert!(rate_weights(&two).unwrap().iter().all(|(_, w)| (w - 1.0).abs() < 1e-15));
        let empty = IndexSet::from_members(1.0, Some(1), vec![]).unwrap();
        assert!(rate_weights(&empty).is_err());
    }

    #[test]
    fn thresholds() {
        assert!(threshold_np(0.5).unwrap().abs() < 1e-15);
        let h = threshold_np(0.05).unwrap();
        assert!((h - 1.6448536269514729).abs() < 1e-12, "{h}");
        assert!(threshold_np(1.0).is_err());
        assert_eq!(threshold_total(2.0), 1.0);
        assert!(decide(1.7, 1.64485));
        assert!(!decide(1.64485, 1.64485));
        assert!(!decide(-3.0, 0.0));
    }

    #[test]
    fn shift_examples() {
        let l = MultiIndex::new(vec![1]);
        let mut weights = vec![(l.clone(), 0.2)];
        weights.extend((2..=50).map(|j| (MultiIndex::new(vec![j]), 0.2)));
        let spec = TestSpec::new(Basis::Fourier, weights, 1.0, VarianceMode::Known(1.0)).unwrap();
        assert!((h_shift(&[(l.clone(), 0.1)], &spec, 100) - 0.1).abs() < 1e-15);
        assert_eq!(h_shift(&[], &spec, 100), 0.0);
        // rate form n/sqrt(2N) sum theta^2
        let theta: Vec<_> = (1..=4).map(|j| (MultiIndex::new(vec![j]), 0.05)).collect();
        assert!((h_shift(&theta, &spec, 100) - 0.1).abs() < 1e-14);
        assert!((h_shift(&[(MultiIndex::new(vec![99]), 1.0)], &spec, 100)).abs() < 1e-15);
    }

    #[test]
    fn lower_bound_examples() {
        assert!((h_lower_bound(100, 0.1, 50, 20.0) - 0.075).abs() < 1e-15);
        assert_eq!(h_lower_bound(100, 0.1, 50, 10.0), 0.0);
        assert!((h_lower_bound(100, 0.1, 50, f64::INFINITY) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn variance_estimates() {
        let s = Sample::new(vec![pt(&[0.1]), pt(&[0.2])], vec![1.0, -1.0]).unwrap();
        assert_eq!(estimate_variance(&s), 1.0);
        let c = Sample::new(vec![pt(&[0.1]); 3], vec![1.5; 3]).unwrap();
        assert!((estimate_variance(&c) - 2.25).abs() < 1e-15);
        let z = Sample::new(vec![pt(&[0.1]); 3], vec![0.0; 3]).unwrap();
        let mut spec = constant_spec();
        spec.variance_mode = VarianceMode::PlugIn;
        assert!(matches!(u_statistic(&z, &spec), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(TestSpec::new(Basis::Fourier, vec![(MultiIndex::zero(), 1.0)], 1.0, VarianceMode::Known(1.0)).is_err());
        assert!(TestSpec::new(Basis::Fourier, vec![(MultiIndex::zero(), SQRT_2)], 1.0, VarianceMode::Known(0.0)).is_err());
        let w = vec![(MultiIndex::zero(), 1.0), (MultiIndex::zero(), 1.0)];
        assert!(TestSpec::new(Basis::Fourier, w, 1.0, VarianceMode::PlugIn).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let w = vec![(MultiIndex::new(vec![1, -2]), 1.0), (MultiIndex::new(vec![0, 3]), 1.0)];
        let spec = TestSpec::at_level(Basis::Walsh, w, 0.05, VarianceMode::PlugIn).unwrap();
        let back = TestSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        let known = TestSpec { variance_mode: VarianceMode::Known(2.5), ..spec };
        assert_eq!(TestSpec::from_json(&known.to_json()).unwrap(), known);
    }

    #[test]
    fn weights_csv_round_trip() {
        let w = vec![(MultiIndex::new(vec![1, -2]), 0.3), (MultiIndex::zero(), 1.0 / 3.0)];
        assert_eq!(weights_from_csv(&weights_to_csv(&w)).unwrap(), w);
        assert!(weights_from_csv("index,coefficient\n1,2\n").is_err());
    }

    #[test]
    fn sample_csv_round_trip() {
        let s = Sample::new(vec![pt(&[0.1, 0.25]), pt(&[1.0, 0.0])], vec![1.5, -0.125]).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("t_1,t_2,x\n"));
        assert_eq!(Sample::from_csv(&text, Some(2)).unwrap(), s);
        assert!(Sample::from_csv(&text, Some(1)).is_err());
        assert!(Sample::from_csv("", None).is_err());
        assert!(Sample::from_csv("t_1,x\n", None).is_err());
        assert!(Sample::from_csv("t_1,x\n1.5,2\n", None).is_err());
    }
}
