//! Ellipsoid coefficient families and exact enumeration of the index sets
//! `N(C) = {l : c_l < C}`.
//!
//! Every family supported here has a coefficient that is nondecreasing in
//! each `|l_k|` and that factors (as a sum or a product) over the nonzero
//! coordinates of `l`. Enumeration walks the nonzero coordinates in
//! increasing order and prunes as soon as a partial index reaches the cutoff,
//! so the same depth-first search serves all seven variants, including the
//! infinite-dimensional weighted family.
//!
//! Sufficient conditions for uniformly bounded ellipsoids (documented only,
//! not checked):
//!
//! | family               | condition      |
//! |----------------------|----------------|
//! | Sobolev (both norms) | `sigma > d/4`  |
//! | tensor / ANOVA       | `sigma > 1/4`  |
//! | analytic strip       | any `kappa`    |
//! | Sloan-Wozniakowski   | `min(sigma, s) > 1/2` |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::{binomial, gamma};

/// Default member cap for enumeration.
pub const DEFAULT_MAX_INDICES: usize = 10_000_000;

/// A multi-index in `Z^infinity_*`, stored without trailing zeros.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<i64>", into = "Vec<i64>")]
pub struct MultiIndex(Vec<i64>);

impl MultiIndex {
    pub fn new(mut entries: Vec<i64>) -> Self {
        while entries.last() == Some(&0) {
            entries.pop();
        }
        MultiIndex(entries)
    }

    pub fn zero() -> Self {
        MultiIndex(Vec::new())
    }

    /// Stored entries (canonical form, no trailing zeros).
    pub fn entries(&self) -> &[i64] {
        &self.0
    }

    /// Entry `k` (0-based); zero past the stored length.
    pub fn get(&self, k: usize) -> i64 {
        self.0.get(k).copied().unwrap_or(0)
    }

    /// Number of stored coordinates, i.e. the highest nonzero coordinate.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Count of nonzero entries.
    pub fn support(&self) -> usize {
        self.0.iter().filter(|&&x| x != 0).count()
    }

    /// Nonzero coordinates as `(0-based coordinate, entry)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        self.0.iter().enumerate().filter(|(_, &x)| x != 0).map(|(k, &x)| (k, x))
    }

    /// Entries padded with zeros to length `d` (never truncated).
    pub fn padded(&self, d: usize) -> Vec<i64> {
        let mut v = self.0.clone();
        if v.len() < d {
            v.resize(d, 0);
        }
        v
    }

    /// Apply sign flips; bit `k` of `mask` negates coordinate `k`.
    pub fn flip(&self, mask: u64) -> Self {
        MultiIndex(
            self.0
                .iter()
                .enumerate()
                .map(|(k, &x)| if k < 64 && mask >> k & 1 == 1 { -x } else { x })
                .collect(),
        )
    }
}

impl From<Vec<i64>> for MultiIndex {
    fn from(v: Vec<i64>) -> Self {
        MultiIndex::new(v)
    }
}

impl From<MultiIndex> for Vec<i64> {
    fn from(l: MultiIndex) -> Self {
        l.0
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split_whitespace()
            .map(|tok| {
                tok.parse::<i64>()
                    .map_err(|e| Error::Parse(format!("bad index entry {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiIndex::new(entries))
    }
}

/// How per-coordinate terms combine into a coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Combine {
    Sum,
    Product,
}

/// Parametric description of the ellipsoid coefficients `c_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRecord", into = "FamilyRecord")]
pub enum Family {
    /// `c_l^2 = sum_k |2 pi l_k|^(2 sigma)` on `Z^d \ {0}`.
    SobolevSum { d: usize, sigma: f64 },
    /// `c_l^2 = (sum_k (2 pi l_k)^2)^sigma` on `Z^d \ {0}`.
    SobolevEuclid { d: usize, sigma: f64 },
    /// `c_l = prod_{l_k != 0} |2 pi l_k|^sigma` on `Z^d`, `c_0 = 1`.
    TensorSobolev { d: usize, sigma: f64 },
    /// Tensor coefficients restricted to indices with exactly `m` nonzero entries.
    AnovaExact { d: usize, m: usize, sigma: f64 },
    /// Tensor coefficients restricted to indices with at most `m` nonzero entries.
    AnovaAtMost { d: usize, m: usize, sigma: f64 },
    /// `c_l^2 = prod_k cosh(2 pi kappa l_k)` on `Z^d`.
    AnalyticStrip { d: usize, kappa: f64 },
    /// `c_l = prod_{j : l_j != 0} j^s |2 pi l_j|^sigma` on `Z^infinity_*`.
    SloanWozniakowski { sigma: f64, s: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, x: f64) -> Result<()> {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                domain(format!("{name} must be a positive finite number, got {x}"))
            }
        }
        if let Some(d) = self.dimension() {
            if d == 0 {
                return domain("dimension d must be at least 1");
            }
        }
        match *self {
            Family::SobolevSum { sigma, .. }
            | Family::SobolevEuclid { sigma, .. }
            | Family::TensorSobolev { sigma, .. } => positive("sigma", sigma),
            Family::AnovaExact { d, m, sigma } | Family::AnovaAtMost { d, m, sigma } => {
                if m > d {
                    return domain(format!("interaction order m={m} exceeds d={d}"));
                }
                positive("sigma", sigma)
            }
            Family::AnalyticStrip { kappa, .. } => positive("kappa", kappa),
            Family::SloanWozniakowski { sigma, s } => {
                positive("sigma", sigma)?;
                positive("s", s)
            }
        }
    }

    /// Ambient dimension; `None` for the infinite-dimensional family.
    pub fn dimension(&self) -> Option<usize> {
        match *self {
            Family::SobolevSum { d, .. }
            | Family::SobolevEuclid { d, .. }
            | Family::TensorSobolev { d, .. }
            | Family::AnovaExact { d, .. }
            | Family::AnovaAtMost { d, .. }
            | Family::AnalyticStrip { d, .. } => Some(d),
            Family::SloanWozniakowski { .. } => None,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Family::SobolevSum { .. } => "SobolevSum",
            Family::SobolevEuclid { .. } => "SobolevEuclid",
            Family::TensorSobolev { .. } => "TensorSobolev",
            Family::AnovaExact { .. } => "AnovaExact",
            Family::AnovaAtMost { .. } => "AnovaAtMost",
            Family::AnalyticStrip { .. } => "AnalyticStrip",
            Family::SloanWozniakowski { .. } => "SloanWozniakowski",
        }
    }

    /// True when the lattice itself is finite (only the `m = 0` ANOVA sets).
    pub fn has_finite_lattice(&self) -> bool {
        matches!(
            self,
            Family::AnovaExact { m: 0, .. } | Family::AnovaAtMost { m: 0, .. }
        )
    }

    fn combine(&self) -> Combine {
        match self {
            Family::SobolevSum { .. } | Family::SobolevEuclid { .. } => Combine::Sum,
            _ => Combine::Product,
        }
    }

    fn identity(&self) -> f64 {
        match self.combine() {
            Combine::Sum => 0.0,
            Combine::Product => 1.0,
        }
    }

    /// Contribution of entry magnitude `a > 0` at 1-based coordinate `j`.
    fn term(&self, j: usize, a: u64) -> f64 {
        let x = 2.0 * PI * a as f64;
        match *self {
            Family::SobolevSum { sigma, .. } => x.powf(2.0 * sigma),
            Family::SobolevEuclid { .. } => x * x,
            Family::TensorSobolev { sigma, .. }
            | Family::AnovaExact { sigma, .. }
            | Family::AnovaAtMost { sigma, .. } => x.powf(sigma),
            Family::AnalyticStrip { kappa, .. } => (kappa * x).cosh(),
            Family::SloanWozniakowski { sigma, s } => (j as f64).powf(s) * x.powf(sigma),
        }
    }

    #[inline]
    fn fold(&self, acc: f64, term: f64) -> f64 {
        match self.combine() {
            Combine::Sum => acc + term,
            Combine::Product => acc * term,
        }
    }

    #[inline]
    fn finish(&self, acc: f64) -> f64 {
        match *self {
            Family::SobolevSum { .. } | Family::AnalyticStrip { .. } => acc.sqrt(),
            Family::SobolevEuclid { sigma, .. } => acc.powf(0.5 * sigma),
            _ => acc,
        }
    }

    fn admits_support(&self, support: usize) -> bool {
        match *self {
            Family::SobolevSum { .. } | Family::SobolevEuclid { .. } => support > 0,
            Family::AnovaExact { m, .. } => support == m,
            Family::AnovaAtMost { m, .. } => support <= m,
            _ => true,
        }
    }

    fn max_support(&self) -> usize {
        match *self {
            Family::AnovaExact { m, .. } | Family::AnovaAtMost { m, .. } => m,
            _ => usize::MAX,
        }
    }

    /// The coefficient `c_l`.
    pub fn coefficient(&self, l: &MultiIndex) -> Result<f64> {
        self.validate()?;
        if let Some(d) = self.dimension() {
            if l.len() > d {
                return domain(format!(
                    "index {l} has nonzero coordinate {} beyond dimension d={d}",
                    l.len()
                ));
            }
        }
        let support = l.support();
        if !self.admits_support(support) {
            let constraint = match *self {
                Family::AnovaExact { m, .. } => format!("exactly {m} nonzero entries"),
                Family::AnovaAtMost { m, .. } => format!("at most {m} nonzero entries"),
                _ => "a nonzero index".to_string(),
            };
            return domain(format!(
                "index {l} is outside the {} lattice: requires {constraint}",
                self.variant_name()
            ));
        }
        let acc = l.nonzero().fold(self.identity(), |acc, (k, x)| {
            self.fold(acc, self.term(k + 1, x.unsigned_abs()))
        });
        Ok(self.finish(acc))
    }

    /// Leading-order approximation of `N(C)` where a closed form with explicit
    /// constants exists.
    pub fn asymptotic_count(&self, cutoff: f64) -> Option<f64> {
        if self.validate().is_err() || !(cutoff > 0.0) {
            return None;
        }
        let log_c = cutoff.ln();
        match *self {
            Family::SobolevSum { d, sigma } => {
                let d = d as f64;
                let j1 = gamma(1.0 + 0.5 / sigma).powf(d) / (PI.powf(d) * gamma(1.0 + 0.5 * d / sigma));
                Some(cutoff.powf(d / sigma) * j1)
            }
            Family::SobolevEuclid { d, sigma } => {
                let d = d as f64;
                let j2 = 1.0 / (2f64.powf(d) * PI.powf(0.5 * d) * gamma(1.0 + 0.5 * d));
                Some(cutoff.powf(d / sigma) * j2)
            }
            Family::TensorSobolev { d, sigma } => tensor_count(d, sigma, cutoff, 1.0),
            Family::AnovaExact { d, m, sigma } | Family::AnovaAtMost { d, m, sigma } => {
                if m == 0 {
                    return None;
                }
                tensor_count(m, sigma, cutoff, binomial(d as u32, m as u32))
            }
            Family::AnalyticStrip { d, kappa } => {
                if cutoff <= 1.0 {
                    return None;
                }
                let d = d as f64;
                Some(2f64.powf(d) * log_c.powf(d) / ((PI * kappa).powf(d) * gamma(d + 1.0)))
            }
            Family::SloanWozniakowski { .. } => None,
        }
    }
}

/// `M C^{1/sigma} log^{d-1}(C) / (pi^d sigma^{d-1} Gamma(d))`.
fn tensor_count(d: usize, sigma: f64, cutoff: f64, multiplicity: f64) -> Option<f64> {
    if d > 1 && cutoff <= 1.0 {
        return None;
    }
    let dm1 = d as f64 - 1.0;
    let log_factor = if d > 1 { cutoff.ln().powf(dm1) } else { 1.0 };
    Some(
        multiplicity * cutoff.powf(1.0 / sigma) * log_factor
            / (PI.powf(d as f64) * sigma.powf(dm1) * gamma(d as f64)),
    )
}

/// Number of coordinates `j` with `j^s (2 pi)^sigma < C`.
pub fn sloan_active_dimensions(sigma: f64, s: f64, cutoff: f64) -> usize {
    let base = (2.0 * PI).powf(sigma);
    let mut j = 0usize;
    while ((j + 1) as f64).powf(s) * base < cutoff {
        j += 1;
    }
    j
}

/// The finite set `N(C)` with the coefficient of each member.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSet {
    cutoff: f64,
    dimension: Option<usize>,
    members: Vec<(MultiIndex, f64)>,
}

impl IndexSet {
    /// Build from explicit members; every coefficient must be below `cutoff`.
    pub fn from_members(
        cutoff: f64,
        dimension: Option<usize>,
        members: Vec<(MultiIndex, f64)>,
    ) -> Result<Self> {
        if let Some((l, c)) = members.iter().find(|(_, c)| !(*c < cutoff)) {
            return domain(format!("member {l} has coefficient {c} >= cutoff {cutoff}"));
        }
        Ok(IndexSet { cutoff, dimension, members })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn members(&self) -> &[(MultiIndex, f64)] {
        &self.members
    }

    pub fn indices(&self) -> impl Iterator<Item = &MultiIndex> {
        self.members.iter().map(|(l, _)| l)
    }

    /// `N(C)`.
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Highest coordinate touched by any member.
    pub fn required_dimension(&self) -> usize {
        self.members.iter().map(|(l, _)| l.len()).max().unwrap_or(0)
    }

    /// CSV with columns `index,coefficient`; index entries space-separated and
    /// padded to the family dimension.
    pub fn to_csv(&self) -> String {
        let width = self.dimension.unwrap_or(0);
        let mut out = String::from("# schema_version: 1\nindex,coefficient\n");
        for (l, c) in &self.members {
            let entries: Vec<String> = if width == 0 && l.is_zero() {
                vec!["0".into()]
            } else {
                l.padded(width).iter().map(|x| x.to_string()).collect()
            };
            out.push_str(&entries.join(" "));
            out.push(',');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    /// Parse the output of [`IndexSet::to_csv`]. The cutoff is not stored in
    /// the file; the caller supplies it.
    pub fn from_csv(text: &str, cutoff: f64, dimension: Option<usize>) -> Result<Self> {
        let members = parse_index_csv(text, "coefficient")?;
        IndexSet::from_members(cutoff, dimension, members)
    }
}

/// Parse a two-column `index,<value>` CSV, skipping `#` comment lines.
pub fn parse_index_csv(text: &str, value_column: &str) -> Result<Vec<(MultiIndex, f64)>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty() && !line.starts_with('#'));
    match lines.next() {
        Some(header) if header.replace(' ', "") == format!("index,{value_column}") => {}
        other => {
            return Err(Error::Parse(format!(
                "expected header 'index,{value_column}', found {other:?}"
            )))
        }
    }
    lines
        .map(|line| {
            let (idx, val) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::Parse(format!("malformed row {line:?}")))?;
            let value = val
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad value in row {line:?}: {e}")))?;
            Ok((idx.parse::<MultiIndex>()?, value))
        })
        .collect()
}

/// Exactly enumerate `{l : c_l < C}` under the default member cap.
pub fn enumerate_below(family: &Family, cutoff: f64) -> Result<IndexSet> {
    enumerate_below_with_cap(family, cutoff, DEFAULT_MAX_INDICES)
}

pub fn enumerate_below_with_cap(family: &Family, cutoff: f64, cap: usize) -> Result<IndexSet> {
    family.validate()?;
    if !(cutoff > 0.0) || cutoff.is_nan() {
        return domain(format!("cutoff must be positive, got {cutoff}"));
    }
    let mut walker = Walker {
        family,
        cutoff,
        cap,
        dim_limit: family.dimension().unwrap_or(usize::MAX),
        entries: Vec::new(),
        out: Vec::new(),
    };
    walker.visit(1, family.identity(), 0)?;
    Ok(IndexSet { cutoff, dimension: family.dimension(), members: walker.out })
}

struct Walker<'a> {
    family: &'a Family,
    cutoff: f64,
    cap: usize,
    dim_limit: usize,
    entries: Vec<i64>,
    out: Vec<(MultiIndex, f64)>,
}

impl Walker<'_> {
    /// Visit the index currently in `entries` (accumulated value `acc`), then
    /// extend it with nonzero coordinates `>= start`.
    fn visit(&mut self, start: usize, acc: f64, support: usize) -> Result<()> {
        let f = self.family;
        let value = f.finish(acc);
        if !(value < self.cutoff) {
            return Ok(());
        }
        if f.admits_support(support) {
            if self.out.len() >= self.cap {
                return Err(Error::Resource { cap: self.cap, cutoff: self.cutoff });
            }
            self.out.push((MultiIndex(self.entries.clone()), value));
        }
        if support >= f.max_support() {
            return Ok(());
        }
        let mut j = start;
        while j <= self.dim_limit {
            // Terms are nondecreasing in j and in the magnitude, so the first
            // failure ends each loop.
            if !(f.finish(f.fold(acc, f.term(j, 1))) < self.cutoff) {
                break;
            }
            let saved = self.entries.len();
            let mut a = 1u64;
            loop {
                let next = f.fold(acc, f.term(j, a));
                if !(f.finish(next) < self.cutoff) {
                    break;
                }
                for sign in [1i64, -1] {
                    self.entries.resize(j, 0);
                    self.entries[j - 1] = sign * a as i64;
                    self.visit(j + 1, next, support + 1)?;
                    self.entries.truncate(saved);
                }
                a += 1;
            }
            j += 1;
        }
        Ok(())
    }
}

/// Flat JSON form of [`Family`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

impl From<Family> for FamilyRecord {
    fn from(f: Family) -> Self {
        let mut r = FamilyRecord {
            variant: f.variant_name().to_string(),
            d: f.dimension(),
            sigma: None,
            s: None,
            kappa: None,
            m: None,
        };
        match f {
            Family::SobolevSum { sigma, .. }
            | Family::SobolevEuclid { sigma, .. }
            | Family::TensorSobolev { sigma, .. } => r.sigma = Some(sigma),
            Family::AnovaExact { m, sigma, .. } | Family::AnovaAtMost { m, sigma, .. } => {
                r.sigma = Some(sigma);
                r.m = Some(m);
            }
            Family::AnalyticStrip { kappa, .. } => r.kappa = Some(kappa),
            Family::SloanWozniakowski { sigma, s } => {
                r.sigma = Some(sigma);
                r.s = Some(s);
            }
        }
        r
    }
}

impl TryFrom<FamilyRecord> for Family {
    type Error = Error;

    fn try_from(r: FamilyRecord) -> Result<Self> {
        let need_d = || r.d.ok_or_else(|| Error::Domain(format!("{} requires d", r.variant)));
        let need_sigma =
            || r.sigma.ok_or_else(|| Error::Domain(format!("{} requires sigma", r.variant)));
        let need_m = || r.m.ok_or_else(|| Error::Domain(format!("{} requires m", r.variant)));
        let family = match normalize_variant(&r.variant).as_str() {
            "sobolevsum" => Family::SobolevSum { d: need_d()?, sigma: need_sigma()? },
            "soboleveuclid" => Family::SobolevEuclid { d: need_d()?, sigma: need_sigma()? },
            "tensorsobolev" => Family::TensorSobolev { d: need_d()?, sigma: need_sigma()? },
            "anovaexact" => Family::AnovaExact { d: need_d()?, m: need_m()?, sigma: need_sigma()? },
            "anovaatmost" => {
                Family::AnovaAtMost { d: need_d()?, m: need_m()?, sigma: need_sigma()? }
            }
            "analyticstrip" => Family::AnalyticStrip {
                d: need_d()?,
                kappa: r.kappa.ok_or_else(|| Error::Domain("AnalyticStrip requires kappa".into()))?,
            },
            "sloanwozniakowski" => Family::SloanWozniakowski {
                sigma: need_sigma()?,
                s: r.s.ok_or_else(|| Error::Domain("SloanWozniakowski requires s".into()))?,
            },
            other => return domain(format!("unknown family variant {other:?}")),
        };
        family.validate()?;
        Ok(family)
    }
}

/// Accepts `SobolevSum`, `sobolev-sum`, `sobolev_sum`, ...
fn normalize_variant(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Parse a family from its variant name plus optional parameters.
pub fn family_from_parts(
    variant: &str,
    d: Option<usize>,
    sigma: Option<f64>,
    s: Option<f64>,
    kappa: Option<f64>,
    m: Option<usize>,
) -> Result<Family> {
    Family::try_from(FamilyRecord { variant: variant.to_string(), d, sigma, s, kappa, m })
}
