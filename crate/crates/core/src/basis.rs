//! Tensor-product orthonormal bases on the unit cube: trigonometric, Haar
//! and Walsh.
//!
//! Every basis is indexed by a [`MultiIndex`]. Fourier uses the signed entry
//! directly (`j > 0` cosine, `j < 0` sine). Haar and Walsh map a signed entry
//! to a linear position `p` (`0 -> 0`, `j > 0 -> 2j - 1`, `j < 0 -> 2|j|`), so
//! distinct multi-indices always select distinct basis functions.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::families::MultiIndex;

/// A point of the design cube `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint(Vec<f64>);

impl DesignPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(x) = coords.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return domain(format!("design coordinate {x} outside [0,1]"));
        }
        Ok(DesignPoint(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DesignPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Fourier,
    Haar,
    Walsh,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Fourier => "fourier",
            Basis::Haar => "haar",
            Basis::Walsh => "walsh",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fourier" => Ok(Basis::Fourier),
            "haar" => Ok(Basis::Haar),
            "walsh" => Ok(Basis::Walsh),
            other => Err(Error::Parse(format!("unknown basis {other:?}"))),
        }
    }
}

/// One-variable trigonometric basis: `1`, `sqrt2 cos(2 pi j u)` for `j > 0`,
/// `sqrt2 sin(2 pi |j| u)` for `j < 0`.
pub fn fourier_1d(j: i64, u: f64) -> f64 {
    if j == 0 {
        return 1.0;
    }
    // reduce j*u modulo 1 before the trig call
    let arg = (j.unsigned_abs() as f64 * u.rem_euclid(1.0)).rem_euclid(1.0);
    let (s, c) = (2.0 * PI * arg).sin_cos();
    if j > 0 {
        SQRT_2 * c
    } else {
        SQRT_2 * s
    }
}

fn check_dim(l: &MultiIndex, t: &[f64]) {
    assert!(
        l.len() <= t.len(),
        "index {l} uses coordinate {} but the design point has dimension {}",
        l.len(),
        t.len()
    );
}

pub fn fourier_eval(l: &MultiIndex, t: &[f64]) -> f64 {
    check_dim(l, t);
    l.nonzero().map(|(k, j)| fourier_1d(j, t[k])).product()
}

/// One-variable Haar index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HaarIndex {
    /// The constant function.
    Scaling,
    /// `2^{level/2} h(2^level t - shift + 1)`, `shift` in `1..=2^level`.
    Wavelet { level: u32, shift: u64 },
}

impl HaarIndex {
    /// Linear position `0, 1, 2, ...` to `(level, shift)` in breadth-first order.
    pub fn from_position(p: u64) -> Self {
        if p == 0 {
            return HaarIndex::Scaling;
        }
        let level = 63 - p.leading_zeros();
        HaarIndex::Wavelet { level, shift: p - (1u64 << level) + 1 }
    }
}

/// Signed entry to linear basis position.
pub fn signed_to_position(j: i64) -> u64 {
    match j {
        0 => 0,
        j if j > 0 => 2 * j as u64 - 1,
        j => 2 * j.unsigned_abs(),
    }
}

/// Mother Haar function, right-continuous; `left_limit` evaluates `h(x-)`.
fn mother_haar(x: f64, left_limit: bool) -> f64 {
    if left_limit {
        if x > 0.0 && x <= 0.5 {
            1.0
        } else if x > 0.5 && x <= 1.0 {
            -1.0
        } else {
            0.0
        }
    } else if (0.0..0.5).contains(&x) {
        1.0
    } else if (0.5..1.0).contains(&x) {
        -1.0
    } else {
        0.0
    }
}

pub fn haar_1d(idx: HaarIndex, u: f64) -> f64 {
    match idx {
        HaarIndex::Scaling => 1.0,
        HaarIndex::Wavelet { level, shift } => {
            let scale = (1u64 << level) as f64;
            let x = scale * u - (shift - 1) as f64;
            scale.sqrt() * mother_haar(x, u >= 1.0)
        }
    }
}

pub fn haar_eval(idx: &[HaarIndex], t: &[f64]) -> f64 {
    assert!(idx.len() <= t.len(), "Haar index longer than the design point");
    idx.iter().zip(t).map(|(&h, &u)| haar_1d(h, u)).product()
}

/// Paley-ordered Walsh function `w_j(u) = (-1)^{sum_i b_i(j) u_{i+1}}`, where
/// `u_{i+1}` is the `(i+1)`-th binary digit of `u`. At `u = 1` the left limit
/// (all digits one) is used.
pub fn walsh_1d(j: u64, u: f64) -> f64 {
    if j == 0 {
        return 1.0;
    }
    let bits = 64 - j.leading_zeros();
    let digits: u64 = if u >= 1.0 {
        u64::MAX
    } else {
        // floor(u 2^bits), digit i+1 of u sits at bit (bits - 1 - i)
        (u.max(0.0) * (1u64 << bits) as f64).floor() as u64
    };
    let mut parity = 0u32;
    for i in 0..bits {
        if j >> i & 1 == 1 {
            parity ^= (digits >> (bits - 1 - i) & 1) as u32;
        }
    }
    if parity == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn walsh_eval(j: &[u64], t: &[f64]) -> f64 {
    assert!(j.len() <= t.len(), "Walsh index longer than the design point");
    j.iter().zip(t).map(|(&jk, &u)| walsh_1d(jk, u)).product()
}

impl Basis {
    /// `phi_l(t)` for a multi-index.
    pub fn eval(&self, l: &MultiIndex, t: &[f64]) -> f64 {
        check_dim(l, t);
        match self {
            Basis::Fourier => fourier_eval(l, t),
            Basis::Haar => l
                .nonzero()
                .map(|(k, j)| haar_1d(HaarIndex::from_position(signed_to_position(j)), t[k]))
                .product(),
            Basis::Walsh => l
                .nonzero()
                .map(|(k, j)| walsh_1d(signed_to_position(j), t[k]))
                .product(),
        }
    }
}

/// Result of [`gram_identity_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GramCheck {
    /// `sum_l phi_l(t)^2`.
    pub sum: f64,
    /// `sum - N`.
    pub deviation: f64,
}

/// Evaluate `sum_{l in members} phi_l(t)^2` against the member count.
pub fn gram_identity_check<'a, I>(members: I, t: &[f64], basis: Basis) -> GramCheck
where
    I: IntoIterator<Item = &'a MultiIndex>,
{
    let mut count = 0usize;
    let sum = crate::numeric::sum(members.into_iter().map(|l| {
        count += 1;
        let v = basis.eval(l, t);
        v * v
    }));
    GramCheck { sum, deviation: sum - count as f64 }
}

/// Evaluates a fixed list of basis functions at many points.
///
/// For the trigonometric basis the per-coordinate tables `cos(2 pi j u)`,
/// `sin(2 pi j u)` are built by rotation, re-anchored with a direct
/// evaluation every few steps, so one point costs `O(d max|j| + N)`.
#[derive(Clone, Debug)]
pub struct BasisEvaluator {
    basis: Basis,
    indices: Vec<MultiIndex>,
    nonzero: Vec<Vec<(usize, i64)>>,
    max_freq: Vec<usize>,
}

const REANCHOR: usize = 16;

impl BasisEvaluator {
    pub fn new(basis: Basis, indices: Vec<MultiIndex>) -> Self {
        let dim = indices.iter().map(MultiIndex::len).max().unwrap_or(0);
        let mut max_freq = vec![0usize; dim];
        let nonzero = indices
            .iter()
            .map(|l| {
                l.nonzero()
                    .inspect(|&(k, j)| {
                        max_freq[k] = max_freq[k].max(j.unsigned_abs() as usize);
                    })
                    .collect()
            })
            .collect();
        BasisEvaluator { basis, indices, nonzero, max_freq }
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Smallest design dimension the evaluator can handle.
    pub fn required_dimension(&self) -> usize {
        self.max_freq.len()
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            tables: self.max_freq.iter().map(|&m| (vec![0.0; m + 1], vec![0.0; m + 1])).collect(),
        }
    }

    /// Write `phi_l(t)` for every index into `out`.
    pub fn eval_into(&self, t: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        assert!(t.len() >= self.required_dimension(), "design point dimension too small");
        assert_eq!(out.len(), self.indices.len());
        match self.basis {
            Basis::Fourier => {
                for (k, (cos, sin)) in scratch.tables.iter_mut().enumerate() {
                    fill_trig(t[k], cos, sin);
                }
                for (o, nz) in out.iter_mut().zip(&self.nonzero) {
                    let mut v = 1.0;
                    for &(k, j) in nz {
                        let (cos, sin) = &scratch.tables[k];
                        v *= if j > 0 { cos[j as usize] } else { sin[j.unsigned_abs() as usize] };
                    }
                    *o = v;
                }
            }
            basis => {
                for (o, l) in out.iter_mut().zip(&self.indices) {
                    *o = basis.eval(l, t);
                }
            }
        }
    }
}

/// Per-thread working tables for [`BasisEvaluator`].
#[derive(Clone, Debug)]
pub struct Scratch {
    tables: Vec<(Vec<f64>, Vec<f64>)>,
}

/// `cos[j] = sqrt2 cos(2 pi j u)`, `sin[j] = sqrt2 sin(2 pi j u)`.
fn fill_trig(u: f64, cos: &mut [f64], sin: &mut [f64]) {
    let u = u.rem_euclid(1.0);
    let (s1, c1) = (2.0 * PI * u).sin_cos();
    let (mut c, mut s) = (1.0, 0.0);
    for j in 0..cos.len() {
        if j % REANCHOR == 0 {
            let arg = (j as f64 * u).rem_euclid(1.0);
            let (sj, cj) = (2.0 * PI * arg).sin_cos();
            c = cj;
            s = sj;
        }
        cos[j] = SQRT_2 * c;
        sin[j] = SQRT_2 * s;
        let next_c = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = next_c;
    }
}
