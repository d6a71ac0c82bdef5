use std::f64::consts::PI;

use minimaxgof::basis::Basis;
use minimaxgof::families::{enumerate_below, Family, MultiIndex};
use minimaxgof::sim::{
    monte_carlo, smirnov_transform, wilson_interval, AlternativeSource, Cdf, DesignModel, MonteCarloConfig,
};
use minimaxgof::testing::{rate_weights, TestSpec, VarianceMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

fn rate_spec(f: &Family, cutoff: f64) -> TestSpec {
    let set = enumerate_below(f, cutoff).unwrap();
    TestSpec::at_level(Basis::Fourier, rate_weights(&set).unwrap(), 0.05, VarianceMode::Known(1.0)).unwrap()
}

/// Two-sided Kolmogorov distance to the uniform law.
fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

#[test]
fn smirnov_transform_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cdfs = vec![
        Cdf::Exponential { rate: 2.5 },
        Cdf::Normal { mean: -1.0, sd: 3.0 },
        Cdf::Table { knots: vec![(0.0, 0.0), (1.0, 0.7), (4.0, 1.0)] },
    ];
    let n = 20_000;
    let raw: Vec<Vec<f64>> = (0..n).map(|_| cdfs.iter().map(|c| c.sample_raw(&mut rng)).collect()).collect();
    let pts = smirnov_transform(&DesignModel::ProductCdf(cdfs), &raw).unwrap();
    // 1.63 / sqrt(n) is the 1% critical value
    let crit = 1.63 / (n as f64).sqrt();
    for k in 0..3 {
        let d = ks_uniform(pts.iter().map(|p| p[k]).collect());
        assert!(d < crit, "coordinate {k}: D = {d}");
    }
}

#[test]
fn wilson_interval_covers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(p, m) in &[(0.05, 400u64), (0.3, 100), (0.64, 1000)] {
        let bin = Binomial::new(m, p).unwrap();
        let trials = 4000;
        let hits = (0..trials)
            .filter(|_| {
                let (lo, hi) = wilson_interval(bin.sample(&mut rng), m);
                lo <= p && p <= hi
            })
            .count();
        let cover = hits as f64 / trials as f64;
        assert!((0.93..=0.97).contains(&cover), "p={p} m={m}: coverage {cover}");
    }
}

#[test]
fn fourier_basis_is_orthonormal_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let idx: Vec<MultiIndex> = [vec![], vec![1], vec![-1], vec![2, -1], vec![0, 3]].into_iter().map(MultiIndex::new).collect();
    let m = 200_000;
    let k = idx.len();
    let mut gram = vec![0.0; k * k];
    for _ in 0..m {
        let t = [rng.gen::<f64>(), rng.gen::<f64>()];
        let row: Vec<f64> = idx.iter().map(|l| Basis::Fourier.eval(l, &t)).collect();
        for a in 0..k {
            for b in 0..k {
                gram[a * k + b] += row[a] * row[b] / m as f64;
            }
        }
    }
    for a in 0..k {
        for b in 0..k {
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((gram[a * k + b] - want).abs() < 0.015, "({a},{b}) = {}", gram[a * k + b]);
        }
    }
}

#[test]
fn null_statistic_is_standardized() {
    let spec = rate_spec(&Family::SobolevSum { d: 2, sigma: 1.0 }, 40.0);
    let cfg = MonteCarloConfig::new(800, 2, 3000, 17).with_workers(4);
    let rep = monte_carlo(&spec, &AlternativeSource::Null, &DesignModel::Uniform, &cfg).unwrap();
    let se = 1.0 / (3000f64).sqrt();
    assert!(rep.mean_u.abs() < 4.0 * se, "mean {}", rep.mean_u);
    assert!((rep.sd_u - 1.0).abs() < 0.06, "sd {}", rep.sd_u);
}

#[test]
fn power_grows_with_signal() {
    let f = Family::SobolevSum { d: 1, sigma: 1.0 };
    let spec = rate_spec(&f, (2.0 * PI * 4.5).powi(2));
    let base = rate_weights(&enumerate_below(&f, (2.0 * PI * 4.5).powi(2)).unwrap()).unwrap();
    let cfg = MonteCarloConfig::new(600, 1, 1500, 23);
    let mut last = -1.0;
    let mut last_pred = -1.0;
    for amp in [0.0, 0.01, 0.02, 0.03] {
        let theta = base.iter().map(|(l, _)| (l.clone(), amp)).collect();
        let src = if amp == 0.0 { AlternativeSource::Null } else { AlternativeSource::Fixed(theta) };
        let rep = monte_carlo(&spec, &src, &DesignModel::Uniform, &cfg).unwrap();
        let pred = rep.predicted.unwrap();
        assert!(rep.empirical_rate > last - 0.02, "amp {amp}: {} after {last}", rep.empirical_rate);
        assert!(pred > last_pred, "amp {amp}: predicted {pred} after {last_pred}");
        last = rep.empirical_rate;
        last_pred = pred;
    }
    assert!(last > 0.5, "final power {last}");
}
