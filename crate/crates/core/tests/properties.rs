use minimaxgof::basis::{Basis, DesignPoint};
use minimaxgof::families::MultiIndex;
use minimaxgof::testing::{u_statistic, u_statistic_naive, Sample, TestSpec, VarianceMode};
use proptest::prelude::*;

fn basis() -> impl Strategy<Value = Basis> {
    prop_oneof![Just(Basis::Fourier), Just(Basis::Haar), Just(Basis::Walsh)]
}

prop_compose! {
    fn case()(d in 1usize..=3, n in 2usize..40)
        (indices in prop::collection::btree_set(prop::collection::vec(-4i64..=4, d), 1..12),
         raw in prop::collection::vec(0.05f64..1.0, 12),
         points in prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), n),
         xs in prop::collection::vec(-5.0f64..5.0, n),
         basis in basis())
        -> (Sample, Vec<(MultiIndex, f64)>, Basis)
    {
        let raw = &raw[..indices.len()];
        let scale = (0.5 * raw.iter().map(|w| w * w).sum::<f64>()).sqrt();
        let weights = indices.into_iter().map(MultiIndex::new).zip(raw.iter().map(|w| w / scale)).collect();
        let points = points.into_iter().map(|p| DesignPoint::new(p).unwrap()).collect();
        (Sample::new(points, xs).unwrap(), weights, basis)
    }
}

fn scaled(sample: &Sample, c: f64) -> Sample {
    Sample::new(sample.points().to_vec(), sample.responses().iter().map(|x| c * x).collect()).unwrap()
}

proptest! {
    #[test]
    fn spectral_matches_pair_sum((sample, weights, basis) in case(), tau2 in 0.1f64..4.0) {
        let spec = TestSpec::new(basis, weights, 1.0, VarianceMode::Known(tau2)).unwrap();
        let fast = u_statistic(&sample, &spec).unwrap();
        let slow = u_statistic_naive(&sample, &spec).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()), "{fast} vs {slow}");
    }

    #[test]
    fn known_variance_scales_quadratically((sample, weights, basis) in case(), c in 0.1f64..10.0) {
        let spec = TestSpec::new(basis, weights, 1.0, VarianceMode::Known(1.0)).unwrap();
        let u = u_statistic(&sample, &spec).unwrap();
        let uc = u_statistic(&scaled(&sample, c), &spec).unwrap();
        prop_assert!((uc - c * c * u).abs() <= 1e-9 * (1.0 + (c * c * u).abs()));
    }

    #[test]
    fn plug_in_is_scale_free((sample, weights, basis) in case(), c in 0.1f64..10.0) {
        let spec = TestSpec::new(basis, weights, 1.0, VarianceMode::PlugIn).unwrap();
        let u = u_statistic(&sample, &spec).unwrap();
        let uc = u_statistic(&scaled(&sample, c), &spec).unwrap();
        prop_assert!((uc - u).abs() <= 1e-9 * (1.0 + u.abs()));
    }

    #[test]
    fn permuting_observations_is_harmless((sample, weights, basis) in case()) {
        let spec = TestSpec::new(basis, weights, 1.0, VarianceMode::Known(1.0)).unwrap();
        let mut pts = sample.points().to_vec();
        let mut xs = sample.responses().to_vec();
        pts.reverse();
        xs.reverse();
        let u = u_statistic(&sample, &spec).unwrap();
        let ur = u_statistic(&Sample::new(pts, xs).unwrap(), &spec).unwrap();
        prop_assert!((u - ur).abs() <= 1e-10 * (1.0 + u.abs()));
    }
}
