mod common;

use common::algebra::tester;
use common::config;
use proptest::prelude::*;
use sds_core::expr::{FunctionTable, ScalarExpr};
use sds_core::geometry::{Chart, ScalarField, Sds, VectorField};
use sds_core::reduction::builtins::{bessel, brownian, damped_oscillator, radial_map};
use sds_core::reduction::reduce;
use sds_core::sim::{
    generator_bias_study, integrate, ks_compare, EnsembleStats, FokkerPlanckOracle, GeneratorOptions, Histogram,
    Integrator, RngConfig, StepPolicy,
};

fn funcs() -> FunctionTable {
    FunctionTable::new()
}

fn stats(integ: &Integrator, cfg: &RngConfig) -> (Vec<Option<Vec<f64>>>, EnsembleStats) {
    let ends = integ.endpoints(&[0.3, -0.2], 1e-2, 0.5, 48, cfg, StepPolicy::Uniform).unwrap();
    let kept: Vec<&Vec<f64>> = ends.iter().flatten().collect();
    let cols: Vec<Vec<f64>> = (0..2).map(|k| kept.iter().map(|e| e[k]).collect()).collect();
    let mut h = Histogram::new(-3.0, 3.0, 12).unwrap();
    cols[0].iter().for_each(|v| h.add(*v));
    let names = vec!["x".to_string(), "y".to_string()];
    let s = EnsembleStats::new(&names, &cols, ends.len() - kept.len()).unwrap().with_histogram(h);
    (ends, s)
}

proptest! {
    #![proptest_config(config(8, 71))]

    #[test]
    fn equal_configs_give_identical_output(seed in any::<u64>(), stream in 0u64..64) {
        let x = brownian(2).unwrap();
        let cfg = RngConfig::new(seed);
        let a = integrate(&x, &funcs(), &[0.0, 0.0], 1e-2, 1.0, &cfg, stream).unwrap();
        let b = integrate(&x, &funcs(), &[0.0, 0.0], 1e-2, 1.0, &cfg, stream).unwrap();
        prop_assert_eq!(&a.states, &b.states);
        prop_assert_eq!(a.states.len(), 101);

        let integ = Integrator::new(&x, &funcs()).unwrap();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = serial.install(|| stats(&integ, &cfg));
        let many = stats(&integ, &cfg);
        prop_assert_eq!(&one.0, &many.0);
        prop_assert_eq!(&one.1, &many.1);
    }
}

#[test]
fn generator_bias_is_first_order_in_time() {
    // E[x_t^4] = 3t² for Brownian motion from 0, so the bias at x = 0 is 3t.
    let x = brownian(1).unwrap();
    let v = ScalarExpr::coord(&x.chart.names()[0]);
    let f = ScalarField::new(&x.chart, v.powi(4).unwrap()).unwrap();
    let opts = GeneratorOptions { paths: 20_000, ..Default::default() };
    let levels =
        generator_bias_study(&x, &f, &funcs(), &[0.0], &[4e-3, 2e-3, 1e-3], &opts, &RngConfig::new(11)).unwrap();
    for w in levels.windows(2) {
        let ratio = w[0].bias / w[1].bias;
        assert!(ratio >= 1.8, "{levels:?}");
    }
    for l in &levels {
        assert!((l.bias - 3.0 * l.t).abs() < 3.0 * l.stderr + 1e-3, "{l:?}");
    }
}

#[test]
fn density_oracle_is_normalized() {
    let line = Chart::euclidean("R", &["r"]);
    let r = ScalarExpr::coord("r");
    let cubic = Sds::new(
        VectorField::new(&line, vec![r.mul(&r).mul(&r).neg()]).unwrap(),
        vec![VectorField::new(&line, vec![ScalarExpr::one().add(&r.mul(&r).mul(&ScalarExpr::ratio(1, 4)))]).unwrap()],
    )
    .unwrap();
    for (x, lo, hi) in [(cubic, -3.0, 3.0), (bessel(3).unwrap(), 0.01, 6.0)] {
        let oracle = FokkerPlanckOracle::new(&x, &funcs(), lo, hi).unwrap();
        let n = oracle.normalization_check();
        assert!((0.999..=1.001).contains(&n), "{n}");
    }
}

#[test]
fn radial_paths_of_the_damped_oscillator_follow_the_reduced_law() {
    let x = damped_oscillator(&ScalarExpr::one()).unwrap();
    let rep = reduce(&x, None, &radial_map(2).unwrap(), 16, &tester()).unwrap();
    let reduced = rep.realized.expect("realized reduction");
    let full = Integrator::new(&x, &funcs()).unwrap();
    let down = Integrator::new(&reduced, &funcs()).unwrap();
    let (a, b) = (RngConfig::new(21), RngConfig::new(22));
    for t in [0.5, 1.0, 2.0] {
        let rf: Vec<f64> = full
            .endpoints(&[1.0, 0.0], 1e-3, t, 4000, &a.derive(t.to_bits()), StepPolicy::Uniform)
            .unwrap()
            .into_iter()
            .flatten()
            .map(|e| e[0].hypot(e[1]))
            .collect();
        let rr: Vec<f64> = down
            .endpoints(&[1.0], 1e-3, t, 4000, &b.derive(t.to_bits()), StepPolicy::Uniform)
            .unwrap()
            .into_iter()
            .flatten()
            .map(|e| e[0])
            .collect();
        let ks = ks_compare(&rf, &rr).unwrap();
        assert!(ks.pass, "t = {t}: {ks:?}");
    }
}
