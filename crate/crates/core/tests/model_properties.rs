use std::f64::consts::TAU;

use dmaq::beamformer::{closed_form_weight_magnitude, design_first_order};
use dmaq::experiment::{sdn_point, ExperimentConfig};
use dmaq::metrics::{estimate_beampattern, predict_sdn, AngleGrid, MonteCarloPlan, RailQuantizers, Scenario};
use dmaq::signal::intersensor_delay;
use dmaq::{ArrayGeometry, PatternKind, QuantizerSpec, SamplingConfig, SensorChannel, SourceSignal};
use proptest::prelude::*;

const F0: f64 = 1999.0;

fn geometry() -> ArrayGeometry {
    ArrayGeometry::relative_to_wavelength(0.04, F0, 343.0).unwrap()
}

fn omega() -> f64 {
    TAU * F0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn delay_matches_projection(theta in 0.0f64..TAU) {
        let g = geometry();
        let expected = g.spacing() * theta.cos() / g.sound_speed();
        prop_assert!((intersensor_delay(&g, theta) - expected).abs() <= 1e-18);
        prop_assert!(intersensor_delay(&g, theta).abs() <= g.spacing() / g.sound_speed());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn designed_weights_match_closed_form(null_deg in 5.0f64..=180.0) {
        let d = design_first_order(&geometry(), omega(), null_deg, 0.0).unwrap();
        let expected = closed_form_weight_magnitude(TAU * 0.04, null_deg);
        for w in d.weights() {
            prop_assert!((w.magnitude - expected).abs() <= 1e-9 * expected);
        }
        prop_assert!((d.ideal_response(0.0).re - 1.0).abs() < 1e-9);
        prop_assert!(d.ideal_response(null_deg.to_radians()).norm() < 1e-9);
    }
}

#[test]
fn named_weight_magnitudes() {
    let tau = TAU * 0.04;
    let expected = [
        (PatternKind::Dipole, 3.98936),
        (PatternKind::Cardioid, 2.01054),
        (PatternKind::Hypercardioid, 2.66836),
        (PatternKind::Supercardioid, 2.34874),
    ];
    for (kind, w) in expected {
        let null_deg = kind.null_deg().unwrap();
        let d = design_first_order(&geometry(), omega(), null_deg, 0.0).unwrap();
        assert!((d.weights()[0].magnitude - w).abs() < 1e-5, "{kind}");
        assert!((closed_form_weight_magnitude(tau, null_deg) - w).abs() < 1e-5, "{kind}");
    }
}

fn scenario_with(amplitude: f64, full_scale: f64, bits: u32) -> Scenario {
    let source = SourceSignal::from_hz(amplitude, F0, 0.0).unwrap();
    let design = design_first_order(&geometry(), source.angular_frequency(), 90.0, 0.0).unwrap();
    Scenario::new(
        source,
        SamplingConfig::new(44_100.0, 1024).unwrap(),
        RailQuantizers::shared(QuantizerSpec::new(bits, full_scale).unwrap()),
        design,
    )
    .unwrap()
}

#[test]
fn sdn_invariant_to_common_scaling() {
    let grid = AngleGrid::new(vec![0.0, 90.0, 180.0]);
    let plan = MonteCarloPlan::new(200, 5);
    let reference = estimate_beampattern(&scenario_with(1.0, 1.0, 12), &plan, &grid).unwrap();
    let scaled = estimate_beampattern(&scenario_with(0.25, 0.25, 12), &plan, &grid).unwrap();
    let a = dmaq::metrics::sdn(&reference, 90.0).unwrap();
    let b = dmaq::metrics::sdn(&scaled, 90.0).unwrap();
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

#[test]
fn predicted_sdn_gains_six_db_per_bit() {
    let d = design_first_order(&geometry(), omega(), 90.0, 0.0).unwrap();
    let channels = [SensorChannel::ideal(); 2];
    let grid = [0.0, 90.0, 180.0];
    let at = |bits| {
        predict_sdn(&d, &channels, &RailQuantizers::shared(QuantizerSpec::with_bits(bits).unwrap()), 1.0, &grid).unwrap()
    };
    for bits in 8..16 {
        assert!((at(bits + 1) - at(bits) + 20.0 * 2f64.log10()).abs() < 1e-9);
    }
    assert!((at(16) + 83.07).abs() < 0.01);
    assert!((at(10) + 46.94).abs() < 0.01);
}

#[test]
fn beampattern_is_symmetric_about_the_array_axis() {
    let sc = scenario_with(1.0, 1.0, 10);
    let grid = AngleGrid::new(vec![30.0, 330.0, 100.0, 260.0]);
    let res = estimate_beampattern(&sc, &MonteCarloPlan::new(300, 9), &grid).unwrap();
    for (a, b) in [(30.0, 330.0), (100.0, 260.0)] {
        let (pa, pb) = (res.power_at(a).unwrap(), res.power_at(b).unwrap());
        assert!((pa / pb - 1.0).abs() < 1e-6, "{a}: {pa} vs {pb}");
    }
}

#[test]
fn estimator_independent_of_thread_count() {
    let sc = scenario_with(1.0, 1.0, 11);
    let grid = AngleGrid::half_circle(15.0);
    let plan = MonteCarloPlan::new(150, 77);
    let many = estimate_beampattern(&sc, &plan, &grid).unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| estimate_beampattern(&sc, &plan, &grid).unwrap());
    assert_eq!(many.power, one.power);
    assert_eq!(many.std_error, one.std_error);
}

#[test]
fn steered_null_normalisations_diverge_near_endfire() {
    let mut cfg = ExperimentConfig::default();
    cfg.monte_carlo.trials = 100;
    cfg.signal.sequence_length = 1024;
    let p = sdn_point(&cfg, F0, 16, 1.0).unwrap();
    assert!((p.sdn_max_norm_db - p.predicted_db).abs() < 1.0);
    assert!(p.sdn_max_norm_db < -80.0);
    assert!(p.sdn_look_norm_db > -10.0 && p.sdn_look_norm_db < 0.0);
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = ExperimentConfig::default();
    cfg.design.patterns = Some(vec![PatternKind::Cardioid, PatternKind::Dipole]);
    cfg.monte_carlo.seed = 123;
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn spacing_scales_with_wavelength() {
    for f in [1000.0, 3000.0, 6000.0] {
        let g = ArrayGeometry::relative_to_wavelength(0.04, f, 343.0).unwrap();
        assert!((g.electrical_spacing(TAU * f) - TAU * 0.04).abs() < 1e-12);
    }
}
