//! Seed sweeps over the auto-coupling stages.

use beamsim::autocouple::{
    auto_couple, position_search, AutoCoupleConfig, PositionSearchConfig, RandomSearchConfig, SimulatedObjective,
};
use beamsim::detect::SourceModel;
use beamsim::optics::{aligning_mirrors, Disturbance, MirrorLimits, MirrorState, OpticalLayout};

fn hidden() -> Disturbance {
    Disturbance::tilt(-4e-3, 6e-3)
}

#[test]
fn full_raster_without_lock_evaluates_every_point() {
    let mut obj = SimulatedObjective::power(OpticalLayout::default(), hidden());
    let scan = position_search(&mut obj, &MirrorState::default(), &PositionSearchConfig::default()).unwrap();
    assert_eq!(scan.evaluations, 21 * 21);
    assert_eq!(scan.valid_points(), 21 * 21);
}

#[test]
fn smoothed_argmax_tolerates_five_percent_noise() {
    let layout = OpticalLayout::default();
    let locked = aligning_mirrors(&layout, &hidden(), MirrorLimits::default());
    let mut hits = 0;
    for seed in 0..100 {
        let mut obj = SimulatedObjective::power(layout, hidden()).with_noise(0.05, seed);
        let scan = position_search(&mut obj, &locked, &PositionSearchConfig::default()).unwrap();
        let s = scan.argmax_state();
        let d = (s.alpha1() - locked.alpha1()).hypot(s.beta1() - locked.beta1());
        hits += (d <= 1.0e-3 + 1e-9) as usize;
    }
    assert!(hits >= 95, "{hits}/100 within 1 mrad");
}

#[test]
fn coincidence_objective_lands_where_power_does() {
    let layout = OpticalLayout::default();
    let mut source = SourceModel::spdc();
    source.calibrate_pump(5834.0, layout.peak_efficiency());
    let mut agree = 0;
    let runs = 30;
    for seed in 0..runs {
        let cfg = AutoCoupleConfig {
            start: [-4e-3, 4e-3, 0.0, 0.0],
            random: RandomSearchConfig {
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut power = SimulatedObjective::power(layout, hidden());
        let p = auto_couple(&mut power, &cfg).unwrap();
        let mut g2 = SimulatedObjective::g2(layout, hidden(), source, 1.0, 1000 + seed);
        let q = auto_couple(&mut g2, &cfg).unwrap();
        assert_eq!(serde_json::to_value(q.objective).unwrap(), "g2_peak");
        let (a, b) = (p.final_state, q.final_state);
        let d = (a.alpha1() - b.alpha1()).hypot(a.beta1() - b.beta1());
        agree += (d <= 1.0e-3 + 1e-9) as usize;
    }
    assert!(agree as f64 >= 0.9 * runs as f64, "{agree}/{runs} agree");
}
