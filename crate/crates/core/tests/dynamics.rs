use std::f64::consts::{FRAC_PI_4, TAU};

use phasefilter::linalg::{max_abs_diff, operator_norm, unitarity_deviation};
use phasefilter::nvmodel::{logical_block, FrameKind, LogicalFrame, RegisterConfig, RegisterModel};
use phasefilter::propagate::{
    propagate, propagate_interval, static_propagator, trajectory, TimeGrid, DEFAULT_DT, DEFAULT_STRIDE,
};
use phasefilter::pulse::{PulseParams, Tone, ZeroDrive};

fn full() -> RegisterModel {
    RegisterModel::new(&RegisterConfig::default(), 0.0).unwrap()
}

fn pulse(duration: f64) -> PulseParams {
    PulseParams::new(
        vec![
            Tone { amplitude: 8e-5, frequency: TAU * 0.9e6, phase: 0.3 },
            Tone { amplitude: 6e-5, frequency: -TAU * 2.2e6, phase: 1.7 },
            Tone { amplitude: 4e-5, frequency: TAU * 1.4e6, phase: -0.8 },
        ],
        duration,
        0.15,
    )
    .unwrap()
}

#[test]
fn zero_drive_is_static_exponential_in_both_models() {
    for model in [full(), full().spectator_sector().unwrap()] {
        for duration in [1e-7, 1.25e-6, 1.5e-6] {
            let grid = TimeGrid::with_step(duration, 1e-9).unwrap();
            let u = propagate(&ZeroDrive(duration), &model, &grid).unwrap();
            assert!(max_abs_diff(&u, &static_propagator(&model, duration)) < 1e-10);
        }
    }
}

#[test]
fn composition_over_uneven_split() {
    let model = full();
    let p = pulse(6e-7);
    let whole = propagate_interval(&p, &model, 0.0, 6e-7, 2400).unwrap();
    let a = propagate_interval(&p, &model, 0.0, 1.5e-7, 600).unwrap();
    let b = propagate_interval(&p, &model, 1.5e-7, 6e-7, 1800).unwrap();
    assert!(max_abs_diff(&whole, &(b * a)) < 1e-9);
}

#[test]
fn midpoint_rule_is_second_order() {
    let model = full().spectator_sector().unwrap();
    let duration = 4e-7;
    let p = pulse(duration);
    let dt = 2e-9;
    let reference = propagate(&p, &model, &TimeGrid::with_step(duration, dt / 8.0).unwrap()).unwrap();
    let coarse = propagate(&p, &model, &TimeGrid::with_step(duration, dt).unwrap()).unwrap();
    let fine = propagate(&p, &model, &TimeGrid::with_step(duration, dt / 2.0).unwrap()).unwrap();
    let ratio = operator_norm(&(coarse - &reference)) / operator_norm(&(fine - &reference));
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn unitarity_and_norm_at_default_step() {
    let model = full();
    let duration = 1.5e-6;
    let grid = TimeGrid::with_step(duration, DEFAULT_DT).unwrap();
    let u = propagate(&pulse(duration), &model, &grid).unwrap();
    assert!(unitarity_deviation(&u) < 1e-9);

    let frame = LogicalFrame::for_model(&model, FrameKind::Canonical).unwrap();
    let traj = trajectory(&pulse(duration), &model, &frame, &grid, 20).unwrap();
    for s in &traj.samples {
        assert!((s.norm - 1.0).abs() < 1e-9);
        let total: f64 = s.populations.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

fn fixture(gate: &str) -> PulseParams {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(gate);
    let text = std::fs::read_to_string(dir.join("tones.csv")).unwrap();
    let duration = if gate == "xzz" { 1.25e-6 } else { 1.5e-6 };
    PulseParams::from_tones_csv(&text, duration, 0.15, TAU * 1.5e6).unwrap()
}

#[test]
fn unwrapped_invariants_are_continuous_on_fixtures() {
    let full = RegisterModel::new(&RegisterConfig::default(), TAU * 1.5e6).unwrap();
    for (gate, kind) in [("zzz", FrameKind::Canonical), ("xzz", FrameKind::HadamardOnA)] {
        let p = fixture(gate);
        let grid = TimeGrid::with_step(p.duration, DEFAULT_DT).unwrap();
        let frame = LogicalFrame::for_model(&full, kind).unwrap();
        let traj = trajectory(&p, &full, &frame, &grid, DEFAULT_STRIDE).unwrap();
        for pair in traj.samples.windows(2) {
            for (a, b) in pair[0].invariants.iter().zip(&pair[1].invariants) {
                assert!((a - b).abs() < FRAC_PI_4, "{gate}: jump {a} -> {b} at {}", pair[1].t);
            }
        }
    }
}

#[test]
fn sector_and_full_models_give_the_same_logical_block() {
    let full = full();
    let sector = full.spectator_sector().unwrap();
    let duration = 6e-7;
    let p = pulse(duration);
    let grid = TimeGrid::with_step(duration, 1e-9).unwrap();
    let block = |model: &RegisterModel| {
        let frame = LogicalFrame::for_model(model, FrameKind::Canonical).unwrap();
        logical_block(&propagate(&p, model, &grid).unwrap(), &frame).unwrap()
    };
    let ((a, leak_a), (b, leak_b)) = (block(&full), block(&sector));
    assert!(max_abs_diff(&a, &b) < 1e-12);
    assert!(leak_a.abs() < 1e-12 && leak_b.abs() < 1e-12);
}
