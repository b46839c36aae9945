//! Shared fixtures for the criterion benches.

use mcstereo::synth::{random_dot_stereogram, FieldSpec, RdsParams, SyntheticScene};

/// Dense random-dot pair with a slanted disparity field.
pub fn fixture(width: usize, height: usize) -> SyntheticScene {
    random_dot_stereogram(&RdsParams {
        width,
        height,
        field: FieldSpec::SlantedPlane {
            a: 0.05,
            b: 0.02,
            c: 8.0,
        },
        seed: 7,
        ..RdsParams::default()
    })
    .expect("fixture parameters are in range")
}
