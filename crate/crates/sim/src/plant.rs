//! Actuator layer between commands and the kinematic model: slew-limited
//! steering and one-tick proportional, jerk-limited speed tracking.

use acc_core::{euler_step, ControlInput64, VehicleParams64, VehicleState64};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStep {
    pub state: VehicleState64,
    /// Inputs actually integrated this step.
    pub input: ControlInput64,
    /// Measured acceleration `(v' - v) / dt`, differs from `input.accel` at the v = 0 floor.
    pub accel: f64,
}

/// Applies one plant step of length `dt` towards `(delta_des, v_cmd)`. `a_prev`
/// is the acceleration applied in the previous step (jerk reference).
pub fn plant_step(
    z: &VehicleState64,
    a_prev: f64,
    delta_des: f64,
    v_cmd: f64,
    params: &VehicleParams64,
    dt: f64,
) -> Result<PlantStep> {
    let target = delta_des.clamp(-params.delta_max, params.delta_max);
    let delta_rate = ((target - z.delta) / dt).clamp(-params.ddelta_max, params.ddelta_max);
    let jerk_band = params.j_max * dt;
    let accel = ((v_cmd - z.v) / dt)
        .clamp(params.a_min, params.a_max)
        .clamp(a_prev - jerk_band, a_prev + jerk_band);
    let input = ControlInput64::new(delta_rate, accel);
    let state = euler_step(z, &input, dt, params)?;
    Ok(PlantStep {
        state,
        input,
        accel: (state.v - z.v) / dt,
    })
}
