//! Kinematic single-track (bicycle) model shared by the tree planner and the plant.
//!
//! State `[x, y, theta, delta, v]`, input `[delta_rate, accel]`. The reference point is
//! the geometric vehicle center and no sideslip term is modelled.

use crate::error::{Error, Result};
use crate::geometry::Ellipse;
use crate::scalar::{clamp, normalize_angle, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState<T> {
    pub x: T,
    pub y: T,
    /// Heading (rad), kept in (-pi, pi].
    pub theta: T,
    /// Steering angle (rad), left positive.
    pub delta: T,
    /// Speed (m/s), never negative.
    pub v: T,
}

impl<T: Scalar> VehicleState<T> {
    pub fn new(x: T, y: T, theta: T, delta: T, v: T) -> Self {
        Self { x, y, theta, delta, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.theta.is_finite()
            && self.delta.is_finite()
            && self.v.is_finite()
    }

    /// Copy with steering clamped to the actuator range and speed floored at zero.
    pub fn saturated(&self, params: &VehicleParams<T>) -> Self {
        Self {
            delta: clamp(self.delta, -params.delta_max, params.delta_max),
            v: self.v.max(T::zero()),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput<T> {
    pub delta_rate: T,
    pub accel: T,
}

impl<T: Scalar> ControlInput<T> {
    pub fn new(delta_rate: T, accel: T) -> Self {
        Self { delta_rate, accel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams<T> {
    pub wheelbase: T,
    pub body_length: T,
    pub body_width: T,
    pub delta_max: T,
    pub ddelta_max: T,
    pub a_min: T,
    pub a_max: T,
    pub a_lat_max: T,
    pub j_max: T,
}

impl<T: Scalar> VehicleParams<T> {
    /// Mid-size passenger car.
    pub fn passenger_car() -> Self {
        Self {
            wheelbase: T::lit(2.9),
            body_length: T::lit(4.6),
            body_width: T::lit(1.9),
            delta_max: T::lit(0.5),
            ddelta_max: T::lit(0.4),
            a_min: T::lit(-4.0),
            a_max: T::lit(2.0),
            a_lat_max: T::lit(3.0),
            j_max: T::lit(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("wheelbase", self.wheelbase),
            ("body_length", self.body_length),
            ("body_width", self.body_width),
            ("delta_max", self.delta_max),
            ("ddelta_max", self.ddelta_max),
            ("a_max", self.a_max),
            ("a_lat_max", self.a_lat_max),
            ("j_max", self.j_max),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value <= T::zero() {
                return Err(Error::InvalidParams(format!("{name} must be finite and > 0")));
            }
        }
        if !self.a_min.is_finite() || self.a_min >= T::zero() {
            return Err(Error::InvalidParams("a_min must be finite and < 0".into()));
        }
        if self.delta_max >= T::lit(std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParams("delta_max must be below pi/2".into()));
        }
        Ok(())
    }

    /// Smallest axis-ratio-preserving ellipse circumscribing the body rectangle.
    pub fn collision_ellipse(&self) -> Ellipse<T> {
        let sqrt2 = T::two().sqrt();
        Ellipse::new(
            self.body_length * T::half() * sqrt2,
            self.body_width * T::half() * sqrt2,
        )
    }

    /// Curvature at full steering lock.
    pub fn max_curvature(&self) -> T {
        self.delta_max.tan() / self.wheelbase
    }
}

/// One forward Euler step `z + t_s * f(z, u)`, followed by steering and speed saturation.
pub fn euler_step<T: Scalar>(
    z: &VehicleState<T>,
    u: &ControlInput<T>,
    t_s: T,
    params: &VehicleParams<T>,
) -> Result<VehicleState<T>> {
    if !z.is_finite() {
        return Err(Error::NonFinite("vehicle state"));
    }
    if !u.delta_rate.is_finite() || !u.accel.is_finite() {
        return Err(Error::NonFinite("control input"));
    }
    if !t_s.is_finite() || t_s <= T::zero() {
        return Err(Error::InvalidConfig("step size must be positive".into()));
    }
    let (sin, cos) = z.theta.sin_cos();
    let yaw_rate = z.v * z.delta.tan() / params.wheelbase;
    Ok(VehicleState {
        x: z.x + t_s * z.v * cos,
        y: z.y + t_s * z.v * sin,
        theta: normalize_angle(z.theta + t_s * yaw_rate),
        delta: clamp(
            z.delta + t_s * u.delta_rate,
            -params.delta_max,
            params.delta_max,
        ),
        v: (z.v + t_s * u.accel).max(T::zero()),
    })
}

/// Path curvature `tan(delta) / L` of the kinematic bicycle.
pub fn curvature_from_steering<T: Scalar>(delta: T, wheelbase: T) -> Result<T> {
    if !delta.is_finite() || delta.abs() >= T::lit(std::f64::consts::FRAC_PI_2) {
        return Err(Error::SteeringOutOfRange(delta.to_f64().unwrap_or(f64::NAN)));
    }
    if !(wheelbase > T::zero()) {
        return Err(Error::InvalidParams("wheelbase must be > 0".into()));
    }
    Ok(delta.tan() / wheelbase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn params() -> VehicleParams<f64> {
        VehicleParams::passenger_car()
    }

    #[test]
    fn euler_step_braking() {
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let next = euler_step(&z, &ControlInput::new(0.0, -2.5), 0.05, &params()).unwrap();
        assert_eq!(next, VehicleState::new(0.25, 0.0, 0.0, 0.0, 4.875));
    }

    #[test]
    fn euler_step_fixed_point_at_rest() {
        let z = VehicleState::new(1.0, 2.0, 0.3, 0.1, 0.0);
        for t_s in [0.01, 0.05, 1.0] {
            let next = euler_step(&z, &ControlInput::default(), t_s, &params()).unwrap();
            assert_eq!(next, z);
        }
    }

    #[test]
    fn euler_step_along_y() {
        let z = VehicleState::new(0.0, 0.0, FRAC_PI_2, 0.0, 2.0);
        let next = euler_step(&z, &ControlInput::default(), 0.1, &params()).unwrap();
        assert_relative_eq!(next.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(next.y, 0.2);
        assert_eq!(next.theta, FRAC_PI_2);
        assert_eq!(next.v, 2.0);
    }

    #[test]
    fn euler_step_saturates() {
        let p = params();
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.49, 0.1);
        let next = euler_step(&z, &ControlInput::new(1.0, -10.0), 0.05, &p).unwrap();
        assert_eq!(next.delta, p.delta_max);
        assert_eq!(next.v, 0.0);
    }

    #[test]
    fn euler_step_rejects_non_finite() {
        let z = VehicleState::new(f64::NAN, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(
            euler_step(&z, &ControlInput::default(), 0.05, &params()),
            Err(Error::NonFinite("vehicle state"))
        );
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(euler_step(&z, &ControlInput::new(f64::INFINITY, 0.0), 0.05, &params()).is_err());
    }

    #[test]
    fn curvature_examples() {
        assert_eq!(curvature_from_steering(0.0, 2.9).unwrap(), 0.0);
        let l = 2.9_f64;
        assert_relative_eq!(
            curvature_from_steering((0.1 * l).atan(), l).unwrap(),
            0.1,
            epsilon = 1e-12
        );
        let k = curvature_from_steering(0.5, 2.9).unwrap();
        assert_relative_eq!(k, 0.5f64.sin() / 0.5f64.cos() / 2.9, epsilon = 1e-15);
        assert!((k - 0.18835).abs() < 5e-5, "{k}");
        assert!(curvature_from_steering(FRAC_PI_2, 2.9).is_err());
        assert!(curvature_from_steering(-2.0, 2.9).is_err());
    }

    /// Least-squares circle fit (Kasa) to points rolled out at constant steering.
    fn fit_circle_radius(points: &[(f64, f64)]) -> f64 {
        // Solve x^2 + y^2 + D x + E y + F = 0 via normal equations.
        let mut m = [[0.0; 3]; 3];
        let mut r = [0.0; 3];
        for &(x, y) in points {
            let row = [x, y, 1.0];
            let rhs = -(x * x + y * y);
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += row[i] * row[j];
                }
                r[i] += row[i] * rhs;
            }
        }
        // Cramer's rule.
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&m);
        let mut sol = [0.0; 3];
        for k in 0..3 {
            let mut mk = m;
            for i in 0..3 {
                mk[i][k] = r[i];
            }
            sol[k] = det(&mk) / d;
        }
        let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
        (cx * cx + cy * cy - sol[2]).sqrt()
    }

    fn rollout_radius(delta: f64, t_s: f64) -> f64 {
        let p = params();
        let mut z = VehicleState::new(0.0, 0.0, 0.0, delta, 3.0);
        let mut pts = vec![(z.x, z.y)];
        let steps = (4.0 / t_s).round() as usize;
        for _ in 0..steps {
            z = euler_step(&z, &ControlInput::default(), t_s, &p).unwrap();
            pts.push((z.x, z.y));
        }
        fit_circle_radius(&pts)
    }

    #[test]
    fn curvature_matches_rolled_out_circle() {
        let delta = 0.3;
        let expected = 1.0 / curvature_from_steering(delta, 2.9).unwrap();
        let coarse = (rollout_radius(delta, 0.02) - expected).abs();
        let fine = (rollout_radius(delta, 0.01) - expected).abs();
        assert!(fine < 0.02 * expected, "fine error {fine}");
        // Euler points on a constant curvature arc sit on a circle whose radius
        // is off by O(t_s^2), so halving the step quarters the error.
        let ratio = coarse / fine;
        assert!((3.2..4.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn generic_over_f32() {
        let p = VehicleParams::<f32>::passenger_car();
        let z = VehicleState::new(0.0f32, 0.0, 0.0, 0.0, 5.0);
        let next = euler_step(&z, &ControlInput::new(0.0, -2.5), 0.05, &p).unwrap();
        assert_eq!(next.x, 0.25);
        assert_eq!(next.v, 4.875);
    }

    proptest! {
        #[test]
        fn curvature_is_odd(delta in -1.5f64..1.5, l in 0.5f64..5.0) {
            let pos = curvature_from_steering(delta, l).unwrap();
            let neg = curvature_from_steering(-delta, l).unwrap();
            prop_assert_eq!(pos, -neg);
            prop_assert!(pos == 0.0 || pos.signum() == delta.signum());
        }

        #[test]
        fn euler_step_is_deterministic_and_saturated(
            x in -100.0f64..100.0, y in -100.0f64..100.0, th in -3.0f64..3.0,
            d in -0.5f64..0.5, v in 0.0f64..20.0, dr in -0.4f64..0.4, a in -5.0f64..3.0,
        ) {
            let p = params();
            let z = VehicleState::new(x, y, th, d, v);
            let u = ControlInput::new(dr, a);
            let first = euler_step(&z, &u, 0.05, &p).unwrap();
            let second = euler_step(&z, &u, 0.05, &p).unwrap();
            prop_assert_eq!(first.x.to_bits(), second.x.to_bits());
            prop_assert_eq!(first.theta.to_bits(), second.theta.to_bits());
            prop_assert!(first.delta.abs() <= p.delta_max);
            prop_assert!(first.v >= 0.0);
            prop_assert!(first.theta > -std::f64::consts::PI && first.theta <= std::f64::consts::PI);
        }
    }
}
