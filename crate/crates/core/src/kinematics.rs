//! Longitudinal point-mass kinematics of a lead/ego vehicle pair and the exact
//! zero-order-hold discretization of their relative dynamics.
//!
//! The controller state is `x = [d, v_l, v_e]` where `d = p_l - p_e` is the gap.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Absolute state of a single vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl VehicleState {
    pub fn new(position: f64, velocity: f64, acceleration: f64) -> Self {
        Self {
            position,
            velocity,
            acceleration,
        }
    }

    /// Advance by `dt` holding `acceleration` constant.
    ///
    /// A vehicle that is decelerating stops at zero speed instead of
    /// reversing. Returns `true` when the stop clamp was engaged.
    pub fn advance(&mut self, dt: f64) -> bool {
        let a = self.acceleration;
        let v = self.velocity;
        let v_next = v + a * dt;
        if a < 0.0 && v_next < 0.0 {
            // stops inside the interval
            let t_stop = if v > 0.0 { v / -a } else { 0.0 };
            self.position += v * t_stop + 0.5 * a * t_stop * t_stop;
            self.velocity = 0.0;
            true
        } else {
            self.position += v * dt + 0.5 * a * dt * dt;
            self.velocity = v_next;
            false
        }
    }
}

/// Relative state `x = [d, v_l, v_e]` used by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelativeState {
    pub distance: f64,
    pub lead_velocity: f64,
    pub ego_velocity: f64,
}

impl RelativeState {
    pub fn new(distance: f64, lead_velocity: f64, ego_velocity: f64) -> Self {
        Self {
            distance,
            lead_velocity,
            ego_velocity,
        }
    }

    pub fn from_vehicles(lead: &VehicleState, ego: &VehicleState) -> Self {
        Self::new(lead.position - ego.position, lead.velocity, ego.velocity)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.distance, self.lead_velocity, self.ego_velocity)
    }

    pub fn from_vector(x: &Vector3<f64>) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    pub fn is_finite(&self) -> bool {
        self.distance.is_finite() && self.lead_velocity.is_finite() && self.ego_velocity.is_finite()
    }
}

/// Discrete affine model `x+ = F x + G u + h + W w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonSystem {
    pub f: Matrix3<f64>,
    pub g: Vector3<f64>,
    pub h: Vector3<f64>,
    pub w: Vector3<f64>,
    pub sample_time: f64,
    pub lead_acceleration: f64,
}

/// Outcome of a single model step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: RelativeState,
    /// A velocity would have gone negative and was floored at zero.
    pub clamped: bool,
}

pub fn build_system(sample_time: f64, lead_acceleration: f64, w: Vector3<f64>) -> Result<PlatoonSystem> {
    if !(sample_time > 0.0) || !sample_time.is_finite() {
        return Err(invalid(format!("sample time must be positive, got {sample_time}")));
    }
    let ts = sample_time;
    #[rustfmt::skip]
    let f = Matrix3::new(
        1.0, ts, -ts,
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
    );
    let g = Vector3::new(-0.5 * ts * ts, 0.0, ts);
    Ok(PlatoonSystem {
        f,
        g,
        h: affine_term(ts, lead_acceleration),
        w,
        sample_time: ts,
        lead_acceleration,
    })
}

fn affine_term(ts: f64, lead_acceleration: f64) -> Vector3<f64> {
    Vector3::new(0.0, ts * lead_acceleration, 0.0)
}

impl PlatoonSystem {
    /// Same model with a refreshed lead acceleration.
    pub fn with_lead_acceleration(&self, lead_acceleration: f64) -> Self {
        Self {
            h: affine_term(self.sample_time, lead_acceleration),
            lead_acceleration,
            ..self.clone()
        }
    }

    /// Unconstrained linear prediction `F x + G u + h + W w`.
    pub fn predict(&self, x: &Vector3<f64>, u: f64, w: f64) -> Vector3<f64> {
        self.f * x + self.g * u + self.h + self.w * w
    }

    /// One step of the model with velocities floored at zero.
    pub fn step(&self, x: &RelativeState, u: f64, w: f64) -> Result<StepOutcome> {
        if !(w.abs() <= 1.0) {
            return Err(invalid(format!("disturbance must satisfy |w| <= 1, got {w}")));
        }
        let next = self.predict(&x.to_vector(), u, w);
        let mut state = RelativeState::from_vector(&next);
        let mut clamped = false;
        if state.lead_velocity < 0.0 {
            state.lead_velocity = 0.0;
            clamped = true;
        }
        if state.ego_velocity < 0.0 {
            state.ego_velocity = 0.0;
            clamped = true;
        }
        Ok(StepOutcome { state, clamped })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(ts: f64, a_l: f64) -> PlatoonSystem {
        build_system(ts, a_l, Vector3::new(0.0, 1.2, 0.0)).unwrap()
    }

    #[test]
    fn matrices_at_20hz() {
        let s = sys(0.05, 0.0);
        assert_eq!(s.f.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.05, -0.05]);
        assert!((s.g - Vector3::new(-0.00125, 0.0, 0.05)).norm() < 1e-15);
        assert_eq!(s.h, Vector3::zeros());
    }

    #[test]
    fn affine_term_substitution() {
        assert_eq!(sys(1.0, 2.0).h, Vector3::new(0.0, 2.0, 0.0));
        assert_eq!(sys(0.05, -10.0).h, Vector3::new(0.0, -0.5, 0.0));
    }

    #[test]
    fn rejects_non_positive_sample_time() {
        assert!(build_system(0.0, 0.0, Vector3::zeros()).is_err());
        assert!(build_system(-0.1, 0.0, Vector3::zeros()).is_err());
        assert!(build_system(f64::NAN, 0.0, Vector3::zeros()).is_err());
    }

    #[test]
    fn step_examples() {
        let s = sys(0.05, 0.0);
        let eq = RelativeState::new(15.0, 15.0, 15.0);
        assert_eq!(s.step(&eq, 0.0, 0.0).unwrap().state, eq);

        let closing = s.step(&RelativeState::new(15.0, 15.0, 16.0), 0.0, 0.0).unwrap();
        assert!((closing.state.distance - 14.95).abs() < 1e-12);

        let disturbed = s.step(&eq, 0.0, 1.0).unwrap();
        assert!((disturbed.state.lead_velocity - 16.2).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_large_disturbance() {
        let s = sys(0.05, 0.0);
        assert!(s.step(&RelativeState::default(), 0.0, 1.5).is_err());
        assert!(s.step(&RelativeState::default(), 0.0, f64::NAN).is_err());
    }

    #[test]
    fn step_clamps_negative_speed() {
        let s = sys(0.05, 0.0);
        let out = s.step(&RelativeState::new(5.0, 0.0, 0.1), -10.0, 0.0).unwrap();
        assert!(out.clamped);
        assert_eq!(out.state.ego_velocity, 0.0);
    }

    #[test]
    fn vehicle_stops_inside_interval() {
        let mut v = VehicleState::new(0.0, 1.0, -10.0);
        assert!(v.advance(0.5));
        assert_eq!(v.velocity, 0.0);
        assert!((v.position - 0.05).abs() < 1e-15);
    }
}
