//! Worst-case minimum safety distance, time-to-contact, and the per-step
//! polytopic constraint block consumed by the MPC.
//!
//! The emergency scenario: the lead brakes at full capacity `a_l^b` now, the
//! ego reacts after the total delay `phi` and brakes at `a_e^b`; both hold
//! their braking until standstill. The minimum safety distance is the largest
//! gap closure over that manoeuvre.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kinematics::{PlatoonSystem, RelativeState};

/// Number of rows in a [`ConstraintBlock`].
pub const BLOCK_ROWS: usize = 14;
/// Number of rows of the piecewise-linear safety bound.
pub const SAFETY_ROWS: usize = 8;
/// Columns of the block's state part: `d, v_l, v_e, slack`.
pub const BLOCK_COLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrakingSpec {
    /// Ego maximum braking, positive.
    pub ego_braking: f64,
    /// Lead maximum braking, positive.
    pub lead_braking: f64,
    /// Worst-case total delay (communication, processing, actuation).
    pub delay: f64,
}

impl BrakingSpec {
    pub fn new(ego_braking: f64, lead_braking: f64, delay: f64) -> Result<Self> {
        let spec = Self {
            ego_braking,
            lead_braking,
            delay,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ego_braking > 0.0 && self.ego_braking.is_finite()) {
            return Err(invalid(format!("ego braking must be positive, got {}", self.ego_braking)));
        }
        if !(self.lead_braking > 0.0 && self.lead_braking.is_finite()) {
            return Err(invalid(format!("lead braking must be positive, got {}", self.lead_braking)));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(invalid(format!("delay must be non-negative, got {}", self.delay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortSpec {
    pub min_time_to_contact: f64,
    pub min_acceleration: f64,
    pub max_acceleration: f64,
    pub max_speed: f64,
}

impl ComfortSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_time_to_contact >= 0.0) {
            return Err(invalid("minimum time-to-contact must be non-negative"));
        }
        if !(self.min_acceleration < self.max_acceleration) {
            return Err(invalid("comfort band requires min acceleration < max acceleration"));
        }
        if !(self.max_speed > 0.0 && self.max_speed.is_finite()) {
            return Err(invalid("speed limit must be positive"));
        }
        Ok(())
    }
}

fn check_speeds(v_e: f64, v_l: f64) -> Result<()> {
    if !(v_e >= 0.0 && v_e.is_finite()) || !(v_l >= 0.0 && v_l.is_finite()) {
        return Err(invalid(format!("speeds must be finite and non-negative, got v_e={v_e}, v_l={v_l}")));
    }
    Ok(())
}

/// Closed-form minimum safety distance.
///
/// The gap closure `J(eps)` is piecewise quadratic, so its maximum is either
/// the interior stationary point (only possible when the ego brakes harder
/// than the lead), the total closure at standstill, or zero.
pub fn min_safe_distance(v_e: f64, v_l: f64, spec: &BrakingSpec) -> Result<f64> {
    check_speeds(v_e, v_l)?;
    spec.validate()?;
    Ok(min_safe_distance_unchecked(v_e, v_l, spec))
}

pub(crate) fn min_safe_distance_unchecked(v_e: f64, v_l: f64, spec: &BrakingSpec) -> f64 {
    let (a_e, a_l, phi) = (spec.ego_braking, spec.lead_braking, spec.delay);
    if a_e > a_l {
        let closing = v_e - v_l + a_e * phi;
        let da = a_e - a_l;
        let eps = closing / da;
        let t_min = (phi + v_e / a_e).min(v_l / a_l);
        if eps >= phi && eps < t_min {
            let local = closing * eps - 0.5 * da * eps * eps - 0.5 * a_e * phi * phi;
            return local.max(0.0);
        }
    }
    let upper = v_e * phi + v_e * v_e / (2.0 * a_e) - v_l * v_l / (2.0 * a_l);
    upper.max(0.0)
}

/// Minimum safety distance by direct time integration of the emergency
/// braking profiles.
///
/// Speeds are piecewise linear, so trapezoidal accumulation with the profile
/// breakpoints inserted is exact between samples; only the location of the
/// running maximum is quantized to `dt`.
pub fn min_safe_distance_oracle(v_e: f64, v_l: f64, spec: &BrakingSpec, dt: f64) -> Result<f64> {
    check_speeds(v_e, v_l)?;
    spec.validate()?;
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(invalid(format!("oracle step must lie in (0, 1e-3], got {dt}")));
    }
    let (a_e, a_l, phi) = (spec.ego_braking, spec.lead_braking, spec.delay);
    let ego_speed = |t: f64| {
        if t < phi {
            v_e
        } else {
            (v_e - a_e * (t - phi)).max(0.0)
        }
    };
    let lead_speed = |t: f64| (v_l - a_l * t).max(0.0);
    let closing = |t: f64| ego_speed(t) - lead_speed(t);

    let ego_stop = phi + v_e / a_e;
    let lead_stop = v_l / a_l;
    let end = ego_stop.max(lead_stop);
    let mut breakpoints = [phi, ego_stop, lead_stop];
    breakpoints.sort_by(f64::total_cmp);

    let mut t = 0.0_f64;
    let mut gap_closure = 0.0_f64;
    let mut best = 0.0_f64;
    let mut step = 0_u64;
    while t < end {
        step += 1;
        let mut next = (step as f64 * dt).min(end);
        if let Some(&b) = breakpoints.iter().find(|&&b| b > t && b < next) {
            next = b;
            step -= 1;
        }
        gap_closure += 0.5 * (closing(t) + closing(next)) * (next - t);
        best = best.max(gap_closure);
        t = next;
    }
    Ok(best)
}

/// Delay that yields a clearance `d` when both vehicles cruise at `v` with
/// identical braking capacity (inverse of `d = v * phi`).
pub fn required_delay_for_clearance(d: f64, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(format!("speed must be positive, got {v}")));
    }
    if !(d >= 0.0 && d.is_finite()) {
        return Err(invalid(format!("clearance must be non-negative, got {d}")));
    }
    Ok(d / v)
}

/// `d_safe` at equal cruising speed `v` as a function of lead braking
/// capacity. The curve is non-decreasing in `a_l^b`.
pub fn min_distance_curve(v: f64, ego_braking: f64, lead_braking: &[f64], delay: f64) -> Result<Vec<(f64, f64)>> {
    lead_braking
        .iter()
        .map(|&a_l| {
            let spec = BrakingSpec::new(ego_braking, a_l, delay)?;
            Ok((a_l, min_safe_distance(v, v, &spec)?))
        })
        .collect()
}

/// Time until contact at constant speeds; `f64::INFINITY` when the gap is
/// not closing.
pub fn time_to_contact(d: f64, v_e: f64, v_l: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(invalid(format!("distance must be non-negative, got {d}")));
    }
    if v_e > v_l {
        Ok((d / (v_e - v_l)).max(0.0))
    } else {
        Ok(f64::INFINITY)
    }
}

/// Piecewise-linear outer approximation of `d >= d_safe(v_e, v_l(t))`.
///
/// Each row reads `-d + f[i] + g[i] * v_e <= 0`. Row 0 is `-d <= 0`; rows
/// 1..=7 are chords of the convex bound between consecutive knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyLinearization {
    pub f: [f64; SAFETY_ROWS],
    pub g: [f64; SAFETY_ROWS],
    /// Largest ego speed at which the bound is zero.
    pub v_min: f64,
    /// Predicted lead speed the rows were built for.
    pub lead_speed: f64,
    /// Chord endpoints, empty when the nonlinear region collapsed.
    pub knots: Vec<f64>,
}

impl SafetyLinearization {
    /// Tightest distance implied by the rows at ego speed `v_e`.
    pub fn bound(&self, v_e: f64) -> f64 {
        self.f
            .iter()
            .zip(&self.g)
            .map(|(f, g)| f + g * v_e)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Largest `v_e` in `[0, v_cap]` with `d_safe(v_e, v_l) = 0`, by bisection on
/// the monotone closed form. Returns `v_cap` when the bound is zero throughout.
fn zero_bound_speed(v_l: f64, spec: &BrakingSpec, v_cap: f64) -> f64 {
    if min_safe_distance_unchecked(v_cap, v_l, spec) <= 0.0 {
        return v_cap;
    }
    let (mut lo, mut hi) = (0.0_f64, v_cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if min_safe_distance_unchecked(mid, v_l, spec) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn linearize_safety(
    lead_speed: f64,
    lead_acceleration: f64,
    t: f64,
    spec: &BrakingSpec,
    v_max: f64,
) -> Result<SafetyLinearization> {
    spec.validate()?;
    if !(v_max > 0.0 && v_max.is_finite()) {
        return Err(invalid(format!("speed limit must be positive, got {v_max}")));
    }
    if !lead_speed.is_finite() || !lead_acceleration.is_finite() || !t.is_finite() {
        return Err(invalid("lead prediction inputs must be finite"));
    }
    let v_l = (lead_speed + t * lead_acceleration).max(0.0);
    let v_min = zero_bound_speed(v_l, spec, v_max);

    let mut f = [0.0; SAFETY_ROWS];
    let mut g = [0.0; SAFETY_ROWS];
    if v_max <= v_min {
        return Ok(SafetyLinearization {
            f,
            g,
            v_min,
            lead_speed: v_l,
            knots: Vec::new(),
        });
    }
    let pieces = (SAFETY_ROWS - 1) as f64;
    let knots: Vec<f64> = (0..SAFETY_ROWS)
        .map(|i| {
            if i == SAFETY_ROWS - 1 {
                v_max
            } else {
                v_min + i as f64 * (v_max - v_min) / pieces
            }
        })
        .collect();
    let values: Vec<f64> = knots.iter().map(|&p| min_safe_distance_unchecked(p, v_l, spec)).collect();
    for i in 1..SAFETY_ROWS {
        let slope = (values[i] - values[i - 1]) / (knots[i] - knots[i - 1]);
        g[i] = slope;
        f[i] = values[i - 1] - slope * knots[i - 1];
    }
    Ok(SafetyLinearization {
        f,
        g,
        v_min,
        lead_speed: v_l,
        knots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowLabel {
    EgoSpeedLower,
    EgoSpeedUpper,
    TimeToContact,
    BrakeCapacity,
    ComfortLower,
    ComfortUpper,
    Safety(u8),
}

impl RowLabel {
    pub const ALL: [RowLabel; BLOCK_ROWS] = [
        RowLabel::EgoSpeedLower,
        RowLabel::EgoSpeedUpper,
        RowLabel::TimeToContact,
        RowLabel::BrakeCapacity,
        RowLabel::ComfortLower,
        RowLabel::ComfortUpper,
        RowLabel::Safety(0),
        RowLabel::Safety(1),
        RowLabel::Safety(2),
        RowLabel::Safety(3),
        RowLabel::Safety(4),
        RowLabel::Safety(5),
        RowLabel::Safety(6),
        RowLabel::Safety(7),
    ];

    pub fn name(&self) -> String {
        match self {
            RowLabel::EgoSpeedLower => "v_e_lower".into(),
            RowLabel::EgoSpeedUpper => "v_e_upper".into(),
            RowLabel::TimeToContact => "ttc".into(),
            RowLabel::BrakeCapacity => "brake_capacity".into(),
            RowLabel::ComfortLower => "comfort_lower".into(),
            RowLabel::ComfortUpper => "comfort_upper".into(),
            RowLabel::Safety(i) => format!("safety_{i}"),
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self, RowLabel::ComfortLower | RowLabel::ComfortUpper)
    }
}

/// Polytopic constraint `A [x; s] + B u + c <= 0` for one prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    /// Columns: `d, v_l, v_e, slack`.
    pub a: SMatrix<f64, BLOCK_ROWS, BLOCK_COLS>,
    pub b: SVector<f64, BLOCK_ROWS>,
    pub c: SVector<f64, BLOCK_ROWS>,
    pub labels: [RowLabel; BLOCK_ROWS],
    /// Prediction step the block was built for.
    pub step: usize,
}

impl ConstraintBlock {
    /// Row-wise `A [x; s] + B u + c`; non-positive entries are satisfied.
    pub fn residual(&self, x: &RelativeState, u: f64, slack: f64) -> SVector<f64, BLOCK_ROWS> {
        let z = SVector::<f64, BLOCK_COLS>::new(x.distance, x.lead_velocity, x.ego_velocity, slack);
        self.a * z + self.b * u + self.c
    }

    pub fn row_of(&self, label: RowLabel) -> usize {
        self.labels.iter().position(|&l| l == label).expect("every label is present")
    }
}

/// Assemble the constraint block for prediction step `step`.
///
/// `current` supplies the measured lead speed and `sys` the lead acceleration
/// held over the horizon; the safety rows are linearized at `t = step * T_s`.
pub fn constraint_block(
    current: &RelativeState,
    step: usize,
    spec: &BrakingSpec,
    comfort: &ComfortSpec,
    sys: &PlatoonSystem,
) -> Result<ConstraintBlock> {
    comfort.validate()?;
    let t = step as f64 * sys.sample_time;
    let lin = linearize_safety(current.lead_velocity, sys.lead_acceleration, t, spec, comfort.max_speed)?;
    let tc = comfort.min_time_to_contact;

    let mut a = SMatrix::<f64, BLOCK_ROWS, BLOCK_COLS>::zeros();
    let mut b = SVector::<f64, BLOCK_ROWS>::zeros();
    let mut c = SVector::<f64, BLOCK_ROWS>::zeros();

    // 0 <= v_e
    a[(0, 2)] = -1.0;
    // v_e <= v_max
    a[(1, 2)] = 1.0;
    c[1] = -comfort.max_speed;
    // -d + t_c (v_e - v_l) <= 0
    a[(2, 0)] = -1.0;
    a[(2, 1)] = -tc;
    a[(2, 2)] = tc;
    // u >= -a_e^b
    b[3] = -1.0;
    c[3] = -spec.ego_braking;
    // a_min <= u + s
    a[(4, 3)] = -1.0;
    b[4] = -1.0;
    c[4] = comfort.min_acceleration;
    // u + s <= a_max
    a[(5, 3)] = 1.0;
    b[5] = 1.0;
    c[5] = -comfort.max_acceleration;
    for i in 0..SAFETY_ROWS {
        let r = 6 + i;
        a[(r, 0)] = -1.0;
        a[(r, 2)] = lin.g[i];
        c[r] = lin.f[i];
    }

    Ok(ConstraintBlock {
        a,
        b,
        c,
        labels: RowLabel::ALL,
        step,
    })
}
