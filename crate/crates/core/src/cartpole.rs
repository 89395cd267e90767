//! Single-pole cart physics.
//!
//! Classic cart-pole dynamics with a frictionless track, integrated with one
//! semi-implicit Euler step per action. Angles are stored in degrees and
//! converted to radians only inside [`step`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub timestep: f64,
    pub track_half_length: f64,
    /// Degrees.
    pub fail_angle: f64,
    pub step_cap: u32,
    /// Half-width of the uniform reset range for position and velocity.
    pub reset_linear: f64,
    /// Half-width (degrees, degrees/s) of the uniform reset range for angle
    /// and angular velocity.
    pub reset_angular: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            timestep: 0.02,
            track_half_length: 20.0,
            fail_angle: 60.0,
            step_cap: 10_000,
            reset_linear: 0.05,
            reset_angular: 1.0,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("force_magnitude", self.force_magnitude),
            ("timestep", self.timestep),
            ("track_half_length", self.track_half_length),
            ("fail_angle", self.fail_angle),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.fail_angle >= 90.0 {
            return Err(Error::Config(format!(
                "fail_angle must be below 90 degrees, got {}",
                self.fail_angle
            )));
        }
        if self.timestep > 0.05 {
            return Err(Error::Config(format!(
                "timestep must be at most 0.05 s, got {}",
                self.timestep
            )));
        }
        if self.step_cap == 0 {
            return Err(Error::Config("step_cap must be positive".into()));
        }
        for (name, v) in [
            ("reset_linear", self.reset_linear),
            ("reset_angular", self.reset_angular),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    PushLeft,
    PushRight,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::PushLeft, Action::PushRight];

    pub fn index(self) -> usize {
        match self {
            Action::PushLeft => 0,
            Action::PushRight => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn mirrored(self) -> Action {
        match self {
            Action::PushLeft => Action::PushRight,
            Action::PushRight => Action::PushLeft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub v: f64,
    /// Most recent cart acceleration.
    pub a: f64,
    /// Pole angle, degrees.
    pub theta: f64,
    /// Degrees per second.
    pub omega: f64,
    /// Most recent angular acceleration, degrees per second squared.
    pub alpha: f64,
    pub terminal: bool,
}

impl CartPoleState {
    pub fn mirrored(&self) -> Self {
        Self {
            x: -self.x,
            v: -self.v,
            a: -self.a,
            theta: -self.theta,
            omega: -self.omega,
            alpha: -self.alpha,
            terminal: self.terminal,
        }
    }

    fn out_of_bounds(&self, params: &PhysicsParams) -> bool {
        self.x.abs() > params.track_half_length || self.theta.abs() > params.fail_angle
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: CartPoleState,
    pub reward: f64,
    pub terminal: bool,
}

pub fn reset<R: Rng + ?Sized>(params: &PhysicsParams, rng: &mut R) -> CartPoleState {
    let mut draw = |half: f64| {
        if half > 0.0 {
            rng.gen_range(-half..=half)
        } else {
            0.0
        }
    };
    CartPoleState {
        x: draw(params.reset_linear),
        v: draw(params.reset_linear),
        theta: draw(params.reset_angular),
        omega: draw(params.reset_angular),
        ..CartPoleState::default()
    }
}

/// Applies a push of `±force_magnitude`.
pub fn step(state: &CartPoleState, action: Action, params: &PhysicsParams) -> Result<StepOutcome> {
    let force = match action {
        Action::PushLeft => -params.force_magnitude,
        Action::PushRight => params.force_magnitude,
    };
    step_with_force(state, force, params)
}

pub fn step_with_force(
    state: &CartPoleState,
    force: f64,
    params: &PhysicsParams,
) -> Result<StepOutcome> {
    if state.terminal || state.out_of_bounds(params) {
        return Err(Error::Usage("step called on a terminal state".into()));
    }
    let total_mass = params.cart_mass + params.pole_mass;
    let pole_moment = params.pole_mass * params.pole_half_length;
    let theta = state.theta.to_radians();
    let omega = state.omega.to_radians();
    let (sin, cos) = theta.sin_cos();

    let temp = (force + pole_moment * omega * omega * sin) / total_mass;
    let theta_acc = (params.gravity * sin - cos * temp)
        / (params.pole_half_length * (4.0 / 3.0 - params.pole_mass * cos * cos / total_mass));
    let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

    let tau = params.timestep;
    let v = state.v + tau * x_acc;
    let x = state.x + tau * v;
    let omega = omega + tau * theta_acc;
    let theta = theta + tau * omega;

    let mut next = CartPoleState {
        x,
        v,
        a: x_acc,
        theta: theta.to_degrees(),
        omega: omega.to_degrees(),
        alpha: theta_acc.to_degrees(),
        terminal: false,
    };
    let terminal = next.out_of_bounds(params);
    next.terminal = terminal;
    Ok(StepOutcome {
        next,
        reward: if terminal { -1.0 } else { 0.0 },
        terminal,
    })
}

/// Which parts of the state the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observability {
    /// Position, velocity, acceleration, angle, angular velocity, angular acceleration.
    Mdp,
    /// Position and angle only.
    Pomdp,
}

impl Observability {
    pub fn num_components(self) -> usize {
        match self {
            Observability::Mdp => 6,
            Observability::Pomdp => 2,
        }
    }

    /// Which observation components are angular.
    pub fn angular_mask(self) -> &'static [bool] {
        match self {
            Observability::Mdp => &[false, false, false, true, true, true],
            Observability::Pomdp => &[false, true],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Observability::Mdp => "mdp",
            Observability::Pomdp => "pomdp",
        }
    }
}

/// Raw observation vector, one entry per observed component.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn clamp_all(values: &[f64], ranges: &[(f64, f64)]) -> Observation {
    Observation(
        values
            .iter()
            .zip(ranges)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect(),
    )
}

/// `(x, v, a, theta, omega, alpha)` clamped to `ranges`.
pub fn observe_full(state: &CartPoleState, ranges: &[(f64, f64)]) -> Observation {
    clamp_all(
        &[
            state.x,
            state.v,
            state.a,
            state.theta,
            state.omega,
            state.alpha,
        ],
        ranges,
    )
}

/// `(x, theta)` clamped to `ranges`.
pub fn observe_partial(state: &CartPoleState, ranges: &[(f64, f64)]) -> Observation {
    clamp_all(&[state.x, state.theta], ranges)
}

pub fn observe(
    state: &CartPoleState,
    observability: Observability,
    ranges: &[(f64, f64)],
) -> Observation {
    match observability {
        Observability::Mdp => observe_full(state, ranges),
        Observability::Pomdp => observe_partial(state, ranges),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const MDP_RANGES: [(f64, f64); 6] = [
        (-20.0, 20.0),
        (-20.0, 20.0),
        (-20.0, 20.0),
        (-60.0, 60.0),
        (-60.0, 60.0),
        (-60.0, 60.0),
    ];

    #[test]
    fn zero_width_reset_is_equilibrium() {
        let params = PhysicsParams {
            reset_linear: 0.0,
            reset_angular: 0.0,
            ..Default::default()
        };
        let s = reset(&params, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s, CartPoleState::default());
    }

    #[test]
    fn reset_is_deterministic_and_in_range() {
        let params = PhysicsParams::default();
        let a = reset(&params, &mut ChaCha8Rng::seed_from_u64(7));
        let b = reset(&params, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert!(a.x.abs() <= 0.05 && a.v.abs() <= 0.05);
        assert!(a.theta.abs() <= 1.0 && a.omega.abs() <= 1.0);
        assert_eq!((a.a, a.alpha), (0.0, 0.0));
    }

    #[test]
    fn terminal_state_is_rejected() {
        let params = PhysicsParams::default();
        let past = CartPoleState {
            theta: 61.0,
            ..Default::default()
        };
        assert!(matches!(
            step(&past, Action::PushLeft, &params),
            Err(Error::Usage(_))
        ));
        let flagged = CartPoleState {
            terminal: true,
            ..Default::default()
        };
        assert!(step(&flagged, Action::PushLeft, &params).is_err());
    }

    #[test]
    fn crossing_fail_angle_is_terminal() {
        let params = PhysicsParams::default();
        let s = CartPoleState {
            theta: 59.9,
            omega: 200.0,
            ..Default::default()
        };
        let out = step(&s, Action::PushLeft, &params).unwrap();
        assert!(out.terminal);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn zero_force_equilibrium_is_fixed_point() {
        let params = PhysicsParams::default();
        let s = CartPoleState::default();
        let out = step_with_force(&s, 0.0, &params).unwrap();
        assert_eq!(out.next, s);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn observations_clamp() {
        let s = CartPoleState {
            x: 25.0,
            theta: -10.0,
            omega: -300.0,
            ..Default::default()
        };
        let full = observe_full(&s, &MDP_RANGES);
        assert_eq!(full.0, vec![20.0, 0.0, 0.0, -10.0, -60.0, 0.0]);
        let part = observe_partial(&s, &[(-20.0, 20.0), (-60.0, 60.0)]);
        assert_eq!(part.0, vec![20.0, -10.0]);
        let generic = CartPoleState {
            x: 3.2,
            theta: -10.0,
            ..Default::default()
        };
        assert_eq!(
            observe_partial(&generic, &[(-20.0, 20.0), (-60.0, 60.0)]).0,
            vec![3.2, -10.0]
        );
        assert_eq!(
            observe_full(&CartPoleState::default(), &MDP_RANGES).0,
            vec![0.0; 6]
        );
    }
}
