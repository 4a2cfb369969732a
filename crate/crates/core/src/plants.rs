//! Ground-truth simulators. The controller only ever sees their observations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("plant diverged: non-finite state {0:?}")]
    Diverged(Vec<f64>),
    #[error("control has dimension {got}, expected {expected}")]
    ControlDimension { expected: usize, got: usize },
    #[error("non-finite control input")]
    NonFiniteControl,
    #[error("output coordinate {0} is not settable")]
    Coordinate(usize),
}

/// A discrete-time system advanced one control action at a time.
pub trait Plant: Clone + Send + Sync {
    /// Noise-free observation vector.
    fn output(&self) -> Vec<f64>;

    fn control_dim(&self) -> usize;

    /// Advance the state by one step under control `u`.
    fn step(&mut self, u: &[f64]) -> Result<(), PlantError>;

    /// Steps before a control first shows up in the tracked output.
    fn output_delay(&self) -> usize {
        1
    }

    /// Overwrite the state behind observation coordinate `coord`.
    fn set_output_coordinate(&mut self, coord: usize, value: f64) -> Result<(), PlantError>;
}

fn scalar_control(u: &[f64]) -> Result<f64, PlantError> {
    match u {
        [v] if v.is_finite() => Ok(*v),
        [_] => Err(PlantError::NonFiniteControl),
        _ => Err(PlantError::ControlDimension {
            expected: 1,
            got: u.len(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `x ← r x (1 − x) + u`
    Additive,
    /// `x ← r x (1 − x) + cos(u)`
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticPlant {
    pub r_param: f64,
    pub state: f64,
    pub coupling: Coupling,
}

impl LogisticPlant {
    pub fn new(r_param: f64, state: f64, coupling: Coupling) -> Self {
        Self {
            r_param,
            state,
            coupling,
        }
    }

    /// Next state without advancing.
    pub fn transition(&self, u: f64) -> f64 {
        let map = self.r_param * self.state * (1.0 - self.state);
        match self.coupling {
            Coupling::Additive => map + u,
            Coupling::Cosine => map + u.cos(),
        }
    }

    pub fn logistic_step(&mut self, u: f64) -> Result<f64, PlantError> {
        if !u.is_finite() {
            return Err(PlantError::NonFiniteControl);
        }
        let next = self.transition(u);
        if !next.is_finite() {
            return Err(PlantError::Diverged(vec![next]));
        }
        self.state = next;
        Ok(next)
    }
}

impl Plant for LogisticPlant {
    fn output(&self) -> Vec<f64> {
        vec![self.state]
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn step(&mut self, u: &[f64]) -> Result<(), PlantError> {
        self.logistic_step(scalar_control(u)?).map(|_| ())
    }

    fn set_output_coordinate(&mut self, coord: usize, value: f64) -> Result<(), PlantError> {
        if coord != 0 {
            return Err(PlantError::Coordinate(coord));
        }
        self.state = value;
        Ok(())
    }
}

/// Physical constants of the cart with inverted pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    /// Sampling period `T` (s).
    pub sampling_period: f64,
    /// Friction coefficient `b`.
    pub friction: f64,
    /// Cart mass `M`.
    pub cart_mass: f64,
    /// Pendulum length `L`.
    pub pendulum_length: f64,
    pub gravity: f64,
    /// Pendulum mass `m`.
    pub pendulum_mass: f64,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            sampling_period: 0.05,
            friction: 12.98,
            cart_mass: 1.378,
            pendulum_length: 0.325,
            gravity: 9.8,
            pendulum_mass: 0.051,
        }
    }
}

/// Cart position `x1`, velocity `x2`, pendulum angle `x3` (0 = upright), angular velocity `x4`.
///
/// Observations are `[x1, x2]`; the velocity entry feeds the controllers that
/// model the velocity update.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPlant {
    pub state: [f64; 4],
    pub params: CartParams,
}

impl CartPlant {
    pub fn new(state: [f64; 4], params: CartParams) -> Self {
        Self { state, params }
    }

    /// One Euler step; every right-hand side reads the current state.
    pub fn transition(&self, u: f64) -> [f64; 4] {
        let CartParams {
            sampling_period: t,
            friction: b,
            cart_mass: big_m,
            pendulum_length: l,
            gravity: g,
            pendulum_mass: m,
        } = self.params;
        let [x1, x2, x3, x4] = self.state;
        let (s, c) = x3.sin_cos();
        let denom = big_m + m * s * s;
        let v_dot = u + m * l * x4 * x4 * s - b * x2 - m * g * c * s;
        let w_dot = -u * c + (big_m + m) * g * s + b * x2 * c - m * l * x4 * x4 * c * s;
        [
            x1 + t * x2,
            x2 + t / denom * v_dot,
            x3 + t * x4,
            x4 + t / (l * denom) * w_dot,
        ]
    }

    pub fn cart_step(&mut self, u: f64) -> Result<[f64; 4], PlantError> {
        if !u.is_finite() {
            return Err(PlantError::NonFiniteControl);
        }
        let next = self.transition(u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::Diverged(next.to_vec()));
        }
        self.state = next;
        Ok(next)
    }
}

impl Plant for CartPlant {
    fn output(&self) -> Vec<f64> {
        vec![self.state[0], self.state[1]]
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn step(&mut self, u: &[f64]) -> Result<(), PlantError> {
        self.cart_step(scalar_control(u)?).map(|_| ())
    }

    fn output_delay(&self) -> usize {
        2
    }

    fn set_output_coordinate(&mut self, coord: usize, value: f64) -> Result<(), PlantError> {
        match coord {
            0 | 1 => {
                self.state[coord] = value;
                Ok(())
            }
            _ => Err(PlantError::Coordinate(coord)),
        }
    }
}

/// How the velocity entry of a `[position, velocity]` observation is produced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySource {
    /// Noisy reading of the true velocity state.
    #[default]
    State,
    /// Difference of consecutive noisy positions divided by the sampling period.
    FiniteDifference,
}

/// Additive zero-mean Gaussian noise with variance `σ` on every observed coordinate.
#[derive(Debug, Clone)]
pub struct ObservationChannel {
    noise_variance: f64,
    rng: ChaCha8Rng,
    velocity: Option<(VelocitySource, f64)>,
    last_position: Option<f64>,
}

impl ObservationChannel {
    pub fn new(noise_variance: f64, seed: u64) -> Self {
        Self {
            noise_variance: noise_variance.max(0.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
            velocity: None,
            last_position: None,
        }
    }

    /// Treat observations as `[position, velocity]` pairs with the given velocity source.
    pub fn with_velocity(mut self, source: VelocitySource, sampling_period: f64) -> Self {
        self.velocity = Some((source, sampling_period));
        self
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    fn draw(&mut self) -> f64 {
        if self.noise_variance == 0.0 {
            return 0.0;
        }
        // std of a positive finite variance is always a valid Normal parameter
        Normal::new(0.0, self.noise_variance.sqrt())
            .expect("valid normal")
            .sample(&mut self.rng)
    }

    /// Noisy copy of `output`.
    pub fn corrupt(&mut self, output: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = output.iter().map(|v| v + self.draw()).collect();
        if let Some((VelocitySource::FiniteDifference, period)) = self.velocity {
            if y.len() >= 2 {
                y[1] = match self.last_position {
                    Some(prev) => (y[0] - prev) / period,
                    None => 0.0,
                };
                self.last_position = Some(y[0]);
            }
        }
        y
    }

    /// Noisy observation of `plant`; the plant is not advanced.
    pub fn observe<P: Plant>(&mut self, plant: &P) -> Vec<f64> {
        self.corrupt(&plant.output())
    }
}
