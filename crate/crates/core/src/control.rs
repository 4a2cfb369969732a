//! The dual-control loop: GP identification plus a one-step weighted
//! tracking/exploration objective over a finite action grid.
//!
//! At every step the planner evaluates
//!
//! `J(u) = w1 ‖ŷ(t+1) − r(t)‖ − w2 Σ_j v_j(y(t), u)`
//!
//! for each `u ∈ Φ`, applies the minimizer, observes the plant and appends the
//! resulting transition to the training set of every per-output GP.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{GpError, GpModel, KernelConfig};
use crate::plants::{ObservationChannel, Plant, PlantError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("action set is empty")]
    EmptyActions,
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("observation is non-finite: {0:?}")]
    NonFiniteObservation(Vec<f64>),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Failure of a closed-loop run, tagged with the step at which it happened.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("episode aborted at step {step}: {source}")]
pub struct EpisodeError {
    pub step: usize,
    #[source]
    pub source: ControlError,
}

impl EpisodeError {
    /// True when the plant or its observations blew up.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self.source,
            ControlError::Plant(PlantError::Diverged(_)) | ControlError::NonFiniteObservation(_)
        )
    }
}

/// Finite grid `Φ` of admissible controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    actions: Vec<Vec<f64>>,
}

impl ActionSet {
    pub fn new(actions: Vec<Vec<f64>>) -> Result<Self, ControlError> {
        let first = actions.first().ok_or(ControlError::EmptyActions)?;
        let e = first.len();
        for a in &actions {
            if a.len() != e {
                return Err(ControlError::Dimension {
                    what: "action",
                    expected: e,
                    got: a.len(),
                });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(ControlError::NonFinite("action"));
            }
        }
        Ok(Self { actions })
    }

    /// Scalar grid `min, min + step, …` up to the last value not above `max`.
    pub fn grid(min: f64, max: f64, step: f64) -> Result<Self, ControlError> {
        Self::new(
            grid_axis(min, max, step)?
                .into_iter()
                .map(|v| vec![v])
                .collect(),
        )
    }

    /// Cartesian product of per-dimension grids, first dimension varying slowest.
    pub fn product(axes: &[(f64, f64, f64)]) -> Result<Self, ControlError> {
        let mut actions: Vec<Vec<f64>> = vec![Vec::new()];
        for &(min, max, step) in axes {
            let ticks = grid_axis(min, max, step)?;
            actions = actions
                .into_iter()
                .flat_map(|p| {
                    ticks.iter().map(move |&t| {
                        let mut q = p.clone();
                        q.push(t);
                        q
                    })
                })
                .collect();
        }
        Self::new(actions)
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn control_dim(&self) -> usize {
        self.actions[0].len()
    }
}

fn grid_axis(min: f64, max: f64, step: f64) -> Result<Vec<f64>, ControlError> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
        return Err(ControlError::NonFinite("action grid"));
    }
    if step <= 0.0 || max < min {
        return Err(ControlError::EmptyActions);
    }
    // tolerate round-off so that e.g. [-1, 1] step 0.02 keeps its endpoint
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| min + step * i as f64).collect())
}

/// Which term of the objective each weight multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRoles {
    /// `w1` scales the tracking error, `w2` the predicted variance.
    #[default]
    TrackingVariance,
    /// `w1` scales the predicted variance, `w2` the tracking error.
    VarianceTracking,
}

/// Objective weights; `w2` ramps linearly from `w2_start` to `w2_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: f64,
    pub w2_start: f64,
    pub w2_end: f64,
    #[serde(default)]
    pub schedule_steps: usize,
    #[serde(default)]
    pub roles: WeightRoles,
}

impl Weights {
    pub fn constant(w1: f64, w2: f64) -> Self {
        Self {
            w1,
            w2_start: w2,
            w2_end: w2,
            schedule_steps: 0,
            roles: WeightRoles::TrackingVariance,
        }
    }

    pub fn with_roles(mut self, roles: WeightRoles) -> Self {
        self.roles = roles;
        self
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let all = [self.w1, self.w2_start, self.w2_end];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ControlError::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        if self.w1 + self.w2_start.min(self.w2_end) <= 0.0 {
            return Err(ControlError::InvalidWeights(
                "w1 + w2 must stay positive".into(),
            ));
        }
        Ok(())
    }

    /// `w2` at zero-based step `t`.
    pub fn w2_at(&self, t: usize) -> f64 {
        if self.schedule_steps == 0 || t >= self.schedule_steps {
            return self.w2_end;
        }
        let frac = t as f64 / self.schedule_steps as f64;
        self.w2_start + (self.w2_end - self.w2_start) * frac
    }

    /// `(tracking, exploration)` multipliers at step `t`.
    pub fn split_at(&self, t: usize) -> (f64, f64) {
        match self.roles {
            WeightRoles::TrackingVariance => (self.w1, self.w2_at(t)),
            WeightRoles::VarianceTracking => (self.w2_at(t), self.w1),
        }
    }
}

/// Reference trajectory `r(t)`; values past the end are held.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Constant(Vec<f64>),
    Sequence(Vec<Vec<f64>>),
}

impl Reference {
    pub fn at(&self, t: usize) -> &[f64] {
        match self {
            Reference::Constant(r) => r,
            Reference::Sequence(rs) => &rs[t.min(rs.len() - 1)],
        }
    }
}

/// What the controller assumes about the plant's input/output map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Structure {
    /// `y(t+1) = h(y(t)) + u(t)`; GPs learn `h` from `y(t) ↦ y(t+1) − u(t)`.
    AdditiveControl,
    /// `y(t+1) = h(y(t), u(t))`; GPs learn `h` directly.
    BlackBox,
    /// Observation `[p, v]`; `p(t+1) = p(t) + T v(t)` is known, a single GP
    /// learns `(v(t), u(t)) ↦ v(t+1)`.
    PartialSideInfo { sampling_period: f64 },
}

/// Per-output predictive means and variances for the next observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// The controller's internal model: one GP per learned output.
#[derive(Debug, Clone)]
pub struct IoModel {
    structure: Structure,
    output_dim: usize,
    control_dim: usize,
    gps: Vec<GpModel>,
}

impl IoModel {
    pub fn new(
        structure: Structure,
        output_dim: usize,
        control_dim: usize,
        kernel: KernelConfig,
        noise_variance: f64,
    ) -> Result<Self, ControlError> {
        let (input_dim, n_gps) = match structure {
            Structure::AdditiveControl => {
                if control_dim != output_dim {
                    return Err(ControlError::Dimension {
                        what: "additive control",
                        expected: output_dim,
                        got: control_dim,
                    });
                }
                (output_dim, output_dim)
            }
            Structure::BlackBox => (output_dim + control_dim, output_dim),
            Structure::PartialSideInfo { .. } => {
                if output_dim != 2 {
                    return Err(ControlError::Dimension {
                        what: "position/velocity observation",
                        expected: 2,
                        got: output_dim,
                    });
                }
                (1 + control_dim, 1)
            }
        };
        let gps = (0..n_gps)
            .map(|_| GpModel::empty(input_dim, kernel, noise_variance))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            structure,
            output_dim,
            control_dim,
            gps,
        })
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn gps(&self) -> &[GpModel] {
        &self.gps
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Observation coordinate predicted by GP `j`.
    pub fn modeled_output(&self, j: usize) -> usize {
        match self.structure {
            Structure::PartialSideInfo { .. } => 1,
            _ => j,
        }
    }

    /// Combined fingerprint of every GP training set.
    pub fn fingerprint(&self) -> String {
        self.gps
            .iter()
            .map(|g| g.data().fingerprint())
            .collect::<Vec<_>>()
            .join(":")
    }

    fn check(&self, y: &[f64], u: &[f64]) -> Result<(), ControlError> {
        if y.len() != self.output_dim {
            return Err(ControlError::Dimension {
                what: "observation",
                expected: self.output_dim,
                got: y.len(),
            });
        }
        if u.len() != self.control_dim {
            return Err(ControlError::Dimension {
                what: "control",
                expected: self.control_dim,
                got: u.len(),
            });
        }
        Ok(())
    }

    /// GP input vector induced by `(y, u)`.
    pub fn gp_input(&self, y: &[f64], u: &[f64]) -> Vec<f64> {
        match self.structure {
            Structure::AdditiveControl => y.to_vec(),
            Structure::BlackBox => y.iter().chain(u).copied().collect(),
            Structure::PartialSideInfo { .. } => {
                std::iter::once(y[1]).chain(u.iter().copied()).collect()
            }
        }
    }

    /// GP targets for the transition `y --u--> y_next`, one per GP.
    pub fn gp_targets(&self, u: &[f64], y_next: &[f64]) -> Vec<f64> {
        match self.structure {
            Structure::AdditiveControl => y_next.iter().zip(u).map(|(y, u)| y - u).collect(),
            Structure::BlackBox => y_next.to_vec(),
            Structure::PartialSideInfo { .. } => vec![y_next[1]],
        }
    }

    /// Append an observed transition to every GP.
    pub fn observe(&mut self, y: &[f64], u: &[f64], y_next: &[f64]) -> Result<(), ControlError> {
        self.check(y, u)?;
        if y_next.len() != self.output_dim {
            return Err(ControlError::Dimension {
                what: "next observation",
                expected: self.output_dim,
                got: y_next.len(),
            });
        }
        let input = self.gp_input(y, u);
        let targets = self.gp_targets(u, y_next);
        self.push_raw(input, &targets)
    }

    /// Append a raw `(input, targets)` pair; used to seed prior data.
    pub fn push_raw(&mut self, input: Vec<f64>, targets: &[f64]) -> Result<(), ControlError> {
        if targets.len() != self.gps.len() {
            return Err(ControlError::Dimension {
                what: "targets",
                expected: self.gps.len(),
                got: targets.len(),
            });
        }
        // validate everything before touching any model
        let mut staged = self.gps.clone();
        for (gp, &t) in staged.iter_mut().zip(targets) {
            gp.push(input.clone(), t)?;
        }
        self.gps = staged;
        Ok(())
    }

    /// Predicted next observation for `(y, u)`; noise is not sampled.
    pub fn predict(&self, y: &[f64], u: &[f64]) -> Result<Prediction, ControlError> {
        self.check(y, u)?;
        let input = self.gp_input(y, u);
        let post = self
            .gps
            .iter()
            .map(|g| g.posterior(&input))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(match self.structure {
            Structure::AdditiveControl => Prediction {
                mean: post.iter().zip(u).map(|(p, u)| p.mean + u).collect(),
                variance: post.iter().map(|p| p.variance).collect(),
            },
            Structure::BlackBox => Prediction {
                mean: post.iter().map(|p| p.mean).collect(),
                variance: post.iter().map(|p| p.variance).collect(),
            },
            Structure::PartialSideInfo { sampling_period } => Prediction {
                mean: vec![y[0] + sampling_period * y[1], post[0].mean],
                variance: vec![0.0, post[0].variance],
            },
        })
    }

    /// Part of an observation that is compared with the reference.
    pub fn tracked<'a>(&self, obs: &'a [f64]) -> &'a [f64] {
        match self.structure {
            Structure::PartialSideInfo { .. } => &obs[..1],
            _ => obs,
        }
    }

    /// Tracked quantity implied by a prediction.
    ///
    /// With partial side information the control only reaches the position
    /// through the velocity, so the position two steps ahead is used.
    fn tracked_prediction(&self, pred: &Prediction) -> Vec<f64> {
        match self.structure {
            Structure::PartialSideInfo { sampling_period } => {
                vec![pred.mean[0] + sampling_period * pred.mean[1]]
            }
            _ => pred.mean.clone(),
        }
    }

    fn score(&self, pred: &Prediction, r: &[f64], w1: f64, w2: f64) -> f64 {
        let tracked = self.tracked_prediction(pred);
        w1 * norm_diff(&tracked, r) - w2 * pred.variance.iter().sum::<f64>()
    }

    /// Weighted objective `J` for a single action.
    pub fn objective(
        &self,
        y: &[f64],
        u: &[f64],
        r: &[f64],
        w1: f64,
        w2: f64,
    ) -> Result<f64, ControlError> {
        let pred = self.predict(y, u)?;
        self.check_reference(r)?;
        Ok(self.score(&pred, r, w1, w2))
    }

    fn check_reference(&self, r: &[f64]) -> Result<(), ControlError> {
        let expected = match self.structure {
            Structure::PartialSideInfo { .. } => 1,
            _ => self.output_dim,
        };
        if r.len() != expected {
            return Err(ControlError::Dimension {
                what: "reference",
                expected,
                got: r.len(),
            });
        }
        Ok(())
    }

    /// Minimizer of `J` over `Φ`; ties go to the lowest index.
    pub fn select_action(
        &self,
        y: &[f64],
        r: &[f64],
        phi: &ActionSet,
        w1: f64,
        w2: f64,
    ) -> Result<Selection, ControlError> {
        if phi.is_empty() {
            return Err(ControlError::EmptyActions);
        }
        self.check_reference(r)?;
        let mut best: Option<Selection> = None;
        for (index, u) in phi.actions().iter().enumerate() {
            let prediction = self.predict(y, u)?;
            let objective = self.score(&prediction, r, w1, w2);
            if best.as_ref().is_none_or(|b| objective < b.objective) {
                best = Some(Selection {
                    index,
                    action: u.clone(),
                    prediction,
                    objective,
                });
            }
        }
        Ok(best.expect("nonempty action set"))
    }
}

pub(crate) fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Winning action of one planning step.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub action: Vec<f64>,
    pub prediction: Prediction,
    pub objective: f64,
}

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based; the observation is the one received after `step` actions.
    pub step: usize,
    pub action: Vec<f64>,
    pub observation: Vec<f64>,
    pub reference: Vec<f64>,
    pub predicted_mean: Vec<f64>,
    pub predicted_variance: Vec<f64>,
    pub objective_value: f64,
    pub tracking_error: f64,
    pub estimation_error: f64,
}

impl StepRecord {
    pub fn is_finite(&self) -> bool {
        self.action
            .iter()
            .chain(&self.observation)
            .chain(&self.reference)
            .chain(&self.predicted_mean)
            .chain(&self.predicted_variance)
            .chain([
                &self.objective_value,
                &self.tracking_error,
                &self.estimation_error,
            ])
            .all(|v| v.is_finite())
    }
}

fn finite_observation(y: Vec<f64>) -> Result<Vec<f64>, ControlError> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(ControlError::NonFiniteObservation(y))
    }
}

/// Closed-loop dual control for `steps` iterations.
///
/// The channel supplies the seeded observation noise; the run is a pure
/// function of the plant, model, channel seed and arguments.
pub fn run_episode<P: Plant>(
    plant: &mut P,
    io: &mut IoModel,
    phi: &ActionSet,
    reference: &Reference,
    weights: &Weights,
    steps: usize,
    channel: &mut ObservationChannel,
) -> Result<Vec<StepRecord>, EpisodeError> {
    let at = |step: usize| move |source: ControlError| EpisodeError { step, source };
    weights.validate().map_err(at(0))?;
    if phi.control_dim() != io.control_dim() {
        return Err(at(0)(ControlError::Dimension {
            what: "action set",
            expected: io.control_dim(),
            got: phi.control_dim(),
        }));
    }
    let mut y = finite_observation(channel.observe(plant)).map_err(at(0))?;
    let mut records = Vec::with_capacity(steps);
    for t in 0..steps {
        let step = t + 1;
        let r = reference.at(t);
        let (w_track, w_explore) = weights.split_at(t);
        let sel = io
            .select_action(&y, r, phi, w_track, w_explore)
            .map_err(at(step))?;
        plant.step(&sel.action).map_err(|e| at(step)(e.into()))?;
        let y_next = finite_observation(channel.observe(plant)).map_err(at(step))?;
        io.observe(&y, &sel.action, &y_next).map_err(at(step))?;
        records.push(StepRecord {
            step,
            tracking_error: norm_diff(io.tracked(&y_next), r),
            estimation_error: norm_diff(&y_next, &sel.prediction.mean),
            action: sel.action,
            reference: r.to_vec(),
            predicted_mean: sel.prediction.mean,
            predicted_variance: sel.prediction.variance,
            objective_value: sel.objective,
            observation: y_next.clone(),
        });
        y = y_next;
    }
    Ok(records)
}

/// Full-knowledge planner: each step simulates the true plant forward with
/// the candidate held constant and picks the action with the smallest
/// tracking error.
///
/// `lookahead` counts steps after the action first reaches the tracked output
/// (see [`Plant::output_delay`]).
pub fn run_benchmark_episode<P, F>(
    plant: &mut P,
    phi: &ActionSet,
    reference: &Reference,
    steps: usize,
    lookahead: usize,
    tracked: F,
) -> Result<Vec<StepRecord>, EpisodeError>
where
    P: Plant,
    F: Fn(&[f64]) -> Vec<f64>,
{
    let at = |step: usize| move |source: ControlError| EpisodeError { step, source };
    if phi.control_dim() != plant.control_dim() {
        return Err(at(0)(ControlError::Dimension {
            what: "action set",
            expected: plant.control_dim(),
            got: phi.control_dim(),
        }));
    }
    let horizon = lookahead.max(1) + plant.output_delay() - 1;
    let mut records = Vec::with_capacity(steps);
    for t in 0..steps {
        let step = t + 1;
        let r = reference.at(t);
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (i, u) in phi.actions().iter().enumerate() {
            let mut sim = plant.clone();
            let mut first = None;
            let mut ok = true;
            for h in 0..horizon {
                if sim.step(u).is_err() {
                    ok = false;
                    break;
                }
                if h == 0 {
                    first = Some(sim.output());
                }
            }
            if !ok {
                continue;
            }
            let err = norm_diff(&tracked(&sim.output()), r);
            if best.as_ref().is_none_or(|b| err < b.1) {
                best = Some((i, err, first.expect("horizon >= 1")));
            }
        }
        let (index, objective, predicted) = best
            .ok_or_else(|| at(step)(ControlError::Plant(PlantError::Diverged(plant.output()))))?;
        let action = phi.actions()[index].clone();
        plant.step(&action).map_err(|e| at(step)(e.into()))?;
        let y = finite_observation(plant.output()).map_err(at(step))?;
        records.push(StepRecord {
            step,
            tracking_error: norm_diff(&tracked(&y), r),
            estimation_error: norm_diff(&y, &predicted),
            predicted_variance: vec![0.0; predicted.len()],
            predicted_mean: predicted,
            action,
            reference: r.to_vec(),
            objective_value: objective,
            observation: y,
        });
    }
    Ok(records)
}
