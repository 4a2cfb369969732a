//! Scenario configuration files.
//!
//! A config is a JSON object naming a `scenario`; every other field is
//! optional and is deep-merged over that scenario's defaults. The resolved
//! config is fully explicit and round-trips through serde.

use std::fmt;
use std::path::Path;

use dualgp_core::gp::DEFAULT_JITTER;
use dualgp_core::{
    ActionSet, CartParams, Coupling, KernelConfig, Structure, VelocitySource, WeightRoles, Weights,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Steps over which `w2` ramps from 0 to 40 in the nonlinear logistic scenario.
pub const NONLINEAR_SCHEDULE_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    LogisticLinear,
    LogisticNonlinear,
    CartDual,
    CartBenchmark,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::LogisticLinear,
        Scenario::LogisticNonlinear,
        Scenario::CartDual,
        Scenario::CartBenchmark,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LogisticLinear => "logistic_linear",
            Scenario::LogisticNonlinear => "logistic_nonlinear",
            Scenario::CartDual => "cart_dual",
            Scenario::CartBenchmark => "cart_benchmark",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    Logistic { r_param: f64, coupling: Coupling },
    Cart(CartParams),
}

impl PlantConfig {
    pub fn state_dim(&self) -> usize {
        match self {
            PlantConfig::Logistic { .. } => 1,
            PlantConfig::Cart(_) => 4,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            PlantConfig::Logistic { .. } => 1,
            PlantConfig::Cart(_) => 2,
        }
    }

    pub fn tracked_dim(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

/// One axis for scalar controls, or a list of axes for vector controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionGrid {
    Single(GridAxis),
    Multi(Vec<GridAxis>),
}

impl ActionGrid {
    pub fn axes(&self) -> Vec<GridAxis> {
        match self {
            ActionGrid::Single(a) => vec![*a],
            ActionGrid::Multi(v) => v.clone(),
        }
    }

    fn field(&self, i: usize, name: &str) -> String {
        match self {
            ActionGrid::Single(_) => format!("action_grid.{name}"),
            ActionGrid::Multi(_) => format!("action_grid[{i}].{name}"),
        }
    }

    pub fn to_action_set(&self) -> ActionSet {
        let axes: Vec<_> = self.axes().iter().map(|a| (a.min, a.max, a.step)).collect();
        ActionSet::product(&axes).expect("validated action grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Weighted tracking/variance objective over the learned model.
    #[serde(alias = "eq17")]
    Dual,
    /// Full-knowledge lookahead on the true plant.
    Benchmark,
}

/// A seeded training pair: GP input and one target per GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPoint {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Random one-step transitions collected before the episode starts: states
/// uniform in the box, actions uniform over the action grid, both drawn
/// from the episode seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSamples {
    pub count: usize,
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub scenario: Scenario,
    pub plant: PlantConfig,
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    pub action_grid: ActionGrid,
    pub kernel: KernelConfig,
    pub noise_variance: f64,
    pub weights: Weights,
    pub steps: usize,
    pub seed: u64,
    pub selection: SelectionMode,
    pub structure: Structure,
    pub lookahead: usize,
    pub velocity_source: VelocitySource,
    pub initial_data: Vec<SeedPoint>,
    #[serde(default)]
    pub prior_samples: Option<PriorSamples>,
}

impl EpisodeConfig {
    /// Defaults reproducing the published experiments.
    pub fn defaults(scenario: Scenario) -> Self {
        let kernel = KernelConfig {
            signal_variance: 0.5,
            length_scale: 1.0,
            jitter: DEFAULT_JITTER,
        };
        let logistic = |r_param, coupling| EpisodeConfig {
            scenario,
            plant: PlantConfig::Logistic { r_param, coupling },
            x0: vec![0.1],
            target: vec![0.8],
            action_grid: ActionGrid::Single(GridAxis {
                min: -1.0,
                max: 1.0,
                step: 0.02,
            }),
            kernel,
            noise_variance: 0.0,
            weights: Weights::constant(1.0, 1.0),
            steps: 100,
            seed: 0,
            selection: SelectionMode::Dual,
            structure: Structure::AdditiveControl,
            lookahead: 1,
            velocity_source: VelocitySource::State,
            initial_data: Vec::new(),
            prior_samples: None,
        };
        let params = CartParams::default();
        let cart = EpisodeConfig {
            scenario,
            plant: PlantConfig::Cart(params),
            x0: vec![0.0, 0.0, 0.6, 0.0],
            target: vec![0.5],
            action_grid: ActionGrid::Single(GridAxis {
                min: -10.0,
                max: 10.0,
                step: 1.0,
            }),
            kernel,
            noise_variance: 0.01,
            // tracking carries the larger weight; see README
            weights: Weights::constant(1.0, 20.0).with_roles(WeightRoles::VarianceTracking),
            steps: 100,
            seed: 0,
            selection: SelectionMode::Dual,
            structure: Structure::PartialSideInfo {
                sampling_period: params.sampling_period,
            },
            lookahead: 1,
            velocity_source: VelocitySource::State,
            initial_data: Vec::new(),
            prior_samples: None,
        };
        match scenario {
            Scenario::LogisticLinear => logistic(3.5, Coupling::Additive),
            Scenario::LogisticNonlinear => EpisodeConfig {
                action_grid: ActionGrid::Single(GridAxis {
                    min: 0.0,
                    max: std::f64::consts::PI,
                    step: 0.1,
                }),
                weights: Weights {
                    w1: 1.0,
                    w2_start: 0.0,
                    w2_end: 40.0,
                    schedule_steps: NONLINEAR_SCHEDULE_STEPS,
                    roles: WeightRoles::TrackingVariance,
                },
                structure: Structure::BlackBox,
                ..logistic(3.8, Coupling::Cosine)
            },
            Scenario::CartDual => cart,
            Scenario::CartBenchmark => EpisodeConfig {
                selection: SelectionMode::Benchmark,
                ..cart
            },
        }
    }

    pub fn action_set(&self) -> ActionSet {
        self.action_grid.to_action_set()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every invariant, collecting all violations.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = ConfigError::default();
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());

        if let PlantConfig::Logistic { r_param, .. } = self.plant {
            if !r_param.is_finite() {
                errs.push("plant.r_param", "must be finite");
            }
        }
        if let PlantConfig::Cart(p) = &self.plant {
            for (name, v) in [
                ("sampling_period", p.sampling_period),
                ("cart_mass", p.cart_mass),
                ("pendulum_length", p.pendulum_length),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    errs.push(format!("plant.{name}"), "must be positive");
                }
            }
            for (name, v) in [
                ("friction", p.friction),
                ("gravity", p.gravity),
                ("pendulum_mass", p.pendulum_mass),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    errs.push(format!("plant.{name}"), "must be non-negative");
                }
            }
        }
        if self.x0.len() != self.plant.state_dim() {
            errs.push(
                "x0",
                format!(
                    "expected {} values, got {}",
                    self.plant.state_dim(),
                    self.x0.len()
                ),
            );
        } else if !finite(&self.x0) {
            errs.push("x0", "must be finite");
        }
        if self.target.len() != self.plant.tracked_dim() {
            errs.push(
                "target",
                format!(
                    "expected {} values, got {}",
                    self.plant.tracked_dim(),
                    self.target.len()
                ),
            );
        } else if !finite(&self.target) {
            errs.push("target", "must be finite");
        }

        let axes = self.action_grid.axes();
        if axes.is_empty() {
            errs.push("action_grid", "needs at least one axis");
        }
        if axes.len() != 1 {
            errs.push(
                "action_grid",
                format!("plant takes 1 control, grid has {} axes", axes.len()),
            );
        }
        for (i, a) in axes.iter().enumerate() {
            if !(a.step.is_finite() && a.step > 0.0) {
                errs.push(self.action_grid.field(i, "step"), "must be positive");
            }
            if !a.min.is_finite() {
                errs.push(self.action_grid.field(i, "min"), "must be finite");
            }
            if !a.max.is_finite() {
                errs.push(self.action_grid.field(i, "max"), "must be finite");
            } else if a.max < a.min {
                errs.push(self.action_grid.field(i, "max"), "must not be below min");
            }
        }

        let k = &self.kernel;
        if !(k.signal_variance.is_finite() && k.signal_variance > 0.0) {
            errs.push("kernel.signal_variance", "must be positive");
        }
        if !(k.length_scale.is_finite() && k.length_scale > 0.0) {
            errs.push("kernel.length_scale", "must be positive");
        }
        if !(k.jitter.is_finite() && k.jitter >= 0.0) {
            errs.push("kernel.jitter", "must be non-negative");
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            errs.push("noise_variance", "must be non-negative");
        }

        let w = &self.weights;
        for (name, v) in [("w1", w.w1), ("w2_start", w.w2_start), ("w2_end", w.w2_end)] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("weights.{name}"), "must be non-negative");
            }
        }
        if w.validate().is_err() && w.w1 >= 0.0 && w.w2_start >= 0.0 && w.w2_end >= 0.0 {
            errs.push("weights", "w1 + w2 must stay positive");
        }
        if self.steps == 0 {
            errs.push("steps", "must be at least 1");
        }
        if self.selection == SelectionMode::Benchmark && self.lookahead == 0 {
            errs.push("lookahead", "must be at least 1");
        }

        match (self.structure, &self.plant) {
            (Structure::PartialSideInfo { sampling_period }, _) => {
                if self.plant.output_dim() != 2 {
                    errs.push(
                        "structure",
                        "partial_side_info needs a position/velocity plant",
                    );
                }
                if !(sampling_period.is_finite() && sampling_period > 0.0) {
                    errs.push("structure.sampling_period", "must be positive");
                }
            }
            (Structure::AdditiveControl | Structure::BlackBox, PlantConfig::Cart(_)) => {
                errs.push("structure", "cart plants support only partial_side_info");
            }
            _ => {}
        }
        let (input_dim, n_targets) = match self.structure {
            Structure::AdditiveControl => (self.plant.output_dim(), self.plant.output_dim()),
            Structure::BlackBox => (self.plant.output_dim() + 1, self.plant.output_dim()),
            Structure::PartialSideInfo { .. } => (2, 1),
        };
        for (i, p) in self.initial_data.iter().enumerate() {
            if p.input.len() != input_dim || !finite(&p.input) {
                errs.push(
                    format!("initial_data[{i}].input"),
                    format!("expected {input_dim} finite values"),
                );
            }
            if p.target.len() != n_targets || !finite(&p.target) {
                errs.push(
                    format!("initial_data[{i}].target"),
                    format!("expected {n_targets} finite values"),
                );
            }
        }
        if let Some(ps) = &self.prior_samples {
            let n = self.plant.state_dim();
            if ps.state_min.len() != n || !finite(&ps.state_min) {
                errs.push(
                    "prior_samples.state_min",
                    format!("expected {n} finite values"),
                );
            }
            if ps.state_max.len() != n || !finite(&ps.state_max) {
                errs.push(
                    "prior_samples.state_max",
                    format!("expected {n} finite values"),
                );
            } else if ps
                .state_min
                .iter()
                .zip(&ps.state_max)
                .any(|(lo, hi)| hi < lo)
            {
                errs.push("prior_samples.state_max", "must not be below state_min");
            }
        }
        errs.into_result()
    }
}

/// Field-level validation failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<(String, String)>,
}

impl ConfigError {
    fn single(field: impl Into<String>, msg: impl Into<String>) -> Self {
        let mut e = Self::default();
        e.push(field, msg);
        e
    }

    fn push(&mut self, field: impl Into<String>, msg: impl Into<String>) {
        self.issues.push((field.into(), msg.into()));
    }

    fn into_result(self) -> Result<(), ConfigError> {
        if self.issues.is_empty() {
            Ok(())
        } else {
            Err(self)
        }
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.issues.iter().any(|(f, _)| f == field)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (field, msg)) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "`{field}`: {msg}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Recursively overlay `patch` onto `base`. Objects merge key by key unless
/// their `kind` tags differ, in which case the patch replaces the base.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let kinds_differ =
                matches!((b.get("kind"), p.get("kind")), (Some(x), Some(y)) if x != y);
            if kinds_differ {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Parse and validate a config document.
pub fn resolve(text: &str) -> Result<EpisodeConfig, ConfigError> {
    let patch: Value =
        serde_json::from_str(text).map_err(|e| ConfigError::single("<document>", e.to_string()))?;
    let scenario_value = patch
        .get("scenario")
        .cloned()
        .ok_or_else(|| ConfigError::single("scenario", "missing"))?;
    let scenario: Scenario = serde_json::from_value(scenario_value).map_err(|_| {
        ConfigError::single(
            "scenario",
            "expected one of logistic_linear, logistic_nonlinear, cart_dual, cart_benchmark",
        )
    })?;
    let mut base =
        serde_json::to_value(EpisodeConfig::defaults(scenario)).expect("defaults serialize");
    merge(&mut base, patch);
    let config: EpisodeConfig = serde_path_to_error::deserialize(base).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::single(path, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<EpisodeConfig, crate::HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(resolve(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for s in Scenario::ALL {
            EpisodeConfig::defaults(s).validate().unwrap();
            let json = format!(r#"{{"scenario": "{}"}}"#, s.name());
            assert_eq!(resolve(&json).unwrap(), EpisodeConfig::defaults(s));
        }
    }

    #[test]
    fn overrides_merge_deeply() {
        let c = resolve(r#"{"scenario": "logistic_linear", "plant": {"r_param": 3.8}, "kernel": {"length_scale": 0.5}}"#)
            .unwrap();
        assert_eq!(
            c.plant,
            PlantConfig::Logistic {
                r_param: 3.8,
                coupling: Coupling::Additive
            }
        );
        assert_eq!(c.kernel.length_scale, 0.5);
        assert_eq!(c.kernel.signal_variance, 0.5);
    }

    #[test]
    fn zero_step_names_field() {
        let e =
            resolve(r#"{"scenario": "logistic_linear", "action_grid": {"step": 0}}"#).unwrap_err();
        assert!(e.mentions("action_grid.step"), "{e}");
    }

    #[test]
    fn negative_kernel_variance_rejected() {
        let e = resolve(r#"{"scenario": "cart_dual", "kernel": {"signal_variance": -0.5}}"#)
            .unwrap_err();
        assert!(e.mentions("kernel.signal_variance"), "{e}");
    }

    #[test]
    fn unknown_fields_and_types_are_located() {
        let e = resolve(r#"{"scenario": "cart_dual", "wieghts": {}}"#).unwrap_err();
        assert!(e.to_string().contains("wieghts"), "{e}");
        let e = resolve(r#"{"scenario": "cart_dual", "weights": {"w1": "one"}}"#).unwrap_err();
        assert!(e.mentions("weights.w1"), "{e}");
        assert!(resolve(r#"{"scenario": "pendulum"}"#)
            .unwrap_err()
            .mentions("scenario"));
        assert!(resolve("{}").unwrap_err().mentions("scenario"));
        assert!(resolve("not json").is_err());
    }

    #[test]
    fn multiple_issues_collected() {
        let e = resolve(r#"{"scenario": "logistic_linear", "steps": 0, "x0": [0.1, 0.2], "noise_variance": -1}"#)
            .unwrap_err();
        assert!(e.mentions("steps"));
        assert!(e.mentions("x0"));
        assert!(e.mentions("noise_variance"));
    }

    #[test]
    fn plant_kind_switch_replaces() {
        let c = resolve(
            r#"{"scenario": "logistic_linear", "plant": {"kind": "cart", "sampling_period": 0.05, "friction": 12.98, "cart_mass": 1.378, "pendulum_length": 0.325, "gravity": 9.8, "pendulum_mass": 0.051}}"#,
        );
        // a cart with the additive structure and a scalar x0 is rejected field by field
        let e = c.unwrap_err();
        assert!(e.mentions("x0"));
        assert!(e.mentions("structure"));
    }
}
