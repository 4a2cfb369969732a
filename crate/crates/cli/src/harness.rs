//! Episode execution, trace/slice/sweep CSV emission and summary statistics.

use std::io::Write;
use std::path::Path;

use dualgp_core::{
    run_benchmark_episode, run_episode, CartPlant, EpisodeError, IoModel, LogisticPlant,
    ObservationChannel, Plant, Reference, StepRecord, Structure,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{EpisodeConfig, PlantConfig, PriorSamples, SelectionMode};
use crate::HarnessError;

pub const TRACE_HEADER: [&str; 9] = [
    "step",
    "action",
    "observation",
    "reference",
    "predicted_mean",
    "predicted_variance",
    "objective",
    "tracking_error",
    "estimation_error",
];

pub const SLICE_HEADER: [&str; 4] = ["x", "true_value", "mean", "std"];

pub const SWEEP_HEADER: [&str; 5] = [
    "seed",
    "final_tracking_error",
    "final_window_mean_tracking_error",
    "steps_to_within_10pct",
    "success",
];

const PRIOR_STREAM: u64 = 0x50_5249_4f52;

/// Trailing window used for the final-performance statistics.
pub const FINAL_WINDOW: usize = 20;

/// Concrete plant chosen by a config.
#[derive(Debug, Clone)]
pub enum AnyPlant {
    Logistic(LogisticPlant),
    Cart(CartPlant),
}

impl AnyPlant {
    pub fn from_config(config: &EpisodeConfig) -> Self {
        match &config.plant {
            PlantConfig::Logistic { r_param, coupling } => {
                AnyPlant::Logistic(LogisticPlant::new(*r_param, config.x0[0], *coupling))
            }
            PlantConfig::Cart(params) => {
                let mut s = [0.0; 4];
                s.copy_from_slice(&config.x0);
                AnyPlant::Cart(CartPlant::new(s, *params))
            }
        }
    }

    /// Output coordinates compared with the reference.
    pub fn tracked(&self, y: &[f64]) -> Vec<f64> {
        match self {
            AnyPlant::Logistic(_) => y.to_vec(),
            AnyPlant::Cart(_) => vec![y[0]],
        }
    }
}

impl Plant for AnyPlant {
    fn output(&self) -> Vec<f64> {
        match self {
            AnyPlant::Logistic(p) => p.output(),
            AnyPlant::Cart(p) => p.output(),
        }
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn step(&mut self, u: &[f64]) -> Result<(), dualgp_core::PlantError> {
        match self {
            AnyPlant::Logistic(p) => p.step(u),
            AnyPlant::Cart(p) => p.step(u),
        }
    }

    fn output_delay(&self) -> usize {
        match self {
            AnyPlant::Logistic(p) => p.output_delay(),
            AnyPlant::Cart(p) => p.output_delay(),
        }
    }

    fn set_output_coordinate(
        &mut self,
        coord: usize,
        value: f64,
    ) -> Result<(), dualgp_core::PlantError> {
        match self {
            AnyPlant::Logistic(p) => p.set_output_coordinate(coord, value),
            AnyPlant::Cart(p) => p.set_output_coordinate(coord, value),
        }
    }
}

/// Result of one configured run.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub records: Vec<StepRecord>,
    /// Final learned model; `None` for the full-knowledge benchmark.
    pub model: Option<IoModel>,
}

impl EpisodeOutcome {
    pub fn summary(&self) -> Summary {
        Summary::from_records(&self.records)
    }
}

/// Fresh controller model for a config, including any seeded data and the
/// prior transitions drawn from `seed`.
pub fn build_model(config: &EpisodeConfig, seed: u64) -> Result<IoModel, HarnessError> {
    let mut io = IoModel::new(
        config.structure,
        config.plant.output_dim(),
        1,
        config.kernel,
        config.noise_variance,
    )
    .map_err(HarnessError::Model)?;
    for p in &config.initial_data {
        io.push_raw(p.input.clone(), &p.target)
            .map_err(HarnessError::Model)?;
    }
    if let Some(ps) = &config.prior_samples {
        collect_prior(config, ps, seed, &mut io)?;
    }
    Ok(io)
}

fn collect_prior(
    config: &EpisodeConfig,
    ps: &PriorSamples,
    seed: u64,
    io: &mut IoModel,
) -> Result<(), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep clear of the observation-noise stream
    rng.set_stream(PRIOR_STREAM);
    let mut noise = ObservationChannel::new(config.noise_variance, seed ^ PRIOR_STREAM);
    let phi = config.action_set();
    let actions = phi.actions();
    for _ in 0..ps.count {
        let x: Vec<f64> = ps
            .state_min
            .iter()
            .zip(&ps.state_max)
            .map(|(&lo, &hi)| {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        let u = &actions[rng.random_range(0..actions.len())];
        let mut plant = AnyPlant::from_config(&EpisodeConfig {
            x0: x,
            ..config.clone()
        });
        let y = noise.corrupt(&plant.output());
        plant.step(u).map_err(|e| EpisodeError {
            step: 0,
            source: e.into(),
        })?;
        let y_next = noise.corrupt(&plant.output());
        io.observe(&y, u, &y_next).map_err(HarnessError::Model)?;
    }
    Ok(())
}

fn channel(config: &EpisodeConfig, seed: u64) -> ObservationChannel {
    let ch = ObservationChannel::new(config.noise_variance, seed);
    match config.structure {
        Structure::PartialSideInfo { sampling_period } => {
            ch.with_velocity(config.velocity_source, sampling_period)
        }
        _ => ch,
    }
}

/// Runs the configured episode with the config's own seed.
pub fn run(config: &EpisodeConfig) -> Result<EpisodeOutcome, HarnessError> {
    run_with_seed(config, config.seed)
}

pub fn run_with_seed(config: &EpisodeConfig, seed: u64) -> Result<EpisodeOutcome, HarnessError> {
    let mut plant = AnyPlant::from_config(config);
    let phi = config.action_set();
    let reference = Reference::Constant(config.target.clone());
    match config.selection {
        SelectionMode::Benchmark => {
            let template = plant.clone();
            let records = run_benchmark_episode(
                &mut plant,
                &phi,
                &reference,
                config.steps,
                config.lookahead,
                |y| template.tracked(y),
            )?;
            Ok(EpisodeOutcome {
                records,
                model: None,
            })
        }
        SelectionMode::Dual => {
            let mut io = build_model(config, seed)?;
            let mut ch = channel(config, seed);
            let records = run_episode(
                &mut plant,
                &mut io,
                &phi,
                &reference,
                &config.weights,
                config.steps,
                &mut ch,
            )?;
            Ok(EpisodeOutcome {
                records,
                model: Some(io),
            })
        }
    }
}

/// Headline statistics of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub final_tracking_error: f64,
    pub final_window_mean_tracking_error: f64,
    /// First step whose tracking error is within 10 % of `‖r‖`.
    pub steps_to_within_10pct: Option<usize>,
    pub mean_residual_first_half: f64,
    pub mean_residual_second_half: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl Summary {
    pub fn from_records(records: &[StepRecord]) -> Self {
        let n = records.len();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let half = n / 2;
        Summary {
            steps: n,
            final_tracking_error: records.last().map_or(f64::NAN, |r| r.tracking_error),
            final_window_mean_tracking_error: mean(
                records[n.saturating_sub(FINAL_WINDOW)..]
                    .iter()
                    .map(|r| r.tracking_error),
            ),
            steps_to_within_10pct: records
                .iter()
                .find(|r| r.tracking_error <= 0.1 * norm(&r.reference))
                .map(|r| r.step),
            mean_residual_first_half: mean(records[..half].iter().map(|r| r.estimation_error)),
            mean_residual_second_half: mean(records[half..].iter().map(|r| r.estimation_error)),
        }
    }

    /// Final-window mean tracking error within 10 % of the reference norm.
    pub fn success(&self, reference_norm: f64) -> bool {
        self.final_window_mean_tracking_error <= 0.1 * reference_norm
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "final tracking error: {}", self.final_tracking_error)?;
        writeln!(
            f,
            "mean tracking error (last {FINAL_WINDOW}): {}",
            self.final_window_mean_tracking_error
        )?;
        match self.steps_to_within_10pct {
            Some(s) => writeln!(f, "steps to within 10%: {s}")?,
            None => writeln!(f, "steps to within 10%: never")?,
        }
        write!(
            f,
            "mean one-step residual: first half {}, second half {}",
            self.mean_residual_first_half, self.mean_residual_second_half
        )
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes a trace CSV. Vector-valued cells join components with `;`.
pub fn write_trace<W: Write>(records: &[StepRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            join(&r.action),
            join(&r.observation),
            join(&r.reference),
            join(&r.predicted_mean),
            join(&r.predicted_variance),
            r.objective_value.to_string(),
            r.tracking_error.to_string(),
            r.estimation_error.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn trace_to_string(records: &[StepRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(records, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8")
}

/// Mean ± std export of the learned map along one observation coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRequest {
    pub fixed_control: Vec<f64>,
    pub coord: usize,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceRow {
    pub x: f64,
    pub true_value: f64,
    pub mean: f64,
    pub std: f64,
}

impl SliceRequest {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n < 2 {
            return Err(HarnessError::Slice("--n must be at least 2".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(HarnessError::Slice("--min must be below --max".into()));
        }
        if self.fixed_control.iter().any(|u| !u.is_finite()) {
            return Err(HarnessError::Slice("--at-u must be finite".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

/// Evaluates `model` against the true plant along the slice.
///
/// The row's state is the config's initial state with observation coordinate
/// `coord` replaced by the grid value; the reported column is the observation
/// coordinate predicted by the first GP.
pub fn slice_model(
    config: &EpisodeConfig,
    model: &IoModel,
    request: &SliceRequest,
) -> Result<Vec<SliceRow>, HarnessError> {
    request.validate()?;
    if request.fixed_control.len() != model.control_dim() {
        return Err(HarnessError::Slice(format!(
            "--at-u needs {} value(s)",
            model.control_dim()
        )));
    }
    let out = model.modeled_output(0);
    let template = AnyPlant::from_config(config);
    request
        .grid()
        .into_iter()
        .map(|x| {
            let mut plant = template.clone();
            plant
                .set_output_coordinate(request.coord, x)
                .map_err(|e| HarnessError::Slice(e.to_string()))?;
            let y = plant.output();
            let pred = model
                .predict(&y, &request.fixed_control)
                .map_err(HarnessError::Model)?;
            plant
                .step(&request.fixed_control)
                .map_err(|e| HarnessError::Slice(e.to_string()))?;
            Ok(SliceRow {
                x,
                true_value: plant.output()[out],
                mean: pred.mean[out],
                std: pred.variance[out].sqrt(),
            })
        })
        .collect()
}

/// Reruns the configured episode and slices its final model.
pub fn slice(
    config: &EpisodeConfig,
    request: &SliceRequest,
) -> Result<(Vec<SliceRow>, IoModel), HarnessError> {
    let outcome = run(config)?;
    let model = outcome.model.ok_or_else(|| {
        HarnessError::Slice("benchmark selection has no learned model to slice".into())
    })?;
    let rows = slice_model(config, &model, request)?;
    Ok((rows, model))
}

pub fn write_slice<W: Write>(rows: &[SliceRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SLICE_HEADER)?;
    for r in rows {
        w.write_record([r.x, r.true_value, r.mean, r.std].map(|v| v.to_string()))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    /// `None` when the plant diverged; the row then counts as a failure.
    pub summary: Option<Summary>,
    pub diverged_at: Option<usize>,
    pub success: bool,
}

/// Runs seeds `0..n_seeds` in parallel; rows come back in seed order.
pub fn sweep(config: &EpisodeConfig, n_seeds: u64) -> Result<Vec<SweepRow>, HarnessError> {
    if n_seeds == 0 {
        return Err(HarnessError::Slice("--seeds must be at least 1".into()));
    }
    let r_norm = config.target.iter().map(|x| x * x).sum::<f64>().sqrt();
    (0..n_seeds)
        .into_par_iter()
        .map(|seed| {
            let mut c = config.clone();
            c.seed = seed;
            match run(&c) {
                Ok(out) => {
                    let summary = out.summary();
                    let success = summary.success(r_norm);
                    Ok(SweepRow {
                        seed,
                        summary: Some(summary),
                        diverged_at: None,
                        success,
                    })
                }
                Err(HarnessError::Episode(e)) if e.is_divergence() => {
                    log::info!("seed {seed}: diverged at step {}", e.step);
                    Ok(SweepRow {
                        seed,
                        summary: None,
                        diverged_at: Some(e.step),
                        success: false,
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let (last, window, within) = match &r.summary {
            Some(s) => (
                s.final_tracking_error.to_string(),
                s.final_window_mean_tracking_error.to_string(),
                s.steps_to_within_10pct
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
            ),
            None => ("inf".into(), "inf".into(), String::new()),
        };
        w.write_record([
            r.seed.to_string(),
            last,
            window,
            within,
            r.success.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomically<F>(path: &Path, fill: F) -> Result<(), HarnessError>
where
    F: FnOnce(&mut std::fs::File) -> Result<(), HarnessError>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    fill(tmp.as_file_mut())?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
