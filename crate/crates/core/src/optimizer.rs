//! Gradient-descent motion estimation through the differentiable
//! reconstruction pipeline, and a gradient-free evolution-strategy baseline.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backprojector::{Backprojector, GradientSampling};
use crate::error::{Error, Result};
use crate::geometry::ProjectionMatrix;
use crate::motion::{motion_to_matrices, motion_vjp, SplineMotion, N_PARAMS};
use crate::objectives::DifferentiableMetric;
use crate::volume::{ProjectionStack, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub n_iters: usize,
    pub s0: f64,
    pub decay: f64,
    #[serde(default = "one")]
    pub step_scale_translation: f64,
    #[serde(default = "one")]
    pub step_scale_rotation: f64,
    #[serde(default)]
    pub gradient_sampling: GradientSampling,
}

fn one() -> f64 {
    1.0
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            n_iters: 100,
            s0: 100.0,
            decay: 0.97,
            step_scale_translation: 1.0,
            step_scale_rotation: 1.0,
            gradient_sampling: GradientSampling::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters < 1 {
            return Err(Error::Config("n_iters must be >= 1".into()));
        }
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(Error::Config(format!("s0 must be positive, got {}", self.s0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        for (name, v) in [
            ("step_scale_translation", self.step_scale_translation),
            ("step_scale_rotation", self.step_scale_rotation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `s⁽ⁿ⁾ = s0 · tⁿ`.
    pub fn step(&self, iteration: usize) -> f64 {
        self.s0 * self.decay.powi(iteration as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEstimate {
    pub x_star: SplineMotion,
    pub objective_trace: Vec<f64>,
    pub eval_count: usize,
    #[serde(with = "secs")]
    pub wall_time: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Result of a descent on a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub x: Vec<f64>,
    pub trace: Vec<f64>,
    pub eval_count: usize,
}

/// `x⁽ⁿ⁺¹⁾ = x⁽ⁿ⁾ − s⁽ⁿ⁾ · scale ⊙ ∇f(x⁽ⁿ⁾)` for exactly `n_iters` steps.
///
/// `f` is evaluated `n_iters + 1` times; the trace holds every value
/// including the one at the final iterate.
pub fn descend<F>(mut f: F, x0: &[f64], scales: &[f64], config: &OptimConfig) -> Result<Descent>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    config.validate()?;
    if scales.len() != x0.len() {
        return Err(Error::Argument("step scales must match the parameter count".into()));
    }
    let mut x = x0.to_vec();
    let mut trace = Vec::with_capacity(config.n_iters + 1);
    for n in 0..=config.n_iters {
        let (value, grad) = f(&x)?;
        trace.push(value);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: n, trace });
        }
        if n == config.n_iters {
            break;
        }
        let s = config.step(n);
        for ((xi, gi), si) in x.iter_mut().zip(&grad).zip(scales) {
            *xi -= s * si * gi;
        }
    }
    Ok(Descent {
        x,
        eval_count: trace.len(),
        trace,
    })
}

/// Per-entry step scales for a flat `6 × n_nodes` motion vector.
pub fn motion_step_scales(n_nodes: usize, config: &OptimConfig) -> Vec<f64> {
    (0..N_PARAMS * n_nodes)
        .map(|k| {
            if k / n_nodes < 3 {
                config.step_scale_translation
            } else {
                config.step_scale_rotation
            }
        })
        .collect()
}

/// Gradient descent over spline node values.
pub fn gradient_descent<F>(mut f: F, x0: &SplineMotion, config: &OptimConfig) -> Result<MotionEstimate>
where
    F: FnMut(&SplineMotion) -> Result<(f64, SplineMotion)>,
{
    let start = Instant::now();
    let times = x0.node_times.clone();
    let scales = motion_step_scales(x0.n_nodes(), config);
    let d = descend(
        |flat| {
            let (v, g) = f(&SplineMotion::from_flat(times.clone(), flat)?)?;
            Ok((v, g.to_flat()))
        },
        &x0.to_flat(),
        &scales,
        config,
    )?;
    Ok(MotionEstimate {
        x_star: SplineMotion::from_flat(times, &d.x)?,
        objective_trace: d.trace,
        eval_count: d.eval_count,
        wall_time: start.elapsed(),
    })
}

/// `f(x) = q(backproject(stack, P_init · T(x)))` with its gradient
/// `dq/dI · dI/dP · dP/dx`. Gradient images are computed once at
/// construction.
pub struct AutofocusObjective<'a, M> {
    backprojector: Backprojector<'a>,
    p_init: &'a [ProjectionMatrix],
    grid: VolumeGrid,
    metric: M,
}

impl<'a, M: DifferentiableMetric> AutofocusObjective<'a, M> {
    pub fn new(
        stack: &'a ProjectionStack,
        p_init: &'a [ProjectionMatrix],
        grid: VolumeGrid,
        metric: M,
        sampling: GradientSampling,
    ) -> Result<Self> {
        if p_init.len() != stack.n_views {
            return Err(Error::Argument(format!(
                "{} matrices for a stack of {} views",
                p_init.len(),
                stack.n_views
            )));
        }
        grid.validate()?;
        Ok(Self {
            backprojector: Backprojector::new(stack, sampling)?,
            p_init,
            grid,
            metric,
        })
    }

    pub fn p_init(&self) -> &[ProjectionMatrix] {
        self.p_init
    }

    pub fn value(&self, x: &SplineMotion) -> Result<f64> {
        let mats = motion_to_matrices(x, self.p_init)?;
        let vol = self.backprojector.backproject(&mats, &self.grid)?;
        Ok(self.metric.evaluate(&vol)?.0)
    }

    pub fn value_and_gradient(&self, x: &SplineMotion) -> Result<(f64, SplineMotion)> {
        let mats = motion_to_matrices(x, self.p_init)?;
        let vol = self.backprojector.backproject(&mats, &self.grid)?;
        let (q, dq) = self.metric.evaluate(&vol)?;
        let dp = self.backprojector.geometry_vjp(&mats, &self.grid, &dq)?;
        Ok((q, motion_vjp(x, self.p_init, dp.views())?))
    }
}

/// One-shot [`AutofocusObjective::value_and_gradient`] with exact gradient
/// sampling.
pub fn objective_and_gradient<M: DifferentiableMetric>(
    x: &SplineMotion,
    stack: &ProjectionStack,
    p_init: &[ProjectionMatrix],
    grid: &VolumeGrid,
    metric: M,
) -> Result<(f64, SplineMotion)> {
    AutofocusObjective::new(stack, p_init, *grid, metric, GradientSampling::Exact)?.value_and_gradient(x)
}

/// Gradient descent from zero motion with `n_nodes` evenly spaced nodes.
pub fn estimate_motion<M: DifferentiableMetric>(
    stack: &ProjectionStack,
    p_init: &[ProjectionMatrix],
    grid: &VolumeGrid,
    metric: M,
    n_nodes: usize,
    config: &OptimConfig,
) -> Result<MotionEstimate> {
    let objective = AutofocusObjective::new(stack, p_init, *grid, metric, config.gradient_sampling)?;
    let x0 = SplineMotion::zeros(n_nodes, p_init.len());
    x0.validate(p_init.len())?;
    gradient_descent(|x| objective.value_and_gradient(x), &x0, config)
}

/// Settings of the (μ/μ, λ) evolution strategy baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub lambda: usize,
    pub mu: usize,
    pub sigma0: f64,
    pub budget: usize,
    pub seed: u64,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            lambda: 16,
            mu: 8,
            sigma0: 0.5,
            budget: 10_000,
            seed: 0,
        }
    }
}

/// Outcome of [`evolution_strategy`].
#[derive(Debug, Clone, PartialEq)]
pub struct EsResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    /// Best-so-far value after each generation, starting with `f(x0)`.
    pub trace: Vec<f64>,
    pub eval_count: usize,
}

/// Isotropic (μ/μ, λ) evolution strategy with step-size adaptation by
/// the one-fifth success rule.
///
/// Each generation samples `λ` offspring around the current mean, moves the
/// mean to the average of the best `μ`, and rescales `σ` according to the
/// fraction of offspring that beat the mean's value. The mean is
/// re-evaluated every generation, which counts toward the budget.
/// `observe(eval_count, best_x, best_value)` runs after every improvement of
/// the best-so-far point and may return `true` to stop early.
pub fn evolution_strategy<F, O>(mut f: F, x0: &[f64], config: &EsConfig, mut observe: O) -> Result<EsResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
    O: FnMut(usize, &[f64], f64) -> bool,
{
    if config.mu == 0 || config.mu > config.lambda {
        return Err(Error::Config("ES needs 1 <= mu <= lambda".into()));
    }
    if !(config.sigma0.is_finite() && config.sigma0 > 0.0) {
        return Err(Error::Config("ES sigma0 must be positive".into()));
    }
    let dim = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mean = x0.to_vec();
    let mut mean_value = f(&mean)?;
    let mut evals = 1;
    let mut best_x = mean.clone();
    let mut best_value = mean_value;
    let mut trace = vec![best_value];
    let mut sigma = config.sigma0;
    // Damping of the log-step update; ln σ moves by at most ~0.3 per generation.
    let damping = 0.4;

    if observe(evals, &best_x, best_value) {
        return Ok(EsResult { best_x, best_value, trace, eval_count: evals });
    }
    'generations: while evals + config.lambda < config.budget {
        let mut offspring: Vec<(f64, Vec<f64>)> = Vec::with_capacity(config.lambda);
        for _ in 0..config.lambda {
            let x: Vec<f64> = mean
                .iter()
                .map(|m| m + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            let v = f(&x)?;
            evals += 1;
            if v < best_value {
                best_value = v;
                best_x = x.clone();
                if observe(evals, &best_x, best_value) {
                    trace.push(best_value);
                    break 'generations;
                }
            }
            offspring.push((v, x));
        }
        let successes = offspring.iter().filter(|(v, _)| *v < mean_value).count();
        offspring.sort_by(|a, b| a.0.total_cmp(&b.0));
        mean = (0..dim)
            .map(|k| offspring[..config.mu].iter().map(|(_, x)| x[k]).sum::<f64>() / config.mu as f64)
            .collect();
        mean_value = f(&mean)?;
        evals += 1;
        if mean_value < best_value {
            best_value = mean_value;
            best_x = mean.clone();
            if observe(evals, &best_x, best_value) {
                trace.push(best_value);
                break;
            }
        }
        trace.push(best_value);
        let rate = successes as f64 / config.lambda as f64;
        sigma *= (damping * (rate - 0.2) / 0.8).exp();
    }
    Ok(EsResult {
        best_x,
        best_value,
        trace,
        eval_count: evals,
    })
}

/// The evolution-strategy baseline on spline node values, starting from
/// `x0` with a budget of `budget` objective evaluations.
pub fn baseline_gradient_free<F, O>(
    mut objective_only: F,
    x0: &SplineMotion,
    config: &EsConfig,
    mut observe: O,
) -> Result<MotionEstimate>
where
    F: FnMut(&SplineMotion) -> Result<f64>,
    O: FnMut(usize, &SplineMotion, f64) -> bool,
{
    let start = Instant::now();
    let times = x0.node_times.clone();
    let r = evolution_strategy(
        |flat| objective_only(&SplineMotion::from_flat(times.clone(), flat)?),
        &x0.to_flat(),
        config,
        |evals, x, v| match SplineMotion::from_flat(times.clone(), x) {
            Ok(m) => observe(evals, &m, v),
            Err(_) => false,
        },
    )?;
    Ok(MotionEstimate {
        x_star: SplineMotion::from_flat(times, &r.best_x)?,
        objective_trace: r.trace,
        eval_count: r.eval_count,
        wall_time: start.elapsed(),
    })
}
