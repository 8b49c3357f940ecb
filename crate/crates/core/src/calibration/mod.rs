//! Fitting the contact-rate schedule and initial exposed mass to a daily
//! death series.
//!
//! The unknowns are one `β` per user-given segment and `E(0)`. The objective
//! is the RMSE between the 7-day centered moving averages of the model's
//! daily deaths (scaled to an absolute population) and of the data. It is
//! minimized with Nelder–Mead in log coordinates from several jittered
//! starting simplices.

pub mod defaults;
pub mod series;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use defaults::{default_params, params_from_text, params_to_text};
pub use series::{load_death_csv, moving_average, DeathSeries, WINDOW};

use crate::error::{Error, Result};
use crate::integrator::{simulate, IntegrationConfig};
use crate::model::{BetaSchedule, CompartmentState, ModelParams};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// 2020 US resident population.
pub const US_POPULATION: f64 = 331.0e6;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Absolute population the normalized model is scaled by.
    pub population: f64,
    /// Open search interval for `E(0)` as a fraction of the population.
    pub e0_bounds: (f64, f64),
    pub e0_start: f64,
    pub restarts: usize,
    pub seed: u64,
    pub size_tol: f64,
    /// Evaluation budget of each restart.
    pub max_evals: usize,
    pub dt: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            population: US_POPULATION,
            e0_bounds: (1e-9, 1e-3),
            e0_start: 1e-6,
            restarts: 5,
            seed: 0,
            size_tol: 1e-8,
            max_evals: 2000,
            dt: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_segments: BetaSchedule,
    pub e0: f64,
    /// Deaths per day, on the smoothed series.
    pub rmse: f64,
    /// Cumulative model deaths over the series span.
    pub total_deaths_model: f64,
    /// Objective evaluations over all restarts.
    pub iterations: usize,
    pub converged: bool,
    /// Best RMSE after each restart.
    pub restart_best: Vec<f64>,
}

impl FitResult {
    /// `segment_start,beta` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment_start,beta\n");
        for (s, b) in self.beta_segments.segments() {
            out.push_str(&format!("{s},{b}\n"));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "e0={} rmse={} total_deaths_model={} iterations={} converged={}",
            self.e0, self.rmse, self.total_deaths_model, self.iterations, self.converged
        )
    }
}

/// Model daily deaths in absolute counts for `days` whole days, starting
/// from a fully susceptible unit population with `e0` exposed.
pub fn model_daily_deaths(
    params: &ModelParams,
    e0: f64,
    days: usize,
    population: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let traj = simulate(
        params,
        &CompartmentState::seeded(1.0, e0),
        &IntegrationConfig::new(dt, days as f64),
    )?;
    Ok(traj.daily_deaths.iter().map(|d| d * population).collect())
}

/// RMSE between the smoothed model deaths and `series.smoothed`.
pub fn smoothed_rmse(model_daily: &[f64], series: &DeathSeries) -> f64 {
    let model = moving_average(model_daily, WINDOW);
    let n = model.len().min(series.smoothed.len());
    if n == 0 {
        return f64::NAN;
    }
    let sse: f64 = model[..n]
        .iter()
        .zip(&series.smoothed[..n])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (sse / n as f64).sqrt()
}

/// Recomputes the objective for a given schedule and seed.
pub fn fit_rmse(
    params: &ModelParams,
    e0: f64,
    series: &DeathSeries,
    population: f64,
    dt: f64,
) -> Result<f64> {
    let daily = model_daily_deaths(params, e0, series.len(), population, dt)?;
    Ok(smoothed_rmse(&daily, series))
}

/// Model-generated series, for inverse-crime checks.
pub fn synthetic_series(
    params: &ModelParams,
    e0: f64,
    start: NaiveDate,
    days: usize,
    population: f64,
) -> Result<DeathSeries> {
    let daily = model_daily_deaths(params, e0, days, population, 0.25)?;
    DeathSeries::from_values(start, daily)
}

/// Two-wave check on a daily curve: the largest values inside
/// `first` and `second` (index ranges) must both be local maxima and the
/// lowest point between them must fall below `dip` times the smaller peak.
/// Returns `(first_peak, second_peak, trough)` indices.
pub fn two_peaks(
    values: &[f64],
    first: std::ops::Range<usize>,
    second: std::ops::Range<usize>,
    dip: f64,
) -> Option<(usize, usize, usize)> {
    let argmax = |r: std::ops::Range<usize>| {
        let r = r.start.min(values.len())..r.end.min(values.len());
        r.clone().max_by(|&a, &b| values[a].total_cmp(&values[b]))
    };
    let a = argmax(first)?;
    let b = argmax(second)?;
    if a >= b {
        return None;
    }
    let is_local_max = |k: usize| {
        k > 0 && k + 1 < values.len() && values[k] >= values[k - 1] && values[k] >= values[k + 1]
    };
    if !is_local_max(a) || !is_local_max(b) {
        return None;
    }
    let trough = (a..=b).min_by(|&x, &y| values[x].total_cmp(&values[y]))?;
    (values[trough] < dip * values[a].min(values[b])).then_some((a, b, trough))
}

fn check_breaks(breaks: &[usize], days: usize) -> Result<()> {
    if breaks.is_empty() {
        return Err(Error::invalid("segment_breaks", "need at least one segment"));
    }
    if breaks[0] != 0 {
        return Err(Error::invalid("segment_breaks", "first segment must start at day 0"));
    }
    if breaks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("segment_breaks", "must be strictly increasing"));
    }
    if *breaks.last().unwrap() >= days {
        return Err(Error::invalid(
            "segment_breaks",
            format!("last break {} lies beyond the {days}-day series", breaks.last().unwrap()),
        ));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained coordinates to `(β per segment, E(0))`.
struct Coordinates {
    ln_lo: f64,
    ln_hi: f64,
}

impl Coordinates {
    fn decode(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let k = x.len() - 1;
        let betas = x[..k].iter().map(|v| v.exp()).collect();
        let e0 = (self.ln_lo + (self.ln_hi - self.ln_lo) * sigmoid(x[k])).exp();
        (betas, e0)
    }

    fn encode(&self, betas: &[f64], e0: f64) -> Vec<f64> {
        let frac = ((e0.ln() - self.ln_lo) / (self.ln_hi - self.ln_lo)).clamp(1e-6, 1.0 - 1e-6);
        betas
            .iter()
            .map(|b| b.max(1e-12).ln())
            .chain(std::iter::once(logit(frac)))
            .collect()
    }
}

/// Least-squares fit of one `β` per segment and `E(0)`. `segment_breaks`
/// are segment start days counted from the first day of `series`.
///
/// When no restart meets the simplex-size tolerance the best point found is
/// still returned, with `converged = false`.
pub fn fit(
    params_base: &ModelParams,
    series: &DeathSeries,
    segment_breaks: &[usize],
    opts: &FitOptions,
) -> Result<FitResult> {
    params_base.validate()?;
    let (lo, hi) = opts.e0_bounds;
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(Error::invalid(
            "e0_bounds",
            format!("need 0 < lo < hi < 1, got ({lo}, {hi})"),
        ));
    }
    if !(opts.population > 0.0) {
        return Err(Error::invalid("population", "must be positive"));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts", "need at least one"));
    }
    check_breaks(segment_breaks, series.len())?;

    let starts: Vec<f64> = segment_breaks.iter().map(|&b| b as f64).collect();
    let coords = Coordinates {
        ln_lo: lo.ln(),
        ln_hi: hi.ln(),
    };
    let beta0: Vec<f64> = starts
        .iter()
        .map(|&s| params_base.beta.at(s).max(1e-3))
        .collect();
    let x0 = coords.encode(&beta0, opts.e0_start.clamp(lo, hi));
    let dim = x0.len();

    let objective = |x: &[f64]| -> f64 {
        let (betas, e0) = coords.decode(x);
        let Ok(schedule) = BetaSchedule::from_breaks(&starts, &betas) else {
            return f64::NAN;
        };
        let p = ModelParams {
            beta: schedule,
            ..params_base.clone()
        };
        fit_rmse(&p, e0, series, opts.population, opts.dt).unwrap_or(f64::NAN)
    };

    let mut nm = NelderMeadOptions::new(dim, 0.2);
    nm.initial_step[dim - 1] = 1.0;
    nm.size_tol = opts.size_tol;
    nm.max_evals = opts.max_evals;

    let runs: Vec<_> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| {
            let mut start = x0.clone();
            let mut local = nm.clone();
            if k > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
                for (j, v) in start.iter_mut().enumerate() {
                    let amp = if j == dim - 1 { 1.0 } else { 0.3 };
                    *v += amp * rng.gen_range(-1.0..1.0);
                }
                for s in local.initial_step.iter_mut() {
                    *s *= rng.gen_range(0.5..1.5);
                }
            }
            nelder_mead(objective, &start, &local)
        })
        .collect();

    let mut restart_best = Vec::with_capacity(runs.len());
    let mut best = 0;
    for (k, run) in runs.iter().enumerate() {
        if run.f < runs[best].f {
            best = k;
        }
        restart_best.push(runs[best].f);
    }
    let run = &runs[best];
    if !run.f.is_finite() {
        return Err(Error::NonConvergence(
            "every restart ended on an infeasible point".into(),
        ));
    }
    let (betas, e0) = coords.decode(&run.x);
    let schedule = BetaSchedule::from_breaks(&starts, &betas)?;
    let p = ModelParams {
        beta: schedule.clone(),
        ..params_base.clone()
    };
    let daily = model_daily_deaths(&p, e0, series.len(), opts.population, opts.dt)?;
    Ok(FitResult {
        beta_segments: schedule,
        e0,
        rmse: smoothed_rmse(&daily, series),
        total_deaths_model: daily.iter().sum(),
        iterations: runs.iter().map(|r| r.evals).sum(),
        converged: run.converged,
        restart_best,
    })
}
