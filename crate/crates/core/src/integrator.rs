//! Fixed-step classical Runge–Kutta integration.

use crate::error::{Error, Result};
use crate::model::{self, CompartmentState, ModelParams, Seqihr};

/// Values in `(-NEGATIVE_TOLERANCE, 0)` are treated as roundoff and clamped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// A first-order system `y' = f(t, y)` of fixed dimension.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Whether component `index` is a mass that must stay nonnegative.
    fn is_nonnegative(&self, _index: usize) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationConfig {
    /// Step in days.
    pub dt: f64,
    /// Length of the run in days.
    pub horizon: f64,
    pub clamp_negatives: bool,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            dt: 0.25,
            horizon: 365.0,
            clamp_negatives: true,
        }
    }
}

impl IntegrationConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::invalid(
                "dt",
                format!("must lie in (0, 1], got {}", self.dt),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(
                "horizon",
                format!("must be positive, got {}", self.horizon),
            ));
        }
        Ok(())
    }

    /// Number of steps, counting a final partial step.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// Grid of states produced by [`integrate`], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    dim: usize,
    pub times: Vec<f64>,
    data: Vec<f64>,
}

impl Solution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Time series of one component.
    pub fn component(&self, index: usize) -> Vec<f64> {
        self.states().map(|y| y[index]).collect()
    }
}

pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    y0: &[f64],
    config: &IntegrationConfig,
) -> Result<Solution> {
    config.validate()?;
    let dim = system.dim();
    if y0.len() != dim {
        return Err(Error::Config(format!(
            "initial state has {} components, system expects {dim}",
            y0.len()
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t: t0 });
    }

    let n_steps = config.n_steps();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut data = Vec::with_capacity((n_steps + 1) * dim);
    times.push(t0);
    data.extend_from_slice(y0);

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let mut t = t0;
    for step in 1..=n_steps {
        let t_next = if step == n_steps {
            t0 + config.horizon
        } else {
            t0 + step as f64 * config.dt
        };
        let h = t_next - t;

        system.eval(t, &y, &mut k1)?;
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        system.eval(t + 0.5 * h, &tmp, &mut k2)?;
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        system.eval(t + 0.5 * h, &tmp, &mut k3)?;
        for j in 0..dim {
            tmp[j] = y[j] + h * k3[j];
        }
        system.eval(t_next, &tmp, &mut k4)?;
        for j in 0..dim {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }

        for (j, v) in y.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { t: t_next });
            }
            if *v < 0.0 && system.is_nonnegative(j) {
                if *v < -NEGATIVE_TOLERANCE {
                    return Err(Error::StepSize {
                        index: j,
                        value: *v,
                        t: t_next,
                        dt: config.dt,
                    });
                }
                if config.clamp_negatives {
                    *v = 0.0;
                }
            }
        }

        t = t_next;
        times.push(t);
        data.extend_from_slice(&y);
    }

    Ok(Solution { dim, times, data })
}

/// Single-population run on the fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CompartmentState>,
    /// `D(day k+1) − D(day k)` for each whole calendar day of the run.
    pub daily_deaths: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &CompartmentState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn cumulative_deaths(&self) -> f64 {
        self.final_state().d - self.states[0].d
    }
}

pub fn simulate(
    params: &ModelParams,
    initial: &CompartmentState,
    config: &IntegrationConfig,
) -> Result<Trajectory> {
    let sol = integrate(&Seqihr::new(params), initial.t, &initial.to_array(), config)?;
    let states: Vec<CompartmentState> = sol
        .times
        .iter()
        .zip(sol.states())
        .map(|(&t, y)| CompartmentState::from_slice(t, y))
        .collect();
    let deaths = sol.component(model::D);
    let daily = daily_increments(&sol.times, &deaths);
    Ok(Trajectory {
        times: sol.times,
        states,
        daily_deaths: daily,
    })
}

/// Calendar-day increments of the death accumulator.
pub fn daily_deaths(trajectory: &Trajectory) -> Vec<f64> {
    let d: Vec<f64> = trajectory.states.iter().map(|s| s.d).collect();
    daily_increments(&trajectory.times, &d)
}

/// Increments of `values` over consecutive whole days counted from
/// `times[0]`; `floor(span)` entries. Days falling between grid points are
/// read by linear interpolation.
pub fn daily_increments(times: &[f64], values: &[f64]) -> Vec<f64> {
    if times.len() < 2 {
        return Vec::new();
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let days = (span + 1e-9).floor() as usize;
    let mut prev = value_at(times, values, t0);
    (1..=days)
        .map(|k| {
            let cur = value_at(times, values, t0 + k as f64);
            let inc = cur - prev;
            prev = cur;
            inc
        })
        .collect()
}

fn value_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    const SNAP: f64 = 1e-9;
    let idx = times.partition_point(|&x| x < t - SNAP);
    if idx >= times.len() {
        return values[values.len() - 1];
    }
    if (times[idx] - t).abs() <= SNAP || idx == 0 {
        return values[idx];
    }
    let (ta, tb) = (times[idx - 1], times[idx]);
    let w = (t - ta) / (tb - ta);
    values[idx - 1] + w * (values[idx] - values[idx - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -self.0 * y[0];
            Ok(())
        }
    }

    struct Zero;

    impl OdeSystem for Zero {
        fn dim(&self) -> usize {
            3
        }
        fn eval(&self, _t: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy.fill(0.0);
            Ok(())
        }
    }

    /// y' = 1, a unit-rate accumulator.
    struct Ramp;

    impl OdeSystem for Ramp {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = 1.0;
            Ok(())
        }
    }

    struct Sink;

    impl OdeSystem for Sink {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -1.0;
            Ok(())
        }
    }

    struct Blowup;

    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0] * 1e300;
            Ok(())
        }
    }

    fn max_decay_error(dt: f64) -> f64 {
        let sol = integrate(&Decay(1.0), 0.0, &[1.0], &IntegrationConfig::new(dt, 10.0)).unwrap();
        sol.times
            .iter()
            .zip(sol.states())
            .map(|(t, y)| (y[0] - (-t).exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_rhs_keeps_state() {
        let y0 = [0.3, 0.2, 0.5];
        let sol = integrate(&Zero, 0.0, &y0, &IntegrationConfig::default()).unwrap();
        assert_eq!(sol.len(), 1461);
        assert!(sol.states().all(|y| y == y0));
    }

    #[test]
    fn analytic_decay_accuracy() {
        // Leading RK4 truncation term for y' = -y is h^5/120 per step, so the
        // global error peaks near t = 1 at about (t/h)·(h^5/120)·e^{-t}.
        let h: f64 = 0.25;
        let predicted = (1.0 / h) * h.powi(5) / 120.0 * (-1.0f64).exp();
        let err = max_decay_error(h);
        assert!((err / predicted - 1.0).abs() < 0.3, "{err} vs {predicted}");
        assert!(max_decay_error(0.125) <= 1e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        let ratio = max_decay_error(0.25) / max_decay_error(0.125);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn partial_final_step_lands_on_horizon() {
        let cfg = IntegrationConfig::new(0.3, 1.0);
        assert_eq!(cfg.n_steps(), 4);
        let sol = integrate(&Decay(1.0), 0.0, &[1.0], &cfg).unwrap();
        assert_eq!(*sol.times.last().unwrap(), 1.0);
        assert!((sol.last()[0] - (-1.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn unit_rate_accumulator_gives_unit_increments() {
        let sol = integrate(&Ramp, 0.0, &[0.0], &IntegrationConfig::new(0.25, 30.0)).unwrap();
        let inc = daily_increments(&sol.times, &sol.component(0));
        assert_eq!(inc.len(), 30);
        assert!(inc.iter().all(|v| (v - 1.0).abs() < 1e-12));

        // off-grid days go through interpolation
        let sol = integrate(&Ramp, 0.0, &[0.0], &IntegrationConfig::new(0.3, 5.5)).unwrap();
        let inc = daily_increments(&sol.times, &sol.component(0));
        assert_eq!(inc.len(), 5);
        assert!(inc.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_accumulator_gives_zero_increments() {
        let sol = integrate(
            &Zero,
            0.0,
            &[1.0, 2.0, 3.0],
            &IntegrationConfig::new(0.5, 12.0),
        )
        .unwrap();
        let inc = daily_increments(&sol.times, &sol.component(2));
        assert_eq!(inc, vec![0.0; 12]);
    }

    #[test]
    fn overshoot_is_a_step_size_error() {
        let err = integrate(&Sink, 0.0, &[0.5], &IntegrationConfig::new(1.0, 3.0)).unwrap_err();
        assert!(matches!(err, Error::StepSize { index: 0, .. }), "{err}");
    }

    #[test]
    fn roundoff_negatives_are_clamped() {
        let sol = integrate(
            &Sink,
            0.0,
            &[1.0 - 1e-13],
            &IntegrationConfig::new(1.0, 1.0),
        )
        .unwrap();
        assert_eq!(sol.last()[0], 0.0);
        let mut cfg = IntegrationConfig::new(1.0, 1.0);
        cfg.clamp_negatives = false;
        let sol = integrate(&Sink, 0.0, &[1.0 - 1e-13], &cfg).unwrap();
        assert!(sol.last()[0] < 0.0);
    }

    #[test]
    fn blowup_is_reported() {
        let err = integrate(&Blowup, 0.0, &[1.0], &IntegrationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(IntegrationConfig::new(0.0, 10.0).validate().is_err());
        assert!(IntegrationConfig::new(1.5, 10.0).validate().is_err());
        assert!(IntegrationConfig::new(0.5, -1.0).validate().is_err());
    }
}
