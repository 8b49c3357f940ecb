//! Single-population SEQIHR dynamics.
//!
//! Compartments are ordered `S, E, I, Q, H, R` followed by the cumulative
//! COVID death accumulator `D`. All rates are per day and populations are
//! normalized so that `N(0) = 1` unless a caller chooses otherwise.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::integrator::OdeSystem;

/// Number of live compartments (`S, E, I, Q, H, R`).
pub const N_COMPARTMENTS: usize = 6;
/// Live compartments plus the death accumulator.
pub const STATE_DIM: usize = 7;

pub const S: usize = 0;
pub const E: usize = 1;
pub const I: usize = 2;
pub const Q: usize = 3;
pub const H: usize = 4;
pub const R: usize = 5;
pub const D: usize = 6;

/// Piecewise-constant effective contact rate `β(t)`.
///
/// Each segment is `(start_day, value)`; the first segment starts at day 0
/// and start days are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSchedule {
    segments: Vec<(f64, f64)>,
}

impl BetaSchedule {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("beta", "schedule has no segments"));
        }
        if segments[0].0 != 0.0 {
            return Err(Error::invalid("beta", "first segment must start at day 0"));
        }
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(
                    "beta",
                    format!("segment starts not strictly increasing at day {}", w[1].0),
                ));
            }
        }
        for &(start, value) in &segments {
            if !start.is_finite() || !value.is_finite() || value < 0.0 {
                return Err(Error::invalid(
                    "beta",
                    format!("bad segment ({start}, {value})"),
                ));
            }
        }
        Ok(Self { segments })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            segments: vec![(0.0, value)],
        }
    }

    /// Builds a schedule from segment start days and one value per segment.
    pub fn from_breaks(starts: &[f64], values: &[f64]) -> Result<Self> {
        if starts.len() != values.len() {
            return Err(Error::invalid(
                "beta",
                format!("{} starts but {} values", starts.len(), values.len()),
            ));
        }
        Self::new(starts.iter().copied().zip(values.iter().copied()).collect())
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        // segments are few; a linear scan from the back is fastest in practice
        for &(start, value) in self.segments.iter().rev() {
            if t >= start {
                return value;
            }
        }
        self.segments[0].1
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn starts(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.1).collect()
    }

    /// Same segment starts with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|&(s, v)| (s, v * factor))
                .collect(),
        }
    }
}

/// Text form `start:value;start:value;...`, e.g. `0:0.21;75:0.12`.
impl fmt::Display for BetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (start, value)) in self.segments.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            write!(f, "{start}:{value}")?;
        }
        Ok(())
    }
}

impl FromStr for BetaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if !s.contains(':') {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::invalid("beta", format!("cannot parse `{s}`")))?;
            return Self::new(vec![(0.0, v)]);
        }
        let mut segments = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::invalid("beta", format!("segment `{part}` lacks `:`")))?;
            let start: f64 = a
                .trim()
                .parse()
                .map_err(|_| Error::invalid("beta", format!("bad start day `{a}`")))?;
            let value: f64 = b
                .trim()
                .parse()
                .map_err(|_| Error::invalid("beta", format!("bad value `{b}`")))?;
            segments.push((start, value));
        }
        Self::new(segments)
    }
}

/// Epidemiological rates of the SEQIHR model, all per day.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Inflow of new susceptibles (Π), population units per day.
    pub pi_birth: f64,
    /// Natural death rate (μ).
    pub mu: f64,
    /// Vaccination rate of susceptibles (ν).
    pub nu: f64,
    pub beta: BetaSchedule,
    /// Contact modifiers for exposed, quarantined and hospitalized people.
    pub eps_e: f64,
    pub eps_q: f64,
    pub eps_h: f64,
    /// Loss of immunity, R back to S.
    pub s_r: f64,
    pub gamma_e: f64,
    pub gamma_i: f64,
    pub r_i: f64,
    pub r_h: f64,
    pub r_q: f64,
    pub sigma_e: f64,
    pub sigma_q: f64,
    pub d_i: f64,
    pub d_h: f64,
    /// Drop the `r_Q·Q` inflow into R, reproducing the recovered equation
    /// in its literal printed form. Breaks mass balance; comparison runs only.
    pub strict_paper_eq6: bool,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("pi_birth", self.pi_birth),
            ("mu", self.mu),
            ("nu", self.nu),
            ("s_r", self.s_r),
            ("gamma_e", self.gamma_e),
            ("gamma_i", self.gamma_i),
            ("r_i", self.r_i),
            ("r_h", self.r_h),
            ("r_q", self.r_q),
            ("sigma_e", self.sigma_e),
            ("sigma_q", self.sigma_q),
            ("d_i", self.d_i),
            ("d_h", self.d_h),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("eps_e", self.eps_e),
            ("eps_q", self.eps_q),
            ("eps_h", self.eps_h),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        // re-run the schedule checks in case segments were edited in place
        BetaSchedule::new(self.beta.segments.clone())?;
        Ok(())
    }

    pub fn outflows(&self) -> OutflowCoefficients {
        OutflowCoefficients::new(self)
    }

    /// Copy with a constant contact rate.
    pub fn with_beta(&self, beta: f64) -> Self {
        Self {
            beta: BetaSchedule::constant(beta),
            ..self.clone()
        }
    }
}

/// Aggregate per-day exit rate of each compartment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutflowCoefficients {
    pub m_s: f64,
    pub m_e: f64,
    pub m_i: f64,
    pub m_q: f64,
    pub m_h: f64,
    pub m_r: f64,
}

impl OutflowCoefficients {
    pub fn new(p: &ModelParams) -> Self {
        Self {
            m_s: p.nu + p.mu,
            m_e: p.gamma_e + p.sigma_e + p.mu,
            m_i: p.gamma_i + p.d_i + p.r_i + p.mu,
            m_q: p.r_q + p.sigma_q + p.mu,
            m_h: p.d_h + p.r_h + p.mu,
            m_r: p.mu + p.s_r,
        }
    }
}

/// Compartment masses at time `t`. `N` is always derived from the six live
/// compartments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompartmentState {
    pub t: f64,
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub q: f64,
    pub h: f64,
    pub r: f64,
    /// Cumulative COVID deaths.
    pub d: f64,
}

impl CompartmentState {
    /// Fully susceptible population of size `n` with `e0` of it exposed.
    pub fn seeded(n: f64, e0: f64) -> Self {
        Self {
            s: n - e0,
            e: e0,
            ..Self::default()
        }
    }

    #[inline]
    pub fn n(&self) -> f64 {
        self.s + self.e + self.i + self.q + self.h + self.r
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.s, self.e, self.i, self.q, self.h, self.r, self.d]
    }

    pub fn from_slice(t: f64, y: &[f64]) -> Self {
        Self {
            t,
            s: y[S],
            e: y[E],
            i: y[I],
            q: y[Q],
            h: y[H],
            r: y[R],
            d: y.get(D).copied().unwrap_or(0.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Time derivatives of every compartment, per day.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivative {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub q: f64,
    pub h: f64,
    pub r: f64,
    pub d: f64,
}

impl Derivative {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.s, self.e, self.i, self.q, self.h, self.r, self.d]
    }

    pub fn max_abs_live(&self) -> f64 {
        self.to_array()[..N_COMPARTMENTS]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// `L = β(t)·(I + ε_E·E + ε_Q·Q + ε_H·H)`.
#[inline]
pub fn force_of_infection(params: &ModelParams, state: &CompartmentState) -> f64 {
    params.beta.at(state.t)
        * (state.i + params.eps_e * state.e + params.eps_q * state.q + params.eps_h * state.h)
}

pub fn rhs(params: &ModelParams, state: &CompartmentState) -> Result<Derivative> {
    let mut dy = [0.0; STATE_DIM];
    rhs_slice(params, state.t, &state.to_array(), &mut dy)?;
    Ok(Derivative {
        s: dy[S],
        e: dy[E],
        i: dy[I],
        q: dy[Q],
        h: dy[H],
        r: dy[R],
        d: dy[D],
    })
}

/// Slice form of [`rhs`] used by the integrator; `y` and `dy` have length
/// [`STATE_DIM`].
#[inline]
pub fn rhs_slice(p: &ModelParams, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let (s, e, i, q, h, r) = (y[S], y[E], y[I], y[Q], y[H], y[R]);
    let n = s + e + i + q + h + r;
    if n == 0.0 {
        return Err(Error::Degenerate("total population N is zero".into()));
    }
    let m = OutflowCoefficients::new(p);
    let force = p.beta.at(t) * (i + p.eps_e * e + p.eps_q * q + p.eps_h * h);
    let incidence = s * force / n;
    let q_recovery = if p.strict_paper_eq6 { 0.0 } else { p.r_q * q };

    dy[S] = p.pi_birth - incidence - m.m_s * s + p.s_r * r;
    dy[E] = incidence - m.m_e * e;
    dy[I] = p.sigma_e * e - m.m_i * i;
    dy[Q] = p.gamma_e * e - m.m_q * q;
    dy[H] = p.gamma_i * i + p.sigma_q * q - m.m_h * h;
    dy[R] = p.nu * s + p.r_i * i + q_recovery + p.r_h * h - m.m_r * r;
    dy[D] = p.d_i * i + p.d_h * h;
    Ok(())
}

/// Residual of the population identity `dN/dt = Π − μN − d_I·I − d_H·H`.
pub fn mass_balance(params: &ModelParams, state: &CompartmentState, deriv: &Derivative) -> f64 {
    let dn = deriv.s + deriv.e + deriv.i + deriv.q + deriv.h + deriv.r;
    let expected =
        params.pi_birth - params.mu * state.n() - params.d_i * state.i - params.d_h * state.h;
    dn - expected
}

/// The SEQIHR right-hand side as an [`OdeSystem`] over `[S, E, I, Q, H, R, D]`.
#[derive(Debug, Clone, Copy)]
pub struct Seqihr<'a> {
    pub params: &'a ModelParams,
}

impl<'a> Seqihr<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self { params }
    }
}

impl OdeSystem for Seqihr<'_> {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        rhs_slice(self.params, t, y, dy)
    }
}
