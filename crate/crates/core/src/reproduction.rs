//! Linearization and reproduction numbers.
//!
//! The Jacobian is the analytic derivative of [`crate::model::rhs`] in the
//! canonical `S, E, I, Q, H, R` ordering. The control reproduction number is
//! evaluated in closed form and checked against a behavioural oracle: the
//! growth rate of a small seed introduced at the disease-free state.

use nalgebra::Matrix6;

use crate::equilibria::{disease_free_equilibrium, EquilibriumCoefficients};
use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegrationConfig, OdeSystem};
use crate::model::{
    force_of_infection, rhs_slice, CompartmentState, ModelParams, E, H, I, N_COMPARTMENTS, Q, R, S,
    STATE_DIM,
};

/// Tolerance under which a growth rate counts as zero.
pub const GROWTH_ZERO_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproductionReport {
    pub r_c: f64,
    pub r_0: f64,
    /// Per-day log growth rate of a small seed at the disease-free state.
    pub growth_rate: f64,
    pub threshold_consistent: bool,
}

pub fn jacobian(params: &ModelParams, state: &CompartmentState) -> Result<Matrix6<f64>> {
    let n = state.n();
    if n == 0.0 {
        return Err(Error::Degenerate("total population N is zero".into()));
    }
    let p = params;
    let m = p.outflows();
    let beta = p.beta.at(state.t);
    let force = force_of_infection(p, state);
    let s = state.s;
    let common = s * force / (n * n);

    // partial derivatives of the incidence S·L/N
    let mut dinc = [0.0; N_COMPARTMENTS];
    dinc[S] = force / n - common;
    dinc[E] = s * beta * p.eps_e / n - common;
    dinc[I] = s * beta / n - common;
    dinc[Q] = s * beta * p.eps_q / n - common;
    dinc[H] = s * beta * p.eps_h / n - common;
    dinc[R] = -common;

    let mut j = Matrix6::zeros();
    for c in 0..N_COMPARTMENTS {
        j[(S, c)] = -dinc[c];
        j[(E, c)] = dinc[c];
    }
    j[(S, S)] -= m.m_s;
    j[(S, R)] += p.s_r;
    j[(E, E)] -= m.m_e;

    j[(I, E)] = p.sigma_e;
    j[(I, I)] = -m.m_i;

    j[(Q, E)] = p.gamma_e;
    j[(Q, Q)] = -m.m_q;

    j[(H, I)] = p.gamma_i;
    j[(H, Q)] = p.sigma_q;
    j[(H, H)] = -m.m_h;

    j[(R, S)] = p.nu;
    j[(R, I)] = p.r_i;
    j[(R, Q)] = if p.strict_paper_eq6 { 0.0 } else { p.r_q };
    j[(R, H)] = p.r_h;
    j[(R, R)] = -m.m_r;
    Ok(j)
}

/// Central-difference Jacobian of the live compartments with one Richardson
/// extrapolation step. Used as the independent check on [`jacobian`] and as
/// a fallback inside Newton iterations.
pub fn finite_difference_jacobian(
    params: &ModelParams,
    state: &CompartmentState,
    step: f64,
) -> Result<Matrix6<f64>> {
    let base = state.to_array();
    let mut out = Matrix6::zeros();
    let central = |col: usize, h: f64| -> Result<[f64; STATE_DIM]> {
        let mut plus = base;
        let mut minus = base;
        plus[col] += h;
        minus[col] -= h;
        let mut fp = [0.0; STATE_DIM];
        let mut fm = [0.0; STATE_DIM];
        rhs_slice(params, state.t, &plus, &mut fp)?;
        rhs_slice(params, state.t, &minus, &mut fm)?;
        let mut d = [0.0; STATE_DIM];
        for k in 0..STATE_DIM {
            d[k] = (fp[k] - fm[k]) / (2.0 * h);
        }
        Ok(d)
    };
    for col in 0..N_COMPARTMENTS {
        let h = step * base[col].abs().max(1.0);
        let coarse = central(col, h)?;
        let fine = central(col, h / 2.0)?;
        for row in 0..N_COMPARTMENTS {
            out[(row, col)] = fine[row] + (fine[row] - coarse[row]) / 3.0;
        }
    }
    Ok(out)
}

/// Control reproduction number at `state`:
///
/// `R_C = (S/N)·(μα_I N + α_S L) / (μα_S N + μα_S L/M_S + (L·S/N)(r_I + r_H α_H + μ(1 + α_E + α_Q + α_H)))`
pub fn control_reproduction_number(params: &ModelParams, state: &CompartmentState) -> Result<f64> {
    let n = state.n();
    if !(n > 0.0) {
        return Err(Error::Degenerate(
            "total population N must be positive".into(),
        ));
    }
    if !(params.sigma_e > 0.0) {
        return Err(Error::Degenerate("sigma_e must be positive".into()));
    }
    let c = EquilibriumCoefficients::new(params, state.t);
    let m = c.outflows;
    if [m.m_s, m.m_e, m.m_i, m.m_q, m.m_h, m.m_r]
        .iter()
        .any(|v| !(*v > 0.0))
    {
        return Err(Error::Degenerate(
            "every outflow coefficient must be positive".into(),
        ));
    }
    let mu = params.mu;
    let l = force_of_infection(params, state);
    let s = state.s;
    let numer = mu * c.alpha_i * n + c.alpha_s * l;
    let denom = mu * c.alpha_s * n
        + mu * c.alpha_s * l / m.m_s
        + (l * s / n)
            * (params.r_i
                + params.r_h * c.alpha_h
                + mu * (1.0 + c.alpha_e + c.alpha_q + c.alpha_h));
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "reproduction number denominator is {denom:e}"
        )));
    }
    Ok(s / n * numer / denom)
}

/// `R_C` at the disease-free equilibrium.
pub fn basic_reproduction_number(params: &ModelParams) -> Result<f64> {
    let dfe = disease_free_equilibrium(params)?;
    control_reproduction_number(params, &dfe.state)
}

/// Parameters used by the seed-growth oracle: no vaccination and births
/// balancing natural deaths of a unit population.
pub fn oracle_params(params: &ModelParams) -> ModelParams {
    ModelParams {
        nu: 0.0,
        pi_birth: params.mu,
        ..params.clone()
    }
}

const SEED: f64 = 1e-8;
const ORACLE_DAYS: f64 = 60.0;
const FIT_FROM_DAY: usize = 30;

/// Infective compartments `E, I, Q, H` linearized about the disease-free
/// state: the susceptible fraction is frozen at `S*/N*`.
struct SeedGrowth<'a> {
    params: &'a ModelParams,
    susceptible_fraction: f64,
}

impl OdeSystem for SeedGrowth<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let p = self.params;
        let m = p.outflows();
        let (e, i, q, h) = (y[0], y[1], y[2], y[3]);
        let force = p.beta.at(t) * (i + p.eps_e * e + p.eps_q * q + p.eps_h * h);
        dy[0] = self.susceptible_fraction * force - m.m_e * e;
        dy[1] = p.sigma_e * e - m.m_i * i;
        dy[2] = p.gamma_e * e - m.m_q * q;
        dy[3] = p.gamma_i * i + p.sigma_q * q - m.m_h * h;
        Ok(())
    }
}

/// Log-linear growth rate of `E + I` over days 30–60 after seeding
/// `E = 1e-8` into the disease-free state of [`oracle_params`].
///
/// The seed is propagated with susceptible depletion switched off, so the
/// rate stays the small-seed rate even when a large contact rate would
/// exhaust susceptibles inside the window.
pub fn threshold_oracle(params: &ModelParams) -> Result<f64> {
    let p = oracle_params(params);
    let dfe = disease_free_equilibrium(&p)?;
    let system = SeedGrowth {
        params: &p,
        susceptible_fraction: dfe.state.s / dfe.state.n(),
    };
    let sol = integrate(
        &system,
        0.0,
        &[SEED, 0.0, 0.0, 0.0],
        &IntegrationConfig::new(0.25, ORACLE_DAYS),
    )?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (t, y) in sol.times.iter().zip(sol.states()) {
        let day = t.round();
        if (t - day).abs() > 1e-9 || (day as usize) < FIT_FROM_DAY {
            continue;
        }
        let v = y[0] + y[1];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonFinite { t: *t });
        }
        xs.push(*t);
        ys.push(v.ln());
    }
    Ok(least_squares_slope(&xs, &ys))
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn sign_with_tolerance(v: f64, tol: f64) -> i8 {
    if v > tol {
        1
    } else if v < -tol {
        -1
    } else {
        0
    }
}

/// `R_C` at `state`, `R_0`, and the seed-growth verdict.
pub fn reproduction_report(
    params: &ModelParams,
    state: &CompartmentState,
) -> Result<ReproductionReport> {
    let r_c = control_reproduction_number(params, state)?;
    let r_0 = basic_reproduction_number(&oracle_params(params))?;
    let growth_rate = threshold_oracle(params)?;
    let threshold_consistent = sign_with_tolerance(r_0 - 1.0, GROWTH_ZERO_TOLERANCE)
        == sign_with_tolerance(growth_rate, GROWTH_ZERO_TOLERANCE);
    Ok(ReproductionReport {
        r_c,
        r_0,
        growth_rate,
        threshold_consistent,
    })
}

/// Bisects the constant contact rate at which the oracle growth rate
/// changes sign. `lo` must give decay and `hi` growth.
pub fn critical_beta(params: &ModelParams, mut lo: f64, mut hi: f64) -> Result<f64> {
    let g_lo = threshold_oracle(&params.with_beta(lo))?;
    let g_hi = threshold_oracle(&params.with_beta(hi))?;
    if !(g_lo < 0.0 && g_hi > 0.0) {
        return Err(Error::Degenerate(format!(
            "bracket [{lo}, {hi}] does not straddle the threshold (growth {g_lo:e}, {g_hi:e})"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if threshold_oracle(&params.with_beta(mid))? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::sample_params;
    use crate::model::BetaSchedule;

    fn random_state(k: u64) -> CompartmentState {
        // cheap deterministic pseudo-random fill; proptest covers the rest
        let mut x = k
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x % 10_000) as f64 / 10_000.0
        };
        CompartmentState {
            t: 0.0,
            s: 0.2 + next(),
            e: next() * 0.1,
            i: next() * 0.1,
            q: next() * 0.1,
            h: next() * 0.1,
            r: next() * 0.3,
            d: 0.0,
        }
    }

    fn max_rel_dev(a: &Matrix6<f64>, b: &Matrix6<f64>) -> f64 {
        let scale = b.amax().max(1e-12);
        (a - b).amax() / scale
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let p = sample_params();
        for k in 0..25 {
            let st = random_state(k + 1);
            let a = jacobian(&p, &st).unwrap();
            let fd = finite_difference_jacobian(&p, &st, 1e-6).unwrap();
            assert!(
                max_rel_dev(&a, &fd) <= 1e-6,
                "state {k}: {}",
                max_rel_dev(&a, &fd)
            );
        }
    }

    #[test]
    fn zero_transmission_is_block_triangular() {
        let p = sample_params().with_beta(0.0);
        let st = CompartmentState {
            s: 0.9,
            r: 0.1,
            ..Default::default()
        };
        let j = jacobian(&p, &st).unwrap();
        let m = p.outflows();
        let diag = [-m.m_s, -m.m_e, -m.m_i, -m.m_q, -m.m_h, -p.mu - p.s_r];
        for k in 0..6 {
            assert!((j[(k, k)] - diag[k]).abs() < 1e-15);
        }
        // no infection pathway feeds S→E
        assert_eq!(j[(E, I)], 0.0);
        assert_eq!(j[(E, H)], 0.0);
        assert_eq!(j[(S, I)], 0.0);
        assert_eq!(j[(I, E)], p.sigma_e);
        assert_eq!(j[(Q, E)], p.gamma_e);
        assert_eq!(j[(H, I)], p.gamma_i);
        assert_eq!(j[(H, Q)], p.sigma_q);
        assert_eq!(j[(R, S)], p.nu);
        assert_eq!(j[(S, R)], p.s_r);
    }

    #[test]
    fn column_sums_differentiate_mass_balance() {
        let p = sample_params();
        let st = random_state(7);
        let j = jacobian(&p, &st).unwrap();
        for c in 0..6 {
            let col: f64 = (0..6).map(|r| j[(r, c)]).sum();
            let expected =
                -p.mu - if c == I { p.d_i } else { 0.0 } - if c == H { p.d_h } else { 0.0 };
            assert!(
                (col - expected).abs() < 1e-14,
                "column {c}: {col} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_beta_gives_zero_rc() {
        let p = sample_params().with_beta(0.0);
        let st = random_state(3);
        assert_eq!(control_reproduction_number(&p, &st).unwrap(), 0.0);
    }

    #[test]
    fn rc_at_disease_free_state_simplifies() {
        let p = sample_params();
        let dfe = disease_free_equilibrium(&p).unwrap();
        let c = EquilibriumCoefficients::new(&p, 0.0);
        let general = dfe.state.s / dfe.state.n() * c.alpha_i / c.alpha_s;
        let rc = control_reproduction_number(&p, &dfe.state).unwrap();
        assert!((rc - general).abs() <= 1e-12 * general, "{rc} vs {general}");

        // without waning immunity S*/N* = μ/M_S
        let mut p = p;
        p.s_r = 0.0;
        let dfe = disease_free_equilibrium(&p).unwrap();
        let c = EquilibriumCoefficients::new(&p, 0.0);
        let expected = p.mu / c.outflows.m_s * c.alpha_i / c.alpha_s;
        let rc = control_reproduction_number(&p, &dfe.state).unwrap();
        assert!(
            (rc - expected).abs() <= 1e-12 * expected,
            "{rc} vs {expected}"
        );
    }

    #[test]
    fn rc_increases_with_beta() {
        let st = random_state(11);
        let mut prev = -1.0;
        for k in 0..20 {
            let p = sample_params().with_beta(0.02 * k as f64);
            let rc = control_reproduction_number(&p, &st).unwrap();
            assert!(rc > prev);
            prev = rc;
        }
    }

    #[test]
    fn oracle_sign_regimes() {
        let p = sample_params();
        assert!(threshold_oracle(&p.with_beta(0.0)).unwrap() < 0.0);
        assert!(threshold_oracle(&p.with_beta(2.0)).unwrap() > 0.0);
    }

    #[test]
    fn critical_beta_sits_at_unit_r0() {
        let p = sample_params();
        let b = critical_beta(&p, 0.01, 1.0).unwrap();
        let r0 = basic_reproduction_number(&oracle_params(&p.with_beta(b))).unwrap();
        assert!((r0 - 1.0).abs() <= 0.05, "beta* {b} gives R0 {r0}");
    }

    #[test]
    fn degenerate_inputs() {
        let p = sample_params();
        assert!(jacobian(&p, &CompartmentState::default()).is_err());
        assert!(control_reproduction_number(&p, &CompartmentState::default()).is_err());
        let mut p0 = p.clone();
        p0.beta = BetaSchedule::constant(0.3);
        p0.sigma_e = 0.0;
        assert!(control_reproduction_number(&p0, &random_state(1)).is_err());
    }
}
