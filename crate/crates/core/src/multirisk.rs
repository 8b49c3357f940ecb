//! Age-stratified SEQIHR with lockdown, employment and social cost.
//!
//! Every group runs the single-population flows with its own fatality rates.
//! Groups meet through a shared force of infection in which a locked-down
//! fraction neither infects nor is infected:
//! `L_i = β(t)·(1 − θL_i(t))·Σ_j ρ_ij·(1 − θL_j(t))·(I_j + ε_E E_j + ε_Q Q_j + ε_H H_j)/N`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegrationConfig, OdeSystem, Solution};
use crate::model::{CompartmentState, ModelParams, Seqihr, D, E, H, I, Q, R, S, STATE_DIM};

/// Daily interest rate.
pub const DAILY_RATE: f64 = 0.01 / 365.0;
/// Tolerance on `Σ n_i = 1`; the published shares add to 0.999.
pub const SHARE_TOLERANCE: f64 = 1e-2;

const COHORT_DAYS: f64 = 730.0;
const SECANT_MAX_ITER: usize = 50;
const SECANT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MrGroupParams {
    /// Short label used in CSV headers (`L_<name>`).
    pub name: String,
    /// Population share `N_i`.
    pub n: f64,
    /// Daily production per worker.
    pub w: f64,
    /// Largest admissible lockdown level.
    pub lbar: f64,
    /// Target infection fatality ratio; `None` keeps the base death rates.
    pub ifr: Option<f64>,
    /// Share of recovered allowed to work.
    pub kappa: f64,
    /// Remaining work time in days.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrParams {
    /// Shared rates. `beta` is the unmitigated contact rate and `pi_birth`
    /// the inflow into the whole population, split by `n_i`.
    pub base: ModelParams,
    pub groups: Vec<MrGroupParams>,
    /// Lockdown effectiveness `θ`.
    pub theta: f64,
    /// Row-major contact weights `ρ_ij`.
    pub mixing: Vec<f64>,
    /// Initial exposed mass as a fraction of each group.
    pub e0: f64,
    pub r: f64,
    /// Non-monetary value of a death in years of a representative worker's output.
    pub chi_years: f64,
    /// Daily output of the representative worker.
    pub w_ref: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Discount with `e^{+rt}` as printed instead of `e^{−rt}`.
    pub strict_paper_discount: bool,
}

/// Baseline values for the young, middle-aged and old groups.
pub fn baseline_groups() -> Vec<MrGroupParams> {
    let working = 15.0 * 365.0;
    vec![
        MrGroupParams {
            name: "y".into(),
            n: 0.542,
            w: 1.0,
            lbar: 0.7,
            ifr: Some(0.000315),
            kappa: 0.0,
            delta: working,
        },
        MrGroupParams {
            name: "m".into(),
            n: 0.246,
            w: 1.0,
            lbar: 0.7,
            ifr: Some(0.00132),
            kappa: 0.0,
            delta: working,
        },
        MrGroupParams {
            name: "o".into(),
            n: 0.211,
            w: 0.0,
            lbar: 1.0,
            ifr: Some(0.0030),
            kappa: 0.0,
            delta: 0.0,
        },
    ]
}

/// Unmitigated contact rate of the baseline policy experiments.
pub const BASELINE_BETA: f64 = 0.4;
/// Initial exposed share of the baseline policy experiments.
pub const BASELINE_E0: f64 = 1e-4;

impl MrParams {
    pub fn baseline(base: ModelParams) -> Self {
        let groups = baseline_groups();
        let g = groups.len();
        Self {
            base: base.with_beta(BASELINE_BETA),
            groups,
            theta: 1.0,
            mixing: vec![1.0; g * g],
            e0: BASELINE_E0,
            r: DAILY_RATE,
            chi_years: 20.0,
            w_ref: 1.0,
            horizon: 365.0,
            dt: 0.25,
            strict_paper_discount: false,
        }
    }

    /// `χ` in daily-output units.
    pub fn chi(&self) -> f64 {
        self.chi_years * 365.0 * self.w_ref
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let g = self.groups.len();
        if g == 0 {
            return Err(Error::invalid("groups", "need at least one group"));
        }
        let total: f64 = self.groups.iter().map(|x| x.n).sum();
        if (total - 1.0).abs() > SHARE_TOLERANCE {
            return Err(Error::invalid(
                "groups",
                format!("population shares sum to {total}, expected 1"),
            ));
        }
        for gp in &self.groups {
            let name = &gp.name;
            if !(gp.n > 0.0) {
                return Err(Error::invalid("n", format!("group {name}: must be positive")));
            }
            if !(gp.w >= 0.0 && gp.w.is_finite()) {
                return Err(Error::invalid("w", format!("group {name}: must be >= 0")));
            }
            if !(0.0..=1.0).contains(&gp.lbar) {
                return Err(Error::invalid("lbar", format!("group {name}: must lie in [0, 1]")));
            }
            if !(0.0..=1.0).contains(&gp.kappa) {
                return Err(Error::invalid("kappa", format!("group {name}: must lie in [0, 1]")));
            }
            if !(gp.delta >= 0.0 && gp.delta.is_finite()) {
                return Err(Error::invalid("delta", format!("group {name}: must be >= 0")));
            }
            if let Some(f) = gp.ifr {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::invalid("ifr", format!("group {name}: must lie in (0, 1)")));
                }
            }
        }
        if self.mixing.len() != g * g || self.mixing.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid(
                "mixing",
                format!("need {} nonnegative entries", g * g),
            ));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::invalid("theta", "must lie in [0, 1]"));
        }
        if !(self.e0 >= 0.0 && self.e0 < 1.0) {
            return Err(Error::invalid("e0", "must lie in [0, 1)"));
        }
        if !(self.r > 0.0) {
            return Err(Error::invalid("r", "must be positive"));
        }
        if !(self.chi_years >= 0.0) || !(self.w_ref >= 0.0) {
            return Err(Error::invalid("chi", "must be >= 0"));
        }
        IntegrationConfig::new(self.dt, self.horizon).validate()
    }
}

/// Cumulative deaths per initially exposed person of a closed cohort with
/// no transmission, after `COHORT_DAYS` days.
pub fn cohort_ifr(params: &ModelParams) -> Result<f64> {
    let p = ModelParams {
        pi_birth: 0.0,
        ..params.with_beta(0.0)
    };
    let start = CompartmentState {
        e: 1.0,
        ..CompartmentState::default()
    };
    let sol = integrate(
        &Seqihr::new(&p),
        0.0,
        &start.to_array(),
        &IntegrationConfig::new(0.5, COHORT_DAYS),
    )?;
    Ok(sol.last()[D])
}

fn scaled_deaths(params: &ModelParams, factor: f64) -> ModelParams {
    ModelParams {
        d_i: params.d_i * factor,
        d_h: params.d_h * factor,
        ..params.clone()
    }
}

/// Common factor on `d_I, d_H` making [`cohort_ifr`] equal `target`.
pub fn fatality_scale(params: &ModelParams, target: f64) -> Result<f64> {
    let f = |c: f64| -> Result<f64> { Ok(cohort_ifr(&scaled_deaths(params, c))? - target) };
    let base = cohort_ifr(params)?;
    if !(base > 0.0) {
        return Err(Error::Degenerate(
            "base death rates give zero fatality; cannot scale".into(),
        ));
    }
    let mut c0 = target / base;
    let mut f0 = f(c0)?;
    let mut c1 = c0 * target / (f0 + target);
    for _ in 0..SECANT_MAX_ITER {
        let f1 = f(c1)?;
        if f1.abs() <= SECANT_REL_TOL * target {
            return Ok(c1);
        }
        if f1 == f0 {
            break;
        }
        let next = c1 - f1 * (c1 - c0) / (f1 - f0);
        c0 = c1;
        f0 = f1;
        c1 = next.max(0.0);
    }
    Err(Error::NonConvergence(format!(
        "fatality scaling for target {target} stalled at factor {c1}"
    )))
}

/// Per-group quantities derived once from [`MrParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedGroup {
    pub d_i: f64,
    pub d_h: f64,
    pub fatality_scale: f64,
    /// `χ̂_i = w_i/r + χ − (w_i/r)·e^{−rΔ_i}`.
    pub chi_hat: f64,
}

/// Multi-group system ready to integrate.
#[derive(Debug, Clone, PartialEq)]
pub struct MrModel {
    pub params: MrParams,
    pub resolved: Vec<ResolvedGroup>,
}

impl MrModel {
    pub fn new(params: MrParams) -> Result<Self> {
        params.validate()?;
        let mut resolved = Vec::with_capacity(params.groups.len());
        for g in &params.groups {
            let scale = match g.ifr {
                Some(target) => fatality_scale(&params.base, target)?,
                None => 1.0,
            };
            resolved.push(ResolvedGroup {
                d_i: params.base.d_i * scale,
                d_h: params.base.d_h * scale,
                fatality_scale: scale,
                chi_hat: chi_hat(g.w, params.r, params.chi(), g.delta),
            });
        }
        Ok(Self { params, resolved })
    }

    pub fn n_groups(&self) -> usize {
        self.params.groups.len()
    }

    /// Each group fully susceptible except `e0` of its share exposed.
    pub fn initial_state(&self) -> Vec<f64> {
        let seeds: Vec<f64> = self.params.groups.iter().map(|g| self.params.e0 * g.n).collect();
        self.state_with_seeds(&seeds)
    }

    /// Initial state with an explicit exposed mass per group.
    pub fn state_with_seeds(&self, seeds: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; STATE_DIM * self.n_groups()];
        for (g, (gp, e0)) in self.params.groups.iter().zip(seeds).enumerate() {
            y[STATE_DIM * g + S] = gp.n - e0;
            y[STATE_DIM * g + E] = *e0;
        }
        y
    }

    pub fn simulate(&self, policy: &LockdownPolicy) -> Result<MrTrajectory> {
        self.simulate_from(policy, &self.initial_state())
    }

    pub fn simulate_from(&self, policy: &LockdownPolicy, y0: &[f64]) -> Result<MrTrajectory> {
        policy.validate(self)?;
        let system = MrSystem {
            model: self,
            policy,
        };
        let cfg = IntegrationConfig::new(self.params.dt, self.params.horizon);
        let solution = integrate(&system, 0.0, y0, &cfg)?;
        Ok(MrTrajectory {
            groups: self.n_groups(),
            solution,
        })
    }

    /// Derivative of the stacked state.
    pub fn rhs(&self, policy: &LockdownPolicy, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let p = &self.params.base;
        let g = self.n_groups();
        let m = p.outflows();
        let block = |k: usize| &y[STATE_DIM * k..STATE_DIM * (k + 1)];
        let n_total: f64 = (0..g).map(|k| block(k)[..6].iter().sum::<f64>()).sum();
        if n_total == 0.0 {
            return Err(Error::Degenerate("total population N is zero".into()));
        }
        let beta = p.beta.at(t);
        let open = |k: usize| 1.0 - self.params.theta * policy.level(k, t);
        let weighted = |k: usize| {
            let x = block(k);
            open(k) * (x[I] + p.eps_e * x[E] + p.eps_q * x[Q] + p.eps_h * x[H])
        };
        let q_recovery_rate = if p.strict_paper_eq6 { 0.0 } else { p.r_q };
        for k in 0..g {
            let row = &self.params.mixing[g * k..g * (k + 1)];
            let contact: f64 = row.iter().enumerate().map(|(j, r)| r * weighted(j)).sum();
            let force = beta * open(k) * contact / n_total;
            let x = block(k);
            let d = &mut dy[STATE_DIM * k..STATE_DIM * (k + 1)];
            let rg = &self.resolved[k];
            let m_i = m.m_i - p.d_i + rg.d_i;
            let m_h = m.m_h - p.d_h + rg.d_h;
            let incidence = x[S] * force;
            d[S] = p.pi_birth * self.params.groups[k].n - incidence - m.m_s * x[S] + p.s_r * x[R];
            d[E] = incidence - m.m_e * x[E];
            d[I] = p.sigma_e * x[E] - m_i * x[I];
            d[Q] = p.gamma_e * x[E] - m.m_q * x[Q];
            d[H] = p.gamma_i * x[I] + p.sigma_q * x[Q] - m_h * x[H];
            d[R] = p.nu * x[S] + p.r_i * x[I] + q_recovery_rate * x[Q] + p.r_h * x[H]
                - m.m_r * x[R];
            d[D] = rg.d_i * x[I] + rg.d_h * x[H];
        }
        Ok(())
    }

    /// Employed mass of group `g` at grid state `y`.
    pub fn employment(&self, policy: &LockdownPolicy, g: usize, t: f64, y: &[f64]) -> f64 {
        let p = &self.params.base;
        let x = &y[STATE_DIM * g..STATE_DIM * (g + 1)];
        let n_g: f64 = x[..6].iter().sum();
        let share = (1.0 - p.mu - policy.level(g, t)).max(0.0);
        let emp = share * (x[S] + x[E] + x[I] + x[R])
            - (p.gamma_e + p.sigma_e) * x[E]
            - (p.gamma_i + self.resolved[g].d_i) * x[I]
            - (1.0 - p.r_q) * x[Q]
            - (1.0 - p.r_h) * x[H]
            + self.params.groups[g].kappa * x[R];
        emp.clamp(0.0, n_g.max(0.0))
    }

    /// Planner's objective: discounted lost output plus the value of deaths,
    /// by trapezoid on the trajectory grid.
    pub fn social_cost(&self, policy: &LockdownPolicy, traj: &MrTrajectory) -> Result<f64> {
        self.check_horizon(traj)?;
        let sign = if self.params.strict_paper_discount {
            1.0
        } else {
            -1.0
        };
        let r = self.params.r;
        let flow = |k: usize| -> f64 {
            let t = traj.solution.times[k];
            let y = traj.solution.state(k);
            let mut total = 0.0;
            for (g, gp) in self.params.groups.iter().enumerate() {
                let x = &y[STATE_DIM * g..STATE_DIM * (g + 1)];
                let n_g: f64 = x[..6].iter().sum();
                let rg = &self.resolved[g];
                total += gp.w * (n_g - self.employment(policy, g, t, y))
                    + rg.chi_hat * (rg.d_i * x[I] + rg.d_h * x[H]);
            }
            (sign * r * t).exp() * total
        };
        Ok(trapezoid(&traj.solution.times, flow))
    }

    pub fn economic_outcome(
        &self,
        policy: &LockdownPolicy,
        traj: &MrTrajectory,
    ) -> Result<EconomicOutcome> {
        self.check_horizon(traj)?;
        let times = &traj.solution.times;
        let g = self.n_groups();
        let mut emp_series = vec![Vec::with_capacity(times.len()); g];
        for (k, &t) in times.iter().enumerate() {
            let y = traj.solution.state(k);
            for (grp, series) in emp_series.iter_mut().enumerate() {
                series.push(self.employment(policy, grp, t, y));
            }
        }
        let span = times[times.len() - 1] - times[0];
        let mut lost = 0.0;
        let mut baseline = 0.0;
        for (grp, gp) in self.params.groups.iter().enumerate() {
            if gp.w == 0.0 {
                continue;
            }
            let series = &emp_series[grp];
            lost += gp.w * trapezoid(times, |k| gp.n - series[k]);
            baseline += gp.w * gp.n * span;
        }
        let gdp_loss = if baseline > 0.0 { lost / baseline } else { 0.0 };
        let last = traj.solution.last();
        let deaths: f64 = (0..g).map(|grp| last[STATE_DIM * grp + D]).sum();
        let population: f64 = self.params.groups.iter().map(|gp| gp.n).sum();
        Ok(EconomicOutcome {
            gdp_loss,
            death_rate: deaths / population,
            social_cost: self.social_cost(policy, traj)?,
            emp_series,
        })
    }

    fn check_horizon(&self, traj: &MrTrajectory) -> Result<()> {
        let times = &traj.solution.times;
        let span = times[times.len() - 1] - times[0];
        if traj.groups != self.n_groups() || (span - self.params.horizon).abs() > 1e-9 {
            return Err(Error::invalid(
                "horizon",
                format!(
                    "trajectory covers {span} days for {} groups, model expects {} days for {}",
                    traj.groups,
                    self.params.horizon,
                    self.n_groups()
                ),
            ));
        }
        Ok(())
    }

    /// Human-readable table of the derived per-group rates.
    pub fn describe(&self) -> String {
        let mut out = String::from("group  n  w  lbar  ifr  fatality_scale  d_i  d_h  chi_hat\n");
        for (g, r) in self.params.groups.iter().zip(&self.resolved) {
            let _ = writeln!(
                out,
                "{}  {}  {}  {}  {}  {:.6e}  {:.6e}  {:.6e}  {:.6}",
                g.name,
                g.n,
                g.w,
                g.lbar,
                g.ifr.map_or("-".to_string(), |v| v.to_string()),
                r.fatality_scale,
                r.d_i,
                r.d_h,
                r.chi_hat
            );
        }
        out
    }
}

pub fn chi_hat(w: f64, r: f64, chi: f64, delta: f64) -> f64 {
    w / r + chi - (w / r) * (-r * delta).exp()
}

fn trapezoid(times: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut prev = f(0);
    for k in 1..times.len() {
        let cur = f(k);
        acc += 0.5 * (times[k] - times[k - 1]) * (prev + cur);
        prev = cur;
    }
    acc
}

struct MrSystem<'a> {
    model: &'a MrModel,
    policy: &'a LockdownPolicy,
}

impl OdeSystem for MrSystem<'_> {
    fn dim(&self) -> usize {
        STATE_DIM * self.model.n_groups()
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.model.rhs(self.policy, t, y, dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrTrajectory {
    pub groups: usize,
    /// Stacked `[S, E, I, Q, H, R, D]` blocks, one per group.
    pub solution: Solution,
}

impl MrTrajectory {
    pub fn group_state(&self, k: usize, g: usize) -> CompartmentState {
        let y = self.solution.state(k);
        CompartmentState::from_slice(
            self.solution.times[k],
            &y[STATE_DIM * g..STATE_DIM * (g + 1)],
        )
    }

    /// Sum over groups at grid point `k`.
    pub fn aggregate(&self, k: usize) -> CompartmentState {
        let y = self.solution.state(k);
        let mut acc = [0.0; STATE_DIM];
        for g in 0..self.groups {
            for (a, v) in acc.iter_mut().zip(&y[STATE_DIM * g..STATE_DIM * (g + 1)]) {
                *a += v;
            }
        }
        CompartmentState::from_slice(self.solution.times[k], &acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EconomicOutcome {
    pub gdp_loss: f64,
    pub death_rate: f64,
    pub social_cost: f64,
    /// Employment per group on the trajectory grid.
    pub emp_series: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Uniform,
    Targeted,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Uniform => "uniform",
            PolicyKind::Targeted => "targeted",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(PolicyKind::Uniform),
            "targeted" => Ok(PolicyKind::Targeted),
            other => Err(Error::Config(format!("unknown policy kind `{other}`"))),
        }
    }
}

/// Piecewise-constant lockdown levels on shared interval starts.
#[derive(Debug, Clone, PartialEq)]
pub struct LockdownPolicy {
    pub kind: PolicyKind,
    /// Interval start days; the first is 0.
    pub starts: Vec<f64>,
    /// `levels[g][k]` applies to group `g` from `starts[k]`.
    pub levels: Vec<Vec<f64>>,
}

impl LockdownPolicy {
    /// No lockdown for `groups` groups.
    pub fn none(groups: usize) -> Self {
        Self::constant(PolicyKind::Targeted, vec![0.0; groups])
    }

    pub fn constant(kind: PolicyKind, levels: Vec<f64>) -> Self {
        Self {
            kind,
            starts: vec![0.0],
            levels: levels.into_iter().map(|l| vec![l]).collect(),
        }
    }

    pub fn uniform(level: f64, groups: usize) -> Self {
        Self::constant(PolicyKind::Uniform, vec![level; groups])
    }

    #[inline]
    pub fn level(&self, g: usize, t: f64) -> f64 {
        let levels = &self.levels[g];
        if levels.len() == 1 {
            return levels[0];
        }
        let k = self.starts.partition_point(|&s| s <= t).max(1) - 1;
        levels[k]
    }

    pub fn validate(&self, model: &MrModel) -> Result<()> {
        let g = model.n_groups();
        if self.levels.len() != g {
            return Err(Error::invalid(
                "policy",
                format!("has {} groups, model has {g}", self.levels.len()),
            ));
        }
        if self.starts.is_empty() || self.starts[0] != 0.0 {
            return Err(Error::invalid("policy", "first interval must start at day 0"));
        }
        if self.starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("policy", "interval starts must increase"));
        }
        for (gp, levels) in model.params.groups.iter().zip(&self.levels) {
            if levels.len() != self.starts.len() {
                return Err(Error::invalid(
                    "policy",
                    format!("group {} has {} levels for {} intervals", gp.name, levels.len(), self.starts.len()),
                ));
            }
            if let Some(l) = levels.iter().find(|l| !(**l >= 0.0 && **l <= gp.lbar)) {
                return Err(Error::invalid(
                    "policy",
                    format!("group {} level {l} outside [0, {}]", gp.name, gp.lbar),
                ));
            }
        }
        if self.kind == PolicyKind::Uniform && self.levels.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::invalid("policy", "uniform policy must share one schedule"));
        }
        Ok(())
    }

    /// Canonical text of the levels, used for tie-breaking and as an id:
    /// groups separated by `/`, intervals by `;`.
    pub fn encoding(&self) -> String {
        self.levels
            .iter()
            .map(|l| {
                l.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .collect::<Vec<_>>()
            .join("/")
    }

    /// `group,start_day,level` rows.
    pub fn to_csv(&self, model: &MrModel) -> String {
        let mut out = String::from("group,start_day,level\n");
        for (gp, levels) in model.params.groups.iter().zip(&self.levels) {
            for (s, l) in self.starts.iter().zip(levels) {
                let _ = writeln!(out, "{},{s},{l}", gp.name);
            }
        }
        out
    }

    /// Reads `group,start_day,level` rows. Every group must list the same
    /// start days. The kind is uniform exactly when all schedules coincide.
    pub fn from_csv(text: &str, model: &MrModel) -> Result<Self> {
        let names: Vec<&str> = model.params.groups.iter().map(|g| g.name.as_str()).collect();
        let mut rows: Vec<Vec<(f64, f64)>> = vec![Vec::new(); names.len()];
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "group,start_day,level" => {}
            _ => return Err(Error::Config("policy file needs header `group,start_day,level`".into())),
        }
        for (k, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |why: &str| Error::Config(format!("policy line {}: {why}", k + 1));
            if f.len() != 3 {
                return Err(err("expected 3 fields"));
            }
            let g = names
                .iter()
                .position(|n| *n == f[0])
                .ok_or_else(|| err(&format!("unknown group `{}`", f[0])))?;
            let s: f64 = f[1].parse().map_err(|_| err("bad start_day"))?;
            let l: f64 = f[2].parse().map_err(|_| err("bad level"))?;
            rows[g].push((s, l));
        }
        for r in rows.iter_mut() {
            r.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let starts: Vec<f64> = rows[0].iter().map(|r| r.0).collect();
        if rows.iter().any(|r| r.iter().map(|x| x.0).ne(starts.iter().copied())) {
            return Err(Error::Config("every group must list the same start days".into()));
        }
        let levels: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|x| x.1).collect())
            .collect();
        let kind = if levels.windows(2).all(|w| w[0] == w[1]) {
            PolicyKind::Uniform
        } else {
            PolicyKind::Targeted
        };
        let p = Self {
            kind,
            starts,
            levels,
        };
        p.validate(model)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::default_params;
    use crate::integrator::simulate;

    fn baseline_model() -> MrModel {
        MrModel::new(MrParams::baseline(default_params())).unwrap()
    }

    /// Absorption probability into death for one exposed person, from the
    /// branching fractions of the transition chain.
    fn absorbing_ifr(p: &ModelParams) -> f64 {
        let m = p.outflows();
        let via_h = p.d_h / m.m_h;
        p.sigma_e / m.m_e * (p.d_i / m.m_i + p.gamma_i / m.m_i * via_h)
            + p.gamma_e / m.m_e * p.sigma_q / m.m_q * via_h
    }

    #[test]
    fn cohort_matches_branching_fractions() {
        let p = default_params();
        let run = cohort_ifr(&p).unwrap();
        let exact = absorbing_ifr(&p);
        assert!((run - exact).abs() < 1e-8 * exact.max(1e-3), "{run} vs {exact}");
        assert!((run - 0.059).abs() < 0.002, "baseline ifr {run}");
    }

    #[test]
    fn fatality_targets_are_hit() {
        let m = baseline_model();
        for (g, r) in m.params.groups.iter().zip(&m.resolved) {
            let p = scaled_deaths(&m.params.base, r.fatality_scale);
            let ifr = cohort_ifr(&p).unwrap();
            let target = g.ifr.unwrap();
            assert!((ifr / target - 1.0).abs() < 1e-9, "{} {ifr}", g.name);
            assert!((absorbing_ifr(&p) / target - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn chi_hat_values() {
        let m = baseline_model();
        let r = DAILY_RATE;
        let chi = 20.0 * 365.0;
        let young = 1.0 / r + chi - (1.0 / r) * (-r * 15.0 * 365.0).exp();
        assert!((m.resolved[0].chi_hat - young).abs() < 1e-9);
        assert_eq!(m.resolved[2].chi_hat, chi);
    }

    fn identical_groups() -> MrModel {
        let mut params = MrParams::baseline(default_params());
        params.base = default_params().with_beta(0.35);
        for g in params.groups.iter_mut() {
            g.ifr = None;
        }
        params.groups[2].n = 1.0 - 0.542 - 0.246;
        MrModel::new(params).unwrap()
    }

    #[test]
    fn aggregation_consistency() {
        let model = identical_groups();
        let policy = LockdownPolicy::none(3);
        let traj = model.simulate(&policy).unwrap();
        let e0 = model.params.e0;
        let single = simulate(
            &model.params.base,
            &CompartmentState::seeded(1.0, e0),
            &IntegrationConfig::new(model.params.dt, model.params.horizon),
        )
        .unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..traj.solution.len() {
            let a = traj.aggregate(k).to_array();
            let b = single.states[k].to_array();
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
            for g in 0..3 {
                let share = model.params.groups[g].n;
                let gs = traj.group_state(k, g).to_array();
                for (x, y) in gs.iter().zip(b) {
                    assert!((x - share * y).abs() < 1e-8);
                }
            }
        }
        assert!(worst < 1e-8, "max deviation {worst}");
    }

    #[test]
    fn fully_shielded_group() {
        let model = baseline_model();
        let policy = LockdownPolicy::constant(PolicyKind::Targeted, vec![0.0, 0.0, 1.0]);
        let seeds = [1e-4 * 0.542, 1e-4 * 0.246, 0.0];
        let traj = model
            .simulate_from(&policy, &model.state_with_seeds(&seeds))
            .unwrap();
        for k in 0..traj.solution.len() {
            let o = traj.group_state(k, 2);
            assert_eq!(o.e, 0.0);
            assert_eq!(o.d, 0.0);
        }
    }

    #[test]
    fn mixing_reaches_old() {
        let model = baseline_model();
        let seeds = [1e-4, 0.0, 0.0];
        let traj = model
            .simulate_from(&LockdownPolicy::none(3), &model.state_with_seeds(&seeds))
            .unwrap();
        for k in 1..traj.solution.len() {
            assert!(traj.group_state(k, 2).e > 0.0);
        }
    }

    #[test]
    fn employment_examples() {
        let mut params = MrParams::baseline(default_params());
        params.base.mu = 0.0;
        params.base.pi_birth = 0.0;
        let model = MrModel::new(params).unwrap();
        let y = model.state_with_seeds(&[0.0, 0.0, 0.0]);
        let p = LockdownPolicy::uniform(0.3, 3);
        assert!((model.employment(&p, 0, 0.0, &y) - 0.7 * 0.542).abs() < 1e-15);
        let full = LockdownPolicy::constant(PolicyKind::Targeted, vec![0.0, 0.0, 1.0]);
        assert_eq!(model.employment(&full, 2, 0.0, &y), 0.0);

        let model = baseline_model();
        let mu = model.params.base.mu;
        let none = LockdownPolicy::none(3);
        assert!((model.employment(&none, 1, 0.0, &y) - (1.0 - mu) * 0.246).abs() < 1e-15);
    }

    #[test]
    fn employment_bounds_hold_along_runs() {
        let model = baseline_model();
        for level in [0.0, 0.35, 0.7] {
            let p = LockdownPolicy::uniform(level, 3);
            let traj = model.simulate(&p).unwrap();
            let out = model.economic_outcome(&p, &traj).unwrap();
            for (g, series) in out.emp_series.iter().enumerate() {
                for (k, e) in series.iter().enumerate() {
                    let n = traj.group_state(k, g).n();
                    assert!(*e >= 0.0 && *e <= n + 1e-15);
                }
            }
            assert!((0.0..=1.0).contains(&out.gdp_loss));
            assert!((0.0..=1.0).contains(&out.death_rate));
            assert!(out.social_cost >= 0.0);
        }
    }

    #[test]
    fn no_pandemic_costs() {
        let mut params = MrParams::baseline(default_params());
        params.e0 = 0.0;
        let model = MrModel::new(params.clone()).unwrap();
        let p = LockdownPolicy::none(3);
        let traj = model.simulate(&p).unwrap();
        let out = model.economic_outcome(&p, &traj).unwrap();
        assert_eq!(out.death_rate, 0.0);
        let mu = params.base.mu;
        assert!((out.gdp_loss - mu).abs() < 1e-9, "{}", out.gdp_loss);

        params.chi_years *= 2.0;
        let doubled = MrModel::new(params).unwrap();
        let c2 = doubled.social_cost(&p, &traj).unwrap();
        assert_eq!(out.social_cost, c2);
    }

    #[test]
    fn static_full_lockdown_loss() {
        let mut params = MrParams::baseline(default_params());
        params.e0 = 0.0;
        params.base.mu = 0.0;
        params.base.pi_birth = 0.0;
        let model = MrModel::new(params).unwrap();
        let p = LockdownPolicy::constant(PolicyKind::Targeted, vec![0.7, 0.7, 1.0]);
        let traj = model.simulate(&p).unwrap();
        let out = model.economic_outcome(&p, &traj).unwrap();
        assert!((out.gdp_loss - 0.7).abs() < 1e-12, "{}", out.gdp_loss);
    }

    #[test]
    fn small_rate_limit_is_undiscounted() {
        let model = baseline_model();
        let p = LockdownPolicy::uniform(0.2, 3);
        let traj = model.simulate(&p).unwrap();

        // plain trapezoid of the undiscounted flow
        let times = &traj.solution.times;
        let flow: Vec<f64> = (0..times.len())
            .map(|k| {
                let y = traj.solution.state(k);
                (0..3)
                    .map(|g| {
                        let s = traj.group_state(k, g);
                        let rg = &model.resolved[g];
                        model.params.groups[g].w * (s.n() - model.employment(&p, g, times[k], y))
                            + rg.chi_hat * (rg.d_i * s.i + rg.d_h * s.h)
                    })
                    .sum()
            })
            .collect();
        let plain: f64 = (1..times.len())
            .map(|k| 0.5 * (times[k] - times[k - 1]) * (flow[k] + flow[k - 1]))
            .sum();

        // shrink r while holding χ̂ fixed so only the discount factor moves
        let mut tiny = model.clone();
        tiny.params.r = 1e-14;
        let limit = tiny.social_cost(&p, &traj).unwrap();
        assert!((limit / plain - 1.0).abs() < 1e-10, "{limit} vs {plain}");

        let discounted = model.social_cost(&p, &traj).unwrap();
        assert!(discounted < plain);
        assert!(discounted > plain * (-DAILY_RATE * 365.0).exp());
        let mut strict = model.clone();
        strict.params.strict_paper_discount = true;
        assert!(strict.social_cost(&p, &traj).unwrap() > plain);
    }

    #[test]
    fn horizon_mismatch() {
        let model = baseline_model();
        let p = LockdownPolicy::none(3);
        let mut short = model.clone();
        short.params.horizon = 100.0;
        let traj = short.simulate(&p).unwrap();
        assert!(model.social_cost(&p, &traj).is_err());
        assert!(model.economic_outcome(&p, &traj).is_err());
    }

    #[test]
    fn policy_validation_and_csv() {
        let model = baseline_model();
        assert!(LockdownPolicy::uniform(0.8, 3).validate(&model).is_err());
        assert!(LockdownPolicy::constant(PolicyKind::Targeted, vec![0.7, 0.7, 1.0])
            .validate(&model)
            .is_ok());
        let p = LockdownPolicy {
            kind: PolicyKind::Targeted,
            starts: vec![0.0, 60.0],
            levels: vec![vec![0.5, 0.1], vec![0.5, 0.1], vec![1.0, 0.3]],
        };
        assert_eq!(p.level(2, 59.9), 1.0);
        assert_eq!(p.level(2, 60.0), 0.3);
        let back = LockdownPolicy::from_csv(&p.to_csv(&model), &model).unwrap();
        assert_eq!(back, p);
        let u = LockdownPolicy::uniform(0.25, 3);
        assert_eq!(LockdownPolicy::from_csv(&u.to_csv(&model), &model).unwrap(), u);
        assert_eq!(p.encoding(), "0.5;0.1/0.5;0.1/1;0.3");
    }

    #[test]
    fn shielding_old_saves_old() {
        let model = baseline_model();
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let l = k as f64 / 10.0;
            let p = LockdownPolicy::constant(PolicyKind::Targeted, vec![0.2, 0.2, l]);
            let d = model.simulate(&p).unwrap().group_state(1460, 2).d;
            assert!(d <= prev, "level {l}: {d} > {prev}");
            prev = d;
        }
    }
}
