//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use seqihr::calibration::defaults::{apply_param, kv_lines, parse_bool, parse_number, PARAM_KEYS};
use seqihr::calibration::{default_params, params_to_text, FitOptions};
use seqihr::model::{CompartmentState, ModelParams};
use seqihr::multirisk::{baseline_groups, MrGroupParams, MrParams, PolicyKind, BASELINE_BETA, BASELINE_E0, DAILY_RATE};
use seqihr::policy::{DEFAULT_BUDGET, DEFAULT_STEP, UNIFORM_LBAR};
use seqihr::{Error, Result};

/// Start of a fit segment, as a day offset into the death series or a date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentBreak {
    Day(usize),
    Date(NaiveDate),
}

impl SegmentBreak {
    fn parse(text: &str) -> Option<Self> {
        if let Ok(d) = text.parse::<usize>() {
            return Some(SegmentBreak::Day(d));
        }
        NaiveDate::parse_from_str(text, "%Y-%m-%d").ok().map(SegmentBreak::Date)
    }

    fn text(&self) -> String {
        match self {
            SegmentBreak::Day(d) => d.to_string(),
            SegmentBreak::Date(d) => d.format("%Y-%m-%d").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub dt: f64,
    pub horizon: f64,
    /// Initial exposed fraction of the single-group runs.
    pub e0: f64,
    /// Absolute population the unit-population model is scaled to.
    pub population: f64,
    pub deaths_csv: Option<PathBuf>,
    pub segment_breaks: Vec<SegmentBreak>,
    pub fit_restarts: usize,
    pub fit_max_evals: usize,
    pub fit_size_tol: f64,
    pub fit_e0_min: f64,
    pub fit_e0_max: f64,
    /// `S,E,I,Q,H,R` at which `R_C` is reported; `None` means the
    /// disease-free point.
    pub rc_state: Option<[f64; 6]>,
    pub mr_beta: f64,
    pub mr_e0: f64,
    pub theta: f64,
    pub mixing: Vec<f64>,
    pub groups: Vec<MrGroupParams>,
    pub rate: f64,
    pub chi_years: f64,
    pub w_ref: f64,
    pub strict_paper_discount: bool,
    pub grid_kinds: Vec<PolicyKind>,
    pub grid_step: f64,
    pub uniform_lbar: f64,
    pub budget: f64,
    /// Interval start days of the swept policies.
    pub policy_starts: Vec<f64>,
    /// Values of a death for which `policy` finds the optimum.
    pub policy_chi_years: Vec<f64>,
    pub out: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub plot: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let groups = baseline_groups();
        let g = groups.len();
        let fit = FitOptions::default();
        Self {
            params: default_params(),
            dt: 0.25,
            horizon: 365.0,
            e0: 1e-6,
            population: fit.population,
            deaths_csv: None,
            segment_breaks: vec![
                SegmentBreak::Day(0),
                SegmentBreak::Date(NaiveDate::from_ymd_opt(2020, 3, 25).unwrap()),
                SegmentBreak::Date(NaiveDate::from_ymd_opt(2020, 6, 1).unwrap()),
                SegmentBreak::Date(NaiveDate::from_ymd_opt(2020, 10, 1).unwrap()),
            ],
            fit_restarts: fit.restarts,
            fit_max_evals: fit.max_evals,
            fit_size_tol: fit.size_tol,
            fit_e0_min: fit.e0_bounds.0,
            fit_e0_max: fit.e0_bounds.1,
            rc_state: None,
            mr_beta: BASELINE_BETA,
            mr_e0: BASELINE_E0,
            theta: 1.0,
            mixing: vec![1.0; g * g],
            groups,
            rate: DAILY_RATE,
            chi_years: 20.0,
            w_ref: 1.0,
            strict_paper_discount: false,
            grid_kinds: vec![PolicyKind::Uniform, PolicyKind::Targeted],
            grid_step: DEFAULT_STEP,
            uniform_lbar: UNIFORM_LBAR,
            budget: DEFAULT_BUDGET,
            policy_starts: vec![0.0],
            policy_chi_years: vec![20.0],
            out: PathBuf::from("out"),
            workers: 1,
            seed: 0,
            plot: false,
        }
    }
}

const GROUP_FIELDS: [&str; 6] = ["n", "w", "lbar", "ifr", "kappa", "delta"];

const KEYS: [&str; 31] = [
    "dt",
    "horizon",
    "e0",
    "population",
    "deaths_csv",
    "segment_breaks",
    "fit_restarts",
    "fit_max_evals",
    "fit_size_tol",
    "fit_e0_min",
    "fit_e0_max",
    "rc_state",
    "mr_beta",
    "mr_e0",
    "theta",
    "mixing",
    "groups",
    "rate",
    "chi_years",
    "w_ref",
    "strict_paper_discount",
    "grid_kinds",
    "grid_step",
    "uniform_lbar",
    "budget",
    "policy_starts",
    "policy_chi_years",
    "out",
    "workers",
    "seed",
    "plot",
];

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn list<T>(value: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    if value.is_empty() {
        return Some(Vec::new());
    }
    value.split(',').map(|v| f(v.trim())).collect()
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in params_to_text(&self.params).lines() {
            let _ = writeln!(out, "{line}");
        }
        let g = self.groups.len().max(1);
        let mixing = self
            .mixing
            .chunks(g)
            .map(|row| join(row, f64::to_string))
            .collect::<Vec<_>>()
            .join(";");
        let values = [
            self.dt.to_string(),
            self.horizon.to_string(),
            self.e0.to_string(),
            self.population.to_string(),
            self.deaths_csv
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            join(&self.segment_breaks, SegmentBreak::text),
            self.fit_restarts.to_string(),
            self.fit_max_evals.to_string(),
            self.fit_size_tol.to_string(),
            self.fit_e0_min.to_string(),
            self.fit_e0_max.to_string(),
            self.rc_state
                .map(|s| join(&s, f64::to_string))
                .unwrap_or_else(|| "dfe".into()),
            self.mr_beta.to_string(),
            self.mr_e0.to_string(),
            self.theta.to_string(),
            mixing,
            join(&self.groups, |g| g.name.clone()),
            self.rate.to_string(),
            self.chi_years.to_string(),
            self.w_ref.to_string(),
            self.strict_paper_discount.to_string(),
            join(&self.grid_kinds, |k| k.as_str().to_string()),
            self.grid_step.to_string(),
            self.uniform_lbar.to_string(),
            self.budget.to_string(),
            join(&self.policy_starts, f64::to_string),
            join(&self.policy_chi_years, f64::to_string),
            self.out.display().to_string(),
            self.workers.to_string(),
            self.seed.to_string(),
            self.plot.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        for gp in &self.groups {
            let fields = [
                gp.n.to_string(),
                gp.w.to_string(),
                gp.lbar.to_string(),
                gp.ifr.map_or_else(|| "none".into(), |v| v.to_string()),
                gp.kappa.to_string(),
                gp.delta.to_string(),
            ];
            for (f, v) in GROUP_FIELDS.iter().zip(fields) {
                let _ = writeln!(out, "group.{}.{f} = {v}", gp.name);
            }
        }
        out
    }

    /// Overrides the defaults with the keys present in `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        let mut group_lines = Vec::new();
        for item in kv_lines(text) {
            let (line, key, value) = item?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
            }
            if key.starts_with("group.") {
                group_lines.push((line, key, value));
                continue;
            }
            let known = c
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
            if !known {
                return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
            }
        }
        // group fields may precede the `groups` list, so they are applied last
        for (line, key, value) in group_lines {
            c.set_group_field(key, value)
                .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if PARAM_KEYS.contains(&key) {
            return apply_param(&mut self.params, key, value);
        }
        let bad = || Error::Config(format!("cannot parse value `{value}` for `{key}`"));
        let num = || parse_number(value).ok_or_else(bad);
        let int = || value.parse::<usize>().map_err(|_| bad());
        let nums = || list(value, parse_number).ok_or_else(bad);
        match key {
            "dt" => self.dt = num()?,
            "horizon" => self.horizon = num()?,
            "e0" => self.e0 = num()?,
            "population" => self.population = num()?,
            "deaths_csv" => self.deaths_csv = (!value.is_empty()).then(|| PathBuf::from(value)),
            "segment_breaks" => self.segment_breaks = list(value, SegmentBreak::parse).ok_or_else(bad)?,
            "fit_restarts" => self.fit_restarts = int()?,
            "fit_max_evals" => self.fit_max_evals = int()?,
            "fit_size_tol" => self.fit_size_tol = num()?,
            "fit_e0_min" => self.fit_e0_min = num()?,
            "fit_e0_max" => self.fit_e0_max = num()?,
            "rc_state" => {
                self.rc_state = if value == "dfe" {
                    None
                } else {
                    let v = nums()?;
                    Some(v.try_into().map_err(|_| bad())?)
                }
            }
            "mr_beta" => self.mr_beta = num()?,
            "mr_e0" => self.mr_e0 = num()?,
            "theta" => self.theta = num()?,
            "mixing" => {
                self.mixing = value
                    .split(';')
                    .map(|row| list(row.trim(), parse_number))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?
                    .concat()
            }
            "groups" => {
                let names = list(value, |s| (!s.is_empty()).then(|| s.to_string())).ok_or_else(bad)?;
                let base = baseline_groups();
                self.groups = names
                    .into_iter()
                    .map(|name| {
                        base.iter().find(|g| g.name == name).cloned().unwrap_or(MrGroupParams {
                            name,
                            n: f64::NAN,
                            w: f64::NAN,
                            lbar: f64::NAN,
                            ifr: None,
                            kappa: f64::NAN,
                            delta: f64::NAN,
                        })
                    })
                    .collect();
            }
            "rate" => self.rate = num()?,
            "chi_years" => self.chi_years = num()?,
            "w_ref" => self.w_ref = num()?,
            "strict_paper_discount" => self.strict_paper_discount = parse_bool(value).ok_or_else(bad)?,
            "grid_kinds" => {
                self.grid_kinds = list(value, |s| s.parse().ok()).ok_or_else(bad)?;
            }
            "grid_step" => self.grid_step = num()?,
            "uniform_lbar" => self.uniform_lbar = num()?,
            "budget" => self.budget = num()?,
            "policy_starts" => self.policy_starts = nums()?,
            "policy_chi_years" => self.policy_chi_years = nums()?,
            "out" => self.out = PathBuf::from(value),
            "workers" => self.workers = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "plot" => self.plot = parse_bool(value).ok_or_else(bad)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set_group_field(&mut self, key: &str, value: &str) -> Result<()> {
        let rest = &key["group.".len()..];
        let (name, field) = rest
            .rsplit_once('.')
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let g = self
            .groups
            .iter_mut()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Config(format!("`{key}` names a group missing from `groups`")))?;
        let bad = || Error::Config(format!("cannot parse value `{value}` for `{key}`"));
        let num = || parse_number(value).ok_or_else(bad);
        match field {
            "n" => g.n = num()?,
            "w" => g.w = num()?,
            "lbar" => g.lbar = num()?,
            "ifr" => g.ifr = if value == "none" { None } else { Some(num()?) },
            "kappa" => g.kappa = num()?,
            "delta" => g.delta = num()?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.population > 0.0) {
            return Err(Error::Config("`population` must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.e0) {
            return Err(Error::Config("`e0` must lie in [0, 1)".into()));
        }
        if self.segment_breaks.is_empty() {
            return Err(Error::Config("`segment_breaks` needs at least one entry".into()));
        }
        if self.grid_kinds.is_empty() {
            return Err(Error::Config("`grid_kinds` needs at least one kind".into()));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::Config("`grid_step` must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("`workers` must be at least 1".into()));
        }
        self.mr_params().validate()
    }

    pub fn single_initial(&self) -> CompartmentState {
        CompartmentState::seeded(1.0, self.e0)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            population: self.population,
            e0_bounds: (self.fit_e0_min, self.fit_e0_max),
            restarts: self.fit_restarts,
            seed: self.seed,
            size_tol: self.fit_size_tol,
            max_evals: self.fit_max_evals,
            dt: self.dt,
            ..FitOptions::default()
        }
    }

    pub fn mr_params(&self) -> MrParams {
        MrParams {
            base: self.params.with_beta(self.mr_beta),
            groups: self.groups.clone(),
            theta: self.theta,
            mixing: self.mixing.clone(),
            e0: self.mr_e0,
            r: self.rate,
            chi_years: self.chi_years,
            w_ref: self.w_ref,
            horizon: self.horizon,
            dt: self.dt,
            strict_paper_discount: self.strict_paper_discount,
        }
    }

    /// Segment start days relative to a series beginning on `first`.
    pub fn resolve_breaks(&self, first: NaiveDate, days: usize) -> Result<Vec<usize>> {
        self.segment_breaks
            .iter()
            .map(|b| {
                let k = match b {
                    SegmentBreak::Day(d) => *d as i64,
                    SegmentBreak::Date(d) => (*d - first).num_days(),
                };
                if k < 0 || k as usize >= days {
                    Err(Error::Config(format!(
                        "segment break {} falls outside the {days}-day death series starting {first}",
                        b.text()
                    )))
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn edited_config_round_trips() {
        let text = "beta = 0:0.3;75:0.12\n\
                    strict_paper_eq6 = true\n\
                    deaths_csv = data/us.csv\n\
                    segment_breaks = 0,40,2020-06-01\n\
                    rc_state = 0.9,0.01,0.01,0,0,0.08\n\
                    groups = y,o\n\
                    group.y.n = 0.6\n\
                    group.o.n = 0.4\n\
                    group.o.ifr = none\n\
                    mixing = 1,0.5;0.5,1\n\
                    grid_kinds = targeted\n\
                    policy_chi_years = 10,20.5\n\
                    workers = 3\n";
        let c = RunConfig::from_text(text).unwrap();
        assert_eq!(c.groups.len(), 2);
        assert_eq!(c.groups[1].ifr, None);
        assert_eq!(c.mixing, vec![1.0, 0.5, 0.5, 1.0]);
        assert_eq!(c.params.beta.values(), vec![0.3, 0.12]);
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn division_chains_are_accepted() {
        let c = RunConfig::from_text("r_q = 0.875/14\ndt = 1/8\n").unwrap();
        assert_eq!(c.dt, 0.125);
        assert_eq!(c.params.r_q, 0.875 / 14.0);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let e = RunConfig::from_text("betta = 0.2\n").unwrap_err();
        assert!(e.to_string().contains("unknown key `betta`"), "{e}");
        let e = RunConfig::from_text("dt = 0.25\ndt = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
        let e = RunConfig::from_text("group.x.n = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("missing from `groups`"), "{e}");
        let e = RunConfig::from_text("group.y.colour = 1\n").unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
    }

    #[test]
    fn new_group_needs_every_field() {
        let e = RunConfig::from_text("groups = a\nmixing = 1\n").unwrap_err();
        assert_eq!(e.class(), seqihr::ErrorClass::Config);
        let c = RunConfig::from_text(
            "groups = a\nmixing = 1\ngroup.a.n = 1\ngroup.a.w = 1\ngroup.a.lbar = 0.5\n\
             group.a.ifr = 0.001\ngroup.a.kappa = 0\ngroup.a.delta = 100\n",
        )
        .unwrap();
        assert_eq!(c.groups[0].lbar, 0.5);
    }

    #[test]
    fn breaks_resolve_against_series_start() {
        let c = RunConfig::from_text("segment_breaks = 0,2020-03-25\n").unwrap();
        let first = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        assert_eq!(c.resolve_breaks(first, 100).unwrap(), vec![0, 24]);
        assert!(c.resolve_breaks(first, 20).is_err());
    }
}
