//! Lockdown policy sweeps, Pareto frontiers and cost-minimizing policies.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multirisk::{chi_hat, LockdownPolicy, MrModel, PolicyKind};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Default spacing of lockdown levels.
pub const DEFAULT_STEP: f64 = 0.05;
/// Largest uniform lockdown level.
pub const UNIFORM_LBAR: f64 = 0.7;
/// GDP loss of the observed 2020 outcome, used as the default budget.
pub const DEFAULT_BUDGET: f64 = 0.035;

/// Levels `0, step, 2·step, …` up to `lbar`. When `step = 1/m` for an
/// integer `m`, level `k` is computed as `k / m`, the double nearest the
/// decimal value; otherwise as `k·step`. Either way grids whose steps divide
/// each other share bit-identical levels.
pub fn level_set(lbar: f64, step: f64) -> Vec<f64> {
    let inverse = 1.0 / step;
    let m = inverse.round();
    let level = |k: usize| {
        if (inverse - m).abs() < 1e-9 {
            k as f64 / m
        } else {
            k as f64 * step
        }
    };
    let n = (lbar / step + 1e-9).floor() as usize;
    (0..=n).map(level).filter(|v| *v <= lbar).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid {
    pub kind: PolicyKind,
    /// Candidate levels for each group; a uniform grid uses the first entry
    /// for every group.
    pub levels: Vec<Vec<f64>>,
    /// Interval start days shared by every group; `K = starts.len()`.
    pub starts: Vec<f64>,
}

impl PolicyGrid {
    /// Every group at one shared level in `[0, lbar]`, capped by each group's
    /// own maximum.
    pub fn uniform(model: &MrModel, lbar: f64, step: f64) -> Self {
        let cap = model
            .params
            .groups
            .iter()
            .map(|g| g.lbar)
            .fold(lbar, f64::min);
        Self {
            kind: PolicyKind::Uniform,
            levels: vec![level_set(cap, step); model.n_groups()],
            starts: vec![0.0],
        }
    }

    pub fn targeted(model: &MrModel, step: f64) -> Self {
        Self {
            kind: PolicyKind::Targeted,
            levels: model
                .params
                .groups
                .iter()
                .map(|g| level_set(g.lbar, step))
                .collect(),
            starts: vec![0.0],
        }
    }

    pub fn with_starts(mut self, starts: Vec<f64>) -> Self {
        self.starts = starts;
        self
    }

    pub fn len(&self) -> usize {
        let k = self.starts.len() as u32;
        match self.kind {
            PolicyKind::Uniform => self.levels[0].len().pow(k),
            PolicyKind::Targeted => self.levels.iter().map(|l| l.len().pow(k)).product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All policies in canonical order: the last group's last interval varies
    /// fastest.
    pub fn policies(&self) -> Vec<LockdownPolicy> {
        let k = self.starts.len();
        let g = self.levels.len();
        // one digit per (group, interval) slot; uniform grids use one group
        let slots: Vec<&Vec<f64>> = match self.kind {
            PolicyKind::Uniform => (0..k).map(|_| &self.levels[0]).collect(),
            PolicyKind::Targeted => self
                .levels
                .iter()
                .flat_map(|l| std::iter::repeat(l).take(k))
                .collect(),
        };
        let mut out = Vec::with_capacity(self.len());
        let mut digits = vec![0usize; slots.len()];
        loop {
            let chosen: Vec<f64> = digits.iter().zip(&slots).map(|(d, s)| s[*d]).collect();
            let levels = match self.kind {
                PolicyKind::Uniform => vec![chosen.clone(); g],
                PolicyKind::Targeted => chosen.chunks(k).map(<[f64]>::to_vec).collect(),
            };
            out.push(LockdownPolicy {
                kind: self.kind,
                starts: self.starts.clone(),
                levels,
            });
            let mut pos = slots.len();
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < slots[pos].len() {
                    break;
                }
                digits[pos] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub policy: LockdownPolicy,
    pub gdp_loss: f64,
    pub death_rate: f64,
    pub social_cost: f64,
    pub dominated: bool,
}

pub fn evaluate_policy(model: &MrModel, policy: &LockdownPolicy) -> Result<FrontierPoint> {
    let traj = model.simulate(policy)?;
    let out = model.economic_outcome(policy, &traj)?;
    Ok(FrontierPoint {
        policy: policy.clone(),
        gdp_loss: out.gdp_loss,
        death_rate: out.death_rate,
        social_cost: out.social_cost,
        dominated: false,
    })
}

/// Indices of the nondominated points in `(gdp_loss, death_rate)`, sorted
/// by increasing GDP loss. Among exact ties the smallest encoding survives.
pub fn pareto_indices(points: &[FrontierPoint]) -> Vec<usize> {
    let keys: Vec<String> = points.iter().map(|p| p.policy.encoding()).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .gdp_loss
            .total_cmp(&points[b].gdp_loss)
            .then(points[a].death_rate.total_cmp(&points[b].death_rate))
            .then(keys[a].cmp(&keys[b]))
    });
    let mut front = Vec::new();
    let mut best = f64::INFINITY;
    for i in order {
        if points[i].death_rate < best {
            best = points[i].death_rate;
            front.push(i);
        }
    }
    front
}

/// The nondominated subset, sorted by increasing GDP loss.
pub fn pareto_front(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    pareto_indices(points)
        .into_iter()
        .map(|i| FrontierPoint {
            dominated: false,
            ..points[i].clone()
        })
        .collect()
}

/// Lowest death rate reachable on `front` without exceeding `budget`.
pub fn death_rate_at_budget(front: &[FrontierPoint], budget: f64) -> Option<f64> {
    front
        .iter()
        .filter(|p| p.gdp_loss <= budget)
        .map(|p| p.death_rate)
        .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.min(d))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindSummary {
    pub kind: PolicyKind,
    pub evaluated: usize,
    /// Frontier sorted by increasing GDP loss; the first entry maximizes GDP.
    pub frontier: Vec<FrontierPoint>,
    pub death_rate_at_budget: Option<f64>,
}

impl KindSummary {
    pub fn gdp_max(&self) -> Option<&FrontierPoint> {
        self.frontier.first()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Every evaluated policy, grid by grid in canonical order, with
    /// `dominated` set relative to its own kind.
    pub points: Vec<FrontierPoint>,
    pub kinds: Vec<KindSummary>,
    /// Policies whose evaluation failed, with the reason.
    pub failures: Vec<(String, String)>,
    pub budget: f64,
}

impl SweepResult {
    pub fn kind(&self, kind: PolicyKind) -> Option<&KindSummary> {
        self.kinds.iter().find(|k| k.kind == kind)
    }

    /// `kind,L_<g>...,gdp_loss,death_rate,social_cost,on_frontier`. Levels
    /// of multi-interval policies are joined with `;`.
    pub fn to_csv(&self, model: &MrModel) -> String {
        let mut out = String::from("kind");
        for g in &model.params.groups {
            let _ = write!(out, ",L_{}", g.name);
        }
        out.push_str(",gdp_loss,death_rate,social_cost,on_frontier\n");
        for p in &self.points {
            out.push_str(p.policy.kind.as_str());
            for l in &p.policy.levels {
                let joined: Vec<String> = l.iter().map(|v| v.to_string()).collect();
                let _ = write!(out, ",{}", joined.join(";"));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                p.gdp_loss, p.death_rate, p.social_cost, !p.dominated
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for k in &self.kinds {
            let _ = writeln!(
                out,
                "{}: {} policies, {} on frontier",
                k.kind.as_str(),
                k.evaluated,
                k.frontier.len()
            );
            if let Some(p) = k.gdp_max() {
                let _ = writeln!(
                    out,
                    "  GDP-maximizing frontier point: levels {} gdp_loss {:.4}% death_rate {:.4}%",
                    p.policy.encoding(),
                    100.0 * p.gdp_loss,
                    100.0 * p.death_rate
                );
            }
            match k.death_rate_at_budget {
                Some(d) => {
                    let _ = writeln!(
                        out,
                        "  lowest death_rate with gdp_loss <= {:.2}%: {:.4}%",
                        100.0 * self.budget,
                        100.0 * d
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "  no policy keeps gdp_loss <= {:.2}%",
                        100.0 * self.budget
                    );
                }
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "{} policies failed:", self.failures.len());
            for (enc, why) in &self.failures {
                let _ = writeln!(out, "  {enc}: {why}");
            }
        }
        out
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Evaluates every policy of every grid on a pool of `workers` threads.
/// Output order depends only on the grids.
pub fn frontier_sweep(
    model: &MrModel,
    grids: &[PolicyGrid],
    workers: usize,
    budget: f64,
) -> Result<SweepResult> {
    let pool = pool(workers)?;
    let mut points = Vec::new();
    let mut kinds = Vec::new();
    let mut failures = Vec::new();
    for grid in grids {
        let policies = grid.policies();
        let results: Vec<Result<FrontierPoint>> = pool.install(|| {
            policies
                .par_iter()
                .map(|p| evaluate_policy(model, p))
                .collect()
        });
        let mut ok = Vec::with_capacity(results.len());
        for (policy, r) in policies.iter().zip(results) {
            match r {
                Ok(p) => ok.push(p),
                Err(e) => failures.push((policy.encoding(), e.to_string())),
            }
        }
        let front = pareto_indices(&ok);
        for p in ok.iter_mut() {
            p.dominated = true;
        }
        for &i in &front {
            ok[i].dominated = false;
        }
        let frontier: Vec<FrontierPoint> = front.iter().map(|&i| ok[i].clone()).collect();
        kinds.push(KindSummary {
            kind: grid.kind,
            evaluated: ok.len(),
            death_rate_at_budget: death_rate_at_budget(&frontier, budget),
            frontier,
        });
        points.extend(ok);
    }
    Ok(SweepResult {
        points,
        kinds,
        failures,
        budget,
    })
}

/// Copy of `model` with a different value of a death, in worker-years.
pub fn with_chi_years(model: &MrModel, chi_years: f64) -> MrModel {
    let mut m = model.clone();
    m.params.chi_years = chi_years;
    let chi = m.params.chi();
    for (g, r) in m.params.groups.iter().zip(m.resolved.iter_mut()) {
        r.chi_hat = chi_hat(g.w, m.params.r, chi, g.delta);
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPolicy {
    pub point: FrontierPoint,
    pub grid_best: FrontierPoint,
    /// Whether the continuous refinement met its tolerance. When it did not,
    /// `point` is the grid optimum.
    pub converged: bool,
    pub evaluations: usize,
}

/// Minimizes the social cost over the constant targeted grid, then refines
/// the best grid point with Nelder–Mead in the box `[0, lbar_i]`.
pub fn optimal_policy(
    model: &MrModel,
    chi_years: f64,
    step: f64,
    workers: usize,
) -> Result<OptimalPolicy> {
    if !(chi_years >= 0.0) {
        return Err(Error::invalid("chi", "must be >= 0"));
    }
    let model = with_chi_years(model, chi_years);
    let grid = PolicyGrid::targeted(&model, step);
    let sweep = frontier_sweep(&model, std::slice::from_ref(&grid), workers, DEFAULT_BUDGET)?;
    let grid_best = sweep
        .points
        .iter()
        .min_by(|a, b| {
            a.social_cost
                .total_cmp(&b.social_cost)
                .then_with(|| a.policy.encoding().cmp(&b.policy.encoding()))
        })
        .cloned()
        .ok_or_else(|| Error::NonConvergence("no grid policy could be evaluated".into()))?;

    let lbar: Vec<f64> = model.params.groups.iter().map(|g| g.lbar).collect();
    let clamp = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&lbar)
            .map(|(v, hi)| v.clamp(0.0, *hi))
            .collect()
    };
    let cost = |x: &[f64]| -> f64 {
        let policy = LockdownPolicy::constant(PolicyKind::Targeted, clamp(x));
        model
            .simulate(&policy)
            .and_then(|t| model.social_cost(&policy, &t))
            .unwrap_or(f64::NAN)
    };
    let x0: Vec<f64> = grid_best.policy.levels.iter().map(|l| l[0]).collect();
    let mut opts = NelderMeadOptions::new(x0.len(), step);
    opts.size_tol = 1e-6;
    opts.max_evals = 600;
    // step towards the interior where the grid point sits on the upper bound
    for (s, (x, hi)) in opts.initial_step.iter_mut().zip(x0.iter().zip(&lbar)) {
        if x + *s > *hi {
            *s = -*s;
        }
    }
    let m = nelder_mead(cost, &x0, &opts);
    let evaluations = grid.len() + m.evals;
    if !m.converged || !(m.f <= grid_best.social_cost) {
        return Ok(OptimalPolicy {
            point: grid_best.clone(),
            grid_best,
            converged: false,
            evaluations,
        });
    }
    let refined = LockdownPolicy::constant(PolicyKind::Targeted, clamp(&m.x));
    let point = evaluate_policy(&model, &refined)?;
    Ok(OptimalPolicy {
        point,
        grid_best,
        converged: true,
        evaluations,
    })
}

/// Optimal targeted policy for each value of a death.
pub fn chi_sweep(
    model: &MrModel,
    chis: &[f64],
    step: f64,
    workers: usize,
) -> Result<Vec<(f64, OptimalPolicy)>> {
    chis.iter()
        .map(|&c| optimal_policy(model, c, step, workers).map(|o| (c, o)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::default_params;
    use crate::multirisk::MrParams;

    fn point(gdp: f64, death: f64, tag: f64) -> FrontierPoint {
        FrontierPoint {
            policy: LockdownPolicy::constant(PolicyKind::Targeted, vec![tag]),
            gdp_loss: gdp,
            death_rate: death,
            social_cost: 0.0,
            dominated: false,
        }
    }

    fn pairs(front: &[FrontierPoint]) -> Vec<(f64, f64)> {
        front.iter().map(|p| (p.gdp_loss, p.death_rate)).collect()
    }

    #[test]
    fn textbook_dominance() {
        let pts = [
            point(1.0, 3.0, 0.0),
            point(2.0, 2.0, 0.1),
            point(3.0, 1.0, 0.2),
            point(3.0, 3.0, 0.3),
        ];
        assert_eq!(
            pairs(&pareto_front(&pts)),
            vec![(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)]
        );
    }

    #[test]
    fn single_and_identical() {
        let one = [point(0.5, 0.5, 0.0)];
        assert_eq!(pareto_front(&one).len(), 1);
        let same = [point(1.0, 1.0, 0.3), point(1.0, 1.0, 0.1), point(1.0, 1.0, 0.2)];
        let f = pareto_front(&same);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].policy.encoding(), "0.1");
    }

    #[test]
    fn weak_dominance_removes_ties_in_one_coordinate() {
        let pts = [point(1.0, 2.0, 0.0), point(1.0, 3.0, 0.1), point(2.0, 2.0, 0.2)];
        assert_eq!(pairs(&pareto_front(&pts)), vec![(1.0, 2.0)]);
    }

    #[test]
    fn level_sets_nest() {
        let coarse = level_set(0.7, 0.05);
        assert_eq!(coarse.len(), 15);
        assert_eq!(level_set(1.0, 0.05).len(), 21);
        let fine = level_set(0.7, 0.025);
        for (k, v) in coarse.iter().enumerate() {
            assert_eq!(fine[2 * k].to_bits(), v.to_bits());
        }
    }

    fn model() -> MrModel {
        MrModel::new(MrParams::baseline(default_params())).unwrap()
    }

    #[test]
    fn grid_enumeration() {
        let m = model();
        let u = PolicyGrid::uniform(&m, UNIFORM_LBAR, 0.35);
        let t = PolicyGrid::targeted(&m, 0.35);
        assert_eq!(u.len(), 3);
        assert_eq!(t.len(), 3 * 3 * 3);
        let tp = t.policies();
        assert_eq!(tp.len(), 27);
        assert_eq!(tp[1].encoding(), "0/0/0.35");
        for p in u.policies() {
            let same = tp.iter().any(|q| q.levels == p.levels);
            assert!(same, "{} missing from targeted grid", p.encoding());
        }
        let two = PolicyGrid::targeted(&m, 0.35).with_starts(vec![0.0, 90.0]);
        assert_eq!(two.len(), 9 * 9 * 9);
        assert_eq!(two.policies().len(), 729);
        let u2 = PolicyGrid::uniform(&m, UNIFORM_LBAR, 0.35).with_starts(vec![0.0, 90.0]);
        assert_eq!(u2.policies().len(), 9);
    }

    #[test]
    fn corners_and_determinism() {
        let m = model();
        let none = evaluate_policy(&m, &LockdownPolicy::none(3)).unwrap();
        let full = evaluate_policy(
            &m,
            &LockdownPolicy::constant(PolicyKind::Targeted, vec![0.7, 0.7, 1.0]),
        )
        .unwrap();
        assert!(none.death_rate > full.death_rate);
        assert!(none.gdp_loss < full.gdp_loss);
        let again = evaluate_policy(&m, &LockdownPolicy::none(3)).unwrap();
        assert_eq!(none, again);
    }

    #[test]
    fn one_point_sweep() {
        let m = model();
        let grid = PolicyGrid {
            kind: PolicyKind::Uniform,
            levels: vec![vec![0.0]; 3],
            starts: vec![0.0],
        };
        let s = frontier_sweep(&m, &[grid], 2, DEFAULT_BUDGET).unwrap();
        assert_eq!(s.points.len(), 1);
        assert!(!s.points[0].dominated);
        let csv = s.to_csv(&m);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "kind,L_y,L_m,L_o,gdp_loss,death_rate,social_cost,on_frontier"
        );
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("uniform,0,0,0,") && lines[1].ends_with(",true"));
    }

    #[test]
    fn coarse_sweep_properties() {
        let m = model();
        let grids = [
            PolicyGrid::uniform(&m, UNIFORM_LBAR, 0.1),
            PolicyGrid::targeted(&m, 0.1),
        ];
        let s = frontier_sweep(&m, &grids, 4, DEFAULT_BUDGET).unwrap();
        let u = s.kind(PolicyKind::Uniform).unwrap();
        let t = s.kind(PolicyKind::Targeted).unwrap();
        for p in &u.frontier {
            assert!(t
                .frontier
                .iter()
                .any(|q| q.gdp_loss <= p.gdp_loss && q.death_rate <= p.death_rate));
        }
        for f in [&u.frontier, &t.frontier] {
            for w in f.windows(2) {
                assert!(w[0].gdp_loss <= w[1].gdp_loss && w[1].death_rate < w[0].death_rate);
            }
        }
        let again = frontier_sweep(&m, &grids, 1, DEFAULT_BUDGET).unwrap();
        assert_eq!(s.to_csv(&m), again.to_csv(&m));
    }

    #[test]
    fn degenerate_death_values() {
        let m = model();
        let free = optimal_policy(&m, 0.0, 0.35, 4).unwrap();
        // with costless deaths only output matters, so the workers stay open
        let levels = &free.point.policy.levels;
        assert!(levels[0][0] < 0.05 && levels[1][0] < 0.05, "{levels:?}");

        let precious = optimal_policy(&m, 20.0 * 1e4, 0.35, 4).unwrap();
        let levels = &precious.point.policy.levels;
        assert!(levels[2][0] > 0.9, "{levels:?}");
    }
}
