use std::fmt::Write as _;

use seqihr::calibration::series::parse_death_csv;
use seqihr::calibration::{fit, model_daily_deaths, moving_average, DeathSeries, WINDOW};
use seqihr::equilibria::{disease_free_equilibrium, pandemic_equilibrium, EquilibriumPoint};
use seqihr::integrator::{simulate, IntegrationConfig};
use seqihr::model::{CompartmentState, ModelParams};
use seqihr::multirisk::{MrModel, PolicyKind};
use seqihr::policy::{chi_sweep, frontier_sweep, FrontierPoint, PolicyGrid};
use seqihr::reproduction::reproduction_report;
use seqihr::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::plot::{chart, Series};

/// Whether every iterative solve of the command met its tolerance.
pub type Converged = bool;

fn load_series(config: &RunConfig, run: &mut Run) -> Result<Option<DeathSeries>> {
    let Some(path) = &config.deaths_csv else {
        return Ok(None);
    };
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    run.input(path, &bytes);
    let text = String::from_utf8(bytes).map_err(|_| Error::Data {
        path: path.clone(),
        reason: "not UTF-8 text".into(),
    })?;
    parse_death_csv(&text, path).map(Some)
}

fn require_series(config: &RunConfig, run: &mut Run) -> Result<DeathSeries> {
    load_series(config, run)?
        .ok_or_else(|| Error::Config("`fit` needs `deaths_csv` in the config".into()))
}

fn state_row(s: &CompartmentState, scale: f64) -> String {
    [s.s, s.e, s.i, s.q, s.h, s.r, s.d]
        .iter()
        .map(|v| (v * scale).to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn cmd_simulate(config: &RunConfig, run: &mut Run) -> Result<Converged> {
    let series = load_series(config, run)?;
    let traj = simulate(
        &config.params,
        &config.single_initial(),
        &IntegrationConfig::new(config.dt, config.horizon),
    )?;
    let pop = config.population;
    let mut csv = String::from("t,S,E,I,Q,H,R,D,daily_deaths\n");
    for (t, s) in traj.times.iter().zip(&traj.states) {
        if (t - t.round()).abs() > 1e-9 {
            continue;
        }
        let day = t.round() as usize;
        let daily = if day == 0 { 0.0 } else { traj.daily_deaths[day - 1] * pop };
        let _ = writeln!(csv, "{t},{},{daily}", state_row(s, pop));
    }
    run.write("trajectory.csv", &csv)?;
    println!(
        "simulated {} days: cumulative deaths {:.1}, peak daily deaths {:.1}",
        traj.daily_deaths.len(),
        traj.cumulative_deaths() * pop,
        traj.daily_deaths.iter().fold(0.0f64, |a, b| a.max(*b)) * pop
    );
    if config.plot {
        let mut lines = vec![Series {
            label: "model",
            color: "blue",
            points: traj
                .daily_deaths
                .iter()
                .enumerate()
                .map(|(k, d)| ((k + 1) as f64, d * pop))
                .collect(),
            markers: false,
        }];
        if let Some(s) = &series {
            let offset = WINDOW / 2;
            lines.push(Series {
                label: "data (7-day mean)",
                color: "red",
                points: s
                    .smoothed
                    .iter()
                    .enumerate()
                    .map(|(k, v)| ((k + offset) as f64, *v))
                    .collect(),
                markers: false,
            });
        }
        run.write("trajectory.svg", &chart("Daily deaths", "day", "deaths per day", &lines))?;
    }
    Ok(true)
}

fn equilibrium_row(out: &mut String, source: &str, p: &EquilibriumPoint) {
    let s = &p.state;
    let _ = writeln!(
        out,
        "{:?},{source},{},{},{},{},{},{},{},{},{}",
        p.kind,
        s.s,
        s.e,
        s.i,
        s.q,
        s.h,
        s.r,
        s.n(),
        p.residual,
        p.admissible
    );
}

fn print_point(source: &str, p: &EquilibriumPoint) {
    let s = &p.state;
    println!(
        "{:<12} {:<12} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>10.2e} {}",
        format!("{:?}", p.kind),
        source,
        s.s,
        s.e,
        s.i,
        s.q,
        s.h,
        s.r,
        p.residual,
        if p.admissible { "yes" } else { "no" }
    );
}

pub fn cmd_equilibrium(config: &RunConfig, run: &mut Run) -> Result<Converged> {
    let p = &config.params;
    let dfe = disease_free_equilibrium(p)?;
    let mut csv = String::from("kind,source,S,E,I,Q,H,R,N,residual,admissible\n");
    println!(
        "{:<12} {:<12} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>10} admissible",
        "point", "source", "S", "E", "I", "Q", "H", "R", "residual"
    );
    equilibrium_row(&mut csv, "exact", &dfe);
    print_point("exact", &dfe);
    let mut converged = true;
    match pandemic_equilibrium(p) {
        Ok(report) => {
            equilibrium_row(&mut csv, "closed_form", &report.closed_form);
            print_point("closed_form", &report.closed_form);
            match &report.numerical {
                Some(num) => {
                    equilibrium_row(&mut csv, "numerical", num);
                    print_point("numerical", num);
                }
                None => converged = false,
            }
            if let Some(gap) = report.relative_gap {
                println!("closed form vs numerical relative gap: {gap:.3e}");
            }
            if let Some(m) = &report.mismatch {
                println!("warning: closed form and numerical root disagree");
                println!("{m}");
                run.write("equilibrium_divergence.txt", m)?;
            }
        }
        Err(e @ Error::NoAdmissibleEquilibrium(_)) => println!("{e}"),
        Err(e) => return Err(e),
    }
    run.write("equilibrium.csv", &csv)?;
    Ok(converged)
}

pub fn cmd_reproduction(config: &RunConfig, run: &mut Run) -> Result<Converged> {
    let p = &config.params;
    let state = match config.rc_state {
        Some(v) => CompartmentState::from_slice(0.0, &[v[0], v[1], v[2], v[3], v[4], v[5], 0.0]),
        None => disease_free_equilibrium(p)?.state,
    };
    let r = reproduction_report(p, &state)?;
    let verdict = if r.threshold_consistent { "consistent" } else { "inconsistent" };
    println!("R_0          {:.6}", r.r_0);
    println!("R_C          {:.6}", r.r_c);
    println!("growth rate  {:.6e} per day", r.growth_rate);
    println!("threshold    {verdict} (sign of R_0 - 1 vs seed growth)");
    let csv = format!(
        "quantity,value\nr_0,{}\nr_c,{}\ngrowth_rate,{}\nthreshold_consistent,{}\n",
        r.r_0, r.r_c, r.growth_rate, r.threshold_consistent
    );
    run.write("reproduction.csv", &csv)?;
    Ok(true)
}

pub fn cmd_fit(config: &RunConfig, run: &mut Run) -> Result<Converged> {
    let series = require_series(config, run)?;
    let breaks = config.resolve_breaks(series.dates[0], series.len())?;
    let result = fit(&config.params, &series, &breaks, &config.fit_options())?;
    run.write("fit.csv", &result.to_csv())?;
    let summary = format!(
        "e0,rmse,total_deaths_model,total_deaths_data,iterations,converged\n{},{},{},{},{},{}\n",
        result.e0,
        result.rmse,
        result.total_deaths_model,
        series.total(),
        result.iterations,
        result.converged
    );
    run.write("fit_summary.csv", &summary)?;
    let fitted_params = ModelParams {
        beta: result.beta_segments.clone(),
        ..config.params.clone()
    };
    let fitted = RunConfig {
        params: fitted_params.clone(),
        e0: result.e0,
        horizon: series.len() as f64,
        ..config.clone()
    };
    run.write("fitted.conf", &fitted.to_text())?;
    println!("{}", result.summary());
    for (s, b) in result.beta_segments.segments() {
        println!("  beta from day {s}: {b:.6}");
    }
    println!("data deaths {:.0}", series.total());
    if config.plot {
        let model = model_daily_deaths(&fitted_params, result.e0, series.len(), config.population, config.dt)?;
        let offset = WINDOW / 2;
        let smooth = |v: &[f64]| -> Vec<(f64, f64)> {
            moving_average(v, WINDOW)
                .into_iter()
                .enumerate()
                .map(|(k, y)| ((k + offset) as f64, y))
                .collect()
        };
        let lines = [
            Series { label: "model", color: "blue", points: smooth(&model), markers: false },
            Series { label: "data", color: "red", points: smooth(&series.raw), markers: false },
        ];
        run.write("fit.svg", &chart("Model and data, 7-day mean", "day", "deaths per day", &lines))?;
    }
    Ok(result.converged)
}

fn grids(config: &RunConfig, model: &MrModel) -> Vec<PolicyGrid> {
    config
        .grid_kinds
        .iter()
        .map(|k| {
            let g = match k {
                PolicyKind::Uniform => PolicyGrid::uniform(model, config.uniform_lbar, config.grid_step),
                PolicyKind::Targeted => PolicyGrid::targeted(model, config.grid_step),
            };
            g.with_starts(config.policy_starts.clone())
        })
        .collect()
}

fn frontier_points(points: &[FrontierPoint]) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|p| (100.0 * p.gdp_loss, 100.0 * p.death_rate))
        .collect()
}

pub fn cmd_frontier(config: &RunConfig, run: &mut Run) -> Result<Converged> {
    let model = MrModel::new(config.mr_params())?;
    let sweep = frontier_sweep(&model, &grids(config, &model), config.workers, config.budget)?;
    run.write("frontier.csv", &sweep.to_csv(&model))?;
    print!("{}", sweep.summary());
    if config.plot {
        let colors = ["gray", "red"];
        let mut lines = Vec::new();
        for (k, kind) in sweep.kinds.iter().enumerate() {
            lines.push(Series {
                label: kind.kind.as_str(),
                color: colors[k % 2],
                points: frontier_points(&kind.frontier),
                markers: false,
            });
        }
        run.write(
            "frontier.svg",
            &chart("Pareto frontier", "GDP loss (%)", "death rate (%)", &lines),
        )?;
    }
    if !sweep.failures.is_empty() {
        return Err(Error::Degenerate(format!(
            "{} policies could not be evaluated",
            sweep.failures.len()
        )));
    }
    Ok(true)
}

pub fn cmd_policy(config: &RunConfig, run: &mut Run) -> Result<Converged> {
    let model = MrModel::new(config.mr_params())?;
    let results = chi_sweep(&model, &config.policy_chi_years, config.grid_step, config.workers)?;
    let names: Vec<String> = model.params.groups.iter().map(|g| format!("L_{}", g.name)).collect();
    let mut csv = format!(
        "chi_years,{},gdp_loss,death_rate,social_cost,converged\n",
        names.join(",")
    );
    let mut all = true;
    for (chi, opt) in &results {
        let p = &opt.point;
        let levels: Vec<String> = p.policy.levels.iter().map(|l| l[0].to_string()).collect();
        let _ = writeln!(
            csv,
            "{chi},{},{},{},{},{}",
            levels.join(","),
            p.gdp_loss,
            p.death_rate,
            p.social_cost,
            opt.converged
        );
        println!(
            "chi = {chi} years: levels {} gdp_loss {:.4}% death_rate {:.4}% social cost {:.4}{}",
            p.policy.encoding(),
            100.0 * p.gdp_loss,
            100.0 * p.death_rate,
            p.social_cost,
            if opt.converged { "" } else { " (refinement did not converge; grid optimum)" }
        );
        all &= opt.converged;
    }
    run.write("policy.csv", &csv)?;
    if let [(_, only)] = results.as_slice() {
        run.write("policy_levels.csv", &only.point.policy.to_csv(&model))?;
    }
    Ok(all)
}

pub fn dispatch(command: &str, config: &RunConfig, run: &mut Run) -> Result<Converged> {
    match command {
        "simulate" => cmd_simulate(config, run),
        "equilibrium" => cmd_equilibrium(config, run),
        "reproduction" => cmd_reproduction(config, run),
        "fit" => cmd_fit(config, run),
        "frontier" => cmd_frontier(config, run),
        "policy" => cmd_policy(config, run),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}
