//! Default rates and the flat `key=value` parameter format.

use crate::error::{Error, Result};
use crate::model::{BetaSchedule, ModelParams};

/// The shipped defaults file. Keys are exactly the [`ModelParams`] field names.
pub const DEFAULTS_TEXT: &str = include_str!("../../data/default_params.txt");

/// Every key accepted by [`apply_param`], in file order.
pub const PARAM_KEYS: [&str; 18] = [
    "pi_birth",
    "mu",
    "nu",
    "beta",
    "eps_e",
    "eps_q",
    "eps_h",
    "s_r",
    "gamma_e",
    "gamma_i",
    "r_i",
    "r_h",
    "r_q",
    "sigma_e",
    "sigma_q",
    "d_i",
    "d_h",
    "strict_paper_eq6",
];

/// Parameters parsed from [`DEFAULTS_TEXT`].
pub fn default_params() -> ModelParams {
    params_from_text(DEFAULTS_TEXT).expect("shipped defaults file is valid")
}

/// Parses a number written either plainly or as a left-to-right chain of
/// divisions such as `7.37/1000/365`.
pub fn parse_number(text: &str) -> Option<f64> {
    let mut parts = text.split('/').map(str::trim);
    let mut value: f64 = parts.next()?.parse().ok()?;
    for p in parts {
        let d: f64 = p.parse().ok()?;
        value /= d;
    }
    value.is_finite().then_some(value)
}

pub fn parse_bool(text: &str) -> Option<bool> {
    match text.trim() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Sets one field from its text form. Returns `Ok(false)` for a key that is
/// not a parameter name, leaving `params` untouched.
pub fn apply_param(params: &mut ModelParams, key: &str, value: &str) -> Result<bool> {
    let bad = || Error::Config(format!("cannot parse value `{value}` for `{key}`"));
    let num = || parse_number(value).ok_or_else(bad);
    match key {
        "pi_birth" => params.pi_birth = num()?,
        "mu" => params.mu = num()?,
        "nu" => params.nu = num()?,
        "beta" => params.beta = value.parse::<BetaSchedule>()?,
        "eps_e" => params.eps_e = num()?,
        "eps_q" => params.eps_q = num()?,
        "eps_h" => params.eps_h = num()?,
        "s_r" => params.s_r = num()?,
        "gamma_e" => params.gamma_e = num()?,
        "gamma_i" => params.gamma_i = num()?,
        "r_i" => params.r_i = num()?,
        "r_h" => params.r_h = num()?,
        "r_q" => params.r_q = num()?,
        "sigma_e" => params.sigma_e = num()?,
        "sigma_q" => params.sigma_q = num()?,
        "d_i" => params.d_i = num()?,
        "d_h" => params.d_h = num()?,
        "strict_paper_eq6" => params.strict_paper_eq6 = parse_bool(value).ok_or_else(bad)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Yields
/// `(line_number, key, value)`.
pub fn kv_lines(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str)>> {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        Some(match line.split_once('=') {
            Some((a, b)) => Ok((k + 1, a.trim(), b.trim())),
            None => Err(Error::Config(format!("line {}: expected `key = value`", k + 1))),
        })
    })
}

/// Reads a complete parameter file; every key must appear exactly once.
pub fn params_from_text(text: &str) -> Result<ModelParams> {
    let mut p = ModelParams {
        pi_birth: 0.0,
        mu: 0.0,
        nu: 0.0,
        beta: BetaSchedule::constant(0.0),
        eps_e: 0.0,
        eps_q: 0.0,
        eps_h: 0.0,
        s_r: 0.0,
        gamma_e: 0.0,
        gamma_i: 0.0,
        r_i: 0.0,
        r_h: 0.0,
        r_q: 0.0,
        sigma_e: 0.0,
        sigma_q: 0.0,
        d_i: 0.0,
        d_h: 0.0,
        strict_paper_eq6: false,
    };
    let mut seen = [false; PARAM_KEYS.len()];
    for item in kv_lines(text) {
        let (line, key, value) = item?;
        let slot = PARAM_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Config(format!("line {line}: unknown key `{key}`")))?;
        if seen[slot] {
            return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
        }
        seen[slot] = true;
        apply_param(&mut p, key, value)
            .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!("missing key `{}`", PARAM_KEYS[k])));
    }
    p.validate()?;
    Ok(p)
}

/// Text form readable by [`params_from_text`]; floats are written in their
/// shortest round-tripping representation.
pub fn params_to_text(p: &ModelParams) -> String {
    let values: [String; PARAM_KEYS.len()] = [
        p.pi_birth.to_string(),
        p.mu.to_string(),
        p.nu.to_string(),
        p.beta.to_string(),
        p.eps_e.to_string(),
        p.eps_q.to_string(),
        p.eps_h.to_string(),
        p.s_r.to_string(),
        p.gamma_e.to_string(),
        p.gamma_i.to_string(),
        p.r_i.to_string(),
        p.r_h.to_string(),
        p.r_q.to_string(),
        p.sigma_e.to_string(),
        p.sigma_q.to_string(),
        p.d_i.to_string(),
        p.d_h.to_string(),
        p.strict_paper_eq6.to_string(),
    ];
    let mut out = String::new();
    for (k, v) in PARAM_KEYS.iter().zip(values) {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}
