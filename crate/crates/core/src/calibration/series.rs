//! Daily death series: CSV ingestion, gap filling and smoothing.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Width of the centered moving-average window, in days.
pub const WINDOW: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct DeathSeries {
    /// One entry per calendar day, consecutive.
    pub dates: Vec<NaiveDate>,
    pub raw: Vec<f64>,
    /// Days absent from the input and filled with zero.
    pub filled: Vec<bool>,
    /// `smoothed[k]` is centered on `raw[k + 3]`.
    pub smoothed: Vec<f64>,
}

impl DeathSeries {
    /// Series of consecutive days starting at `start`.
    pub fn from_values(start: NaiveDate, raw: Vec<f64>) -> Result<Self> {
        if raw.len() < WINDOW {
            return Err(Error::Data {
                path: PathBuf::from("<memory>"),
                reason: format!("need at least {WINDOW} days, got {}", raw.len()),
            });
        }
        if let Some(v) = raw.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data {
                path: PathBuf::from("<memory>"),
                reason: format!("daily deaths must be finite and nonnegative, got {v}"),
            });
        }
        let dates = start.iter_days().take(raw.len()).collect();
        let smoothed = moving_average(&raw, WINDOW);
        let filled = vec![false; raw.len()];
        Ok(Self {
            dates,
            raw,
            filled,
            smoothed,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.raw.iter().sum()
    }

    /// Index of the first day at or after `date`.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let k = (date - first).num_days();
        (k >= 0 && (k as usize) < self.len()).then_some(k as usize)
    }
}

/// Centered moving average over full windows only; `len − window + 1`
/// entries. The window should be odd.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

pub fn load_death_csv(path: &Path) -> Result<DeathSeries> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_death_csv(&text, path)
}

/// Parses `date,deaths` CSV text. `path` is used only in error messages.
pub fn parse_death_csv(text: &str, path: &Path) -> Result<DeathSeries> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text
        .trim_start_matches('\u{feff}')
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| Error::Data {
        path: path.to_path_buf(),
        reason: "file is empty".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["date", "deaths"] {
        return Err(parse_err(
            hline,
            format!("expected header `date,deaths`, found `{header}`"),
        ));
    }

    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for (line, content) in lines {
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d")
            .map_err(|e| parse_err(line, format!("bad date `{}`: {e}", fields[0])))?;
        let count: i64 = fields[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad death count `{}`", fields[1])))?;
        if count < 0 {
            return Err(parse_err(line, format!("negative death count {count}")));
        }
        rows.push((date, count as f64, line));
    }
    if rows.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }

    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(parse_err(
                w[0].2.max(w[1].2),
                format!("duplicate date {}", w[1].0),
            ));
        }
    }

    let first = rows[0].0;
    let span = (rows[rows.len() - 1].0 - first).num_days() as usize + 1;
    if span < WINDOW {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: format!("need at least {WINDOW} days, got {span}"),
        });
    }
    let mut raw = vec![0.0; span];
    let mut filled = vec![true; span];
    for (date, v, _) in &rows {
        let k = (*date - first).num_days() as usize;
        raw[k] = *v;
        filled[k] = false;
    }
    let dates = first.iter_days().take(span).collect();
    let smoothed = moving_average(&raw, WINDOW);
    Ok(DeathSeries {
        dates,
        raw,
        filled,
        smoothed,
    })
}

/// CSV text for a series, one row per day.
pub fn death_csv(series: &DeathSeries) -> String {
    let mut out = String::from("date,deaths\n");
    for (d, v) in series.dates.iter().zip(&series.raw) {
        out.push_str(&format!("{},{}\n", d.format("%Y-%m-%d"), v.round() as i64));
    }
    out
}
