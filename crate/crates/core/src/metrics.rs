//! Continuity and outcome metrics on executed action streams.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvSpec};
use crate::error::{Error, Result};
use crate::executor::RolloutLog;

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean `||a[t+1] - a[t]||`.
pub fn action_delta(actions: &[Vec<f64>]) -> Result<f64> {
    if actions.len() < 2 {
        return Err(Error::Config(format!(
            "action_delta needs >= 2 actions, got {}",
            actions.len()
        )));
    }
    let sum: f64 = actions.windows(2).map(|w| l2_diff(&w[1], &w[0])).sum();
    Ok(sum / (actions.len() - 1) as f64)
}

/// Mean `||a[t+2] - 2 a[t+1] + a[t]||`.
pub fn action_jerk(actions: &[Vec<f64>]) -> Result<f64> {
    if actions.len() < 3 {
        return Err(Error::Config(format!(
            "action_jerk needs >= 3 actions, got {}",
            actions.len()
        )));
    }
    let sum: f64 = actions
        .windows(3)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .zip(&w[2])
                .map(|((a, b), c)| {
                    let s = c - 2.0 * b + a;
                    s * s
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(sum / (actions.len() - 2) as f64)
}

/// Mean action jump into the first step of every newly adopted chunk.
pub fn boundary_jump(log: &RolloutLog) -> Result<f64> {
    let usable: Vec<usize> = log
        .boundaries
        .iter()
        .copied()
        .filter(|&b| b >= 1 && b < log.actions.len())
        .collect();
    if usable.is_empty() {
        return Err(Error::Config("boundary_jump needs at least one chunk boundary".into()));
    }
    let sum: f64 = usable
        .iter()
        .map(|&b| l2_diff(&log.actions[b], &log.actions[b - 1]))
        .sum();
    Ok(sum / usable.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub action_delta: f64,
    pub action_jerk: f64,
    pub boundary_jump: f64,
}

impl ContinuityReport {
    pub fn from_log(log: &RolloutLog) -> Result<Self> {
        Ok(Self {
            action_delta: action_delta(&log.actions)?,
            action_jerk: action_jerk(&log.actions)?,
            boundary_jump: boundary_jump(log)?,
        })
    }
}

/// One rollout's outcome, in the column order of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub task: String,
    pub delay: usize,
    pub seed: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub solve: u8,
    pub action_delta: f64,
    pub action_jerk: f64,
    pub boundary_jump: f64,
}

pub const RESULT_COLUMNS: [&str; 9] = [
    "method",
    "task",
    "delay",
    "seed",
    "return",
    "solve",
    "action_delta",
    "action_jerk",
    "boundary_jump",
];

pub fn result_row(method: &str, spec: &EnvSpec, delay: usize, seed: u64, log: &RolloutLog) -> Result<ResultRow> {
    let c = ContinuityReport::from_log(log)?;
    Ok(ResultRow {
        method: method.to_string(),
        task: spec.task.tag().to_string(),
        delay,
        seed,
        ret: envs::episode_return(log),
        solve: u8::from(envs::solve(log, spec)),
        action_delta: c.action_delta,
        action_jerk: c.action_jerk,
        boundary_jump: c.boundary_jump,
    })
}

/// Writes `#`-prefixed comment lines, then a headed CSV of `rows`.
pub fn write_csv<W: Write, T: Serialize>(out: W, comments: &[String], rows: &[T]) -> Result<()> {
    let mut out = out;
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], skipping comment lines.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::MissingInput {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e)))
        .collect()
}

/// Mean outcome of one `(method, task, delay)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub task: String,
    pub delay: usize,
    pub episodes: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub solve_rate: f64,
    pub action_delta: f64,
    pub action_jerk: f64,
    pub boundary_jump: f64,
}

/// Groups rows by `(method, task, delay)` in first-seen order and averages.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut cells: Vec<(CellSummary, usize)> = Vec::new();
    for r in rows {
        let pos = cells
            .iter()
            .position(|(c, _)| c.method == r.method && c.task == r.task && c.delay == r.delay);
        let (cell, n) = match pos {
            Some(i) => &mut cells[i],
            None => {
                cells.push((
                    CellSummary {
                        method: r.method.clone(),
                        task: r.task.clone(),
                        delay: r.delay,
                        episodes: 0,
                        ret: 0.0,
                        solve_rate: 0.0,
                        action_delta: 0.0,
                        action_jerk: 0.0,
                        boundary_jump: 0.0,
                    },
                    0,
                ));
                cells.last_mut().expect("just pushed")
            }
        };
        *n += 1;
        cell.ret += r.ret;
        cell.solve_rate += f64::from(r.solve);
        cell.action_delta += r.action_delta;
        cell.action_jerk += r.action_jerk;
        cell.boundary_jump += r.boundary_jump;
    }
    cells
        .into_iter()
        .map(|(mut c, n)| {
            let k = n as f64;
            c.episodes = n;
            c.ret /= k;
            c.solve_rate /= k;
            c.action_delta /= k;
            c.action_jerk /= k;
            c.boundary_jump /= k;
            c
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<BootstrapCI> {
    if values.len() < 2 {
        return Err(Error::Config(format!(
            "bootstrap needs >= 2 values, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::Config("bootstrap level must be in (0, 1) and resamples >= 1".into()));
    }
    let n = values.len();
    let mean = |xs: &mut dyn Iterator<Item = f64>| xs.sum::<f64>() / n as f64;
    let point = mean(&mut values.iter().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| mean(&mut (0..n).map(|_| values[rng.gen_range(0..n)])))
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - alpha) * resamples as f64).ceil() as usize)
        .saturating_sub(1)
        .min(resamples - 1);
    // a percentile interval can miss the point estimate on skewed data
    Ok(BootstrapCI {
        point,
        lower: stats[lo].min(point),
        upper: stats[hi].max(point),
        level,
        resamples,
    })
}
