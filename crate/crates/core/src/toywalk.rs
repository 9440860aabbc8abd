//! One-dimensional random walk with a parabolic mean path, the toy model
//! for the finite-length correction of the scaling law.
//!
//! The walk starts at `x(0) = n/8` and steps `+-1` with
//! `P(+1) = 1/2 + (l - l*)/(2n)`, `l* = n/2`, for `n` steps. Its mean path
//! `(l - l*)^2 / (2n)` touches zero at `l*`. A trial fails when the walk
//! reaches zero.

use std::io::{Read, Write};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{mix_seed, rng_from_seed};
use crate::stats::{median, weighted_line_fit, wilson, LineFit, Z95};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub n: usize,
    pub trials: u64,
    pub seed: u64,
}

impl WalkConfig {
    pub fn start(&self) -> u32 {
        ((self.n as f64) / 8.0).round() as u32
    }

    pub fn l_star(&self) -> usize {
        self.n / 2
    }

    fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::InvalidArgument(format!("walk scale n = {} below 8", self.n)));
        }
        if self.n > u32::MAX as usize / 2 {
            return Err(Error::InvalidArgument("walk scale too large".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// `P(+1)` at step `l` scaled to `2^32`, as an exclusive upper bound on a
/// uniform `u32`.
fn up_thresholds(n: usize) -> Vec<u64> {
    let l_star = (n / 2) as f64;
    (0..n)
        .map(|l| {
            let p = (0.5 + (l as f64 - l_star) / (2.0 * n as f64)).clamp(0.0, 1.0);
            (p * 4_294_967_296.0).round() as u64
        })
        .collect()
}

/// Streams uniform `u32` values, two per generator call.
struct U32Stream {
    rng: crate::graph::Rng,
    spare: Option<u32>,
}

impl U32Stream {
    #[inline]
    fn next(&mut self) -> u32 {
        match self.spare.take() {
            Some(v) => v,
            None => {
                let w = self.rng.next_u64();
                self.spare = Some((w >> 32) as u32);
                w as u32
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrialOutcome {
    Failed,
    /// Argmin of the path and depth `x(l*) - x(l_g)`.
    Survived { l_g: u32, depth: u32 },
}

fn run_trial(thr: &[u64], start: u32, l_star: usize, seed: u64) -> TrialOutcome {
    let n = thr.len();
    let mut u = U32Stream {
        rng: rng_from_seed(seed),
        spare: None,
    };
    let mut x = start as i64;
    let mut x_min = x;
    let mut l_g = 0usize;
    // up to l*: the walk may fail, the minimum moves often
    for (l, &t) in thr[..l_star].iter().enumerate() {
        x += 2 * ((u.next() as u64) < t) as i64 - 1;
        if x < x_min {
            if x <= 0 {
                return TrialOutcome::Failed;
            }
            x_min = x;
            l_g = l + 1;
        }
    }
    let x_at_star = x;
    for (l, &t) in thr.iter().enumerate().skip(l_star) {
        x += 2 * ((u.next() as u64) < t) as i64 - 1;
        if x < x_min {
            if x <= 0 {
                return TrialOutcome::Failed;
            }
            x_min = x;
            l_g = l + 1;
        } else if x - x_min > (n - l - 1) as i64 {
            // the remaining steps cannot bring the walk back below its minimum
            break;
        }
    }
    TrialOutcome::Survived {
        l_g: l_g as u32,
        depth: (x_at_star - x_min) as u32,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkResult {
    pub n: usize,
    pub trials: u64,
    pub failures: u64,
    /// Median of `|l_g - l*|` over surviving trials.
    pub median_lg_offset: Option<f64>,
    /// Median of `x(l*) - x(l_g)` over surviving trials.
    pub median_depth: Option<f64>,
}

impl WalkResult {
    pub fn p_hat(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }

    pub fn interval(&self) -> (f64, f64) {
        wilson(self.failures, self.trials, Z95)
    }
}

pub fn walk_simulate(cfg: &WalkConfig) -> Result<WalkResult> {
    cfg.validate()?;
    let thr = up_thresholds(cfg.n);
    let start = cfg.start();
    let l_star = cfg.l_star();
    let (failures, mut offsets, mut depths) = (0..cfg.trials)
        .into_par_iter()
        .fold(
            || (0u64, Vec::new(), Vec::new()),
            |(mut f, mut off, mut dep), t| {
                match run_trial(&thr, start, l_star, mix_seed(cfg.seed, t)) {
                    TrialOutcome::Failed => f += 1,
                    TrialOutcome::Survived { l_g, depth } => {
                        off.push((l_g as i64 - l_star as i64).unsigned_abs() as f64);
                        dep.push(depth as f64);
                    }
                }
                (f, off, dep)
            },
        )
        .reduce(
            || (0, Vec::new(), Vec::new()),
            |(fa, mut oa, mut da), (fb, ob, db)| {
                oa.extend(ob);
                da.extend(db);
                (fa + fb, oa, da)
            },
        );
    Ok(WalkResult {
        n: cfg.n,
        trials: cfg.trials,
        failures,
        median_lg_offset: median(&mut offsets),
        median_depth: median(&mut depths),
    })
}

/// Mean and standard deviation of `x(l)` at the given steps for the walk
/// without absorption at zero.
#[allow(clippy::needless_range_loop)]
pub fn free_walk_profile(cfg: &WalkConfig, at: &[usize]) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if let Some(&l) = at.iter().find(|&&l| l > cfg.n) {
        return Err(Error::InvalidArgument(format!("step {l} beyond horizon {}", cfg.n)));
    }
    let thr = up_thresholds(cfg.n);
    let start = cfg.start() as f64;
    let last = at.iter().copied().max().unwrap_or(0);
    let sums = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut u = U32Stream {
                rng: rng_from_seed(mix_seed(cfg.seed, t)),
                spare: None,
            };
            let mut x = start;
            let mut values = vec![0.0; at.len()];
            for l in 0..=last {
                for (v, &a) in values.iter_mut().zip(at) {
                    if a == l {
                        *v = x;
                    }
                }
                if l < cfg.n {
                    x += if (u.next() as u64) < thr[l] { 1.0 } else { -1.0 };
                }
            }
            values
        })
        .fold(
            || vec![(0.0, 0.0); at.len()],
            |mut acc, v| {
                for (a, x) in acc.iter_mut().zip(v) {
                    a.0 += x;
                    a.1 += x * x;
                }
                acc
            },
        )
        .reduce(
            || vec![(0.0, 0.0); at.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
                a
            },
        );
    let n = cfg.trials as f64;
    Ok(sums
        .into_iter()
        .map(|(s, ss)| {
            let mean = s / n;
            (mean, (ss / n - mean * mean).max(0.0).sqrt())
        })
        .collect())
}

/// Log-log fit of `P(n) - 1/2` against `n`, weighted by the binomial
/// variance of each estimate.
pub fn walk_exponent_fit(results: &[WalkResult]) -> Result<LineFit> {
    if results.len() < 4 {
        return Err(Error::Unresolved(format!(
            "{} grid points, at least 4 needed",
            results.len()
        )));
    }
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for r in results {
        let p = r.p_hat();
        let se = (p * (1.0 - p) / r.trials as f64).sqrt();
        let excess = p - 0.5;
        if !(excess > 3.0 * se) || se == 0.0 {
            return Err(Error::Unresolved(format!(
                "n = {}: P - 1/2 = {excess:.3e} within 3 standard errors ({se:.3e})",
                r.n
            )));
        }
        x.push((r.n as f64).ln());
        y.push(excess.ln());
        w.push((excess / se).powi(2));
    }
    weighted_line_fit(&x, &y, &w)
}

/// Unweighted log-log slope of a positive summary against `n`.
pub fn power_law_fit(ns: &[usize], values: &[f64]) -> Result<LineFit> {
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateData("power law needs positive values".into()));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    weighted_line_fit(&x, &y, &vec![1.0; x.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRow {
    pub n: usize,
    pub trials: u64,
    pub failures: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub median_lg_offset: Option<f64>,
    pub median_depth: Option<f64>,
}

impl From<&WalkResult> for WalkRow {
    fn from(r: &WalkResult) -> Self {
        let (ci_lo, ci_hi) = r.interval();
        Self {
            n: r.n,
            trials: r.trials,
            failures: r.failures,
            p_hat: r.p_hat(),
            ci_lo,
            ci_hi,
            median_lg_offset: r.median_lg_offset,
            median_depth: r.median_depth,
        }
    }
}

pub fn write_walk_csv<W: Write>(w: W, rows: &[WalkRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    if rows.is_empty() {
        wr.write_record([
            "n", "trials", "failures", "p_hat", "ci_lo", "ci_hi", "median_lg_offset", "median_depth",
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_walk_csv<R: Read>(r: R) -> Result<Vec<WalkRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}
