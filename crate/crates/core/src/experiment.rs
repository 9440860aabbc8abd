//! Monte Carlo estimation of block and bit erasure probabilities.
//!
//! Every trial draws its graph, erasure pattern and peeling order from
//! seeds derived from `(base seed, n, eps, trial index)`, so tallies do
//! not depend on how trials are split across workers and partial runs
//! merge exactly.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{erase, Channel, Peeler};
use crate::ensemble::{critical_point, Ensemble};
use crate::error::{Error, Result};
use crate::graph::{degree_counts, mix_seed, sample_graph, TannerGraph};
use crate::scaling::{ChannelMode, DEFAULT_GAMMA};
use crate::stats::{wilson, Z95};

/// Number of log2 residual-size bins; bin `b` holds sizes in `[2^b, 2^(b+1))`.
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ensemble: Ensemble<f64>,
    pub ns: Vec<usize>,
    pub eps: Vec<f64>,
    pub trials: u64,
    /// Index of the first trial; trials `first_trial..first_trial + trials` run.
    pub first_trial: u64,
    pub seed: u64,
    pub gamma: f64,
    pub channel: ChannelMode,
    /// Draw a new graph for every trial (ensemble average). When false
    /// one graph per blocklength is reused.
    pub fresh_graph: bool,
    /// Points whose 95% interval is wider than this are flagged.
    pub max_ci_width: Option<f64>,
}

impl SweepConfig {
    pub fn new(ensemble: Ensemble<f64>, ns: Vec<usize>, eps: Vec<f64>, trials: u64, seed: u64) -> Self {
        Self {
            ensemble,
            ns,
            eps,
            trials,
            first_trial: 0,
            seed,
            gamma: DEFAULT_GAMMA,
            channel: ChannelMode::Iid,
            fresh_graph: true,
            max_ci_width: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma = {} outside (0, 1)", self.gamma)));
        }
        if let Some(e) = self.eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::InvalidArgument(format!("eps = {e} outside [0, 1]")));
        }
        if self.ns.is_empty() || self.eps.is_empty() {
            return Err(Error::InvalidArgument("empty (n, eps) grid".into()));
        }
        Ok(())
    }
}

/// Tallies at one `(n, eps)` grid point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointTally {
    pub trials: u64,
    /// Failures leaving at least `gamma nu* n` undecoded bits.
    pub large_failures: u64,
    /// Failures with a smaller residual.
    pub small_failures: u64,
    pub bit_erasure_sum: u64,
    /// Residual bits summed over large failures only.
    pub large_residual_sum: u64,
    pub histogram: Vec<u64>,
}

impl Default for PointTally {
    fn default() -> Self {
        Self {
            trials: 0,
            large_failures: 0,
            small_failures: 0,
            bit_erasure_sum: 0,
            large_residual_sum: 0,
            histogram: vec![0; HISTOGRAM_BINS],
        }
    }
}

impl PointTally {
    fn record(&mut self, residual: usize, large_cut: f64) {
        self.trials += 1;
        if residual == 0 {
            return;
        }
        self.bit_erasure_sum += residual as u64;
        if residual as f64 >= large_cut {
            self.large_failures += 1;
            self.large_residual_sum += residual as u64;
        } else {
            self.small_failures += 1;
        }
        let bin = (usize::BITS - 1 - residual.leading_zeros()) as usize;
        self.histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.trials += other.trials;
        self.large_failures += other.large_failures;
        self.small_failures += other.small_failures;
        self.bit_erasure_sum += other.bit_erasure_sum;
        self.large_residual_sum += other.large_residual_sum;
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub n: usize,
    pub eps: f64,
    pub tally: PointTally,
    /// 95% interval wider than the configured precision.
    pub imprecise: bool,
}

impl PointResult {
    /// Estimated block erasure probability from large failures.
    pub fn block_hat(&self) -> f64 {
        self.tally.large_failures as f64 / self.tally.trials as f64
    }

    pub fn block_interval(&self) -> (f64, f64) {
        wilson(self.tally.large_failures, self.tally.trials, Z95)
    }

    pub fn bit_hat(&self) -> f64 {
        self.tally.bit_erasure_sum as f64 / (self.n as f64 * self.tally.trials as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub ensemble: String,
    pub channel: ChannelMode,
    pub gamma: f64,
    pub nu_star: f64,
    pub points: Vec<PointResult>,
}

impl SweepResult {
    pub fn point(&self, n: usize, eps: f64) -> Option<&PointResult> {
        self.points.iter().find(|p| p.n == n && p.eps == eps)
    }

    /// Adds the tallies of a run over disjoint trials of the same grid.
    pub fn merge(&mut self, other: &SweepResult) -> Result<()> {
        if self.ensemble != other.ensemble
            || self.channel != other.channel
            || self.gamma != other.gamma
            || self.points.len() != other.points.len()
        {
            return Err(Error::InvalidArgument("sweeps over different configurations".into()));
        }
        for (a, b) in self.points.iter_mut().zip(&other.points) {
            if a.n != b.n || a.eps != b.eps {
                return Err(Error::InvalidArgument("sweeps over different grids".into()));
            }
            a.tally.merge(&b.tally);
            a.imprecise = a.imprecise && b.imprecise;
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .map(|p| SweepRow::from_tally(&self.ensemble, p.n, p.eps, self.channel, self.gamma, &p.tally))
            .collect()
    }
}

fn point_seed(base: u64, n: usize, eps: f64) -> u64 {
    mix_seed(mix_seed(base, n as u64), eps.to_bits())
}

fn channel_for(mode: ChannelMode, n: usize, eps: f64) -> Channel {
    match mode {
        ChannelMode::Iid => Channel::Iid(eps),
        ChannelMode::FixedWeight => Channel::FixedWeight(((eps * n as f64).round() as usize).min(n)),
    }
}

/// Residual size at and above which a failure counts as large.
pub fn large_cut(gamma: f64, nu_star: f64, n: usize) -> f64 {
    gamma * nu_star * n as f64
}

/// Runs `count` trials starting at `first`, in parallel.
#[allow(clippy::too_many_arguments)]
fn run_point(
    e: &Ensemble<f64>,
    n: usize,
    eps: f64,
    channel: ChannelMode,
    cut: f64,
    seed: u64,
    first: u64,
    count: u64,
    fixed_graph: Option<&TannerGraph>,
) -> Result<PointTally> {
    let base = point_seed(seed, n, eps);
    let chan = channel_for(channel, n, eps);
    (first..first + count)
        .into_par_iter()
        .try_fold(
            || (Peeler::new(), PointTally::default()),
            |(mut peeler, mut tally), t| -> Result<_> {
                let ts = mix_seed(base, t);
                let fresh;
                let g = match fixed_graph {
                    Some(g) => g,
                    None => {
                        fresh = sample_graph(e, n, mix_seed(ts, 0))?;
                        &fresh
                    }
                };
                let pattern = erase(n, chan, mix_seed(ts, 1))?;
                let out = peeler.run(g, &pattern, mix_seed(ts, 2), false);
                tally.record(out.residual_size, cut);
                Ok((peeler, tally))
            },
        )
        .map(|r| r.map(|(_, t)| t))
        .try_reduce(PointTally::default, |mut a, b| {
            a.merge(&b);
            Ok(a)
        })
}

/// Runs the full `(n, eps)` grid.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let nu_star = critical_point(&cfg.ensemble, 1e-12)?.nu_star;
    let mut points = Vec::with_capacity(cfg.ns.len() * cfg.eps.len());
    for &n in &cfg.ns {
        degree_counts(&cfg.ensemble, n)?;
        let shared = if cfg.fresh_graph {
            None
        } else {
            Some(sample_graph(&cfg.ensemble, n, mix_seed(cfg.seed ^ 0x0067_7261_7068, n as u64))?)
        };
        let cut = large_cut(cfg.gamma, nu_star, n);
        for &eps in &cfg.eps {
            let tally = run_point(
                &cfg.ensemble,
                n,
                eps,
                cfg.channel,
                cut,
                cfg.seed,
                cfg.first_trial,
                cfg.trials,
                shared.as_ref(),
            )?;
            let (lo, hi) = wilson(tally.large_failures, tally.trials, Z95);
            let imprecise = cfg.max_ci_width.is_some_and(|w| hi - lo > w);
            points.push(PointResult {
                n,
                eps,
                tally,
                imprecise,
            });
        }
    }
    Ok(SweepResult {
        ensemble: cfg.ensemble.to_string(),
        channel: cfg.channel,
        gamma: cfg.gamma,
        nu_star,
        points,
    })
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ensemble: String,
    pub n: usize,
    pub eps: f64,
    pub mode: ChannelMode,
    pub gamma: f64,
    pub trials: u64,
    pub large_failures: u64,
    pub small_failures: u64,
    pub bit_erasure_sum: u64,
    #[serde(rename = "pB_hat")]
    pub pb_block_hat: f64,
    #[serde(rename = "pB_lo")]
    pub pb_block_lo: f64,
    #[serde(rename = "pB_hi")]
    pub pb_block_hi: f64,
    pub pb_hat: f64,
}

impl SweepRow {
    pub fn from_tally(
        ensemble: &str,
        n: usize,
        eps: f64,
        mode: ChannelMode,
        gamma: f64,
        t: &PointTally,
    ) -> Self {
        let (lo, hi) = wilson(t.large_failures, t.trials, Z95);
        Self {
            ensemble: ensemble.to_string(),
            n,
            eps,
            mode,
            gamma,
            trials: t.trials,
            large_failures: t.large_failures,
            small_failures: t.small_failures,
            bit_erasure_sum: t.bit_erasure_sum,
            pb_block_hat: t.large_failures as f64 / t.trials as f64,
            pb_block_lo: lo,
            pb_block_hi: hi,
            pb_hat: t.bit_erasure_sum as f64 / (n as f64 * t.trials as f64),
        }
    }
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    if rows.is_empty() {
        wr.write_record([
            "ensemble", "n", "eps", "mode", "gamma", "trials", "large_failures", "small_failures",
            "bit_erasure_sum", "pB_hat", "pB_lo", "pB_hi", "pb_hat",
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Residual-size histogram with the mean residual fraction of large
/// failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualHistogram {
    /// `(lo, hi, count)` with sizes in `[lo, hi)`.
    pub bins: Vec<(u64, u64, u64)>,
    pub large_failures: u64,
    /// Mean of residual / n over large failures.
    pub mean_large_fraction: Option<f64>,
}

pub fn residual_histogram(r: &SweepResult, n: usize, eps: f64) -> Result<ResidualHistogram> {
    let p = r
        .point(n, eps)
        .ok_or_else(|| Error::InvalidArgument(format!("no grid point (n={n}, eps={eps})")))?;
    let t = &p.tally;
    let bins = t
        .histogram
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(b, &c)| (1u64 << b, 1u64 << (b + 1), c))
        .collect();
    let mean_large_fraction = (t.large_failures > 0)
        .then(|| t.large_residual_sum as f64 / (t.large_failures as f64 * n as f64));
    Ok(ResidualHistogram {
        bins,
        large_failures: t.large_failures,
        mean_large_fraction,
    })
}

/// Settings of the stochastic bisection for the finite-length threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    /// Trials per batch at a probe.
    pub trials_per_probe: u64,
    /// Batches accumulate at a probe until its interval excludes 1/2 or
    /// this many trials have run.
    pub max_trials_per_probe: u64,
    pub max_probes: usize,
    /// Stop once the bracket is narrower than this.
    pub tol: f64,
    /// Normal quantile of the interval that must exclude 1/2.
    pub z: f64,
    pub seed: u64,
    pub gamma: f64,
    pub channel: ChannelMode,
    /// Initial bracket; defaults to `eps* +- 4 / sqrt(n)`.
    pub bracket: Option<(f64, f64)>,
}

impl ThresholdSearch {
    pub fn new(trials_per_probe: u64, tol: f64, seed: u64) -> Self {
        Self {
            trials_per_probe,
            max_trials_per_probe: trials_per_probe.saturating_mul(16),
            max_probes: 64,
            tol,
            z: 3.0,
            seed,
            gamma: DEFAULT_GAMMA,
            channel: ChannelMode::Iid,
            bracket: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStop {
    /// Bracket narrower than the tolerance.
    Converged,
    /// A probe stayed consistent with 1/2 after the per-probe cap; the
    /// probe itself is returned as the estimate.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub eps: f64,
    pub trials: u64,
    pub large_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub n: usize,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub stop: SearchStop,
    pub probes: Vec<Probe>,
}

/// Finite-length threshold: the erasure probability where the block
/// erasure probability (large failures) crosses 1/2, by stochastic
/// bisection. The bracket moves only when a probe's interval excludes 1/2.
pub fn estimate_fl_threshold(e: &Ensemble<f64>, n: usize, s: &ThresholdSearch) -> Result<ThresholdEstimate> {
    if s.trials_per_probe == 0 || !(s.tol > 0.0) {
        return Err(Error::InvalidArgument("need trials_per_probe >= 1 and tol > 0".into()));
    }
    degree_counts(e, n)?;
    let cp = critical_point(e, 1e-12)?;
    let cut = large_cut(s.gamma, cp.nu_star, n);
    let (mut lo, mut hi) = s.bracket.unwrap_or_else(|| {
        let w = 4.0 / (n as f64).sqrt();
        ((cp.epsilon_star - w).max(1e-9), (cp.epsilon_star + w).min(1.0 - 1e-9))
    });
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty bracket [{lo}, {hi}]")));
    }
    let mut probes = Vec::new();
    while hi - lo >= s.tol {
        if probes.len() >= s.max_probes {
            return Err(Error::BudgetExhausted { lo, hi });
        }
        let mid = 0.5 * (lo + hi);
        let mut tally = PointTally::default();
        let verdict = loop {
            let batch = s.trials_per_probe.min(s.max_trials_per_probe - tally.trials).max(1);
            let more = run_point(e, n, mid, s.channel, cut, s.seed, tally.trials, batch, None)?;
            tally.merge(&more);
            let (plo, phi) = wilson(tally.large_failures, tally.trials, s.z);
            if plo > 0.5 {
                break Some(true);
            }
            if phi < 0.5 {
                break Some(false);
            }
            if tally.trials >= s.max_trials_per_probe {
                break None;
            }
        };
        probes.push(Probe {
            eps: mid,
            trials: tally.trials,
            large_failures: tally.large_failures,
        });
        match verdict {
            Some(true) => hi = mid,
            Some(false) => lo = mid,
            None => {
                return Ok(ThresholdEstimate {
                    n,
                    estimate: mid,
                    lo,
                    hi,
                    stop: SearchStop::Unresolved,
                    probes,
                })
            }
        }
    }
    Ok(ThresholdEstimate {
        n,
        estimate: 0.5 * (lo + hi),
        lo,
        hi,
        stop: SearchStop::Converged,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::make_regular;

    fn cfg(trials: u64) -> SweepConfig {
        SweepConfig::new(make_regular(3, 6).unwrap(), vec![256], vec![0.0, 0.40, 0.45], trials, 7)
    }

    #[test]
    fn zero_erasures_never_fail() {
        let r = run_sweep(&cfg(200)).unwrap();
        let p = r.point(256, 0.0).unwrap();
        assert_eq!(p.tally.large_failures + p.tally.small_failures, 0);
        assert_eq!(p.tally.trials, 200);
    }

    #[test]
    fn merge_equals_single_run() {
        let whole = run_sweep(&cfg(400)).unwrap();
        let mut a = run_sweep(&cfg(150)).unwrap();
        let mut c = cfg(250);
        c.first_trial = 150;
        let b = run_sweep(&c).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, whole);
    }

    #[test]
    fn histogram_totals_failures() {
        let r = run_sweep(&cfg(300)).unwrap();
        for p in &r.points {
            let h: u64 = p.tally.histogram.iter().sum();
            assert_eq!(h, p.tally.large_failures + p.tally.small_failures);
            assert!(p.tally.large_failures + p.tally.small_failures <= p.tally.trials);
            let (lo, hi) = p.block_interval();
            assert!(0.0 <= lo && lo <= p.block_hat() && p.block_hat() <= hi && hi <= 1.0);
        }
    }

    #[test]
    fn csv_roundtrip_is_byte_identical() {
        let r = run_sweep(&cfg(100)).unwrap();
        let mut first = Vec::new();
        write_sweep_csv(&mut first, &r.rows()).unwrap();
        let rows = read_sweep_csv(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_sweep_csv(&mut second, &rows).unwrap();
        assert_eq!(first, second);
        let header = String::from_utf8(first).unwrap();
        assert!(header.starts_with(
            "ensemble,n,eps,mode,gamma,trials,large_failures,small_failures,bit_erasure_sum,pB_hat,pB_lo,pB_hi,pb_hat\n\"3,6\",256,"
        ));
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = cfg(0);
        assert!(run_sweep(&c).is_err());
        c.trials = 1;
        c.gamma = 1.5;
        assert!(run_sweep(&c).is_err());
        let mut c = cfg(1);
        c.ns = vec![13];
        assert!(matches!(run_sweep(&c), Err(Error::UnrealizableDegreeSequence(_))));
    }
}
