//! Subcommand implementations. Each returns a [`Report`] that is printed
//! as `key=value` lines or as one JSON object.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use fss_core::asymptotics::{alpha_with_step, mean_evolution_through_minimum, AlphaMode, AlphaReport};
use fss_core::cache::{cache_key, Cache};
use fss_core::ensemble::{critical_point, de_threshold, Ensemble};
use fss_core::experiment::{
    estimate_fl_threshold, run_sweep, write_sweep_csv, SweepConfig, SweepResult, ThresholdEstimate,
    ThresholdSearch,
};
use fss_core::fit::{default_initial, fit_scaling, FitProblem, FreeMask, Observation};
use fss_core::experiment::read_sweep_csv;
use fss_core::scaling::{
    predict_bit_unchecked, predict_block, predict_block_unchecked, reference_entry, scaling_variable,
    shifted_threshold, ChannelMode, ScalingParams, DEFAULT_GAMMA, SHIFT_EXPONENT,
};
use fss_core::toywalk::{walk_exponent_fit, walk_simulate, write_walk_csv, WalkConfig, WalkResult, WalkRow};
use fss_core::Error;

use crate::grid::{parse_grid, parse_values};
use crate::{Cli, Command};

#[derive(Debug)]
pub enum Failure {
    /// Malformed flag values; exit status 2.
    Usage(String),
    /// The computation itself failed; exit status 1.
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

/// Scalar fields plus optional table rows.
#[derive(Debug, Default)]
pub struct Report {
    fields: Vec<(String, Value)>,
    rows: Vec<Map<String, Value>>,
}

impl Report {
    fn put(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.fields.push((key.to_string(), v));
    }

    fn row(&mut self, value: impl Serialize) {
        if let Ok(Value::Object(m)) = serde_json::to_value(value) {
            self.rows.push(m);
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m: Map<String, Value> = self.fields.iter().cloned().collect();
        if !self.rows.is_empty() {
            m.insert("rows".into(), Value::Array(self.rows.iter().cloned().map(Value::Object).collect()));
        }
        Value::Object(m)
    }

    pub fn print(&self, json: bool) {
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        if json {
            let _ = writeln!(out, "{}", self.to_json());
            return;
        }
        for (k, v) in &self.fields {
            let _ = writeln!(out, "{k}={}", plain(v));
        }
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|(k, v)| format!("{k}={}", plain(v))).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "none".into(),
        other => other.to_string(),
    }
}

fn parse_ensemble(s: &str) -> Outcome<Ensemble<f64>> {
    s.parse::<Ensemble<f64>>().map_err(usage)
}

fn parse_channel(s: &str) -> Outcome<ChannelMode> {
    s.parse::<ChannelMode>().map_err(usage)
}

fn parse_mode(s: &str) -> Outcome<AlphaMode> {
    s.parse::<AlphaMode>().map_err(usage)
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Compute(Error::Io(format!("{}: {e}", path.display()))))
}

/// Runs `compute` unless the cache holds a record for `canonical`.
fn cached<T, F>(canonical: &Value, report: &mut Report, compute: F) -> Outcome<T>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Outcome<T>,
{
    let cache = Cache::from_env()?;
    let Some(cache) = cache else {
        return compute();
    };
    let key = cache_key(&canonical.to_string());
    let lookup = cache.lookup(&key)?;
    if lookup.corrupt_lines > 0 {
        eprintln!(
            "warning: skipped {} corrupt line(s) in {}",
            lookup.corrupt_lines,
            cache.path().display()
        );
    }
    if let Some(record) = lookup.record {
        if let Ok(v) = serde_json::from_value::<T>(record) {
            report.put("cache", "hit");
            return Ok(v);
        }
        eprintln!("warning: cached record for this configuration has an unexpected shape; recomputing");
    }
    let v = compute()?;
    let record = serde_json::to_value(&v).map_err(|e| Error::Io(e.to_string()))?;
    cache.store(&key, &record)?;
    report.put("cache", "miss");
    Ok(v)
}

pub fn run(cli: &Cli) -> Outcome<Report> {
    let mut r = Report::default();
    match &cli.command {
        Command::Threshold { ensemble, tol } => {
            let e = parse_ensemble(&ensemble.ensemble)?;
            if !(*tol > 0.0) {
                return Err(usage("--tol must be positive"));
            }
            r.put("ensemble", e.to_string());
            r.put("epsilon_star", de_threshold(&e, *tol));
        }
        Command::Critical { ensemble, tol } => {
            let e = parse_ensemble(&ensemble.ensemble)?;
            if !(*tol > 0.0) {
                return Err(usage("--tol must be positive"));
            }
            let cp = critical_point(&e, *tol)?;
            r.put("ensemble", e.to_string());
            r.put("epsilon_star", cp.epsilon_star);
            r.put("x_star", cp.x_star);
            r.put("y_star", cp.y_star);
            r.put("nu_star", cp.nu_star);
        }
        Command::Alpha {
            ensemble,
            mode,
            step,
            trajectory,
        } => {
            let e = parse_ensemble(&ensemble.ensemble)?;
            let mode = parse_mode(mode)?;
            if !(*step > 0.0 && *step < 0.1) {
                return Err(usage("--step must lie in (0, 0.1)"));
            }
            let canonical = json!({
                "command": "alpha", "ensemble": e.to_string(), "mode": mode, "step": step,
            });
            let a: AlphaReport<f64> = cached(&canonical, &mut r, || Ok(alpha_with_step(&e, mode, *step)?))?;
            r.put("ensemble", e.to_string());
            r.put("mode", mode);
            r.put("epsilon_star", a.epsilon_star);
            r.put("nu_star", a.nu_star);
            r.put("alpha", a.alpha);
            r.put("tau_star", a.tau_star);
            r.put("sigma_star", a.sigma_star);
            r.put("slope", a.slope);
            if let Some(path) = trajectory {
                let traj = mean_evolution_through_minimum(&e, a.epsilon_star, *step)?;
                let mut w = csv_writer(path)?;
                csv_row(&mut w, &["tau", "v", "s", "t"])?;
                for s in &traj.states {
                    csv_row(
                        &mut w,
                        &[s.tau.to_string(), s.v_total().to_string(), s.s().to_string(), s.t().to_string()],
                    )?;
                }
                w.flush().map_err(|e| Failure::Compute(e.into()))?;
                r.put("trajectory", path.display().to_string());
            }
        }
        Command::Predict {
            ensemble,
            n,
            eps,
            grid,
            refined,
            channel,
            alpha,
            alpha_mode,
            beta,
            omega,
            allow_mode_mismatch,
            out,
        } => {
            let e = parse_ensemble(&ensemble.ensemble)?;
            let ns: Vec<u64> = parse_values(n).map_err(usage)?;
            let eps_grid = match (eps, grid) {
                (Some(x), None) => vec![*x],
                (None, Some(g)) => parse_grid(g).map_err(usage)?,
                _ => return Err(usage("give exactly one of --eps and --grid")),
            };
            let channel = parse_channel(channel)?;
            let tabulated = e.regular_degrees().and_then(|(l, k)| reference_entry(l, k));
            let mut p = match alpha {
                Some(a) => {
                    let cp = critical_point(&e, 1e-12)?;
                    ScalingParams::new(
                        cp.epsilon_star,
                        cp.nu_star,
                        *a,
                        parse_mode(alpha_mode)?,
                        0.0,
                        1.0,
                        DEFAULT_GAMMA,
                    )?
                }
                None => ScalingParams::computed(&e, channel.alpha_mode())?,
            };
            p = match (beta, tabulated) {
                (Some(b), _) => ScalingParams { beta: *b, omega: *omega, ..p },
                (None, Some(t)) => p.with_beta_over_omega(t.beta_over_omega, *omega),
                (None, None) => ScalingParams { beta: 0.0, omega: *omega, ..p },
            };
            p.validate()?;
            if *refined && beta.is_none() && tabulated.is_none() {
                eprintln!("warning: no shift coefficient known for {e}; refined law uses beta=0");
            }
            r.put("ensemble", e.to_string());
            r.put("refined", refined);
            r.put("channel", channel);
            r.put("epsilon_star", p.epsilon_star);
            r.put("nu_star", p.nu_star);
            r.put("alpha", p.alpha);
            r.put("alpha_mode", p.alpha_mode);
            r.put("beta", p.beta);
            let mut rows = Vec::new();
            for &n in &ns {
                for &x in &eps_grid {
                    let pb = if *allow_mode_mismatch {
                        predict_block_unchecked(&p, n, x, *refined)?
                    } else {
                        predict_block(&p, n, x, *refined, channel)?
                    };
                    rows.push(json!({
                        "n": n,
                        "eps": x,
                        "z": scaling_variable(&p, n, x, *refined),
                        "threshold_n": if *refined { shifted_threshold(&p, n) } else { p.epsilon_star },
                        "p_block": pb,
                        "p_bit": predict_bit_unchecked(&p, n, x, *refined)?,
                    }));
                }
            }
            if let Some(path) = out {
                let mut w = csv_writer(path)?;
                csv_row(&mut w, &["n", "eps", "z", "threshold_n", "p_block", "p_bit"])?;
                for row in &rows {
                    let cells: Vec<String> = ["n", "eps", "z", "threshold_n", "p_block", "p_bit"]
                        .iter()
                        .map(|k| row[*k].to_string())
                        .collect();
                    csv_row(&mut w, &cells)?;
                }
                w.flush().map_err(|e| Failure::Compute(e.into()))?;
                r.put("out", path.display().to_string());
            }
            if rows.len() == 1 {
                for (k, v) in rows[0].as_object().into_iter().flatten() {
                    r.put(k, v);
                }
            } else {
                for row in rows {
                    r.row(row);
                }
            }
        }
        Command::Simulate {
            ensemble,
            n,
            eps,
            trials,
            gamma,
            channel,
            per_graph,
            precision,
            out,
            collapse,
        } => {
            let e = parse_ensemble(&ensemble.ensemble)?;
            let ns: Vec<usize> = parse_values(n).map_err(usage)?;
            let eps_grid = parse_grid(eps).map_err(usage)?;
            let mut cfg = SweepConfig::new(e.clone(), ns.clone(), eps_grid.clone(), *trials, cli.seed);
            cfg.gamma = *gamma;
            cfg.channel = parse_channel(channel)?;
            cfg.fresh_graph = !*per_graph;
            cfg.max_ci_width = *precision;
            let canonical = json!({
                "command": "simulate", "ensemble": e.to_string(), "n": ns, "eps": eps_grid,
                "trials": trials, "gamma": gamma, "channel": cfg.channel, "fresh_graph": cfg.fresh_graph,
                "precision": precision, "seed": cli.seed,
            });
            let sweep: SweepResult = cached(&canonical, &mut r, || Ok(run_sweep(&cfg)?))?;
            let rows = sweep.rows();
            r.put("ensemble", e.to_string());
            r.put("channel", cfg.channel);
            r.put("gamma", cfg.gamma);
            r.put("nu_star", sweep.nu_star);
            r.put("seed", cli.seed);
            let imprecise = sweep.points.iter().filter(|p| p.imprecise).count();
            if precision.is_some() {
                r.put("imprecise_points", imprecise);
            }
            if let Some(path) = out {
                write_sweep_csv(create(path)?, &rows)?;
                r.put("out", path.display().to_string());
            }
            if let Some(path) = collapse {
                let cp = critical_point(&e, 1e-12)?;
                let beta = e
                    .regular_degrees()
                    .and_then(|(l, k)| reference_entry(l, k))
                    .map_or(0.0, |t| t.beta_over_omega);
                let mut w = csv_writer(path)?;
                csv_row(&mut w, &["n", "eps", "z", "pB_hat", "pB_lo", "pB_hi"])?;
                for row in &rows {
                    let nf = row.n as f64;
                    let z = nf.sqrt() * (cp.epsilon_star - beta * nf.powf(-SHIFT_EXPONENT) - row.eps);
                    csv_row(
                        &mut w,
                        &[
                            row.n.to_string(),
                            row.eps.to_string(),
                            z.to_string(),
                            row.pb_block_hat.to_string(),
                            row.pb_block_lo.to_string(),
                            row.pb_block_hi.to_string(),
                        ],
                    )?;
                }
                w.flush().map_err(|e| Failure::Compute(e.into()))?;
                r.put("collapse", path.display().to_string());
                r.put("collapse_beta", beta);
            }
            for row in rows {
                r.row(json!({
                    "n": row.n, "eps": row.eps, "trials": row.trials,
                    "large_failures": row.large_failures, "small_failures": row.small_failures,
                    "pB_hat": row.pb_block_hat, "pB_lo": row.pb_block_lo, "pB_hi": row.pb_block_hi,
                    "pb_hat": row.pb_hat,
                }));
            }
        }
        Command::EstimateThreshold {
            ensemble,
            n,
            trials_per_probe,
            max_trials_per_probe,
            max_probes,
            tol,
            gamma,
            channel,
        } => {
            let e = parse_ensemble(&ensemble.ensemble)?;
            let mut s = ThresholdSearch::new(*trials_per_probe, *tol, cli.seed);
            if let Some(m) = max_trials_per_probe {
                s.max_trials_per_probe = *m;
            }
            s.max_probes = *max_probes;
            s.gamma = *gamma;
            s.channel = parse_channel(channel)?;
            let canonical = json!({
                "command": "estimate-threshold", "ensemble": e.to_string(), "n": n, "search": s,
            });
            let est: ThresholdEstimate = cached(&canonical, &mut r, || Ok(estimate_fl_threshold(&e, *n, &s)?))?;
            r.put("ensemble", e.to_string());
            r.put("n", est.n);
            r.put("epsilon_star_n", est.estimate);
            r.put("lo", est.lo);
            r.put("hi", est.hi);
            r.put("stop", est.stop);
            r.put("probes", est.probes.len());
            r.put("trials", est.probes.iter().map(|p| p.trials).sum::<u64>());
        }
        Command::Fit { data, free, fix } => {
            let file = File::open(data)
                .map_err(|e| Failure::Compute(Error::Io(format!("{}: {e}", data.display()))))?;
            let rows = read_sweep_csv(file)?;
            let free = FreeMask::parse(free).map_err(usage)?;
            let observations: Vec<Observation<f64>> = rows
                .iter()
                .map(|row| Observation {
                    n: row.n as u64,
                    eps: row.eps,
                    p_hat: row.pb_block_hat,
                    trials: row.trials,
                })
                .collect();
            // start from the ensemble's threshold when the data names one
            let start = rows
                .first()
                .and_then(|row| row.ensemble.parse::<Ensemble<f64>>().ok())
                .and_then(|e| critical_point(&e, 1e-12).ok())
                .map_or(0.43, |cp| cp.epsilon_star);
            let mut initial = default_initial(start);
            for item in fix {
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| usage(format!("--fix expects name=value, got {item:?}")))?;
                let v: f64 = v.trim().parse().map_err(|_| usage(format!("bad value in {item:?}")))?;
                match k.trim() {
                    "epsilon_star" | "eps_star" => initial.epsilon_star = v,
                    "alpha" => initial.alpha = v,
                    "beta" => initial.beta = v,
                    other => return Err(usage(format!("unknown parameter {other:?}"))),
                }
            }
            if let Some(row) = rows.first() {
                initial.alpha_mode = row.mode.alpha_mode();
                initial.gamma = row.gamma;
            }
            let fit = fit_scaling(&FitProblem {
                observations,
                free,
                initial,
            })?;
            r.put("epsilon_star", fit.params.epsilon_star);
            r.put("epsilon_star_se", fit.std_errors[0]);
            r.put("alpha", fit.params.alpha);
            r.put("alpha_se", fit.std_errors[1]);
            r.put("alpha_mode", fit.params.alpha_mode);
            r.put("beta", fit.params.beta);
            r.put("beta_se", fit.std_errors[2]);
            r.put("residual", fit.residual);
            r.put("used", fit.used);
            r.put("dropped", fit.dropped);
            r.put("iterations", fit.iterations);
        }
        Command::Toy { n, trials, out } => {
            let ns: Vec<usize> = parse_values(n).map_err(usage)?;
            let canonical = json!({ "command": "toy", "n": ns, "trials": trials, "seed": cli.seed });
            let results: Vec<WalkResult> = cached(&canonical, &mut r, || {
                ns.iter()
                    .map(|&n| {
                        walk_simulate(&WalkConfig {
                            n,
                            trials: *trials,
                            seed: cli.seed,
                        })
                        .map_err(Failure::from)
                    })
                    .collect()
            })?;
            let rows: Vec<WalkRow> = results.iter().map(WalkRow::from).collect();
            if let Some(path) = out {
                write_walk_csv(create(path)?, &rows)?;
                r.put("out", path.display().to_string());
            }
            r.put("seed", cli.seed);
            match walk_exponent_fit(&results) {
                Ok(f) => {
                    r.put("exponent", f.slope);
                    r.put("exponent_se", f.slope_se);
                }
                Err(e) => r.put("exponent", format!("unavailable ({e})")),
            }
            for row in rows {
                r.row(row);
            }
        }
    }
    Ok(r)
}

fn csv_writer(path: &Path) -> Outcome<BufWriter<File>> {
    create(path)
}

fn csv_row<W: Write, S: AsRef<str>>(w: &mut W, cells: &[S]) -> Outcome<()> {
    let line: Vec<&str> = cells.iter().map(AsRef::as_ref).collect();
    writeln!(w, "{}", line.join(",")).map_err(|e| Failure::Compute(e.into()))
}
