//! Weighted least-squares fit of scaling parameters to measured block
//! erasure rates.
//!
//! Each rate is mapped to `y = Q^-1(P)` and fitted with
//! `y = sqrt(n) (eps* - beta n^(-2/3) - eps) / alpha` by Gauss-Newton.

use serde::{Deserialize, Serialize};

use crate::asymptotics::AlphaMode;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::scaling::{q_inverse, ScalingParams, SHIFT_EXPONENT};

pub const MAX_ITERATIONS: usize = 100;
const STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub n: u64,
    pub eps: T,
    pub p_hat: T,
    pub trials: u64,
}

/// Which of `(epsilon_star, alpha, beta)` are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeMask {
    pub epsilon_star: bool,
    pub alpha: bool,
    pub beta: bool,
}

impl FreeMask {
    pub const ALL: Self = Self {
        epsilon_star: true,
        alpha: true,
        beta: true,
    };

    fn flags(&self) -> [bool; 3] {
        [self.epsilon_star, self.alpha, self.beta]
    }

    pub fn count(&self) -> usize {
        self.flags().iter().filter(|&&f| f).count()
    }

    /// Parses a comma-separated list such as `alpha,beta`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut m = Self {
            epsilon_star: false,
            alpha: false,
            beta: false,
        };
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "epsilon_star" | "eps_star" => m.epsilon_star = true,
                "alpha" => m.alpha = true,
                "beta" => m.beta = true,
                other => return Err(Error::Parse(format!("unknown parameter {other:?}"))),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem<T> {
    pub observations: Vec<Observation<T>>,
    pub free: FreeMask,
    /// Starting point for free parameters, value of fixed ones.
    pub initial: ScalingParams<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport<T> {
    pub params: ScalingParams<T>,
    /// Standard errors of `(epsilon_star, alpha, beta)`; zero when fixed.
    pub std_errors: [T; 3],
    /// Weighted residual sum of squares on the `Q^-1` scale.
    pub residual: T,
    pub used: usize,
    /// Observations with `P` equal to 0 or 1, left out of the fit.
    pub dropped: usize,
    pub iterations: usize,
}

struct Point<T> {
    sqrt_n: T,
    shift: T,
    eps: T,
    y: T,
    w: T,
}

fn model<T: Scalar>(p: &Point<T>, theta: &[T; 3]) -> T {
    let [es, a, b] = *theta;
    p.sqrt_n * (es - b * p.shift - p.eps) / a
}

/// Weighted least squares on the `Q^-1` scale. Weights are inverse
/// delta-method variances `P(1-P) / (N phi(y)^2)`.
pub fn fit_scaling<T: Scalar>(problem: &FitProblem<T>) -> Result<FitReport<T>> {
    let mut points = Vec::new();
    let mut dropped = 0;
    for o in &problem.observations {
        let p = o.p_hat.as_f64();
        if !(p > 0.0 && p < 1.0) {
            dropped += 1;
            continue;
        }
        if o.n == 0 || o.trials == 0 {
            return Err(Error::InvalidArgument("observation with n = 0 or no trials".into()));
        }
        let y = q_inverse(p)?;
        let phi = (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let var = p * (1.0 - p) / (o.trials as f64 * phi * phi);
        points.push(Point {
            sqrt_n: T::lit((o.n as f64).sqrt()),
            shift: T::lit((o.n as f64).powf(-SHIFT_EXPONENT)),
            eps: o.eps,
            y: T::lit(y),
            w: T::lit(1.0 / var),
        });
    }
    if points.is_empty() {
        return Err(Error::DegenerateData(format!(
            "all {dropped} observations have P in {{0, 1}}"
        )));
    }
    let k = problem.free.count();
    if k == 0 {
        return Err(Error::InvalidArgument("no free parameters".into()));
    }
    if points.len() < k + 1 {
        return Err(Error::Underdetermined(format!(
            "{} usable observations for {k} free parameters",
            points.len()
        )));
    }
    let free: Vec<usize> = problem
        .free
        .flags()
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect();
    let init = &problem.initial;
    let mut theta = [init.epsilon_star, init.alpha, init.beta];
    if !(theta[1] > T::zero()) {
        return Err(Error::InvalidArgument("initial alpha must be positive".into()));
    }

    let normal_equations = |theta: &[T; 3]| {
        let mut jtj = Matrix::<T>::zeros(k, k);
        let mut jtr = vec![T::zero(); k];
        let mut chi2 = T::zero();
        for p in &points {
            let m = model(p, theta);
            let r = p.y - m;
            let full = [p.sqrt_n / theta[1], -m / theta[1], -p.sqrt_n * p.shift / theta[1]];
            let g: Vec<T> = free.iter().map(|&i| full[i]).collect();
            for a in 0..k {
                jtr[a] = jtr[a] + p.w * g[a] * r;
                for b in 0..k {
                    jtj[(a, b)] = jtj[(a, b)] + p.w * g[a] * g[b];
                }
            }
            chi2 = chi2 + p.w * r * r;
        }
        (jtj, jtr, chi2)
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr, chi2) = normal_equations(&theta);
        let inv = jtj
            .inverse(T::lit(1e-14))
            .ok_or_else(|| Error::DegenerateData("singular information matrix".into()))?;
        let step = inv.matvec(&jtr);
        // halve the step until the residual does not grow
        let mut scale = T::one();
        let mut next = theta;
        for _ in 0..40 {
            next = theta;
            for (a, &i) in free.iter().enumerate() {
                next[i] = theta[i] + scale * step[a];
            }
            if next[1] > T::zero() && normal_equations(&next).2 <= chi2 * (T::one() + T::lit(1e-12)) {
                break;
            }
            scale = scale * T::lit(0.5);
        }
        let size = free
            .iter()
            .enumerate()
            .map(|(a, &i)| (scale * step[a]).abs() / theta[i].abs().max(T::one()))
            .fold(T::zero(), T::max);
        theta = next;
        if size.as_f64() < STEP_TOL.max(T::epsilon().as_f64() * 16.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_ITERATIONS));
    }
    let (jtj, _, chi2) = normal_equations(&theta);
    let cov = jtj
        .inverse(T::lit(1e-14))
        .ok_or_else(|| Error::DegenerateData("singular information matrix".into()))?;
    let mut std_errors = [T::zero(); 3];
    for (a, &i) in free.iter().enumerate() {
        std_errors[i] = cov[(a, a)].max(T::zero()).sqrt();
    }
    let params = ScalingParams {
        epsilon_star: theta[0],
        alpha: theta[1],
        beta: theta[2],
        alpha_mode: init.alpha_mode,
        ..*init
    };
    Ok(FitReport {
        params,
        std_errors,
        residual: chi2,
        used: points.len(),
        dropped,
        iterations,
    })
}

/// Starting values for a fit when nothing better is known: the given
/// threshold, `alpha = 0.5`, `beta = 0.5`.
pub fn default_initial<T: Scalar>(epsilon_star: T) -> ScalingParams<T> {
    ScalingParams {
        epsilon_star,
        nu_star: T::lit(0.5),
        alpha: T::lit(0.5),
        alpha_mode: AlphaMode::Binomial,
        beta: T::lit(0.5),
        omega: T::one(),
        gamma: T::lit(0.1),
    }
}
