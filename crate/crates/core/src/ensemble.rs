//! Degree-distribution ensembles and their asymptotic (infinite blocklength)
//! quantities: density-evolution fixed points, the iterative threshold and
//! the critical point.
//!
//! Degree distributions are stored from the edge perspective: a term
//! `(d, c)` contributes `c * x^(d-1)` to the polynomial, i.e. a fraction `c`
//! of all edges attach to nodes of degree `d`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest node degree accepted from user input.
pub const MAX_DEGREE: u32 = 10_000;

/// Coefficients must sum to one within this slack before being normalized.
pub const NORMALIZATION_SLACK: f64 = 1e-9;

/// Grid size used to count solutions of the tangency condition.
pub const CRITICAL_SCAN_POINTS: usize = 10_000;

pub const DEFAULT_THRESHOLD_TOL: f64 = 1e-7;
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Edge-perspective degree distribution `p(x) = sum_d c_d x^(d-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeDistribution<T> {
    /// `(degree, coefficient)` sorted by degree; zero coefficients dropped.
    terms: Vec<(u32, T)>,
}

impl<T: Scalar> DegreeDistribution<T> {
    pub fn new(pairs: impl IntoIterator<Item = (u32, T)>) -> Result<Self> {
        let mut terms: Vec<(u32, T)> = pairs.into_iter().collect();
        if terms.is_empty() {
            return Err(Error::InvalidDistribution("no terms".into()));
        }
        terms.sort_by_key(|&(d, _)| d);
        for w in terms.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidDistribution(format!(
                    "degree {} listed twice",
                    w[0].0
                )));
            }
        }
        for &(d, c) in &terms {
            if d == 0 || d > MAX_DEGREE {
                return Err(Error::InvalidDistribution(format!(
                    "degree {d} outside 1..={MAX_DEGREE}"
                )));
            }
            if !(c >= T::zero()) || !c.is_finite() {
                return Err(Error::InvalidDistribution(format!(
                    "coefficient {c} for degree {d} is not a nonnegative number"
                )));
            }
        }
        let total: T = terms.iter().map(|&(_, c)| c).sum();
        if (total - T::one()).abs() > T::lit(NORMALIZATION_SLACK).max(T::noise_floor()) {
            return Err(Error::InvalidDistribution(format!(
                "coefficients sum to {total}, expected 1"
            )));
        }
        terms.retain(|&(_, c)| c > T::zero());
        for t in &mut terms {
            t.1 = t.1 / total;
        }
        let max_degree = terms.last().map(|t| t.0).unwrap_or(0);
        if max_degree < 2 {
            return Err(Error::InvalidDistribution(
                "maximum degree must be at least 2".into(),
            ));
        }
        Ok(Self { terms })
    }

    /// All edges on nodes of a single degree.
    pub fn regular(degree: u32) -> Result<Self> {
        Self::new([(degree, T::one())])
    }

    pub fn terms(&self) -> &[(u32, T)] {
        &self.terms
    }

    pub fn degrees(&self) -> impl Iterator<Item = u32> + '_ {
        self.terms.iter().map(|t| t.0)
    }

    pub fn min_degree(&self) -> u32 {
        self.terms[0].0
    }

    pub fn max_degree(&self) -> u32 {
        self.terms[self.terms.len() - 1].0
    }

    pub fn eval(&self, x: T) -> T {
        self.terms.iter().map(|&(d, c)| c * x.powi(d as i32 - 1)).sum()
    }

    pub fn derivative(&self, x: T) -> T {
        self.terms
            .iter()
            .filter(|&&(d, _)| d >= 2)
            .map(|&(d, c)| c * T::from_count(d as usize - 1) * x.powi(d as i32 - 2))
            .sum()
    }

    /// `int_0^1 p(u) du = sum_d c_d / d`, the reciprocal of the average node degree.
    pub fn integral(&self) -> T {
        self.terms
            .iter()
            .map(|&(d, c)| c / T::from_count(d as usize))
            .sum()
    }

    pub fn average_node_degree(&self) -> T {
        T::one() / self.integral()
    }

    /// Node-perspective fractions `Lambda_d = (c_d / d) / sum_i (c_i / i)`.
    pub fn node_fractions(&self) -> Vec<(u32, T)> {
        let norm = self.integral();
        self.terms
            .iter()
            .map(|&(d, c)| (d, c / T::from_count(d as usize) / norm))
            .collect()
    }

    /// Node-perspective generating function `L(x) = sum_d Lambda_d x^d`.
    pub fn node_eval(&self, x: T) -> T {
        self.node_fractions()
            .into_iter()
            .map(|(d, f)| f * x.powi(d as i32))
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> DegreeDistribution<U> {
        DegreeDistribution {
            terms: self
                .terms
                .iter()
                .map(|&(d, c)| (d, U::lit(c.as_f64())))
                .collect(),
        }
    }
}

impl<T: Scalar> FromStr for DegreeDistribution<T> {
    type Err = Error;

    /// Parses `degree:coefficient` pairs separated by commas, e.g. `3:0.5,4:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (d, c) = item
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("expected degree:coefficient, got {item:?}")))?;
            let d: u32 = d
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad degree {d:?}")))?;
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad coefficient {c:?}")))?;
            pairs.push((d, T::lit(c)));
        }
        Self::new(pairs)
    }
}

impl<T: Scalar> fmt::Display for DegreeDistribution<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(|(d, c)| format!("{d}:{c}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// A standard LDPC ensemble given by its variable (`lambda`) and check
/// (`rho`) edge-perspective degree distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble<T> {
    lambda: DegreeDistribution<T>,
    rho: DegreeDistribution<T>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(lambda: DegreeDistribution<T>, rho: DegreeDistribution<T>) -> Result<Self> {
        let e = Self { lambda, rho };
        let rate = e.design_rate();
        if !(rate > T::zero() && rate < T::one()) {
            return Err(Error::NonpositiveRate(format!(
                "design rate {rate} outside (0, 1)"
            )));
        }
        Ok(e)
    }

    pub fn lambda(&self) -> &DegreeDistribution<T> {
        &self.lambda
    }

    pub fn rho(&self) -> &DegreeDistribution<T> {
        &self.rho
    }

    /// `1 - int rho / int lambda`.
    pub fn design_rate(&self) -> T {
        T::one() - self.rho.integral() / self.lambda.integral()
    }

    pub fn l_min(&self) -> u32 {
        self.lambda.min_degree()
    }

    /// No degree-one or degree-two variable nodes.
    pub fn unconditionally_stable(&self) -> bool {
        self.l_min() >= 3
    }

    /// `Some((l, k))` for a regular ensemble.
    pub fn regular_degrees(&self) -> Option<(u32, u32)> {
        match (self.lambda.terms(), self.rho.terms()) {
            ([(l, _)], [(k, _)]) => Some((*l, *k)),
            _ => None,
        }
    }

    /// One density-evolution step `x -> eps * lambda(1 - rho(1 - x))`.
    #[inline]
    pub fn de_map(&self, eps: T, x: T) -> T {
        eps * self.lambda.eval(T::one() - self.rho.eval(T::one() - x))
    }

    pub fn cast<U: Scalar>(&self) -> Ensemble<U> {
        Ensemble {
            lambda: self.lambda.cast(),
            rho: self.rho.cast(),
        }
    }
}

impl<T: Scalar> FromStr for Ensemble<T> {
    type Err = Error;

    /// Accepts `l,k` for a regular ensemble, or `lambda/rho` with each side
    /// in `degree:coefficient` form, e.g. `3:0.5,4:0.5/8:1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((lam, rho)) = s.split_once('/') {
            return Self::new(lam.parse()?, rho.parse()?);
        }
        let (l, k) = s
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("expected `l,k` or `lambda/rho`, got {s:?}")))?;
        let l: u32 = l
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad variable degree {l:?}")))?;
        let k: u32 = k
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad check degree {k:?}")))?;
        make_regular(l, k)
    }
}

impl<T: Scalar> fmt::Display for Ensemble<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.regular_degrees() {
            Some((l, k)) => write!(f, "{l},{k}"),
            None => write!(f, "{}/{}", self.lambda, self.rho),
        }
    }
}

/// Regular ensemble with variable node degree `l` and check node degree `k`,
/// i.e. `lambda(x) = x^(l-1)` and `rho(x) = x^(k-1)`.
pub fn make_regular<T: Scalar>(l: u32, k: u32) -> Result<Ensemble<T>> {
    if l < 2 {
        return Err(Error::InvalidDistribution(format!(
            "variable degree {l} below 2"
        )));
    }
    if l >= k {
        return Err(Error::NonpositiveRate(format!(
            "regular ({l},{k}) has design rate 1 - {l}/{k} <= 0"
        )));
    }
    Ensemble::new(DegreeDistribution::regular(l)?, DegreeDistribution::regular(k)?)
}

/// Iterates density evolution from `x = eps` until the update falls below
/// `tol` or `max_iter` steps are taken. The sequence is monotone
/// nonincreasing, so the returned value is the largest fixed point below `eps`.
pub fn de_evolve<T: Scalar>(e: &Ensemble<T>, eps: T, tol: T, max_iter: usize) -> T {
    let mut x = eps;
    for _ in 0..max_iter {
        let next = e.de_map(eps, x);
        let done = (next - x).abs() < tol;
        x = next;
        if done || x == T::zero() {
            break;
        }
    }
    x
}

/// Fixed points below this value count as successful decoding.
fn vanishing<T: Scalar>() -> T {
    T::lit(1e-6)
}

/// Iterative decoding threshold by bisection on `eps` against the
/// density-evolution fixed point.
pub fn de_threshold<T: Scalar>(e: &Ensemble<T>, tol: T) -> T {
    let fp_tol = T::lit(DEFAULT_FIXED_POINT_TOL).max(T::epsilon());
    let mut lo = T::zero();
    let mut hi = T::one();
    let two = T::lit(2.0);
    while hi - lo >= tol {
        let mid = (lo + hi) / two;
        if mid == lo || mid == hi {
            break;
        }
        if de_evolve(e, mid, fp_tol, DEFAULT_MAX_ITER) < vanishing() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / two
}

/// The density-evolution tangency point at threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint<T> {
    pub epsilon_star: T,
    /// Erasure probability of a variable-to-check message at the fixed point.
    pub x_star: T,
    /// `1 - rho(1 - x_star)`.
    pub y_star: T,
    /// Fraction of variable nodes left in the residual graph, `eps* L(y*)`.
    pub nu_star: T,
}

/// Parametrizes the fixed-point curve by `x`: `eps(x) = x / lambda(1 - rho(1 - x))`.
fn eps_on_curve<T: Scalar>(e: &Ensemble<T>, x: T) -> T {
    x / e.lambda.eval(T::one() - e.rho.eval(T::one() - x))
}

/// Tangency residual along the fixed-point curve; its zeros are the
/// stationary points of `eps(x)`.
fn tangency_residual<T: Scalar>(e: &Ensemble<T>, x: T) -> T {
    let y = T::one() - e.rho.eval(T::one() - x);
    eps_on_curve(e, x) * e.lambda.derivative(y) * e.rho.derivative(T::one() - x) - T::one()
}

/// Locates the critical point by scanning the tangency residual on a
/// uniform grid in `x` and refining the unique sign change by bisection.
pub fn critical_point<T: Scalar>(e: &Ensemble<T>, tol: T) -> Result<CriticalPoint<T>> {
    if !e.unconditionally_stable() {
        return Err(Error::NotUnconditionallyStable(e.l_min()));
    }
    let grid = CRITICAL_SCAN_POINTS;
    let step = T::one() / T::from_count(grid);
    let mut brackets = Vec::new();
    let mut prev_x = step;
    let mut prev_g = tangency_residual(e, prev_x);
    for i in 2..grid {
        let x = step * T::from_count(i);
        let g = tangency_residual(e, x);
        if prev_g.signum() != g.signum() {
            brackets.push((prev_x, x));
        }
        prev_x = x;
        prev_g = g;
    }
    let (mut lo, mut hi) = match brackets.len() {
        0 => return Err(Error::NoCriticalPoint),
        1 => brackets[0],
        n => return Err(Error::MultipleCriticalPoints(n)),
    };
    let g_lo_sign = tangency_residual(e, lo).signum();
    let two = T::lit(2.0);
    let x_tol = tol.min(T::lit(1e-12)).max(T::epsilon());
    while hi - lo > x_tol {
        let mid = (lo + hi) / two;
        if mid == lo || mid == hi {
            break;
        }
        if tangency_residual(e, mid).signum() == g_lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_star = (lo + hi) / two;
    let epsilon_star = eps_on_curve(e, x_star);
    let y_star = T::one() - e.rho.eval(T::one() - x_star);
    let nu_star = epsilon_star * e.lambda.node_eval(y_star);
    Ok(CriticalPoint {
        epsilon_star,
        x_star,
        y_star,
        nu_star,
    })
}
