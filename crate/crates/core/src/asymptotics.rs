//! Mean-field (density evolution) and Gaussian-fluctuation (covariance
//! evolution) analysis of the peeling decoder.
//!
//! The state tracks, per variable node `n`, the fraction `v_d` of still
//! erased variables of each degree `d`, and the fraction `r_j` of residual
//! edges attached to checks of current degree `j`. One decoder step removes
//! a degree-one check together with its variable; the variable's other
//! edges land on uniformly random residual check sockets. The drift `f` and
//! the one-step increment covariance `B` of that chain give
//!
//! ```text
//! dz/dtau = f(z)
//! dGamma/dtau = A Gamma + Gamma A^T + B,   A = df/dz
//! ```
//!
//! where `tau = steps / n` and `Gamma` is the covariance of the state
//! counts divided by `n`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::{critical_point, Ensemble};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_STEP: f64 = 1e-4;
/// Remaining variable fraction at which a trajectory counts as decoded.
pub const VANISHING_V: f64 = 1e-9;
/// Finite-difference half-width in `eps` for the slope of the minimum.
pub const SLOPE_DELTA: f64 = 1e-4;
/// Eigenvalues above `-PSD_TOLERANCE` count as nonnegative.
pub const PSD_TOLERANCE: f64 = 1e-9;
/// Slopes below this magnitude make `alpha` meaningless.
pub const DEGENERATE_SLOPE: f64 = 1e-6;
/// Check degrees beyond this make the dense covariance impractical.
pub const MAX_CHECK_DEGREE: u32 = 256;

/// How the channel enters the initial covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    /// Erasure count fixed at `eps * n`; only graph randomness remains.
    Conditional,
    /// Each bit erased independently; adds the variance of the erasure count.
    Binomial,
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaMode::Conditional => "conditional",
            AlphaMode::Binomial => "binomial",
        })
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(AlphaMode::Conditional),
            "binomial" => Ok(AlphaMode::Binomial),
            other => Err(Error::Parse(format!(
                "unknown alpha mode {other:?} (expected conditional or binomial)"
            ))),
        }
    }
}

/// Normalized decoder state at time `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileState<T> {
    pub tau: T,
    /// Erased-variable fractions, aligned with the ensemble's variable degrees.
    pub v: Vec<T>,
    /// `r[j - 1]`: edges on checks of residual degree `j`, per variable node.
    pub r: Vec<T>,
}

impl<T: Scalar> ProfileState<T> {
    pub fn v_total(&self) -> T {
        self.v.iter().copied().sum()
    }

    /// Degree-one checks per variable node.
    pub fn s(&self) -> T {
        self.r[0]
    }

    /// Checks of residual degree at least two, per variable node.
    pub fn t(&self) -> T {
        self.r
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &r)| r / T::from_count(i + 1))
            .sum()
    }

    /// `(v, s, t)` projection.
    pub fn projection(&self) -> (T, T, T) {
        (self.v_total(), self.s(), self.t())
    }

    pub fn check_edges(&self) -> T {
        self.r.iter().copied().sum()
    }

    /// `sum_d d v_d - sum_j r_j`.
    pub fn edge_imbalance(&self, var_degrees: &[u32]) -> T {
        let ve: T = var_degrees
            .iter()
            .zip(&self.v)
            .map(|(&d, &v)| T::from_count(d as usize) * v)
            .sum();
        ve - self.check_edges()
    }
}

/// Covariance of the state counts divided by `n`, over the coordinates
/// `(v_d..., r_1..r_kmax)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState<T> {
    pub matrix: Matrix<T>,
    s_index: usize,
}

impl<T: Scalar> CovarianceState<T> {
    pub fn s_variance(&self) -> T {
        self.matrix[(self.s_index, self.s_index)]
    }

    pub fn min_eigenvalue(&self) -> T {
        self.matrix.symmetric_eigenvalues()[0]
    }

    pub fn trace(&self) -> T {
        self.matrix.trace()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryStatus {
    Decoded,
    Stalled,
}

/// Interpolated minimum of the mean degree-one fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SMinimum<T> {
    pub tau: T,
    pub s: T,
    /// Sample index nearest the minimum.
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct MeanTrajectory<T> {
    pub var_degrees: Vec<u32>,
    pub eps: T,
    pub step: T,
    pub states: Vec<ProfileState<T>>,
    pub status: TrajectoryStatus,
    pub minimum: SMinimum<T>,
}

impl<T: Scalar> MeanTrajectory<T> {
    /// Remaining variable fraction at the end of the trajectory.
    pub fn residual_v(&self) -> T {
        self.states.last().map(|s| s.v_total()).unwrap_or(T::zero())
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceTrajectory<T> {
    pub var_degrees: Vec<u32>,
    pub eps: T,
    pub mode: AlphaMode,
    pub samples: Vec<(ProfileState<T>, CovarianceState<T>)>,
    pub minimum: SMinimum<T>,
    /// Covariance interpolated at the minimum of the mean `s`.
    pub gamma_star: CovarianceState<T>,
}

/// State-space bookkeeping shared by drift, Jacobian and noise.
#[derive(Debug, Clone)]
struct PeelingChain<T> {
    var_degrees: Vec<u32>,
    kmax: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> PeelingChain<T> {
    fn new(e: &Ensemble<T>) -> Result<Self> {
        let kmax = e.rho().max_degree();
        if kmax > MAX_CHECK_DEGREE {
            return Err(Error::InvalidArgument(format!(
                "check degree {kmax} exceeds {MAX_CHECK_DEGREE} supported by covariance evolution"
            )));
        }
        Ok(Self {
            var_degrees: e.lambda().degrees().collect(),
            kmax: kmax as usize,
            _marker: std::marker::PhantomData,
        })
    }

    fn nv(&self) -> usize {
        self.var_degrees.len()
    }

    fn dim(&self) -> usize {
        self.nv() + self.kmax
    }

    /// Index of `r_j`.
    #[inline]
    fn ri(&self, j: usize) -> usize {
        self.nv() + j - 1
    }

    fn deg(&self, i: usize) -> T {
        T::from_count(self.var_degrees[i] as usize)
    }

    fn to_state(&self, tau: T, z: &[T]) -> ProfileState<T> {
        ProfileState {
            tau,
            v: z[..self.nv()].to_vec(),
            r: z[self.nv()..].to_vec(),
        }
    }

    fn v_total(&self, z: &[T]) -> T {
        z[..self.nv()].iter().copied().sum()
    }

    /// `(w_d, h, pi_j)`: selection probabilities of the removed variable's
    /// degree, the mean number of its other edges, and socket landing
    /// probabilities by residual check degree.
    fn probabilities(&self, z: &[T]) -> (Vec<T>, T, Vec<T>) {
        let nv = self.nv();
        let ev: T = (0..nv).map(|i| self.deg(i) * z[i]).sum();
        let er: T = z[nv..].iter().copied().sum();
        let w: Vec<T> = (0..nv).map(|i| self.deg(i) * z[i] / ev).collect();
        let h = (0..nv).map(|i| w[i] * (self.deg(i) - T::one())).sum();
        let pi = z[nv..].iter().map(|&r| r / er).collect();
        (w, h, pi)
    }

    fn drift(&self, z: &[T]) -> Vec<T> {
        let nv = self.nv();
        let (w, h, pi) = self.probabilities(z);
        let mut f = vec![T::zero(); self.dim()];
        for i in 0..nv {
            f[i] = -w[i];
        }
        for j in 1..=self.kmax {
            let up = if j < self.kmax { pi[j] } else { T::zero() };
            f[self.ri(j)] = h * T::from_count(j) * (up - pi[j - 1]);
        }
        f[self.ri(1)] = f[self.ri(1)] - T::one();
        f
    }

    fn jacobian(&self, z: &[T]) -> Matrix<T> {
        let nv = self.nv();
        let dim = self.dim();
        let ev: T = (0..nv).map(|i| self.deg(i) * z[i]).sum();
        let er: T = z[nv..].iter().copied().sum();
        let (w, h, pi) = self.probabilities(z);
        let mut a = Matrix::zeros(dim, dim);
        // d w_d / d v_e = (d [d==e] - w_d e) / ev
        for i in 0..nv {
            for k in 0..nv {
                let kron = if i == k { self.deg(i) } else { T::zero() };
                a[(i, k)] = -(kron - w[i] * self.deg(k)) / ev;
            }
        }
        // d h / d v_e = e (e - 1 - h) / ev
        let dh: Vec<T> = (0..nv)
            .map(|k| self.deg(k) * (self.deg(k) - T::one() - h) / ev)
            .collect();
        let pi_at = |j: usize| if j <= self.kmax { pi[j - 1] } else { T::zero() };
        for j in 1..=self.kmax {
            let row = self.ri(j);
            let jj = T::from_count(j);
            let g = jj * (pi_at(j + 1) - pi_at(j));
            for k in 0..nv {
                a[(row, k)] = g * dh[k];
            }
            // d pi_m / d r_i = ([i==m] - pi_m) / er
            for i in 1..=self.kmax {
                let d_up = if j < self.kmax {
                    (if i == j + 1 { T::one() } else { T::zero() }) - pi_at(j + 1)
                } else {
                    T::zero()
                };
                let d_here = (if i == j { T::one() } else { T::zero() }) - pi_at(j);
                a[(row, self.ri(i))] = h * jj * (d_up - d_here) / er;
            }
        }
        a
    }

    /// Covariance of one decoder step's increment.
    fn increment_covariance(&self, z: &[T]) -> Matrix<T> {
        let nv = self.nv();
        let dim = self.dim();
        let (w, _h, pi) = self.probabilities(z);
        // u_j: a companion edge hitting a degree-j check
        let hit = |j: usize| {
            let mut u = vec![T::zero(); dim];
            let jj = T::from_count(j);
            u[self.ri(j)] = -jj;
            if j >= 2 {
                u[self.ri(j - 1)] = jj - T::one();
            }
            u
        };
        let hits: Vec<Vec<T>> = (1..=self.kmax).map(hit).collect();
        let mut mbar = vec![T::zero(); dim];
        for (p, u) in pi.iter().zip(&hits) {
            for (m, &x) in mbar.iter_mut().zip(u) {
                *m = *m + *p * x;
            }
        }
        let mut s = Matrix::outer(&mbar, &mbar).scale(-T::one());
        for (p, u) in pi.iter().zip(&hits) {
            s = s.axpy(*p, &Matrix::outer(u, u));
        }
        let f = self.drift(z);
        let mut b = Matrix::zeros(dim, dim);
        for i in 0..nv {
            let companions = self.deg(i) - T::one();
            b = b.axpy(w[i] * companions, &s);
            let mut mu = vec![T::zero(); dim];
            mu[i] = -T::one();
            mu[self.ri(1)] = -T::one();
            for k in 0..dim {
                mu[k] = mu[k] + companions * mbar[k] - f[k];
            }
            b = b.axpy(w[i], &Matrix::outer(&mu, &mu));
        }
        b
    }
}

/// Binomial pmf row `P[Bin(d, theta) = j]` for `j = 0..=d` and its
/// derivative in `theta`.
fn binomial_row<T: Scalar>(d: usize, theta: T) -> (Vec<T>, Vec<T>) {
    let mut coeff = vec![T::one(); d + 1];
    for j in 1..=d {
        coeff[j] = coeff[j - 1] * T::from_count(d - j + 1) / T::from_count(j);
    }
    let one_m = T::one() - theta;
    let pmf: Vec<T> = (0..=d)
        .map(|j| coeff[j] * theta.powi(j as i32) * one_m.powi((d - j) as i32))
        .collect();
    let dpmf = (0..=d)
        .map(|j| {
            let up = if j > 0 {
                T::from_count(j) * theta.powi(j as i32 - 1) * one_m.powi((d - j) as i32)
            } else {
                T::zero()
            };
            let down = if j < d {
                T::from_count(d - j) * theta.powi(j as i32) * one_m.powi((d - j) as i32 - 1)
            } else {
                T::zero()
            };
            coeff[j] * (up - down)
        })
        .collect();
    (pmf, dpmf)
}

/// Mean profile and covariance right after the channel, before any
/// decoding step.
pub fn initial_state<T: Scalar>(
    e: &Ensemble<T>,
    eps: T,
    mode: AlphaMode,
) -> Result<(ProfileState<T>, CovarianceState<T>)> {
    let chain = PeelingChain::new(e)?;
    let (z, gamma) = initial_vectors(&chain, e, eps, mode)?;
    let s_index = chain.ri(1);
    Ok((
        chain.to_state(T::zero(), &z),
        CovarianceState {
            matrix: gamma,
            s_index,
        },
    ))
}

fn initial_vectors<T: Scalar>(
    chain: &PeelingChain<T>,
    e: &Ensemble<T>,
    eps: T,
    mode: AlphaMode,
) -> Result<(Vec<T>, Matrix<T>)> {
    if !(eps > T::zero() && eps <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "erasure probability {eps} outside (0, 1]"
        )));
    }
    let nv = chain.nv();
    let kmax = chain.kmax;
    let dim = chain.dim();
    let edges_per_var = e.lambda().average_node_degree();
    let node = e.lambda().node_fractions();

    let mut z = vec![T::zero(); dim];
    for (i, &(_, frac)) in node.iter().enumerate() {
        z[i] = eps * frac;
    }

    // check counts by residual degree 0..=kmax, per variable node
    let mut mean_counts = vec![T::zero(); kmax + 1];
    let mut dmean_counts = vec![T::zero(); kmax + 1];
    let mut cov_counts: Matrix<T> = Matrix::zeros(kmax + 1, kmax + 1);
    let mut cov_with_total = vec![T::zero(); kmax + 1];
    for &(dc, rho_c) in e.rho().terms() {
        let q = edges_per_var * rho_c / T::from_count(dc as usize);
        let (p, dp) = binomial_row(dc as usize, eps);
        let mean_deg = T::from_count(dc as usize) * eps;
        for i in 0..=dc as usize {
            mean_counts[i] = mean_counts[i] + q * p[i];
            dmean_counts[i] = dmean_counts[i] + q * dp[i];
            cov_with_total[i] = cov_with_total[i] + q * p[i] * (T::from_count(i) - mean_deg);
            for j in 0..=dc as usize {
                let kron = if i == j { p[i] } else { T::zero() };
                cov_counts[(i, j)] = cov_counts[(i, j)] + q * (kron - p[i] * p[j]);
            }
        }
    }
    for j in 1..=kmax {
        z[chain.ri(j)] = T::from_count(j) * mean_counts[j];
    }

    // given the erased edge total, check sockets are an exchangeable subset
    let var_total = edges_per_var * eps * (T::one() - eps);
    let mut gamma: Matrix<T> = Matrix::zeros(dim, dim);
    if var_total > T::zero() {
        for i in 1..=kmax {
            for j in 1..=kmax {
                let c = cov_counts[(i, j)] - cov_with_total[i] * cov_with_total[j] / var_total;
                gamma[(chain.ri(i), chain.ri(j))] = T::from_count(i) * T::from_count(j) * c;
            }
        }
    }

    // channel part: erased variable counts by degree
    let mut cov_v: Matrix<T> = Matrix::zeros(nv, nv);
    for (i, &(_, frac)) in node.iter().enumerate() {
        cov_v[(i, i)] = frac * eps * (T::one() - eps);
    }
    if mode == AlphaMode::Conditional {
        let row: Vec<T> = (0..nv).map(|i| cov_v[(i, i)]).collect();
        let total: T = row.iter().copied().sum();
        if total > T::zero() {
            cov_v = cov_v.sub(&Matrix::outer(&row, &row).scale(T::one() / total));
        }
    }
    // sensitivity of each coordinate to the erased count of degree-d variables
    let mut jac: Matrix<T> = Matrix::zeros(dim, nv);
    for (i, &d) in chain.var_degrees.iter().enumerate() {
        jac[(i, i)] = T::one();
        for j in 1..=kmax {
            jac[(chain.ri(j), i)] =
                T::from_count(d as usize) * T::from_count(j) * dmean_counts[j] / edges_per_var;
        }
    }
    let channel = jac.matmul(&cov_v).matmul(&jac.transpose());
    Ok((z, gamma.add(&channel)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StopRule {
    /// Stop as soon as the degree-one fraction reaches zero.
    Physical,
    /// Keep integrating past a negative minimum until `s` turns upward.
    ThroughMinimum,
}

struct RawTrajectory<T> {
    taus: Vec<T>,
    states: Vec<Vec<T>>,
    gammas: Vec<Matrix<T>>,
    status: TrajectoryStatus,
}

fn integrate<T: Scalar>(
    chain: &PeelingChain<T>,
    z0: Vec<T>,
    gamma0: Option<Matrix<T>>,
    eps: T,
    step: T,
    rule: StopRule,
) -> Result<RawTrajectory<T>> {
    if !(step > T::zero()) {
        return Err(Error::InvalidArgument(format!("step {step} must be positive")));
    }
    let s = chain.ri(1);
    let eta = T::lit(VANISHING_V);
    let psd_tol = T::lit(PSD_TOLERANCE).max(T::noise_floor());
    let mut out = RawTrajectory {
        taus: vec![T::zero()],
        states: vec![z0.clone()],
        gammas: gamma0.iter().cloned().collect(),
        status: TrajectoryStatus::Decoded,
    };
    let mut z = z0;
    let mut gamma = gamma0;
    let mut tau = T::zero();
    let mut after_min = None::<usize>;
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);

    let rhs = |z: &[T], g: Option<&Matrix<T>>| -> (Vec<T>, Option<Matrix<T>>) {
        let f = chain.drift(z);
        let dg = g.map(|g| {
            let a = chain.jacobian(z);
            let ag = a.matmul(g);
            ag.add(&ag.transpose()).add(&chain.increment_covariance(z))
        });
        (f, dg)
    };
    let shift = |z: &[T], k: &[T], h: T| -> Vec<T> {
        z.iter().zip(k).map(|(&a, &b)| a + h * b).collect()
    };

    loop {
        let v = chain.v_total(&z);
        if v <= eta || v - step < eta || tau + step > eps {
            out.status = TrajectoryStatus::Decoded;
            break;
        }
        if rule == StopRule::Physical && z[s] <= T::zero() {
            out.status = TrajectoryStatus::Stalled;
            break;
        }
        if let Some(i) = after_min {
            if out.states.len() >= i + 3 {
                out.status = if out.states[i][s] <= T::zero() {
                    TrajectoryStatus::Stalled
                } else {
                    TrajectoryStatus::Decoded
                };
                break;
            }
        }

        let (k1, g1) = rhs(&z, gamma.as_ref());
        let z2 = shift(&z, &k1, step * half);
        let gm2 = gamma.as_ref().zip(g1.as_ref()).map(|(g, d)| g.axpy(step * half, d));
        let (k2, g2) = rhs(&z2, gm2.as_ref());
        let z3 = shift(&z, &k2, step * half);
        let gm3 = gamma.as_ref().zip(g2.as_ref()).map(|(g, d)| g.axpy(step * half, d));
        let (k3, g3) = rhs(&z3, gm3.as_ref());
        let z4 = shift(&z, &k3, step);
        let gm4 = gamma.as_ref().zip(g3.as_ref()).map(|(g, d)| g.axpy(step, d));
        let (k4, g4) = rhs(&z4, gm4.as_ref());

        for i in 0..z.len() {
            z[i] = z[i] + step * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        if let Some(g) = gamma.as_mut() {
            let incr = g1
                .unwrap()
                .axpy(two, &g2.unwrap())
                .axpy(two, &g3.unwrap())
                .add(&g4.unwrap());
            *g = g.axpy(step * sixth, &incr);
        }
        tau = tau + step;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integration(format!("non-finite state at tau={tau}")));
        }
        if let Some(g) = gamma.as_ref() {
            let min_eig = g.symmetric_eigenvalues()[0];
            if min_eig < -psd_tol * g.max_abs().max(T::one()) {
                return Err(Error::NotPositiveSemidefinite {
                    tau: tau.as_f64(),
                    min_eigenvalue: min_eig.as_f64(),
                });
            }
            out.gammas.push(g.clone());
        }
        out.taus.push(tau);
        out.states.push(z.clone());

        let n = out.states.len();
        if rule == StopRule::ThroughMinimum && after_min.is_none() && n >= 3 {
            let (a, b, c) = (out.states[n - 3][s], out.states[n - 2][s], out.states[n - 1][s]);
            if b < a && b <= c {
                after_min = Some(n - 2);
            }
        }
    }
    Ok(out)
}

/// Parabolic refinement of the lowest interior local minimum of `s`.
/// Falls back to the global minimum when `s` is monotone; the decay of `s`
/// to zero as decoding completes is not a minimum of interest.
fn locate_minimum<T: Scalar>(taus: &[T], s: &[T]) -> SMinimum<T> {
    let n = s.len();
    let interior = (1..n.saturating_sub(1))
        .filter(|&i| s[i] < s[i - 1] && s[i] <= s[i + 1])
        .min_by(|&a, &b| s[a].partial_cmp(&s[b]).expect("finite trajectory"));
    let best = interior.unwrap_or_else(|| {
        (0..n)
            .min_by(|&a, &b| s[a].partial_cmp(&s[b]).expect("finite trajectory"))
            .expect("nonempty trajectory")
    });
    if best == 0 || best + 1 >= n {
        return SMinimum {
            tau: taus[best],
            s: s[best],
            index: best,
        };
    }
    let (y0, y1, y2) = (s[best - 1], s[best], s[best + 1]);
    let h = taus[best + 1] - taus[best];
    let two = T::lit(2.0);
    let curv = y0 - two * y1 + y2;
    if curv <= T::zero() {
        return SMinimum {
            tau: taus[best],
            s: y1,
            index: best,
        };
    }
    let offset = (y0 - y2) / (two * curv);
    SMinimum {
        tau: taus[best] + offset * h,
        s: y1 - (y0 - y2) * (y0 - y2) / (T::lit(8.0) * curv),
        index: best,
    }
}

/// Quadratic Lagrange interpolation on three equally spaced samples at
/// fractional offset `u` from the middle one.
fn lagrange3<T: Scalar>(y0: T, y1: T, y2: T, u: T) -> T {
    let half = T::lit(0.5);
    y1 + half * u * (y2 - y0) + half * u * u * (y2 - T::lit(2.0) * y1 + y0)
}

fn s_series<T: Scalar>(chain: &PeelingChain<T>, raw: &RawTrajectory<T>) -> Vec<T> {
    let s = chain.ri(1);
    raw.states.iter().map(|z| z[s]).collect()
}

/// Integrates the mean peeling trajectory until decoding completes
/// (`Decoded`) or the degree-one fraction reaches zero (`Stalled`).
pub fn mean_evolution<T: Scalar>(e: &Ensemble<T>, eps: T, step: T) -> Result<MeanTrajectory<T>> {
    mean_evolution_with(e, eps, step, StopRule::Physical)
}

/// Like [`mean_evolution`], but continues through a negative minimum of
/// `s` so the minimum is available on both sides of the threshold.
pub fn mean_evolution_through_minimum<T: Scalar>(
    e: &Ensemble<T>,
    eps: T,
    step: T,
) -> Result<MeanTrajectory<T>> {
    mean_evolution_with(e, eps, step, StopRule::ThroughMinimum)
}

fn mean_evolution_with<T: Scalar>(
    e: &Ensemble<T>,
    eps: T,
    step: T,
    rule: StopRule,
) -> Result<MeanTrajectory<T>> {
    let chain = PeelingChain::new(e)?;
    let (z0, _) = initial_vectors(&chain, e, eps, AlphaMode::Conditional)?;
    let raw = integrate(&chain, z0, None, eps, step, rule)?;
    let minimum = locate_minimum(&raw.taus, &s_series(&chain, &raw));
    let states = raw
        .taus
        .iter()
        .zip(&raw.states)
        .map(|(&t, z)| chain.to_state(t, z))
        .collect();
    Ok(MeanTrajectory {
        var_degrees: chain.var_degrees.clone(),
        eps,
        step,
        states,
        status: raw.status,
        minimum,
    })
}

/// Jointly integrates the mean and covariance, returning the covariance
/// at the minimum of the mean degree-one fraction.
pub fn covariance_evolution<T: Scalar>(
    e: &Ensemble<T>,
    eps: T,
    step: T,
    mode: AlphaMode,
) -> Result<CovarianceTrajectory<T>> {
    let chain = PeelingChain::new(e)?;
    let (z0, g0) = initial_vectors(&chain, e, eps, mode)?;
    let raw = integrate(&chain, z0, Some(g0), eps, step, StopRule::ThroughMinimum)?;
    let minimum = locate_minimum(&raw.taus, &s_series(&chain, &raw));
    let i = minimum.index;
    let gamma_star = if i > 0 && i + 1 < raw.gammas.len() {
        let u = (minimum.tau - raw.taus[i]) / step;
        let (a, b, c) = (&raw.gammas[i - 1], &raw.gammas[i], &raw.gammas[i + 1]);
        Matrix::from_fn(a.rows(), a.cols(), |p, q| {
            lagrange3(a[(p, q)], b[(p, q)], c[(p, q)], u)
        })
    } else {
        raw.gammas[i].clone()
    };
    let s_index = chain.ri(1);
    let samples = raw
        .taus
        .iter()
        .zip(raw.states.iter().zip(raw.gammas))
        .map(|(&t, (z, g))| {
            (
                chain.to_state(t, z),
                CovarianceState { matrix: g, s_index },
            )
        })
        .collect();
    Ok(CovarianceTrajectory {
        var_degrees: chain.var_degrees.clone(),
        eps,
        mode,
        samples,
        minimum,
        gamma_star: CovarianceState {
            matrix: gamma_star,
            s_index,
        },
    })
}

/// Everything that goes into the scaling parameter `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport<T> {
    pub mode: AlphaMode,
    pub epsilon_star: T,
    pub nu_star: T,
    /// Time of the minimum of the mean degree-one fraction at threshold.
    pub tau_star: T,
    /// Standard deviation of the degree-one count at `tau_star`, over `sqrt(n)`.
    pub sigma_star: T,
    /// `-d s_min / d eps` at threshold.
    pub slope: T,
    pub alpha: T,
}

pub fn alpha<T: Scalar>(e: &Ensemble<T>, mode: AlphaMode) -> Result<AlphaReport<T>> {
    alpha_with_step(e, mode, T::lit(DEFAULT_STEP))
}

/// `alpha = sigma* / c` with `sigma*` from covariance evolution at the
/// threshold and `c` the sensitivity of the minimum of the mean degree-one
/// fraction to the erasure probability (central differences, one
/// Richardson extrapolation).
pub fn alpha_with_step<T: Scalar>(
    e: &Ensemble<T>,
    mode: AlphaMode,
    step: T,
) -> Result<AlphaReport<T>> {
    let cp = critical_point(e, T::lit(1e-12))?;
    let eps = cp.epsilon_star;
    let cov = covariance_evolution(e, eps, step, mode)?;
    let s_min = |x: T| -> Result<T> {
        Ok(mean_evolution_through_minimum(e, x, step)?.minimum.s)
    };
    let delta = T::lit(SLOPE_DELTA);
    let half = delta * T::lit(0.5);
    let two = T::lit(2.0);
    let d_full = (s_min(eps + delta)? - s_min(eps - delta)?) / (two * delta);
    let d_half = (s_min(eps + half)? - s_min(eps - half)?) / (two * half);
    let slope = -(T::lit(4.0) * d_half - d_full) / T::lit(3.0);
    if slope.abs() < T::lit(DEGENERATE_SLOPE) {
        return Err(Error::DegenerateSlope(slope.as_f64()));
    }
    let sigma_star = cov.gamma_star.s_variance().max(T::zero()).sqrt();
    Ok(AlphaReport {
        mode,
        epsilon_star: eps,
        nu_star: cp.nu_star,
        tau_star: cov.minimum.tau,
        sigma_star,
        slope,
        alpha: sigma_star / slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{de_evolve, make_regular};

    fn e36() -> Ensemble<f64> {
        make_regular(3, 6).unwrap()
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let e: Ensemble<f64> = "3:0.4,5:0.6/6:0.5,7:0.5".parse().unwrap();
        let chain = PeelingChain::new(&e).unwrap();
        let (z, _) = initial_vectors(&chain, &e, 0.4, AlphaMode::Conditional).unwrap();
        let a = chain.jacobian(&z);
        let h = 1e-6;
        for k in 0..chain.dim() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fp = chain.drift(&zp);
            let fm = chain.drift(&zm);
            for i in 0..chain.dim() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - a[(i, k)]).abs() < 1e-6, "A[{i},{k}]: {} vs {fd}", a[(i, k)]);
            }
        }
    }

    #[test]
    fn drift_conserves_edges() {
        let e: Ensemble<f64> = "3:0.4,5:0.6/6:0.5,7:0.5".parse().unwrap();
        let chain = PeelingChain::new(&e).unwrap();
        let (z, _) = initial_vectors(&chain, &e, 0.45, AlphaMode::Binomial).unwrap();
        let f = chain.drift(&z);
        let state_rate = ProfileState { tau: 0.0, v: f[..chain.nv()].to_vec(), r: f[chain.nv()..].to_vec() };
        assert!(state_rate.edge_imbalance(&chain.var_degrees).abs() < 1e-12);
        assert!((state_rate.v_total() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unerased_start_is_all_full_checks() {
        for mode in [AlphaMode::Conditional, AlphaMode::Binomial] {
            let (z, _) = initial_state(&e36(), 1.0, mode).unwrap();
            assert!((z.v_total() - 1.0).abs() < 1e-15);
            assert!((z.r[5] - 3.0).abs() < 1e-12);
            for j in 0..5 {
                assert!(z.r[j].abs() < 1e-15);
            }
            assert_eq!(z.s(), 0.0);
        }
    }

    #[test]
    fn initial_degree_one_fraction_is_binomial_thinning() {
        let eps = 0.42944;
        let (z, _) = initial_state(&e36(), eps, AlphaMode::Conditional).unwrap();
        // half a check per variable, each with Bin(6, eps) residual edges
        let want = 0.5 * 6.0 * eps * (1.0f64 - eps).powi(5);
        assert!((z.s() - want).abs() < 1e-14);
        assert!(z.edge_imbalance(&[3]).abs() < 1e-14);
    }

    #[test]
    fn binomial_mode_adds_variance() {
        for eps in [0.1, 0.42944, 0.8] {
            let (_, gc) = initial_state(&e36(), eps, AlphaMode::Conditional).unwrap();
            let (_, gb) = initial_state(&e36(), eps, AlphaMode::Binomial).unwrap();
            assert!(gb.trace() > gc.trace());
            assert!(gc.min_eigenvalue() >= -1e-12);
            assert!(gb.min_eigenvalue() >= -1e-12);
        }
    }

    #[test]
    fn mean_evolution_decodes_below_threshold() {
        let t = mean_evolution(&e36(), 0.40, 1e-4).unwrap();
        assert_eq!(t.status, TrajectoryStatus::Decoded);
        assert!(t.minimum.s > 0.0);
        for st in &t.states {
            assert!(st.edge_imbalance(&[3]).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_evolution_stalls_at_de_fixed_point() {
        let e = e36();
        let t = mean_evolution(&e, 0.45, 1e-4).unwrap();
        assert_eq!(t.status, TrajectoryStatus::Stalled);
        let x = de_evolve(&e, 0.45, 1e-14, 1_000_000);
        let y = 1.0 - e.rho().eval(1.0 - x);
        let predicted = 0.45 * e.lambda().node_eval(y);
        assert!((t.residual_v() - predicted).abs() < 2e-3, "{} vs {predicted}", t.residual_v());
    }

    #[test]
    fn tangency_at_threshold() {
        let e = e36();
        let cp = critical_point(&e, 1e-12).unwrap();
        let t = mean_evolution_through_minimum(&e, cp.epsilon_star, 1e-4).unwrap();
        assert!(t.minimum.s.abs() < 1e-8, "min s = {}", t.minimum.s);
        // residual at the touching point is nu*
        let st = &t.states[t.minimum.index];
        assert!((st.v_total() - cp.nu_star).abs() < 2e-4);
    }

    #[test]
    fn covariance_stays_psd_and_s_fluctuates() {
        let e = e36();
        let cp = critical_point(&e, 1e-12).unwrap();
        let (_, g0) = initial_state(&e, cp.epsilon_star, AlphaMode::Conditional).unwrap();
        assert!(g0.min_eigenvalue() >= -1e-9);
        let c = covariance_evolution(&e, cp.epsilon_star, 1e-4, AlphaMode::Conditional).unwrap();
        assert!(c.gamma_star.s_variance() > 0.0);
        for (_, g) in c.samples.iter().step_by(100) {
            assert!(g.matrix.max_asymmetry() < 1e-12);
        }
    }

    #[test]
    fn alpha_mode_identity() {
        let e = e36();
        let c = alpha(&e, AlphaMode::Conditional).unwrap();
        let b = alpha(&e, AlphaMode::Binomial).unwrap();
        let eps = c.epsilon_star;
        let diff = b.alpha * b.alpha - c.alpha * c.alpha;
        assert!((diff - eps * (1.0 - eps)).abs() < 1e-3, "{diff}");
    }

    #[test]
    fn mode_parse_roundtrip() {
        for m in [AlphaMode::Conditional, AlphaMode::Binomial] {
            assert_eq!(m.to_string().parse::<AlphaMode>().unwrap(), m);
        }
        assert!("exact".parse::<AlphaMode>().is_err());
    }
}
