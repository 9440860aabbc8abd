//! Finite-length scaling laws for the block and bit erasure probability.
//!
//! With `z = sqrt(n) (eps* - eps)` the basic law reads
//! `P_B = Q(z / alpha)`. The refined law replaces `eps*` by the shifted
//! threshold `eps* - beta n^(-2/3)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{alpha, AlphaMode};
use crate::ensemble::{critical_point, make_regular, Ensemble};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exponent of the finite-length threshold shift.
pub const SHIFT_EXPONENT: f64 = 2.0 / 3.0;
/// Exponent `nu` in `z = n^(1/nu) (eps* - eps)`.
pub const WINDOW_NU: f64 = 2.0;
/// Exponent `omega` of the leading correction to the basic law.
pub const CORRECTION_OMEGA: f64 = 1.0 / 6.0;
/// Default residual-size cut separating waterfall from floor failures.
pub const DEFAULT_GAMMA: f64 = 0.1;

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function<T: Scalar>(x: T) -> T {
    T::lit(0.5 * libm::erfc(x.as_f64() / std::f64::consts::SQRT_2))
}

/// Inverse of [`q_function`] on `(0, 1)`, by Newton steps safeguarded with
/// bisection.
pub fn q_inverse<T: Scalar>(p: T) -> Result<T> {
    let p = p.as_f64();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("Q inverse needs p in (0, 1), got {p}")));
    }
    let q = |x: f64| 0.5 * libm::erfc(x / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let mut x = 0.0;
    for _ in 0..200 {
        let fx = q(x) - p;
        if fx == 0.0 {
            break;
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let newton = x + fx / density;
        let next = if newton > lo && newton < hi && density > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(T::lit(x))
}

/// How erasures are drawn in the experiment a prediction is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Every bit erased independently.
    Iid,
    /// Exactly `round(eps n)` erasures.
    FixedWeight,
}

impl ChannelMode {
    /// The alpha mode whose fluctuations match this channel.
    pub fn alpha_mode(self) -> AlphaMode {
        match self {
            ChannelMode::Iid => AlphaMode::Binomial,
            ChannelMode::FixedWeight => AlphaMode::Conditional,
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Iid => "iid",
            ChannelMode::FixedWeight => "fixed_weight",
        })
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "iid" => Ok(ChannelMode::Iid),
            "fixed_weight" | "fixed" => Ok(ChannelMode::FixedWeight),
            other => Err(Error::Parse(format!("unknown channel mode {other:?}"))),
        }
    }
}

/// Constants of the scaling laws for one ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams<T> {
    pub epsilon_star: T,
    pub nu_star: T,
    pub alpha: T,
    pub alpha_mode: AlphaMode,
    /// Shift coefficient of the finite-length threshold.
    pub beta: T,
    /// Universal constant relating tabulated `beta / omega` values to `beta`.
    pub omega: T,
    pub gamma: T,
}

impl<T: Scalar> ScalingParams<T> {
    pub fn new(
        epsilon_star: T,
        nu_star: T,
        alpha: T,
        alpha_mode: AlphaMode,
        beta: T,
        omega: T,
        gamma: T,
    ) -> Result<Self> {
        let p = Self {
            epsilon_star,
            nu_star,
            alpha,
            alpha_mode,
            beta,
            omega,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: T| Err(Error::InvalidArgument(format!("{what} = {v} out of range")));
        let open_unit = |v: T| v > T::zero() && v < T::one();
        if !open_unit(self.epsilon_star) {
            return bad("epsilon_star", self.epsilon_star);
        }
        if !open_unit(self.nu_star) {
            return bad("nu_star", self.nu_star);
        }
        if !(self.alpha > T::zero()) || !self.alpha.is_finite() {
            return bad("alpha", self.alpha);
        }
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return bad("beta", self.beta);
        }
        if !(self.omega > T::zero()) || !self.omega.is_finite() {
            return bad("omega", self.omega);
        }
        if !open_unit(self.gamma) {
            return bad("gamma", self.gamma);
        }
        Ok(())
    }

    /// Converts to the other alpha mode using
    /// `alpha_binomial^2 = alpha_conditional^2 + eps*(1 - eps*)`.
    pub fn with_alpha_mode(&self, mode: AlphaMode) -> Self {
        let var = self.epsilon_star * (T::one() - self.epsilon_star);
        let alpha = match (self.alpha_mode, mode) {
            (a, b) if a == b => self.alpha,
            (AlphaMode::Conditional, AlphaMode::Binomial) => (self.alpha * self.alpha + var).sqrt(),
            _ => (self.alpha * self.alpha - var).max(T::zero()).sqrt(),
        };
        Self {
            alpha,
            alpha_mode: mode,
            ..*self
        }
    }

    /// Sets `beta` from a tabulated `beta / omega` value and `omega`.
    pub fn with_beta_over_omega(&self, beta_over_omega: T, omega: T) -> Self {
        Self {
            beta: beta_over_omega * omega,
            omega,
            ..*self
        }
    }

    /// Parameters from the built-in reference table for a regular
    /// ensemble. The table lists `eps*` to four decimals only, so `eps*`
    /// and `nu*` come from the critical point; `omega = 1`.
    pub fn reference(l: u32, k: u32) -> Result<Self> {
        let entry = reference_entry(l, k).ok_or_else(|| {
            Error::InvalidArgument(format!("no reference parameters for ({l},{k})"))
        })?;
        let e = make_regular::<T>(l, k)?;
        let cp = critical_point(&e, T::lit(1e-12))?;
        Self::new(
            cp.epsilon_star,
            cp.nu_star,
            T::lit(entry.alpha),
            AlphaMode::Conditional,
            T::lit(entry.beta_over_omega),
            T::one(),
            T::lit(DEFAULT_GAMMA),
        )
    }

    /// Parameters computed from the ensemble: `eps*` and `nu*` from the
    /// critical point, `alpha` from covariance evolution. `beta` is taken
    /// from the reference table when the ensemble is listed there and is
    /// zero otherwise.
    pub fn computed(e: &Ensemble<T>, mode: AlphaMode) -> Result<Self> {
        let report = alpha(e, mode)?;
        let beta = e
            .regular_degrees()
            .and_then(|(l, k)| reference_entry(l, k))
            .map_or(T::zero(), |r| T::lit(r.beta_over_omega));
        Self::new(
            report.epsilon_star,
            report.nu_star,
            report.alpha,
            mode,
            beta,
            T::one(),
            T::lit(DEFAULT_GAMMA),
        )
    }
}

/// Scaling variable `z`; the refined law measures the distance to the
/// shifted threshold.
pub fn scaling_variable<T: Scalar>(p: &ScalingParams<T>, n: u64, eps: T, refined: bool) -> T {
    let center = if refined {
        shifted_threshold(p, n)
    } else {
        p.epsilon_star
    };
    T::lit(n as f64).sqrt() * (center - eps)
}

fn check_mode<T: Scalar>(p: &ScalingParams<T>, channel: ChannelMode) -> Result<()> {
    if p.alpha_mode != channel.alpha_mode() {
        return Err(Error::ModeMismatch {
            alpha_mode: p.alpha_mode.to_string(),
            channel: channel.to_string(),
        });
    }
    Ok(())
}

/// Block erasure probability due to large failures, `Q(z / alpha)`.
///
/// The alpha mode must match the channel: binomial for i.i.d. erasures,
/// conditional for fixed-weight erasures.
pub fn predict_block<T: Scalar>(
    p: &ScalingParams<T>,
    n: u64,
    eps: T,
    refined: bool,
    channel: ChannelMode,
) -> Result<T> {
    check_mode(p, channel)?;
    predict_block_unchecked(p, n, eps, refined)
}

/// [`predict_block`] without the channel/mode consistency check.
pub fn predict_block_unchecked<T: Scalar>(
    p: &ScalingParams<T>,
    n: u64,
    eps: T,
    refined: bool,
) -> Result<T> {
    if n == 0 {
        return Err(Error::InvalidArgument("blocklength must be positive".into()));
    }
    if !(eps > T::zero() && eps < T::one()) {
        return Err(Error::InvalidArgument(format!("eps = {eps} outside (0, 1)")));
    }
    Ok(q_function(scaling_variable(p, n, eps, refined) / p.alpha))
}

/// Bit erasure probability, `nu* Q(z / alpha)`.
pub fn predict_bit<T: Scalar>(
    p: &ScalingParams<T>,
    n: u64,
    eps: T,
    refined: bool,
    channel: ChannelMode,
) -> Result<T> {
    Ok(p.nu_star * predict_block(p, n, eps, refined, channel)?)
}

pub fn predict_bit_unchecked<T: Scalar>(
    p: &ScalingParams<T>,
    n: u64,
    eps: T,
    refined: bool,
) -> Result<T> {
    Ok(p.nu_star * predict_block_unchecked(p, n, eps, refined)?)
}

/// Finite-length threshold `eps* - beta n^(-2/3)`, where the refined law
/// predicts `P_B = 1/2`.
pub fn shifted_threshold<T: Scalar>(p: &ScalingParams<T>, n: u64) -> T {
    p.epsilon_star - p.beta * T::lit((n as f64).powf(-SHIFT_EXPONENT))
}

/// Exponent of `n` in the expected number of error events of size `size`:
/// `size - ceil(size * l_min / 2)`.
pub fn floor_exponent<T: Scalar>(e: &Ensemble<T>, size: u32) -> Result<i64> {
    if size == 0 {
        return Err(Error::InvalidArgument("error event size must be at least 1".into()));
    }
    let l_min = e.l_min();
    if l_min <= 2 {
        return Err(Error::CycleRegime);
    }
    let s = size as i64;
    Ok(s - (s * l_min as i64 + 1) / 2)
}

/// One row of the reference table of regular ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceEntry {
    pub l: u32,
    pub k: u32,
    /// Threshold, four decimals.
    pub epsilon_star: f64,
    /// Conditional-mode alpha.
    pub alpha: f64,
    pub beta_over_omega: f64,
}

pub const REFERENCE_TABLE: [ReferenceEntry; 8] = [
    ReferenceEntry { l: 3, k: 4, epsilon_star: 0.6473, alpha: 0.260115, beta_over_omega: 0.593632 },
    ReferenceEntry { l: 3, k: 5, epsilon_star: 0.5176, alpha: 0.263814, beta_over_omega: 0.616196 },
    ReferenceEntry { l: 3, k: 6, epsilon_star: 0.4294, alpha: 0.249869, beta_over_omega: 0.616949 },
    ReferenceEntry { l: 4, k: 5, epsilon_star: 0.6001, alpha: 0.241125, beta_over_omega: 0.571617 },
    ReferenceEntry { l: 4, k: 6, epsilon_star: 0.5061, alpha: 0.246776, beta_over_omega: 0.574356 },
    ReferenceEntry { l: 5, k: 6, epsilon_star: 0.5510, alpha: 0.228362, beta_over_omega: 0.559688 },
    ReferenceEntry { l: 6, k: 7, epsilon_star: 0.5079, alpha: 0.280781, beta_over_omega: 0.547797 },
    ReferenceEntry { l: 6, k: 12, epsilon_star: 0.3075, alpha: 0.170218, beta_over_omega: 0.506326 },
];

pub fn reference_entry(l: u32, k: u32) -> Option<ReferenceEntry> {
    REFERENCE_TABLE.iter().copied().find(|r| r.l == l && r.k == k)
}
