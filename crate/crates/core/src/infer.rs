//! Null distributions, Γ-bounding p-values and the residual sensitivity value.
//!
//! Under randomization the statistic `t` (sets whose cluster-1 member is the
//! treated unit) is `Binomial(I, 1/(K+1))`. Allowing the within-set odds of
//! treatment to vary by a factor Γ, the worst case for a large `t` is
//! `Binomial(I, Γ/(K+Γ))` and for a small `t` is `Binomial(I, 1/(1+KΓ))`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{binom_cdf, binom_quantile, binom_sf, normal_cdf, normal_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    TwoSided,
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Asymptotic,
}

/// Where the two-sided statistic is centered for `K ≥ 2`. The two agree for
/// pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Reflect `t` about the null mean `I/(K+1)`.
    #[default]
    Centered,
    /// Reflect `t` about `I/2` regardless of `K` (`paper` on the command line).
    #[serde(rename = "paper")]
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Reject when the bounding p-value is below α.
    PValue,
    /// Reject when `t` falls outside the α/2 and 1 − α/2 binomial quantiles.
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaCurvePoint {
    pub gamma: f64,
    pub p_exact: f64,
    pub p_asymptotic: f64,
    pub side: Side,
}

fn check_counts(i: u64, k: u64, t: u64) -> Result<()> {
    if i == 0 || k == 0 {
        return Err(Error::invalid(format!("need I ≥ 1 and K ≥ 1, got I = {i}, K = {k}")));
    }
    if t > i {
        return Err(Error::invalid(format!("statistic t = {t} exceeds I = {i}")));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be a finite value ≥ 1, got {gamma}")));
    }
    Ok(())
}

/// Upper and lower rejection thresholds `(u, l)` of the two-sided statistic
/// observed at `t`.
pub fn two_sided_thresholds(i: u64, k: u64, t: u64, centering: Centering) -> (i64, i64) {
    let (i, k, t) = (i as i64, k as i64, t as i64);
    match centering {
        Centering::Midpoint => (t.max(i - t), t.min(i - t)),
        Centering::Centered => {
            let m = k + 1;
            // Reflection of t about I/(K+1), scaled by K+1.
            let mirrored = 2 * i - t * m;
            if t * m >= i {
                (t, mirrored.div_euclid(m))
            } else {
                (-(-mirrored).div_euclid(m), t)
            }
        }
    }
}

fn upper_prob(k: u64, gamma: f64) -> f64 {
    gamma / (k as f64 + gamma)
}

fn lower_prob(k: u64, gamma: f64) -> f64 {
    1.0 / (1.0 + k as f64 * gamma)
}

fn upper_tail(i: u64, k: u64, u: i64, gamma: f64, mode: Mode) -> f64 {
    let p = upper_prob(k, gamma);
    match mode {
        Mode::Exact => binom_sf(i, p, u),
        Mode::Asymptotic => {
            let n = i as f64;
            let kg = k as f64 * gamma;
            let var = n * kg / ((k as f64 + gamma) * (k as f64 + gamma));
            normal_sf((u as f64 - n * p) / var.sqrt())
        }
    }
}

fn lower_tail(i: u64, k: u64, l: i64, gamma: f64, mode: Mode) -> f64 {
    let p = lower_prob(k, gamma);
    match mode {
        Mode::Exact => binom_cdf(i, p, l),
        Mode::Asymptotic => {
            let n = i as f64;
            let kg = k as f64 * gamma;
            let var = n * kg / ((1.0 + kg) * (1.0 + kg));
            normal_cdf((l as f64 - n * p) / var.sqrt())
        }
    }
}

/// One-sided Γ-bounding p-value: `P(T ≥ t)` under the upper worst case or
/// `P(T ≤ t)` under the lower one.
pub fn bounding_p_one_sided(i: u64, k: u64, t: u64, gamma: f64, side: Side, mode: Mode) -> Result<f64> {
    check_counts(i, k, t)?;
    check_gamma(gamma)?;
    match side {
        Side::Upper => Ok(upper_tail(i, k, t as i64, gamma, mode)),
        Side::Lower => Ok(lower_tail(i, k, t as i64, gamma, mode)),
        Side::TwoSided => Err(Error::invalid("use bounding_p_two_sided for two-sided p-values")),
    }
}

/// Two-sided Γ-bounding p-value, capped at 1.
pub fn bounding_p_two_sided(i: u64, k: u64, t: u64, gamma: f64, mode: Mode, centering: Centering) -> Result<f64> {
    check_counts(i, k, t)?;
    check_gamma(gamma)?;
    let (u, l) = two_sided_thresholds(i, k, t, centering);
    Ok((upper_tail(i, k, u, gamma, mode) + lower_tail(i, k, l, gamma, mode)).min(1.0))
}

/// Exact two-sided p-value under randomization (Γ = 1).
pub fn null_p_two_sided(i: u64, k: u64, t: u64, centering: Centering) -> Result<f64> {
    bounding_p_two_sided(i, k, t, 1.0, Mode::Exact, centering)
}

pub fn bounding_p(i: u64, k: u64, t: u64, gamma: f64, side: Side, mode: Mode, centering: Centering) -> Result<f64> {
    match side {
        Side::TwoSided => bounding_p_two_sided(i, k, t, gamma, mode, centering),
        _ => bounding_p_one_sided(i, k, t, gamma, side, mode),
    }
}

/// Binomial quantile rejection rule at level α: reject when `t` lies below
/// the α/2 quantile of the lower worst case or above the 1 − α/2 quantile of
/// the upper worst case.
pub fn quantile_reject(i: u64, k: u64, t: u64, gamma: f64, alpha: f64) -> Result<bool> {
    check_counts(i, k, t)?;
    check_gamma(gamma)?;
    check_alpha(alpha)?;
    let lo = binom_quantile(i, lower_prob(k, gamma), alpha / 2.0);
    let hi = binom_quantile(i, upper_prob(k, gamma), 1.0 - alpha / 2.0);
    Ok(t < lo || t > hi)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsvResult {
    pub rsv: f64,
    /// Set when bisection observed a decreasing p-value and the grid scan
    /// fallback was used.
    pub diagnostic: Option<String>,
}

const RSV_TOL: f64 = 1e-4;
const RSV_GRID_STEP: f64 = 1e-3;
const GAMMA_CEILING: f64 = 1e12;

/// Residual sensitivity value: the smallest Γ ≥ 1 at which the two-sided
/// bounding p-value reaches α, to within 1e-4.
pub fn residual_sensitivity_value(
    i: u64,
    k: u64,
    t: u64,
    alpha: f64,
    mode: Mode,
    centering: Centering,
) -> Result<RsvResult> {
    check_counts(i, k, t)?;
    check_alpha(alpha)?;
    let p = |g: f64| bounding_p_two_sided(i, k, t, g, mode, centering);
    let mut evaluated = vec![(1.0, p(1.0)?)];
    if evaluated[0].1 >= alpha {
        return Ok(RsvResult { rsv: 1.0, diagnostic: None });
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    loop {
        let v = p(hi)?;
        evaluated.push((hi, v));
        if v >= alpha {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > GAMMA_CEILING {
            return Err(Error::Numeric(format!(
                "bounding p-value stays below {alpha} up to gamma {GAMMA_CEILING:e}"
            )));
        }
    }
    while hi - lo > RSV_TOL {
        let mid = 0.5 * (lo + hi);
        let v = p(mid)?;
        evaluated.push((mid, v));
        if v >= alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    evaluated.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = evaluated.windows(2).find(|w| w[1].1 < w[0].1) {
        let diagnostic = format!(
            "bounding p-value decreased from {:e} at gamma {} to {:e} at gamma {}; used grid scan",
            w[0].1, w[0].0, w[1].1, w[1].0
        );
        let steps = ((hi - 1.0) / RSV_GRID_STEP).ceil() as u64;
        for s in 0..=steps {
            let g = 1.0 + s as f64 * RSV_GRID_STEP;
            if p(g)? >= alpha {
                return Ok(RsvResult { rsv: g, diagnostic: Some(diagnostic) });
            }
        }
        return Ok(RsvResult { rsv: hi, diagnostic: Some(diagnostic) });
    }
    Ok(RsvResult { rsv: hi, diagnostic: None })
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_gamma_grid(grid: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = grid.split(':').collect();
    let bad = || Error::invalid(format!("gamma grid must be start:stop:step, got `{grid}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    check_gamma(start)?;
    let n = ((stop - start) / step + 1e-9).floor() as u64;
    if n > 1_000_000 {
        return Err(Error::invalid("gamma grid has more than a million points"));
    }
    Ok((0..=n).map(|s| start + s as f64 * step).collect())
}

/// Exact and asymptotic bounding p-values at each Γ.
pub fn gamma_curve(
    i: u64,
    k: u64,
    t: u64,
    gammas: &[f64],
    side: Side,
    centering: Centering,
) -> Result<Vec<GammaCurvePoint>> {
    gammas
        .par_iter()
        .map(|&gamma| {
            Ok(GammaCurvePoint {
                gamma,
                p_exact: bounding_p(i, k, t, gamma, side, Mode::Exact, centering)?,
                p_asymptotic: bounding_p(i, k, t, gamma, side, Mode::Asymptotic, centering)?,
                side,
            })
        })
        .collect()
}
