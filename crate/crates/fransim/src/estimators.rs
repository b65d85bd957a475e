//! Rate corrections, heralding efficiencies, pair-rate inference, CAR and
//! the three visibility definitions, with first-order Poisson error
//! propagation throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A value with its one-sigma statistical uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    /// Poisson rate estimate from a raw count over a duration.
    pub fn from_counts(counts: f64, duration_s: f64) -> Self {
        Self { value: counts / duration_s, sigma: counts.max(0.0).sqrt() / duration_s }
    }
}

/// Dead-time corrected singles rate, non-paralyzable model:
/// `(s_raw - dark) / (1 - (s_raw - dark) * dead_time)`.
pub fn corrected_singles(s_raw_hz: Estimate, dark_hz: f64, dead_time_s: f64) -> Result<Estimate> {
    let net = s_raw_hz.value - dark_hz;
    let denom = 1.0 - net * dead_time_s;
    if denom <= 0.0 {
        return Err(Error::Saturation(s_raw_hz.value));
    }
    // d/ds [(s-d)/(1-(s-d)t)] = 1/(1-(s-d)t)^2.
    Ok(Estimate::new(net / denom, s_raw_hz.sigma / (denom * denom)))
}

/// Accidental coincidence rate expected from two independent streams:
/// `S'_s * S'_i * tau_w`.
pub fn accidental_rate(s_prime_s: Estimate, s_prime_i: Estimate, tau_w_s: f64) -> Result<Estimate> {
    if s_prime_s.value < 0.0 || s_prime_i.value < 0.0 || tau_w_s < 0.0 {
        return Err(Error::InvalidParameter(
            "accidental rate needs nonnegative singles and window".into(),
        ));
    }
    let value = s_prime_s.value * s_prime_i.value * tau_w_s;
    let sigma = ((s_prime_i.value * tau_w_s * s_prime_s.sigma).powi(2)
        + (s_prime_s.value * tau_w_s * s_prime_i.sigma).powi(2))
    .sqrt();
    Ok(Estimate::new(value, sigma))
}

/// True coincidence rate `C_meas - A_h`. May be slightly negative from
/// noise; preserved (not clamped) so downstream fits stay unbiased.
pub fn true_coincidences(c_meas: Estimate, a_h: Estimate) -> Estimate {
    Estimate::new(c_meas.value - a_h.value, c_meas.sigma.hypot(a_h.sigma))
}

/// Heralding efficiencies `eta_s = C_true / S'_i`, `eta_i = C_true / S'_s`.
pub fn heralding_efficiencies(
    c_true: Estimate,
    s_prime_s: Estimate,
    s_prime_i: Estimate,
) -> Result<(Estimate, Estimate)> {
    if s_prime_s.value <= 0.0 || s_prime_i.value <= 0.0 {
        return Err(Error::DivisionByZero("heralding efficiency needs nonzero singles".into()));
    }
    let ratio = |num: Estimate, den: Estimate| {
        let value = num.value / den.value;
        let sigma = ((num.sigma / den.value).powi(2)
            + (num.value * den.sigma / (den.value * den.value)).powi(2))
        .sqrt();
        Estimate::new(value, sigma)
    };
    Ok((ratio(c_true, s_prime_i), ratio(c_true, s_prime_s)))
}

/// Internal pair rate `R_pair = C_true / (eta_s * eta_i)`.
pub fn inferred_pair_rate(c_true: Estimate, eta_s: Estimate, eta_i: Estimate) -> Result<Estimate> {
    if eta_s.value <= 0.0 || eta_i.value <= 0.0 {
        return Err(Error::DivisionByZero("pair-rate inference needs nonzero efficiencies".into()));
    }
    let value = c_true.value / (eta_s.value * eta_i.value);
    let rel = (c_true.sigma / c_true.value.abs().max(f64::MIN_POSITIVE)).powi(2)
        + (eta_s.sigma / eta_s.value).powi(2)
        + (eta_i.sigma / eta_i.value).powi(2);
    Ok(Estimate::new(value, value.abs() * rel.sqrt()))
}

/// Coincidence-to-accidental ratio; an exactly zero accidental rate has no
/// numeric CAR and is flagged instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CarRatio {
    Finite(Estimate),
    Infinite,
}

impl CarRatio {
    /// Numeric view for tables: infinity for the flagged case.
    pub fn as_f64(&self) -> f64 {
        match self {
            CarRatio::Finite(e) => e.value,
            CarRatio::Infinite => f64::INFINITY,
        }
    }
}

/// `CAR = C_true / A_h`.
pub fn car(c_true: Estimate, a_h: Estimate) -> CarRatio {
    if a_h.value == 0.0 {
        return CarRatio::Infinite;
    }
    let value = c_true.value / a_h.value;
    let rel = (c_true.sigma / c_true.value.abs().max(f64::MIN_POSITIVE)).powi(2)
        + (a_h.sigma / a_h.value).powi(2);
    CarRatio::Finite(Estimate::new(value, value.abs() * rel.sqrt()))
}

/// Raw fringe visibility `(C_max - C_min) / (C_max + C_min)`.
pub fn visibility_raw(c_max: Estimate, c_min: Estimate) -> Result<Estimate> {
    if c_min.value < 0.0 || c_max.value < c_min.value {
        return Err(Error::InvalidParameter(format!(
            "visibility needs c_max >= c_min >= 0, got ({}, {})",
            c_max.value, c_min.value
        )));
    }
    let sum = c_max.value + c_min.value;
    if sum <= 0.0 {
        return Err(Error::UndefinedVisibility("both extrema are zero".into()));
    }
    let value = (c_max.value - c_min.value) / sum;
    // dV/dmax = 2 min / sum^2, dV/dmin = -2 max / sum^2.
    let sigma = ((2.0 * c_min.value * c_max.sigma).powi(2)
        + (2.0 * c_max.value * c_min.sigma).powi(2))
    .sqrt()
        / (sum * sum);
    Ok(Estimate::new(value, sigma))
}

/// Background-corrected visibility: subtract the accidental counts in the
/// window from each extremum first (the min clamped at zero).
pub fn visibility_net(c_max: Estimate, c_min: Estimate, a_window: Estimate) -> Result<Estimate> {
    if c_max.value <= a_window.value {
        return Err(Error::UndefinedVisibility(
            "maximum does not exceed the accidental level".into(),
        ));
    }
    let max_net = Estimate::new(c_max.value - a_window.value, c_max.sigma.hypot(a_window.sigma));
    let min_net = if c_min.value > a_window.value {
        Estimate::new(c_min.value - a_window.value, c_min.sigma.hypot(a_window.sigma))
    } else {
        Estimate::new(0.0, c_min.sigma.hypot(a_window.sigma))
    };
    visibility_raw(max_net, min_net)
}

/// Everything the analysis derives from one acquisition.
///
/// The `*_windowed` efficiencies and pair rate apply the textbook
/// formulas verbatim to the windowed coincidence rate, so they absorb the
/// analyzer path acceptance and the finite coincidence window. The
/// corrected variants divide out the known apparatus acceptance
/// (`path_pair_acceptance * window_acceptance`), the analyzer singles
/// acceptance, and both channels' dead-time survival, recovering the
/// physical per-arm efficiencies and internal pair rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub duration_s: f64,
    pub tau_w_s: f64,
    pub s_prime_s_hz: Estimate,
    pub s_prime_i_hz: Estimate,
    pub a_h_hz: Estimate,
    pub c_meas_hz: Estimate,
    pub c_true_hz: Estimate,
    pub c_true_negative: bool,
    pub eta_s_windowed: Estimate,
    pub eta_i_windowed: Estimate,
    pub eta_s_corrected: Estimate,
    pub eta_i_corrected: Estimate,
    pub r_pair_windowed_hz: Estimate,
    pub r_pair_corrected_hz: Estimate,
    pub car: CarRatio,
    /// Fraction of the central peak inside the coincidence window.
    pub window_acceptance: f64,
    /// Phase-averaged probability that a pair lands a central-window
    /// coincidence before arm losses (1/8 for the analyzer layout).
    pub path_pair_acceptance: f64,
    /// Per-photon analyzer acceptance entering each singles rate (1/2
    /// for unit long-path transmission, (1 + t_long)/4 in general).
    pub path_single_acceptance_s: f64,
    pub path_single_acceptance_i: f64,
    /// Non-paralyzable survival of each channel, `1 - m * tau_dead`.
    pub dead_time_survival_s: f64,
    pub dead_time_survival_i: f64,
}

/// Raw ingredients for [`build_report`].
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs {
    pub duration_s: f64,
    /// Measured (uncorrected) singles rates.
    pub s_raw_s_hz: f64,
    pub s_raw_i_hz: f64,
    pub dark_s_hz: f64,
    pub dark_i_hz: f64,
    pub dead_time_s: f64,
    /// Counts in the coincidence window.
    pub c_meas_counts: f64,
    /// Coincidence window width (tau_w).
    pub tau_w_s: f64,
    pub window_acceptance: f64,
    pub path_pair_acceptance: f64,
    pub path_single_acceptance_s: f64,
    pub path_single_acceptance_i: f64,
}

/// Runs the full correction chain on one acquisition's counts.
pub fn build_report(inp: &ReportInputs) -> Result<AnalysisReport> {
    let s_raw_s = Estimate::from_counts(inp.s_raw_s_hz * inp.duration_s, inp.duration_s);
    let s_raw_i = Estimate::from_counts(inp.s_raw_i_hz * inp.duration_s, inp.duration_s);
    let s_prime_s = corrected_singles(s_raw_s, inp.dark_s_hz, inp.dead_time_s)?;
    let s_prime_i = corrected_singles(s_raw_i, inp.dark_i_hz, inp.dead_time_s)?;
    let a_h = accidental_rate(s_prime_s, s_prime_i, inp.tau_w_s)?;
    let c_meas = Estimate::from_counts(inp.c_meas_counts, inp.duration_s);
    let c_true = true_coincidences(c_meas, a_h);
    let (eta_s_w, eta_i_w) = heralding_efficiencies(c_true, s_prime_s, s_prime_i)?;
    let r_pair_w = if eta_s_w.value > 0.0 && eta_i_w.value > 0.0 {
        inferred_pair_rate(c_true, eta_s_w, eta_i_w)?
    } else {
        Estimate::new(0.0, 0.0)
    };

    // Acceptance- and dead-time-corrected variants. Survival factors are
    // exact for Poisson streams: 1 - measured_rate * tau_dead.
    let surv_s = 1.0 - inp.s_raw_s_hz * inp.dead_time_s;
    let surv_i = 1.0 - inp.s_raw_i_hz * inp.dead_time_s;
    if surv_s <= 0.0 || surv_i <= 0.0 {
        return Err(Error::Saturation(inp.s_raw_s_hz.max(inp.s_raw_i_hz)));
    }
    let pair_accept = inp.path_pair_acceptance * inp.window_acceptance;
    if pair_accept <= 0.0 || inp.path_single_acceptance_s <= 0.0 || inp.path_single_acceptance_i <= 0.0
    {
        return Err(Error::InvalidParameter("acceptance factors must be > 0".into()));
    }
    let scale = |e: Estimate, k: f64| Estimate::new(e.value * k, e.sigma * k);
    let c_corr = scale(c_true, 1.0 / (pair_accept * surv_s * surv_i));
    let s_phys_s = scale(s_prime_s, 1.0 / inp.path_single_acceptance_s);
    let s_phys_i = scale(s_prime_i, 1.0 / inp.path_single_acceptance_i);
    let (eta_s_c, eta_i_c) = heralding_efficiencies(c_corr, s_phys_s, s_phys_i)?;
    let r_pair_c = if eta_s_c.value > 0.0 && eta_i_c.value > 0.0 {
        inferred_pair_rate(c_corr, eta_s_c, eta_i_c)?
    } else {
        Estimate::new(0.0, 0.0)
    };

    Ok(AnalysisReport {
        duration_s: inp.duration_s,
        tau_w_s: inp.tau_w_s,
        s_prime_s_hz: s_prime_s,
        s_prime_i_hz: s_prime_i,
        a_h_hz: a_h,
        c_meas_hz: c_meas,
        c_true_hz: c_true,
        c_true_negative: c_true.value < 0.0,
        eta_s_windowed: eta_s_w,
        eta_i_windowed: eta_i_w,
        eta_s_corrected: eta_s_c,
        eta_i_corrected: eta_i_c,
        r_pair_windowed_hz: r_pair_w,
        r_pair_corrected_hz: r_pair_c,
        car: car(c_true, a_h),
        window_acceptance: inp.window_acceptance,
        path_pair_acceptance: inp.path_pair_acceptance,
        path_single_acceptance_s: inp.path_single_acceptance_s,
        path_single_acceptance_i: inp.path_single_acceptance_i,
        dead_time_survival_s: surv_s,
        dead_time_survival_i: surv_i,
    })
}
