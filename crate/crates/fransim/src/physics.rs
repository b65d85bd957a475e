//! Closed-form expectations for the interferometer experiment.
//!
//! Everything here is deterministic arithmetic over [`ExperimentParams`];
//! the Monte-Carlo simulator and the analysis pipeline are validated
//! against these expressions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ExperimentParams;

/// Half-maximum root of sinc^2: sinc(X_HALF)^2 = 1/2 with sinc(x) = sin(x)/x.
pub const SINC_SQ_HALF_MAX_X: f64 = 1.391_557_4;

/// Which pair of interferometer paths a photon pair took.
///
/// `SideSl` = signal short / idler long, `SideLs` = the reverse, `Central`
/// = both short or both long (the indistinguishable, interfering pair).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathCategory {
    SideSl,
    SideLs,
    Central,
}

/// Joint analyzer outcome for one photon pair: the path category plus
/// whether each photon exits the monitored output port. A photon whose
/// port flag is false leaves through the unmonitored port and is lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointPathOutcome {
    pub category: PathCategory,
    pub detect_s: bool,
    pub detect_i: bool,
}

/// Probability table for sampling [`JointPathOutcome`]s at one phase
/// setting.
///
/// Category probabilities are 1/4, 1/4, 1/2 (SL, LS, central). Side
/// categories route each photon to the monitored port independently with
/// probability 1/2. The central category carries the interference: with
/// `c = V0 * cos(phi + phi0)` the joint port probabilities are
/// `p_mm = p_xx = (1 + c)/4` and `p_mx = p_xm = (1 - c)/4` (m = monitored,
/// x = unmonitored). The single-photon marginals are exactly 1/2 at every
/// phase, so singles rates carry no fringe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPathTable {
    pub p_side_sl: f64,
    pub p_side_ls: f64,
    pub p_central: f64,
    /// Central-category joint port probabilities, in the order
    /// (monitored, monitored), (m, x), (x, m), (x, x).
    pub central_ports: [f64; 4],
}

impl JointPathTable {
    /// Marginal probability that the signal photon exits its monitored port.
    pub fn marginal_detect_s(&self) -> f64 {
        (self.p_side_sl + self.p_side_ls) * 0.5
            + self.p_central * (self.central_ports[0] + self.central_ports[1])
    }

    /// Marginal probability that the idler photon exits its monitored port.
    pub fn marginal_detect_i(&self) -> f64 {
        (self.p_side_sl + self.p_side_ls) * 0.5
            + self.p_central * (self.central_ports[0] + self.central_ports[2])
    }

    /// Probability that both photons exit monitored ports (joint over all
    /// categories); this is the coincidence acceptance before arm losses.
    pub fn joint_detect_both(&self) -> f64 {
        (self.p_side_sl + self.p_side_ls) * 0.25 + self.p_central * self.central_ports[0]
    }
}

/// Single-photon coherence time set by a filter of bandwidth `delta_nu_hz`:
/// `tau_c = 1 / (pi * delta_nu)`, returned in picoseconds.
pub fn coherence_time_ps(delta_nu_hz: f64) -> Result<f64> {
    if !(delta_nu_hz > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "filter bandwidth must be > 0 Hz, got {delta_nu_hz}"
        )));
    }
    Ok(1.0e12 / (std::f64::consts::PI * delta_nu_hz))
}

/// Internal pair rate kappa * P^2 in pairs/s.
pub fn expected_pair_rate_hz(params: &ExperimentParams) -> Result<f64> {
    params.validate()?;
    Ok(params.pair_rate_hz())
}

/// Builds the joint path/port probability table for one phase setting.
pub fn joint_path_table(v0: f64, phi: f64, phi0: f64) -> Result<JointPathTable> {
    if !(0.0..=1.0).contains(&v0) {
        return Err(Error::InvalidParameter(format!(
            "visibility must be in [0, 1], got {v0}"
        )));
    }
    let c = v0 * (phi + phi0).cos();
    let p_corr = (1.0 + c) / 4.0;
    let p_anti = (1.0 - c) / 4.0;
    Ok(JointPathTable {
        p_side_sl: 0.25,
        p_side_ls: 0.25,
        p_central: 0.5,
        central_ports: [p_corr, p_anti, p_anti, p_corr],
    })
}

/// Fraction of a Gaussian peak of width `sigma_ps` that falls inside a
/// window of half-width `half_width_ps` centered on the peak.
pub fn window_acceptance(half_width_ps: f64, sigma_ps: f64) -> f64 {
    if half_width_ps <= 0.0 {
        return 0.0;
    }
    if sigma_ps <= 0.0 {
        return 1.0;
    }
    libm::erf(half_width_ps / (sigma_ps * std::f64::consts::SQRT_2))
}

/// Non-paralyzable throughput factor: the fraction of a Poisson stream of
/// rate `rate_hz` that survives a dead time of `dead_time_s`.
pub fn dead_time_survival(rate_hz: f64, dead_time_s: f64) -> f64 {
    1.0 / (1.0 + rate_hz * dead_time_s)
}

/// Expected per-channel rate of photon detections before darks and dead
/// time: each pair photon reaches its monitored port with probability
/// 1/2, survives the arm with probability eta, and carries the long-path
/// transmission when routed through the long arm (half the time), giving
/// `R * eta * (1 + t_long) / 4`.
pub fn expected_photon_singles_hz(params: &ExperimentParams, signal: bool) -> f64 {
    let (eta, t_long) = if signal {
        (params.eta_s, params.long_path_transmission_s)
    } else {
        (params.eta_i, params.long_path_transmission_i)
    };
    0.25 * eta * (1.0 + t_long) * params.pair_rate_hz()
}

/// Expected measured singles rate including darks and dead-time loading.
pub fn expected_measured_singles_hz(params: &ExperimentParams, signal: bool) -> f64 {
    let dark = if signal { params.dark_rate_s_hz } else { params.dark_rate_i_hz };
    let pre = expected_photon_singles_hz(params, signal) + dark;
    pre * dead_time_survival(pre, params.dead_time_ps * 1e-12)
}

/// Analytic expectation of a coincidence histogram, with per-bin breakdown.
///
/// Bin `k` spans `[lag_min + k*bin_width, lag_min + (k+1)*bin_width)` in
/// the lag convention `tau = t_signal - t_idler`; the SL peak (signal
/// short, idler long) therefore sits at `-delta_t`.
#[derive(Debug, Clone)]
pub struct ExpectedHistogram {
    pub bin_width_ps: f64,
    pub lag_min_ps: f64,
    /// Per-bin expected counts for each component.
    pub sl: Vec<f64>,
    pub ls: Vec<f64>,
    pub central: Vec<f64>,
    pub accidental: Vec<f64>,
}

impl ExpectedHistogram {
    pub fn n_bins(&self) -> usize {
        self.sl.len()
    }

    pub fn bin_edges_ps(&self) -> Vec<f64> {
        (0..=self.n_bins())
            .map(|k| self.lag_min_ps + k as f64 * self.bin_width_ps)
            .collect()
    }

    /// Total expected counts per bin (sum of the four components).
    pub fn expected_counts(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|k| self.sl[k] + self.ls[k] + self.central[k] + self.accidental[k])
            .collect()
    }
}

fn gaussian_bin_integral(total: f64, center: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if sigma <= 0.0 {
        // Degenerate peak: all mass at `center`.
        return if center >= lo && center < hi { total } else { 0.0 };
    }
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 * total * (libm::erf((hi - center) / s) - libm::erf((lo - center) / s))
}

/// Expected coincidence histogram for an acquisition of `duration_s` at
/// phase `phi`, binned at `bin_width_ps` over `[-lag_range_ps, +lag_range_ps)`.
///
/// Peak integrals: each side peak carries `R * eta_s * eta_i * T / 16`,
/// the central peak `R * eta_s * eta_i * T * (1 + V0 cos(phi+phi0)) / 8`,
/// spread as Gaussians of width `sigma_eff`. A flat accidental floor of
/// `S_s * S_i * bin_width * T` per bin uses the measured (dead-time
/// loaded) singles rates, and the peaks carry both channels' survival
/// factors, so the expectation matches what a dead-time-filtered
/// acquisition actually records.
pub fn expected_histogram(
    params: &ExperimentParams,
    phi: f64,
    duration_s: f64,
    bin_width_ps: f64,
    lag_range_ps: f64,
) -> Result<ExpectedHistogram> {
    params.validate()?;
    if !(bin_width_ps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bin width must be > 0, got {bin_width_ps}"
        )));
    }
    let sigma = params.sigma_eff_ps();
    if lag_range_ps < params.delta_t_ps + 5.0 * sigma {
        return Err(Error::InvalidParameter(format!(
            "lag range {lag_range_ps} ps too small to contain the side peaks \
             (need >= delta_t + 5 sigma = {} ps)",
            params.delta_t_ps + 5.0 * sigma
        )));
    }
    let n_bins = (2.0 * lag_range_ps / bin_width_ps).round() as usize;
    let lag_min = -lag_range_ps;

    let rate = params.pair_rate_hz();
    let pair_eta = params.eta_s * params.eta_i;
    let table = joint_path_table(params.intrinsic_visibility, phi, params.phase_offset_rad)?;
    let surv_s = dead_time_survival(
        expected_photon_singles_hz(params, true) + params.dark_rate_s_hz,
        params.dead_time_ps * 1e-12,
    );
    let surv_i = dead_time_survival(
        expected_photon_singles_hz(params, false) + params.dark_rate_i_hz,
        params.dead_time_ps * 1e-12,
    );
    let pair_surv = surv_s * surv_i;

    // Integrals of the three true peaks over the whole lag axis. The SL
    // peak (signal short / idler long) carries the idler's long-path
    // transmission and vice versa; the central peak averages its SS and
    // LL halves.
    let (t_s, t_i) = (params.long_path_transmission_s, params.long_path_transmission_i);
    let sl_total = rate * pair_eta * duration_s * (t_i / 16.0) * pair_surv;
    let ls_total = rate * pair_eta * duration_s * (t_s / 16.0) * pair_surv;
    let central_total = rate
        * pair_eta
        * duration_s
        * 0.5
        * table.central_ports[0]
        * (0.5 * (1.0 + t_s * t_i))
        * pair_surv;

    let acc_per_bin = expected_measured_singles_hz(params, true)
        * expected_measured_singles_hz(params, false)
        * (bin_width_ps * 1e-12)
        * duration_s;

    let mut sl = Vec::with_capacity(n_bins);
    let mut ls = Vec::with_capacity(n_bins);
    let mut central = Vec::with_capacity(n_bins);
    let mut accidental = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        let lo = lag_min + k as f64 * bin_width_ps;
        let hi = lo + bin_width_ps;
        sl.push(gaussian_bin_integral(sl_total, -params.delta_t_ps, sigma, lo, hi));
        ls.push(gaussian_bin_integral(ls_total, params.delta_t_ps, sigma, lo, hi));
        central.push(gaussian_bin_integral(central_total, 0.0, sigma, lo, hi));
        accidental.push(acc_per_bin);
    }
    Ok(ExpectedHistogram { bin_width_ps, lag_min_ps: lag_min, sl, ls, central, accidental })
}

/// Default coincidence-window half-width: one 200 ps histogram bin.
pub const DEFAULT_WINDOW_HALF_PS: f64 = 100.0;

/// True-coincidence part of the fringe: the central-peak integral
/// `R * eta_s * eta_i * (1 + V0 cos(phi+phi0)) / 8`. The contrast of this
/// term over a phase scan is exactly V0.
pub fn expected_fringe_true_hz(params: &ExperimentParams, phi: f64) -> Result<f64> {
    params.validate()?;
    let table = joint_path_table(params.intrinsic_visibility, phi, params.phase_offset_rad)?;
    let t_both = 0.5 * (1.0 + params.long_path_transmission_s * params.long_path_transmission_i);
    Ok(params.pair_rate_hz() * params.eta_s * params.eta_i * 0.5 * table.central_ports[0] * t_both)
}

/// Expected central-window coincidence rate versus phase: the full
/// central-peak integral plus the accidental rate inside the default
/// +-100 ps window.
pub fn expected_fringe_hz(params: &ExperimentParams, phi: f64) -> Result<f64> {
    let central = expected_fringe_true_hz(params, phi)?;
    let singles_s = expected_photon_singles_hz(params, true) + params.dark_rate_s_hz;
    let singles_i = expected_photon_singles_hz(params, false) + params.dark_rate_i_hz;
    let acc = singles_s * singles_i * (2.0 * DEFAULT_WINDOW_HALF_PS * 1e-12);
    Ok(central + acc)
}

/// Central-window expectation with an explicit window and dead-time
/// loading: the Gaussian peak coverage of the window multiplies the true
/// part, and the accidental term uses the measured singles rates. This is
/// the sharp oracle for simulated, windowed fringe data.
pub fn expected_fringe_in_window_hz(
    params: &ExperimentParams,
    phi: f64,
    half_width_ps: f64,
) -> Result<f64> {
    params.validate()?;
    let table = joint_path_table(params.intrinsic_visibility, phi, params.phase_offset_rad)?;
    let surv = dead_time_survival(
        expected_photon_singles_hz(params, true) + params.dark_rate_s_hz,
        params.dead_time_ps * 1e-12,
    ) * dead_time_survival(
        expected_photon_singles_hz(params, false) + params.dark_rate_i_hz,
        params.dead_time_ps * 1e-12,
    );
    let coverage = window_acceptance(half_width_ps, params.sigma_eff_ps());
    let t_both = 0.5 * (1.0 + params.long_path_transmission_s * params.long_path_transmission_i);
    let central = params.pair_rate_hz()
        * params.eta_s
        * params.eta_i
        * 0.5
        * table.central_ports[0]
        * t_both
        * coverage
        * surv;
    let acc = expected_measured_singles_hz(params, true)
        * expected_measured_singles_hz(params, false)
        * (2.0 * half_width_ps * 1e-12);
    Ok(central + acc)
}

/// Second-harmonic output power versus crystal temperature:
/// `p_max * sinc^2(a * (T - t_peak))` with `a` chosen so the main lobe's
/// full width at half maximum equals `fwhm_c`.
pub fn shg_response_mw(temperature_c: f64, t_peak_c: f64, fwhm_c: f64, p_max_mw: f64) -> f64 {
    debug_assert!(fwhm_c > 0.0);
    let x = 2.0 * SINC_SQ_HALF_MAX_X / fwhm_c * (temperature_c - t_peak_c);
    let s = if x.abs() < 1e-9 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    p_max_mw * s * s
}

/// Inverse-square pump-power scaling of the coincidence-to-accidental
/// ratio, anchored at a reference point: `car_ref * (p_ref / p)^2`.
pub fn car_prediction(power_mw: f64, car_ref: f64, p_ref_mw: f64) -> f64 {
    debug_assert!(power_mw > 0.0 && car_ref > 0.0 && p_ref_mw > 0.0);
    car_ref * (p_ref_mw / power_mw).powi(2)
}
