//! Physical configuration of the source, analyzers and detectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complete physical parameter set. One record drives both the Monte-Carlo
/// simulator and the closed-form expectations, so the two can be compared
/// point by point.
///
/// Units are carried in the field names: `_mw` milliwatts, `_ps` picoseconds,
/// `_hz` counts or cycles per second, `_rad` radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    /// Fundamental pump power at the source input.
    pub pump_power_mw: f64,
    /// Pair-generation coefficient kappa in pairs/s/mW^2; the internal pair
    /// rate is `kappa * P^2`.
    pub pair_coeff_per_mw2: f64,
    /// Intrinsic two-photon interference visibility V0 in [0, 1].
    pub intrinsic_visibility: f64,
    /// Interferometer path-delay imbalance (short vs long arm).
    pub delta_t_ps: f64,
    /// Gaussian timing jitter of the signal detector (1 sigma).
    pub jitter_sigma_s_ps: f64,
    /// Gaussian timing jitter of the idler detector (1 sigma).
    pub jitter_sigma_i_ps: f64,
    /// One-photon transmission-and-detection probability of the signal arm,
    /// exclusive of the analyzer splitting loss (the path model owns that).
    pub eta_s: f64,
    /// Same for the idler arm.
    pub eta_i: f64,
    /// Signal detector dark-count rate.
    pub dark_rate_s_hz: f64,
    /// Idler detector dark-count rate.
    pub dark_rate_i_hz: f64,
    /// Non-paralyzable detector dead time (same for both detectors).
    pub dead_time_ps: f64,
    /// Time-to-digital converter quantization step.
    pub tdc_resolution_ps: u32,
    /// Static analyzer phase offset phi0.
    pub phase_offset_rad: f64,
    /// Passband of the wavelength-division filters (sets the single-photon
    /// coherence time).
    pub filter_bandwidth_hz: f64,
    /// Extra transmission of the signal analyzer's long arm, in (0, 1].
    /// 1.0 (the default) gives equal side peaks; lower values emulate
    /// unequal side-peak amplitudes from asymmetric path loss.
    #[serde(default = "default_unity")]
    pub long_path_transmission_s: f64,
    /// Same for the idler analyzer.
    #[serde(default = "default_unity")]
    pub long_path_transmission_i: f64,
}

fn default_unity() -> f64 {
    1.0
}

impl ExperimentParams {
    /// Calibrated headline operating point: 0.8 ns imbalance, 50 ps
    /// jitter, 50 ns dead time, 100 GHz filters, 4.8% arm efficiencies,
    /// V0 = 97.1%, 100/s darks. The pair coefficient is a calibration
    /// choice (it puts the coincidence-to-accidental ratio near 1e3 at
    /// 1 mW) rather than a measured value.
    pub fn paper() -> Self {
        Self {
            pump_power_mw: 1.7,
            pair_coeff_per_mw2: 2.0e6,
            intrinsic_visibility: 0.971,
            delta_t_ps: 800.0,
            jitter_sigma_s_ps: 50.0,
            jitter_sigma_i_ps: 50.0,
            eta_s: 0.048,
            eta_i: 0.048,
            dark_rate_s_hz: 100.0,
            dark_rate_i_hz: 100.0,
            dead_time_ps: 50_000.0,
            tdc_resolution_ps: 1,
            phase_offset_rad: 0.0,
            filter_bandwidth_hz: 1.0e11,
            long_path_transmission_s: 1.0,
            long_path_transmission_i: 1.0,
        }
    }

    /// Same parameters at a different pump power.
    pub fn with_pump_power(&self, power_mw: f64) -> Self {
        Self { pump_power_mw: power_mw, ..self.clone() }
    }

    /// Effective timing width of the coincidence peaks: quadrature sum of
    /// the two detector jitters. The few-ps biphoton width is neglected
    /// against the ~50 ps jitters.
    pub fn sigma_eff_ps(&self) -> f64 {
        self.jitter_sigma_s_ps.hypot(self.jitter_sigma_i_ps)
    }

    /// Internal pair-generation rate kappa * P^2.
    pub fn pair_rate_hz(&self) -> f64 {
        self.pair_coeff_per_mw2 * self.pump_power_mw * self.pump_power_mw
    }

    /// Checks every documented invariant, including the interferometric
    /// regime requirement that the imbalance dwarf the biphoton timing
    /// width (delta_t > 10 * sigma_eff), without which the three
    /// coincidence peaks are not separable.
    pub fn validate(&self) -> Result<()> {
        fn nonneg(name: &str, v: f64) -> Result<()> {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
            Ok(())
        }
        nonneg("pump_power_mw", self.pump_power_mw)?;
        nonneg("pair_coeff_per_mw2", self.pair_coeff_per_mw2)?;
        nonneg("jitter_sigma_s_ps", self.jitter_sigma_s_ps)?;
        nonneg("jitter_sigma_i_ps", self.jitter_sigma_i_ps)?;
        nonneg("dark_rate_s_hz", self.dark_rate_s_hz)?;
        nonneg("dark_rate_i_hz", self.dark_rate_i_hz)?;
        nonneg("dead_time_ps", self.dead_time_ps)?;
        nonneg("filter_bandwidth_hz", self.filter_bandwidth_hz)?;
        if !(0.0..=1.0).contains(&self.intrinsic_visibility) {
            return Err(Error::InvalidParameter(format!(
                "intrinsic_visibility must be in [0, 1], got {}",
                self.intrinsic_visibility
            )));
        }
        for (name, eta) in [
            ("eta_s", self.eta_s),
            ("eta_i", self.eta_i),
            ("long_path_transmission_s", self.long_path_transmission_s),
            ("long_path_transmission_i", self.long_path_transmission_i),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be in (0, 1], got {eta}"
                )));
            }
        }
        if !(self.delta_t_ps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_t_ps must be > 0, got {}",
                self.delta_t_ps
            )));
        }
        if self.tdc_resolution_ps == 0 {
            return Err(Error::InvalidParameter("tdc_resolution_ps must be > 0".into()));
        }
        if !self.phase_offset_rad.is_finite() {
            return Err(Error::InvalidParameter("phase_offset_rad must be finite".into()));
        }
        if self.delta_t_ps <= 10.0 * self.sigma_eff_ps() {
            return Err(Error::InvalidParameter(format!(
                "delta_t_ps = {} must exceed 10x the biphoton timing width {:.3} ps",
                self.delta_t_ps,
                self.sigma_eff_ps()
            )));
        }
        Ok(())
    }
}
