//! Run configuration: a flat JSON object whose keys carry explicit unit
//! suffixes. Missing keys fall back to the calibrated preset defaults;
//! unknown keys are rejected so typos cannot silently vanish.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fransim::error::{Error, Result};
use fransim::params::ExperimentParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Analyze,
    PhaseScan,
    PowerSweep,
    ShgScan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(flatten)]
    pub params: ExperimentParams,

    /// Phase grid for phase scans (and the single phase used by
    /// `simulate`, which takes the first entry).
    pub phase_grid_rad: Vec<f64>,
    /// Pump powers for power sweeps.
    pub power_grid_mw: Vec<f64>,
    /// Analyzer phases simulated at each power of a sweep.
    pub sweep_phases_rad: Vec<f64>,
    /// Crystal temperatures for SHG tuning scans.
    pub temperature_grid_c: Vec<f64>,

    /// Acquisition time per scan point.
    pub duration_s: f64,
    pub seed: u64,
    pub out_dir: String,
    /// Worker thread limit; 0 means the rayon default.
    pub workers: usize,

    /// Histogram bin width (also the coincidence window tau_w).
    pub bin_width_ps: i64,
    /// Coincidence-window half-width around zero lag.
    pub window_half_ps: i64,
    /// Histogram covers [-hist_half_range_ps, +hist_half_range_ps).
    pub hist_half_range_ps: i64,

    /// Input streams for `analyze`.
    pub signal_path: Option<String>,
    pub idler_path: Option<String>,

    /// SHG tuning-curve parameters for `shg_scan`.
    pub shg_t_peak_c: f64,
    pub shg_fwhm_c: f64,
    pub shg_p_max_mw: f64,
    /// Multiplicative Gaussian noise fraction applied to the scan.
    pub shg_noise_frac: f64,
}

impl RunConfig {
    /// Calibrated defaults: the 1.7 mW operating point, a 16-point phase
    /// scan over one period, a six-step power ladder, 200 ps bins with a
    /// +-100 ps window, and a 3.53 C-wide doubling-stage lobe.
    pub fn paper(experiment: ExperimentKind) -> Self {
        let n_phases = 16;
        RunConfig {
            experiment,
            params: ExperimentParams::paper(),
            phase_grid_rad: (0..n_phases)
                .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n_phases as f64)
                .collect(),
            power_grid_mw: vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0],
            sweep_phases_rad: vec![0.0, std::f64::consts::PI],
            temperature_grid_c: (0..49).map(|k| 44.5 - 6.0 + 0.25 * k as f64).collect(),
            duration_s: 30.0,
            seed: 20_260_808,
            out_dir: "out".into(),
            workers: 0,
            bin_width_ps: 200,
            window_half_ps: 100,
            hist_half_range_ps: 3100,
            signal_path: None,
            idler_path: None,
            shg_t_peak_c: 44.5,
            shg_fwhm_c: 3.53,
            shg_p_max_mw: 10.0,
            shg_noise_frac: 0.02,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let supplied: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not a JSON object: {e}")))?;
        // Start from the defaults and overlay the supplied keys, so partial
        // configs stay valid and unknown keys are caught.
        let defaults = serde_json::to_value(RunConfig::paper(ExperimentKind::PhaseScan))
            .expect("default config serializes");
        let mut merged = match defaults {
            serde_json::Value::Object(map) => map,
            _ => unreachable!(),
        };
        for (key, value) in supplied {
            if !merged.contains_key(&key) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
            merged.insert(key, value);
        }
        let cfg: RunConfig = serde_json::from_value(serde_json::Value::Object(merged))
            .map_err(|e| Error::Config(format!("bad config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be > 0".into()));
        }
        if self.bin_width_ps <= 0 || self.window_half_ps < 0 || self.hist_half_range_ps <= 0 {
            return Err(Error::Config("histogram geometry must be positive".into()));
        }
        match self.experiment {
            ExperimentKind::Simulate | ExperimentKind::PhaseScan => {
                if self.phase_grid_rad.is_empty() {
                    return Err(Error::Config("phase_grid_rad must not be empty".into()));
                }
            }
            ExperimentKind::PowerSweep => {
                if self.power_grid_mw.is_empty() {
                    return Err(Error::Config("power_grid_mw must not be empty".into()));
                }
                if self.sweep_phases_rad.is_empty() {
                    return Err(Error::Config("sweep_phases_rad must not be empty".into()));
                }
            }
            ExperimentKind::ShgScan => {
                if self.temperature_grid_c.is_empty() {
                    return Err(Error::Config("temperature_grid_c must not be empty".into()));
                }
            }
            ExperimentKind::Analyze => {
                if self.signal_path.is_none() || self.idler_path.is_none() {
                    return Err(Error::Config(
                        "analyze needs signal_path and idler_path".into(),
                    ));
                }
            }
        }
        if self.experiment == ExperimentKind::PhaseScan {
            let grid = &self.phase_grid_rad;
            if grid.len() >= 2 {
                if !grid.windows(2).all(|w| w[1] > w[0]) {
                    return Err(Error::Config(
                        "phase_grid_rad must be strictly increasing".into(),
                    ));
                }
                // The grid must cover one fringe period (unit phase scale
                // assumed); the mean step extends the span periodically.
                let span = grid.last().unwrap() - grid.first().unwrap();
                let coverage = span * grid.len() as f64 / (grid.len() as f64 - 1.0);
                if coverage < 0.99 * 2.0 * std::f64::consts::PI {
                    return Err(Error::Config(format!(
                        "phase grid covers {coverage:.2} rad; a scan needs a full 2 pi period"
                    )));
                }
            }
        }
        Ok(())
    }
}
