//! Correlation of two time-tag streams into lag histograms.
//!
//! Lag convention: `tau = t_a - t_b` with half-open bins
//! `[edge, edge + width)`. Every ordered pair inside the lag range is
//! counted (multi-coincidence allowed, as in start-stop-free TDC
//! post-processing).

use crate::error::{Error, Result};
use crate::sim::TimeTagStream;

/// Binned counts of arrival-time differences over a symmetric lag range.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: i64,
    pub lag_min_ps: i64,
    pub lag_max_ps: i64,
    pub counts: Vec<u64>,
    /// Acquisition time the streams cover.
    pub duration_s: f64,
    pub singles_a: u64,
    pub singles_b: u64,
}

impl CoincidenceHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Center of bin `k` in picoseconds.
    pub fn bin_center_ps(&self, k: usize) -> f64 {
        self.lag_min_ps as f64 + (k as f64 + 0.5) * self.bin_width_ps as f64
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts every ordered pair with `t_a - t_b` in `[lag_min, lag_max)` via
/// a sorted two-pointer sliding window; single pass, O(N_a + N_b + matches).
pub fn build_histogram(
    a: &TimeTagStream,
    b: &TimeTagStream,
    lag_min_ps: i64,
    lag_max_ps: i64,
    bin_width_ps: i64,
    duration_s: f64,
) -> Result<CoincidenceHistogram> {
    if a.resolution_ps != b.resolution_ps {
        return Err(Error::Config(format!(
            "stream resolutions differ: {} ps vs {} ps",
            a.resolution_ps, b.resolution_ps
        )));
    }
    if bin_width_ps <= 0 {
        return Err(Error::InvalidParameter("bin width must be > 0".into()));
    }
    if lag_min_ps >= lag_max_ps || (lag_max_ps - lag_min_ps) % bin_width_ps != 0 {
        return Err(Error::InvalidParameter(format!(
            "lag range [{lag_min_ps}, {lag_max_ps}) must be a positive multiple of the bin width"
        )));
    }
    let n_bins = ((lag_max_ps - lag_min_ps) / bin_width_ps) as usize;
    let mut counts = vec![0u64; n_bins];

    let res = a.resolution_ps as i64;
    // Window of b-tags paired with tag ta: tb in (ta - lag_max, ta - lag_min].
    let mut lo = 0usize;
    let mut hi = 0usize;
    for &ta in &a.tags {
        let ta_ps = ta as i64 * res;
        while lo < b.tags.len() && (b.tags[lo] as i64 * res) <= ta_ps - lag_max_ps {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < b.tags.len() && (b.tags[hi] as i64 * res) <= ta_ps - lag_min_ps {
            hi += 1;
        }
        for &tb in &b.tags[lo..hi] {
            let lag = ta_ps - tb as i64 * res;
            counts[((lag - lag_min_ps) / bin_width_ps) as usize] += 1;
        }
    }

    Ok(CoincidenceHistogram {
        bin_width_ps,
        lag_min_ps,
        lag_max_ps,
        counts,
        duration_s,
        singles_a: a.tags.len() as u64,
        singles_b: b.tags.len() as u64,
    })
}

/// Sums the bins fully inside `[center - half_width, center + half_width]`.
/// The window must land exactly on bin edges; the canonical +-100 ps window
/// over 200 ps bins is exactly one bin, so no partial-bin weighting exists.
pub fn integrate_window(hist: &CoincidenceHistogram, center_ps: i64, half_width_ps: i64) -> Result<u64> {
    if half_width_ps < 0 {
        return Err(Error::InvalidParameter("window half-width must be >= 0".into()));
    }
    let lo = center_ps - half_width_ps;
    let hi = center_ps + half_width_ps;
    if lo < hist.lag_min_ps || hi > hist.lag_max_ps {
        return Err(Error::InvalidParameter(format!(
            "window [{lo}, {hi}] outside histogram range [{}, {})",
            hist.lag_min_ps, hist.lag_max_ps
        )));
    }
    if (lo - hist.lag_min_ps) % hist.bin_width_ps != 0 || (hi - hist.lag_min_ps) % hist.bin_width_ps != 0
    {
        return Err(Error::InvalidParameter(format!(
            "window [{lo}, {hi}] not aligned to bin edges (width {})",
            hist.bin_width_ps
        )));
    }
    let first = ((lo - hist.lag_min_ps) / hist.bin_width_ps) as usize;
    let last = ((hi - hist.lag_min_ps) / hist.bin_width_ps) as usize;
    Ok(hist.counts[first..last].iter().sum())
}

/// Mean counts per bin outside the exclusion zones, with its standard
/// error (Poisson, `sqrt(mean / n_bins)`). Callers must exclude all three
/// coincidence peaks for the result to estimate the accidental floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineEstimate {
    pub mean_counts_per_bin: f64,
    pub standard_error: f64,
    pub n_bins: usize,
}

pub fn estimate_baseline(
    hist: &CoincidenceHistogram,
    exclusions: &[(i64, i64)],
) -> Result<BaselineEstimate> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..hist.n_bins() {
        let lo = hist.lag_min_ps + k as i64 * hist.bin_width_ps;
        let hi = lo + hist.bin_width_ps;
        let excluded = exclusions
            .iter()
            .any(|&(center, half)| lo < center + half && hi > center - half);
        if !excluded {
            sum += hist.counts[k] as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter(
            "exclusion zones leave no baseline bins".into(),
        ));
    }
    let mean = sum / n as f64;
    Ok(BaselineEstimate {
        mean_counts_per_bin: mean,
        standard_error: (mean / n as f64).sqrt(),
        n_bins: n,
    })
}

/// Tag count divided by the acquisition duration.
pub fn singles_rate_hz(stream: &TimeTagStream, duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be > 0 s, got {duration_s}"
        )));
    }
    Ok(stream.tags.len() as f64 / duration_s)
}
