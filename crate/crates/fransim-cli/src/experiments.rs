//! Experiment orchestration: each runner simulates (or loads) time-tag
//! data, feeds the analysis chain, fits the relevant model, and persists
//! plot-ready outputs into the run directory.
//!
//! Scan points are independent jobs executed in parallel up to the
//! configured worker limit; per-point seeds derive from the master seed
//! and the point index alone, and files are written by a single collector
//! in grid order, so outputs are byte-identical for any worker count.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use fransim::coincidence::{build_histogram, integrate_window, singles_rate_hz, CoincidenceHistogram};
use fransim::error::{Error, Result};
use fransim::estimators::{
    build_report, visibility_net, visibility_raw, AnalysisReport, Estimate, ReportInputs,
};
use fransim::fit::{fit_fringe, fit_powerlaw, fit_shg, FitResult};
use fransim::params::ExperimentParams;
use fransim::physics::{shg_response_mw, window_acceptance};
use fransim::rng::SimRng;
use fransim::sim::{simulate, subseed, Stage, TimeTagStream};
use fransim::tagfile::{read_timetags, write_timetags};

use crate::config::RunConfig;
use crate::output;

/// One fringe sample: integrated central-window counts at one phase,
/// plus the phase-independent side-peak windows kept as a baseline
/// reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringePoint {
    pub phase_rad: f64,
    pub counts: u64,
    /// Expected accidental counts inside the window over this point's
    /// acquisition (singles-product estimate).
    pub accidental_counts: f64,
    pub duration_s: f64,
    /// Counts in the window at -delta_t (signal-short / idler-long peak).
    pub side_sl_counts: u64,
    /// Counts in the window at +delta_t.
    pub side_ls_counts: u64,
}

fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

/// Central-window analysis of one simulated or loaded point.
fn analyze_streams(
    cfg: &RunConfig,
    params: &ExperimentParams,
    sig: &TimeTagStream,
    idl: &TimeTagStream,
    path_pair_acceptance: f64,
) -> Result<(AnalysisReport, CoincidenceHistogram, u64)> {
    let hist = build_histogram(
        sig,
        idl,
        -cfg.hist_half_range_ps,
        cfg.hist_half_range_ps,
        cfg.bin_width_ps,
        cfg.duration_s,
    )?;
    let c_meas = integrate_window(&hist, 0, cfg.window_half_ps)?;
    let report = build_report(&ReportInputs {
        duration_s: cfg.duration_s,
        s_raw_s_hz: singles_rate_hz(sig, cfg.duration_s)?,
        s_raw_i_hz: singles_rate_hz(idl, cfg.duration_s)?,
        dark_s_hz: params.dark_rate_s_hz,
        dark_i_hz: params.dark_rate_i_hz,
        dead_time_s: params.dead_time_ps * 1e-12,
        c_meas_counts: c_meas as f64,
        tau_w_s: 2.0 * cfg.window_half_ps as f64 * 1e-12,
        window_acceptance: window_acceptance(cfg.window_half_ps as f64, params.sigma_eff_ps()),
        path_pair_acceptance,
        path_single_acceptance_s: 0.25 * (1.0 + params.long_path_transmission_s),
        path_single_acceptance_i: 0.25 * (1.0 + params.long_path_transmission_i),
    })?;
    Ok((report, hist, c_meas))
}

/// Nearest window center to `target` whose edges land on bin boundaries.
fn aligned_center(cfg: &RunConfig, target_ps: f64) -> i64 {
    let base = -cfg.hist_half_range_ps + cfg.window_half_ps;
    base + ((target_ps - base as f64) / cfg.bin_width_ps as f64).round() as i64 * cfg.bin_width_ps
}

/// Phase-averaged central-window pair acceptance over an explicit grid:
/// mean of (1 + V0 cos(phi + phi0)) / 8. Symmetric grids average to
/// exactly 1/8 independent of V0.
fn mean_pair_acceptance(params: &ExperimentParams, phases: &[f64]) -> f64 {
    let v0 = params.intrinsic_visibility;
    let t_both = 0.5 * (1.0 + params.long_path_transmission_s * params.long_path_transmission_i);
    phases
        .iter()
        .map(|&phi| (1.0 + v0 * (phi + params.phase_offset_rad).cos()) / 8.0 * t_both)
        .sum::<f64>()
        / phases.len() as f64
}

pub struct SimulateOutput {
    pub signal_path: PathBuf,
    pub idler_path: PathBuf,
    pub signal_tags: usize,
    pub idler_tags: usize,
}

/// `simulate`: one acquisition at the first grid phase, written out as two
/// binary time-tag files.
pub fn run_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulateOutput> {
    cfg.validate()?;
    let phi = *cfg.phase_grid_rad.first().ok_or_else(|| {
        Error::Config("simulate needs at least one phase in phase_grid_rad".into())
    })?;
    let (sig, idl) =
        run_pool(cfg.workers, || simulate(&cfg.params, phi, cfg.duration_s, cfg.seed))?;
    std::fs::create_dir_all(out_dir)?;
    let signal_path = out_dir.join("signal.ftag");
    let idler_path = out_dir.join("idler.ftag");
    write_timetags(&sig, &signal_path)?;
    write_timetags(&idl, &idler_path)?;
    Ok(SimulateOutput {
        signal_path,
        idler_path,
        signal_tags: sig.len(),
        idler_tags: idl.len(),
    })
}

pub struct AnalyzeOutput {
    pub report: AnalysisReport,
    pub histogram: CoincidenceHistogram,
}

/// `analyze`: correlate two externally supplied tag files and run the full
/// estimator chain. Produces the same report as the in-memory pipeline on
/// identical data.
pub fn run_analyze(cfg: &RunConfig, out_dir: &Path) -> Result<AnalyzeOutput> {
    cfg.validate()?;
    let sig = read_timetags(Path::new(cfg.signal_path.as_deref().unwrap()))?;
    let idl = read_timetags(Path::new(cfg.idler_path.as_deref().unwrap()))?;
    // External data carries no phase tag; report with the phase-averaged
    // analyzer acceptance.
    let t_both =
        0.5 * (1.0 + cfg.params.long_path_transmission_s * cfg.params.long_path_transmission_i);
    let (report, histogram, _) = analyze_streams(cfg, &cfg.params, &sig, &idl, t_both / 8.0)?;
    std::fs::create_dir_all(out_dir)?;
    output::write_histogram_csv(&out_dir.join("histogram.csv"), &histogram)?;
    output::write_report_file(&out_dir.join("report.txt"), &report)?;
    Ok(AnalyzeOutput { report, histogram })
}

pub struct PhaseScanOutput {
    pub points: Vec<FringePoint>,
    pub reports: Vec<AnalysisReport>,
    /// Aggregate over the whole grid (summed counts), used for the
    /// headline efficiency and pair-rate numbers.
    pub aggregate: AnalysisReport,
    pub fit: FitResult,
    pub v_raw: Estimate,
    pub v_net: Estimate,
    pub v_fit: Estimate,
}

/// `phase_scan`: simulate the fringe over the configured grid, fit the
/// sinusoid, and emit the three visibility figures.
pub fn run_phase_scan(cfg: &RunConfig, out_dir: &Path) -> Result<PhaseScanOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    struct Point {
        fringe: FringePoint,
        report: AnalysisReport,
        s_counts: u64,
        i_counts: u64,
    }

    let points: Vec<Result<Point>> = run_pool(cfg.workers, || {
        cfg.phase_grid_rad
            .par_iter()
            .enumerate()
            .map(|(k, &phi)| {
                let seed = subseed(cfg.seed, Stage::Scan, 0, k as u64);
                let (sig, idl) = simulate(&cfg.params, phi, cfg.duration_s, seed)?;
                let t_both = 0.5
                    * (1.0
                        + cfg.params.long_path_transmission_s
                            * cfg.params.long_path_transmission_i);
                let (report, hist, c_meas) =
                    analyze_streams(cfg, &cfg.params, &sig, &idl, t_both / 8.0)?;
                let sl_center = aligned_center(cfg, -cfg.params.delta_t_ps);
                let ls_center = aligned_center(cfg, cfg.params.delta_t_ps);
                let side_sl_counts = integrate_window(&hist, sl_center, cfg.window_half_ps)?;
                let side_ls_counts = integrate_window(&hist, ls_center, cfg.window_half_ps)?;
                Ok(Point {
                    fringe: FringePoint {
                        phase_rad: phi,
                        counts: c_meas,
                        accidental_counts: report.a_h_hz.value * cfg.duration_s,
                        duration_s: cfg.duration_s,
                        side_sl_counts,
                        side_ls_counts,
                    },
                    report,
                    s_counts: sig.len() as u64,
                    i_counts: idl.len() as u64,
                })
            })
            .collect()
    });
    let points: Vec<Point> = points.into_iter().collect::<Result<_>>()?;

    let fringe: Vec<FringePoint> = points.iter().map(|p| p.fringe).collect();
    let reports: Vec<AnalysisReport> = points.iter().map(|p| p.report.clone()).collect();
    // Persist the scan data before fitting, so a failed fit still leaves
    // the measurements on disk.
    output::write_fringe_csv(&out_dir.join("fringe.csv"), &fringe)?;
    output::write_points_csv(
        &out_dir.join("points.csv"),
        "phase_rad",
        &cfg.phase_grid_rad,
        &reports,
    )?;

    // Scan-level visibilities: raw extrema, accidental-subtracted extrema,
    // and the sinusoidal fit on the raw fringe.
    let imax = (0..fringe.len()).max_by_key(|&k| fringe[k].counts).unwrap();
    let imin = (0..fringe.len()).min_by_key(|&k| fringe[k].counts).unwrap();
    let as_rate =
        |p: &FringePoint| Estimate::from_counts(p.counts as f64, p.duration_s);
    let v_raw = visibility_raw(as_rate(&fringe[imax]), as_rate(&fringe[imin]))?;
    let v_net = visibility_net(
        as_rate(&fringe[imax]),
        as_rate(&fringe[imin]),
        Estimate::new(fringe[imax].accidental_counts / fringe[imax].duration_s, 0.0),
    )?;

    let phases: Vec<f64> = fringe.iter().map(|p| p.phase_rad).collect();
    let counts: Vec<f64> = fringe.iter().map(|p| p.counts as f64).collect();
    let errors: Vec<f64> = counts.iter().map(|&c| c.max(1.0).sqrt()).collect();
    let fit = fit_fringe(&phases, &counts, &errors)?;
    if !fit.converged {
        return Err(Error::NonConvergence("fringe fit hit the iteration limit".into()));
    }
    let v_fit = fit.estimate("v");

    // Aggregate report over the whole scan, with the acceptance averaged
    // along the fitted fringe so asymmetric grids stay unbiased.
    let mean_cos = phases
        .iter()
        .map(|&p| (fit.value("alpha") * p + fit.value("phi0")).cos())
        .sum::<f64>()
        / phases.len() as f64;
    let total_duration = cfg.duration_s * points.len() as f64;
    let aggregate = build_report(&ReportInputs {
        duration_s: total_duration,
        s_raw_s_hz: points.iter().map(|p| p.s_counts).sum::<u64>() as f64 / total_duration,
        s_raw_i_hz: points.iter().map(|p| p.i_counts).sum::<u64>() as f64 / total_duration,
        dark_s_hz: cfg.params.dark_rate_s_hz,
        dark_i_hz: cfg.params.dark_rate_i_hz,
        dead_time_s: cfg.params.dead_time_ps * 1e-12,
        c_meas_counts: fringe.iter().map(|p| p.counts).sum::<u64>() as f64,
        tau_w_s: 2.0 * cfg.window_half_ps as f64 * 1e-12,
        window_acceptance: window_acceptance(
            cfg.window_half_ps as f64,
            cfg.params.sigma_eff_ps(),
        ),
        path_pair_acceptance: (1.0 + v_fit.value * mean_cos) / 8.0
            * (0.5
                * (1.0
                    + cfg.params.long_path_transmission_s * cfg.params.long_path_transmission_i)),
        path_single_acceptance_s: 0.25 * (1.0 + cfg.params.long_path_transmission_s),
        path_single_acceptance_i: 0.25 * (1.0 + cfg.params.long_path_transmission_i),
    })?;

    output::write_fit_file(
        &out_dir.join("fit.txt"),
        &fit,
        &[("v_raw", v_raw), ("v_net", v_net), ("v_fit", v_fit)],
    )?;
    output::write_report_file(&out_dir.join("report.txt"), &aggregate)?;

    Ok(PhaseScanOutput { points: fringe, reports, aggregate, fit, v_raw, v_net, v_fit })
}

/// One power step of a sweep.
pub struct PowerPoint {
    pub power_mw: f64,
    pub report: AnalysisReport,
    pub v_raw: Option<Estimate>,
    pub v_net: Option<Estimate>,
    pub v_fit: Option<Estimate>,
}

pub struct PowerSweepOutput {
    pub points: Vec<PowerPoint>,
    /// Log-log fit of the corrected pair rate versus pump power.
    pub pair_rate_fit: FitResult,
    /// Log-log fit of the CAR versus pump power.
    pub car_fit: FitResult,
}

/// One power step: simulate the configured analyzer phases at `power_mw`
/// and aggregate them into a single report (plus the visibility figures
/// the phase grid supports). Exposed so a single operating point can be
/// characterized without a full sweep.
pub fn analyze_power_point(
    cfg: &RunConfig,
    power_mw: f64,
    point_index: u64,
) -> Result<PowerPoint> {
    struct Cell {
        counts: u64,
        acc_counts: f64,
        s_counts: u64,
        i_counts: u64,
    }

    let phases = &cfg.sweep_phases_rad;
    let params = cfg.params.with_pump_power(power_mw);
    let cells: Vec<Cell> = phases
        .iter()
        .enumerate()
        .map(|(f_idx, &phi)| {
            let seed = subseed(cfg.seed, Stage::Scan, 1, (point_index << 32) | f_idx as u64);
            let (sig, idl) = simulate(&params, phi, cfg.duration_s, seed)?;
            let t_both = 0.5
                * (1.0 + params.long_path_transmission_s * params.long_path_transmission_i);
            let (rep, _h, c) = analyze_streams(cfg, &params, &sig, &idl, t_both / 8.0)?;
            Ok(Cell {
                counts: c,
                acc_counts: rep.a_h_hz.value * cfg.duration_s,
                s_counts: sig.len() as u64,
                i_counts: idl.len() as u64,
            })
        })
        .collect::<Result<_>>()?;

    // Aggregate the phase grid into one report for this power.
    let total_duration = cfg.duration_s * cells.len() as f64;
    let report = build_report(&ReportInputs {
        duration_s: total_duration,
        s_raw_s_hz: cells.iter().map(|c| c.s_counts).sum::<u64>() as f64 / total_duration,
        s_raw_i_hz: cells.iter().map(|c| c.i_counts).sum::<u64>() as f64 / total_duration,
        dark_s_hz: params.dark_rate_s_hz,
        dark_i_hz: params.dark_rate_i_hz,
        dead_time_s: params.dead_time_ps * 1e-12,
        c_meas_counts: cells.iter().map(|c| c.counts).sum::<u64>() as f64,
        tau_w_s: 2.0 * cfg.window_half_ps as f64 * 1e-12,
        window_acceptance: window_acceptance(cfg.window_half_ps as f64, params.sigma_eff_ps()),
        path_pair_acceptance: mean_pair_acceptance(&params, phases),
        path_single_acceptance_s: 0.25 * (1.0 + params.long_path_transmission_s),
        path_single_acceptance_i: 0.25 * (1.0 + params.long_path_transmission_i),
    })?;

    // Visibility across the phase grid, when it has extrema.
    let (v_raw, v_net, v_fit) = if cells.len() >= 2 {
        let imax = (0..cells.len()).max_by_key(|&k| cells[k].counts).unwrap();
        let imin = (0..cells.len()).min_by_key(|&k| cells[k].counts).unwrap();
        let rate = |c: &Cell| Estimate::from_counts(c.counts as f64, cfg.duration_s);
        let v_raw = visibility_raw(rate(&cells[imax]), rate(&cells[imin])).ok();
        let v_net = visibility_net(
            rate(&cells[imax]),
            rate(&cells[imin]),
            Estimate::new(cells[imax].acc_counts / cfg.duration_s, 0.0),
        )
        .ok();
        let v_fit = if cells.len() >= 8 {
            let counts: Vec<f64> = cells.iter().map(|c| c.counts as f64).collect();
            let errors: Vec<f64> = counts.iter().map(|&c| c.max(1.0).sqrt()).collect();
            fit_fringe(phases, &counts, &errors)
                .ok()
                .filter(|f| f.converged)
                .map(|f| f.estimate("v"))
        } else {
            None
        };
        (v_raw, v_net, v_fit)
    } else {
        (None, None, None)
    };

    Ok(PowerPoint { power_mw, report, v_raw, v_net, v_fit })
}

/// `power_sweep`: at each pump power, simulate the configured analyzer
/// phases, aggregate one report per power, and fit the two power laws.
/// Needs at least four powers so the log-log slopes are meaningful.
pub fn run_power_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<PowerSweepOutput> {
    cfg.validate()?;
    if cfg.power_grid_mw.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "power sweep needs >= 4 powers, got {}",
            cfg.power_grid_mw.len()
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let points: Vec<Result<PowerPoint>> = run_pool(cfg.workers, || {
        cfg.power_grid_mw
            .par_iter()
            .enumerate()
            .map(|(p_idx, &power)| analyze_power_point(cfg, power, p_idx as u64))
            .collect()
    });
    let points: Vec<PowerPoint> = points.into_iter().collect::<Result<_>>()?;

    output::write_sweep_csv(&out_dir.join("sweep.csv"), &points)?;

    let powers: Vec<f64> = points.iter().map(|p| p.power_mw).collect();
    let pair_rates: Vec<f64> =
        points.iter().map(|p| p.report.r_pair_corrected_hz.value).collect();
    let pair_rate_fit = fit_powerlaw(&powers, &pair_rates)?;
    let cars: Vec<f64> = points.iter().map(|p| p.report.car.as_f64()).collect();
    if cars.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(
            "CAR is not finite at every power; cannot fit the power law".into(),
        ));
    }
    let car_fit = fit_powerlaw(&powers, &cars)?;

    output::write_fit_file(&out_dir.join("pair_rate_fit.txt"), &pair_rate_fit, &[])?;
    output::write_fit_file(&out_dir.join("car_fit.txt"), &car_fit, &[])?;

    Ok(PowerSweepOutput { points, pair_rate_fit, car_fit })
}

pub struct ShgScanOutput {
    pub temperatures_c: Vec<f64>,
    pub powers_mw: Vec<f64>,
    pub fit: FitResult,
}

/// `shg_scan`: evaluate the sinc^2 tuning curve over the temperature grid
/// with configurable multiplicative noise, then fit it back.
pub fn run_shg_scan(cfg: &RunConfig, out_dir: &Path) -> Result<ShgScanOutput> {
    cfg.validate()?;
    let temps = &cfg.temperature_grid_c;
    let span = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - temps.iter().cloned().fold(f64::INFINITY, f64::min);
    if span < 2.0 * cfg.shg_fwhm_c {
        return Err(Error::InvalidParameter(format!(
            "temperature grid spans {span:.2} C; need >= 2x FWHM = {:.2} C",
            2.0 * cfg.shg_fwhm_c
        )));
    }
    let mut rng = SimRng::seed_from_u64(subseed(cfg.seed, Stage::Scan, 2, 0));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let powers: Vec<f64> = temps
        .iter()
        .map(|&t| {
            let clean = shg_response_mw(t, cfg.shg_t_peak_c, cfg.shg_fwhm_c, cfg.shg_p_max_mw);
            let factor = 1.0 + cfg.shg_noise_frac * noise.sample(&mut rng);
            (clean * factor).max(0.0)
        })
        .collect();

    std::fs::create_dir_all(out_dir)?;
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("shg.csv"))?);
        writeln!(w, "temperature_c,shg_power_mw")?;
        for (t, p) in temps.iter().zip(&powers) {
            writeln!(w, "{t},{p}")?;
        }
        w.flush()?;
    }

    let fit = fit_shg(temps, &powers)?;
    if !fit.converged {
        return Err(Error::NonConvergence("sinc^2 fit hit the iteration limit".into()));
    }
    output::write_fit_file(&out_dir.join("shg_fit.txt"), &fit, &[])?;
    Ok(ShgScanOutput { temperatures_c: temps.clone(), powers_mw: powers, fit })
}
