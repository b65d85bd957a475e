//! Deterministic plain-text outputs: CSV tables and flat key-value
//! reports. Floats are written with Rust's shortest round-trip
//! formatting, so identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fransim::coincidence::CoincidenceHistogram;
use fransim::error::Result;
use fransim::estimators::{AnalysisReport, CarRatio, Estimate};
use fransim::fit::FitResult;

use crate::experiments::{FringePoint, PowerPoint};

pub fn write_histogram_csv(path: &Path, hist: &CoincidenceHistogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "lag_ps,counts")?;
    for k in 0..hist.n_bins() {
        writeln!(w, "{},{}", hist.bin_center_ps(k), hist.counts[k])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fringe_csv(path: &Path, points: &[FringePoint]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "phase_rad,counts,accidentals,duration_s")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.phase_rad, p.counts, p.accidental_counts, p.duration_s)?;
    }
    w.flush()?;
    Ok(())
}

fn car_value(report: &AnalysisReport) -> f64 {
    report.car.as_f64()
}

pub fn write_sweep_csv(path: &Path, points: &[PowerPoint]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "power_mw,s_prime_s,s_prime_i,a_h,c_true,eta_s,eta_i,r_pair,car,v_raw,v_net,v_fit"
    )?;
    for p in points {
        let r = &p.report;
        let opt = |v: &Option<Estimate>| v.map(|e| e.value).unwrap_or(f64::NAN);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.power_mw,
            r.s_prime_s_hz.value,
            r.s_prime_i_hz.value,
            r.a_h_hz.value,
            r.c_true_hz.value,
            r.eta_s_corrected.value,
            r.eta_i_corrected.value,
            r.r_pair_corrected_hz.value,
            car_value(r),
            opt(&p.v_raw),
            opt(&p.v_net),
            opt(&p.v_fit),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_kv(w: &mut impl Write, key: &str, value: impl std::fmt::Display) -> std::io::Result<()> {
    writeln!(w, "{key} = {value}")
}

fn write_estimate(w: &mut impl Write, key: &str, e: Estimate) -> std::io::Result<()> {
    write_kv(w, key, e.value)?;
    write_kv(w, &format!("{key}_sigma"), e.sigma)
}

/// Flat key-value serialization of an [`AnalysisReport`].
pub fn write_report(w: &mut impl Write, report: &AnalysisReport) -> std::io::Result<()> {
    write_kv(w, "duration_s", report.duration_s)?;
    write_kv(w, "tau_w_s", report.tau_w_s)?;
    write_estimate(w, "s_prime_s_hz", report.s_prime_s_hz)?;
    write_estimate(w, "s_prime_i_hz", report.s_prime_i_hz)?;
    write_estimate(w, "a_h_hz", report.a_h_hz)?;
    write_estimate(w, "c_meas_hz", report.c_meas_hz)?;
    write_estimate(w, "c_true_hz", report.c_true_hz)?;
    write_kv(w, "c_true_negative", report.c_true_negative)?;
    write_estimate(w, "eta_s_windowed", report.eta_s_windowed)?;
    write_estimate(w, "eta_i_windowed", report.eta_i_windowed)?;
    write_estimate(w, "eta_s_corrected", report.eta_s_corrected)?;
    write_estimate(w, "eta_i_corrected", report.eta_i_corrected)?;
    write_estimate(w, "r_pair_windowed_hz", report.r_pair_windowed_hz)?;
    write_estimate(w, "r_pair_corrected_hz", report.r_pair_corrected_hz)?;
    match report.car {
        CarRatio::Finite(e) => write_estimate(w, "car", e)?,
        CarRatio::Infinite => write_kv(w, "car", "inf")?,
    }
    write_kv(w, "window_acceptance", report.window_acceptance)?;
    write_kv(w, "path_pair_acceptance", report.path_pair_acceptance)?;
    write_kv(w, "path_single_acceptance_s", report.path_single_acceptance_s)?;
    write_kv(w, "path_single_acceptance_i", report.path_single_acceptance_i)?;
    write_kv(w, "dead_time_survival_s", report.dead_time_survival_s)?;
    write_kv(w, "dead_time_survival_i", report.dead_time_survival_i)?;
    Ok(())
}

pub fn write_report_file(path: &Path, report: &AnalysisReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_report(&mut w, report)?;
    w.flush()?;
    Ok(())
}

/// Flat key-value serialization of a fit, with optional extra rows
/// (scan-level quantities like the three visibilities).
pub fn write_fit_file(
    path: &Path,
    fit: &FitResult,
    extras: &[(&str, Estimate)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_kv(&mut w, "converged", fit.converged)?;
    write_kv(&mut w, "iterations", fit.iterations)?;
    write_kv(&mut w, "chi2", fit.chi2)?;
    write_kv(&mut w, "dof", fit.dof)?;
    write_kv(&mut w, "residual_norm", fit.residual_norm)?;
    for (k, name) in fit.names.iter().enumerate() {
        write_kv(&mut w, name, fit.values[k])?;
        write_kv(&mut w, &format!("{name}_sigma"), fit.sigmas[k])?;
    }
    for &(key, e) in extras {
        write_estimate(&mut w, key, e)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-point report table for scans (one row per phase or power point).
pub fn write_points_csv(
    path: &Path,
    abscissa_name: &str,
    abscissae: &[f64],
    reports: &[AnalysisReport],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{abscissa_name},s_prime_s,s_prime_i,a_h,c_meas,c_true,eta_s,eta_i,r_pair,car"
    )?;
    for (x, r) in abscissae.iter().zip(reports) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            x,
            r.s_prime_s_hz.value,
            r.s_prime_i_hz.value,
            r.a_h_hz.value,
            r.c_meas_hz.value,
            r.c_true_hz.value,
            r.eta_s_corrected.value,
            r.eta_i_corrected.value,
            r.r_pair_corrected_hz.value,
            car_value(r),
        )?;
    }
    w.flush()?;
    Ok(())
}
