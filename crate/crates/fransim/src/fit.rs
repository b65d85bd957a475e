//! Nonlinear least-squares fitting of the four model shapes used by the
//! analysis: sinc^2 temperature response, three-Gaussian lag histogram,
//! sinusoidal fringe, and log-log power law.

use crate::coincidence::CoincidenceHistogram;
use crate::error::{Error, Result};
use crate::estimators::Estimate;
use crate::physics::shg_response_mw;

/// Outcome of a fit: named parameter values, covariance, and bookkeeping.
/// `converged == false` never means a crash; the best point reached is
/// still reported.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    /// One-sigma uncertainties, sqrt of the covariance diagonal.
    pub sigmas: Vec<f64>,
    /// Row-major covariance, `(J^T W J)^{-1}` at the solution (weights
    /// taken as inverse variances).
    pub covariance: Vec<Vec<f64>>,
    /// sqrt of the weighted residual sum of squares.
    pub residual_norm: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    fn index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|&n| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn value(&self, name: &str) -> f64 {
        self.values[self.index(name)]
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.sigmas[self.index(name)]
    }

    pub fn estimate(&self, name: &str) -> Estimate {
        let k = self.index(name);
        Estimate::new(self.values[k], self.sigmas[k])
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

const MAX_ITERATIONS: usize = 200;
const REL_TOL: f64 = 1e-9;
const LAMBDA_MAX: f64 = 1e12;

/// Solves `a x = b` in place by Gaussian elimination with partial
/// pivoting; `None` when the system is singular to working precision.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        let scale: f64 = (0..n).map(|c| a[pivot_row][c].abs()).fold(0.0, f64::max);
        if !(pivot > scale * 1e-13) || scale == 0.0 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve_linear(a.to_vec(), e)?;
        for row in 0..n {
            out[row][col] = x[row];
        }
    }
    // Symmetrize against elimination round-off.
    for r in 0..n {
        for c in 0..r {
            let m = 0.5 * (out[r][c] + out[c][r]);
            out[r][c] = m;
            out[c][r] = m;
        }
    }
    Some(out)
}

/// Central-difference Jacobian of the model at `p`, one column per
/// parameter; `h_scale` is the relative step (the default is cbrt(eps)).
pub fn numeric_jacobian<F>(model: &F, p: &[f64], x: &[f64], h_scale: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64], f64) -> f64,
{
    let m = x.len();
    let n = p.len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut p_hi = p.to_vec();
    let mut p_lo = p.to_vec();
    for j in 0..n {
        let h = h_scale * p[j].abs().max(1.0);
        p_hi[j] = p[j] + h;
        p_lo[j] = p[j] - h;
        let inv = 1.0 / (p_hi[j] - p_lo[j]);
        for (i, &xi) in x.iter().enumerate() {
            jac[i][j] = (model(&p_hi, xi) - model(&p_lo, xi)) * inv;
        }
        p_hi[j] = p[j];
        p_lo[j] = p[j];
    }
    jac
}

const DEFAULT_JACOBIAN_STEP: f64 = 6.055_454e-6; // cbrt(f64 epsilon)

fn clamp_to(p: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in p.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Weighted nonlinear least squares by damped Gauss-Newton
/// (Levenberg-Marquardt damping on the normal equations), with a numeric
/// central-difference Jacobian and box bounds enforced by projection.
/// Converges when both the relative residual decrease and the relative
/// parameter step drop below 1e-9, or stops at 200 iterations
/// (`converged = false`). Singular normal equations that damping cannot
/// rescue also yield a `converged = false` result rather than an error.
pub fn nlls_fit<F>(
    model: F,
    names: Vec<&'static str>,
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    p0: &[f64],
    bounds: &[(f64, f64)],
) -> Result<FitResult>
where
    F: Fn(&[f64], f64) -> f64,
{
    let m = x.len();
    let n = p0.len();
    if n == 0 || m < n {
        return Err(Error::InvalidParameter(format!(
            "need at least as many points ({m}) as parameters ({n})"
        )));
    }
    if y.len() != m || weights.len() != m || names.len() != n || bounds.len() != n {
        return Err(Error::InvalidParameter("fit input lengths disagree".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("weights must be positive and finite".into()));
    }

    let cost = |p: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .zip(weights)
            .map(|((&xi, &yi), &wi)| {
                let r = yi - model(p, xi);
                wi * r * r
            })
            .sum()
    };

    let mut p = p0.to_vec();
    clamp_to(&mut p, bounds);
    let mut chi2 = cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let jac = numeric_jacobian(&model, &p, x, DEFAULT_JACOBIAN_STEP);
        // Normal equations J^T W J and gradient J^T W r.
        let mut jtwj = vec![vec![0.0; n]; n];
        let mut jtwr = vec![0.0; n];
        for i in 0..m {
            let r = y[i] - model(&p, x[i]);
            let wi = weights[i];
            for a in 0..n {
                jtwr[a] += wi * jac[i][a] * r;
                for b in a..n {
                    jtwj[a][b] += wi * jac[i][a] * jac[i][b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtwj[a][b] = jtwj[b][a];
            }
        }

        // Damping escalation until a step lowers the cost.
        let mut stepped = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = jtwj.clone();
            for a in 0..n {
                damped[a][a] += lambda * jtwj[a][a];
            }
            let Some(delta) = solve_linear(damped, jtwr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let mut p_try: Vec<f64> = p.iter().zip(&delta).map(|(a, d)| a + d).collect();
            clamp_to(&mut p_try, bounds);
            let chi2_try = cost(&p_try);
            if chi2_try.is_finite() && chi2_try <= chi2 {
                let step_rel = p_try
                    .iter()
                    .zip(&p)
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                    .fold(0.0, f64::max);
                let drop_rel = (chi2 - chi2_try) / chi2.max(1e-300);
                p = p_try;
                chi2 = chi2_try;
                lambda = (lambda * 0.1).max(1e-12);
                stepped = true;
                if step_rel < REL_TOL && drop_rel < REL_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // Damping exhausted: singular or no descent direction.
            converged = false;
            break;
        }
        if converged {
            break;
        }
    }

    let jac = numeric_jacobian(&model, &p, x, DEFAULT_JACOBIAN_STEP);
    let mut jtwj = vec![vec![0.0; n]; n];
    for i in 0..m {
        let wi = weights[i];
        for a in 0..n {
            for b in a..n {
                jtwj[a][b] += wi * jac[i][a] * jac[i][b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtwj[a][b] = jtwj[b][a];
        }
    }
    let covariance = invert(&jtwj).unwrap_or_else(|| vec![vec![0.0; n]; n]);
    let sigmas = (0..n).map(|k| covariance[k][k].max(0.0).sqrt()).collect();

    Ok(FitResult {
        names,
        values: p,
        sigmas,
        covariance,
        residual_norm: chi2.max(0.0).sqrt(),
        chi2,
        dof: m - n,
        iterations,
        converged,
    })
}

/// Fits the sinc^2 temperature response; parameters `t_peak_c`, `fwhm_c`,
/// `p_max_mw`. Initial guesses come from the grid maximum and the
/// half-maximum crossings.
pub fn fit_shg(temps_c: &[f64], powers_mw: &[f64]) -> Result<FitResult> {
    if temps_c.len() != powers_mw.len() || temps_c.len() < 5 {
        return Err(Error::InvalidParameter(
            "sinc^2 fit needs >= 5 (temperature, power) points".into(),
        ));
    }
    let peak = powers_mw
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let p_max = powers_mw[peak];
    if !(p_max > 0.0) {
        return Err(Error::FitInitialization("no positive response on the grid".into()));
    }
    let half = p_max / 2.0;
    // Half-max crossings on each side of the peak (linear interpolation).
    let left = (0..peak).rev().find(|&k| powers_mw[k] < half).map(|k| {
        let f = (half - powers_mw[k]) / (powers_mw[k + 1] - powers_mw[k]);
        temps_c[k] + f * (temps_c[k + 1] - temps_c[k])
    });
    let right = (peak + 1..temps_c.len()).find(|&k| powers_mw[k] < half).map(|k| {
        let f = (half - powers_mw[k - 1]) / (powers_mw[k] - powers_mw[k - 1]);
        temps_c[k - 1] + f * (temps_c[k] - temps_c[k - 1])
    });
    let (Some(left), Some(right)) = (left, right) else {
        return Err(Error::FitInitialization(
            "temperature grid does not straddle the response peak".into(),
        ));
    };
    let p0 = [temps_c[peak], (right - left).max(1e-6), p_max];
    let weights = vec![1.0; temps_c.len()];
    nlls_fit(
        |p, t| shg_response_mw(t, p[0], p[1].max(1e-12), p[2]),
        vec!["t_peak_c", "fwhm_c", "p_max_mw"],
        temps_c,
        powers_mw,
        &weights,
        &p0,
        &[
            (f64::NEG_INFINITY, f64::INFINITY),
            (1e-9, f64::INFINITY),
            (1e-12, f64::INFINITY),
        ],
    )
}

struct TripletInit {
    x: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
    h_sl: f64,
    h_ls: f64,
    h_central: f64,
    sigma: f64,
    floor: f64,
    delta_t: f64,
}

fn triplet_init(hist: &CoincidenceHistogram, delta_t_guess_ps: f64) -> Result<TripletInit> {
    if !(delta_t_guess_ps > 0.0) {
        return Err(Error::InvalidParameter("delta_t guess must be > 0".into()));
    }
    let n = hist.n_bins();
    if n < 12 {
        return Err(Error::InvalidParameter("histogram too coarse to fit".into()));
    }
    let x: Vec<f64> = (0..n).map(|k| hist.bin_center_ps(k)).collect();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();

    let mut sorted = y.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let floor = sorted[n / 2];
    let threshold = 5.0 * floor.max(1.0);

    let g = delta_t_guess_ps;
    let region_max = |lo: f64, hi: f64| -> Option<(f64, f64)> {
        (0..n)
            .filter(|&k| x[k] >= lo && x[k] <= hi)
            .map(|k| (x[k], y[k]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    };
    let left = region_max(-1.5 * g, -0.5 * g);
    let right = region_max(0.5 * g, 1.5 * g);
    let (Some((t_left, a_left)), Some((t_right, a_right))) = (left, right) else {
        return Err(Error::FitInitialization("lag range does not cover the side peaks".into()));
    };
    if a_left <= threshold || a_right <= threshold {
        return Err(Error::FitInitialization(format!(
            "side peaks not found above 5x the baseline ({threshold} counts)"
        )));
    }
    // The central peak may be absent (destructive interference); its
    // amplitude initializes from whatever the central region holds.
    let (_, a_central) = region_max(-0.5 * g, 0.5 * g).unwrap_or((0.0, floor));

    // Width guess from the left side peak's half-maximum extent.
    let half = floor + (a_left - floor) / 2.0;
    let lo_cross = (0..n)
        .filter(|&k| x[k] >= -1.5 * g && x[k] < t_left && y[k] >= half)
        .map(|k| x[k])
        .fold(f64::INFINITY, f64::min);
    let hi_cross = (0..n)
        .filter(|&k| x[k] <= -0.5 * g && x[k] > t_left && y[k] >= half)
        .map(|k| x[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let fwhm = (hi_cross - lo_cross).max(hist.bin_width_ps as f64);
    let sigma = (fwhm / 2.3548).max(hist.bin_width_ps as f64 / 2.0);

    let delta_t = (t_right - t_left) / 2.0;
    if (hist.lag_min_ps as f64) > -(delta_t + 5.0 * sigma)
        || (hist.lag_max_ps as f64) < delta_t + 5.0 * sigma
    {
        return Err(Error::InvalidParameter(format!(
            "histogram range [{}, {}) too small for delta_t + 5 sigma = {:.0} ps",
            hist.lag_min_ps,
            hist.lag_max_ps,
            delta_t + 5.0 * sigma
        )));
    }

    let weights: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    Ok(TripletInit {
        x,
        y,
        weights,
        h_sl: (a_left - floor).max(1.0),
        h_ls: (a_right - floor).max(1.0),
        h_central: a_central - floor,
        sigma,
        floor: floor.max(0.0),
        delta_t,
    })
}

const NONNEG: (f64, f64) = (0.0, f64::INFINITY);
const ANY: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);

/// Fits three Gaussians with one shared width at `-delta_t`, `0`,
/// `+delta_t` plus a flat floor; parameters `h_sl`, `h_ls`, `h_central`,
/// `sigma_ps`, `h_acc`, `delta_t_ps`. The side peaks must be localizable
/// (above 5x the floor); the central amplitude may fit to zero or
/// slightly negative so destructive-interference histograms are
/// representable.
pub fn fit_histogram_triplet(hist: &CoincidenceHistogram, delta_t_guess_ps: f64) -> Result<FitResult> {
    let init = triplet_init(hist, delta_t_guess_ps)?;
    let p0 = [init.h_sl, init.h_ls, init.h_central, init.sigma, init.floor, init.delta_t];
    let sigma_lo = hist.bin_width_ps as f64 * 0.05;
    let model = |p: &[f64], tau: f64| -> f64 {
        let inv2s2 = 1.0 / (2.0 * p[3] * p[3]);
        let dl = tau + p[5];
        let dr = tau - p[5];
        p[0] * (-dl * dl * inv2s2).exp()
            + p[1] * (-dr * dr * inv2s2).exp()
            + p[2] * (-tau * tau * inv2s2).exp()
            + p[4]
    };
    nlls_fit(
        model,
        vec!["h_sl", "h_ls", "h_central", "sigma_ps", "h_acc", "delta_t_ps"],
        &init.x,
        &init.y,
        &init.weights,
        &p0,
        &[
            NONNEG,
            NONNEG,
            ANY,
            (sigma_lo, f64::INFINITY),
            NONNEG,
            (1e-6, f64::INFINITY),
        ],
    )
}

/// Extension of [`fit_histogram_triplet`] with an independent width per
/// peak (`sigma_sl_ps`, `sigma_ls_ps`, `sigma_c_ps`). The shared-width
/// model is the default; this variant exists for diagnosing width
/// asymmetries.
pub fn fit_histogram_triplet_per_peak_sigma(
    hist: &CoincidenceHistogram,
    delta_t_guess_ps: f64,
) -> Result<FitResult> {
    let init = triplet_init(hist, delta_t_guess_ps)?;
    let p0 = [
        init.h_sl,
        init.h_ls,
        init.h_central,
        init.sigma,
        init.sigma,
        init.sigma,
        init.floor,
        init.delta_t,
    ];
    let sigma_lo = hist.bin_width_ps as f64 * 0.05;
    let model = |p: &[f64], tau: f64| -> f64 {
        let dl = tau + p[7];
        let dr = tau - p[7];
        p[0] * (-dl * dl / (2.0 * p[3] * p[3])).exp()
            + p[1] * (-dr * dr / (2.0 * p[4] * p[4])).exp()
            + p[2] * (-tau * tau / (2.0 * p[5] * p[5])).exp()
            + p[6]
    };
    nlls_fit(
        model,
        vec![
            "h_sl",
            "h_ls",
            "h_central",
            "sigma_sl_ps",
            "sigma_ls_ps",
            "sigma_c_ps",
            "h_acc",
            "delta_t_ps",
        ],
        &init.x,
        &init.y,
        &init.weights,
        &p0,
        &[
            NONNEG,
            NONNEG,
            ANY,
            (sigma_lo, f64::INFINITY),
            (sigma_lo, f64::INFINITY),
            (sigma_lo, f64::INFINITY),
            NONNEG,
            (1e-6, f64::INFINITY),
        ],
    )
}

/// Fits `C(phi) = B [1 + V cos(alpha phi + phi0)]`; parameters `b`, `v`,
/// `alpha`, `phi0`. The initial guess takes the dominant discrete Fourier
/// component of the scan; V is allowed up to 1.05 as noise slack.
pub fn fit_fringe(phases: &[f64], counts: &[f64], errors: &[f64]) -> Result<FitResult> {
    let m = phases.len();
    if m < 8 || counts.len() != m || errors.len() != m {
        return Err(Error::InvalidParameter(
            "fringe fit needs >= 8 (phase, count, error) points".into(),
        ));
    }
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("count errors must be > 0".into()));
    }
    let span = phases.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - phases.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(Error::FitInitialization("phase grid has zero span".into()));
    }
    let phi_min = phases.iter().cloned().fold(f64::INFINITY, f64::min);
    // Periodic extension: one mean grid step past the span.
    let period_guess = span * m as f64 / (m as f64 - 1.0);

    let mean = counts.iter().sum::<f64>() / m as f64;
    // Dominant harmonic of the scan (k cycles over the extended span).
    let mut best = (0usize, 0.0f64, 0.0f64, 0.0f64);
    for k in 1..=m / 2 {
        let w = 2.0 * std::f64::consts::PI * k as f64 / period_guess;
        let (mut re, mut im) = (0.0, 0.0);
        for (&phi, &c) in phases.iter().zip(counts) {
            let arg = w * (phi - phi_min);
            re += (c - mean) * arg.cos();
            im -= (c - mean) * arg.sin();
        }
        let mag = re.hypot(im);
        if mag > best.1 {
            best = (k, mag, re, im);
        }
    }
    let (k, mag, re, im) = best;
    let (alpha0, v0, phi0_init) = if k == 0 || mean <= 0.0 {
        (2.0 * std::f64::consts::PI / period_guess, 0.0, 0.0)
    } else {
        let alpha0 = 2.0 * std::f64::consts::PI * k as f64 / period_guess;
        let v0 = (2.0 * mag / (m as f64 * mean.max(1e-300))).min(1.05);
        // Fourier phase, shifted back to absolute phase coordinates.
        let phi0 = im.atan2(re) - alpha0 * phi_min;
        (alpha0, v0, phi0)
    };

    let weights: Vec<f64> = errors.iter().map(|&e| 1.0 / (e * e)).collect();
    let p0 = [mean.max(1e-9), v0, alpha0, phi0_init];
    nlls_fit(
        |p, phi| p[0] * (1.0 + p[1] * (p[2] * phi + p[3]).cos()),
        vec!["b", "v", "alpha", "phi0"],
        phases,
        counts,
        &weights,
        &p0,
        &[
            (1e-12, f64::INFINITY),
            (0.0, 1.05),
            (1e-9, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
        ],
    )
}

/// Ordinary least squares on `(log10 x, log10 y)`; parameters
/// `log10_prefactor`, `slope`.
pub fn fit_powerlaw(x: &[f64], y: &[f64]) -> Result<FitResult> {
    let m = x.len();
    if m < 3 || y.len() != m {
        return Err(Error::InvalidParameter("power-law fit needs >= 3 points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("power-law fit needs strictly positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    let mx = lx.iter().sum::<f64>() / m as f64;
    let my = ly.iter().sum::<f64>() / m as f64;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidInput("power-law fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(&a, &b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let dof = m - 2;
    let s2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let var_slope = s2 / sxx;
    let var_icept = s2 * (1.0 / m as f64 + mx * mx / sxx);
    let cov_si = -s2 * mx / sxx;
    Ok(FitResult {
        names: vec!["log10_prefactor", "slope"],
        values: vec![intercept, slope],
        sigmas: vec![var_icept.max(0.0).sqrt(), var_slope.max(0.0).sqrt()],
        covariance: vec![vec![var_icept, cov_si], vec![cov_si, var_slope]],
        residual_norm: rss.max(0.0).sqrt(),
        chi2: rss,
        dof,
        iterations: 0,
        converged: true,
    })
}
