//! Seeded Monte-Carlo generation of per-detector time-tag streams.
//!
//! The pipeline is `generate_emissions -> route_and_detect ->
//! add_dark_counts -> apply_dead_time -> quantize`; [`simulate`] composes
//! the stages. Dark counts are merged before the dead-time filter because
//! they occupy the detector like any other click.
//!
//! Event times are real-valued picoseconds until [`quantize`]. All
//! randomness derives from one master seed through the splitting rule in
//! [`subseed`], with the acquisition cut into fixed 0.25 s sub-intervals
//! that are generated (and may be processed) independently, so results do
//! not depend on thread count.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::ExperimentParams;
use crate::physics::{joint_path_table, JointPathOutcome, JointPathTable, PathCategory};
use crate::rng::{splitmix64, SimRng};

/// One photon pair before the detectors: emission time plus the sampled
/// analyzer outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionEvent {
    pub t_emit_ps: f64,
    pub outcome: JointPathOutcome,
}

/// Quantized detection record of one channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    pub channel_id: u8,
    pub resolution_ps: u32,
    /// Tick counts (time = tick * resolution), non-decreasing.
    pub tags: Vec<u64>,
}

impl TimeTagStream {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution_ps == 0 {
            return Err(Error::InvalidParameter("stream resolution must be > 0".into()));
        }
        for w in self.tags.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidInput("tags not sorted".into()));
            }
        }
        Ok(())
    }
}

pub const SIGNAL_CHANNEL: u8 = 0;
pub const IDLER_CHANNEL: u8 = 1;

/// Duration of one independently seeded generation sub-interval.
const CHUNK_PS: f64 = 50_000_000_000.0; // 50 ms

/// Hard cap on expected event counts, guarding memory.
const CAPACITY_LIMIT: f64 = 4_294_967_296.0; // 2^32

/// Pipeline stages for seed derivation. `Scan` derives per-point master
/// seeds for multi-point experiments.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Emission,
    Routing,
    Darks,
    Scan,
}

/// Seed-splitting rule: feed (stage, channel, index) through a SplitMix64
/// chain started at the master seed. Every stage/channel/sub-interval
/// combination gets an independent, reproducible stream.
pub fn subseed(master: u64, stage: Stage, channel: u8, index: u64) -> u64 {
    let mut state = master;
    let _ = splitmix64(&mut state);
    state ^= match stage {
        Stage::Emission => 0x45_4d49,
        Stage::Routing => 0x52_4f55,
        Stage::Darks => 0x44_4152,
        Stage::Scan => 0x53_434e,
    };
    let _ = splitmix64(&mut state);
    state ^= channel as u64;
    let _ = splitmix64(&mut state);
    state ^= index;
    splitmix64(&mut state)
}

fn check_duration(duration_s: f64) -> Result<()> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "duration must be > 0 s, got {duration_s}"
        )));
    }
    Ok(())
}

fn n_chunks(duration_ps: f64) -> u64 {
    (duration_ps / CHUNK_PS).ceil().max(1.0) as u64
}

const INV_2POW53: f64 = 1.0 / (1u64 << 53) as f64;

/// Samples one joint outcome from a single 64-bit draw. Bits 0-1 select
/// the category (00 SL, 01 LS, 1x central); side categories take their
/// two independent port coins from bits 2-3; the central category maps
/// bits 11-63 to a uniform in [0, 1) against the joint port probabilities.
#[inline(always)]
fn sample_outcome(table: &JointPathTable, r: u64) -> JointPathOutcome {
    match r & 3 {
        0 => JointPathOutcome {
            category: PathCategory::SideSl,
            detect_s: r & 4 != 0,
            detect_i: r & 8 != 0,
        },
        1 => JointPathOutcome {
            category: PathCategory::SideLs,
            detect_s: r & 4 != 0,
            detect_i: r & 8 != 0,
        },
        _ => {
            let u = (r >> 11) as f64 * INV_2POW53;
            let [p_mm, p_mx, p_xm, _] = table.central_ports;
            let (detect_s, detect_i) = if u < p_mm {
                (true, true)
            } else if u < p_mm + p_mx {
                (true, false)
            } else if u < p_mm + p_mx + p_xm {
                (false, true)
            } else {
                (false, false)
            };
            JointPathOutcome { category: PathCategory::Central, detect_s, detect_i }
        }
    }
}

fn emissions_in_chunk(
    rate_hz: f64,
    table: &JointPathTable,
    chunk_start_ps: f64,
    chunk_end_ps: f64,
    seed: u64,
    out: &mut Vec<EmissionEvent>,
) {
    if rate_hz <= 0.0 {
        return;
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let exp = Exp::new(rate_hz * 1e-12).expect("positive rate");
    let mut t = chunk_start_ps;
    loop {
        t += exp.sample(&mut rng);
        if t >= chunk_end_ps {
            return;
        }
        let r: u64 = rng.random();
        out.push(EmissionEvent { t_emit_ps: t, outcome: sample_outcome(table, r) });
    }
}

/// Draws pair emissions as a homogeneous Poisson process of rate
/// kappa * P^2 over `[0, duration)`, each tagged with an analyzer outcome
/// sampled from the joint path table at phase `phi`. Deterministic in
/// (params, phi, duration, seed).
pub fn generate_emissions(
    params: &ExperimentParams,
    phi: f64,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<EmissionEvent>> {
    params.validate()?;
    check_duration(duration_s)?;
    let rate = params.pair_rate_hz();
    let expected = rate * duration_s;
    if expected > CAPACITY_LIMIT {
        return Err(Error::Capacity { expected, limit: CAPACITY_LIMIT });
    }
    let table = joint_path_table(params.intrinsic_visibility, phi, params.phase_offset_rad)?;
    let duration_ps = duration_s * 1e12;
    let mut out = Vec::with_capacity((expected * 1.02) as usize + 64);
    for chunk in 0..n_chunks(duration_ps) {
        let start = chunk as f64 * CHUNK_PS;
        let end = (start + CHUNK_PS).min(duration_ps);
        emissions_in_chunk(
            rate,
            &table,
            start,
            end,
            subseed(seed, Stage::Emission, 0, chunk),
            &mut out,
        );
    }
    Ok(out)
}

struct Router {
    eta_s_scaled: u64,
    eta_i_scaled: u64,
    /// Long-path survival thresholds; `None` when the transmission is
    /// exactly 1 (no coin is drawn at all, so default-configuration
    /// streams are unaffected by the knob's existence).
    t_long_s_scaled: Option<u64>,
    t_long_i_scaled: Option<u64>,
    delta_t_ps: f64,
    normal_s: Normal<f64>,
    normal_i: Normal<f64>,
    duration_ps: f64,
}

fn scaled_threshold(p: f64) -> Option<u64> {
    (p < 1.0).then(|| (p * 4_294_967_296.0).round() as u64)
}

impl Router {
    fn new(params: &ExperimentParams, duration_s: f64) -> Self {
        // Arm efficiencies quantized to 32-bit thresholds (relative error
        // < 3e-10 for the rates of interest): one draw serves both arms.
        Router {
            eta_s_scaled: (params.eta_s * 4_294_967_296.0).round() as u64,
            eta_i_scaled: (params.eta_i * 4_294_967_296.0).round() as u64,
            t_long_s_scaled: scaled_threshold(params.long_path_transmission_s),
            t_long_i_scaled: scaled_threshold(params.long_path_transmission_i),
            delta_t_ps: params.delta_t_ps,
            normal_s: Normal::new(0.0, params.jitter_sigma_s_ps).expect("finite sigma"),
            normal_i: Normal::new(0.0, params.jitter_sigma_i_ps).expect("finite sigma"),
            duration_ps: duration_s * 1e12,
        }
    }

    /// Routes one emission, pushing any surviving detections. The draw
    /// order per event is fixed (eta coin, central label, signal jitter,
    /// idler jitter), so staged and fused pipelines consume the routing
    /// stream identically.
    #[inline(always)]
    fn route_event(
        &self,
        t_emit_ps: f64,
        outcome: JointPathOutcome,
        rng: &mut SimRng,
        signal: &mut Vec<f64>,
        idler: &mut Vec<f64>,
    ) {
        if !(outcome.detect_s || outcome.detect_i) {
            return;
        }
        let eta_draw: u64 = rng.random();
        let s_detected = outcome.detect_s && (eta_draw & 0xffff_ffff) < self.eta_s_scaled;
        let i_detected = outcome.detect_i && (eta_draw >> 32) < self.eta_i_scaled;
        if !(s_detected || i_detected) {
            return;
        }
        // Path labels: SL fixes signal short / idler long, LS the
        // reverse; central pairs share one equiprobable label.
        let (s_long, i_long) = match outcome.category {
            PathCategory::SideSl => (false, true),
            PathCategory::SideLs => (true, false),
            PathCategory::Central => {
                let both_long = rng.random::<u64>() & 1 != 0;
                (both_long, both_long)
            }
        };
        // Extra loss on the long arm, when configured below unity.
        let s_detected = s_detected
            && match (s_long, self.t_long_s_scaled) {
                (true, Some(thr)) => (rng.random::<u64>() & 0xffff_ffff) < thr,
                _ => true,
            };
        let i_detected = i_detected
            && match (i_long, self.t_long_i_scaled) {
                (true, Some(thr)) => (rng.random::<u64>() & 0xffff_ffff) < thr,
                _ => true,
            };
        if !(s_detected || i_detected) {
            return;
        }
        if s_detected {
            let t = t_emit_ps
                + if s_long { self.delta_t_ps } else { 0.0 }
                + self.normal_s.sample(rng);
            if t >= 0.0 && t < self.duration_ps {
                signal.push(t);
            }
        }
        if i_detected {
            let t = t_emit_ps
                + if i_long { self.delta_t_ps } else { 0.0 }
                + self.normal_i.sample(rng);
            if t >= 0.0 && t < self.duration_ps {
                idler.push(t);
            }
        }
    }

    fn route_slice(
        &self,
        events: &[EmissionEvent],
        rng: &mut SimRng,
        signal: &mut Vec<f64>,
        idler: &mut Vec<f64>,
    ) {
        for ev in events {
            self.route_event(ev.t_emit_ps, ev.outcome, rng, signal, idler);
        }
    }
}

/// Generation and routing of one sub-interval in a single pass, without
/// materializing the emission events. Each stage keeps its own seeded
/// stream, so the output is bit-identical to running the stages back to
/// back over the same chunk.
fn chunk_detections(
    rate_hz: f64,
    table: &JointPathTable,
    router: &Router,
    chunk_start_ps: f64,
    chunk_end_ps: f64,
    gen_seed: u64,
    route_seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    if rate_hz <= 0.0 {
        return (Vec::new(), Vec::new());
    }
    // Expected detections per channel: rate * span * eta / 2.
    let span_s = (chunk_end_ps - chunk_start_ps) * 1e-12;
    let cap = |eta_scaled: u64| {
        (rate_hz * span_s * (eta_scaled as f64 / 4_294_967_296.0) * 0.55) as usize + 16
    };
    let mut signal = Vec::with_capacity(cap(router.eta_s_scaled));
    let mut idler = Vec::with_capacity(cap(router.eta_i_scaled));
    let mut gen_rng = SimRng::seed_from_u64(gen_seed);
    let mut route_rng = SimRng::seed_from_u64(route_seed);
    let exp = Exp::new(rate_hz * 1e-12).expect("positive rate");
    let mut t = chunk_start_ps;
    loop {
        t += exp.sample(&mut gen_rng);
        if t >= chunk_end_ps {
            break;
        }
        let r: u64 = gen_rng.random();
        let outcome = sample_outcome(table, r);
        router.route_event(t, outcome, &mut route_rng, &mut signal, &mut idler);
    }
    signal.sort_unstable_by(f64::total_cmp);
    idler.sort_unstable_by(f64::total_cmp);
    (signal, idler)
}

/// Applies arm transmission/detection (Bernoulli eta per photon), path
/// delays and detector jitter, keeping detections inside the acquisition
/// window `[0, duration)`. Returns (signal, idler) detection times, each
/// sorted ascending.
pub fn route_and_detect(
    events: &[EmissionEvent],
    params: &ExperimentParams,
    duration_s: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    check_duration(duration_s)?;
    let router = Router::new(params, duration_s);
    let mut rng = SimRng::seed_from_u64(seed);
    let mut signal = Vec::new();
    let mut idler = Vec::new();
    router.route_slice(events, &mut rng, &mut signal, &mut idler);
    signal.sort_unstable_by(f64::total_cmp);
    idler.sort_unstable_by(f64::total_cmp);
    Ok((signal, idler))
}

fn poisson_times(rate_hz: f64, duration_ps: f64, seed: u64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate_hz <= 0.0 {
        return out;
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let exp = Exp::new(rate_hz * 1e-12).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(&mut rng);
        if t >= duration_ps {
            return out;
        }
        out.push(t);
    }
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Merges a homogeneous Poisson dark-count stream into a sorted detection
/// stream. Deterministic per seed.
pub fn add_dark_counts(
    times: &[f64],
    dark_rate_hz: f64,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    check_duration(duration_s)?;
    if dark_rate_hz < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "dark rate must be >= 0, got {dark_rate_hz}"
        )));
    }
    let darks = poisson_times(dark_rate_hz, duration_s * 1e12, seed);
    Ok(merge_sorted(times, &darks))
}

/// Non-paralyzable dead-time filter: greedy scan keeping a tag iff it is
/// at least `dead_time_ps` after the last kept tag.
pub fn apply_dead_time(times: &[f64], dead_time_ps: f64) -> Vec<f64> {
    if dead_time_ps <= 0.0 {
        return times.to_vec();
    }
    let mut out = Vec::with_capacity(times.len());
    let mut last_kept = f64::NEG_INFINITY;
    for &t in times {
        if t - last_kept >= dead_time_ps || !last_kept.is_finite() {
            out.push(t);
            last_kept = t;
        }
    }
    out
}

/// TDC quantization: `floor(t / resolution)` per tag; order-preserving.
pub fn quantize(times: &[f64], resolution_ps: u32, channel_id: u8) -> Result<TimeTagStream> {
    if resolution_ps == 0 {
        return Err(Error::InvalidParameter("resolution must be > 0".into()));
    }
    let res = resolution_ps as f64;
    let mut tags = Vec::with_capacity(times.len());
    for &t in times {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::InvalidInput(format!("cannot quantize time {t} ps")));
        }
        tags.push((t / res).floor() as u64);
    }
    Ok(TimeTagStream { channel_id, resolution_ps, tags })
}

/// Appends a sorted chunk to a sorted accumulator, interleaving the small
/// boundary overlap (path delays and jitter displace events by at most a
/// few ns across chunk edges).
fn append_sorted_run(out: &mut Vec<f64>, chunk: &[f64]) {
    let Some(&first) = chunk.first() else { return };
    let cut = out.partition_point(|&t| t <= first);
    if cut == out.len() {
        out.extend_from_slice(chunk);
    } else {
        let tail: Vec<f64> = out.split_off(cut);
        let merged = merge_sorted(&tail, chunk);
        out.extend(merged);
    }
}

/// Full detector simulation: emission, routing, darks, dead time,
/// quantization, in that order. Returns the (signal, idler) streams.
///
/// Generation and routing run per 50 ms sub-interval (in parallel when a
/// rayon pool is available) with the per-chunk seeds from [`subseed`];
/// output is identical for any worker count.
pub fn simulate(
    params: &ExperimentParams,
    phi: f64,
    duration_s: f64,
    seed: u64,
) -> Result<(TimeTagStream, TimeTagStream)> {
    params.validate()?;
    check_duration(duration_s)?;
    let rate = params.pair_rate_hz();
    let expected = rate * duration_s;
    if expected > CAPACITY_LIMIT {
        return Err(Error::Capacity { expected, limit: CAPACITY_LIMIT });
    }
    let table = joint_path_table(params.intrinsic_visibility, phi, params.phase_offset_rad)?;
    let duration_ps = duration_s * 1e12;
    let router = Router::new(params, duration_s);

    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks(duration_ps))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk as f64 * CHUNK_PS;
            let end = (start + CHUNK_PS).min(duration_ps);
            chunk_detections(
                rate,
                &table,
                &router,
                start,
                end,
                subseed(seed, Stage::Emission, 0, chunk),
                subseed(seed, Stage::Routing, 0, chunk),
            )
        })
        .collect();

    // The channels' tails (merge, darks, dead time, quantization) are
    // independent; run them side by side.
    let finish = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>,
                  dark_rate: f64,
                  channel: u8|
     -> Result<TimeTagStream> {
        let total: usize = chunks.iter().map(|c| pick(c).len()).sum();
        let mut acc = Vec::with_capacity(total);
        for chunk in &chunks {
            append_sorted_run(&mut acc, pick(chunk));
        }
        let merged =
            add_dark_counts(&acc, dark_rate, duration_s, subseed(seed, Stage::Darks, channel, 0))?;
        drop(acc);
        let kept = apply_dead_time(&merged, params.dead_time_ps);
        quantize(&kept, params.tdc_resolution_ps, channel)
    };
    let (signal, idler) = rayon::join(
        || finish(|c| &c.0, params.dark_rate_s_hz, SIGNAL_CHANNEL),
        || finish(|c| &c.1, params.dark_rate_i_hz, IDLER_CHANNEL),
    );
    Ok((signal?, idler?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_params() -> ExperimentParams {
        let mut p = ExperimentParams::paper();
        p.pair_coeff_per_mw2 = 1.0e4;
        p.pump_power_mw = 1.0;
        p
    }

    #[test]
    fn generation_is_deterministic() {
        let p = test_params();
        let a = generate_emissions(&p, 0.3, 0.6, 7).unwrap();
        let b = generate_emissions(&p, 0.3, 0.6, 7).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x == y));
        // A different seed draws a different realization.
        let c = generate_emissions(&p, 0.3, 0.6, 8).unwrap();
        assert!(a.len() != c.len() || a.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn generation_count_within_poisson_bounds() {
        // R = 1e4/s over 10 s: mean 1e5, sigma sqrt(1e5).
        let p = test_params();
        let events = generate_emissions(&p, 0.0, 10.0, 12345).unwrap();
        let mean = 1.0e5;
        let dev = (events.len() as f64 - mean).abs();
        assert!(dev < 5.0 * mean.sqrt(), "count {} too far from {}", events.len(), mean);
        assert!(events.windows(2).all(|w| w[0].t_emit_ps <= w[1].t_emit_ps));
        assert!(events.iter().all(|e| e.t_emit_ps >= 0.0 && e.t_emit_ps < 10.0e12));
    }

    #[test]
    fn zero_rate_gives_no_events() {
        let mut p = test_params();
        p.pair_coeff_per_mw2 = 0.0;
        assert!(generate_emissions(&p, 0.0, 5.0, 1).unwrap().is_empty());
    }

    #[test]
    fn capacity_guard_trips() {
        let mut p = test_params();
        p.pair_coeff_per_mw2 = 1.0e12;
        match generate_emissions(&p, 0.0, 10.0, 1) {
            Err(Error::Capacity { .. }) => {}
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn destructive_phase_suppresses_central_joint_detections() {
        let mut p = test_params();
        p.intrinsic_visibility = 1.0;
        let events = generate_emissions(&p, std::f64::consts::PI, 5.0, 99).unwrap();
        let bad = events
            .iter()
            .filter(|e| {
                e.outcome.category == PathCategory::Central && e.outcome.detect_s && e.outcome.detect_i
            })
            .count();
        assert_eq!(bad, 0);
    }

    fn zero_jitter_params() -> ExperimentParams {
        let mut p = test_params();
        p.jitter_sigma_s_ps = 0.0;
        p.jitter_sigma_i_ps = 0.0;
        p.eta_s = 1.0;
        p.eta_i = 1.0;
        p
    }

    #[test]
    fn routing_path_delays_are_exact_without_jitter() {
        let p = zero_jitter_params();
        let mk = |cat| EmissionEvent {
            t_emit_ps: 1_000_000.0,
            outcome: JointPathOutcome { category: cat, detect_s: true, detect_i: true },
        };
        // Signal short / idler long: idler arrives delta_t later.
        let (s, i) = route_and_detect(&[mk(PathCategory::SideSl)], &p, 1.0, 3).unwrap();
        assert_eq!((s.len(), i.len()), (1, 1));
        assert_eq!(i[0] - s[0], p.delta_t_ps);
        // The reverse for LS.
        let (s, i) = route_and_detect(&[mk(PathCategory::SideLs)], &p, 1.0, 3).unwrap();
        assert_eq!(s[0] - i[0], p.delta_t_ps);
        // Central pairs arrive together whichever shared label they drew.
        let (s, i) = route_and_detect(&[mk(PathCategory::Central)], &p, 1.0, 3).unwrap();
        assert_eq!(s[0], i[0]);
    }

    #[test]
    fn routing_thins_by_arm_efficiency() {
        let mut p = zero_jitter_params();
        p.eta_s = 0.25;
        let events = generate_emissions(&p, 0.0, 20.0, 5).unwrap();
        let n_port_s = events.iter().filter(|e| e.outcome.detect_s).count() as f64;
        let (s, _) = route_and_detect(&events, &p, 20.0, 6).unwrap();
        let dev = (s.len() as f64 - 0.25 * n_port_s).abs();
        assert!(dev < 5.0 * (0.25 * n_port_s).sqrt());
    }

    #[test]
    fn dark_counts_examples() {
        let base = vec![1.0e6, 2.0e6];
        let same = add_dark_counts(&base, 0.0, 1.0, 9).unwrap();
        assert_eq!(same, base);

        // 100/s over 100 s: mean 1e4.
        let darks = add_dark_counts(&[], 100.0, 100.0, 11).unwrap();
        let dev = (darks.len() as f64 - 1.0e4).abs();
        assert!(dev < 5.0 * 1.0e2);
        assert!(darks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn dead_time_hand_case() {
        let times = [0.0, 30_000.0, 60_000.0];
        assert_eq!(apply_dead_time(&times, 50_000.0), vec![0.0, 60_000.0]);
        assert_eq!(apply_dead_time(&times, 0.0), times.to_vec());
    }

    #[test]
    fn dead_time_throughput_matches_nonparalyzable_formula() {
        // Poisson rate R filtered with dead time tau measures R/(1 + R tau).
        let rate = 2.0e5;
        let dur_s = 10.0;
        let tau_ps = 50_000.0;
        let input = poisson_times(rate, dur_s * 1e12, 17);
        let kept = apply_dead_time(&input, tau_ps);
        let expected = rate / (1.0 + rate * tau_ps * 1e-12) * dur_s;
        let dev = (kept.len() as f64 - expected).abs();
        assert!(dev < 3.0 * expected.sqrt(), "kept {} vs {}", kept.len(), expected);
    }

    #[test]
    fn quantize_examples() {
        let s = quantize(&[999.0], 200, 0).unwrap();
        assert_eq!(s.tags, vec![4]);
        let s = quantize(&[0.4, 1.0, 2.7], 1, 0).unwrap();
        assert_eq!(s.tags, vec![0, 1, 2]);
        assert!(quantize(&[-1.0], 200, 0).is_err());
        // Idempotent at the same resolution.
        let once = quantize(&[123_456.0, 123_690.0], 200, 0).unwrap();
        let again =
            quantize(&once.tags.iter().map(|&t| t as f64 * 200.0).collect::<Vec<_>>(), 200, 0)
                .unwrap();
        assert_eq!(once.tags, again.tags);
    }

    #[test]
    fn simulate_equals_staged_pipeline_for_one_chunk() {
        // Within one sub-interval the fused generation+routing of
        // `simulate` must reproduce the staged public pipeline exactly.
        let p = test_params();
        let phi = 0.9;
        let dur = 0.04; // under one chunk
        let seed = 4242;
        let events = generate_emissions(&p, phi, dur, seed).unwrap();
        let (s_raw, i_raw) =
            route_and_detect(&events, &p, dur, subseed(seed, Stage::Routing, 0, 0)).unwrap();
        let s_dark =
            add_dark_counts(&s_raw, p.dark_rate_s_hz, dur, subseed(seed, Stage::Darks, 0, 0))
                .unwrap();
        let i_dark =
            add_dark_counts(&i_raw, p.dark_rate_i_hz, dur, subseed(seed, Stage::Darks, 1, 0))
                .unwrap();
        let s_stream = quantize(
            &apply_dead_time(&s_dark, p.dead_time_ps),
            p.tdc_resolution_ps,
            SIGNAL_CHANNEL,
        )
        .unwrap();
        let i_stream = quantize(
            &apply_dead_time(&i_dark, p.dead_time_ps),
            p.tdc_resolution_ps,
            IDLER_CHANNEL,
        )
        .unwrap();
        let (s_sim, i_sim) = simulate(&p, phi, dur, seed).unwrap();
        assert_eq!(s_sim, s_stream);
        assert_eq!(i_sim, i_stream);
    }

    #[test]
    fn simulate_is_deterministic_across_worker_counts() {
        let p = test_params();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool2 = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let (s1, i1) = pool1.install(|| simulate(&p, 0.4, 0.8, 2024)).unwrap();
        let (s2, i2) = pool2.install(|| simulate(&p, 0.4, 0.8, 2024)).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(i1, i2);
    }

    #[test]
    fn simulate_singles_match_loaded_closed_form() {
        // Pair rate 4e5/s with eta ~ 0.05 and 100/s darks; expected singles
        // are (eta/2) R + dark, reduced by the non-paralyzable load factor.
        let mut p = ExperimentParams::paper();
        p.pair_coeff_per_mw2 = 4.0e5;
        p.pump_power_mw = 1.0;
        p.eta_s = 0.05;
        p.eta_i = 0.05;
        let dur = 60.0;
        let (s, i) = simulate(&p, 0.2, dur, 31).unwrap();
        for (stream, dark) in [(&s, p.dark_rate_s_hz), (&i, p.dark_rate_i_hz)] {
            let pre = 0.5 * 0.05 * 4.0e5 + dark;
            let loaded = pre / (1.0 + pre * p.dead_time_ps * 1e-12);
            let mean = loaded * dur;
            let dev = (stream.len() as f64 - mean).abs();
            assert!(dev < 5.0 * mean.sqrt(), "singles {} vs {}", stream.len(), mean);
        }
    }

    #[test]
    fn simulate_tags_sorted_and_spaced_by_dead_time() {
        let p = test_params();
        let (s, _) = simulate(&p, 0.0, 2.0, 77).unwrap();
        s.validate().unwrap();
        let dead_ticks = (p.dead_time_ps / p.tdc_resolution_ps as f64) as u64;
        assert!(s.tags.windows(2).all(|w| w[1] - w[0] >= dead_ticks));
    }

    proptest! {
        #[test]
        fn dead_time_output_spaced_and_subset(
            mut raw in proptest::collection::vec(0.0f64..1.0e9, 0..300),
            dead in 0.0f64..1.0e6,
        ) {
            raw.sort_unstable_by(f64::total_cmp);
            let kept = apply_dead_time(&raw, dead);
            prop_assert!(kept.len() <= raw.len());
            if dead > 0.0 {
                prop_assert!(kept.windows(2).all(|w| w[1] - w[0] >= dead));
            }
            if !raw.is_empty() {
                prop_assert_eq!(kept[0], raw[0]);
            }
        }

        #[test]
        fn dark_merge_stays_sorted(
            mut raw in proptest::collection::vec(0.0f64..5.0e11, 0..200),
            rate in 0.0f64..1.0e3,
            seed in any::<u64>(),
        ) {
            raw.sort_unstable_by(f64::total_cmp);
            let merged = add_dark_counts(&raw, rate, 0.5, seed).unwrap();
            prop_assert!(merged.len() >= raw.len());
            prop_assert!(merged.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
