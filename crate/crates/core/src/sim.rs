//! Kinetic Monte Carlo of the dot's photon stream and the two-detector
//! chain behind it.
//!
//! The dot is a continuous-time Markov jump process over the same transitions
//! as [`crate::ladder::build_generator`], sampled exactly (Gillespie direct
//! method). Every radiative jump emits a photon that a beamsplitter sends to
//! channel A or B; each channel then applies its monochromator line filter,
//! detection efficiency, Gaussian timing jitter, independent Poisson dark
//! counts and dead time, in that order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::correlator::DecayHistogram;
use crate::ladder::{self, LadderConfig, Transition};
use crate::{Error, Result, PS_PER_S};

/// `FWHM / sigma` of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Line byte used for dark counts in serialized records.
pub const DARK_COUNT_TAG: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    A,
    B,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::A => 0,
            Channel::B => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Channel::A),
            1 => Some(Channel::B),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::A => "A",
            Channel::B => "B",
        }
    }
}

/// Which process produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LineTag {
    /// Photon from the radiative decay of ladder level `k`.
    Line(u8),
    DarkCount,
}

impl LineTag {
    pub fn to_byte(self) -> u8 {
        match self {
            LineTag::Line(k) => k,
            LineTag::DarkCount => DARK_COUNT_TAG,
        }
    }

    pub fn from_byte(b: u8) -> Self {
        if b == DARK_COUNT_TAG {
            LineTag::DarkCount
        } else {
            LineTag::Line(b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonRecord {
    pub time_ps: f64,
    pub channel: Channel,
    pub line: LineTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_rate_cps: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ps: f64,
    /// Lines passed by the monochromator; `None` passes everything.
    pub line_filter: Option<Vec<usize>>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { efficiency: 1.0, dark_rate_cps: 0.0, jitter_fwhm_ps: 0.0, dead_time_ps: 0.0, line_filter: None }
    }
}

impl DetectorConfig {
    pub fn passing(lines: &[usize]) -> Self {
        Self { line_filter: Some(lines.to_vec()), ..Self::default() }
    }

    pub fn passes(&self, line: usize) -> bool {
        self.line_filter.as_ref().map_or(true, |l| l.contains(&line))
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::Config(format!("detector {name}: efficiency must be in [0, 1]")));
        }
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !nonneg(self.dark_rate_cps) || !nonneg(self.jitter_fwhm_ps) || !nonneg(self.dead_time_ps) {
            return Err(Error::Config(format!(
                "detector {name}: dark rate, jitter and dead time must be >= 0"
            )));
        }
        Ok(())
    }
}

/// Long-lived variant of a ladder level in pulsed mode: each time the level is
/// entered, with probability `fraction` it decays with `lifetime_ps` instead of
/// its ordinary lifetime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowComponent {
    pub level: usize,
    pub fraction: f64,
    pub lifetime_ps: f64,
}

impl SlowComponent {
    /// Fraction giving a single-level decay `A e^{-t/T} + A' e^{-t/T'}` with
    /// `A'/A = amplitude_ratio`.
    pub fn from_amplitude_ratio(level: usize, amplitude_ratio: f64, fast_ps: f64, slow_ps: f64) -> Self {
        let odds = amplitude_ratio * slow_ps / fast_ps;
        Self { level, fraction: odds / (1.0 + odds), lifetime_ps: slow_ps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairInjection {
    Fixed(u32),
    Poisson(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulsedConfig {
    pub period_ps: f64,
    pub pairs: PairInjection,
    pub slow_components: Vec<SlowComponent>,
}

impl PulsedConfig {
    pub fn new(period_ps: f64, pairs: u32) -> Self {
        Self { period_ps, pairs: PairInjection::Fixed(pairs), slow_components: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Excitation {
    Cw,
    Pulsed(PulsedConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ladder: LadderConfig,
    pub acquisition_s: f64,
    /// Channel A then channel B.
    pub detectors: [DetectorConfig; 2],
    /// Probability that an emitted photon goes to channel A.
    pub splitter_ratio: f64,
    pub seed: u64,
    pub excitation: Excitation,
    /// Upper bound on Monte Carlo jumps per shard.
    pub event_cap: u64,
}

impl SimConfig {
    pub fn cw(ladder: LadderConfig, acquisition_s: f64, seed: u64) -> Self {
        Self {
            ladder,
            acquisition_s,
            detectors: [DetectorConfig::default(), DetectorConfig::default()],
            splitter_ratio: 0.5,
            seed,
            excitation: Excitation::Cw,
            event_cap: 2_000_000_000,
        }
    }

    pub fn acquisition_ps(&self) -> f64 {
        self.acquisition_s * PS_PER_S
    }

    pub fn validate(&self) -> Result<()> {
        self.ladder.validate()?;
        if !(self.acquisition_s.is_finite() && self.acquisition_s > 0.0) {
            return Err(Error::Config("acquisition time must be > 0 s".into()));
        }
        if !(0.0..=1.0).contains(&self.splitter_ratio) {
            return Err(Error::Config("splitter ratio must be in [0, 1]".into()));
        }
        self.detectors[0].validate("A")?;
        self.detectors[1].validate("B")?;
        if let Excitation::Pulsed(p) = &self.excitation {
            if !(p.period_ps.is_finite() && p.period_ps > 0.0) {
                return Err(Error::Config("pulse period must be > 0 ps".into()));
            }
            if let PairInjection::Poisson(mean) = p.pairs {
                if !(mean.is_finite() && mean >= 0.0) {
                    return Err(Error::Config("mean pair number must be >= 0".into()));
                }
            }
            for s in &p.slow_components {
                if s.level == 0 || s.level > self.ladder.n_max() {
                    return Err(Error::Config(format!("slow component on unknown level {}", s.level)));
                }
                if !(0.0..=1.0).contains(&s.fraction) || !(s.lifetime_ps > 0.0) {
                    return Err(Error::Config("slow component needs fraction in [0, 1] and lifetime > 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warning {
    /// The dot may not have relaxed before the next pulse.
    PileUp { period_ps: f64, longest_lifetime_ps: f64 },
}

/// What the emitter actually did, before the detection chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruthSummary {
    pub duration_s: f64,
    pub jumps: u64,
    /// Emitted photons per line, index `k - 1`.
    pub emitted: Vec<u64>,
    /// True photons detected per channel (after filter, efficiency, dead time).
    pub detected_photons: [u64; 2],
    pub detected_dark: [u64; 2],
    pub pulses: u64,
}

impl TruthSummary {
    /// Emission rate of line `k`, counts per second.
    pub fn emission_rate_cps(&self, line: usize) -> f64 {
        self.emitted[line - 1] as f64 / self.duration_s
    }

    fn merge(&mut self, other: &TruthSummary) {
        self.jumps += other.jumps;
        for (a, b) in self.emitted.iter_mut().zip(&other.emitted) {
            *a += b;
        }
        for c in 0..2 {
            self.detected_photons[c] += other.detected_photons[c];
            self.detected_dark[c] += other.detected_dark[c];
        }
        self.pulses += other.pulses;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub channel_a: Vec<PhotonRecord>,
    pub channel_b: Vec<PhotonRecord>,
    pub truth: TruthSummary,
    pub warnings: Vec<Warning>,
}

/// Outgoing transitions of each state, with the total escape rate.
struct JumpTable {
    out: Vec<Vec<Transition>>,
    total: Vec<f64>,
}

impl JumpTable {
    fn new(config: &LadderConfig) -> Self {
        let n = config.n_states();
        let mut out = vec![Vec::new(); n];
        for t in config.transitions() {
            if t.rate > 0.0 {
                out[t.from].push(t);
            }
        }
        let total = out.iter().map(|ts| ts.iter().map(|t| t.rate).sum()).collect();
        Self { out, total }
    }

    /// Pick a transition out of `state`, given the state's escape rate.
    fn choose<R: Rng>(&self, state: usize, total: f64, rng: &mut R) -> Transition {
        let ts = &self.out[state];
        let mut target = rng.random::<f64>() * total;
        for t in ts {
            target -= t.rate;
            if target < 0.0 {
                return *t;
            }
        }
        *ts.last().expect("choose called on absorbing state")
    }
}

fn exp_sample<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    // 1 - u lies in (0, 1], so the log is finite.
    -libm::log(1.0 - rng.random::<f64>()) / rate
}

/// RNG for one shard: the configured seed, with the shard index as the ChaCha
/// stream so shards are independent and reproducible.
fn shard_rng(seed: u64, shard: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

fn sample_state<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &x) in p.iter().enumerate() {
        u -= x;
        if u < 0.0 {
            return i;
        }
    }
    p.len() - 1
}

/// Routes emitted photons through splitter, filter, efficiency and jitter.
struct DetectionChain<'a> {
    config: &'a SimConfig,
    sigma: [f64; 2],
    records: [Vec<PhotonRecord>; 2],
}

impl<'a> DetectionChain<'a> {
    fn new(config: &'a SimConfig) -> Self {
        let sigma = [
            config.detectors[0].jitter_fwhm_ps / FWHM_PER_SIGMA,
            config.detectors[1].jitter_fwhm_ps / FWHM_PER_SIGMA,
        ];
        Self { config, sigma, records: [Vec::new(), Vec::new()] }
    }

    fn photon<R: Rng>(&mut self, time_ps: f64, line: usize, rng: &mut R) {
        let channel = if rng.random::<f64>() < self.config.splitter_ratio { Channel::A } else { Channel::B };
        let c = channel.index();
        let det = &self.config.detectors[c];
        if !det.passes(line) || rng.random::<f64>() >= det.efficiency {
            return;
        }
        let mut t = time_ps;
        if self.sigma[c] > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            t += self.sigma[c] * z;
        }
        self.records[c].push(PhotonRecord { time_ps: t, channel, line: LineTag::Line(line as u8) });
    }

    /// Merge dark counts on `[t0, t1)`, sort, clip to the window and apply
    /// dead time.
    fn finish<R: Rng>(mut self, t0: f64, t1: f64, rng: &mut R, truth: &mut TruthSummary) -> [Vec<PhotonRecord>; 2] {
        for (c, channel) in [Channel::A, Channel::B].into_iter().enumerate() {
            let rate_per_ps = self.config.detectors[c].dark_rate_cps / PS_PER_S;
            if rate_per_ps > 0.0 {
                let mut t = t0;
                loop {
                    t += exp_sample(rng, rate_per_ps);
                    if t >= t1 {
                        break;
                    }
                    self.records[c].push(PhotonRecord { time_ps: t, channel, line: LineTag::DarkCount });
                }
            }
            let recs = &mut self.records[c];
            recs.retain(|r| r.time_ps >= t0 && r.time_ps < t1);
            recs.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
            let dead = self.config.detectors[c].dead_time_ps;
            if dead > 0.0 {
                let mut last = f64::NEG_INFINITY;
                recs.retain(|r| {
                    if r.time_ps - last >= dead {
                        last = r.time_ps;
                        true
                    } else {
                        false
                    }
                });
            }
            for r in recs.iter() {
                match r.line {
                    LineTag::DarkCount => truth.detected_dark[c] += 1,
                    LineTag::Line(_) => truth.detected_photons[c] += 1,
                }
            }
        }
        self.records
    }
}

/// Run the full simulation in one shard.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    simulate_shard(config, 0, 1)
}

/// Simulate shard `index` of `count` equal slices of the acquisition. Each
/// shard draws its own starting state and uses an independent RNG stream;
/// [`merge_shards`] recombines them. Pulses are assigned to the shard that
/// contains their trigger time.
pub fn simulate_shard(config: &SimConfig, index: u64, count: u64) -> Result<SimOutput> {
    config.validate()?;
    if count == 0 || index >= count {
        return Err(Error::Config(format!("shard {index} of {count}")));
    }
    let total = config.acquisition_ps();
    let t0 = total * index as f64 / count as f64;
    let t1 = if index + 1 == count { total } else { total * (index + 1) as f64 / count as f64 };
    let mut rng = shard_rng(config.seed, index);
    let mut truth = TruthSummary {
        duration_s: (t1 - t0) / PS_PER_S,
        emitted: vec![0; config.ladder.n_max()],
        ..TruthSummary::default()
    };
    let mut chain = DetectionChain::new(config);
    let mut warnings = Vec::new();
    match &config.excitation {
        Excitation::Cw => run_cw(config, t0, t1, &mut rng, &mut chain, &mut truth)?,
        Excitation::Pulsed(p) => {
            if let Some(w) = pile_up_warning(&config.ladder, p) {
                warnings.push(w);
            }
            let first = libm::ceil(t0 / p.period_ps) as u64;
            let mut pulse = first;
            let mut jumps = 0u64;
            loop {
                let t_pulse = pulse as f64 * p.period_ps;
                if t_pulse >= t1 {
                    break;
                }
                run_pulse(&config.ladder, p, &mut rng, &mut jumps, config.event_cap, |delay, line, rng| {
                    truth.emitted[line - 1] += 1;
                    chain.photon(t_pulse + delay, line, rng);
                })?;
                pulse += 1;
            }
            truth.jumps = jumps;
            truth.pulses = pulse - first;
        }
    }
    let [channel_a, channel_b] = chain.finish(t0, t1, &mut rng, &mut truth);
    Ok(SimOutput { channel_a, channel_b, truth, warnings })
}

/// Concatenate shards produced by [`simulate_shard`] in index order.
pub fn merge_shards(shards: Vec<SimOutput>) -> SimOutput {
    let mut it = shards.into_iter();
    let mut out = it.next().unwrap_or(SimOutput {
        channel_a: Vec::new(),
        channel_b: Vec::new(),
        truth: TruthSummary::default(),
        warnings: Vec::new(),
    });
    for s in it {
        out.channel_a.extend(s.channel_a);
        out.channel_b.extend(s.channel_b);
        out.truth.duration_s += s.truth.duration_s;
        out.truth.merge(&s.truth);
        for w in s.warnings {
            if !out.warnings.contains(&w) {
                out.warnings.push(w);
            }
        }
    }
    // Shards are disjoint in time, but jitter near a boundary can interleave.
    out.channel_a.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
    out.channel_b.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
    out
}

fn run_cw<R: Rng>(
    config: &SimConfig,
    t0: f64,
    t1: f64,
    rng: &mut R,
    chain: &mut DetectionChain<'_>,
    truth: &mut TruthSummary,
) -> Result<()> {
    let ladder = &config.ladder;
    let table = JumpTable::new(ladder);
    let mut state = if ladder.pump_rate > 0.0 {
        let ss = ladder::steady_state(&ladder::build_generator(ladder)?)?;
        sample_state(ss.probabilities(), rng)
    } else {
        0
    };
    let mut t = t0;
    let mut jumps = 0u64;
    loop {
        let escape = table.total[state];
        if escape <= 0.0 {
            break;
        }
        t += exp_sample(rng, escape);
        if t >= t1 {
            break;
        }
        jumps += 1;
        if jumps > config.event_cap {
            return Err(Error::EventCap { cap: config.event_cap });
        }
        let jump = table.choose(state, escape, rng);
        if let Some(line) = jump.line {
            truth.emitted[line - 1] += 1;
            chain.photon(t, line, rng);
        }
        state = jump.to;
    }
    truth.jumps = jumps;
    Ok(())
}

/// One excitation pulse: inject pairs into an empty dot and follow the decay
/// (no cw pump) until it relaxes or gets stuck. `emit` receives
/// `(delay_ps, line)` for each photon.
fn run_pulse<R: Rng, F: FnMut(f64, usize, &mut R)>(
    ladder: &LadderConfig,
    pulsed: &PulsedConfig,
    rng: &mut R,
    jumps: &mut u64,
    cap: u64,
    mut emit: F,
) -> Result<()> {
    let pairs = match pulsed.pairs {
        PairInjection::Fixed(n) => n as usize,
        PairInjection::Poisson(mean) => {
            if mean > 0.0 {
                let k: f64 = Poisson::new(mean).expect("validated mean").sample(rng);
                k as usize
            } else {
                0
            }
        }
    };
    let mut state = pairs.min(ladder.n_max());
    if state == 0 {
        return Ok(());
    }
    let decay_only = ladder.with_pump_rate(0.0);
    let table = JumpTable::new(&decay_only);
    let n_max = ladder.n_max();
    let mut t = 0.0;
    let mut entered = true;
    let mut slow_rate: Option<f64> = None;
    loop {
        if entered {
            entered = false;
            slow_rate = None;
            if (1..=n_max).contains(&state) {
                if let Some(s) = pulsed.slow_components.iter().find(|s| s.level == state) {
                    if rng.random::<f64>() < s.fraction {
                        slow_rate = Some(1.0 / s.lifetime_ps);
                    }
                }
            }
        }
        // The slow variant replaces the radiative rate of this visit.
        let rate_of = |tr: &Transition| if tr.line.is_some() { slow_rate.unwrap_or(tr.rate) } else { tr.rate };
        let out = &table.out[state];
        let escape: f64 = out.iter().map(rate_of).sum();
        if escape <= 0.0 {
            return Ok(());
        }
        t += exp_sample(rng, escape);
        *jumps += 1;
        if *jumps > cap {
            return Err(Error::EventCap { cap });
        }
        let mut target = rng.random::<f64>() * escape;
        let mut jump = out[out.len() - 1];
        for tr in out {
            target -= rate_of(tr);
            if target < 0.0 {
                jump = *tr;
                break;
            }
        }
        if let Some(line) = jump.line {
            emit(t, line, rng);
        }
        if jump.to != state {
            entered = true;
        }
        state = jump.to;
        if state == 0 {
            return Ok(());
        }
    }
}

fn pile_up_warning(ladder: &LadderConfig, p: &PulsedConfig) -> Option<Warning> {
    let longest = ladder
        .lifetimes_ps
        .iter()
        .copied()
        .chain(p.slow_components.iter().map(|s| s.lifetime_ps))
        .chain(ladder.dark.and_then(|d| d.dark_lifetime_ps))
        .fold(0.0, f64::max);
    (p.period_ps < 10.0 * longest).then_some(Warning::PileUp { period_ps: p.period_ps, longest_lifetime_ps: longest })
}

/// Emission-delay histograms of a pulsed run, per line, folded into one pulse
/// period. The dot starts empty at every pulse; delays longer than the period
/// wrap around as they would on real hardware. Uses emitter truth, not the
/// detection chain.
pub fn simulate_pulsed_decay(config: &SimConfig, bin_width_ps: f64) -> Result<(DecayHistogram, Vec<Warning>)> {
    config.validate()?;
    let Excitation::Pulsed(p) = &config.excitation else {
        return Err(Error::Config("pulsed decay needs pulsed excitation".into()));
    };
    let mut hist = DecayHistogram::new(p.period_ps, bin_width_ps)?;
    let warnings: Vec<Warning> = pile_up_warning(&config.ladder, p).into_iter().collect();
    let n_pulses = libm::floor(config.acquisition_ps() / p.period_ps) as u64;
    let mut rng = shard_rng(config.seed, 0);
    let mut jumps = 0u64;
    for _ in 0..n_pulses {
        run_pulse(&config.ladder, p, &mut rng, &mut jumps, config.event_cap, |delay, line, _| {
            hist.add(LineTag::Line(line as u8), delay);
        })?;
    }
    hist.pulses = n_pulses;
    Ok((hist, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder::DEFAULT_LIFETIMES_PS;

    fn short_cw(pump_gamma1: f64, acquisition_s: f64) -> SimConfig {
        SimConfig::cw(LadderConfig::with_pump_in_gamma1(pump_gamma1), acquisition_s, 7)
    }

    #[test]
    fn no_pump_no_darks_no_records() {
        let out = simulate(&short_cw(0.0, 1e-3)).unwrap();
        assert!(out.channel_a.is_empty() && out.channel_b.is_empty());
        assert_eq!(out.truth.jumps, 0);
    }

    #[test]
    fn dark_counts_are_poisson() {
        let mut cfg = short_cw(0.0, 100.0);
        cfg.detectors[1].dark_rate_cps = 800.0;
        let out = simulate(&cfg).unwrap();
        let n = out.channel_b.len() as f64;
        assert!((n - 80_000.0).abs() < 3.0 * 80_000f64.sqrt(), "{n}");
        assert!(out.channel_a.is_empty());
        assert!(out.channel_b.iter().all(|r| r.line == LineTag::DarkCount));
    }

    #[test]
    fn reproducible_given_seed() {
        let mut cfg = short_cw(0.65, 2e-5);
        cfg.detectors[0].jitter_fwhm_ps = 99.0;
        cfg.detectors[1].dark_rate_cps = 1e7;
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed += 1;
        assert_ne!(simulate(&cfg).unwrap().channel_a, a.channel_a);
    }

    #[test]
    fn streams_sorted_and_dead_time_respected() {
        let mut cfg = short_cw(2.0, 2e-5);
        cfg.detectors[0].dead_time_ps = 500.0;
        cfg.detectors[0].jitter_fwhm_ps = 50.0;
        let out = simulate(&cfg).unwrap();
        assert!(out.channel_a.len() > 100);
        for w in out.channel_a.windows(2) {
            assert!(w[1].time_ps - w[0].time_ps >= 500.0);
        }
        for w in out.channel_b.windows(2) {
            assert!(w[1].time_ps >= w[0].time_ps);
        }
    }

    #[test]
    fn line_filter_blocks_other_lines() {
        let mut cfg = short_cw(0.65, 2e-5);
        cfg.detectors = [DetectorConfig::passing(&[2]), DetectorConfig::passing(&[1])];
        let out = simulate(&cfg).unwrap();
        assert!(out.channel_a.iter().all(|r| r.line == LineTag::Line(2)));
        assert!(out.channel_b.iter().all(|r| r.line == LineTag::Line(1)));
    }

    #[test]
    fn shards_are_independent_and_merge_sorted() {
        let cfg = short_cw(0.65, 4e-5);
        let merged = merge_shards((0..4).map(|i| simulate_shard(&cfg, i, 4).unwrap()).collect());
        assert!((merged.truth.duration_s - 4e-5).abs() < 1e-15);
        assert!(merged.channel_a.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));
        assert!(simulate_shard(&cfg, 4, 4).is_err());
    }

    #[test]
    fn pulsed_zero_pairs_is_empty() {
        let mut cfg = short_cw(0.0, 1e-6);
        cfg.excitation = Excitation::Pulsed(PulsedConfig::new(12_500.0, 0));
        let (hist, _) = simulate_pulsed_decay(&cfg, 16.0).unwrap();
        assert_eq!(hist.total(), 0);
        assert_eq!(hist.pulses, 80);
    }

    #[test]
    fn pulsed_single_pair_mean_delay() {
        let mut cfg = SimConfig::cw(LadderConfig::new(vec![251.0], 0.0), 1e6 * 12_500e-12, 11);
        cfg.excitation = Excitation::Pulsed(PulsedConfig::new(12_500.0, 1));
        let (hist, warnings) = simulate_pulsed_decay(&cfg, 1.0).unwrap();
        assert!(warnings.is_empty());
        let mean = hist.mean_delay(1).unwrap();
        assert!((mean - 251.0).abs() < 2.0, "{mean}");
    }

    #[test]
    fn pile_up_is_flagged() {
        let mut cfg = short_cw(0.0, 1e-7);
        let mut p = PulsedConfig::new(12_500.0, 2);
        p.slow_components.push(SlowComponent { level: 1, fraction: 0.5, lifetime_ps: 6220.0 });
        cfg.excitation = Excitation::Pulsed(p);
        let (_, warnings) = simulate_pulsed_decay(&cfg, 16.0).unwrap();
        assert_eq!(warnings, vec![Warning::PileUp { period_ps: 12_500.0, longest_lifetime_ps: 6220.0 }]);
    }

    #[test]
    fn amplitude_ratio_conversion() {
        let s = SlowComponent::from_amplitude_ratio(1, 0.05, DEFAULT_LIFETIMES_PS[0], 6220.0);
        // A'/A = (q/T') / ((1-q)/T)
        let ratio = (s.fraction / 6220.0) / ((1.0 - s.fraction) / 251.0);
        assert!((ratio - 0.05).abs() < 1e-12);
    }

    #[test]
    fn event_cap_enforced() {
        let mut cfg = short_cw(0.65, 1e-6);
        cfg.event_cap = 10;
        assert_eq!(simulate(&cfg).unwrap_err(), Error::EventCap { cap: 10 });
    }
}
