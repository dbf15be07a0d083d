//! Coincidence histograms from two timestamp streams.
//!
//! Delays are `tau = t_stop - t_start`. Full mode counts every pair inside the
//! window (the unbiased estimator of `g2`); start-stop mode counts only the
//! first stop at or after `t_start + tau_min`, the way a TCSPC card with a
//! delay line does. Start-stop normalization is only valid when
//! `rate * window << 1`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::sim::{LineTag, PhotonRecord};
use crate::{Error, Result, PS_PER_S};

pub const DEFAULT_BIN_WIDTH_PS: f64 = 49.0;
pub const DEFAULT_HALF_WINDOW_PS: f64 = 3000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMode {
    Full,
    StartStop,
}

/// Uniform binning of `[tau_min, tau_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    tau_min_ps: f64,
    bin_width_ps: f64,
    n_bins: usize,
    /// Odd bin count with a bin centred on `tau = 0`.
    centered: bool,
}

impl Window {
    /// `2m + 1` bins centred on zero with `m = round(half_width / bin_width)`.
    /// Bin edges sit at `±(j + 1/2) w`; a delay exactly on an edge goes to the
    /// bin farther from zero, so the binning is mirror-symmetric.
    pub fn symmetric(half_width_ps: f64, bin_width_ps: f64) -> Result<Self> {
        if !(bin_width_ps.is_finite() && bin_width_ps > 0.0) {
            return Err(Error::Window(format!("bin width must be > 0 (got {bin_width_ps})")));
        }
        if !(half_width_ps.is_finite() && half_width_ps >= 0.0) {
            return Err(Error::Window(format!("half width must be >= 0 (got {half_width_ps})")));
        }
        let m = libm::round(half_width_ps / bin_width_ps) as usize;
        Ok(Self {
            tau_min_ps: -(m as f64 + 0.5) * bin_width_ps,
            bin_width_ps,
            n_bins: 2 * m + 1,
            centered: true,
        })
    }

    /// Bins of `[tau_min, tau_max)`; the span must be a whole number of bins.
    pub fn new(tau_min_ps: f64, tau_max_ps: f64, bin_width_ps: f64) -> Result<Self> {
        if !(bin_width_ps.is_finite() && bin_width_ps > 0.0) || !(tau_max_ps > tau_min_ps) {
            return Err(Error::Window(format!(
                "need tau_max > tau_min and bin width > 0 (got [{tau_min_ps}, {tau_max_ps}], {bin_width_ps})"
            )));
        }
        let n = (tau_max_ps - tau_min_ps) / bin_width_ps;
        let n_bins = libm::round(n);
        if libm::fabs(n - n_bins) > 1e-9 * n_bins.max(1.0) {
            return Err(Error::Window(format!("span {} ps is not a multiple of {bin_width_ps} ps", tau_max_ps - tau_min_ps)));
        }
        Ok(Self { tau_min_ps, bin_width_ps, n_bins: n_bins as usize, centered: false })
    }

    pub fn tau_min_ps(&self) -> f64 {
        self.tau_min_ps
    }

    pub fn tau_max_ps(&self) -> f64 {
        self.tau_min_ps + self.n_bins as f64 * self.bin_width_ps
    }

    pub fn bin_width_ps(&self) -> f64 {
        self.bin_width_ps
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        if self.centered {
            let m = (self.n_bins / 2) as f64;
            (i as f64 - m) * self.bin_width_ps
        } else {
            self.tau_min_ps + (i as f64 + 0.5) * self.bin_width_ps
        }
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.bin_center(i)).collect()
    }

    pub fn index(&self, tau: f64) -> Option<usize> {
        if self.centered {
            let m = (self.n_bins / 2) as f64;
            // libm::round rounds halves away from zero: mirror symmetric.
            let k = libm::round(tau / self.bin_width_ps);
            if libm::fabs(k) <= m {
                Some((k + m) as usize)
            } else {
                None
            }
        } else {
            let x = libm::floor((tau - self.tau_min_ps) / self.bin_width_ps);
            if x >= 0.0 && x < self.n_bins as f64 {
                Some(x as usize)
            } else {
                None
            }
        }
    }

    /// The same window with a different bin width, if it partitions the same
    /// span.
    pub fn rebinned(&self, bin_width_ps: f64) -> Result<Self> {
        Self::new(self.tau_min_ps, self.tau_max_ps(), bin_width_ps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub window: Window,
    pub counts: Vec<u64>,
    pub n_c: u64,
    pub rate_start_cps: f64,
    pub rate_stop_cps: f64,
    pub acquisition_s: f64,
    pub mode: CorrelationMode,
}

impl CorrelationHistogram {
    pub fn bin_width_ps(&self) -> f64 {
        self.window.bin_width_ps()
    }

    pub fn tau_min_ps(&self) -> f64 {
        self.window.tau_min_ps()
    }

    pub fn tau_max_ps(&self) -> f64 {
        self.window.tau_max_ps()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.window.bin_centers()
    }

    /// Coincidences per bin expected from uncorrelated streams at the
    /// measured rates, `n_start n_stop Δ T`.
    pub fn accidental_level(&self) -> f64 {
        self.rate_start_cps * self.rate_stop_cps * self.bin_width_ps() / PS_PER_S * self.acquisition_s
    }

    /// Accumulate another acquisition taken with the same window and mode.
    /// Rates are combined weighted by duration.
    pub fn merge(&mut self, other: &CorrelationHistogram) -> Result<()> {
        if self.window != other.window || self.mode != other.mode {
            return Err(Error::Window("cannot merge histograms with different windows or modes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_c += other.n_c;
        let total = self.acquisition_s + other.acquisition_s;
        if total > 0.0 {
            self.rate_start_cps =
                (self.rate_start_cps * self.acquisition_s + other.rate_start_cps * other.acquisition_s) / total;
            self.rate_stop_cps =
                (self.rate_stop_cps * self.acquisition_s + other.rate_stop_cps * other.acquisition_s) / total;
        }
        self.acquisition_s = total;
        Ok(())
    }
}

fn check_sorted(times: &[f64]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] >= w[0]) {
            return Err(Error::Unsorted { index: i + 1 });
        }
    }
    Ok(())
}

pub fn times(records: &[PhotonRecord]) -> Vec<f64> {
    records.iter().map(|r| r.time_ps).collect()
}

/// Build the coincidence histogram of two sorted streams. Rates are measured
/// as events / `acquisition_s`.
pub fn correlate(
    start: &[f64],
    stop: &[f64],
    window: &Window,
    mode: CorrelationMode,
    acquisition_s: f64,
) -> Result<CorrelationHistogram> {
    check_sorted(start)?;
    check_sorted(stop)?;
    if !(acquisition_s.is_finite() && acquisition_s > 0.0) {
        return Err(Error::Config(format!("acquisition time must be > 0 s (got {acquisition_s})")));
    }
    let mut counts = vec![0u64; window.n_bins()];
    let w = window.bin_width_ps();
    let (lo_edge, hi_edge) = (window.tau_min_ps() - w, window.tau_max_ps() + w);
    let mut lo = 0usize;
    for &ts in start {
        while lo < stop.len() && stop[lo] - ts < lo_edge {
            lo += 1;
        }
        match mode {
            CorrelationMode::Full => {
                for &tp in &stop[lo..] {
                    let tau = tp - ts;
                    if tau > hi_edge {
                        break;
                    }
                    if let Some(i) = window.index(tau) {
                        counts[i] += 1;
                    }
                }
            }
            CorrelationMode::StartStop => {
                // First stop whose delay reaches the window.
                let first = stop[lo..]
                    .iter()
                    .map(|&tp| tp - ts)
                    .take_while(|&tau| tau <= hi_edge)
                    .find(|&tau| window.index(tau).is_some() || tau >= window.tau_max_ps());
                if let Some(i) = first.and_then(|tau| window.index(tau)) {
                    counts[i] += 1;
                }
            }
        }
    }
    let n_c = counts.iter().sum();
    Ok(CorrelationHistogram {
        window: *window,
        counts,
        n_c,
        rate_start_cps: start.len() as f64 / acquisition_s,
        rate_stop_cps: stop.len() as f64 / acquisition_s,
        acquisition_s,
        mode,
    })
}

/// `g2` per bin with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedHistogram {
    pub tau_ps: Vec<f64>,
    pub g2: Vec<f64>,
    pub g2_err: Vec<f64>,
}

impl NormalizedHistogram {
    pub fn len(&self) -> usize {
        self.g2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g2.is_empty()
    }
}

/// Divide by the accidental level at the histogram's measured rates.
/// Errors are `sqrt(counts)` propagated.
pub fn normalize(h: &CorrelationHistogram) -> Result<NormalizedHistogram> {
    normalize_with_rates(h, h.rate_start_cps, h.rate_stop_cps)
}

/// As [`normalize`], with externally supplied (e.g. model) channel rates.
pub fn normalize_with_rates(h: &CorrelationHistogram, rate_start_cps: f64, rate_stop_cps: f64) -> Result<NormalizedHistogram> {
    if !(rate_start_cps > 0.0 && rate_stop_cps > 0.0) {
        return Err(Error::Normalization(format!("channel rates {rate_start_cps} and {rate_stop_cps} cps")));
    }
    if !(h.acquisition_s > 0.0) {
        return Err(Error::Normalization("acquisition time is zero".into()));
    }
    let denom = rate_start_cps * rate_stop_cps * h.bin_width_ps() / PS_PER_S * h.acquisition_s;
    let g2 = h.counts.iter().map(|&c| c as f64 / denom).collect();
    let g2_err = h.counts.iter().map(|&c| libm::sqrt(c as f64) / denom).collect();
    Ok(NormalizedHistogram { tau_ps: h.bin_centers(), g2, g2_err })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRates {
    pub total_cps: f64,
    pub background_cps: f64,
}

impl ChannelRates {
    pub fn new(total_cps: f64, background_cps: f64) -> Self {
        Self { total_cps, background_cps }
    }

    /// Signal fraction `(n - n_d) / n`.
    pub fn signal_fraction(&self, name: &'static str) -> Result<f64> {
        let (n, nd) = (self.total_cps, self.background_cps);
        if !(n > 0.0) || !(nd >= 0.0) || nd > n {
            return Err(Error::Config(format!("channel {name}: need 0 <= n_d <= n and n > 0 (got n={n}, n_d={nd})")));
        }
        if nd == n {
            return Err(Error::AllBackground { channel: name });
        }
        Ok((n - nd) / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundRates {
    pub start: ChannelRates,
    pub stop: ChannelRates,
}

impl BackgroundRates {
    pub fn new(start: ChannelRates, stop: ChannelRates) -> Self {
        Self { start, stop }
    }

    /// `rho_start * rho_stop`.
    pub fn contrast(&self) -> Result<f64> {
        Ok(self.start.signal_fraction("start")? * self.stop.signal_fraction("stop")?)
    }

    /// Measured to true: `1 + (g - 1) / (rho_start rho_stop)`.
    pub fn correct(&self, g_measured: f64) -> Result<f64> {
        Ok(1.0 + (g_measured - 1.0) / self.contrast()?)
    }

    /// True to measured: `1 + rho_start rho_stop (g - 1)`.
    pub fn uncorrect(&self, g_true: f64) -> Result<f64> {
        Ok(1.0 + self.contrast()? * (g_true - 1.0))
    }
}

pub fn background_correct(g: &NormalizedHistogram, b: &BackgroundRates) -> Result<NormalizedHistogram> {
    let rho = b.contrast()?;
    Ok(NormalizedHistogram {
        tau_ps: g.tau_ps.clone(),
        g2: g.g2.iter().map(|x| 1.0 + (x - 1.0) / rho).collect(),
        g2_err: g.g2_err.iter().map(|e| e / rho).collect(),
    })
}

/// Expected measurement from a background-free curve.
pub fn background_apply(g_true: &[f64], b: &BackgroundRates) -> Result<Vec<f64>> {
    let rho = b.contrast()?;
    Ok(g_true.iter().map(|x| 1.0 + rho * (x - 1.0)).collect())
}

/// Delay-after-pulse histograms per line tag over one pulse period.
/// `ceil(period / bin)` bins; when the period is not a multiple of the bin
/// width the last bin is truncated at the period.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayHistogram {
    pub period_ps: f64,
    pub bin_width_ps: f64,
    pub n_bins: usize,
    pub lines: BTreeMap<LineTag, Vec<u64>>,
    /// Number of pulses behind the data, when known.
    pub pulses: u64,
}

impl DecayHistogram {
    pub fn new(period_ps: f64, bin_width_ps: f64) -> Result<Self> {
        if !(period_ps.is_finite() && period_ps > 0.0 && bin_width_ps.is_finite() && bin_width_ps > 0.0) {
            return Err(Error::Config(format!("period {period_ps} ps and bin {bin_width_ps} ps must be > 0")));
        }
        let n_bins = libm::ceil(period_ps / bin_width_ps - 1e-9) as usize;
        Ok(Self { period_ps, bin_width_ps, n_bins, lines: BTreeMap::new(), pulses: 0 })
    }

    /// Add an event; the delay is folded into `[0, period)`.
    pub fn add(&mut self, tag: LineTag, delay_ps: f64) {
        let mut d = libm::fmod(delay_ps, self.period_ps);
        if d < 0.0 {
            d += self.period_ps;
        }
        let i = ((d / self.bin_width_ps) as usize).min(self.n_bins - 1);
        let n = self.n_bins;
        self.lines.entry(tag).or_insert_with(|| vec![0; n])[i] += 1;
    }

    pub fn counts(&self, tag: LineTag) -> Option<&[u64]> {
        self.lines.get(&tag).map(Vec::as_slice)
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width_ps
    }

    /// Bins lying entirely inside the period.
    pub fn complete_bins(&self) -> usize {
        libm::floor(self.period_ps / self.bin_width_ps + 1e-9) as usize
    }

    pub fn total(&self) -> u64 {
        self.lines.values().flatten().sum()
    }

    /// Mean delay of a line from bin centres.
    pub fn mean_delay(&self, line: u8) -> Option<f64> {
        let c = self.counts(LineTag::Line(line))?;
        let n: u64 = c.iter().sum();
        if n == 0 {
            return None;
        }
        let s: f64 = c.iter().enumerate().map(|(i, &k)| k as f64 * self.bin_center(i)).sum();
        Some(s / n as f64)
    }
}

/// Fold pulsed-mode timestamps modulo the pulse period, one histogram per tag.
pub fn decay_histogram(records: &[PhotonRecord], period_ps: f64, bin_width_ps: f64) -> Result<DecayHistogram> {
    let mut h = DecayHistogram::new(period_ps, bin_width_ps)?;
    for r in records {
        h.add(r.line, r.time_ps);
    }
    Ok(h)
}
