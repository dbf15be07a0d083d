//! Gaussian instrument response of the two-detector chain.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::correlator::{correlate, CorrelationHistogram, CorrelationMode, Window};
use crate::sim::FWHM_PER_SIGMA;
use crate::{Error, Result, PS_PER_S};

pub const DEFAULT_IRF_FWHM_PS: f64 = 140.0;

/// Kernel half-width in units of sigma.
const KERNEL_HALF_WIDTH_SIGMA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Irf {
    fwhm_ps: f64,
}

impl Default for Irf {
    fn default() -> Self {
        Self { fwhm_ps: DEFAULT_IRF_FWHM_PS }
    }
}

impl Irf {
    pub fn new(fwhm_ps: f64) -> Result<Self> {
        if !(fwhm_ps.is_finite() && fwhm_ps > 0.0) {
            return Err(Error::Config(format!("IRF FWHM must be > 0 ps (got {fwhm_ps})")));
        }
        Ok(Self { fwhm_ps })
    }

    pub fn fwhm_ps(&self) -> f64 {
        self.fwhm_ps
    }

    pub fn sigma_ps(&self) -> f64 {
        self.fwhm_ps / FWHM_PER_SIGMA
    }

    /// Grid points the kernel reaches on each side at `step_ps`.
    pub fn kernel_radius(&self, step_ps: f64) -> usize {
        libm::ceil(KERNEL_HALF_WIDTH_SIGMA * self.sigma_ps() / step_ps) as usize
    }

    /// Normalized Gaussian sampled at multiples of `step_ps`, centre in the
    /// middle. Fails if the step is coarser than half a sigma.
    pub fn kernel(&self, step_ps: f64) -> Result<Vec<f64>> {
        let sigma = self.sigma_ps();
        if !(step_ps > 0.0) || step_ps > sigma / 2.0 {
            return Err(Error::Resolution { step_ps, half_sigma_ps: sigma / 2.0 });
        }
        let radius = self.kernel_radius(step_ps) as i64;
        let mut k: Vec<f64> = (-radius..=radius)
            .map(|j| {
                let x = j as f64 * step_ps / sigma;
                libm::exp(-0.5 * x * x)
            })
            .collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        Ok(k)
    }
}

/// Per-channel FWHM when a total resolution is split equally between two
/// detectors in quadrature.
pub fn quadrature_share(total_fwhm_ps: f64) -> f64 {
    total_fwhm_ps / core::f64::consts::SQRT_2
}

/// Combined FWHM of independent Gaussian contributions.
pub fn quadrature_sum(fwhms_ps: &[f64]) -> f64 {
    libm::sqrt(fwhms_ps.iter().map(|f| f * f).sum())
}

/// Step of a uniform grid, or an error if the spacing varies by more than
/// 1e-9 of the step.
pub fn uniform_step(grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::NonUniformGrid);
    }
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::NonUniformGrid);
    }
    for (i, &x) in grid.iter().enumerate() {
        if libm::fabs(x - (grid[0] + i as f64 * step)) > 1e-9 * step * grid.len() as f64 {
            return Err(Error::NonUniformGrid);
        }
    }
    Ok(step)
}

/// Convolve a curve sampled on a uniform grid with the IRF. Values beyond the
/// ends are taken equal to the end values.
pub fn convolve(grid: &[f64], values: &[f64], irf: &Irf) -> Result<Vec<f64>> {
    if grid.len() != values.len() {
        return Err(Error::Config(format!("{} grid points but {} values", grid.len(), values.len())));
    }
    let step = uniform_step(grid)?;
    convolve_uniform(values, step, irf)
}

/// As [`convolve`] when the step is already known.
pub fn convolve_uniform(values: &[f64], step_ps: f64, irf: &Irf) -> Result<Vec<f64>> {
    let kernel = irf.kernel(step_ps)?;
    let radius = (kernel.len() / 2) as i64;
    let n = values.len() as i64;
    if n == 0 {
        return Ok(Vec::new());
    }
    let at = |i: i64| values[i.clamp(0, n - 1) as usize];
    Ok((0..n)
        .map(|i| kernel.iter().enumerate().map(|(j, k)| k * at(i + j as i64 - radius)).sum())
        .collect())
}

/// Result of correlating a delta-like pulse train seen by both detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionMeasurement {
    pub histogram: CorrelationHistogram,
    /// Centroids of the peaks at `-period`, `0` and `+period`.
    pub peak_centers_ps: [f64; 3],
    /// FWHM of the central peak: Gaussian moment estimate with Sheppard's
    /// correction for the binning.
    pub central_fwhm_ps: f64,
    /// Separation of neighbouring peaks at histogram resolution, i.e. the
    /// centroid spacing rounded to whole bins.
    pub peak_spacing_ps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionSetup {
    pub period_ps: f64,
    pub pulses: u64,
    /// Per-channel jitter FWHM, A then B.
    pub jitter_fwhm_ps: [f64; 2],
    /// Extra spread on the stop channel, e.g. grating dispersion.
    pub dispersion_fwhm_ps: f64,
    pub bin_width_ps: f64,
    pub seed: u64,
}

impl ResolutionSetup {
    /// 80 MHz train, 140 ps total resolution shared equally by the two channels.
    pub fn ti_sapphire(pulses: u64, seed: u64) -> Self {
        let share = quadrature_share(DEFAULT_IRF_FWHM_PS);
        Self {
            period_ps: period_from_rep_rate_mhz(80.0),
            pulses,
            jitter_fwhm_ps: [share, share],
            dispersion_fwhm_ps: 0.0,
            bin_width_ps: 4.0,
            seed,
        }
    }
}

pub fn period_from_rep_rate_mhz(mhz: f64) -> f64 {
    PS_PER_S / (mhz * 1e6)
}

/// Every pulse gives one detection on each channel, smeared by that channel's
/// jitter; the two streams are then correlated over ±1.5 periods.
pub fn simulate_resolution_measurement(setup: &ResolutionSetup) -> Result<ResolutionMeasurement> {
    let p = setup.period_ps;
    if !(p > 0.0) || setup.pulses < 3 {
        return Err(Error::Config("need period > 0 and at least 3 pulses".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(setup.seed);
    let sig_a = setup.jitter_fwhm_ps[0] / FWHM_PER_SIGMA;
    let sig_b = quadrature_sum(&[setup.jitter_fwhm_ps[1], setup.dispersion_fwhm_ps]) / FWHM_PER_SIGMA;
    let mut a = Vec::with_capacity(setup.pulses as usize);
    let mut b = Vec::with_capacity(setup.pulses as usize);
    for i in 0..setup.pulses {
        // Offset by one period so jittered times stay positive.
        let t = (i + 1) as f64 * p;
        let za: f64 = StandardNormal.sample(&mut rng);
        let zb: f64 = StandardNormal.sample(&mut rng);
        a.push(t + sig_a * za);
        b.push(t + sig_b * zb);
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let window = Window::symmetric(1.5 * p, setup.bin_width_ps)?;
    let acquisition_s = (setup.pulses + 2) as f64 * p / PS_PER_S;
    let histogram = correlate(&a, &b, &window, CorrelationMode::Full, acquisition_s)?;

    let centers = histogram.bin_centers();
    let w = setup.bin_width_ps;
    let moments = |k: f64| {
        let (mut n, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (c, &cnt) in centers.iter().zip(&histogram.counts) {
            if libm::fabs(c - k * p) < p / 2.0 {
                let x = c - k * p;
                let n_i = cnt as f64;
                n += n_i;
                s1 += n_i * x;
                s2 += n_i * x * x;
            }
        }
        let mean = s1 / n;
        (k * p + mean, s2 / n - mean * mean)
    };
    let (c_minus, _) = moments(-1.0);
    let (c0, var0) = moments(0.0);
    let (c_plus, _) = moments(1.0);
    let sigma = libm::sqrt((var0 - w * w / 12.0).max(0.0));
    let spacing = libm::round((c_plus - c_minus) / (2.0 * w)) * w;
    Ok(ResolutionMeasurement {
        histogram,
        peak_centers_ps: [c_minus, c0, c_plus],
        central_fwhm_ps: sigma * FWHM_PER_SIGMA,
        peak_spacing_ps: spacing,
    })
}
