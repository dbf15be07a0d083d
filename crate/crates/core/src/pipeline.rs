//! Model correlation curves as a detector would record them: ladder `g2`,
//! smeared by the instrument response, diluted by background, and averaged
//! over histogram bins.

use alloc::format;
use alloc::vec::Vec;

use crate::correlator::{background_apply, BackgroundRates, Window};
use crate::irf::{uniform_step, Irf};
use crate::ladder::{g2_auto, g2_cross, LadderConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    Auto { line: usize },
    Cross { start_line: usize, stop_line: usize },
}

impl Correlation {
    pub fn is_cross(&self) -> bool {
        matches!(self, Correlation::Cross { .. })
    }

    /// Ideal `g2` at each delay. For cross-correlations the sign of zero picks
    /// the side of the jump.
    pub fn ideal(&self, config: &LadderConfig, taus: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Correlation::Auto { line } => g2_auto(config, line, taus),
            Correlation::Cross { start_line, stop_line } => g2_cross(config, start_line, stop_line, taus),
        }
    }
}

/// A model curve at every stage of the detection chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCurve {
    /// For cross-correlations a grid point at zero appears twice, as `-0.0`
    /// (the `0-` limit) and `+0.0` (the `0+` limit).
    pub tau_ps: Vec<f64>,
    pub raw: Vec<f64>,
    /// After IRF convolution, if an IRF was given.
    pub irf: Option<Vec<f64>>,
    /// After IRF (if any) and background dilution, if rates were given.
    pub background: Option<Vec<f64>>,
}

impl ModelCurve {
    /// The last stage that was computed.
    pub fn observed(&self) -> &[f64] {
        self.background.as_deref().or(self.irf.as_deref()).unwrap_or(&self.raw)
    }
}

/// Ideal curve on a padded uniform grid, convolved if `irf` is given. The jump
/// of a cross-correlation at zero enters the convolution as its midpoint.
fn smeared(config: &LadderConfig, kind: Correlation, grid: &[f64], step: f64, irf: Option<&Irf>) -> Result<Vec<f64>> {
    let Some(irf) = irf else {
        return kind.ideal(config, grid);
    };
    let pad = irf.kernel_radius(step);
    let padded: Vec<f64> = (0..grid.len() + 2 * pad)
        .map(|i| grid[0] + (i as f64 - pad as f64) * step)
        .map(|t| if libm::fabs(t) < 1e-9 * step { 0.0 } else { t })
        .collect();
    let mut values = kind.ideal(config, &padded)?;
    if kind.is_cross() {
        if let Some(z) = padded.iter().position(|&t| t == 0.0) {
            let below = kind.ideal(config, &[-0.0])?[0];
            values[z] = 0.5 * (values[z] + below);
        }
    }
    let conv = crate::irf::convolve_uniform(&values, step, irf)?;
    Ok(conv[pad..pad + grid.len()].to_vec())
}

/// Evaluate the model on a uniform grid (ps).
pub fn model_curve(
    config: &LadderConfig,
    kind: Correlation,
    grid: &[f64],
    irf: Option<&Irf>,
    background: Option<&BackgroundRates>,
) -> Result<ModelCurve> {
    let step = uniform_step(grid)?;
    // Snap points that are zero up to rounding.
    let grid: Vec<f64> = grid.iter().map(|&t| if libm::fabs(t) < 1e-9 * step { 0.0 } else { t }).collect();
    let raw_plus = kind.ideal(config, &grid)?;
    let smooth = match irf {
        Some(i) => Some(smeared(config, kind, &grid, step, Some(i))?),
        None => None,
    };
    let diluted = match background {
        Some(b) => Some(background_apply(smooth.as_deref().unwrap_or(&raw_plus), b)?),
        None => None,
    };
    let zero = if kind.is_cross() { grid.iter().position(|&t| t == 0.0) } else { None };
    let Some(z) = zero else {
        return Ok(ModelCurve { tau_ps: grid, raw: raw_plus, irf: smooth, background: diluted });
    };
    // Split the zero row into its two one-sided limits.
    let minus = kind.ideal(config, &[-0.0])?[0];
    let dup = |v: &[f64], at_minus: f64| {
        let mut out = Vec::with_capacity(v.len() + 1);
        out.extend_from_slice(&v[..z]);
        out.push(at_minus);
        out.extend_from_slice(&v[z..]);
        out
    };
    let mut tau = dup(&grid, -0.0);
    tau[z + 1] = 0.0;
    let raw = dup(&raw_plus, minus);
    // Away from the raw curve, the jump is continuous: the same value twice.
    let smooth = smooth.map(|v| dup(&v, v[z]));
    let diluted = match background {
        Some(b) => {
            let base = smooth.as_deref().unwrap_or(&raw);
            Some(background_apply(base, b)?)
        }
        None => None,
    };
    Ok(ModelCurve { tau_ps: tau, raw, irf: smooth, background: diluted })
}

/// Model histogram in `g2` units: the observed curve averaged over each bin of
/// `window`, using `oversample` sub-bin midpoints (raised if needed so the
/// sub-grid resolves the IRF, and rounded up to even so no midpoint lands on
/// a bin centre).
pub fn binned_model(
    config: &LadderConfig,
    kind: Correlation,
    window: &Window,
    irf: Option<&Irf>,
    background: Option<&BackgroundRates>,
    oversample: usize,
) -> Result<Vec<f64>> {
    if oversample == 0 {
        return Err(Error::Config("oversample must be >= 1".into()));
    }
    let w = window.bin_width_ps();
    let mut os = oversample;
    if let Some(i) = irf {
        os = os.max(libm::ceil(2.0 * w / i.sigma_ps()) as usize);
    }
    os += os % 2;
    let h = w / os as f64;
    let n = window.n_bins();
    let fine: Vec<f64> = (0..n * os)
        .map(|j| window.tau_min_ps() + (j as f64 + 0.5) * h)
        .collect();
    let values = smeared(config, kind, &fine, h, irf)?;
    let mut binned: Vec<f64> = values.chunks(os).map(|c| c.iter().sum::<f64>() / os as f64).collect();
    if binned.len() != n {
        return Err(Error::Window(format!("expected {n} bins, built {}", binned.len())));
    }
    if let Some(b) = background {
        binned = background_apply(&binned, b)?;
    }
    Ok(binned)
}
