//! Weighted nonlinear least squares and the fits built on it.
//!
//! The engine is a damped Gauss-Newton (Levenberg-Marquardt) iteration with a
//! central-difference Jacobian and Marquardt's diagonal scaling, which makes it
//! invariant to rescaling of individual parameters.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::correlator::{DecayHistogram, NormalizedHistogram};
use crate::ladder::{saturation_curve, LadderConfig};
use crate::linalg::Matrix;
use crate::sim::LineTag;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when no parameter moves by more than this fraction.
    pub relative_step_tol: f64,
    /// Stop when every Jacobian column is this close to orthogonal to the
    /// residual (cosine of the angle).
    pub gradient_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, relative_step_tol: 1e-8, gradient_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn clamp(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Sum of squared weighted residuals at the optimum.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest residual/Jacobian-column cosine at the optimum.
    pub gradient_norm: f64,
    /// Residual norm after the start and after every accepted step.
    pub history: Vec<f64>,
    pub data_points: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.values[i], self.std_errors[i]))
    }

    pub fn value(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |(v, _)| v)
    }

    pub fn std_error(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |(_, e)| e)
    }

    /// `residual_norm / (points - parameters)`.
    pub fn reduced_chi2(&self) -> f64 {
        let dof = self.data_points.saturating_sub(self.values.len()).max(1);
        self.residual_norm / dof as f64
    }
}

fn chi2(model: &[f64], y: &[f64], sigma: &[f64]) -> f64 {
    model.iter().zip(y).zip(sigma).map(|((m, y), s)| ((y - m) / s) * ((y - m) / s)).sum()
}

/// Minimize `sum(((y - f(p)) / sigma)^2)`. `model` maps a parameter vector to
/// predictions at every data point.
///
/// Non-convergence is reported through `converged`, not as an error; a
/// singular curvature matrix at the optimum is [`Error::DegenerateFit`].
pub fn fit_least_squares<F>(
    mut model: F,
    y: &[f64],
    sigma: &[f64],
    init: &[f64],
    names: &[&str],
    bounds: Option<&Bounds>,
    options: &FitOptions,
) -> Result<FitResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n_par = init.len();
    if names.len() != n_par {
        return Err(Error::Config(format!("{} names for {n_par} parameters", names.len())));
    }
    if y.len() != sigma.len() {
        return Err(Error::Config("y and sigma lengths differ".into()));
    }
    if y.len() < n_par {
        return Err(Error::InsufficientData(format!("{} points for {n_par} parameters", y.len())));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Config("all sigma must be finite and > 0".into()));
    }
    if let Some(b) = bounds {
        if b.lower.len() != n_par || b.upper.len() != n_par {
            return Err(Error::Config("bounds do not match parameter count".into()));
        }
    }
    // Finite-difference scale: relative to the parameter, or to its starting
    // magnitude (1 if it starts at zero).
    let typical: Vec<f64> = init.iter().map(|v| if *v != 0.0 { libm::fabs(*v) } else { 1.0 }).collect();

    let mut p = init.to_vec();
    if let Some(b) = bounds {
        b.clamp(&mut p);
    }
    let mut f = model(&p)?;
    let mut cost = chi2(&f, y, sigma);
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_cos = f64::INFINITY;

    while iterations < options.max_iterations {
        iterations += 1;
        let jac = jacobian(&mut model, &p, &f, sigma, &typical, bounds)?;
        let resid: Vec<f64> = y.iter().zip(&f).zip(sigma).map(|((y, m), s)| (y - m) / s).collect();
        let (jtj, jtr) = normal_equations(&jac, &resid, n_par);
        grad_cos = gradient_cosine(&jtj, &jtr, cost);
        if cost <= 1e-30 * y.len() as f64 || grad_cos < options.gradient_tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n_par {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(delta) = a.solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(&delta).map(|(a, d)| a + d).collect();
            if let Some(b) = bounds {
                b.clamp(&mut trial);
            }
            let f_trial = match model(&trial) {
                Ok(v) if v.iter().all(|x| x.is_finite()) => v,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial_cost = chi2(&f_trial, y, sigma);
            if trial_cost <= cost {
                let rel_step = p
                    .iter()
                    .zip(&trial)
                    .zip(&typical)
                    .map(|((a, b), t)| libm::fabs(b - a) / libm::fabs(*a).max(1e-12 * t))
                    .fold(0.0, f64::max);
                p = trial;
                f = f_trial;
                cost = trial_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_step < options.relative_step_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: the point is stationary to
            // working precision.
            converged = grad_cos < 1e-6;
            break;
        }
        if converged {
            break;
        }
    }

    let jac = jacobian(&mut model, &p, &f, sigma, &typical, bounds)?;
    let resid: Vec<f64> = y.iter().zip(&f).zip(sigma).map(|((y, m), s)| (y - m) / s).collect();
    let (jtj, jtr) = normal_equations(&jac, &resid, n_par);
    if !(grad_cos.is_finite()) {
        grad_cos = gradient_cosine(&jtj, &jtr, cost);
    }
    let std_errors = covariance_diagonal(&jtj)?;
    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        values: p,
        std_errors,
        residual_norm: cost,
        converged,
        iterations,
        gradient_norm: grad_cos,
        history,
        data_points: y.len(),
    })
}

/// Weighted Jacobian `d f_i / d p_j / sigma_i`, one column per parameter.
fn jacobian<F>(
    model: &mut F,
    p: &[f64],
    f0: &[f64],
    sigma: &[f64],
    typical: &[f64],
    bounds: Option<&Bounds>,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut cols = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let h = 1e-6 * libm::fabs(p[j]).max(1e-6 * typical[j]);
        let (lo, hi) = bounds.map_or((f64::NEG_INFINITY, f64::INFINITY), |b| (b.lower[j], b.upper[j]));
        let mut plus = p.to_vec();
        let mut minus = p.to_vec();
        let col: Vec<f64> = if p[j] + h <= hi && p[j] - h >= lo {
            plus[j] += h;
            minus[j] -= h;
            let fp = model(&plus)?;
            let fm = model(&minus)?;
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        } else if p[j] + h <= hi {
            plus[j] += h;
            let fp = model(&plus)?;
            fp.iter().zip(f0).map(|(a, b)| (a - b) / h).collect()
        } else {
            minus[j] -= h;
            let fm = model(&minus)?;
            f0.iter().zip(&fm).map(|(a, b)| (a - b) / h).collect()
        };
        cols.push(col.iter().zip(sigma).map(|(d, s)| d / s).collect());
    }
    Ok(cols)
}

fn normal_equations(jac: &[Vec<f64>], resid: &[f64], n_par: usize) -> (Matrix, Vec<f64>) {
    let mut jtj = Matrix::zeros(n_par, n_par);
    let mut jtr = vec![0.0; n_par];
    for a in 0..n_par {
        jtr[a] = jac[a].iter().zip(resid).map(|(x, r)| x * r).sum();
        for b in a..n_par {
            let v: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
            jtj[(a, b)] = v;
            jtj[(b, a)] = v;
        }
    }
    (jtj, jtr)
}

fn gradient_cosine(jtj: &Matrix, jtr: &[f64], cost: f64) -> f64 {
    jtr.iter()
        .enumerate()
        .map(|(j, g)| {
            let col = libm::sqrt(jtj[(j, j)] * cost);
            if col > 0.0 {
                libm::fabs(*g) / col
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Square roots of the diagonal of `(J^T J)^-1`, computed in correlation form
/// so parameter scales do not affect the singularity test.
fn covariance_diagonal(jtj: &Matrix) -> Result<Vec<f64>> {
    let n = jtj.rows();
    let d: Vec<f64> = (0..n).map(|i| libm::sqrt(jtj[(i, i)])).collect();
    if d.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::DegenerateFit);
    }
    let mut corr = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            corr[(i, j)] = jtj[(i, j)] / (d[i] * d[j]);
        }
    }
    let inv = corr.inverse().ok_or(Error::DegenerateFit)?;
    (0..n)
        .map(|i| {
            let v = inv[(i, i)];
            if !(v > 0.0) || v > 1e12 {
                Err(Error::DegenerateFit)
            } else {
                Ok(libm::sqrt(v) / d[i])
            }
        })
        .collect()
}

/// Poisson weights `sqrt(max(counts, 1))`.
pub fn poisson_sigma(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|c| libm::sqrt(c.max(1.0))).collect()
}

/// Straight-line least squares of `ln(y)` on `t`, skipping `y <= 0`.
/// Returns `(intercept, slope)`.
fn log_linear(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, &y)| y > 0.0).map(|(&t, &y)| (t, libm::log(y))).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (st, sl) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, ml) = (st / n, sl / n);
    let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mt) * (p.0 - mt), a.1 + (p.0 - mt) * (p.1 - ml)));
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some((ml - slope * mt, slope))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWarning {
    /// One component carries less than 1e-6 of the other's amplitude; the
    /// result is a single-exponential fit.
    EffectivelySingleExponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiexpFit {
    /// Parameters `A`, `T`, `A2`, `T2`, `baseline` with `T < T2`.
    pub result: FitResult,
    pub warnings: Vec<FitWarning>,
}

/// `A e^{-t/T} + A2 e^{-t/T2} + c` evaluated at `t`.
pub fn biexponential(t: &[f64], p: &[f64]) -> Vec<f64> {
    t.iter().map(|&x| p[0] * libm::exp(-x / p[1]) + p[2] * libm::exp(-x / p[3]) + p[4]).collect()
}

/// Fit a biexponential decay to counts at delays `t` (Poisson weights).
/// Starting values come from log-linear fits by peeling: the last third of
/// the decay (bins with at least 10 counts) gives the slow component, and the
/// first two thirds of the region where the counts stand clear of it give the
/// fast one.
pub fn fit_biexponential(t: &[f64], counts: &[f64]) -> Result<BiexpFit> {
    if t.len() != counts.len() {
        return Err(Error::Config("delays and counts lengths differ".into()));
    }
    let populated = counts.iter().filter(|&&c| c > 0.0).count();
    if populated < 6 {
        return Err(Error::InsufficientData(format!("{populated} populated bins, need 6")));
    }
    let peak = (0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    let last = (0..counts.len()).rev().find(|&i| counts[i] > 0.0).unwrap_or(counts.len() - 1);
    let t = &t[peak..=last];
    let y = &counts[peak..=last];
    let t0 = t[0];
    let shifted: Vec<f64> = t.iter().map(|x| x - t0).collect();
    let sigma = poisson_sigma(y);

    let span = shifted[shifted.len() - 1].max(1.0);
    // The decay proper ends where bins drop below a few counts; the late
    // third of it sets the slow component.
    let end = (0..y.len()).rev().find(|&i| y[i] >= 10.0).unwrap_or(y.len() - 1).max(5);
    let third = (end / 3).max(2);
    let (late_a, late_t) = match log_linear(&shifted[end + 1 - third..=end], &y[end + 1 - third..=end]) {
        Some((b, m)) if m < 0.0 => (libm::exp(b), -1.0 / m),
        _ => (y[end].max(1.0), span / 3.0),
    };
    // Peel the slow component off; the fast one is what stands clear of it.
    let early_resid: Vec<f64> = shifted
        .iter()
        .zip(y)
        .map(|(x, c)| c - late_a * libm::exp(-x / late_t))
        .collect();
    let fast_end = (0..=end)
        .find(|&i| early_resid[i] < 3.0 * libm::sqrt(y[i].max(1.0)))
        .unwrap_or(third)
        .max(2);
    let early = (2 * fast_end / 3).max(2);
    let (early_a, early_t) = match log_linear(&shifted[..early], &early_resid[..early]) {
        Some((b, m)) if m < 0.0 && -1.0 / m < late_t => (libm::exp(b), -1.0 / m),
        _ => (y[0].max(1.0), late_t / 10.0),
    };
    let init = [early_a, early_t, late_a, late_t, 0.0];
    let big = f64::INFINITY;
    let bounds = Bounds {
        lower: vec![0.0, 1e-6 * span, 0.0, 1e-6 * span, -big],
        upper: vec![big, big, big, big, big],
    };
    let names = ["A", "T", "A2", "T2", "baseline"];
    let fit = fit_least_squares(
        |p| Ok(biexponential(&shifted, p)),
        y,
        &sigma,
        &init,
        &names,
        Some(&bounds),
        &FitOptions::default(),
    );
    let two = match fit {
        Ok(mut r) => {
            if r.values[1] > r.values[3] {
                r.values.swap(0, 2);
                r.values.swap(1, 3);
                r.std_errors.swap(0, 2);
                r.std_errors.swap(1, 3);
            }
            let (a, a2) = (r.values[0], r.values[2]);
            let ratio = a.max(a2) / a.min(a2).max(f64::MIN_POSITIVE);
            (ratio <= 1e6).then_some(r)
        }
        Err(Error::DegenerateFit) => None,
        Err(e) => return Err(e),
    };
    let mut result = match two {
        Some(r) => BiexpFit { result: r, warnings: Vec::new() },
        None => single_exponential_fallback(&shifted, y, &sigma, [early_a.max(late_a), late_t])?,
    };
    // Amplitudes refer to the first fitted bin; move them back to t = 0.
    for (ai, ti) in [(0, 1), (2, 3)] {
        let tau = result.result.values[ti];
        if tau.is_finite() && tau > 0.0 {
            let f = libm::exp(t0 / tau);
            result.result.values[ai] *= f;
            result.result.std_errors[ai] *= f;
        }
    }
    Ok(result)
}

fn single_exponential_fallback(t: &[f64], y: &[f64], sigma: &[f64], init: [f64; 2]) -> Result<BiexpFit> {
    let big = f64::INFINITY;
    let bounds = Bounds { lower: vec![0.0, 1e-9, -big], upper: vec![big, big, big] };
    let r = fit_least_squares(
        |p| Ok(t.iter().map(|&x| p[0] * libm::exp(-x / p[1]) + p[2]).collect()),
        y,
        sigma,
        &[init[0], init[1], 0.0],
        &["A", "T", "baseline"],
        Some(&bounds),
        &FitOptions::default(),
    )?;
    let result = FitResult {
        names: ["A", "T", "A2", "T2", "baseline"].iter().map(|s| s.to_string()).collect(),
        values: vec![r.values[0], r.values[1], 0.0, f64::NAN, r.values[2]],
        std_errors: vec![r.std_errors[0], r.std_errors[1], 0.0, f64::NAN, r.std_errors[2]],
        ..r
    };
    Ok(BiexpFit { result, warnings: vec![FitWarning::EffectivelySingleExponential] })
}

/// [`fit_biexponential`] on one line of a decay histogram, using only bins
/// that lie wholly inside the pulse period.
pub fn fit_decay_histogram(h: &DecayHistogram, line: u8) -> Result<BiexpFit> {
    let counts = h
        .counts(LineTag::Line(line))
        .ok_or_else(|| Error::InsufficientData(format!("no events on line {line}")))?;
    let n = h.complete_bins().min(counts.len());
    let t: Vec<f64> = (0..n).map(|i| h.bin_center(i)).collect();
    let c: Vec<f64> = counts[..n].iter().map(|&x| x as f64).collect();
    fit_biexponential(&t, &c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationFit {
    /// Parameters `scale` (intensity per photon/ps) and `kappa` (ps⁻¹ per
    /// unit power).
    pub result: FitResult,
    pub gamma1: f64,
}

impl SaturationFit {
    pub fn kappa(&self) -> f64 {
        self.result.value("kappa")
    }

    /// Pump at `power` in units of `Γ_1`.
    pub fn pump_in_gamma1(&self, power: f64) -> f64 {
        self.kappa() * power / self.gamma1
    }
}

/// Calibrate `r = kappa * P` by fitting `scale * I_line(kappa * P)` to
/// intensity data. `sigma` defaults to Poisson weights on the intensities.
pub fn fit_saturation(
    power: &[f64],
    intensity: &[f64],
    sigma: Option<&[f64]>,
    ladder: &LadderConfig,
    line: usize,
) -> Result<SaturationFit> {
    ladder.validate()?;
    if power.len() != intensity.len() {
        return Err(Error::Config("power and intensity lengths differ".into()));
    }
    if power.len() < 5 {
        return Err(Error::InsufficientData(format!("{} power points, need 5", power.len())));
    }
    if intensity.iter().all(|&x| x == 0.0) {
        return Err(Error::Unidentifiable("all intensities are zero".into()));
    }
    if power.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Config("powers must be >= 0".into()));
    }
    let sigma: Vec<f64> = match sigma {
        Some(s) => s.to_vec(),
        None => poisson_sigma(intensity),
    };
    let gamma1 = ladder.gamma1();

    // Seed kappa by matching the half-maximum powers of data and model.
    let mut order: Vec<usize> = (0..power.len()).collect();
    order.sort_by(|&a, &b| power[a].total_cmp(&power[b]));
    let (p_sorted, i_sorted): (Vec<f64>, Vec<f64>) = order.iter().map(|&i| (power[i], intensity[i])).unzip();
    let data_half = half_max_abscissa(&p_sorted, &i_sorted);
    let r_grid: Vec<f64> = (0..=600).map(|i| gamma1 * libm::pow(10.0, -3.0 + i as f64 * 0.01)).collect();
    let model_curve = saturation_curve(ladder, &r_grid, line)?;
    let model_half = half_max_abscissa(&r_grid, &model_curve);
    let (Some(p_half), Some(r_half)) = (data_half, model_half) else {
        return Err(Error::Unidentifiable("no half-maximum crossing in the data".into()));
    };
    let kappa0 = r_half / p_half.max(f64::MIN_POSITIVE);
    let i_at = saturation_curve(ladder, &[kappa0 * p_sorted[p_sorted.len() - 1]], line)?[0];
    let i_max = i_sorted.iter().copied().fold(0.0, f64::max);
    let scale0 = if i_at > 0.0 { i_sorted[i_sorted.len() - 1].max(i_max * 0.5) / i_at } else { 1.0 };

    let bounds = Bounds { lower: vec![0.0, 1e-12 * kappa0], upper: vec![f64::INFINITY, f64::INFINITY] };
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        let rates: Vec<f64> = power.iter().map(|&x| p[1] * x).collect();
        Ok(saturation_curve(ladder, &rates, line)?.into_iter().map(|v| p[0] * v).collect())
    };
    let result = match fit_least_squares(model, intensity, &sigma, &[scale0, kappa0], &["scale", "kappa"], Some(&bounds), &FitOptions::default()) {
        Ok(r) => r,
        Err(Error::DegenerateFit) => {
            return Err(Error::Unidentifiable("scale and kappa are degenerate (linear regime)".into()))
        }
        Err(e) => return Err(e),
    };
    let (kappa, kappa_err) = (result.values[1], result.std_errors[1]);
    let top = kappa * p_sorted[p_sorted.len() - 1] / gamma1;
    if top < 0.05 || kappa_err > 0.5 * kappa {
        return Err(Error::Unidentifiable(format!(
            "highest power reaches r = {top:.3} Γ1; kappa = {kappa:e} ± {kappa_err:e}"
        )));
    }
    Ok(SaturationFit { result, gamma1 })
}

/// First abscissa where `y` rises to half its maximum, linearly interpolated.
fn half_max_abscissa(x: &[f64], y: &[f64]) -> Option<f64> {
    let max = y.iter().copied().fold(f64::MIN, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let half = max / 2.0;
    if y[0] >= half {
        return Some(x[0]);
    }
    for i in 1..y.len() {
        if y[i] >= half {
            let f = (half - y[i - 1]) / (y[i] - y[i - 1]);
            return Some(x[i - 1] + f * (x[i] - x[i - 1]));
        }
    }
    None
}

/// Width of an antibunching dip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipWidth {
    pub fwhm_ps: f64,
    pub fwhm_err_ps: f64,
    pub minimum: f64,
    pub baseline: f64,
}

/// Full width of a dip at half depth.
///
/// The baseline is the mean over points with `|tau|` in the outer quarter of
/// the range; the depth is read from a 3-point running mean; crossings are
/// linearly interpolated on the smoothed curve. The error propagates the
/// per-point errors through the local slopes.
pub fn dip_fwhm(tau: &[f64], g: &[f64], err: Option<&[f64]>) -> Result<DipWidth> {
    let n = g.len();
    if n < 5 || tau.len() != n {
        return Err(Error::InsufficientData("dip needs at least 5 points".into()));
    }
    let zeros = vec![0.0; n];
    let err = err.unwrap_or(&zeros);
    let reach = tau.iter().fold(0.0, |m, t| f64::max(m, libm::fabs(*t)));
    let outer: Vec<usize> = (0..n).filter(|&i| libm::fabs(tau[i]) >= 0.75 * reach).collect();
    let baseline = outer.iter().map(|&i| g[i]).sum::<f64>() / outer.len() as f64;
    let baseline_err = libm::sqrt(outer.iter().map(|&i| err[i] * err[i]).sum::<f64>()) / outer.len() as f64;

    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            g[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let smooth_err: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            libm::sqrt(err[lo..=hi].iter().map(|e| e * e).sum::<f64>()) / (hi - lo + 1) as f64
        })
        .collect();
    let imin = (0..n).fold(0, |b, i| if smooth[i] < smooth[b] { i } else { b });
    let minimum = smooth[imin];
    if minimum > 0.9 * baseline {
        return Err(Error::NoDip { minimum });
    }
    let half = 0.5 * (minimum + baseline);
    let half_err = 0.5 * libm::sqrt(smooth_err[imin] * smooth_err[imin] + baseline_err * baseline_err);

    // Crossing position, |slope| and point error on one side of the minimum.
    let crossing = |step: isize| -> Result<(f64, f64, f64)> {
        let mut i = imin as isize;
        loop {
            let j = i + step;
            if j < 0 || j >= n as isize {
                return Err(Error::InsufficientData("dip does not recover to half depth inside the window".into()));
            }
            let (a, b) = (i as usize, j as usize);
            if smooth[b] >= half {
                let f = (half - smooth[a]) / (smooth[b] - smooth[a]);
                let x = tau[a] + f * (tau[b] - tau[a]);
                let slope = libm::fabs((smooth[b] - smooth[a]) / (tau[b] - tau[a]));
                let e = smooth_err[a] + f * (smooth_err[b] - smooth_err[a]);
                return Ok((x, slope, e));
            }
            i = j;
        }
    };
    let (left, sl, el) = crossing(-1)?;
    let (right, sr, er) = crossing(1)?;
    let fwhm_err = libm::sqrt((el / sl) * (el / sl) + (er / sr) * (er / sr) + {
        let c = half_err * (1.0 / sl + 1.0 / sr);
        c * c
    });
    Ok(DipWidth { fwhm_ps: right - left, fwhm_err_ps: fwhm_err, minimum, baseline })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayReport {
    pub fit: FitResult,
    pub measured: DipWidth,
    pub model: DipWidth,
    /// `FWHM_measured / FWHM_model`.
    pub ratio: f64,
    pub ratio_err: f64,
}

/// Scale a model curve (sampled at the histogram's bin centres) onto a
/// measured `g2` and compare dip widths.
pub fn fit_g2_overlay(measured: &NormalizedHistogram, model: &[f64]) -> Result<OverlayReport> {
    if model.len() != measured.len() {
        return Err(Error::Config(format!("model has {} points, histogram {}", model.len(), measured.len())));
    }
    let (tau, y, sigma) = overlay_data(measured);
    let fit = fit_least_squares(
        |p| Ok(model.iter().map(|m| p[0] * m).collect()),
        &y,
        &sigma,
        &[1.0],
        &["scale"],
        None,
        &FitOptions::default(),
    )?;
    report(measured, &tau, model, fit)
}

/// As [`fit_g2_overlay`] with the pump rate floated too: `make_model(r)`
/// returns the model at the bin centres for pump rate `r`.
pub fn fit_g2_overlay_with_pump<F>(measured: &NormalizedHistogram, pump0: f64, mut make_model: F) -> Result<OverlayReport>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let (tau, y, sigma) = overlay_data(measured);
    let bounds = Bounds { lower: vec![0.0, 1e-6 * pump0], upper: vec![f64::INFINITY, f64::INFINITY] };
    let fit = fit_least_squares(
        |p| Ok(make_model(p[1])?.into_iter().map(|m| p[0] * m).collect()),
        &y,
        &sigma,
        &[1.0, pump0],
        &["scale", "pump_rate"],
        Some(&bounds),
        &FitOptions::default(),
    )?;
    let model = make_model(fit.values[1])?;
    report(measured, &tau, &model, fit)
}

fn overlay_data(h: &NormalizedHistogram) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // Empty bins have zero Poisson error; give them the smallest nonzero one.
    let floor = h.g2_err.iter().copied().filter(|e| *e > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let sigma = h.g2_err.iter().map(|&e| if e > 0.0 { e } else { floor }).collect();
    (h.tau_ps.clone(), h.g2.clone(), sigma)
}

fn report(measured: &NormalizedHistogram, tau: &[f64], model: &[f64], fit: FitResult) -> Result<OverlayReport> {
    let m = dip_fwhm(tau, &measured.g2, Some(&measured.g2_err))?;
    let scaled: Vec<f64> = model.iter().map(|x| x * fit.values[0]).collect();
    let d = dip_fwhm(tau, &scaled, None)?;
    let ratio = m.fwhm_ps / d.fwhm_ps;
    Ok(OverlayReport { fit, measured: m, model: d, ratio, ratio_err: ratio * m.fwhm_err_ps / m.fwhm_ps })
}
