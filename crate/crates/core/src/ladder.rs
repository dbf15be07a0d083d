//! Rate-equation model of the multiexciton ladder.
//!
//! Level `n` holds `n` electron-hole pairs, `0 <= n <= n_max`. Pump capture
//! moves `n -> n+1` at the constant rate `r` (one pair at a time, the same at
//! every level); radiative recombination moves `k -> k-1` at `1/T_k` and emits
//! a photon on line `k` (`k = 1` is the exciton, `k = 2` the biexciton).
//!
//! The optional dark variant adds a single non-emitting state beside level 1.
//! The bright exciton flips into it at `bright_to_dark` and back at
//! `dark_to_bright`; it may relax to the ground state non-radiatively and
//! captures a further pair into level 2 at the ordinary pump rate. Level 2
//! always decays into the bright exciton.
//!
//! Probabilities evolve as `dp/dt = M p` with `M[(to, from)]` the rate of the
//! `from -> to` transition, so every column of `M` sums to zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Exciton and biexciton lifetimes from pulsed decay measurements, followed by
/// triexciton and quadriexciton values. The last two only weakly affect any
/// curve at the pump rates of interest and can be overridden.
pub const DEFAULT_LIFETIMES_PS: [f64; 4] = [251.0, 185.0, 150.0, 120.0];

/// States with this many entries or fewer are propagated by matrix
/// exponential; larger ones use fixed-step RK4.
const EXPM_MAX_STATES: usize = 8;

/// Entries below this are treated as a broken evolution, not round-off.
const POSITIVITY_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkConfig {
    /// Bright to dark spin-flip rate, ps⁻¹.
    pub bright_to_dark: f64,
    /// Dark to bright rate, ps⁻¹.
    pub dark_to_bright: f64,
    /// Non-radiative dark-exciton lifetime, ps. `None` means it never decays.
    pub dark_lifetime_ps: Option<f64>,
}

impl DarkConfig {
    /// Demonstration rates: spin mixing fast compared with radiative decay,
    /// which slows the refilling of the bright exciton after an emission and
    /// widens the autocorrelation dip.
    pub const fn demo() -> Self {
        Self { bright_to_dark: 0.12, dark_to_bright: 0.04, dark_lifetime_ps: None }
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.bright_to_dark) || !ok(self.dark_to_bright) {
            return Err(Error::Config(format!(
                "dark-state rates must be finite and >= 0 (got {}, {})",
                self.bright_to_dark, self.dark_to_bright
            )));
        }
        if let Some(t) = self.dark_lifetime_ps {
            if !(t > 0.0) {
                return Err(Error::Config(format!("dark lifetime must be > 0 ps (got {t})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderConfig {
    /// `T_k` for `k = 1..=n_max`, ps.
    pub lifetimes_ps: Vec<f64>,
    /// Pair capture rate `r`, ps⁻¹.
    pub pump_rate: f64,
    pub dark: Option<DarkConfig>,
}

impl LadderConfig {
    pub fn new(lifetimes_ps: Vec<f64>, pump_rate: f64) -> Self {
        Self { lifetimes_ps, pump_rate, dark: None }
    }

    /// Four-level ladder with [`DEFAULT_LIFETIMES_PS`] and the pump given as a
    /// multiple of the exciton decay rate `1/T_1`.
    pub fn with_pump_in_gamma1(pump_gamma1: f64) -> Self {
        let lifetimes = DEFAULT_LIFETIMES_PS.to_vec();
        let r = pump_gamma1 / lifetimes[0];
        Self::new(lifetimes, r)
    }

    pub fn with_dark(mut self, dark: DarkConfig) -> Self {
        self.dark = Some(dark);
        self
    }

    pub fn with_pump_rate(&self, pump_rate: f64) -> Self {
        Self { pump_rate, ..self.clone() }
    }

    pub fn n_max(&self) -> usize {
        self.lifetimes_ps.len()
    }

    /// `n_max + 1`, plus one for the dark state.
    pub fn n_states(&self) -> usize {
        self.n_max() + 1 + usize::from(self.dark.is_some())
    }

    /// Index of the dark state, if the variant is on.
    pub fn dark_state(&self) -> Option<usize> {
        self.dark.map(|_| self.n_max() + 1)
    }

    /// Exciton decay rate `Γ_1 = 1/T_1`, ps⁻¹.
    pub fn gamma1(&self) -> f64 {
        1.0 / self.lifetimes_ps[0]
    }

    /// Radiative rate of line `k`, ps⁻¹.
    pub fn decay_rate(&self, line: usize) -> f64 {
        1.0 / self.lifetimes_ps[line - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lifetimes_ps.is_empty() {
            return Err(Error::Config("ladder needs n_max >= 1".into()));
        }
        for (i, t) in self.lifetimes_ps.iter().enumerate() {
            if !(t.is_finite() && *t > 0.0) {
                return Err(Error::Config(format!("lifetime T_{} must be > 0 ps (got {t})", i + 1)));
            }
        }
        if !(self.pump_rate.is_finite() && self.pump_rate >= 0.0) {
            return Err(Error::Config(format!("pump rate must be >= 0 (got {})", self.pump_rate)));
        }
        if let Some(d) = &self.dark {
            d.validate()?;
        }
        Ok(())
    }

    fn check_line(&self, line: usize) -> Result<()> {
        if line == 0 || line > self.n_max() {
            return Err(Error::Config(format!("line {line} outside 1..={}", self.n_max())));
        }
        Ok(())
    }

    /// Every allowed transition as `(from, to, rate, emitted line)`.
    /// Shared by the generator and the Monte Carlo so both see the same model.
    pub fn transitions(&self) -> Vec<Transition> {
        let n = self.n_max();
        let r = self.pump_rate;
        let mut out = Vec::with_capacity(2 * n + 4);
        for level in 0..n {
            out.push(Transition { from: level, to: level + 1, rate: r, line: None });
        }
        for k in 1..=n {
            out.push(Transition { from: k, to: k - 1, rate: self.decay_rate(k), line: Some(k) });
        }
        if let (Some(d), Some(dark)) = (self.dark, self.dark_state()) {
            out.push(Transition { from: 1, to: dark, rate: d.bright_to_dark, line: None });
            out.push(Transition { from: dark, to: 1, rate: d.dark_to_bright, line: None });
            if let Some(t) = d.dark_lifetime_ps {
                out.push(Transition { from: dark, to: 0, rate: 1.0 / t, line: None });
            }
            if n >= 2 {
                out.push(Transition { from: dark, to: 2, rate: r, line: None });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    /// ps⁻¹
    pub rate: f64,
    /// Line of the emitted photon, for radiative transitions.
    pub line: Option<usize>,
}

/// Transition-rate matrix, ps⁻¹. Off-diagonals are non-negative and columns sum
/// to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix(Matrix);

impl GeneratorMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn n_states(&self) -> usize {
        self.0.rows()
    }

    /// Rate of `from -> to` for `to != from`; the diagonal holds minus the
    /// total escape rate.
    pub fn get(&self, to: usize, from: usize) -> f64 {
        self.0[(to, from)]
    }

    fn min_escape_time(&self) -> f64 {
        let fastest = (0..self.n_states()).map(|i| -self.0[(i, i)]).fold(0.0, f64::max);
        if fastest > 0.0 {
            1.0 / fastest
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    p: Vec<f64>,
}

impl StateDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) || libm::fabs(sum - 1.0) > 1e-9 {
            return Err(Error::Config(format!("not a probability distribution (sum {sum})")));
        }
        Ok(Self { p })
    }

    /// All probability on one state.
    pub fn pure(n_states: usize, state: usize) -> Self {
        let mut p = vec![0.0; n_states];
        p[state] = 1.0;
        Self { p }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, state: usize) -> f64 {
        self.p[state]
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Clamp round-off negatives and renormalize; anything below the floor
    /// is an error.
    fn from_evolved(mut p: Vec<f64>) -> Result<Self> {
        for (state, x) in p.iter_mut().enumerate() {
            if *x < POSITIVITY_FLOOR || !x.is_finite() {
                return Err(Error::NegativeProbability { state, value: *x });
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= sum);
        Ok(Self { p })
    }
}

pub fn build_generator(config: &LadderConfig) -> Result<GeneratorMatrix> {
    config.validate()?;
    let n = config.n_states();
    let mut m = Matrix::zeros(n, n);
    for t in config.transitions() {
        m[(t.to, t.from)] += t.rate;
        m[(t.from, t.from)] -= t.rate;
    }
    Ok(GeneratorMatrix(m))
}

/// Stationary distribution: the normalized null vector of the generator.
pub fn steady_state(g: &GeneratorMatrix) -> Result<StateDistribution> {
    let n = g.n_states();
    let mut a = g.matrix().clone();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let p = a.solve(&rhs).ok_or(Error::DegenerateSteadyState)?;
    let scale = g.matrix().max_abs().max(f64::MIN_POSITIVE);
    let residual = g.matrix().mul_vec(&p).iter().fold(0.0, |m, x| f64::max(m, libm::fabs(*x)));
    if residual > 1e-10 * scale.max(1.0) {
        return Err(Error::DegenerateSteadyState);
    }
    StateDistribution::from_evolved(p)
}

/// Solve `dp/dt = M p` from `p0` over `tau` ps.
pub fn evolve(g: &GeneratorMatrix, p0: &StateDistribution, tau: f64) -> Result<StateDistribution> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Config(format!("evolution time must be >= 0 ps (got {tau})")));
    }
    if p0.len() != g.n_states() {
        return Err(Error::Config(format!(
            "distribution has {} states, generator has {}",
            p0.len(),
            g.n_states()
        )));
    }
    if tau == 0.0 {
        return Ok(p0.clone());
    }
    let p = if g.n_states() <= EXPM_MAX_STATES {
        g.matrix().scaled(tau).expm().mul_vec(&p0.p)
    } else {
        rk4(g, &p0.p, tau)
    };
    StateDistribution::from_evolved(p)
}

/// Fixed-step RK4 with the step at most 1/50 of the fastest escape time.
fn rk4(g: &GeneratorMatrix, p0: &[f64], tau: f64) -> Vec<f64> {
    let max_step = g.min_escape_time() / 50.0;
    let steps = libm::ceil(tau / max_step).max(1.0) as usize;
    let h = tau / steps as f64;
    let m = g.matrix();
    let mut p = p0.to_vec();
    let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + s * b).collect()
    };
    for _ in 0..steps {
        let k1 = m.mul_vec(&p);
        let k2 = m.mul_vec(&axpy(&p, &k1, h / 2.0));
        let k3 = m.mul_vec(&axpy(&p, &k2, h / 2.0));
        let k4 = m.mul_vec(&axpy(&p, &k3, h));
        for i in 0..p.len() {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    p
}

/// Steady state of `config`, with the correlation-specific zero check on `line`.
fn occupied_steady_state(
    config: &LadderConfig,
    g: &GeneratorMatrix,
    lines: &[usize],
) -> Result<StateDistribution> {
    let ss = steady_state(g)?;
    for &line in lines {
        if config.pump_rate == 0.0 || ss.get(line) <= 0.0 {
            return Err(Error::UndefinedCorrelation { level: line });
        }
    }
    Ok(ss)
}

/// Normalized autocorrelation of line `line`: `p_k(|tau|)` after a reset to
/// level `k-1`, divided by the steady-state `p_k`. Even in `tau`.
pub fn g2_auto(config: &LadderConfig, line: usize, taus: &[f64]) -> Result<Vec<f64>> {
    config.validate()?;
    config.check_line(line)?;
    let g = build_generator(config)?;
    let ss = occupied_steady_state(config, &g, &[line])?;
    let reset = StateDistribution::pure(g.n_states(), line - 1);
    taus.iter()
        .map(|&tau| Ok(evolve(&g, &reset, libm::fabs(tau))?.get(line) / ss.get(line)))
        .collect()
}

/// Cross-correlation with `start_line` on the start channel and `stop_line` on
/// the stop channel, `tau = t_stop - t_start`.
///
/// For `tau > 0` the dot is reset to `start_line - 1` and the `stop_line`
/// occupation is read; for `tau < 0` it is reset to `stop_line - 1` and the
/// `start_line` occupation is read at `|tau|`. At the discontinuity the sign
/// bit of zero selects the branch: `+0.0` gives the `0+` limit, `-0.0` the
/// `0-` limit.
pub fn g2_cross(
    config: &LadderConfig,
    start_line: usize,
    stop_line: usize,
    taus: &[f64],
) -> Result<Vec<f64>> {
    config.validate()?;
    config.check_line(start_line)?;
    config.check_line(stop_line)?;
    if start_line == stop_line {
        return Err(Error::Config("cross-correlation needs two different lines".into()));
    }
    let g = build_generator(config)?;
    let ss = occupied_steady_state(config, &g, &[start_line, stop_line])?;
    let n = g.n_states();
    let after_start = StateDistribution::pure(n, start_line - 1);
    let after_stop = StateDistribution::pure(n, stop_line - 1);
    taus.iter()
        .map(|&tau| {
            if tau.is_sign_negative() {
                let p = evolve(&g, &after_stop, -tau)?;
                Ok(p.get(start_line) / ss.get(start_line))
            } else {
                let p = evolve(&g, &after_start, tau)?;
                Ok(p.get(stop_line) / ss.get(stop_line))
            }
        })
        .collect()
}

/// Photon flux of `line` in steady state, `Γ_k p_k`, photons per ps.
pub fn line_flux(config: &LadderConfig, line: usize) -> Result<f64> {
    config.check_line(line)?;
    let ss = steady_state(&build_generator(config)?)?;
    Ok(config.decay_rate(line) * ss.get(line))
}

/// Line intensity versus pump rate, photons per ps, for each `r` in `pump_rates`.
pub fn saturation_curve(config: &LadderConfig, pump_rates: &[f64], line: usize) -> Result<Vec<f64>> {
    config.validate()?;
    config.check_line(line)?;
    pump_rates
        .iter()
        .map(|&r| {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::Config(format!("pump rate must be >= 0 (got {r})")));
            }
            if r == 0.0 {
                return Ok(0.0);
            }
            line_flux(&config.with_pump_rate(r), line)
        })
        .collect()
}
