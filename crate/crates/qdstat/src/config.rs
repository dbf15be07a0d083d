//! TOML run configuration. Every physical quantity carries its unit in the
//! key name; unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use qdstat_core::correlator::{BackgroundRates, ChannelRates, CorrelationMode, Window, DEFAULT_BIN_WIDTH_PS, DEFAULT_HALF_WINDOW_PS};
use qdstat_core::irf::{Irf, DEFAULT_IRF_FWHM_PS};
use qdstat_core::ladder::{DarkConfig, LadderConfig, DEFAULT_LIFETIMES_PS};
use qdstat_core::sim::{DetectorConfig, Excitation, PairInjection, PulsedConfig, SimConfig, SlowComponent};

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub ladder: LadderSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub detector: DetectorSections,
    #[serde(default)]
    pub correlate: CorrelateSection,
    #[serde(default)]
    pub irf: IrfSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LadderSection {
    pub lifetimes_ps: Vec<f64>,
    /// Pump in units of `1/T_1`.
    pub pump_gamma1: Option<f64>,
    pub pump_per_ps: Option<f64>,
    pub dark: Option<DarkSection>,
}

impl Default for LadderSection {
    fn default() -> Self {
        Self { lifetimes_ps: DEFAULT_LIFETIMES_PS.to_vec(), pump_gamma1: None, pump_per_ps: None, dark: None }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DarkSection {
    pub bright_to_dark_per_ps: f64,
    pub dark_to_bright_per_ps: f64,
    pub dark_lifetime_ps: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ExcitationKind {
    #[default]
    Cw,
    Pulsed,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SlowSection {
    pub level: usize,
    /// `A'/A` of the resulting biexponential decay.
    pub amplitude_ratio: f64,
    pub lifetime_ps: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub acquisition_s: f64,
    pub seed: u64,
    pub splitter_ratio: f64,
    /// Independent time slices; fixed by the config so results do not depend
    /// on the machine's thread count.
    pub shards: u64,
    pub event_cap: u64,
    pub excitation: ExcitationKind,
    pub period_ps: Option<f64>,
    pub pairs_per_pulse: Option<u32>,
    pub mean_pairs_per_pulse: Option<f64>,
    #[serde(default)]
    pub slow: Vec<SlowSection>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            acquisition_s: 1.0,
            seed: 0,
            splitter_ratio: 0.5,
            shards: 1,
            event_cap: 2_000_000_000,
            excitation: ExcitationKind::Cw,
            period_ps: None,
            pairs_per_pulse: None,
            mean_pairs_per_pulse: None,
            slow: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DetectorSections {
    #[serde(rename = "A", default)]
    pub a: DetectorSection,
    #[serde(rename = "B", default)]
    pub b: DetectorSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub dark_rate_cps: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ps: f64,
    /// Lines passed to this detector; absent means all.
    pub lines: Option<Vec<usize>>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self { efficiency: 1.0, dark_rate_cps: 0.0, jitter_fwhm_ps: 0.0, dead_time_ps: 0.0, lines: None }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Full,
    StartStop,
}

impl From<ModeName> for CorrelationMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Full => CorrelationMode::Full,
            ModeName::StartStop => CorrelationMode::StartStop,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateSection {
    pub bin_ps: f64,
    /// Half width of the symmetric delay window.
    pub window_ns: f64,
    pub mode: ModeName,
    /// Total and background rates of the start (A) and stop (B) channels,
    /// used for the background columns of model curves and for correction.
    pub total_a_cps: Option<f64>,
    pub total_b_cps: Option<f64>,
    pub background_a_cps: Option<f64>,
    pub background_b_cps: Option<f64>,
}

impl Default for CorrelateSection {
    fn default() -> Self {
        Self {
            bin_ps: DEFAULT_BIN_WIDTH_PS,
            window_ns: DEFAULT_HALF_WINDOW_PS / 1000.0,
            mode: ModeName::Full,
            total_a_cps: None,
            total_b_cps: None,
            background_a_cps: None,
            background_b_cps: None,
        }
    }
}

impl CorrelateSection {
    pub fn window(&self) -> Result<Window> {
        Ok(Window::symmetric(self.window_ns * 1000.0, self.bin_ps)?)
    }

    /// Background rates from the config, if both totals and backgrounds are set.
    pub fn background(&self) -> Result<Option<BackgroundRates>> {
        match (self.total_a_cps, self.total_b_cps, self.background_a_cps, self.background_b_cps) {
            (Some(ta), Some(tb), Some(ba), Some(bb)) => {
                let b = BackgroundRates::new(ChannelRates::new(ta, ba), ChannelRates::new(tb, bb));
                b.contrast()?;
                Ok(Some(b))
            }
            (None, None, None, None) => Ok(None),
            _ => bail!("[correlate]: set all of total_a_cps, total_b_cps, background_a_cps, background_b_cps or none"),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IrfSection {
    pub fwhm_ps: f64,
    pub enabled: bool,
}

impl Default for IrfSection {
    fn default() -> Self {
        Self { fwhm_ps: DEFAULT_IRF_FWHM_PS, enabled: true }
    }
}

impl IrfSection {
    pub fn irf(&self) -> Result<Option<Irf>> {
        if self.enabled {
            Ok(Some(Irf::new(self.fwhm_ps)?))
        } else {
            Ok(None)
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Sub-bin samples per histogram bin for model curves.
    pub oversample: usize,
    /// Float the pump rate in g2 overlays.
    pub float_pump: bool,
    /// Decay-histogram bin width.
    pub decay_bin_ps: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self { oversample: 8, float_pump: false, decay_bin_ps: 8.0 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text)?;
        c.ladder()?;
        c.correlate.background()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn ladder(&self) -> Result<LadderConfig> {
        let l = &self.ladder;
        let t1 = *l.lifetimes_ps.first().context("[ladder]: lifetimes_ps is empty")?;
        let r = match (l.pump_gamma1, l.pump_per_ps) {
            (Some(g), None) => g / t1,
            (None, Some(r)) => r,
            (None, None) => 0.0,
            (Some(_), Some(_)) => bail!("[ladder]: give pump_gamma1 or pump_per_ps, not both"),
        };
        let mut c = LadderConfig::new(l.lifetimes_ps.clone(), r);
        if let Some(d) = &l.dark {
            c = c.with_dark(DarkConfig {
                bright_to_dark: d.bright_to_dark_per_ps,
                dark_to_bright: d.dark_to_bright_per_ps,
                dark_lifetime_ps: d.dark_lifetime_ps,
            });
        }
        c.validate()?;
        Ok(c)
    }

    pub fn sim(&self) -> Result<SimConfig> {
        let s = &self.sim;
        let ladder = self.ladder()?;
        let mut c = SimConfig::cw(ladder.clone(), s.acquisition_s, s.seed);
        c.splitter_ratio = s.splitter_ratio;
        c.event_cap = s.event_cap;
        c.detectors = [detector(&self.detector.a), detector(&self.detector.b)];
        match s.excitation {
            ExcitationKind::Cw => {
                if s.period_ps.is_some() || s.pairs_per_pulse.is_some() || s.mean_pairs_per_pulse.is_some() || !s.slow.is_empty() {
                    bail!("[sim]: pulse settings given with excitation = \"cw\"");
                }
            }
            ExcitationKind::Pulsed => {
                let period = s.period_ps.context("[sim]: pulsed excitation needs period_ps")?;
                let pairs = match (s.pairs_per_pulse, s.mean_pairs_per_pulse) {
                    (Some(n), None) => PairInjection::Fixed(n),
                    (None, Some(m)) => PairInjection::Poisson(m),
                    _ => bail!("[sim]: give exactly one of pairs_per_pulse, mean_pairs_per_pulse"),
                };
                let mut slow = Vec::new();
                for sc in &s.slow {
                    if sc.level == 0 || sc.level > ladder.n_max() {
                        bail!("[sim.slow]: level {} outside 1..={}", sc.level, ladder.n_max());
                    }
                    let fast = ladder.lifetimes_ps[sc.level - 1];
                    slow.push(SlowComponent::from_amplitude_ratio(sc.level, sc.amplitude_ratio, fast, sc.lifetime_ps));
                }
                c.excitation = Excitation::Pulsed(PulsedConfig { period_ps: period, pairs, slow_components: slow });
            }
        }
        if s.shards == 0 {
            bail!("[sim]: shards must be >= 1");
        }
        c.validate()?;
        Ok(c)
    }
}

fn detector(d: &DetectorSection) -> DetectorConfig {
    DetectorConfig {
        efficiency: d.efficiency,
        dark_rate_cps: d.dark_rate_cps,
        jitter_fwhm_ps: d.jitter_fwhm_ps,
        dead_time_ps: d.dead_time_ps,
        line_filter: d.lines.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.ladder().unwrap().lifetimes_ps, DEFAULT_LIFETIMES_PS.to_vec());
        assert_eq!(c.correlate.bin_ps, 49.0);
        assert_eq!(c.irf.fwhm_ps, 140.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("[ladder]\nlifetimes_ps = [251.0]\npump = 1.0\n").unwrap_err();
        assert!(format!("{err:#}").contains("unknown field"), "{err:#}");
        assert!(RunConfig::parse("[detector.C]\nefficiency = 1.0\n").is_err());
    }

    #[test]
    fn full_config() {
        let text = r#"
[ladder]
lifetimes_ps = [251.0, 185.0]
pump_gamma1 = 0.5
[ladder.dark]
bright_to_dark_per_ps = 0.1
dark_to_bright_per_ps = 0.05
[sim]
acquisition_s = 0.5
seed = 7
splitter_ratio = 0.5
shards = 4
event_cap = 1000
excitation = "pulsed"
period_ps = 12500.0
pairs_per_pulse = 2
slow = [{ level = 1, amplitude_ratio = 0.05, lifetime_ps = 6220.0 }]
[detector.A]
efficiency = 0.5
dark_rate_cps = 100.0
jitter_fwhm_ps = 99.0
dead_time_ps = 0.0
lines = [1]
[correlate]
bin_ps = 49.0
window_ns = 3.0
mode = "start_stop"
total_a_cps = 10000.0
total_b_cps = 7000.0
background_a_cps = 1000.0
background_b_cps = 800.0
[irf]
fwhm_ps = 140.0
enabled = false
[fit]
oversample = 4
float_pump = true
decay_bin_ps = 16.0
"#;
        let c = RunConfig::parse(text).unwrap();
        let l = c.ladder().unwrap();
        assert_eq!(l.pump_rate, 0.5 / 251.0);
        assert!(l.dark.is_some());
        let s = c.sim().unwrap();
        assert_eq!(s.detectors[0].line_filter, Some(vec![1]));
        assert!(matches!(s.excitation, Excitation::Pulsed(_)));
        assert_eq!(c.correlate.mode, ModeName::StartStop);
        let rho = c.correlate.background().unwrap().unwrap().contrast().unwrap();
        assert!((rho - 0.9 * 6200.0 / 7000.0).abs() < 1e-15);
        assert!(c.irf.irf().unwrap().is_none());
    }

    #[test]
    fn partial_background_rejected() {
        assert!(RunConfig::parse("[correlate]\ntotal_a_cps = 1.0\n").is_err());
    }

    #[test]
    fn both_pump_forms_rejected() {
        assert!(RunConfig::parse("[ladder]\nlifetimes_ps = [251.0]\npump_gamma1 = 1.0\npump_per_ps = 0.1\n").is_err());
    }
}
