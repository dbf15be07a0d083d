//! Acceptance suite: one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qdstat::run::{simulate_and_correlate, simulate_sharded};
use qdstat_core::correlator::{
    correlate, normalize, times, BackgroundRates, ChannelRates, CorrelationMode, NormalizedHistogram, Window,
};
use qdstat_core::fit::{fit_decay_histogram, fit_g2_overlay, fit_least_squares, FitOptions};
use qdstat_core::irf::{simulate_resolution_measurement, Irf, ResolutionSetup};
use qdstat_core::ladder::{build_generator, evolve, g2_auto, line_flux, steady_state, DarkConfig, LadderConfig, StateDistribution};
use qdstat_core::pipeline::{binned_model, Correlation};
use qdstat_core::sim::{DetectorConfig, Excitation, PulsedConfig, SimConfig, SlowComponent};
use qdstat_core::PS_PER_S;

const BIN_PS: f64 = 49.0;
const HALF_WINDOW_PS: f64 = 3000.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn measured_background() -> BackgroundRates {
    BackgroundRates::new(ChannelRates::new(10_000.0, 1000.0), ChannelRates::new(7000.0, 800.0))
}

fn qdstat() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qdstat"))
}

fn workspace_root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().parent().unwrap()
}

fn read_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let t = qdstat::io::read_table(text.as_bytes()).expect("csv");
    (t.headers, t.columns)
}

fn chi2_per_dof(data: &NormalizedHistogram, model: &[f64], max_abs_tau: f64) -> (f64, usize) {
    let mut chi2 = 0.0;
    let mut n = 0;
    for i in 0..data.len() {
        if data.tau_ps[i].abs() <= max_abs_tau && data.g2_err[i] > 0.0 {
            let z = (data.g2[i] - model[i]) / data.g2_err[i];
            chi2 += z * z;
            n += 1;
        }
    }
    (chi2 / n as f64, n)
}

/// HBT run on the exciton line with the detection chain scaled so each
/// channel has the quoted signal fractions.
fn antibunching_run(ladder: &LadderConfig, acquisition_s: f64, seed: u64) -> (NormalizedHistogram, u64) {
    let flux = line_flux(ladder, 1).unwrap() * PS_PER_S;
    let jitter = 140.0 / std::f64::consts::SQRT_2;
    let eff_b = 0.689;
    let signal_a = 0.5 * flux;
    let signal_b = 0.5 * flux * eff_b;
    let det = |eff: f64, dark: f64| DetectorConfig {
        efficiency: eff,
        dark_rate_cps: dark,
        jitter_fwhm_ps: jitter,
        dead_time_ps: 0.0,
        line_filter: Some(vec![1]),
    };
    let mut cfg = SimConfig::cw(ladder.clone(), acquisition_s, seed);
    cfg.detectors = [det(1.0, signal_a * 1000.0 / 9000.0), det(eff_b, signal_b * 800.0 / 6200.0)];
    let out = simulate_sharded(&cfg, 8).unwrap();
    let emitted: u64 = out.truth.emitted.iter().sum();
    let window = Window::symmetric(HALF_WINDOW_PS, BIN_PS).unwrap();
    let h = correlate(&times(&out.channel_a), &times(&out.channel_b), &window, CorrelationMode::Full, acquisition_s).unwrap();
    (normalize(&h).unwrap(), emitted)
}

fn plain_model(ladder: &LadderConfig) -> Vec<f64> {
    let window = Window::symmetric(HALF_WINDOW_PS, BIN_PS).unwrap();
    binned_model(ladder, Correlation::Auto { line: 1 }, &window, Some(&Irf::default()), Some(&measured_background()), 8).unwrap()
}

struct Shared {
    plain_mc: Option<NormalizedHistogram>,
}

fn criterion_1(shared: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace_root().join("configs/antibunching.toml");
    let out = dir.path().join("model.csv");
    let status = qdstat()
        .args(["--config", cfg.to_str().unwrap(), "model-g2", "--line", "1", "--step-ps", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    if !status.success() {
        return check(false, format!("model-g2 exited with {status}"));
    }
    let (headers, cols) = read_csv(&std::fs::read_to_string(&out).unwrap());
    let col = |name: &str| &cols[headers.iter().position(|h| h == name).unwrap()];
    let tau = col("tau_ps");
    let zero = tau.iter().position(|&t| t == 0.0).unwrap();
    let raw0 = col("g2_raw")[zero];
    let bg0 = col("g2_background")[zero];
    let observed = col("g2_irf_background");
    let n = tau.len();
    let symmetric = (0..n).all(|i| (observed[i] - observed[n - 1 - i]).abs() < 1e-9);
    let minima = (1..n - 1).filter(|&i| observed[i] < observed[i - 1] && observed[i] <= observed[i + 1]).count();
    let single_dip = minima == 1 && observed[zero] == observed.iter().copied().fold(f64::INFINITY, f64::min);
    let model_ok = raw0 == 0.0 && (bg0 - 0.203).abs() <= 0.005 && observed[zero] > bg0 && symmetric && single_dip;

    let ladder = LadderConfig::with_pump_in_gamma1(0.65);
    let start = Instant::now();
    let (mc, emitted) = antibunching_run(&ladder, 0.01, 11);
    let model = plain_model(&ladder);
    let (chi2, dof) = chi2_per_dof(&mc, &model, 2000.0);
    let mc_ok = emitted >= 10_000_000 && chi2 < 1.5;
    shared.plain_mc = Some(mc);
    check(
        model_ok && mc_ok,
        format!(
            "g2_raw(0) = {raw0}, g2_background(0) = {bg0:.5}, after IRF g2(0) = {:.4} (single symmetric dip: {}); \
             Monte Carlo {emitted} emissions in {:.1} s, chi2/dof = {chi2:.3} over {dof} bins",
            observed[zero],
            symmetric && single_dip,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let ladder = LadderConfig::with_pump_in_gamma1(0.204);
    let kind = Correlation::Cross { start_line: 2, stop_line: 1 };
    let at_zero = kind.ideal(&ladder, &[-0.0, 0.0]).unwrap();
    let p1 = steady_state(&build_generator(&ladder).unwrap()).unwrap().get(1);
    let jump_ok = at_zero[0].abs() < 1e-12 && (at_zero[1] - 1.0 / p1).abs() < 1e-9 && at_zero[1] > 1.0;

    // Exponential tail of the positive side, away from the IRF-scale region.
    let tau: Vec<f64> = (0..=272).map(|i| 280.0 + 10.0 * i as f64).collect();
    let g = kind.ideal(&ladder, &tau).unwrap();
    let fit = fit_least_squares(
        |p| Ok(tau.iter().map(|t| 1.0 + p[0] * (-t / p[1]).exp()).collect()),
        &g,
        &vec![1e-3; g.len()],
        &[g[0] - 1.0, 250.0],
        &["amplitude", "tau_ps"],
        None,
        &FitOptions::default(),
    )
    .unwrap();
    let t_fit = fit.value("tau_ps");
    let tail_ok = (t_fit - 251.0).abs() <= 0.1 * 251.0;

    let mut cfg = SimConfig::cw(ladder.clone(), 0.02, 21);
    cfg.detectors = [DetectorConfig::passing(&[2]), DetectorConfig::passing(&[1])];
    let out = simulate_sharded(&cfg, 8).unwrap();
    let window = Window::symmetric(HALF_WINDOW_PS, BIN_PS).unwrap();
    let h = correlate(&times(&out.channel_a), &times(&out.channel_b), &window, CorrelationMode::Full, 0.02).unwrap();
    let mc = normalize(&h).unwrap();
    let model = binned_model(&ladder, kind, &window, None, None, 8).unwrap();
    let worst = (0..mc.len())
        .map(|i| ((mc.g2[i] - model[i]) / mc.g2_err[i]).abs())
        .fold(0.0, f64::max);
    let (chi2, _) = chi2_per_dof(&mc, &model, HALF_WINDOW_PS);
    check(
        jump_ok && tail_ok && worst < 3.0,
        format!(
            "g(0-) = {:.1e}, g(0+) = {:.4} = 1/p1 (p1 = {p1:.5}); tail fit over 280-3000 ps: T = {t_fit:.1} ps \
             ({:+.1}% from 251); Monte Carlo worst bin {worst:.2} sigma, chi2/dof {chi2:.3}",
            at_zero[0],
            at_zero[1],
            100.0 * (t_fit / 251.0 - 1.0)
        ),
    )
}

fn decay_fit(pairs: u32, level: usize, slow_ps: f64, seed: u64) -> (f64, f64, f64, f64) {
    let ladder = LadderConfig::with_pump_in_gamma1(0.0);
    let fast = ladder.lifetimes_ps[level - 1];
    let mut pulsed = PulsedConfig::new(100_000.0, pairs);
    pulsed.slow_components.push(SlowComponent::from_amplitude_ratio(level, 0.05, fast, slow_ps));
    let mut cfg = SimConfig::cw(ladder, 1e6 * 100_000.0 / PS_PER_S, seed);
    cfg.excitation = Excitation::Pulsed(pulsed);
    let (h, _) = qdstat_core::sim::simulate_pulsed_decay(&cfg, 16.0).unwrap();
    assert_eq!(h.pulses, 1_000_000);
    let fit = fit_decay_histogram(&h, level as u8).unwrap().result;
    (fit.value("T"), fit.std_error("T"), fit.value("T2"), fit.std_error("T2"))
}

fn criterion_3() -> Outcome {
    let (t1, e1, s1, es1) = decay_fit(1, 1, 6220.0, 31);
    let (t2, e2, s2, es2) = decay_fit(2, 2, 3220.0, 32);
    let ok = (t1 - 251.0).abs() <= 5.0
        && (s1 - 6220.0).abs() <= 680.0
        && (t2 - 185.0).abs() <= 5.0
        && (s2 - 3220.0).abs() <= 680.0;
    check(
        ok,
        format!(
            "X1: T = {t1:.1} ± {e1:.1} ps, T' = {:.3} ± {:.3} ns; X2: T = {t2:.1} ± {e2:.1} ps, T' = {:.3} ± {:.3} ns",
            s1 / 1000.0,
            es1 / 1000.0,
            s2 / 1000.0,
            es2 / 1000.0
        ),
    )
}

fn criterion_4() -> Outcome {
    let m = simulate_resolution_measurement(&ResolutionSetup::ti_sapphire(200_000, 41)).unwrap();
    let ok = (m.central_fwhm_ps - 140.0).abs() <= 0.05 * 140.0 && m.peak_spacing_ps == 12_500.0;
    check(ok, format!("central FWHM {:.2} ps, peak spacing {} ps", m.central_fwhm_ps, m.peak_spacing_ps))
}

fn criterion_5() -> Outcome {
    let mut cfg = SimConfig::cw(LadderConfig::with_pump_in_gamma1(0.0), 12_600.0, 51);
    cfg.detectors[0].dark_rate_cps = 10_000.0;
    cfg.detectors[1].dark_rate_cps = 7000.0;
    let window = Window::symmetric(HALF_WINDOW_PS, BIN_PS).unwrap();
    let (h, _) = simulate_and_correlate(&cfg, 126, &window, CorrelationMode::Full).unwrap();
    let expected = 10_000.0 * 7000.0 * BIN_PS * 1e-12 * 12_600.0;
    let n = h.counts.len() as f64;
    let mean = h.counts.iter().sum::<u64>() as f64 / n;
    let mean_err = (mean / n).sqrt();
    let g = normalize(&h).unwrap();
    let g_mean = g.g2.iter().sum::<f64>() / n;
    let g_err = (g.g2_err.iter().map(|e| e * e).sum::<f64>()).sqrt() / n;
    let within = g.g2.iter().zip(&g.g2_err).filter(|(x, e)| (*x - 1.0).abs() <= **e).count();
    let ok = (mean - expected).abs() <= 3.0 * mean_err && (g_mean - 1.0).abs() <= 3.0 * g_err;
    check(
        ok,
        format!(
            "mean {mean:.2} ± {mean_err:.2} coincidences per bin (expected {expected:.3}); mean g2 = {g_mean:.4} ± {g_err:.4}; \
             {within}/{} bins within one error bar of 1",
            g.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    // Brute-force pair counting on small random fixtures.
    let mut rng_state = 0x2545_F491_4F6C_DD1Du64;
    let mut next = || {
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        (rng_state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut pairs_ok = true;
    for trial in 0..200 {
        let n_a = 1 + (next() * 50.0) as usize;
        let n_b = 1 + (next() * 50.0) as usize;
        let mut a: Vec<f64> = (0..n_a).map(|_| (next() * 4000.0).round()).collect();
        let mut b: Vec<f64> = (0..n_b).map(|_| (next() * 4000.0).round()).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let w = [7.0, 49.0, 100.0][trial % 3];
        let window = Window::symmetric(700.0, w).unwrap();
        let m = (700.0 / w).round() as i64;
        let mut brute = vec![0u64; (2 * m + 1) as usize];
        for &s in &a {
            for &p in &b {
                let k = ((p - s) / w).round() as i64;
                if k.abs() <= m {
                    brute[(k + m) as usize] += 1;
                }
            }
        }
        let h = correlate(&a, &b, &window, CorrelationMode::Full, 1.0).unwrap();
        pairs_ok &= h.counts == brute;
    }

    // Two-level emitter: g2(tau) = 1 - exp(-(r + Gamma) tau).
    let (r, t1) = (0.003, 251.0);
    let two = LadderConfig::new(vec![t1], r);
    let taus: Vec<f64> = (0..200).map(|i| i as f64 * 17.0).collect();
    let g = g2_auto(&two, 1, &taus).unwrap();
    let closed_err = taus
        .iter()
        .zip(&g)
        .map(|(t, v)| (v - (1.0 - (-(r + 1.0 / t1) * t).exp())).abs())
        .fold(0.0, f64::max);

    // Steady state against long-time evolution from the empty dot.
    let ladder = LadderConfig::with_pump_in_gamma1(0.65);
    let gen = build_generator(&ladder).unwrap();
    let ss = steady_state(&gen).unwrap();
    let late = evolve(&gen, &StateDistribution::pure(gen.n_states(), 0), 50_000.0).unwrap();
    let ss_err = ss.probabilities().iter().zip(late.probabilities()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // Background correction undone by its inverse.
    let bg = measured_background();
    let inv_err = (0..1000)
        .map(|i| {
            let x = i as f64 * 0.01 - 2.0;
            (bg.correct(bg.uncorrect(x).unwrap()).unwrap() - x).abs()
        })
        .fold(0.0, f64::max);

    let ok = pairs_ok && closed_err < 1e-6 && ss_err < 1e-8 && inv_err < 1e-12;
    check(
        ok,
        format!(
            "brute-force pairs bin-exact on 200 fixtures: {pairs_ok}; two-level closed form max error {closed_err:.1e}; \
             steady state vs evolve {ss_err:.1e}; correction involution {inv_err:.1e}"
        ),
    )
}

fn criterion_7(shared: &Shared) -> Outcome {
    let plain_ladder = LadderConfig::with_pump_in_gamma1(0.65);
    let model = plain_model(&plain_ladder);
    let plain = fit_g2_overlay(shared.plain_mc.as_ref().expect("criterion 1 data"), &model).unwrap();
    let dark_ladder = plain_ladder.clone().with_dark(DarkConfig::demo());
    let (dark_mc, _) = antibunching_run(&dark_ladder, 0.01, 71);
    let dark = fit_g2_overlay(&dark_mc, &model).unwrap();
    let ok = (plain.ratio - 1.0).abs() <= 0.1 && dark.ratio > 1.0;
    check(
        ok,
        format!(
            "plain ladder: FWHM {:.1} ± {:.1} ps vs model {:.1} ps, ratio {:.3} ± {:.3}; dark-exciton demo rates: \
             FWHM {:.1} ± {:.1} ps, ratio {:.3} ± {:.3}",
            plain.measured.fwhm_ps,
            plain.measured.fwhm_err_ps,
            plain.model.fwhm_ps,
            plain.ratio,
            plain.ratio_err,
            dark.measured.fwhm_ps,
            dark.measured.fwhm_err_ps,
            dark.ratio,
            dark.ratio_err
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[ladder]\npump_gamma1 = 0.65\n[sim]\nacquisition_s = 0.0005\nseed = 81\nshards = 4\n\
         [detector.A]\nlines = [1]\njitter_fwhm_ps = 99.0\ndark_rate_cps = 1e6\n[detector.B]\nlines = [1]\njitter_fwhm_ps = 99.0\n",
    )
    .unwrap();
    let run = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let a = dir.path().join(format!("a{tag}.qdts"));
        let b = dir.path().join(format!("b{tag}.qdts"));
        let h = dir.path().join(format!("h{tag}.csv"));
        let cfg = config.to_str().unwrap();
        let s1 = qdstat().args(["--config", cfg, "simulate", "--out-a"]).arg(&a).arg("--out-b").arg(&b).output().unwrap();
        assert!(s1.status.success(), "{}", String::from_utf8_lossy(&s1.stderr));
        let s2 = qdstat()
            .args(["--config", cfg, "correlate", "--normalize", "--start"])
            .arg(&a)
            .arg("--stop")
            .arg(&b)
            .arg("--out")
            .arg(&h)
            .output()
            .unwrap();
        assert!(s2.status.success(), "{}", String::from_utf8_lossy(&s2.stderr));
        (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(h).unwrap())
    };
    let first = run("1");
    let second = run("2");
    let ok = first == second && first.0.len() > 5;
    check(
        ok,
        format!(
            "two runs: timestamp files {} / {} bytes identical: {}, histogram CSV identical: {}",
            first.0.len(),
            first.1.len(),
            first.0 == second.0 && first.1 == second.1,
            first.2 == second.2
        ),
    )
}

fn main() {
    let mut shared = Shared { plain_mc: None };
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {n} [{}] {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((n, name, o));
    };
    run(1, "antibunching reproduction", &mut || criterion_1(&mut shared));
    run(2, "cross-correlation reproduction", &mut criterion_2);
    run(3, "lifetime fits", &mut criterion_3);
    run(4, "IRF calibration", &mut criterion_4);
    run(5, "normalization sanity", &mut criterion_5);
    run(6, "oracle suite", &mut criterion_6);
    run(7, "anomaly diagnostic", &mut || criterion_7(&shared));
    run(8, "determinism", &mut criterion_8);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
