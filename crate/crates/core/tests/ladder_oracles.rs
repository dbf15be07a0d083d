use qdstat_core::ladder::{
    build_generator, evolve, g2_auto, g2_cross, saturation_curve, steady_state, LadderConfig, StateDistribution,
};

fn dot() -> LadderConfig {
    LadderConfig::with_pump_in_gamma1(0.65)
}

/// Plain RK4 on dp/dt = M p with a fixed step, written independently of the
/// library's integrator.
fn rk4_reference(m: &[Vec<f64>], p0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let n = p0.len();
    let h = t / steps as f64;
    let f = |p: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| m[i][j] * p[j]).sum()).collect() };
    let mut p = p0.to_vec();
    for _ in 0..steps {
        let k1 = f(&p);
        let p2: Vec<f64> = (0..n).map(|i| p[i] + 0.5 * h * k1[i]).collect();
        let k2 = f(&p2);
        let p3: Vec<f64> = (0..n).map(|i| p[i] + 0.5 * h * k2[i]).collect();
        let k3 = f(&p3);
        let p4: Vec<f64> = (0..n).map(|i| p[i] + h * k3[i]).collect();
        let k4 = f(&p4);
        for i in 0..n {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    p
}

fn dense(config: &LadderConfig) -> Vec<Vec<f64>> {
    let g = build_generator(config).unwrap();
    let n = g.n_states();
    (0..n).map(|i| (0..n).map(|j| g.get(i, j)).collect()).collect()
}

#[test]
fn evolution_matches_refined_reference() {
    let cfg = dot();
    let g = build_generator(&cfg).unwrap();
    let p0 = StateDistribution::pure(g.n_states(), 0);
    let p = evolve(&g, &p0, 500.0).unwrap();
    let min_t = cfg.lifetimes_ps.iter().copied().fold(f64::INFINITY, f64::min);
    let coarse_steps = (500.0 / (min_t / 50.0)).ceil() as usize;
    let reference = rk4_reference(&dense(&cfg), p0.probabilities(), 500.0, 10 * coarse_steps);
    for (a, b) in p.probabilities().iter().zip(&reference) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn steady_state_is_long_time_limit() {
    let cfg = dot();
    let g = build_generator(&cfg).unwrap();
    let ss = steady_state(&g).unwrap();
    let late = evolve(&g, &StateDistribution::pure(g.n_states(), 0), 100.0 * cfg.lifetimes_ps[0]).unwrap();
    for (a, b) in ss.probabilities().iter().zip(late.probabilities()) {
        assert!((a - b).abs() < 1e-8);
    }
    let residual = g.matrix().mul_vec(ss.probabilities());
    assert!(residual.iter().all(|r| r.abs() < 1e-10));
}

#[test]
fn steady_state_at_working_pump() {
    let ss = steady_state(&build_generator(&dot()).unwrap()).unwrap();
    let expected = [0.4717, 0.3066, 0.1469, 0.0571, 0.0177];
    for (a, b) in ss.probabilities().iter().zip(expected) {
        assert!((a - b).abs() < 5e-4, "{a} vs {b}");
    }
}

#[test]
fn two_level_closed_form() {
    for &(r, t1) in &[(0.001, 251.0), (0.01, 251.0), (0.5, 100.0)] {
        let cfg = LadderConfig::new(vec![t1], r);
        let taus: Vec<f64> = (0..400).map(|i| i as f64 * 7.5).collect();
        let g = g2_auto(&cfg, 1, &taus).unwrap();
        for (t, v) in taus.iter().zip(&g) {
            let exact = 1.0 - (-(r + 1.0 / t1) * t).exp();
            assert!((v - exact).abs() < 1e-6, "r={r} tau={t}: {v} vs {exact}");
        }
    }
}

#[test]
fn correlations_decorrelate_at_long_delay() {
    let cfg = LadderConfig::with_pump_in_gamma1(0.204);
    let far = 50.0 * cfg.lifetimes_ps[0];
    let auto = g2_auto(&cfg, 1, &[far, -far]).unwrap();
    let cross = g2_cross(&cfg, 2, 1, &[far, -far]).unwrap();
    for v in auto.iter().chain(&cross) {
        assert!((v - 1.0).abs() < 1e-4, "{v}");
    }
}

#[test]
fn cross_jump_identity() {
    for pump in [0.05, 0.204, 0.65, 2.0] {
        let cfg = LadderConfig::with_pump_in_gamma1(pump);
        let p1 = steady_state(&build_generator(&cfg).unwrap()).unwrap().get(1);
        let g = g2_cross(&cfg, 2, 1, &[-0.0, 0.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] * p1 - 1.0).abs() < 1e-12, "pump {pump}: {}", g[1] * p1);
    }
}

#[test]
fn exciton_intensity_peaks_at_finite_pump() {
    let cfg = dot();
    let g1 = 1.0 / cfg.lifetimes_ps[0];
    let grid: Vec<f64> = (0..400).map(|i| g1 * 10f64.powf(-2.0 + i as f64 * 0.01)).collect();
    let i1 = saturation_curve(&cfg, &grid, 1).unwrap();
    let imax = (0..i1.len()).fold(0, |b, i| if i1[i] > i1[b] { i } else { b });
    assert!(imax > 0 && imax < grid.len() - 1, "argmax at the edge of the scan");
    assert!(i1[grid.len() - 1] < 0.5 * i1[imax]);
}

#[test]
fn upper_lifetimes_are_not_critical() {
    // The exciton dip at the working pump barely moves when T3 and T4 change by 30%.
    let taus: Vec<f64> = (0..60).map(|i| i as f64 * 25.0).collect();
    let base = g2_auto(&dot(), 1, &taus).unwrap();
    for scale in [0.7, 1.3] {
        let mut cfg = dot();
        cfg.lifetimes_ps[2] *= scale;
        cfg.lifetimes_ps[3] *= scale;
        let g = g2_auto(&cfg, 1, &taus).unwrap();
        let worst = base.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 0.03, "scale {scale}: {worst}");
    }
}

#[test]
fn dip_width_at_working_pump() {
    let taus: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.25).collect();
    let g = g2_auto(&dot(), 1, &taus).unwrap();
    let i = g.iter().position(|&v| v >= 0.5).unwrap();
    let x = taus[i - 1] + (0.5 - g[i - 1]) / (g[i] - g[i - 1]) * 0.25;
    assert!((2.0 * x - 168.9).abs() < 0.5, "FWHM {}", 2.0 * x);
}
