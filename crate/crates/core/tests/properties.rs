use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use trilevel::scan::{extract_crossovers_refined, run_scan, Engine, ScanSpec};
use trilevel::semiclassical::{energy_surface_gradient, params_at, separatrix_residual};
use trilevel::{
    energy_surface, global_ground, minimize, separatrix, Configuration, Coupling, CouplingRange, MinimizeOptions,
    ModelParams, Order, Phase, SearchOptions, VariationalPoint,
};

fn arb_config() -> impl Strategy<Value = Configuration> {
    prop_oneof![Just(Configuration::Xi), Just(Configuration::Lambda), Just(Configuration::V)]
}

/// Validated parameters with both allowed couplings in `[-lim, lim]`.
fn arb_params(lim: f64) -> impl Strategy<Value = ModelParams> {
    (arb_config(), 0.2..1.5f64, 0.1..1.0f64, -lim..lim, -lim..lim).prop_map(|(config, w2, extra, x, y)| {
        let (xa, ya) = config.axes();
        ModelParams::new(config, [0.0, w2, w2 + extra], 1)
            .with_coupling(xa, x)
            .with_coupling(ya, y)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(p in arb_params(3.0), rb in 0.05..3.0f64, r2 in 0.05..3.0f64, r3 in 0.05..3.0f64) {
        let pt = VariationalPoint::new(rb, r2, r3);
        let g = energy_surface_gradient(pt, &p).unwrap();
        let h = 1e-5;
        let shifted = |k: usize, d: f64| {
            let mut v = [rb, r2, r3];
            v[k] += d;
            energy_surface(VariationalPoint::new(v[0], v[1], v[2]), &p).unwrap()
        };
        for k in 0..3 {
            let fd = (shifted(k, h) - shifted(k, -h)) / (2.0 * h);
            let scale = g[k].abs().max(1.0);
            prop_assert!((fd - g[k]).abs() / scale < 1e-6, "component {k}: analytic {} vs fd {fd}", g[k]);
        }
    }

    #[test]
    fn origin_energy_is_omega1(config in arb_config(), w1 in -1.0..1.0f64, x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let (xa, ya) = config.axes();
        let p = ModelParams::new(config, [w1, w1 + 0.7, w1 + 1.9], 1).with_coupling(xa, x).with_coupling(ya, y);
        prop_assert_eq!(energy_surface(VariationalPoint::ORIGIN, &p).unwrap(), w1);
    }

    #[test]
    fn coupling_signs_do_not_matter(p in arb_params(3.0), flip_x in any::<bool>(), flip_y in any::<bool>()) {
        let (xa, ya) = p.config.axes();
        let mut q = p;
        if flip_x { *q.coupling_mut(xa) = -p.coupling(xa); }
        if flip_y { *q.coupling_mut(ya) = -p.coupling(ya); }
        let a = minimize(&p, &MinimizeOptions::default()).unwrap();
        let b = minimize(&q, &MinimizeOptions::default()).unwrap();
        prop_assert!((a.energy_per_atom - b.energy_per_atom).abs() < 1e-12);
        prop_assert!((a.point.rho_bar.abs() - b.point.rho_bar.abs()).abs() < 1e-6);
        prop_assert_eq!(a.phase_label, b.phase_label);
    }
}

// Exact diagonalization is the expensive side here, so fewer cases.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_energy_below_coherent_state_bound(p in arb_params(3.0), n in 1u32..5) {
        let p = p.with_n_atoms(n);
        let sc = minimize(&p, &MinimizeOptions::default()).unwrap();
        let q = global_ground(&p, &SearchOptions::default()).unwrap();
        prop_assert!(q.converged);
        prop_assert!(q.energy <= n as f64 * sc.energy_per_atom + 1e-9, "{} vs {}", q.energy, n as f64 * sc.energy_per_atom);
    }

    #[test]
    fn sector_tail_stays_above_minimum(p in arb_params(3.0), n in 1u32..5) {
        let p = p.with_n_atoms(n);
        let q = global_ground(&p, &SearchOptions::default()).unwrap();
        let tail: Vec<f64> = q.sector_energies.values().rev().take(20).copied().collect();
        prop_assert_eq!(tail.len(), 20);
        prop_assert!(tail.iter().all(|e| *e > q.energy));
    }
}

/// Minimum of `gap sin^2 t - mu^2 sin^2 t cos^2 t` by dense sampling and
/// golden-section refinement.
fn two_level_oracle(gap: f64, mu: f64) -> f64 {
    let f = |t: f64| {
        let (s, c) = (t.sin(), t.cos());
        gap * s * s - mu * mu * s * s * c * c
    };
    let n = 20_000;
    let step = std::f64::consts::FRAC_PI_2 / n as f64;
    let best = (0..=n).min_by(|&a, &b| f(a as f64 * step).total_cmp(&f(b as f64 * step))).unwrap();
    let (mut lo, mut hi) = (((best as f64) - 1.0).max(0.0) * step, (best as f64 + 1.0) * step);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let (a, b) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f(0.5 * (lo + hi))
}

#[test]
fn ladder_two_level_limit_matches_scan_oracle() {
    for gap in [0.5, 1.0, 1.7] {
        for k in 0..=30 {
            let mu = 0.1 * k as f64;
            let p = ModelParams::new(Configuration::Xi, [0.0, gap, gap + 1.0], 1).with_coupling(Coupling::Mu12, mu);
            let r = minimize(&p, &MinimizeOptions::default()).unwrap();
            let oracle = two_level_oracle(gap, mu);
            assert_abs_diff_eq!(r.energy_per_atom, oracle, epsilon = 1e-8);
            if mu * mu > gap {
                let closed = -(mu * mu - gap).powi(2) / (4.0 * mu * mu);
                assert_abs_diff_eq!(r.energy_per_atom, closed, epsilon = 1e-10);
                assert_eq!(r.phase_label, Phase::Collective);
            } else {
                assert_eq!(r.phase_label, Phase::Normal);
            }
        }
    }
}

#[test]
fn separatrix_separates_minimizer_phases() {
    let cases = [
        (Configuration::Xi, [0.0, 1.0, 2.0]),
        (Configuration::Lambda, [0.0, 0.5, 1.3]),
        (Configuration::V, [0.0, 1.0, 1.5]),
    ];
    let opts = MinimizeOptions::default();
    for (config, w) in cases {
        let p = ModelParams::new(config, w, 1);
        let curve = separatrix(config, &p, CouplingRange::new(0.0, 3.0, 31)).unwrap();
        for seg in &curve.segments {
            for &(x, y) in &seg.points {
                if x < 1e-3 {
                    continue;
                }
                let inside = minimize(&params_at(config, &p, (x - 1e-4, y)), &opts).unwrap();
                let outside = minimize(&params_at(config, &p, (x + 1e-4, y)), &opts).unwrap();
                assert_eq!(inside.phase_label, Phase::Normal, "{config} inside at ({x}, {y})");
                assert_eq!(outside.phase_label, Phase::Collective, "{config} outside at ({x}, {y})");
                let closer = minimize(&params_at(config, &p, (x + 1e-6, y)), &opts).unwrap();
                assert_eq!(closer.phase_label, Phase::Collective, "{config} outside at ({x}, {y})");
                match seg.order {
                    // the order parameter switches on continuously
                    Order::Second => assert!(closer.photon_density < 0.1 * outside.photon_density, "{config} ({x}, {y})"),
                    // a collective minimum with zero relative energy takes over
                    Order::First => {
                        assert!(closer.photon_density > 0.05, "{config} ({x}, {y})");
                        assert!(closer.energy_per_atom - w[0] > -1e-5);
                    }
                }
            }
        }
    }
}

#[test]
fn refined_semiclassical_crossovers_lie_on_separatrix() {
    for (config, w) in [(Configuration::Xi, [0.0, 1.0, 2.0]), (Configuration::V, [0.0, 1.0, 1.5])] {
        let range = CouplingRange::new(0.0, 2.5, 11);
        let spec = ScanSpec::new(config, w, 1, range, range, Engine::Semiclassical);
        let grid = run_scan(&spec).unwrap();
        let set = extract_crossovers_refined(&grid, Some(1e-6)).unwrap();
        assert!(!set.is_empty());
        let p = ModelParams::new(config, w, 1);
        for c in &set.crossovers {
            for &(x, y) in &c.points {
                let r = separatrix_residual(config, &p, x, y).unwrap();
                assert!(r.abs() < 1e-5, "{config} ({x}, {y}) residual {r}");
            }
        }
    }
}

#[test]
fn separatrix_axes_follow_configuration() {
    let p = ModelParams::new(Configuration::Lambda, [0.0, 0.5, 1.3], 1);
    let curve = separatrix(Configuration::Lambda, &p, CouplingRange::new(0.0, 3.0, 7)).unwrap();
    assert_eq!((curve.x_axis, curve.y_axis), (Coupling::Mu13, Coupling::Mu23));
    let v = ModelParams::new(Configuration::V, [0.0, 1.0, 1.0], 1);
    let curve = separatrix(Configuration::V, &v, CouplingRange::new(0.0, 3.0, 7)).unwrap();
    assert_eq!((curve.x_axis, curve.y_axis), (Coupling::Mu12, Coupling::Mu13));
    assert!(curve.segments.iter().all(|s| s.order == Order::Second));
}

#[test]
fn excitation_density_matches_exact_ground_sector() {
    let n = 20;
    let cases = [
        (Configuration::Xi, [0.0, 1.0, 2.0], (2.0, 1.0)),
        (Configuration::Lambda, [0.0, 0.5, 1.3], (2.0, 1.0)),
        (Configuration::V, [0.0, 1.0, 1.0], (1.5, 1.2)),
    ];
    for (config, w, point) in cases {
        let p = params_at(config, &ModelParams::new(config, w, n), point);
        let sc = minimize(&p, &MinimizeOptions::default()).unwrap();
        let q = global_ground(&p, &SearchOptions::default()).unwrap();
        let density = q.m_star as f64 / n as f64;
        assert!((density - sc.m_per_atom).abs() <= 2.0 / n as f64, "{config}: {density} vs {}", sc.m_per_atom);
    }
}
