use std::f64::consts::PI;

use rhoreg::cluster::{self, ClusterSelection, CutoffFamily};
use rhoreg::density::{self, DecaySettings, MCSettings, MultiIndex, ProbeSettings, SumMode};
use rhoreg::wavefunction::{CorrelatedToy, HydrogenicProduct, WavefunctionModel};
use rhoreg::{geom, Error, MolecularSystem, Vec3};

/// Composite Simpson rule with `m` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn agree_within(a: &density::DensityEstimate, exact: f64, k: f64) {
    let diff = (a.value - exact).abs();
    assert!(diff <= k * a.std_error, "estimate {} ± {} vs {exact}", a.value, a.std_error);
}

/// `∫ e^{-2|y|} χ₂(|x - y|) dy` in spherical coordinates centred at `x`,
/// with the angular integral done in closed form.
fn excluded_ball_integral(r: f64, family: &CutoffFamily) -> f64 {
    let g_u = |u: f64| (-2.0 * u).exp() * (u / 2.0 + 0.25);
    let angular = |s: f64| {
        if s == 0.0 {
            4.0 * PI * (-2.0 * r).exp()
        } else {
            2.0 * PI / (r * s) * (g_u((r - s).abs()) - g_u(r + s))
        }
    };
    let g = |s: f64| s * s * family.chi(s).1 * angular(s);
    // Split at the cutoff edges and at s = r, where the integrand has kinks.
    let mut knots = [0.0, family.inner(), family.outer(), r, 40.0];
    knots.sort_by(f64::total_cmp);
    knots.windows(2).map(|w| simpson(g, w[0], w[1], 2000)).sum()
}

#[test]
fn two_electron_empty_selection_matches_quadrature() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = HydrogenicProduct::new(2.0, 1.0, 2).unwrap();
    let family = CutoffFamily::new(1.0, 2).unwrap();
    let empty = ClusterSelection::empty(2);
    for (i, x) in [[1.3, 0.0, 0.0], [0.0, 1.1, -0.4], [1.0, 1.0, 1.0]].into_iter().enumerate() {
        let r = geom::norm(x);
        let exact = (-2.0 * r).exp() * excluded_ball_integral(r, &family);
        let est = density::estimate_rho_clustered(&model, &sys, x, &empty, &family, &MCSettings::new(400_000, i as u64)).unwrap();
        agree_within(&est, exact, 3.0);
        // The excluded ball carries little mass, so both stay close to π e^{-2r}.
        assert!(exact < PI * (-2.0 * r).exp());
    }
}

#[test]
fn three_electron_pair_density_factorizes() {
    // ρ₂(x, x') = ψ(x)²ψ(x')² ∫ e^{-2|y|} dy for the product model.
    let sys = MolecularSystem::atom(3.0, 3).unwrap();
    let model = HydrogenicProduct::new(3.0, 1.0, 3).unwrap();
    let radial = simpson(|r| (-2.0 * r).exp() * 4.0 * PI * r * r, 0.0, 40.0, 400_000);
    let (x, y) = ([0.2, 0.4, -0.1], [-1.0, 0.3, 0.8]);
    let exact = model.orbital(x).powi(2) * model.orbital(y).powi(2) * radial;
    let est = density::estimate_rho2(&model, &sys, x, y, &MCSettings::new(10_000, 3)).unwrap();
    assert!((est.value - exact).abs() <= 1e-12 * exact);
    let full = density::estimate_rho2(&model, &sys, x, y, &MCSettings::new(10_000, 3).with_mode(SumMode::FullSum)).unwrap();
    assert!((full.value - 6.0 * exact).abs() <= 1e-11 * exact);
}

#[test]
fn density_is_rotation_invariant() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = CorrelatedToy::new(2.0, 0.25, 2).unwrap();
    let x = [0.6, -0.3, 0.8];
    let rotated = [-0.3, 0.8, 0.6];
    let rotated2 = [0.0, 0.0, geom::norm(x)];
    let a = density::estimate_rho(&model, &sys, x, &MCSettings::new(200_000, 1)).unwrap();
    for (i, y) in [rotated, rotated2].into_iter().enumerate() {
        let b = density::estimate_rho(&model, &sys, y, &MCSettings::new(200_000, 10 + i as u64)).unwrap();
        let sigma = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= 3.0 * sigma);
    }
}

#[test]
fn estimates_respect_the_certificate_envelope() {
    for n in [2, 3] {
        let sys = MolecularSystem::atom(2.0, n).unwrap();
        let model = CorrelatedToy::new(2.0, 0.25, n).unwrap();
        let cert = model.certificate();
        for r in [0.5, 1.5, 3.0] {
            let x = [r, 0.0, 0.0];
            let est = density::estimate_rho(&model, &sys, x, &MCSettings::new(20_000, 5)).unwrap();
            for eps in [0.1, 0.5, 0.9] {
                assert!(est.value + 3.0 * est.std_error <= density::density_envelope(&cert, eps, n, x));
            }
        }
    }
}

#[test]
fn chain_rule_matches_common_random_number_differences_for_correlated_model() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = CorrelatedToy::new(2.0, 0.25, 2).unwrap();
    let family = CutoffFamily::new(0.8, 2).unwrap();
    let x = [1.0, 0.5, -0.4];
    let gammas = [MultiIndex([1, 0, 0]), MultiIndex([0, 1, 0]), MultiIndex([0, 0, 1])];
    let mc = MCSettings::new(400_000, 21);
    let chain = density::estimate_rho_derivative_total(&model, &sys, x, &gammas, &family, &mc).unwrap();
    for (g, est) in gammas.iter().zip(&chain.total) {
        let fdv = density::estimate_rho_fd(&model, &sys, x, *g, 1e-2, &mc).unwrap();
        let sigma = (est.std_error.powi(2) + fdv.std_error.powi(2)).sqrt();
        let tol = (3.0 * sigma).max(1e-3 * fdv.value.abs());
        assert!((est.value - fdv.value).abs() <= tol, "{g:?}: {} vs {}", est.value, fdv.value);
    }
}

#[test]
fn chain_rule_for_three_electrons() {
    let sys = MolecularSystem::atom(3.0, 3).unwrap();
    let model = HydrogenicProduct::new(3.0, 1.0, 3).unwrap();
    let family = CutoffFamily::new(1.0, 3).unwrap();
    let x = [1.4, 0.3, 0.2];
    let gammas = [MultiIndex([1, 0, 0]), MultiIndex([0, 1, 1])];
    let mc = MCSettings::new(400_000, 33);
    let chain = density::estimate_rho_derivative_total(&model, &sys, x, &gammas, &family, &mc).unwrap();
    for (g, est) in gammas.iter().zip(&chain.total) {
        // The product model has constant importance weights, so the
        // difference quotient is exact up to its truncation error.
        let fdv = density::estimate_rho_fd(&model, &sys, x, *g, 1e-2, &mc).unwrap();
        let tol = (3.0 * est.std_error).max(1e-3 * fdv.value.abs());
        assert!((est.value - fdv.value).abs() <= tol, "{g:?}: {} ± {} vs {}", est.value, est.std_error, fdv.value);
    }
}

#[test]
fn selections_sum_to_rho_for_each_derivative_order() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = CorrelatedToy::new(2.0, 0.25, 2).unwrap();
    let family = CutoffFamily::new(1.0, 2).unwrap();
    let x = [0.0, 1.6, 0.0];
    let mc = MCSettings::new(200_000, 8);
    let est = density::estimate_rho_derivative_total(&model, &sys, x, &[MultiIndex::ZERO], &family, &mc).unwrap();
    let sum: f64 = est.per_selection.iter().map(|e| e[0].value).sum();
    assert!((sum - est.total[0].value).abs() <= 1e-12 * sum);
    let rho = density::estimate_rho(&model, &sys, x, &mc).unwrap();
    let sigma = (rho.std_error.powi(2) + est.total[0].std_error.powi(2)).sqrt();
    assert!((rho.value - est.total[0].value).abs() <= 3.0 * sigma);
}

fn cyclic(p: Vec3) -> Vec3 {
    [p[2], p[0], p[1]]
}

#[test]
fn probe_tables_follow_axis_permutations() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = CorrelatedToy::new(2.0, 0.25, 2).unwrap();
    let settings = ProbeSettings {
        max_order: 2,
        ..ProbeSettings::default()
    };
    let x = [0.7, 0.4, -0.5];
    let mc = MCSettings::new(100_000, 4);
    let a = density::smoothness_probe(&model, &sys, x, &settings, &mc).unwrap();
    let b = density::smoothness_probe(&model, &sys, cyclic(x), &settings, &mc).unwrap();
    // Axis a at x corresponds to axis a + 1 at the permuted point.
    for order in 1..=2 {
        for axis in 0..3 {
            let ra = a.rows.iter().find(|r| r.gamma == MultiIndex::axis(axis, order)).unwrap();
            let rb = b.rows.iter().find(|r| r.gamma == MultiIndex::axis((axis + 1) % 3, order)).unwrap();
            for i in 0..3 {
                let sigma = (ra.std_errors[i].powi(2) + rb.std_errors[i].powi(2)).sqrt();
                assert!((ra.estimates[i] - rb.estimates[i]).abs() <= 4.0 * sigma + 1e-12);
            }
        }
    }
}

#[test]
fn hydrogenic_probe_away_from_the_nucleus_is_smooth_and_cusp_free() {
    let sys = MolecularSystem::atom(2.0, 1).unwrap();
    let model = HydrogenicProduct::new(2.0, 1.0, 1).unwrap();
    let settings = ProbeSettings {
        cusp_tolerance: 0.1,
        ..ProbeSettings::default()
    };
    let d = 1.0 / 3f64.sqrt();
    let t = density::smoothness_probe(&model, &sys, [d, d, d], &settings, &MCSettings::new(1, 0)).unwrap();
    assert!(t.smooth && !t.cusp);
    assert_eq!(t.rho.samples, 0);
    let t0 = density::smoothness_probe(&model, &sys, [0.0; 3], &settings, &MCSettings::new(1, 0)).unwrap();
    assert!(t0.cusp);
    // ρ = e^{-2|x|}: one-sided slopes ∓2 along every axis.
    for o in &t0.one_sided {
        assert!((o.forward + 2.0).abs() < 1e-3 && (o.backward - 2.0).abs() < 1e-3);
    }
}

#[test]
fn third_order_decay_uses_finite_differences() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = HydrogenicProduct::new(2.0, 1.0, 2).unwrap();
    let radii = [2.0, 3.0, 4.0, 5.0];
    let fit = density::decay_fit(&model, &sys, MultiIndex([1, 1, 1]), &radii, &DecaySettings::default(), &MCSettings::new(1_000, 1)).unwrap();
    // ρ = π e^{-2r}; on the diagonal ∂x∂y∂z ρ = -π e^{-2r}(8 + 12/r + 6/r²)/(3√3).
    let logs: Vec<f64> = radii
        .iter()
        .map(|&r| (PI * (-2.0 * r).exp() * (8.0 + 12.0 / r + 6.0 / (r * r)) / (3.0 * 3f64.sqrt())).ln())
        .collect();
    let mean_r = radii.iter().sum::<f64>() / 4.0;
    let mean_l = logs.iter().sum::<f64>() / 4.0;
    let num: f64 = radii.iter().zip(&logs).map(|(r, l)| (r - mean_r) * (l - mean_l)).sum();
    let den: f64 = radii.iter().map(|r| (r - mean_r).powi(2)).sum();
    let exact = num / den;
    assert!((fit.slope - exact).abs() < 1e-3, "{} vs {exact}", fit.slope);
    assert!(fit.satisfied);
}

#[test]
fn decay_of_a_vanishing_derivative_is_signal_below_noise() {
    // ∂_x ρ vanishes on the y axis by symmetry; only noise remains.
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = CorrelatedToy::new(2.0, 0.25, 2).unwrap();
    let settings = DecaySettings {
        direction: [0.0, 1.0, 0.0],
        ..DecaySettings::default()
    };
    let res = density::decay_fit(&model, &sys, MultiIndex([1, 0, 0]), &[2.5, 3.0, 3.5], &settings, &MCSettings::new(20_000, 2));
    assert!(matches!(res, Err(Error::SignalBelowNoise { .. })), "{res:?}");
}

#[test]
fn mismatched_proposal_still_converges_for_pair_density() {
    let sys = MolecularSystem::atom(2.0, 3).unwrap();
    let model = HydrogenicProduct::new(2.0, 1.0, 3).unwrap();
    let (x, y) = ([0.5, 0.0, 0.0], [0.0, -0.5, 0.5]);
    let exact = model.orbital(x).powi(2) * model.orbital(y).powi(2) * PI;
    let est = density::estimate_rho2(&model, &sys, x, y, &MCSettings::new(200_000, 6).with_exponent(0.7)).unwrap();
    agree_within(&est, exact, 3.0);
    assert!(est.std_error > 0.0);
}

#[test]
fn norm_of_the_product_model() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = HydrogenicProduct::new(2.0, 1.0, 2).unwrap();
    let est = density::estimate_norm(&model, &sys, &MCSettings::new(1_000, 0)).unwrap();
    assert!((est.value - PI * PI).abs() < 1e-12 * PI * PI);
    let corr = CorrelatedToy::new(2.0, 0.25, 2).unwrap();
    let e = density::estimate_norm(&corr, &sys, &MCSettings::new(100_000, 0)).unwrap();
    assert!(e.value > 0.0 && e.std_error < 0.05 * e.value);
}

#[test]
fn cluster_estimates_skip_nuclear_balls() {
    let sys = MolecularSystem::atom(2.0, 2).unwrap();
    let model = CorrelatedToy::new(2.0, 0.25, 2).unwrap();
    let family = CutoffFamily::new(1.0, 2).unwrap();
    for s in cluster::all_selections(2).unwrap() {
        let r = density::estimate_rho_clustered(&model, &sys, [0.9, 0.0, 0.0], &s, &family, &MCSettings::new(10, 0));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}

#[test]
fn derivatives_vanishing_by_symmetry_are_flat() {
    let sys = MolecularSystem::atom(2.0, 1).unwrap();
    let model = HydrogenicProduct::new(2.0, 1.0, 1).unwrap();
    let t = density::smoothness_probe(&model, &sys, [0.0, 0.0, 1.0], &ProbeSettings::default(), &MCSettings::new(1, 0)).unwrap();
    for row in &t.rows {
        let odd_transverse = row.gamma.0[2] == 0 && row.gamma.order() % 2 == 1;
        assert_eq!(row.flat, odd_transverse, "{:?}", row.gamma);
        assert!(row.flat || row.consistency_order >= density::SMOOTH_ORDER);
    }
    assert!(t.smooth);
}
