use approx::assert_relative_eq;
use stslab::experiments::{
    bs_closed_form, payoff_eval, price_at, rms_error, run_method, vanilla_bs_check, HestonSetup, Method, Payoff, Roi,
};
use stslab::grid::{Grid1D, StretchSpec};
use stslab::operator::{assemble_bs, BsParams, HestonParams};
use stslab::reference::crank_nicolson_run;
use stslab::spectral::{eigenvalues_dense, gershgorin_radius};
use stslab::sts::{
    make_coefficients, run_integrator, select_stage_count, stability_extent, stability_poly_eval, super_step,
    RhoSource, ScalarRhs, SchemeFamily,
};
use stslab::{Lattice, UpwindPolicy};

/// Coefficients of the polynomial produced by running the stage recurrence
/// on `y' = z y`, with states held as coefficient vectors in `z`.
fn recurrence_polynomial(family: SchemeFamily, s: usize) -> Vec<f64> {
    let c = make_coefficients(family, s).unwrap();
    let times_z = |p: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; s + 1];
        for (k, v) in p.iter().enumerate().take(s) {
            out[k + 1] = *v;
        }
        out
    };
    let mut y0 = vec![0.0; s + 1];
    y0[0] = 1.0;
    let f0 = times_z(&y0);
    let mut prev2 = y0.clone();
    let mut prev1: Vec<f64> = (0..=s).map(|k| y0[k] + c.mu_tilde[1] * f0[k]).collect();
    for j in 2..=s {
        let f = times_z(&prev1);
        let next: Vec<f64> = (0..=s)
            .map(|k| {
                c.mu[j] * prev1[k]
                    + c.nu[j] * prev2[k]
                    + (1.0 - c.mu[j] - c.nu[j]) * y0[k]
                    + c.mu_tilde[j] * f[k]
                    + c.gamma_tilde[j] * f0[k]
            })
            .collect();
        prev2 = prev1;
        prev1 = next;
    }
    prev1
}

#[test]
fn rkl_four_stage_polynomial_matches_cas() {
    // expansion of a + b P_4(1 + w1 z) with the Legendre P_4, exact rationals
    let expected = [1.0, 1.0, 0.5, 7.0 / 81.0, 7.0 / 1458.0];
    let got = recurrence_polynomial(SchemeFamily::Rkl, 4);
    for (g, e) in got.iter().zip(expected) {
        assert!((g - e).abs() < 1e-12, "{got:?}");
    }
}

#[test]
fn second_order_conditions_hold_for_every_family() {
    let families = [
        SchemeFamily::rkc(0.0),
        SchemeFamily::rkc(10.0),
        SchemeFamily::Rkl,
        SchemeFamily::rkg(),
        SchemeFamily::Rkg { g: 1.5 },
    ];
    for family in families {
        for s in [2, 3, 5, 8, 13, 21] {
            let p = recurrence_polynomial(family, s);
            assert!((p[0] - 1.0).abs() < 1e-12, "{family:?} s={s}");
            assert!((p[1] - 1.0).abs() < 1e-10, "{family:?} s={s}");
            assert!((p[2] - 0.5).abs() < 1e-10, "{family:?} s={s}");
        }
    }
}

#[test]
fn rkc_five_stage_chebyshev_closed_form() {
    let c = make_coefficients(SchemeFamily::rkc(0.0), 5).unwrap();
    let x = c.w0 + c.w1 * -2.0;
    let t5 = 16.0 * x.powi(5) - 20.0 * x.powi(3) + 5.0 * x;
    assert_relative_eq!(
        stability_poly_eval(&c, -2.0),
        c.a[5] + c.b[5] * t5,
        max_relative = 1e-13
    );
}

#[test]
fn undamped_rkc_extent_closed_form() {
    for s in [4, 9, 10, 25] {
        let c = make_coefficients(SchemeFamily::rkc(0.0), s).unwrap();
        let beta = stability_extent(&c).unwrap();
        let sf = s as f64;
        let b = (sf * sf - 1.0) / (3.0 * sf * sf);
        // even s: P returns to 1 at x = -1; odd s: P falls to -1 at T_s(x) = 1 - 2/b
        let x_edge = if s.is_multiple_of(2) {
            -1.0
        } else {
            -((2.0 / b - 1.0).acosh() / sf).cosh()
        };
        let exact = (1.0 - x_edge) * (sf * sf - 1.0) / 3.0;
        assert!((beta - exact).abs() < 1e-7 * exact, "s={s}: {beta} vs {exact}");
    }
    let beta10 = stability_extent(&make_coefficients(SchemeFamily::rkc(0.0), 10).unwrap()).unwrap();
    assert!((beta10 / 99.0 / (2.0 / 3.0) - 1.0).abs() < 0.02);
}

#[test]
fn damped_rkc_stays_inside_the_unit_band() {
    for s in [6, 10, 20] {
        let c = make_coefficients(SchemeFamily::rkc(10.0), s).unwrap();
        let beta = stability_extent(&c).unwrap();
        let worst = (0..=2000)
            .map(|k| -beta * (0.05 + 0.9 * k as f64 / 2000.0))
            .map(|z| stability_poly_eval(&c, z).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.999, "s={s}: {worst}");
    }
    // without damping the polynomial returns to 1 where T_s(x) = 1
    let s = 10;
    let c = make_coefficients(SchemeFamily::rkc(0.0), s).unwrap();
    for k in 1..s / 2 {
        let x = (2.0 * std::f64::consts::PI * k as f64 / s as f64).cos();
        let z = (x - c.w0) / c.w1;
        assert!((stability_poly_eval(&c, z) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn extent_ordering_at_equal_stage_count() {
    for s in [8, 12, 16] {
        let beta = |f| stability_extent(&make_coefficients(f, s).unwrap()).unwrap();
        let (rkc, rkl, rkg) = (
            beta(SchemeFamily::rkc(0.0)),
            beta(SchemeFamily::Rkl),
            beta(SchemeFamily::rkg()),
        );
        assert!(rkc > rkl && rkl > rkg, "s={s}: {rkc} {rkl} {rkg}");
    }
}

#[test]
fn stage_selection_on_the_heston_operator_is_minimal() {
    let setup = HestonSetup::default();
    let op = setup.operator(UpwindPolicy::PartialFitting).unwrap();
    let rho = gershgorin_radius(&op);
    let dt = setup.params.expiry / 16.0;
    for family in [SchemeFamily::rkc(10.0), SchemeFamily::Rkl, SchemeFamily::rkg()] {
        let sel = select_stage_count(family, dt, rho).unwrap();
        let beta = |s| stability_extent(&make_coefficients(family, s).unwrap()).unwrap();
        assert!(sel.feasible);
        assert!(0.95 * beta(sel.s) >= dt * rho);
        assert!(0.95 * beta(sel.s - 1) < dt * rho, "{family:?} s={}", sel.s);
    }
}

#[test]
fn scalar_super_step_equals_polynomial() {
    for family in [SchemeFamily::rkc(10.0), SchemeFamily::Rkl, SchemeFamily::rkg()] {
        let c = make_coefficients(family, 9).unwrap();
        let beta = stability_extent(&c).unwrap();
        let y0 = Lattice::from_vec(1, 1, vec![3.0]).unwrap();
        for frac in [0.0, 0.1, 0.37, 0.8, 1.0] {
            let lambda = -frac * beta / 0.25;
            let y = super_step(&c, &ScalarRhs(lambda), &y0, 0.25).unwrap();
            let p = stability_poly_eval(&c, -frac * beta);
            assert!((y.get(0, 0) - 3.0 * p).abs() < 1e-12 * 3.0, "{family:?} {frac}");
        }
    }
}

#[test]
fn stencil_matches_printed_formulas() {
    let setup = HestonSetup::default();
    let p = setup.params;
    let (gx, gv) = setup.grids().unwrap();
    let op = setup.operator(UpwindPolicy::None).unwrap();
    let (i, j) = (50, 25);
    let (x, v) = (gx.nodes()[i], gv.nodes()[j]);
    let h = |k: usize| gx.nodes()[k] - gx.nodes()[k - 1];
    let w = |k: usize| gv.nodes()[k] - gv.nodes()[k - 1];
    let (hi, hi1, wj, wj1) = (h(i), h(i + 1), w(j), w(j + 1));
    let mu = p.r - p.q;
    let a = (-mu * x * hi1 + v * x * x) / (hi * (hi + hi1));
    let c = (mu * x * hi + v * x * x) / (hi1 * (hi + hi1));
    let kv = p.kappa * (p.theta - v);
    let s2v = p.sigma * p.sigma * v;
    let d = (-kv * wj1 + s2v) / (wj * (wj + wj1));
    let e = (kv * wj + s2v) / (wj1 * (wj + wj1));
    let b = (mu * x * (hi1 - hi) - v * x * x) / (hi * hi1) + (kv * (wj1 - wj) - s2v) / (wj * wj1) - p.r;
    let omega = p.rho * p.sigma * v * x / ((hi + hi1) * (wj + wj1));
    let st = op.stencil(i, j);
    for (got, want) in [(st.a, a), (st.b, b), (st.c, c), (st.d, d), (st.e, e), (st.omega, omega)] {
        assert_relative_eq!(got, want, max_relative = 1e-14);
    }
}

#[test]
fn bs_fitted_nodes_match_peclet_scan() {
    let params = BsParams {
        sigma: 0.02,
        r: 0.1,
        q: 0.0,
        spot: 100.0,
        expiry: 1.0,
    };
    for (m, x_max) in [(100, 150.0), (400, 150.0), (100, 4000.0)] {
        let gx = Grid1D::from_spec(0.0, x_max, &StretchSpec::uniform(), m).unwrap();
        let op = assemble_bs(&params, &gx, UpwindPolicy::PartialFitting).unwrap();
        let h = x_max / m as f64;
        let scan = (1..m)
            .filter(|&i| {
                let x = i as f64 * h;
                (2.0 * h * params.r * x / (params.sigma * params.sigma * x * x)).abs() >= 2.0
            })
            .count();
        assert_eq!(op.stabilised_nodes(), scan, "m={m} x_max={x_max}");
    }
}

#[test]
fn roi_region_matches_scan() {
    let setup = HestonSetup::default();
    let (gx, gv) = setup.grids().unwrap();
    let roi = Roi::around_strike(setup.params.strike);
    let inside_x = gx.nodes().iter().filter(|&&x| (50.0..=150.0).contains(&x)).count();
    let inside_v = gv.nodes().iter().filter(|&&v| (0.0..=1.0).contains(&v)).count();
    assert_eq!(roi.region(&gx, &gv).len(), inside_x * inside_v);
}

#[test]
fn gershgorin_bounds_the_dense_spectrum() {
    let setup = HestonSetup {
        m: 40,
        n: 20,
        ..HestonSetup::default()
    };
    for policy in [
        UpwindPolicy::None,
        UpwindPolicy::PartialFitting,
        UpwindPolicy::FoulonRegionFitting,
    ] {
        let op = setup.operator(policy).unwrap();
        let sparse = op.to_sparse();
        let spec = eigenvalues_dense(&sparse, 1.0).unwrap();
        assert!(gershgorin_radius(&op) >= spec.max_modulus());
        assert_relative_eq!(spec.sum().re, sparse.trace(), max_relative = 1e-9);
        assert!(spec.sum().im.abs() < 1e-9 * sparse.trace().abs());
    }
}

#[test]
fn implicit_references_agree_on_vanilla() {
    let cn = vanilla_bs_check(Method::CrankNicolson, 400, 1000).unwrap();
    let tr = vanilla_bs_check(Method::TrBdf2, 400, 1000).unwrap();
    assert!(cn.rel_error < 5e-4, "{cn:?}");
    assert!(tr.rel_error < 5e-4, "{tr:?}");
    assert!(((cn.pde - tr.pde) / cn.pde).abs() < 5e-4);
}

#[test]
fn explicit_time_order_on_vanilla() {
    let params = BsParams {
        sigma: 0.2,
        r: 0.05,
        q: 0.0,
        spot: 100.0,
        expiry: 1.0,
    };
    let gx = Grid1D::from_spec(0.0, 400.0, &StretchSpec::foulon_x(100.0), 200).unwrap();
    let op = assemble_bs(&params, &gx, UpwindPolicy::None).unwrap();
    let init = payoff_eval(&Payoff::Call { strike: 100.0 }, &gx, 1);
    let fine = run_method(Method::CrankNicolson, &op, &init, 1.0, 20_000)
        .unwrap()
        .field;
    let window: Vec<usize> = (0..gx.len())
        .filter(|&i| (50.0..=150.0).contains(&gx.nodes()[i]))
        .collect();
    for scheme in [SchemeFamily::rkc(10.0), SchemeFamily::Rkl, SchemeFamily::rkg()] {
        let err = |l| {
            let out = run_method(scheme.into(), &op, &init, 1.0, l).unwrap();
            rms_error(&out.field, &fine, &window).unwrap()
        };
        let (e1, e2) = (err(20), err(40));
        let order = (e1 / e2).log2();
        assert!((1.5..=2.5).contains(&order), "{scheme:?}: {e1} {e2} order {order}");
    }
}

#[test]
fn single_step_run_is_one_super_step() {
    let setup = HestonSetup {
        m: 20,
        n: 10,
        ..HestonSetup::default()
    };
    let op = setup.operator(UpwindPolicy::PartialFitting).unwrap();
    let init = setup.initial(op.grid_x(), op.grid_v());
    let family = SchemeFamily::rkc(10.0);
    let (field, log) = run_integrator(family, &op, &init, 0.5, 1, RhoSource::Gershgorin).unwrap();
    let c = make_coefficients(family, log.s_per_step[0]).unwrap();
    assert_eq!(field, super_step(&c, &op, &init, 0.5).unwrap());
}

#[test]
fn heston_reference_self_convergence_and_rkc_ladder() {
    let setup = HestonSetup::default();
    let policy = UpwindPolicy::PartialFitting;
    let (gx, gv) = setup.grids().unwrap();
    let region = Roi::around_strike(setup.params.strike).region(&gx, &gv);
    let r4 = setup.reference(policy, 4000).unwrap();
    let r8 = setup.reference(policy, 8000).unwrap();
    assert!(rms_error(&r4, &r8, &region).unwrap() < 1e-4);

    // the reference price rises with variance at the strike
    let k = setup.params.strike;
    let prices: Vec<f64> = gv.nodes().iter().map(|&v| price_at(&r4, &gx, &gv, k, v)).collect();
    assert!(prices.windows(2).all(|w| w[1] > w[0]), "{prices:?}");

    let op = setup.operator(policy).unwrap();
    let init = setup.initial(&gx, &gv);
    let err = |l| {
        let out = run_method(SchemeFamily::rkc(10.0).into(), &op, &init, setup.params.expiry, l).unwrap();
        assert!(!out.exploded && out.field.is_finite());
        rms_error(&out.field, &r4, &region).unwrap()
    };
    assert!(err(200) < err(100));
}

#[test]
fn heston_without_vol_of_vol_is_black_scholes() {
    let params = HestonParams::default();
    // the v = theta row has no drift and almost no diffusion
    let p = HestonParams {
        sigma: 1e-8,
        rho: 0.0,
        v0: 0.04,
        theta: 0.04,
        ..params
    };
    let setup = HestonSetup {
        params: p,
        m: 200,
        n: 8,
        v_max: 0.08,
        v_grid: StretchSpec::uniform(),
        ..HestonSetup::default()
    };
    let op = setup.operator(UpwindPolicy::None).unwrap();
    let init = setup.initial(op.grid_x(), op.grid_v());
    let field = crank_nicolson_run(&op, &init, p.expiry, 400).unwrap();
    let pde = price_at(&field, op.grid_x(), op.grid_v(), p.spot, 0.04);
    let bs = BsParams {
        sigma: 0.2,
        r: p.r,
        q: p.q,
        spot: p.spot,
        expiry: p.expiry,
    };
    let exact = bs_closed_form(&bs, &Payoff::Call { strike: p.strike }).unwrap();
    assert!(((pde - exact) / exact).abs() < 2e-3, "{pde} vs {exact}");
}
