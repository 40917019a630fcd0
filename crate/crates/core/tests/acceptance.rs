//! Acceptance criteria A1–A8, one PASS/FAIL line each.
//!
//! Runs with `harness = false`. Failures are printed, and the process exits
//! nonzero only when `STSLAB_STRICT_ACCEPTANCE=1`, so the remaining test
//! targets still run under a plain `cargo test`.

use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stslab::experiments::{
    run_bs_study, run_delta_study, run_euler_study, run_restabilization, run_time_convergence, spectrum_for,
    vanilla_bs_check, BsStudyConfig, ConvergenceConfig, ExperimentReport, HestonSetup, Method, Roi,
};
use stslab::operator::{assemble_heston, UpwindPolicy};
use stslab::reference::{banded_factor, BandedMatrix};
use stslab::sparse::CooMatrix;
use stslab::spectral::{eigen_residuals, eigenvalues_dense};
use stslab::sts::{make_coefficients, stability_extent, stability_poly_eval, super_step, ScalarRhs, SchemeFamily};
use stslab::Lattice;

const LADDER: [usize; 10] = [10, 20, 40, 50, 80, 100, 200, 400, 800, 1600];
const L_REF: usize = 4000;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn fmt_reports(reports: &[ExperimentReport]) -> String {
    reports
        .iter()
        .map(|r| format!("l={}:{:.3e}{}", r.l, r.rms_error, if r.exploded { "!" } else { "" }))
        .collect::<Vec<_>>()
        .join(" ")
}

fn a1(setup: &HestonSetup, roi: &Roi) -> Outcome {
    let started = Instant::now();
    let policies = [
        UpwindPolicy::FoulonRegionFitting,
        UpwindPolicy::PartialFitting,
        UpwindPolicy::OSullivanOneSided,
    ];
    let runs: Vec<Vec<ExperimentReport>> = policies
        .iter()
        .map(|&policy| {
            run_time_convergence(&ConvergenceConfig {
                setup: setup.clone(),
                policy,
                method: SchemeFamily::rkc(10.0).into(),
                ladder: LADDER.to_vec(),
                l_ref: L_REF,
                roi: *roi,
            })
            .expect("convergence run")
        })
        .collect();
    let mut detail = String::new();
    let foulon = &runs[0];
    let at200 = foulon.iter().find(|r| r.l == 200).unwrap().rms_error;
    let min_small = foulon
        .iter()
        .filter(|r| r.l < 100)
        .map(|r| r.rms_error)
        .fold(f64::INFINITY, f64::min);
    let explosion = min_small >= 10.0 * at200;
    detail.push_str(&format!("foulon min(l<100)/l200 = {:.3e}; ", min_small / at200));
    let mut clean = true;
    for (policy, reps) in policies.iter().zip(&runs).skip(1) {
        let exploded = reps.iter().any(|r| r.exploded);
        let monotone = reps.windows(2).all(|w| w[1].rms_error <= 1.2 * w[0].rms_error);
        clean &= !exploded && monotone;
        detail.push_str(&format!(
            "{} exploded={exploded} non-increasing={monotone}; ",
            policy.name()
        ));
    }
    for (policy, reps) in policies.iter().zip(&runs) {
        println!("    A1 {}: {}", policy.name(), fmt_reports(reps));
    }
    detail.push_str(&format!("{:.0}s", started.elapsed().as_secs_f64()));
    Outcome {
        id: "A1",
        pass: explosion && clean,
        detail,
    }
}

fn a2(setup: &HestonSetup) -> Outcome {
    let started = Instant::now();
    let l = 16;
    let mut checks = true;
    let mut imag = Vec::new();
    let mut detail = String::new();
    for policy in [UpwindPolicy::FoulonRegionFitting, UpwindPolicy::PartialFitting] {
        let s = spectrum_for(setup, policy, l).expect("spectrum");
        let sym = s.is_conjugate_symmetric(1e-8);
        let stable = s.max_real <= 1e-6;
        let m = setup.operator(policy).unwrap().to_sparse();
        let res = eigen_residuals(&m, setup.params.expiry / l as f64, &s, 10, 7).unwrap();
        let worst = res.iter().cloned().fold(0.0, f64::max);
        checks &= sym && stable && worst <= 1e-7;
        detail.push_str(&format!(
            "{}: max|Im|={:.4e} maxRe={:.2e} conj={sym} resid={worst:.1e}; ",
            policy.name(),
            s.max_abs_imag,
            s.max_real
        ));
        imag.push(s.max_abs_imag);
    }
    let ratio = imag[0] / imag[1];
    let secs = started.elapsed().as_secs_f64();
    detail.push_str(&format!("ratio={ratio:.3} (need > 10); {secs:.0}s"));
    Outcome {
        id: "A2",
        pass: ratio > 10.0 && checks && secs < 300.0,
        detail,
    }
}

fn a3(setup: &HestonSetup, roi: &Roi, reference: &Lattice) -> Outcome {
    let schemes = [SchemeFamily::rkc(10.0), SchemeFamily::Rkl, SchemeFamily::rkg()];
    let study = run_delta_study(setup, UpwindPolicy::PartialFitting, 10, &schemes, reference, roi).unwrap();
    let osc: Vec<f64> = study.reports.iter().map(|r| r.osc_metric).collect();
    let (rkc, rkl, rkg) = (osc[0], osc[1], osc[2]);
    Outcome {
        id: "A3",
        pass: rkl >= 10.0 * rkc && rkg <= 3.0 * rkc && rkl > 0.0,
        detail: format!("delta osc at v=0: rkc={rkc:.4e} rkl={rkl:.4e} rkg={rkg:.4e}"),
    }
}

fn a4(setup: &HestonSetup, roi: &Roi, reference: &Lattice) -> Outcome {
    let reps = run_restabilization(
        setup,
        UpwindPolicy::FoulonRegionFitting,
        16,
        &[10.0, 1000.0],
        reference,
        roi,
    )
    .unwrap();
    let (low, high) = (&reps[0], &reps[1]);
    let ratio = high.mean_stages / low.mean_stages;
    Outcome {
        id: "A4",
        pass: !high.exploded && ratio >= 1.8,
        detail: format!(
            "stages eps=10: {} eps=1000: {} ratio={ratio:.2}; exploded={} rms(eps=1000)={:.3e}",
            low.mean_stages, high.mean_stages, high.exploded, high.rms_error
        ),
    }
}

fn a5_a6() -> (Outcome, Outcome) {
    let results = run_bs_study(&BsStudyConfig::default()).unwrap();
    let get = |name: &str| results.iter().find(|r| r.name == name).unwrap();
    for res in &results {
        let line: Vec<String> = res
            .reports
            .iter()
            .map(|r| format!("{}={:.3e}(s={})", r.scheme, r.osc_metric, r.mean_stages))
            .collect();
        println!(
            "    {}: threshold={:.3e} rho={:.4e} max|Im|={:.3e} {}",
            res.name,
            res.threshold,
            res.gershgorin,
            res.max_abs_imag,
            line.join(" ")
        );
    }
    let osc = |name: &str, scheme: &str| get(name).report(scheme).unwrap().osc_metric;

    let none = "uniform_none";
    let (rkl, rkg, tr) = (osc(none, "rkl"), osc(none, "rkg(g=2)"), osc(none, "tr_bdf2"));
    let none_ok = rkl >= 5.0 * rkg && rkl >= 5.0 * tr;
    let partial = get("uniform_partial");
    let partial_ok = partial.reports.iter().all(|r| partial.is_clean(r));
    let a5 = Outcome {
        id: "A5",
        pass: none_ok && partial_ok,
        detail: format!(
            "none: rkl={rkl:.4e} rkg={rkg:.4e} trbdf2={tr:.4e} (rkl/rkg={:.2}, rkl/trbdf2={:.2}); partial all clean={partial_ok}",
            rkl / rkg,
            rkl / tr
        ),
    };

    let (c20, c50) = (get("cubic_partial_l20"), get("cubic_partial_l50"));
    let rkl20 = c20.report("rkl").unwrap();
    let rkl50 = c50.report("rkl").unwrap();
    let rkl_ok = !c20.is_clean(rkl20) && c50.is_clean(rkl50);
    let others_ok = ["rkg(g=2)", "tr_bdf2"]
        .iter()
        .all(|s| c20.is_clean(c20.report(s).unwrap()));
    let no_explosion = results.iter().flat_map(|r| &r.reports).all(|r| !r.exploded);
    let a6 = Outcome {
        id: "A6",
        pass: rkl_ok && others_ok && no_explosion,
        detail: format!(
            "rkl l=20 osc={:.3e} (thr {:.3e}), l=50 osc={:.3e} (thr {:.3e}); rkg/trbdf2 clean at l=20={others_ok}; no explosion={no_explosion}",
            rkl20.osc_metric, c20.threshold, rkl50.osc_metric, c50.threshold
        ),
    };
    (a5, a6)
}

/// `Q_s` of each family by an independent route: trigonometric form for
/// Chebyshev, explicit hypergeometric sum for Gegenbauer.
fn q_closed(family: SchemeFamily, s: usize, x: f64) -> f64 {
    match family {
        SchemeFamily::Rkc { .. } => {
            let sf = s as f64;
            if x.abs() <= 1.0 {
                (sf * x.acos()).cos()
            } else if x > 1.0 {
                (sf * x.acosh()).cosh()
            } else {
                let sign = if s.is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * (sf * (-x).acosh()).cosh()
            }
        }
        SchemeFamily::Rkl | SchemeFamily::Rkg { .. } => {
            let g = match family {
                SchemeFamily::Rkg { g } => g,
                _ => 0.5,
            };
            // C_s^(g)(x) = sum_k (-1)^k Γ(s-k+g) / (Γ(g) k! (s-2k)!) (2x)^(s-2k)
            let mut total = 0.0;
            for k in 0..=s / 2 {
                let mut coef = 1.0;
                // Γ(s-k+g)/Γ(g) = prod_{t=0}^{s-k-1} (g+t)
                for t in 0..(s - k) {
                    coef *= g + t as f64;
                }
                for t in 1..=k {
                    coef /= t as f64;
                }
                for t in 1..=(s - 2 * k) {
                    coef /= t as f64;
                }
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                total += sign * coef * (2.0 * x).powi((s - 2 * k) as i32);
            }
            total
        }
        SchemeFamily::ExplicitEuler => unreachable!(),
    }
}

fn a7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let families = [
        SchemeFamily::rkc(0.0),
        SchemeFamily::rkc(10.0),
        SchemeFamily::Rkl,
        SchemeFamily::rkg(),
    ];

    // polynomial-recurrence equivalence
    let mut equiv = 0.0f64;
    let mut closed = 0.0f64;
    for fam in families {
        for s in 2..=32 {
            let c = make_coefficients(fam, s).unwrap();
            let beta = stability_extent(&c).unwrap();
            for _ in 0..20 {
                let z = -rng.gen_range(0.0..beta);
                let y0 = Lattice::from_vec(1, 1, vec![1.0]).unwrap();
                let y1 = super_step(&c, &ScalarRhs(z), &y0, 1.0).unwrap().get(0, 0);
                equiv = equiv.max((y1 - stability_poly_eval(&c, z)).abs());
                if s <= 12 {
                    let p = c.a[s] + c.b[s] * q_closed(fam, s, c.w0 + c.w1 * z);
                    closed = closed.max((y1 - p).abs());
                }
            }
        }
    }
    let equiv_ok = equiv <= 1e-11 && closed <= 1e-11;

    // order conditions by 5-point differences
    let mut order = 0.0f64;
    for fam in families {
        for s in 2..=32 {
            let c = make_coefficients(fam, s).unwrap();
            let p = |z: f64| stability_poly_eval(&c, z);
            let h = 1e-2;
            let d1 = (-p(2.0 * h) + 8.0 * p(h) - 8.0 * p(-h) + p(-2.0 * h)) / (12.0 * h);
            let d2 = (-p(2.0 * h) + 16.0 * p(h) - 30.0 * p(0.0) + 16.0 * p(-h) - p(-2.0 * h)) / (12.0 * h * h);
            order = order
                .max((p(0.0) - 1.0).abs())
                .max((d1 - 1.0).abs())
                .max((d2 - 1.0).abs());
        }
    }
    let euler = make_coefficients(SchemeFamily::ExplicitEuler, 1).unwrap();
    order = order.max((stability_poly_eval(&euler, 0.3) - 1.3).abs());
    let order_ok = order <= 1e-8;

    // row sums
    let setup = HestonSetup::default();
    let (gx, gv) = setup.grids().unwrap();
    let mut rows = 0.0f64;
    for policy in [
        UpwindPolicy::None,
        UpwindPolicy::PartialFitting,
        UpwindPolicy::FoulonRegionFitting,
    ] {
        let op = assemble_heston(&setup.params, &gx, &gv, policy).unwrap();
        for i in 1..gx.len() - 1 {
            for j in 1..gv.len() - 1 {
                let st = op.stencil(i, j);
                let scale = st.b.abs().max(1.0);
                rows = rows.max((st.row_sum() + setup.params.r).abs() / scale);
            }
        }
    }
    let rows_ok = rows <= 1e-12;

    // Toeplitz spectrum
    let (m, d, h) = (60usize, 0.7, 0.05);
    let mut t = CooMatrix::new(m - 1);
    for i in 0..m - 1 {
        t.push(i, i, -2.0 * d / (h * h));
        if i > 0 {
            t.push(i, i - 1, d / (h * h));
        }
        if i + 2 < m {
            t.push(i, i + 1, d / (h * h));
        }
    }
    let spec = eigenvalues_dense(&t, 1.0).unwrap();
    let mut got: Vec<f64> = spec.eigenvalues.iter().map(|z| z.re).collect();
    got.sort_by(f64::total_cmp);
    let mut want: Vec<f64> = (1..m)
        .map(|k| -(4.0 * d / (h * h)) * (k as f64 * std::f64::consts::PI / (2.0 * m as f64)).sin().powi(2))
        .collect();
    want.sort_by(f64::total_cmp);
    let toeplitz = got
        .iter()
        .zip(&want)
        .map(|(g, w)| ((g - w) / w).abs())
        .fold(0.0, f64::max);
    let toeplitz_ok = toeplitz <= 1e-8;

    // banded against dense
    let mut banded = 0.0f64;
    for trial in 0..20 {
        let n = 30 + trial * 3;
        let (kl, ku) = (1 + trial % 5, 2 + trial % 4);
        let mut a = BandedMatrix::<f64>::zeros(n, kl, ku);
        let mut dense = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let v = rng.gen_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 };
                a.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = banded_factor(&a).unwrap().solve(&b);
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let xd = dense.partial_piv_lu().solve(&rhs);
        for i in 0..n {
            banded = banded.max((x[i] - xd[(i, 0)]).abs());
        }
    }
    let banded_ok = banded <= 1e-10;

    let vanilla = vanilla_bs_check(Method::from(SchemeFamily::rkc(10.0)), 400, 100).unwrap();
    let vanilla_ok = vanilla.rel_error <= 1e-3 && !vanilla.exploded;

    Outcome {
        id: "A7",
        pass: equiv_ok && order_ok && rows_ok && toeplitz_ok && banded_ok && vanilla_ok,
        detail: format!(
            "equiv={equiv:.1e} closed-form={closed:.1e} order={order:.1e} rowsum={rows:.1e} toeplitz={toeplitz:.1e} banded={banded:.1e} bs-vanilla rel={:.2e} (pde {:.6} vs {:.6})",
            vanilla.rel_error, vanilla.pde, vanilla.exact
        ),
    }
}

fn a8(setup: &HestonSetup, roi: &Roi, reference: &Lattice) -> Outcome {
    let ladder = [1000, 16000, 32000, 64000];
    let outs = run_euler_study(setup, UpwindPolicy::PartialFitting, &ladder, reference, roi).unwrap();
    let feasible: Vec<_> = outs.iter().filter(|o| o.feasible).collect();
    let refused_ok = outs
        .iter()
        .all(|o| o.feasible == o.report.is_some() && (o.feasible == (o.dt_rho <= 1.9)));
    let errs: Vec<f64> = feasible.iter().map(|o| o.report.as_ref().unwrap().rms_error).collect();
    let decreasing = errs.len() >= 2 && errs.windows(2).all(|w| w[1] < w[0]);
    let lines: Vec<String> = outs
        .iter()
        .map(|o| match &o.report {
            Some(r) => format!("l={} dt*rho={:.2} rms={:.3e}", o.l, o.dt_rho, r.rms_error),
            None => format!("l={} dt*rho={:.2} refused", o.l, o.dt_rho),
        })
        .collect();
    Outcome {
        id: "A8",
        pass: refused_ok && decreasing && outs.iter().any(|o| !o.feasible),
        detail: lines.join("; "),
    }
}

fn main() {
    // ignore libtest arguments such as --nocapture
    let started = Instant::now();
    let setup = HestonSetup::default();
    let roi = Roi::around_strike(setup.params.strike);
    let (partial_ref, foulon_ref) = rayon::join(
        || setup.reference(UpwindPolicy::PartialFitting, L_REF).unwrap(),
        || setup.reference(UpwindPolicy::FoulonRegionFitting, L_REF).unwrap(),
    );

    let mut outcomes = Vec::new();
    let mut record = |o: Outcome| {
        println!("{} {} {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        outcomes.push(o);
    };
    record(a1(&setup, &roi));
    record(a2(&setup));
    record(a3(&setup, &roi, &partial_ref));
    record(a4(&setup, &roi, &foulon_ref));
    let (a5, a6) = a5_a6();
    record(a5);
    record(a6);
    record(a7());
    record(a8(&setup, &roi, &partial_ref));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} passed in {:.0}s{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() && std::env::var("STSLAB_STRICT_ACCEPTANCE").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
