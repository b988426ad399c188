//! End-to-end acceptance gate: one test per criterion, each printing a
//! single pass/fail line. Every criterion is property-based at desk scale.

use std::time::{Duration, Instant};

use eikonal::expr;
use eikonal::family2d::{Eval2Options, Family2D};
use eikonal::family3d::{ConstraintVariant, EvalOptions, Family3D, PVariant, RVariant};
use eikonal::numkernel::minkowski_dot;
use eikonal::verify::{
    closure_audit, fiber_residuals_at, intermediate_ycheck, residuals_at,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Print the verdict line for a criterion and panic on failure.
fn verdict(number: usize, name: &str, pass: bool, detail: &str) {
    let flag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number} ({name}): {flag} — {detail}");
    assert!(pass, "criterion {number} ({name}) failed: {detail}");
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

/// Random polynomial of total degree <= 3 in z1, z2 with coefficients in
/// [lo, hi], plus a constant offset, written in DSL syntax.
fn random_poly(rng: &mut ChaCha8Rng, lo: f64, hi: f64, constant: f64) -> String {
    let mut terms = vec![format!("{constant}")];
    for a in 0..=3usize {
        for b in 0..=(3 - a) {
            if a == 0 && b == 0 {
                continue;
            }
            let c: f64 = rng.gen_range(lo..hi);
            terms.push(format!("({c})*z1^{a}*z2^{b}"));
        }
    }
    terms.join(" + ")
}

/// Draw criterion-4 family texts, rejecting draws whose g dips below the
/// constructor's floor on the validation disk.
fn random_family(rng: &mut ChaCha8Rng) -> (String, String, Family3D) {
    loop {
        let g = random_poly(rng, -0.2, 0.2, 1.0);
        let k = random_poly(rng, -0.3, 0.3, 0.0);
        if let Ok(fam) = Family3D::from_text(&g, &k) {
            return (g, k, fam);
        }
    }
}

fn audit_box_point(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.2..1.2),
    ]
}

#[test]
fn criterion_1_plane_wave_pair() {
    let t0 = Instant::now();
    let u = |x: &[f64; 4]| Some(x[0] + x[1]);
    let v = |x: &[f64; 4]| Some((x[0] - x[1]) / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        let rep = residuals_at(&u, &v, &x, 1e-2);
        worst = worst.max(rep.max_abs());
    }
    let pass = worst <= 1e-12 && within(t0.elapsed(), 1.0);
    verdict(
        1,
        "plane-wave pair",
        pass,
        &format!("worst residual {worst:.2e} over 100 points in {:?}", t0.elapsed()),
    );
}

#[test]
fn criterion_2_closed_form_3d_family() {
    let t0 = Instant::now();
    let fam = Family3D::from_text("1", "0").unwrap();
    let opts = EvalOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_uv = 0.0f64;
    let mut worst_res = 0.0f64;
    for _ in 0..200 {
        let x = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.2..2.0),
        ];
        let results = fam.evaluate(&x, &opts).unwrap();
        let best = results
            .iter()
            .find(|e| e.solver.converged())
            .expect("closed-form family converges everywhere in the box");
        let rho = (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
        worst_uv = worst_uv
            .max((best.u - (-(x[0] + rho))).abs())
            .max((best.v - (rho - x[0]) / 2.0).abs());
        worst_res = worst_res.max(best.residuals.max_abs());
    }
    let pass = worst_uv <= 1e-8 && worst_res <= 1e-6 && within(t0.elapsed(), 5.0);
    verdict(
        2,
        "closed-form 3D family",
        pass,
        &format!(
            "worst |u,v − closed form| {worst_uv:.2e}, worst residual {worst_res:.2e}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn criterion_3_constraint_sign_discriminator() {
    let t0 = Instant::now();
    let x = [0.0, 0.6, 0.0, 0.8];
    let opts = EvalOptions::default();

    let good = Family3D::from_text("1", "0").unwrap().with_variants(
        ConstraintVariant::PaperYDisplay,
        PVariant::Printed,
        RVariant::Printed,
    );
    let res_good = good.evaluate(&x, &opts).unwrap()[0].residuals.res_uu.abs();

    let bad = Family3D::from_text("1", "0").unwrap().with_variants(
        ConstraintVariant::PaperXDisplay,
        PVariant::Printed,
        RVariant::Printed,
    );
    let res_bad = bad
        .evaluate(&x, &opts)
        .unwrap()
        .iter()
        .find(|e| e.solver.converged())
        .map(|e| e.residuals.res_uu.abs())
        .unwrap_or(f64::INFINITY);

    let audit = closure_audit(&Family3D::from_text("1", "0").unwrap(), 10, 7, &opts).unwrap();
    let selects_y = audit.selected.constraint == "paper_y_display";

    let pass = res_good <= 1e-6 && res_bad >= 1.0 && selects_y && within(t0.elapsed(), 1.0);
    verdict(
        3,
        "constraint-sign audit discriminator",
        pass,
        &format!(
            "y-display |res_uu| {res_good:.2e}, x-display |res_uu| {res_bad:.2e}, audit picked {}",
            audit.selected.constraint
        ),
    );
}

#[test]
fn criterion_4_random_3d_family_suite() {
    let t0 = Instant::now();
    let opts = EvalOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut findings = 0usize;
    let mut worst_null = 0.0f64;
    let mut worst_fiber = 0.0f64;
    for fam_i in 0..25u64 {
        let (_g, _k, fam) = random_family(&mut rng);
        let report = closure_audit(&fam, 20, 4000 + fam_i, &opts).unwrap();
        let selected = report
            .variants
            .iter()
            .find(|v| {
                v.constraint == report.selected.constraint
                    && v.p == report.selected.p
                    && v.r == report.selected.r
            })
            .unwrap();
        assert_eq!(
            selected.converged_points, 20,
            "all audit points must converge for the selected combination"
        );

        // null-gradient identity at every converged branch of fresh samples
        let mut prng = ChaCha8Rng::seed_from_u64(9000 + fam_i);
        for _ in 0..20 {
            let x = audit_box_point(&mut prng);
            for branch in fam.evaluate(&x, &opts).unwrap() {
                if branch.solver.converged() {
                    let g = fam.analytic_grad_u(&branch.z).unwrap();
                    worst_null = worst_null.max(minkowski_dot(&g, &g).abs());
                }
            }
        }

        if report.passed {
            continue;
        }
        // audit finding: no closure variant reaches the gate for this family;
        // the u-eikonal and coupling gates must still hold with the
        // fiber-derived closure
        findings += 1;
        let (c, p, r) = report.selected_variants();
        let fam_sel = fam.with_variants(c, p, r);
        for _ in 0..3 {
            let x = audit_box_point(&mut prng);
            let (res_uu, res_uv) = fiber_residuals_at(&fam_sel, &x, &opts).unwrap();
            worst_fiber = worst_fiber.max(res_uu.abs()).max(res_uv.abs());
        }
    }
    let pass = worst_null <= 1e-12 && worst_fiber <= 1e-4 && within(t0.elapsed(), 60.0);
    verdict(
        4,
        "random 3D family suite",
        pass,
        &format!(
            "{findings}/25 families recorded as audit findings; worst null-gradient {worst_null:.2e}, \
             worst fiber-closure gate {worst_fiber:.2e}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn criterion_5_intermediate_hodograph_system() {
    let t0 = Instant::now();
    let opts = EvalOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404); // same families as criterion 4
    let mut families: Vec<(Family3D, bool)> = Vec::new();
    for fam_i in 0..25u64 {
        let (g, k, fam) = random_family(&mut rng);
        let report = closure_audit(&fam, 20, 4000 + fam_i, &opts).unwrap();
        let (c, p, r) = report.selected_variants();
        let fam_sel = Family3D::from_text(&g, &k).unwrap().with_variants(c, p, r);
        families.push((fam_sel, report.passed));
    }
    // guarantee the v-equation gate is exercised: families with curl-free
    // closure gradients pass the audit and must satisfy it
    families.push((Family3D::from_text("1", "0").unwrap(), true));
    families.push((
        Family3D::from_text("1 + 0.2*z1 - 0.1*z2", "0")
            .unwrap()
            .with_variants(
                ConstraintVariant::PaperYDisplay,
                PVariant::NoCross,
                RVariant::FiberExact,
            ),
        true,
    ));

    let mut worst_eik4 = 0.0f64;
    let mut worst_eik4b = 0.0f64;
    let mut worst_eik4a = 0.0f64;
    let mut yrng = ChaCha8Rng::seed_from_u64(505);
    for (fam, audit_passed) in &families {
        let mut checked = 0;
        while checked < 10 {
            let y = audit_box_point(&mut yrng);
            let yc = match intermediate_ycheck(fam, &y, &opts) {
                Ok(yc) if yc.converged => yc,
                _ => continue,
            };
            checked += 1;
            worst_eik4 = worst_eik4.max(yc.eik4.abs());
            worst_eik4b = worst_eik4b.max(yc.eik4b.abs());
            if *audit_passed {
                // the v-equation depends on the closure; it is gated only
                // where a closure variant actually reached the audit gate
                worst_eik4a = worst_eik4a.max(yc.eik4a_corrected.abs());
            }
        }
    }
    let pass = worst_eik4 <= 1e-6
        && worst_eik4b <= 1e-6
        && worst_eik4a <= 1e-6
        && within(t0.elapsed(), 30.0);
    verdict(
        5,
        "intermediate hodograph system",
        pass,
        &format!(
            "worst eik4 {worst_eik4:.2e}, eik4b {worst_eik4b:.2e}, eik4a (audit-passing families, \
             corrected form) {worst_eik4a:.2e}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn criterion_6_two_dimensional_family() {
    let t0 = Instant::now();
    let opts = Eval2Options::default();

    // worked point: g = z, k = 0, h = 0 at x = (2, 0, −1)
    let fam = Family2D::from_text("z", "0", "0").unwrap();
    let results = fam.evaluate2(&[2.0, 0.0, -1.0], &opts).unwrap();
    let mut worked_ok = results.len() == 2;
    let root3 = 3.0f64.sqrt();
    for want_z in [-root3 / 2.0, root3 / 2.0] {
        let hit = results.iter().find(|r| (r.z - want_z).abs() <= 1e-9);
        match hit {
            Some(r) => {
                let sign = if want_z > 0.0 { -1.0 } else { 1.0 };
                worked_ok &= (r.u - sign * root3).abs() <= 1e-8
                    && (r.v - sign * root3 / 2.0).abs() <= 1e-8;
            }
            None => worked_ok = false,
        }
    }

    // random 2D polynomial families with |g'| bounded away from zero; the
    // display solves the system only when (k + h)' ≡ 0 (the u-eikonal
    // residual on the implicit surface reduces to (k' + h')²/s², zero iff
    // h = const − k), so h is drawn as const − k
    // step 1e-6 keeps the h² truncation error below the gate even at
    // near-tangent roots, where dz/dx is large
    let rand_opts = Eval2Options {
        fd_step: 1e-6,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let fam = loop {
            let slope: f64 = if rng.gen_bool(0.5) {
                rng.gen_range(0.4..1.0)
            } else {
                rng.gen_range(-1.0..-0.4)
            };
            let c2: f64 = rng.gen_range(-0.05..0.05);
            let c3: f64 = rng.gen_range(-0.02..0.02);
            let g = format!("({}) + ({slope})*z + ({c2})*z^2 + ({c3})*z^3", rng.gen_range(-0.5..0.5));
            let k = format!("({})*z + ({})*z^2", rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.2));
            let h = format!("({}) - ({k})", rng.gen_range(-0.5..0.5));
            if let Ok(f) = Family2D::from_text(&g, &k, &h) {
                break f;
            }
        };
        for _ in 0..10 {
            let x = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            if let Ok(branches) = fam.evaluate2(&x, &rand_opts) {
                for b in branches {
                    // skip roots within 0.01 of the coordinate singularity
                    // z = ±1, where the finite-difference check loses
                    // accuracy (the fields themselves stay exact)
                    if b.z.abs() > 0.99 || !b.branch_flag {
                        continue;
                    }
                    worst = worst
                        .max(b.res_uu.abs())
                        .max(b.res_vv.abs())
                        .max(b.res_uv_minus_1.abs());
                }
            }
        }
    }
    let pass = worked_ok && worst <= 1e-6 && within(t0.elapsed(), 10.0);
    verdict(
        6,
        "2+1-dimensional family",
        pass,
        &format!(
            "worked point recovered: {worked_ok}; worst random-family residual {worst:.2e}, {:?}",
            t0.elapsed()
        ),
    );
}

/// Random expression text of bounded depth over z1, z2, avoiding domain
/// hazards (denominators and log/sqrt arguments kept positive).
fn random_expr(rng: &mut ChaCha8Rng, depth: usize) -> String {
    if depth == 0 {
        return match rng.gen_range(0..3) {
            0 => "z1".to_string(),
            1 => "z2".to_string(),
            _ => format!("({:.3})", rng.gen_range(-2.0..2.0)),
        };
    }
    match rng.gen_range(0..8) {
        0 => format!(
            "({} + {})",
            random_expr(rng, depth - 1),
            random_expr(rng, depth - 1)
        ),
        1 => format!(
            "({} - {})",
            random_expr(rng, depth - 1),
            random_expr(rng, depth - 1)
        ),
        2 => format!(
            "({} * {})",
            random_expr(rng, depth - 1),
            random_expr(rng, depth - 1)
        ),
        3 => format!("({} / (2.5 + z1^2 + z2^2))", random_expr(rng, depth - 1)),
        4 => {
            let f = ["sin", "cos", "atan", "sinh"][rng.gen_range(0..4)];
            format!("{f}({})", random_expr(rng, depth - 1))
        }
        5 => "log(1.5 + z1^2 + z2^2)".to_string(),
        6 => "sqrt(1.5 + z1^2 + z2^2)".to_string(),
        _ => format!("({})^{}", random_expr(rng, depth - 1), rng.gen_range(1..4)),
    }
}

#[test]
fn criterion_7_expression_engine() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_fd = 0.0f64;
    let mut round_trip_ok = true;
    for _ in 0..1000 {
        let text = random_expr(&mut rng, 3);
        let e = expr::parse(&text, &["z1", "z2"]).expect("generated text parses");

        // parse/render round trip: identical tree, hence identical render
        // and bit-identical evaluation
        let rendered = e.render();
        let e2 = expr::parse(&rendered, &["z1", "z2"]).expect("rendered text parses");
        round_trip_ok &= e2.render() == rendered;

        let z = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
        match (e.eval(&z), e2.eval(&z)) {
            (Ok(a), Ok(b)) => round_trip_ok &= a.to_bits() == b.to_bits(),
            (Err(_), Err(_)) => {}
            _ => round_trip_ok = false,
        }

        if let Ok(d) = expr::fd_check(&e, &z, 1e-4) {
            worst_fd = worst_fd.max(d.max());
        }
    }
    let pass = worst_fd <= 1e-5 && round_trip_ok && within(t0.elapsed(), 5.0);
    verdict(
        7,
        "expression engine",
        pass,
        &format!(
            "worst jet-vs-FD discrepancy {worst_fd:.2e} over 1000 ASTs, round-trip exact: \
             {round_trip_ok}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn criterion_8_grid_determinism() {
    let cfg_json = r#"{
        "kind": "3d",
        "g": "1 + 0.1*z1",
        "k": "0.05*z1*z2",
        "grid": {
            "x0": {"min": -0.5, "max": 0.5, "count": 3},
            "x1": {"min": -0.5, "max": 0.5, "count": 3},
            "x2": {"min": -0.5, "max": 0.5, "count": 3},
            "x3": {"min": 0.3, "max": 1.1, "count": 3}
        }
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.json");
    std::fs::write(&path, cfg_json).unwrap();
    let cfg = eikonal::cli::RunConfig::load(path.to_str().unwrap()).unwrap();
    let a = eikonal::cli::grid_csv(&cfg).unwrap();
    let b = eikonal::cli::grid_csv(&cfg).unwrap();
    let pass = a == b && !a.is_empty();
    verdict(
        8,
        "grid determinism",
        pass,
        &format!("two runs byte-identical: {} ({} bytes)", a == b, a.len()),
    );
}
