use std::time::Instant;

use excel_core::basis::BasisSpec;
use excel_core::excel::{excel_effect, excel_linear, select_tail, Tail};
use excel_core::qr::{fit_check_loss, fit_ols, DesignMatrix};
use excel_core::scenarios::{generate, DgpConfig, Scenario};

#[test]
fn probe_timing_and_bias() {
    // Timing: QR fit at n=1000 and n=5000, p=2.
    for &n in &[1000usize, 5000] {
        let cfg = DgpConfig::new(Scenario::NoIvLinear, n, 1, 42);
        let g = generate(&cfg).unwrap();
        let design = DesignMatrix::with_intercept(&g.data.x).unwrap();
        let tau = 0.01 / (n as f64).powf(0.25);
        let t0 = Instant::now();
        let reps = 50;
        let mut acc = 0.0;
        for _ in 0..reps {
            let fit = fit_check_loss(&design, &g.data.y, 1.0 - tau).unwrap();
            acc += fit.beta[1];
        }
        let per = t0.elapsed().as_secs_f64() / reps as f64;
        eprintln!("n={n}: {:.3} ms/fit, slope={:.4}", per * 1e3, acc / reps as f64);
    }

    // Bias check across 30 replicates at n=1000 and n=5000.
    for &n in &[1000usize, 5000] {
        let tau = 0.01 / (n as f64).powf(0.25);
        let mut excel_est = Vec::new();
        let mut ols_est = Vec::new();
        let mut upper_count = 0;
        for r in 0..30u64 {
            let cfg = DgpConfig::new(Scenario::NoIvLinear, n, 1, 1000 + r);
            let g = generate(&cfg).unwrap();
            let x0 = g.data.x_means();
            let ts = select_tail(&g.data, tau, &BasisSpec::identity_linear(1), &x0, 10).unwrap();
            if ts.side == Tail::Upper {
                upper_count += 1;
            }
            let est = excel_linear(&g.data, tau, ts.side).unwrap();
            excel_est.push(est.theta[0]);
            let d = DesignMatrix::with_intercept(&g.data.x).unwrap();
            ols_est.push(fit_ols(&d, &g.data.y).unwrap()[1]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        eprintln!(
            "n={n}: excel bias={:.4}, ols bias={:.4}, upper picked {}/30",
            mean(&excel_est) - 0.4,
            mean(&ols_est) - 0.4,
            upper_count
        );
    }

    // Mixture identification at n=1e5.
    let cfg = DgpConfig::new(Scenario::MixtureIllustration, 100_000, 1, 7);
    let g = generate(&cfg).unwrap();
    let spec = BasisSpec::identity_linear(1);
    let t0 = Instant::now();
    for &tau in &[0.05, 0.02, 0.01, 0.005] {
        let est = excel_effect(&g.data, &[1.0], &[0.0], tau, &spec, Tail::Upper).unwrap();
        eprintln!("mixture tau={tau}: theta={:.4} err={:.4}", est.theta[0], (est.theta[0] - 0.5).abs());
    }
    eprintln!("mixture 4 fits took {:.2} s", t0.elapsed().as_secs_f64());
}

#[test]
fn probe_solver_breakdown() {
    use excel_core::qr::FitOptions;
    let n = 5000;
    let cfg = DgpConfig::new(Scenario::NoIvLinear, n, 1, 42);
    let g = generate(&cfg).unwrap();
    let design = DesignMatrix::with_intercept(&g.data.x).unwrap();
    let tau = 0.01 / (n as f64).powf(0.25);
    let level = 1.0 - tau;
    let variants: Vec<(&str, FitOptions)> = vec![
        ("default", FitOptions::default()),
        ("no_polish", FitOptions { polish_max_n: 0, ..FitOptions::default() }),
        ("loose_gap", FitOptions { gap_tolerance: 1e-9, ..FitOptions::default() }),
        ("cap20", FitOptions { max_iterations: 20, gap_tolerance: 1e-9, ..FitOptions::default() }),
    ];
    for (name, opts) in variants {
        let t0 = Instant::now();
        let mut obj = 0.0;
        for _ in 0..50 {
            match excel_core::qr::fit_check_loss_with(&design, &g.data.y, level, &opts) {
                Ok(fit) => obj = fit.objective,
                Err(e) => { eprintln!("{name}: ERR {e}"); break; }
            }
        }
        eprintln!("{name}: {:.3} ms/fit obj={:.12}", t0.elapsed().as_secs_f64() / 50.0 * 1e3, obj);
    }
    // median fit (easy level) for comparison
    let t0 = Instant::now();
    for _ in 0..50 { let _ = fit_check_loss(&design, &g.data.y, 0.5).unwrap(); }
    eprintln!("median: {:.3} ms/fit", t0.elapsed().as_secs_f64() / 50.0 * 1e3);
}
