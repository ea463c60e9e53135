use edcs_core::absorption::{
    calibrate_strength_scale, fit_cell_params, ingest_line_list, scale_strengths, transmittance_spectrum,
    FitOptions, FreeParams, GasCell, MeasuredPoint, SpectralLine,
};
use edcs_core::EdcsError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn truth() -> GasCell {
    GasCell::new(17.5, 25.0, 296.0, 0.5).unwrap()
}

fn lines() -> Vec<SpectralLine> {
    let raw = ingest_line_list(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/hcn_band.csv")).unwrap();
    let k = calibrate_strength_scale(&raw, &truth(), 3.0).unwrap();
    scale_strengths(&raw, k)
}

/// 500 points at 350 MHz spacing around the strongest line.
fn grid(lines: &[SpectralLine]) -> Vec<f64> {
    let f0 = lines
        .iter()
        .max_by(|a, b| a.strength.total_cmp(&b.strength))
        .unwrap()
        .center_hz;
    (0..500).map(|k| f0 + (k as f64 - 250.0) * 350e6 + 40e6).collect()
}

fn noiseless(lines: &[SpectralLine]) -> Vec<MeasuredPoint> {
    let f = grid(lines);
    let t = transmittance_spectrum(&f, &truth(), lines).unwrap();
    f.into_iter()
        .zip(t)
        .map(|(freq_hz, transmittance)| MeasuredPoint {
            freq_hz,
            transmittance,
            sigma: 0.01,
        })
        .collect()
}

fn noisy(lines: &[SpectralLine], seed: u64) -> Vec<MeasuredPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noiseless(lines)
        .into_iter()
        .map(|p| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let t = p.transmittance * (1.0 + 0.01 * e);
            MeasuredPoint {
                transmittance: t,
                sigma: 0.01 * t,
                ..p
            }
        })
        .collect()
}

#[test]
fn fixed_point_at_truth() {
    let l = lines();
    let r = fit_cell_params(&noiseless(&l), &l, &truth(), FreeParams::default(), &FitOptions::default()).unwrap();
    assert!((r.cell.mole_fraction - 0.5).abs() / 0.5 < 1e-10);
    assert_eq!(r.params.len(), 1);
    assert_eq!(r.dof, 499);
}

#[test]
fn converges_from_factor_two() {
    let l = lines();
    let init = GasCell {
        mole_fraction: 1.0,
        ..truth()
    };
    let r = fit_cell_params(&noiseless(&l), &l, &init, FreeParams::default(), &FitOptions::default()).unwrap();
    assert!((r.cell.mole_fraction - 0.5).abs() / 0.5 < 1e-6, "{}", r.cell.mole_fraction);
}

#[test]
fn pressure_and_fraction_together() {
    let l = lines();
    let init = GasCell {
        mole_fraction: 0.4,
        pressure_torr: 30.0,
        ..truth()
    };
    let free = FreeParams {
        mole_fraction: true,
        pressure: true,
    };
    let r = fit_cell_params(&noiseless(&l), &l, &init, free, &FitOptions::default()).unwrap();
    assert!((r.cell.mole_fraction - 0.5).abs() < 1e-6);
    assert!((r.cell.pressure_torr - 25.0).abs() < 1e-4);
    assert_eq!(r.covariance.len(), 2);
}

#[test]
fn zero_strength_is_degenerate() {
    let l = scale_strengths(&lines(), 0.0);
    let pts = noiseless(&lines());
    assert!(matches!(
        fit_cell_params(&pts, &l, &truth(), FreeParams::default(), &FitOptions::default()),
        Err(EdcsError::DegenerateJacobian(_))
    ));
}

#[test]
fn iteration_cap_reports_best_so_far() {
    let l = lines();
    let init = GasCell {
        mole_fraction: 0.05,
        ..truth()
    };
    let opts = FitOptions {
        max_iterations: 1,
        ..FitOptions::default()
    };
    match fit_cell_params(&noisy(&l, 3), &l, &init, FreeParams::default(), &opts) {
        Err(EdcsError::NonConvergence { best_params, .. }) => assert_eq!(best_params.len(), 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rejects_bad_inputs() {
    let l = lines();
    let mut pts = noiseless(&l);
    pts[3].sigma = 0.0;
    assert!(fit_cell_params(&pts, &l, &truth(), FreeParams::default(), &FitOptions::default()).is_err());
    let none = FreeParams {
        mole_fraction: false,
        pressure: false,
    };
    assert!(fit_cell_params(&noiseless(&l), &l, &truth(), none, &FitOptions::default()).is_err());
}

#[test]
fn three_sigma_coverage_over_100_seeds() {
    let l = lines();
    let covered = (0..100u64)
        .filter(|&seed| {
            let r = fit_cell_params(&noisy(&l, seed), &l, &truth(), FreeParams::default(), &FitOptions::default())
                .unwrap();
            let p = r.param("mole_fraction").unwrap();
            (p.value - 0.5).abs() <= 3.0 * p.sigma
        })
        .count();
    assert!(covered >= 95, "{covered}/100");
}

/// Wald–Wolfowitz runs test on residual signs, two-sided at 5%.
fn runs_test_passes(res: &[f64]) -> bool {
    let signs: Vec<bool> = res.iter().map(|&r| r > 0.0).collect();
    let n1 = signs.iter().filter(|&&s| s).count() as f64;
    let n2 = signs.len() as f64 - n1;
    let runs = 1 + signs.windows(2).filter(|w| w[0] != w[1]).count();
    let n = n1 + n2;
    let mu = 2.0 * n1 * n2 / n + 1.0;
    let var = (mu - 1.0) * (mu - 2.0) / (n - 1.0);
    ((runs as f64 - mu) / var.sqrt()).abs() < 1.96
}

#[test]
fn residuals_are_white() {
    let l = lines();
    let passed = (0..20u64)
        .filter(|&seed| {
            let r = fit_cell_params(&noisy(&l, 1000 + seed), &l, &truth(), FreeParams::default(), &FitOptions::default())
                .unwrap();
            let z: Vec<f64> = r.residuals.iter().map(|x| x.normalized).collect();
            runs_test_passes(&z)
        })
        .count();
    // Each seed fails with probability 5% under whiteness.
    assert!(passed >= 16, "{passed}/20");
}

#[test]
fn fit_result_serializes() {
    let l = lines();
    let r = fit_cell_params(&noisy(&l, 9), &l, &truth(), FreeParams::default(), &FitOptions::default()).unwrap();
    let s = serde_json::to_string(&r).unwrap();
    assert!(s.contains("\"mole_fraction\""));
    assert!(s.contains("\"residuals\""));
}
