mod common;

use edcs_core::detection::{snr_amplitude, BeatnoteRecord, DetectionImperfections, SqueezingReference};
use edcs_core::metrics::*;
use edcs_core::EdcsError;
use num_complex::Complex64;
use proptest::prelude::*;

fn tones(var: f64, amp: f64) -> Vec<BeatnoteRecord> {
    (1..=5)
        .map(|n| BeatnoteRecord {
            index: n,
            rf_freq_hz: n as f64 * 4e6,
            mean_amp: Complex64::new(amp, 0.0),
            noise_var: var,
            eta_plus: 1.0,
            eta_minus: 1.0,
        })
        .collect()
}

fn arm(var: f64) -> ArmRecords {
    ArmRecords {
        reference: tones(var, 0.5),
        sample: tones(var, 0.5),
    }
}

fn pcfg(n_seeds: usize, seed: u64) -> PrecisionConfig {
    PrecisionConfig {
        sample_rate_hz: 100e6,
        rbw_hz: 100e3,
        m_list: vec![10, 20, 50, 100, 200, 500, 1000],
        n_seeds,
        seed,
        mode: PipelineMode::BeatBins,
        target_m: None,
    }
}

#[test]
fn beat_bins_match_full_pipeline() {
    let recs = tones(0.6, 0.4);
    let m = [1, 7, 30];
    let full = beat_estimates_at(&recs, 100e6, 100e3, &m, 42, PipelineMode::Full).unwrap();
    let fast = beat_estimates_at(&recs, 100e6, 100e3, &m, 42, PipelineMode::BeatBins).unwrap();
    for (a, b) in full.iter().flatten().zip(fast.iter().flatten()) {
        assert!((a.amplitude - b.amplitude).norm() < 1e-12);
    }
}

#[test]
fn zero_squeezing_gives_unit_speedup() {
    let r = precision_vs_averages(&arm(1.0), &arm(1.0), &pcfg(1000, 1)).unwrap();
    assert!((r.speedup - 1.0).abs() < 0.1, "{}", r.speedup);
    assert_eq!(r.analytic_speedup, 1.0);
}

#[test]
fn variance_ratio_sets_speedup() {
    let ratio = 10f64.powf(-0.23);
    let r = precision_vs_averages(&arm(ratio), &arm(1.0), &pcfg(1000, 2)).unwrap();
    assert!((r.analytic_speedup - 10f64.powf(0.23)).abs() < 1e-12);
    assert!((r.speedup - 1.7).abs() < 0.15, "{}", r.speedup);
    for w in r.curve.windows(2) {
        assert!(w[1].dcs <= w[0].dcs * 1.05 && w[1].edcs <= w[0].edcs * 1.05);
    }
    assert_eq!(r.m_dcs, 1000);
    assert!(!r.extrapolated);
}

#[test]
fn unreachable_target_is_reported() {
    match precision_vs_averages(&arm(4.0), &arm(1.0), &pcfg(100, 3)) {
        Err(EdcsError::Unreachable { max_m, .. }) => assert_eq!(max_m, 1000),
        other => panic!("{other:?}"),
    }
}

#[test]
fn precision_config_is_checked() {
    let mut c = pcfg(5, 0);
    assert!(precision_vs_averages(&arm(1.0), &arm(1.0), &c).is_err());
    c.n_seeds = 10;
    c.m_list = vec![10, 5];
    assert!(precision_vs_averages(&arm(1.0), &arm(1.0), &c).is_err());
}

#[test]
fn measured_squeezing_analytic_speedup() {
    let exp = common::experiment(SqueezingReference::Detected, DetectionImperfections::experiment());
    let e = exp.arm_records(Arm::Edcs).unwrap();
    let d = exp.arm_records(Arm::Dcs).unwrap();
    let s = d.analytic_cost().unwrap() / e.analytic_cost().unwrap();
    assert!((1.5..=1.9).contains(&s), "{s}");
}

#[test]
fn snr_advantage_conventions() {
    let z = snr_advantage(&tones(1.0, 1.0), &tones(1.0, 1.0), 10).unwrap();
    assert_eq!(z.aggregate_power_db, 0.0);
    assert_eq!(z.aggregate_amplitude_db, 0.0);
    let a = snr_advantage(&tones(10f64.powf(-0.26), 1.0), &tones(1.0, 1.0), 10).unwrap();
    assert!((a.aggregate_power_db - 2.6).abs() < 1e-12);
    assert!((a.aggregate_amplitude_db - 2.6).abs() < 1e-12);
    for l in &a.lines {
        assert!((l.power_db - 2.6).abs() < 1e-12);
    }
    assert!(snr_advantage(&tones(1.0, 1.0), &tones(1.0, 1.0)[..3], 1).is_err());
}

#[test]
fn per_line_advantage_tracks_measured_squeezing() {
    let exp = common::experiment(SqueezingReference::Source, DetectionImperfections::ideal());
    let e = exp.reference_records(Arm::Edcs).unwrap();
    let d = exp.reference_records(Arm::Dcs).unwrap();
    let a = snr_advantage(&e, &d, 1000).unwrap();
    for (l, s) in a.lines.iter().zip(common::SQUEEZE_DB) {
        // The 99:1 tap admits 1% vacuum.
        assert!(l.power_db < s && l.power_db > s - 0.05, "{} vs {s}", l.power_db);
        assert!((l.power_db - l.amplitude_db).abs() < 1e-9);
    }
    // Ideal detection keeps the classical floor at the SQL.
    assert!(d.iter().all(|r| (r.noise_var - 1.0).abs() < 1e-12));
}

/// Pinned value from the first verified run; guards the chain
/// records -> synthesis -> FFT -> extraction -> QF.
#[test]
fn quality_factor_golden() {
    let exp = common::experiment(SqueezingReference::Detected, DetectionImperfections::experiment());
    let recs = exp.reference_records(Arm::Edcs).unwrap();
    let m = 50_000;
    let per_segment = pipeline_snr(&recs, 100e6, 100e3, m, 2024).unwrap();
    let snr = aggregate_snr(&per_segment) * (m as f64).sqrt();
    let qf = quality_factor(snr, 5, 0.5).unwrap();
    println!("QF = {qf:.12}");
    let golden = GOLDEN_QF;
    assert!((qf / golden - 1.0).abs() < 1e-9, "{qf}");
    // And the analytic value agrees to within noise.
    let analytic: Vec<f64> = recs.iter().map(|r| snr_amplitude(r, 1).unwrap()).collect();
    let qa = quality_factor(aggregate_snr(&analytic) * (m as f64).sqrt(), 5, 0.5).unwrap();
    assert!((qf / qa - 1.0).abs() < 0.02, "{qf} vs {qa}");
}

const GOLDEN_QF: f64 = 2643.916387543324;

proptest! {
    #[test]
    fn quality_factor_is_homogeneous(snr in 1e-3f64..1e3, c in 1e-3f64..1e3, n in 1usize..100, tau in 1e-3f64..10.0) {
        let q = quality_factor(snr, n, tau).unwrap();
        let qc = quality_factor(c * snr, n, tau).unwrap();
        prop_assert!((qc / q - c).abs() <= 1e-12 * c);
    }
}

const UARS: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 100.0, 1e4];
const DEPTHS: [f64; 8] = [0.0, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0];

fn sweep() -> UarSweepResult {
    uar_sweep(10.0, 15.0, &UARS, &DEPTHS, &DetectionImperfections::ideal()).unwrap()
}

fn at(r: &UarSweepResult, uar: f64, depth: f64) -> UarPoint {
    *r.points.iter().find(|p| p.uar == uar && p.depth_db == depth).unwrap()
}

#[test]
fn uar_sweep_shape() {
    let r = sweep();
    assert_eq!(r.points.len(), UARS.len() * DEPTHS.len());
    let lossless = at(&r, 1.0, 0.0).advantage_balanced_db;
    assert!((lossless - 10.0).abs() < 1e-9);
    for &u in &UARS {
        assert!((at(&r, u, 0.0).advantage_balanced_db - lossless).abs() < 1e-9);
        for w in DEPTHS.windows(2) {
            let (a, b) = (at(&r, u, w[0]), at(&r, u, w[1]));
            // The RMS aggregate flattens out past ~2 dB: allow the plateau.
            assert!(b.advantage_balanced_db <= a.advantage_balanced_db + 0.01, "{a:?} {b:?}");
            assert!(b.advantage_adaptive_db <= a.advantage_adaptive_db + 0.01, "{a:?} {b:?}");
        }
    }
    for &d in &DEPTHS {
        for w in UARS.windows(2) {
            let (a, b) = (at(&r, w[0], d), at(&r, w[1], d));
            assert!(b.advantage_balanced_db >= a.advantage_balanced_db - 1e-9);
            assert!(b.advantage_adaptive_db >= a.advantage_adaptive_db - 1e-9);
        }
        // Large UAR approaches the lossless value.
        assert!((at(&r, 1e4, d).advantage_balanced_db - lossless).abs() < 0.01);
    }
    for p in &r.points {
        assert!(p.advantage_adaptive_db >= p.advantage_balanced_db - 1e-9);
        assert!(p.advantage_balanced_db >= 0.0, "{p:?}");
    }
}

#[test]
fn uar_sweep_infinite_uar_is_lossless() {
    let r = uar_sweep(10.0, 15.0, &[f64::INFINITY], &[3.0], &DetectionImperfections::ideal()).unwrap();
    assert!((r.points[0].advantage_balanced_db - 10.0).abs() < 1e-9);
    assert!(uar_sweep(10.0, 15.0, &[-1.0], &[3.0], &DetectionImperfections::ideal()).is_err());
}

#[test]
fn robustness_table() {
    let exp = common::experiment(SqueezingReference::Detected, DetectionImperfections::experiment());
    let cfg = RobustnessConfig {
        uar: 10.0,
        depths_db: vec![0.0, 0.1, 0.25, 3.0],
        sample_rate_hz: 100e6,
        rbw_hz: 100e3,
        n_segments: 1000,
        seed: 5,
    };
    let rows = absorption_robustness(&exp, &cfg).unwrap();
    let reference = exp.reference_records(Arm::Dcs).unwrap();
    assert!((rows[0].snr_dcs - snr_amplitude(&reference[0], 1).unwrap()).abs() < 1e-12);
    let floor = 1.0 + DetectionImperfections::experiment().electrical_floor();
    for w in rows.windows(2) {
        assert!(w[1].advantage_db <= w[0].advantage_db);
    }
    for r in &rows {
        assert!((r.dcs_noise_var - floor).abs() < 1e-12);
        assert!((r.pipeline_advantage_db - r.advantage_db).abs() < 0.3, "{r:?}");
    }
    assert!(rows[3].advantage_db >= 0.7 * rows[1].advantage_db);
}

#[test]
fn experiment_serde_round_trip() {
    let exp = common::experiment(SqueezingReference::Detected, DetectionImperfections::experiment());
    let s = serde_json::to_string(&exp).unwrap();
    let back: Experiment = serde_json::from_str(&s).unwrap();
    assert_eq!(back, exp);
    assert!(serde_json::from_str::<Experiment>(&s.replace("\"lo\"", "\"bogus\"")).is_err());
}

#[test]
fn cell_sample_model() {
    let mut exp = common::experiment(SqueezingReference::Source, DetectionImperfections::ideal());
    exp.sample = SampleModel::Cell {
        line_list: concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/hcn_band.csv").into(),
        cell: edcs_core::absorption::GasCell::new(17.5, 25.0, 296.0, 0.5).unwrap(),
        peak_depth_db: Some(3.0),
    };
    let t = exp.sample_transmittances().unwrap();
    assert_eq!(t.len(), 5);
    assert!(t.iter().all(|&(a, b)| (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)));
    let recs = exp.sample_records(Arm::Dcs).unwrap();
    assert_eq!(recs[0].eta_plus, t[0].0);
}

#[test]
fn mismatched_profile_is_rejected() {
    let mut exp = common::experiment(SqueezingReference::Source, DetectionImperfections::ideal());
    exp.comb.n_pairs = 4;
    assert!(matches!(exp.validate(), Err(EdcsError::Mismatch(_))));
}
