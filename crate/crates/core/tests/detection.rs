use edcs_core::comb::{CombConfig, CombRole};
use edcs_core::detection::{
    adaptive_lo_weights, beatnote_model, beatnote_with_selector, resolve_aliasing_iq, resolve_aliasing_two_shot,
    signal_referred_noise, BeatnoteRecord, DetectionImperfections,
};
use edcs_core::gaussian::{mixed_tmsv_from_measured, Mode, PairState, QuadratureSelector};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::{PI, TAU};

fn lo() -> CombConfig {
    CombConfig::uniform(CombRole::Lo, 193.4e12, 17.565e9, 0.0, 1, 1.0).unwrap()
}

fn no_elec() -> DetectionImperfections {
    DetectionImperfections {
        electrical_noise_db_below_vacuum: None,
        ..DetectionImperfections::experiment()
    }
}

/// Solves `eta e^{-2r} + 1 - eta = s`, `eta e^{2r} + 1 - eta = a` by bisection on r.
fn oracle_r_eta(s_db: f64, a_db: f64) -> (f64, f64) {
    let s = 10f64.powf(-s_db / 10.0);
    let a = 10f64.powf(a_db / 10.0);
    let eta_from = |r: f64| (1.0 - s) / (1.0 - (-2.0 * r).exp());
    let (mut lo, mut hi) = (1e-6, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let eta = eta_from(mid);
        if eta * (2.0 * mid).exp() + 1.0 - eta > a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    (r, eta_from(r))
}

/// Pure TMSV from the two-mode squeeze operator, built as a 50:50 mix of
/// single-mode squeezed states (p-squeezed into `+n`, x-squeezed into `-n`).
fn pure_tmsv(r: f64) -> DMatrix<f64> {
    let sq = DMatrix::from_diagonal(&DVector::from_vec(vec![(2.0 * r).exp(), (-2.0 * r).exp(), (-2.0 * r).exp(), (2.0 * r).exp()]));
    let bs = beam_splitter(2, 0, 1, 0.5);
    &bs * sq * bs.transpose()
}

/// Symplectic of a beam splitter with power transmissivity `t` between modes `i` and `j` of an `n`-mode system.
fn beam_splitter(n: usize, i: usize, j: usize, t: f64) -> DMatrix<f64> {
    let mut s = DMatrix::identity(2 * n, 2 * n);
    let (c, r) = (t.sqrt(), (1.0 - t).sqrt());
    for q in 0..2 {
        let (a, b) = (2 * i + q, 2 * j + q);
        s[(a, a)] = c;
        s[(a, b)] = r;
        s[(b, a)] = -r;
        s[(b, b)] = c;
    }
    s
}

/// Covariance of the pair after an explicit chain of beam splitters, each
/// with its own vacuum ancilla, traced out at the end.
fn chain_oracle(pair_cov: &DMatrix<f64>, stages: &[(f64, f64)]) -> DMatrix<f64> {
    let n = 2 + 2 * stages.len();
    let mut cov = DMatrix::identity(2 * n, 2 * n);
    cov.view_mut((0, 0), (4, 4)).copy_from(pair_cov);
    for (k, &(tp, tm)) in stages.iter().enumerate() {
        let s1 = beam_splitter(n, 0, 2 + 2 * k, tp);
        let s2 = beam_splitter(n, 1, 3 + 2 * k, tm);
        cov = &s2 * (&s1 * &cov * s1.transpose()) * s2.transpose();
    }
    cov.view((0, 0), (4, 4)).into_owned()
}

fn balanced_var(cov: &DMatrix<f64>) -> f64 {
    let v = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]) / 2f64.sqrt();
    (v.transpose() * cov * &v)[(0, 0)]
}

#[test]
fn measured_pair_through_detector_matches_beam_splitter_chain() {
    let imp = no_elec();
    let (r, eta_src) = oracle_r_eta(2.5, 11.0);
    let v = imp.fringe_visibility;
    let cov = chain_oracle(
        &pure_tmsv(r),
        &[(eta_src, eta_src), (imp.quantum_efficiency, imp.quantum_efficiency), (v * v, v * v)],
    );
    let want = balanced_var(&cov);
    let pair = mixed_tmsv_from_measured(2.5, 11.0).unwrap().state(1).unwrap();
    let rec = beatnote_model(&pair, &lo(), 1.0, 1.0, &imp, 4e6).unwrap();
    assert!((rec.noise_var - want).abs() < 1e-9, "{} vs {want}", rec.noise_var);
}

#[test]
fn measured_pair_through_detector_matches_monte_carlo() {
    let imp = no_elec();
    let (r, eta_src) = oracle_r_eta(2.5, 11.0);
    let pure = pure_tmsv(r);
    let chol = pure.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 200_000;
    let v = imp.fringe_visibility;
    let stages = [eta_src, imp.quantum_efficiency, v * v];
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for _ in 0..n {
        let z = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
        let mut q: Vec<f64> = (&chol * z).iter().copied().collect();
        for &t in &stages {
            for x in q.iter_mut() {
                let vac: f64 = StandardNormal.sample(&mut rng);
                *x = t.sqrt() * *x + (1.0 - t).sqrt() * vac;
            }
        }
        let obs = (q[0] + q[2]) / 2f64.sqrt();
        acc += obs;
        acc2 += obs * obs;
    }
    let mean = acc / n as f64;
    let var = acc2 / n as f64 - mean * mean;
    let pair = mixed_tmsv_from_measured(2.5, 11.0).unwrap().state(1).unwrap();
    let model = beatnote_model(&pair, &lo(), 1.0, 1.0, &imp, 4e6).unwrap().noise_var;
    let sigma = model * (2.0 / n as f64).sqrt();
    assert!((var - model).abs() < 3.0 * sigma, "{var} vs {model} ± {sigma}");
}

fn flat_top_pair(alpha: f64) -> PairState {
    mixed_tmsv_from_measured(10.0, 15.0)
        .unwrap()
        .state(1)
        .unwrap()
        .displace(Complex64::new(alpha, 0.0), Complex64::new(alpha, 0.0))
        .unwrap()
}

#[test]
fn adaptive_equals_balanced_for_equal_loss() {
    let imp = DetectionImperfections::experiment();
    let sel = adaptive_lo_weights(&flat_top_pair(1.0), 0.6, 0.6, &imp).unwrap();
    assert_eq!(sel.weights(), [1.0, 1.0]);
}

#[test]
fn adaptive_beats_balanced_under_asymmetric_loss() {
    let imp = DetectionImperfections::experiment();
    let pair = flat_top_pair(1.0);
    let ada = adaptive_lo_weights(&pair, 0.5, 1.0, &imp).unwrap();
    let bal = adaptive_lo_weights(&pair, 0.7, 0.7, &imp).unwrap();
    let f_ada = signal_referred_noise(&pair, &ada, 0.5, 1.0, &imp).unwrap();
    let f_bal = signal_referred_noise(&pair, &bal, 0.5, 1.0, &imp).unwrap();
    assert!(f_ada < f_bal, "{f_ada} vs {f_bal}");
    // Same ordering on the beatnote SNR itself.
    let snr = |s: &QuadratureSelector| {
        let r = beatnote_with_selector(&pair, s, 0.5, 1.0, &imp, 4e6).unwrap();
        r.mean_amp.norm() / r.noise_var.sqrt()
    };
    assert!(snr(&ada) > snr(&bal));
    // Oracle: grid over weight angle and phase sum.
    let mut grid_min = f64::INFINITY;
    for i in 0..=200 {
        let phi = i as f64 * PI / 400.0;
        for j in 0..200 {
            let s = j as f64 * TAU / 200.0;
            let sel = QuadratureSelector::new([phi.cos().max(0.0), phi.sin()], [0.0, s]).unwrap();
            grid_min = grid_min.min(signal_referred_noise(&pair, &sel, 0.5, 1.0, &imp).unwrap());
        }
    }
    assert!(f_ada <= grid_min * (1.0 + 1e-9), "{f_ada} vs grid {grid_min}");
}

#[test]
fn adaptive_drops_a_fully_absorbed_line() {
    let imp = DetectionImperfections::experiment();
    let pair = flat_top_pair(1.0);
    let sel = adaptive_lo_weights(&pair, 0.0, 0.8, &imp).unwrap();
    let w = sel.normalized_weights();
    assert!(w[0] < 1e-6, "{w:?}");
    let rec = beatnote_with_selector(&pair, &sel, 0.0, 0.8, &imp, 4e6).unwrap();
    // Direct single-mode result for line -n.
    let d = imp.detection_efficiency();
    let single = pair.marginal(Mode::Minus).apply_loss(0.8 * d).unwrap();
    let want = single.quadrature_moments(sel.phases()[1]).variance + imp.electrical_floor();
    assert!((rec.noise_var - want).abs() < 1e-9, "{} vs {want}", rec.noise_var);
}

#[test]
fn two_shot_has_no_snr_penalty() {
    // Per-shot phasor noise with unit variance per component.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut noise = move || Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
    let (an, am) = (Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0));
    let trials = 10_000;
    let mut two = Vec::with_capacity(trials);
    let mut single = Vec::with_capacity(trials);
    for _ in 0..trials {
        let rec = |a: Complex64| BeatnoteRecord {
            index: 1,
            rf_freq_hz: 4e6,
            mean_amp: a,
            noise_var: 1.0,
            eta_plus: 1.0,
            eta_minus: 1.0,
        };
        let p = rec(an.conj() + am + noise());
        let m = rec(-an.conj() + am + noise());
        two.push(resolve_aliasing_two_shot(&p, &m).unwrap().1.re);
        // Unaliased reference: the -n line alone, measured in the same two shots.
        single.push(0.5 * ((am + noise()).re + (am + noise()).re));
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let ratio = var(&two) / var(&single);
    assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
}

#[test]
fn iq_recovery_with_white_noise() {
    let (fs, df, n, len) = (100e6, 4e6, 3u32, 1000usize);
    let (a_i, a_q) = (0.8, -0.4);
    let sigma = 1.0;
    let f = n as f64 * df;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 1000;
    let mut is = Vec::new();
    let mut qs = Vec::new();
    for _ in 0..trials {
        let s: Vec<f64> = (0..len)
            .map(|k| {
                let ph = 2.0 * PI * f * k as f64 / fs;
                let e: f64 = StandardNormal.sample(&mut rng);
                a_i * ph.cos() - a_q * ph.sin() + sigma * e
            })
            .collect();
        let r = resolve_aliasing_iq(&s, fs, n, df).unwrap();
        is.push(r.alpha_n.re);
        qs.push(r.alpha_neg.im);
    }
    let analytic = 2.0 * sigma * sigma / len as f64;
    for (v, truth) in [(&is, a_i), (&qs, a_q)] {
        let m = v.iter().sum::<f64>() / trials as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
        assert!((m - truth).abs() < 3.0 * (analytic / trials as f64).sqrt());
        assert!((var - analytic).abs() < 3.0 * analytic * (2.0 / (trials - 1) as f64).sqrt(), "{var} vs {analytic}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn noise_bounded_by_quadrature_extremes(
        s in 0.5f64..8.0, extra in 0.0f64..8.0,
        eta_p in 0.0f64..=1.0, eta_m in 0.0f64..=1.0,
        qe in 0.5f64..=1.0, vis in 0.8f64..=1.0,
        ph in 0.0f64..TAU, wp in 0.05f64..1.0,
    ) {
        let pair = mixed_tmsv_from_measured(s, s + extra).unwrap().state(1).unwrap();
        let imp = DetectionImperfections { quantum_efficiency: qe, fringe_visibility: vis, electrical_noise_db_below_vacuum: None };
        let sel = QuadratureSelector::new([wp, 1.0], [ph, 0.3]).unwrap();
        let rec = beatnote_with_selector(&pair, &sel, eta_p, eta_m, &imp, 1.0).unwrap();
        let sq = 10f64.powf(-s / 10.0);
        let anti = 10f64.powf((s + extra) / 10.0);
        prop_assert!(rec.noise_var >= sq - 1e-12);
        prop_assert!(rec.noise_var <= anti.max(1.0) + 1e-12);
    }
}
