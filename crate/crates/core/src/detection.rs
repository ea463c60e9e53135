//! Balanced heterodyne detection of displaced pair states against the LO comb.
//!
//! A beatnote is described by its RF phasor `A` (the signal is
//! `Re[A exp(2 pi i f t)]`) and the variance of each phasor component in
//! shot-noise units. With mode means `m_i = (<x_i> + i<p_i>) exp(-i theta_i)`
//! and LO weights `w`,
//!
//! ```text
//! A = (w_n conj(m_n) + w_-n m_-n) / |w|
//! ```
//!
//! so a balanced, lossless LO at zero phase gives `A = conj(alpha_n) + alpha_-n`,
//! and `Re A` is the mean of the measured joint quadrature.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use crate::comb::{CombConfig, CombRole, PairSqueezing, SqueezingProfile};
use crate::error::{ensure_finite, invalid, EdcsError, Result};
use crate::gaussian::{Mode, PairState, QuadratureSelector};
use crate::optim::{golden_section, minimize_phase_pair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionImperfections {
    pub quantum_efficiency: f64,
    /// Amplitude mode overlap between signal and LO.
    pub fringe_visibility: f64,
    /// Electrical noise floor in dB below vacuum noise; `None` for a noiseless detector.
    #[serde(default)]
    pub electrical_noise_db_below_vacuum: Option<f64>,
}

impl DetectionImperfections {
    pub fn ideal() -> Self {
        Self {
            quantum_efficiency: 1.0,
            fringe_visibility: 1.0,
            electrical_noise_db_below_vacuum: None,
        }
    }

    /// 88% quantum efficiency, 97% visibility, electronics 18 dB below vacuum.
    pub fn experiment() -> Self {
        Self {
            quantum_efficiency: 0.88,
            fringe_visibility: 0.97,
            electrical_noise_db_below_vacuum: Some(18.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0) {
            return Err(invalid("quantum_efficiency", "must lie in (0, 1]"));
        }
        if !(self.fringe_visibility > 0.0 && self.fringe_visibility <= 1.0) {
            return Err(invalid("fringe_visibility", "must lie in (0, 1]"));
        }
        if let Some(db) = self.electrical_noise_db_below_vacuum {
            ensure_finite("electrical_noise_db_below_vacuum", db)?;
        }
        Ok(())
    }

    /// Effective power efficiency `QE * visibility²`.
    pub fn detection_efficiency(&self) -> f64 {
        self.quantum_efficiency * self.fringe_visibility * self.fringe_visibility
    }

    /// Electrical noise variance in shot-noise units.
    pub fn electrical_floor(&self) -> f64 {
        self.electrical_noise_db_below_vacuum
            .map_or(0.0, |db| 10f64.powf(-db / 10.0))
    }
}

/// How the dB values of a squeezing profile are referenced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqueezingReference {
    /// Levels of the source itself.
    #[default]
    Source,
    /// Levels read off the balanced detector relative to its measured
    /// vacuum noise, i.e. already degraded by detection and electronics.
    Detected,
}

/// Converts squeezing levels measured at the detector to source levels.
///
/// A detector variance `V_m` relative to the measured vacuum `1 + e` comes
/// from a source variance `V` through `V_m (1 + e) = eta V + 1 - eta + e`.
pub fn deembed_squeezing(measured: PairSqueezing, imp: &DetectionImperfections) -> Result<PairSqueezing> {
    imp.validate()?;
    let eta = imp.detection_efficiency();
    let e = imp.electrical_floor();
    let source = |v_m: f64| (v_m * (1.0 + e) - e - (1.0 - eta)) / eta;
    let s = source(10f64.powf(-measured.squeeze_db / 10.0));
    let a = source(10f64.powf(measured.antisqueeze_db / 10.0));
    if !(s > 0.0) {
        return Err(EdcsError::InfeasibleSqueezing {
            squeeze_db: measured.squeeze_db,
            antisqueeze_db: measured.antisqueeze_db,
            reason: "measured squeezing exceeds what this detector can show".into(),
        });
    }
    Ok(PairSqueezing {
        squeeze_db: -10.0 * s.log10(),
        antisqueeze_db: 10.0 * a.log10(),
    })
}

/// Inverse of [`deembed_squeezing`]: what the detector would show.
pub fn detected_squeezing(source: PairSqueezing, imp: &DetectionImperfections) -> Result<PairSqueezing> {
    imp.validate()?;
    let eta = imp.detection_efficiency();
    let e = imp.electrical_floor();
    let seen = |v: f64| (eta * v + 1.0 - eta + e) / (1.0 + e);
    Ok(PairSqueezing {
        squeeze_db: -10.0 * seen(10f64.powf(-source.squeeze_db / 10.0)).log10(),
        antisqueeze_db: 10.0 * seen(10f64.powf(source.antisqueeze_db / 10.0)).log10(),
    })
}

/// Source-referenced copy of `profile`.
pub fn source_profile(
    profile: &SqueezingProfile,
    reference: SqueezingReference,
    imp: &DetectionImperfections,
) -> Result<SqueezingProfile> {
    match reference {
        SqueezingReference::Source => Ok(profile.clone()),
        SqueezingReference::Detected => Ok(SqueezingProfile::Measured {
            pairs: profile
                .pairs()
                .into_iter()
                .map(|p| {
                    if p == PairSqueezing::NONE {
                        Ok(p)
                    } else {
                        deembed_squeezing(p, imp)
                    }
                })
                .collect::<Result<_>>()?,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatnoteRecord {
    pub index: u32,
    pub rf_freq_hz: f64,
    pub mean_amp: Complex64,
    /// Per-component variance of the phasor, shot-noise units.
    pub noise_var: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
}

/// LO selector for pair `n` of `lo`.
pub fn lo_selector(lo: &CombConfig, n: u32) -> Result<QuadratureSelector> {
    if lo.role != CombRole::Lo {
        return Err(EdcsError::Mismatch(format!("expected an LO comb, got {:?}", lo.role)));
    }
    if n == 0 || n as usize > lo.n_pairs() {
        return Err(EdcsError::Mismatch(format!("LO has no lines at ±{n}")));
    }
    let l = lo.lines[n as usize - 1];
    QuadratureSelector::new([l.plus.magnitude, l.minus.magnitude], [l.plus.phase, l.minus.phase])
}

/// RF phasor of a state's mean under `sel` (see module docs).
pub fn rf_phasor(pair: &PairState, sel: &QuadratureSelector) -> Complex64 {
    let mu = pair.mean();
    let [wp, wm] = sel.normalized_weights();
    let [tp, tm] = sel.phases();
    let m_plus = Complex64::new(mu[0], mu[1]) * Complex64::from_polar(1.0, -tp);
    let m_minus = Complex64::new(mu[2], mu[3]) * Complex64::from_polar(1.0, -tm);
    wp * m_plus.conj() + wm * m_minus
}

/// State after sample loss and then detection loss.
fn detected_state(pair: &PairState, eta_plus: f64, eta_minus: f64, imp: &DetectionImperfections) -> Result<PairState> {
    imp.validate()?;
    let d = imp.detection_efficiency();
    pair.apply_loss(eta_plus, eta_minus)?.apply_loss(d, d)
}

/// Beatnote of one pair for an explicit LO selector.
pub fn beatnote_with_selector(
    pair: &PairState,
    sel: &QuadratureSelector,
    eta_plus: f64,
    eta_minus: f64,
    imp: &DetectionImperfections,
    rf_freq_hz: f64,
) -> Result<BeatnoteRecord> {
    let det = detected_state(pair, eta_plus, eta_minus, imp)?;
    let var = det.quadrature_moments(sel).variance + imp.electrical_floor();
    Ok(BeatnoteRecord {
        index: pair.pair_index(),
        rf_freq_hz,
        mean_amp: rf_phasor(&det, sel),
        noise_var: var,
        eta_plus,
        eta_minus,
    })
}

/// Beatnote of `pair` against the matching LO lines; the RF tone sits at
/// `n * delta_f_rep_hz`.
pub fn beatnote_model(
    pair: &PairState,
    lo: &CombConfig,
    eta_plus: f64,
    eta_minus: f64,
    imp: &DetectionImperfections,
    delta_f_rep_hz: f64,
) -> Result<BeatnoteRecord> {
    let n = pair.pair_index();
    let sel = lo_selector(lo, n)?;
    beatnote_with_selector(pair, &sel, eta_plus, eta_minus, imp, n as f64 * delta_f_rep_hz.abs())
}

/// Two-shot aliasing resolution. `shot_plus` has `+alpha_n` on the positive
/// line, `shot_minus` has `-alpha_n`. Returns `(alpha_n, alpha_-n)`.
///
/// The positive line enters the phasor conjugated, hence the `conj` on the
/// difference.
pub fn resolve_aliasing_two_shot(
    shot_plus: &BeatnoteRecord,
    shot_minus: &BeatnoteRecord,
) -> Result<(Complex64, Complex64)> {
    if shot_plus.index != shot_minus.index {
        return Err(EdcsError::Mismatch(format!(
            "two-shot records for pairs {} and {}",
            shot_plus.index, shot_minus.index
        )));
    }
    let sum = (shot_plus.mean_amp + shot_minus.mean_amp) * 0.5;
    let diff = (shot_plus.mean_amp - shot_minus.mean_amp) * 0.5;
    Ok((diff.conj(), sum))
}

/// Result of I/Q demodulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqDemodulation {
    /// From the in-phase (cosine) channel; real displacement of line `+n`.
    pub alpha_n: Complex64,
    /// From the quadrature (sine) channel; imaginary displacement of line `-n`.
    pub alpha_neg: Complex64,
    pub cycles: f64,
    /// Worst-case relative cross-talk between the channels: 0 for an integer
    /// number of cycles, otherwise `1 / (2 pi cycles)`.
    pub leakage_bound: f64,
}

/// Separates the `±n` contributions when line `+n` is displaced along the
/// real axis and line `-n` along the imaginary axis. With `I = (2/N) sum s cos`
/// and `Q = -(2/N) sum s sin`, `alpha_n = I` and `alpha_-n = i Q`.
pub fn resolve_aliasing_iq(samples: &[f64], fs_hz: f64, n: u32, delta_f_hz: f64) -> Result<IqDemodulation> {
    if samples.is_empty() {
        return Err(invalid("samples", "empty time series"));
    }
    if !(fs_hz > 0.0) {
        return Err(invalid("fs_hz", "must be positive"));
    }
    let f = n as f64 * delta_f_hz;
    if f <= 0.0 {
        return Err(invalid("beat frequency", "must be positive"));
    }
    if f >= fs_hz / 2.0 {
        return Err(EdcsError::Aliasing {
            freq_hz: f,
            nyquist_hz: fs_hz / 2.0,
        });
    }
    let len = samples.len() as f64;
    let w = 2.0 * PI * f / fs_hz;
    let (mut i_acc, mut q_acc) = (0.0, 0.0);
    for (k, &s) in samples.iter().enumerate() {
        let (sn, cs) = (w * k as f64).sin_cos();
        i_acc += s * cs;
        q_acc += s * sn;
    }
    let cycles = len * f / fs_hz;
    let integer = (cycles - cycles.round()).abs() < 1e-9;
    Ok(IqDemodulation {
        alpha_n: Complex64::new(2.0 * i_acc / len, 0.0),
        alpha_neg: Complex64::new(0.0, -2.0 * q_acc / len),
        cycles,
        leakage_bound: if integer { 0.0 } else { 1.0 / (2.0 * PI * cycles) },
    })
}

/// Signal transfer `g_i` of each line: `sqrt(eta_i)` times the displacement
/// magnitude, or `sqrt(eta_i)` alone when the pair is undisplaced.
fn signal_gains(pair: &PairState, eta_plus: f64, eta_minus: f64) -> [f64; 2] {
    let a = [pair.mean_field(Mode::Plus).norm(), pair.mean_field(Mode::Minus).norm()];
    let (ap, am) = if a[0] == 0.0 && a[1] == 0.0 { (1.0, 1.0) } else { (a[0], a[1]) };
    [eta_plus.sqrt() * ap, eta_minus.sqrt() * am]
}

/// Beatnote noise divided by the squared signal amplitude, for displacement
/// phases that track the LO phases. Lower is better; `1/SNR²` up to a constant.
pub fn signal_referred_noise(
    pair: &PairState,
    sel: &QuadratureSelector,
    eta_plus: f64,
    eta_minus: f64,
    imp: &DetectionImperfections,
) -> Result<f64> {
    let det = detected_state(pair, eta_plus, eta_minus, imp)?;
    let v = det.quadrature_moments(sel).variance + imp.electrical_floor();
    let g = signal_gains(pair, eta_plus, eta_minus);
    let w = sel.normalized_weights();
    let s = w[0] * g[0] + w[1] * g[1];
    Ok(if s > 0.0 { v / (s * s) } else { f64::INFINITY })
}

/// LO weights and phases maximizing the beatnote SNR of one pair after the
/// given line transmittances.
///
/// Optimizes the weight angle `phi` (`w = (cos phi, sin phi)`) on a 1° grid with
/// golden-section refinement, and the two phases at each angle. The balanced
/// selector is returned whenever the search cannot beat it.
pub fn adaptive_lo_weights(
    pair: &PairState,
    eta_plus: f64,
    eta_minus: f64,
    imp: &DetectionImperfections,
) -> Result<QuadratureSelector> {
    let det = detected_state(pair, eta_plus, eta_minus, imp)?;
    let g = signal_gains(pair, eta_plus, eta_minus);
    let e = imp.electrical_floor();
    let best_at = |phi: f64| -> (f64, f64, f64) {
        let (c, s) = (phi.cos().max(0.0), phi.sin().max(0.0));
        let var = |a: f64, b: f64| {
            let sel = QuadratureSelector::new([c, s], [a, b]).expect("non-negative weights");
            det.quadrature_moments(&sel).variance + e
        };
        let (a, b, v) = minimize_phase_pair(var, 0.0);
        let sig = c * g[0] + s * g[1];
        (a, b, if sig > 0.0 { v / (sig * sig) } else { f64::INFINITY })
    };
    let (a_bal, b_bal, f_bal) = best_at(PI / 4.0);
    let balanced = QuadratureSelector::balanced([a_bal, b_bal]);
    if g[0] == 0.0 && g[1] == 0.0 {
        return Ok(balanced);
    }
    let step = FRAC_PI_2 / 90.0;
    let (k, _) = (0..=90)
        .map(|k| (k, best_at(k as f64 * step).2))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let phi0 = k as f64 * step;
    let (phi, _) = golden_section(
        &|p| best_at(p).2,
        (phi0 - step).max(0.0),
        (phi0 + step).min(FRAC_PI_2),
    );
    // Keep whichever of grid point and refined angle is lower.
    let phi = if best_at(phi0).2 <= best_at(phi).2 { phi0 } else { phi };
    let (a, b, f) = best_at(phi);
    if f < f_bal * (1.0 - 1e-12) {
        let w = [phi.cos().max(0.0), phi.sin().max(0.0)];
        let w = [if w[0] < 1e-15 { 0.0 } else { w[0] }, if w[1] < 1e-15 { 0.0 } else { w[1] }];
        QuadratureSelector::new(w, [a, b])
    } else {
        Ok(balanced)
    }
}

/// Amplitude SNR `|A| / sqrt(noise_var / M)` after averaging `M` segments.
pub fn snr_amplitude(rec: &BeatnoteRecord, n_averages: usize) -> Result<f64> {
    if n_averages == 0 {
        return Err(invalid("n_averages", "must be >= 1"));
    }
    if !(rec.noise_var > 0.0) {
        return Err(invalid("noise_var", "must be positive"));
    }
    Ok(rec.mean_amp.norm() / (rec.noise_var / n_averages as f64).sqrt())
}

#[derive(Serialize)]
struct CsvRow {
    index: u32,
    rf_freq_hz: f64,
    mean_re: f64,
    mean_im: f64,
    noise_var: f64,
    eta_plus: f64,
    eta_minus: f64,
}

pub fn write_beatnotes_csv(out: impl Write, records: &[BeatnoteRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            index: r.index,
            rf_freq_hz: r.rf_freq_hz,
            mean_re: r.mean_amp.re,
            mean_im: r.mean_amp.im,
            noise_var: r.noise_var,
            eta_plus: r.eta_plus,
            eta_minus: r.eta_minus,
        })?;
    }
    w.flush()?;
    Ok(())
}
