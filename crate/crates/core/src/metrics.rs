//! Headline metrics: SNR advantage, precision-vs-averages speedup, quality
//! factor, absorption robustness and the flat-top UAR sweep.
//!
//! An [`Experiment`] describes the comb, squeezing, detection and sample. It
//! produces beatnote records for the entangled arm ([`Arm::Edcs`]) and the
//! classical baseline ([`Arm::Dcs`]), which differ only in the squeezing fed
//! into the tap. The classical arm always uses the balanced LO.
//!
//! Displacement phases are set to the LO phases of each pair so the signal
//! adds up in the detected quadrature.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::absorption::{calibrate_strength_scale, ingest_line_list, scale_strengths, transmittance_spectrum, GasCell};
use crate::comb::{build_entangled_comb, squeezed_phases, CombConfig, CombRole, EntangledCombSpec, SqueezingProfile};
use crate::detection::{
    adaptive_lo_weights, beatnote_with_selector, source_profile, BeatnoteRecord, DetectionImperfections,
    SqueezingReference,
};
use crate::dsp::{
    extract_beatnotes, segment_plan, AmplitudeEstimate, ExtractOptions, SegmentAnalyzer, SpectrumAccumulator,
    SynthesisConfig, Synthesizer, Window,
};
use crate::error::{invalid, EdcsError, Result};
use crate::gaussian::{PairState, QuadratureSelector};
use crate::units::to_db;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Edcs,
    Dcs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoMode {
    #[default]
    Balanced,
    Adaptive,
}

fn default_center() -> f64 {
    193.4e12
}
fn default_spacing() -> f64 {
    17.565e9
}
fn default_one() -> f64 {
    1.0
}
fn default_tap() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSection {
    pub n_pairs: usize,
    #[serde(default = "default_center")]
    pub center_freq_hz: f64,
    #[serde(default = "default_spacing")]
    pub line_spacing_hz: f64,
    pub delta_f_rep_hz: f64,
    /// Classical line magnitude before the tap (shot-noise units).
    pub line_amplitude: f64,
    #[serde(default = "default_one")]
    pub lo_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqueezingSection {
    pub profile: SqueezingProfile,
    #[serde(default)]
    pub reference: SqueezingReference,
    #[serde(default = "default_tap")]
    pub tap_ratio: f64,
}

/// Sample transmittance seen by the comb lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleModel {
    Flat {
        transmittance: f64,
    },
    Cell {
        line_list: PathBuf,
        cell: GasCell,
        /// Rescales strengths so the deepest line reaches this depth.
        #[serde(default)]
        peak_depth_db: Option<f64>,
    },
}

impl Default for SampleModel {
    fn default() -> Self {
        SampleModel::Flat { transmittance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub comb: CombSection,
    pub squeezing: SqueezingSection,
    #[serde(default = "DetectionImperfections::ideal")]
    pub detection: DetectionImperfections,
    #[serde(default)]
    pub lo: LoMode,
    #[serde(default)]
    pub sample: SampleModel,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        let c = &self.comb;
        if c.n_pairs == 0 {
            return Err(invalid("comb.n_pairs", "must be >= 1"));
        }
        if self.squeezing.profile.n_pairs() != c.n_pairs {
            return Err(EdcsError::Mismatch(format!(
                "squeezing profile has {} pairs, comb has {}",
                self.squeezing.profile.n_pairs(),
                c.n_pairs
            )));
        }
        if !(c.line_amplitude > 0.0) || !(c.lo_amplitude > 0.0) {
            return Err(invalid("comb.line_amplitude", "amplitudes must be positive"));
        }
        if !(c.delta_f_rep_hz > 0.0) {
            return Err(invalid("comb.delta_f_rep_hz", "must be positive"));
        }
        self.detection.validate()?;
        self.classical_comb()?;
        self.entangled_spec(Arm::Edcs)?.validate()?;
        if let SampleModel::Flat { transmittance } = self.sample {
            if !(0.0..=1.0).contains(&transmittance) {
                return Err(invalid("sample.transmittance", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn comb(&self, role: CombRole, magnitude: f64) -> Result<CombConfig> {
        let c = &self.comb;
        CombConfig::uniform(role, c.center_freq_hz, c.line_spacing_hz, c.delta_f_rep_hz, c.n_pairs, magnitude)
    }

    pub fn classical_comb(&self) -> Result<CombConfig> {
        self.comb(CombRole::Classical, self.comb.line_amplitude)
    }

    pub fn lo_comb(&self) -> Result<CombConfig> {
        self.comb(CombRole::Lo, self.comb.lo_amplitude)
    }

    /// Source-referenced comb spec for `arm`; the classical arm gets vacuum.
    pub fn entangled_spec(&self, arm: Arm) -> Result<EntangledCombSpec> {
        let profile = source_profile(&self.squeezing.profile, self.squeezing.reference, &self.detection)?;
        Ok(EntangledCombSpec {
            profile: match arm {
                Arm::Edcs => profile,
                Arm::Dcs => profile.vacuum_like(),
            },
            tap_ratio: self.squeezing.tap_ratio,
            central_line: None,
        })
    }

    /// Displaced pair states after the tap.
    pub fn pairs(&self, arm: Arm) -> Result<Vec<PairState>> {
        Ok(build_entangled_comb(&self.entangled_spec(arm)?, &self.classical_comb()?)?.pairs)
    }

    /// `(eta_n, eta_-n)` for every pair.
    pub fn sample_transmittances(&self) -> Result<Vec<(f64, f64)>> {
        let comb = self.classical_comb()?;
        match &self.sample {
            SampleModel::Flat { transmittance } => Ok(vec![(*transmittance, *transmittance); self.comb.n_pairs]),
            SampleModel::Cell {
                line_list,
                cell,
                peak_depth_db,
            } => {
                let mut lines = ingest_line_list(line_list)?;
                if let Some(d) = peak_depth_db {
                    let k = calibrate_strength_scale(&lines, cell, *d)?;
                    lines = scale_strengths(&lines, k);
                }
                let freqs: Vec<f64> = (1..=self.comb.n_pairs as i32)
                    .flat_map(|n| [comb.line_frequency(n), comb.line_frequency(-n)])
                    .collect();
                let t = transmittance_spectrum(&freqs, cell, &lines)?;
                Ok(t.chunks(2).map(|c| (c[0], c[1])).collect())
            }
        }
    }

    /// Beatnote records of `arm` with per-pair transmittances `etas`.
    pub fn records(&self, arm: Arm, etas: &[(f64, f64)]) -> Result<Vec<BeatnoteRecord>> {
        let pairs = self.pairs(arm)?;
        if etas.len() != pairs.len() {
            return Err(EdcsError::Mismatch(format!("{} transmittances for {} pairs", etas.len(), pairs.len())));
        }
        let lo_mode = match arm {
            Arm::Edcs => self.lo,
            Arm::Dcs => LoMode::Balanced,
        };
        pairs
            .iter()
            .zip(etas)
            .map(|(p, &(ep, em))| {
                let sel = match lo_mode {
                    LoMode::Balanced => {
                        let (a, b) = squeezed_phases(p, (0.0, 0.0));
                        QuadratureSelector::balanced([a, b])
                    }
                    LoMode::Adaptive => adaptive_lo_weights(p, ep, em, &self.detection)?,
                };
                let aligned = align_displacement(p, &sel)?;
                let rf = p.pair_index() as f64 * self.comb.delta_f_rep_hz;
                beatnote_with_selector(&aligned, &sel, ep, em, &self.detection, rf)
            })
            .collect()
    }

    /// Records without a sample.
    pub fn reference_records(&self, arm: Arm) -> Result<Vec<BeatnoteRecord>> {
        self.records(arm, &vec![(1.0, 1.0); self.comb.n_pairs])
    }

    pub fn sample_records(&self, arm: Arm) -> Result<Vec<BeatnoteRecord>> {
        self.records(arm, &self.sample_transmittances()?)
    }

    pub fn arm_records(&self, arm: Arm) -> Result<ArmRecords> {
        Ok(ArmRecords {
            reference: self.reference_records(arm)?,
            sample: self.sample_records(arm)?,
        })
    }
}

/// Rotates each displacement onto the LO phase of its line.
fn align_displacement(pair: &PairState, sel: &QuadratureSelector) -> Result<PairState> {
    use crate::gaussian::Mode;
    let ph = sel.phases();
    let cur = [pair.mean_field(Mode::Plus), pair.mean_field(Mode::Minus)];
    let target = [
        Complex64::from_polar(cur[0].norm(), ph[0]),
        Complex64::from_polar(cur[1].norm(), ph[1]),
    ];
    pair.displace(target[0] - cur[0], target[1] - cur[1])
}

/// Sample and reference records of one arm, on the same beat grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecords {
    pub reference: Vec<BeatnoteRecord>,
    pub sample: Vec<BeatnoteRecord>,
}

impl ArmRecords {
    /// `sum over lines of eta² (V_s/|A_s|² + V_r/|A_r|²)`; proportional to the
    /// number of averages needed for a given transmittance precision.
    pub fn analytic_cost(&self) -> Result<f64> {
        check_matched(&self.sample, &self.reference)?;
        self.sample
            .iter()
            .zip(&self.reference)
            .map(|(s, r)| {
                let (a_s, a_r) = (s.mean_amp.norm_sqr(), r.mean_amp.norm_sqr());
                if a_r == 0.0 {
                    return Err(invalid("reference amplitude", "must be nonzero"));
                }
                let eta = a_s / a_r;
                let rel_s = if a_s > 0.0 { s.noise_var / a_s } else { 0.0 };
                Ok(eta * eta * (rel_s + r.noise_var / a_r))
            })
            .sum()
    }
}

fn check_matched(a: &[BeatnoteRecord], b: &[BeatnoteRecord]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.index != y.index) {
        return Err(EdcsError::Mismatch("line sets differ".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Time-domain synthesis, segment FFT, averaging and extraction.
    #[default]
    Full,
    /// Beat bins only, generated directly; same random numbers as `Full`
    /// with amplitude errors taken from the configured noise variances.
    BeatBins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionConfig {
    pub sample_rate_hz: f64,
    pub rbw_hz: f64,
    /// Ascending checkpoints; the largest sets the record length.
    pub m_list: Vec<usize>,
    pub n_seeds: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: PipelineMode,
    /// Classical `M` that defines the target precision (default: largest `M`).
    #[serde(default)]
    pub target_m: Option<usize>,
}

impl PrecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_list.is_empty() || self.m_list[0] == 0 || self.m_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("m_list", "must be non-empty, positive and strictly ascending"));
        }
        if self.n_seeds < 10 {
            return Err(invalid("n_seeds", "must be >= 10"));
        }
        let max_m = *self.m_list.last().expect("non-empty");
        let seg = self.sample_rate_hz / self.rbw_hz;
        segment_plan(self.sample_rate_hz, (seg.round() as usize) * max_m, self.rbw_hz)?;
        if let Some(t) = self.target_m {
            if !self.m_list.contains(&t) {
                return Err(invalid("target_m", "must be one of m_list"));
            }
        }
        Ok(())
    }

    fn segment_len(&self) -> usize {
        (self.sample_rate_hz / self.rbw_hz).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub m: usize,
    pub dcs: f64,
    pub edcs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupResult {
    pub target_precision: f64,
    pub m_dcs: usize,
    /// Interpolated (log-log) number of EDCS averages at the target precision.
    pub m_edcs: f64,
    pub speedup: f64,
    /// True when `m_edcs` lies outside the simulated range.
    pub extrapolated: bool,
    /// Speedup from `M^-1/2` fits to both whole curves.
    pub speedup_fit: f64,
    /// Prediction from the noise variances and amplitudes of the records.
    pub analytic_speedup: f64,
    pub n_seeds: usize,
    pub curve: Vec<PrecisionPoint>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent synthesis seed for (trial, arm, run).
pub fn derive_seed(base: u64, trial: usize, arm: Arm, run: usize) -> u64 {
    let tag = (trial as u64) << 3 | (matches!(arm, Arm::Dcs) as u64) << 1 | run as u64;
    splitmix64(base ^ splitmix64(tag))
}

/// Averaged beat amplitudes after each checkpoint `M` of one synthetic record.
pub fn beat_estimates_at(
    records: &[BeatnoteRecord],
    sample_rate_hz: f64,
    rbw_hz: f64,
    m_list: &[usize],
    seed: u64,
    mode: PipelineMode,
) -> Result<Vec<Vec<AmplitudeEstimate>>> {
    let max_m = *m_list.last().ok_or_else(|| invalid("m_list", "must be non-empty"))?;
    let seg = (sample_rate_hz / rbw_hz).round() as usize;
    let delta_f = beat_spacing(records)?;
    let n_max = records.iter().map(|r| r.index).max().unwrap_or(0);
    let cfg = SynthesisConfig {
        sample_rate_hz,
        duration_s: (seg * max_m) as f64 / sample_rate_hz,
        block_len: seg,
        kernel_half_width_hz: None,
        phase_noise: None,
        noiseless: false,
        seed,
    };
    let synth = Synthesizer::new(records, &cfg)?;
    let mut out = Vec::with_capacity(m_list.len());
    let mut next = 0;
    match mode {
        PipelineMode::Full => {
            let an = SegmentAnalyzer::new(sample_rate_hz, seg, Window::Rect)?;
            let mut acc = SpectrumAccumulator::new();
            let opts = ExtractOptions::default();
            for b in 0..max_m {
                acc.add(&an.analyze(&synth.block_samples(b)))?;
                if b + 1 == m_list[next] {
                    let beats = extract_beatnotes(&acc.mean()?, delta_f, n_max, &opts)?;
                    out.push(
                        records
                            .iter()
                            .map(|r| AmplitudeEstimate::from(&beats[r.index as usize - 1]))
                            .collect(),
                    );
                    next += 1;
                }
            }
        }
        PipelineMode::BeatBins => {
            let bin_hz = rbw_hz;
            let bins: Vec<usize> = records.iter().map(|r| (r.rf_freq_hz / bin_hz).round() as usize).collect();
            let mut sums = vec![Complex64::new(0.0, 0.0); records.len()];
            for b in 0..max_m {
                let tb = synth.tone_bins(b);
                for (s, k) in sums.iter_mut().zip(&bins) {
                    *s += tb.iter().find(|(j, _)| j == k).map_or(Complex64::new(0.0, 0.0), |x| x.1);
                }
                if b + 1 == m_list[next] {
                    let m = (b + 1) as f64;
                    out.push(
                        records
                            .iter()
                            .zip(&sums)
                            .map(|(r, s)| AmplitudeEstimate {
                                index: r.index as i32,
                                amplitude: s * (2.0 / (seg as f64 * m)),
                                sigma: (2.0 * r.noise_var / (seg as f64 * m)).sqrt(),
                            })
                            .collect(),
                    );
                    next += 1;
                }
            }
        }
    }
    Ok(out)
}

fn beat_spacing(records: &[BeatnoteRecord]) -> Result<f64> {
    let r = records.first().ok_or(EdcsError::NoLines)?;
    Ok(r.rf_freq_hz / r.index as f64)
}

/// Transmittance estimates at every checkpoint for one trial of one arm.
fn trial_transmittances(arm: &ArmRecords, cfg: &PrecisionConfig, trial: usize, which: Arm) -> Result<Vec<Vec<f64>>> {
    let run = |recs: &[BeatnoteRecord], r: usize| {
        beat_estimates_at(
            recs,
            cfg.sample_rate_hz,
            cfg.rbw_hz,
            &cfg.m_list,
            derive_seed(cfg.seed, trial, which, r),
            cfg.mode,
        )
    };
    let s = run(&arm.sample, 0)?;
    let r = run(&arm.reference, 1)?;
    Ok(s.iter()
        .zip(&r)
        .map(|(s, r)| s.iter().zip(r).map(|(a, b)| a.amplitude.norm_sqr() / b.amplitude.norm_sqr()).collect())
        .collect())
}

/// RMS over lines of the across-trial standard deviation, per checkpoint.
fn precision_curve(trials: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let n = trials.len() as f64;
    let n_m = trials[0].len();
    (0..n_m)
        .map(|j| {
            let n_lines = trials[0][j].len();
            let mean_var = (0..n_lines)
                .map(|l| {
                    let mean = trials.iter().map(|t| t[j][l]).sum::<f64>() / n;
                    trials.iter().map(|t| (t[j][l] - mean).powi(2)).sum::<f64>() / (n - 1.0)
                })
                .sum::<f64>()
                / n_lines as f64;
            mean_var.sqrt()
        })
        .collect()
}

/// `M` at which the curve crosses `target`, by log-log interpolation; the end
/// slopes extend the curve by at most a factor 2 beyond the simulated range.
fn crossing(m: &[usize], p: &[f64], target: f64) -> Result<(f64, bool)> {
    let lm: Vec<f64> = m.iter().map(|&x| (x as f64).ln()).collect();
    let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let lt = target.ln();
    let interp = |i: usize| {
        let slope = (lp[i + 1] - lp[i]) / (lm[i + 1] - lm[i]);
        (lm[i] + (lt - lp[i]) / slope).exp()
    };
    if m.len() == 1 {
        // A single point: assume the M^-1/2 law.
        let mm = m[0] as f64 * (p[0] / target).powi(2);
        return Ok((mm, (mm - m[0] as f64).abs() > 1e-9 * mm));
    }
    if p[0] <= target {
        return Ok((interp(0).max(1.0), p[0] < target));
    }
    for i in 0..m.len() - 1 {
        if p[i] >= target && p[i + 1] <= target {
            return Ok((interp(i), false));
        }
    }
    let last = m.len() - 2;
    let mm = interp(last);
    let max_m = *m.last().expect("non-empty");
    if mm.is_finite() && mm > 0.0 && mm <= 2.0 * max_m as f64 {
        Ok((mm, true))
    } else {
        Err(EdcsError::Unreachable {
            target,
            best: *p.last().expect("non-empty"),
            max_m,
        })
    }
}

/// Least-squares `c` in `P = c M^-1/2` (log space).
fn half_law_coefficient(m: &[usize], p: &[f64]) -> f64 {
    let s: f64 = m.iter().zip(p).map(|(&m, &p)| p.ln() + 0.5 * (m as f64).ln()).sum();
    (s / m.len() as f64).exp()
}

/// Transmittance precision against the number of averaged segments for both
/// arms, and the resulting speedup at the classical precision reached at
/// `target_m`.
pub fn precision_vs_averages(edcs: &ArmRecords, dcs: &ArmRecords, cfg: &PrecisionConfig) -> Result<SpeedupResult> {
    cfg.validate()?;
    check_matched(&edcs.sample, &dcs.sample)?;
    check_matched(&edcs.sample, &edcs.reference)?;
    check_matched(&dcs.sample, &dcs.reference)?;
    let _ = cfg.segment_len();
    let trials = |arm: &ArmRecords, which: Arm| -> Result<Vec<Vec<Vec<f64>>>> {
        (0..cfg.n_seeds)
            .into_par_iter()
            .map(|t| trial_transmittances(arm, cfg, t, which))
            .collect()
    };
    let p_dcs = precision_curve(&trials(dcs, Arm::Dcs)?);
    let p_edcs = precision_curve(&trials(edcs, Arm::Edcs)?);

    let target_m = cfg.target_m.unwrap_or(*cfg.m_list.last().expect("validated"));
    let ti = cfg.m_list.iter().position(|&m| m == target_m).expect("validated");
    let target = p_dcs[ti];
    let (m_edcs, extrapolated) = crossing(&cfg.m_list, &p_edcs, target)?;
    let c_d = half_law_coefficient(&cfg.m_list, &p_dcs);
    let c_e = half_law_coefficient(&cfg.m_list, &p_edcs);
    Ok(SpeedupResult {
        target_precision: target,
        m_dcs: target_m,
        m_edcs,
        speedup: target_m as f64 / m_edcs,
        extrapolated,
        speedup_fit: (c_d / c_e).powi(2),
        analytic_speedup: dcs.analytic_cost()? / edcs.analytic_cost()?,
        n_seeds: cfg.n_seeds,
        curve: cfg
            .m_list
            .iter()
            .zip(p_dcs.iter().zip(&p_edcs))
            .map(|(&m, (&d, &e))| PrecisionPoint { m, dcs: d, edcs: e })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineAdvantage {
    pub index: u32,
    pub snr_edcs: f64,
    pub snr_dcs: f64,
    /// `10 log10(V_dcs / V_edcs)`.
    pub power_db: f64,
    /// `20 log10(SNR_edcs / SNR_dcs)`.
    pub amplitude_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrAdvantage {
    pub n_averages: usize,
    pub lines: Vec<LineAdvantage>,
    /// `10 log10` of the ratio of mean noise variances.
    pub aggregate_power_db: f64,
    /// `20 log10` of the ratio of RMS amplitude SNRs.
    pub aggregate_amplitude_db: f64,
}

/// RMS of per-line amplitude SNRs; the one place lines are aggregated.
pub fn aggregate_snr(snrs: &[f64]) -> f64 {
    (snrs.iter().map(|s| s * s).sum::<f64>() / snrs.len() as f64).sqrt()
}

/// SNR advantage of `edcs` over `dcs`, both power and amplitude conventions.
pub fn snr_advantage(edcs: &[BeatnoteRecord], dcs: &[BeatnoteRecord], n_averages: usize) -> Result<SnrAdvantage> {
    check_matched(edcs, dcs)?;
    if edcs.is_empty() {
        return Err(EdcsError::NoLines);
    }
    let lines = edcs
        .iter()
        .zip(dcs)
        .map(|(e, d)| {
            let se = crate::detection::snr_amplitude(e, n_averages)?;
            let sd = crate::detection::snr_amplitude(d, n_averages)?;
            Ok(LineAdvantage {
                index: e.index,
                snr_edcs: se,
                snr_dcs: sd,
                power_db: to_db(d.noise_var / e.noise_var),
                amplitude_db: 2.0 * to_db(se / sd),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_var = |r: &[BeatnoteRecord]| r.iter().map(|x| x.noise_var).sum::<f64>() / r.len() as f64;
    let se: Vec<f64> = lines.iter().map(|l| l.snr_edcs).collect();
    let sd: Vec<f64> = lines.iter().map(|l| l.snr_dcs).collect();
    Ok(SnrAdvantage {
        n_averages,
        aggregate_power_db: to_db(mean_var(dcs) / mean_var(edcs)),
        aggregate_amplitude_db: 2.0 * to_db(aggregate_snr(&se) / aggregate_snr(&sd)),
        lines,
    })
}

/// `SNR * 2N / sqrt(tau)`.
pub fn quality_factor(snr_amp: f64, n_pairs: usize, tau_s: f64) -> Result<f64> {
    if !(tau_s > 0.0) {
        return Err(invalid("tau", "must be positive"));
    }
    if !(snr_amp > 0.0) || n_pairs == 0 {
        return Err(invalid("snr_amp", "SNR and pair count must be positive"));
    }
    Ok(snr_amp * (2 * n_pairs) as f64 / tau_s.sqrt())
}

/// Per-segment amplitude SNR `|A| / sqrt(V)` of each beat, with `A` and `V`
/// measured through the full DSP chain over `n_segments` segments.
pub fn pipeline_snr(records: &[BeatnoteRecord], sample_rate_hz: f64, rbw_hz: f64, n_segments: usize, seed: u64) -> Result<Vec<f64>> {
    let est = beat_estimates_at(records, sample_rate_hz, rbw_hz, &[n_segments], seed, PipelineMode::Full)?;
    let seg = (sample_rate_hz / rbw_hz).round();
    // amplitude_sigma² = 2 V / (N M)
    let scale = (seg * n_segments as f64 / 2.0).sqrt();
    Ok(est[0].iter().map(|e| e.amplitude.norm() / (e.sigma * scale)).collect())
}

/// Per-pair line transmittances for a fraction `f` of attenuated lines.
/// Attenuated lines are spread one per pair first; weights are
/// `(untouched, one line, both lines)`.
pub fn attenuation_mix(uar: f64) -> [f64; 3] {
    if uar.is_infinite() {
        return [1.0, 0.0, 0.0];
    }
    let f = 1.0 / (uar + 1.0);
    if f <= 0.5 {
        [1.0 - 2.0 * f, 2.0 * f, 0.0]
    } else {
        [0.0, 2.0 - 2.0 * f, 2.0 * f - 1.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UarPoint {
    pub uar: f64,
    pub depth_db: f64,
    pub snr_dcs: f64,
    pub snr_edcs_balanced: f64,
    pub snr_edcs_adaptive: f64,
    pub advantage_balanced_db: f64,
    pub advantage_adaptive_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UarSweepResult {
    pub squeeze_db: f64,
    pub antisqueeze_db: f64,
    pub points: Vec<UarPoint>,
}

/// Per-pair SNR (signal-referred, unit classical amplitude) for the three
/// attenuation patterns, for a pair state built by `pair`.
fn pattern_snrs(pair: &PairState, depth_db: f64, imp: &DetectionImperfections, mode: LoMode) -> Result<[f64; 3]> {
    let eta = 10f64.powf(-depth_db / 10.0);
    let patterns = [(1.0, 1.0), (eta, 1.0), (eta, eta)];
    let mut out = [0.0; 3];
    for (o, &(ep, em)) in out.iter_mut().zip(&patterns) {
        let sel = match mode {
            LoMode::Balanced => {
                let (a, b) = squeezed_phases(pair, (0.0, 0.0));
                QuadratureSelector::balanced([a, b])
            }
            LoMode::Adaptive => adaptive_lo_weights(pair, ep, em, imp)?,
        };
        *o = 1.0 / crate::detection::signal_referred_noise(pair, &sel, ep, em, imp)?.sqrt();
    }
    Ok(out)
}

fn mixed_snr(mix: [f64; 3], snrs: [f64; 3]) -> f64 {
    mix.iter().zip(&snrs).map(|(w, s)| w * s * s).sum::<f64>().sqrt()
}

/// Flat-top entangled comb against a flat-top LO: aggregate SNRs and
/// advantages over a grid of unattenuated-to-attenuated ratios and depths.
///
/// A fraction `1/(UAR+1)` of lines is attenuated by the depth. SNRs are per
/// unit classical amplitude, so only ratios are meaningful.
pub fn uar_sweep(
    squeeze_db: f64,
    antisqueeze_db: f64,
    uar_values: &[f64],
    depths_db: &[f64],
    imp: &DetectionImperfections,
) -> Result<UarSweepResult> {
    if uar_values.iter().any(|u| !(*u >= 0.0)) || depths_db.iter().any(|d| !(*d >= 0.0)) {
        return Err(invalid("uar_sweep", "UAR values and depths must be >= 0"));
    }
    let squeezed = crate::gaussian::mixed_tmsv_from_measured(squeeze_db, antisqueeze_db)?.state(1)?;
    let vacuum = PairState::vacuum(1);
    let per_depth = depths_db
        .par_iter()
        .map(|&d| {
            Ok((
                pattern_snrs(&vacuum, d, imp, LoMode::Balanced)?,
                pattern_snrs(&squeezed, d, imp, LoMode::Balanced)?,
                pattern_snrs(&squeezed, d, imp, LoMode::Adaptive)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(uar_values.len() * depths_db.len());
    for &uar in uar_values {
        let mix = attenuation_mix(uar);
        for (&depth_db, (dcs, bal, ada)) in depths_db.iter().zip(&per_depth) {
            let (d, b, a) = (mixed_snr(mix, *dcs), mixed_snr(mix, *bal), mixed_snr(mix, *ada));
            points.push(UarPoint {
                uar,
                depth_db,
                snr_dcs: d,
                snr_edcs_balanced: b,
                snr_edcs_adaptive: a,
                advantage_balanced_db: 2.0 * to_db(b / d),
                advantage_adaptive_db: 2.0 * to_db(a / d),
            });
        }
    }
    Ok(UarSweepResult {
        squeeze_db,
        antisqueeze_db,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub depth_db: f64,
    pub snr_edcs: f64,
    pub snr_dcs: f64,
    pub advantage_db: f64,
    /// Same quantities measured through the DSP chain.
    pub pipeline_snr_edcs: f64,
    pub pipeline_snr_dcs: f64,
    pub pipeline_advantage_db: f64,
    /// Mean classical noise variance over the three attenuation patterns.
    pub dcs_noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub uar: f64,
    pub depths_db: Vec<f64>,
    pub sample_rate_hz: f64,
    pub rbw_hz: f64,
    pub n_segments: usize,
    pub seed: u64,
}

/// SNR of both arms as lines get absorbed. Three pseudo-pairs carry the
/// untouched, one-line and two-line patterns of the first comb pair; they are
/// mixed with the weights of [`attenuation_mix`].
pub fn absorption_robustness(exp: &Experiment, cfg: &RobustnessConfig) -> Result<Vec<RobustnessRow>> {
    exp.validate()?;
    let mix = attenuation_mix(cfg.uar);
    cfg.depths_db
        .iter()
        .enumerate()
        .map(|(i, &depth)| {
            if !(depth >= 0.0) {
                return Err(invalid("depths_db", "must be >= 0"));
            }
            let eta = 10f64.powf(-depth / 10.0);
            let patterns = [(1.0, 1.0), (eta, 1.0), (eta, eta)];
            let recs = |arm: Arm| -> Result<Vec<BeatnoteRecord>> {
                let mut one = exp.clone();
                one.comb.n_pairs = 1;
                one.squeezing.profile = SqueezingProfile::Measured {
                    pairs: vec![exp.squeezing.profile.pairs()[0]],
                };
                let mut out = Vec::new();
                for (k, &p) in patterns.iter().enumerate() {
                    let mut r = one.records(arm, &[p])?.remove(0);
                    r.index = k as u32 + 1;
                    r.rf_freq_hz = r.index as f64 * exp.comb.delta_f_rep_hz;
                    out.push(r);
                }
                Ok(out)
            };
            let (e, d) = (recs(Arm::Edcs)?, recs(Arm::Dcs)?);
            let snr = |r: &[BeatnoteRecord]| -> Result<[f64; 3]> {
                let v: Vec<f64> = r.iter().map(|x| crate::detection::snr_amplitude(x, 1)).collect::<Result<_>>()?;
                Ok([v[0], v[1], v[2]])
            };
            let pipe = |r: &[BeatnoteRecord], arm: Arm| -> Result<[f64; 3]> {
                let v = pipeline_snr(r, cfg.sample_rate_hz, cfg.rbw_hz, cfg.n_segments, derive_seed(cfg.seed, i, arm, 0))?;
                Ok([v[0], v[1], v[2]])
            };
            let (se, sd) = (mixed_snr(mix, snr(&e)?), mixed_snr(mix, snr(&d)?));
            let (pe, pd) = (mixed_snr(mix, pipe(&e, Arm::Edcs)?), mixed_snr(mix, pipe(&d, Arm::Dcs)?));
            Ok(RobustnessRow {
                depth_db: depth,
                snr_edcs: se,
                snr_dcs: sd,
                advantage_db: 2.0 * to_db(se / sd),
                pipeline_snr_edcs: pe,
                pipeline_snr_dcs: pd,
                pipeline_advantage_db: 2.0 * to_db(pe / pd),
                dcs_noise_var: d.iter().map(|r| r.noise_var).sum::<f64>() / 3.0,
            })
        })
        .collect()
}
