//! Interferogram synthesis and analysis.
//!
//! Synthesis works block by block in the frequency domain. A block of `N`
//! samples has one-sided bins `k = 0..=N/2` spaced by `fs/N`:
//!
//! * a beatnote with phasor `A` adds `A N / 2` to its bin;
//! * every bin gets complex Gaussian noise with `E|X|² = N s_k`, where the
//!   shape `s_k` is the `noise_var` of the nearest beatnote within the kernel
//!   half-width (default `delta_f/2`) and 1 (the SQL) elsewhere. DC and
//!   Nyquist bins are real.
//!
//! The inverse FFT of that spectrum, divided by `N`, is the time series, so a
//! unit shape gives unit-variance white samples.
//!
//! Randomness is addressable. Block `b` uses ChaCha8 stream `b` of the seed,
//! and bin `k` always consumes the four 32-bit words starting at `4k`
//! (one Box–Muller pair). Any bin of any block can be regenerated on its own,
//! which [`Synthesizer::tone_bins`] uses to skip the full transform when only
//! beat bins are needed.
//!
//! Analysis uses a rectangular window by default (Hann optional). Powers are
//! `|Y|² / sum w²`, so unit white noise reads 1 in every bin. Phasors are
//! `2 Y / sum w`, so a tone `Re[A exp(i w t)]` reads `A`.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::detection::BeatnoteRecord;
use crate::error::{ensure_finite, invalid, EdcsError, Result};

/// Interferogram file magic.
pub const IFG_MAGIC: [u8; 8] = *b"EDCSIFG\0";
pub const IFG_VERSION: u32 = 1;
/// Header length in bytes: magic, version, fs, duration, seed, sample count.
pub const IFG_HEADER_LEN: u64 = 8 + 4 + 8 + 8 + 8 + 8;

/// Synthesizer phase-noise model: Gaussian phase jitter per block with
/// variance `n² 10^(L/10) rbw` on beatnote `n`, `L` in dBc/Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseNoise {
    #[serde(default = "default_dbc")]
    pub dbc_per_hz: f64,
}

fn default_dbc() -> f64 {
    -75.0
}

impl Default for PhaseNoise {
    fn default() -> Self {
        Self {
            dbc_per_hz: default_dbc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Samples per synthesis block; beat frequencies must be multiples of
    /// `sample_rate_hz / block_len`.
    pub block_len: usize,
    /// Half-width of the noise-shaping neighborhood around each beatnote.
    #[serde(default)]
    pub kernel_half_width_hz: Option<f64>,
    #[serde(default)]
    pub phase_noise: Option<PhaseNoise>,
    /// Tones only, no additive noise.
    #[serde(default)]
    pub noiseless: bool,
    pub seed: u64,
}

impl SynthesisConfig {
    pub fn n_samples(&self) -> Result<usize> {
        sample_count(self.sample_rate_hz, self.duration_s)
    }
}

fn sample_count(fs: f64, duration: f64) -> Result<usize> {
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(invalid("sample_rate_hz", "must be positive"));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(invalid("duration_s", "must be positive"));
    }
    let n = fs * duration;
    let r = n.round();
    if (n - r).abs() > 1e-6 * r.max(1.0) || r < 1.0 {
        return Err(invalid("duration_s", "sample_rate * duration must be a whole number of samples"));
    }
    Ok(r as usize)
}

/// Bin index of `freq` on a grid of spacing `bin_hz`, or an off-grid error.
fn bin_of(freq: f64, bin_hz: f64) -> Result<usize> {
    let k = freq / bin_hz;
    if (k - k.round()).abs() > 1e-6 {
        return Err(EdcsError::OffGrid { freq_hz: freq, bin_hz });
    }
    Ok(k.round() as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interferogram {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub samples: Vec<f64>,
}

impl Interferogram {
    pub fn validate(&self) -> Result<()> {
        let n = sample_count(self.sample_rate_hz, self.duration_s)?;
        if n != self.samples.len() {
            return Err(EdcsError::Mismatch(format!(
                "{} samples for {} s at {} Hz",
                self.samples.len(),
                self.duration_s,
                self.sample_rate_hz
            )));
        }
        if self.samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("samples", "must be finite"));
        }
        Ok(())
    }
}

/// Standard normal pair from exactly two `u64` draws.
fn box_muller(rng: &mut ChaCha8Rng) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE;
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (TAU * u2).sin_cos();
    (r * c, r * s)
}

#[derive(Debug, Clone, Copy)]
struct Tone {
    bin: usize,
    /// Bin contribution `A N / 2` before phase jitter.
    value: Complex64,
    index: u32,
}

/// Frequency-domain interferogram generator for a fixed set of beatnotes.
#[derive(Clone)]
pub struct Synthesizer {
    cfg: SynthesisConfig,
    n_samples: usize,
    shape: Vec<f64>,
    tones: Vec<Tone>,
    jitter_var: Vec<f64>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Synthesizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Synthesizer")
            .field("cfg", &self.cfg)
            .field("tones", &self.tones.len())
            .finish()
    }
}

impl Synthesizer {
    pub fn new(records: &[BeatnoteRecord], cfg: &SynthesisConfig) -> Result<Self> {
        let n_samples = cfg.n_samples()?;
        let n = cfg.block_len;
        if n < 2 {
            return Err(invalid("block_len", "must be >= 2"));
        }
        if n_samples % n != 0 {
            return Err(invalid("block_len", "must divide the number of samples"));
        }
        let fs = cfg.sample_rate_hz;
        let bin_hz = fs / n as f64;
        let nyquist = fs / 2.0;
        let n_bins = n / 2 + 1;

        let mut freqs = Vec::with_capacity(records.len());
        for r in records {
            ensure_finite("rf_freq_hz", r.rf_freq_hz)?;
            if !(r.noise_var > 0.0) || !r.noise_var.is_finite() {
                return Err(invalid("noise_var", "must be positive"));
            }
            if r.rf_freq_hz >= nyquist {
                return Err(EdcsError::Aliasing {
                    freq_hz: r.rf_freq_hz,
                    nyquist_hz: nyquist,
                });
            }
            if r.rf_freq_hz <= 0.0 {
                return Err(invalid("rf_freq_hz", "must be positive"));
            }
            freqs.push(r.rf_freq_hz);
        }

        let half = match cfg.kernel_half_width_hz {
            Some(h) if h >= 0.0 => h,
            Some(_) => return Err(invalid("kernel_half_width_hz", "must be >= 0")),
            None => {
                let mut sorted = freqs.clone();
                sorted.sort_by(f64::total_cmp);
                // Half the smallest beat spacing, or of the lowest beat frequency.
                let spacing = sorted
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .chain(sorted.first().copied())
                    .fold(f64::INFINITY, f64::min);
                if spacing.is_finite() {
                    spacing / 2.0
                } else {
                    0.0
                }
            }
        };

        let shape = (0..n_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                records
                    .iter()
                    .map(|r| ((f - r.rf_freq_hz).abs(), r.noise_var))
                    .filter(|(d, _)| *d <= half + 1e-9 * bin_hz)
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map_or(1.0, |(_, v)| v)
            })
            .collect();

        let tones = records
            .iter()
            .map(|r| {
                Ok(Tone {
                    bin: bin_of(r.rf_freq_hz, bin_hz)?,
                    value: r.mean_amp * (n as f64 / 2.0),
                    index: r.index,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let jitter_var = tones
            .iter()
            .map(|t| {
                cfg.phase_noise.map_or(0.0, |p| {
                    (t.index as f64).powi(2) * 10f64.powf(p.dbc_per_hz / 10.0) * bin_hz
                })
            })
            .collect();

        Ok(Self {
            cfg: cfg.clone(),
            n_samples,
            shape,
            tones,
            jitter_var,
            ifft: FftPlanner::new().plan_fft_inverse(n),
        })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.cfg
    }

    pub fn n_blocks(&self) -> usize {
        self.n_samples / self.cfg.block_len
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    fn n_bins(&self) -> usize {
        self.cfg.block_len / 2 + 1
    }

    fn rng(&self, block: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(block as u64);
        rng
    }

    fn noise_bin(&self, k: usize, z: (f64, f64)) -> Complex64 {
        if self.cfg.noiseless {
            return Complex64::new(0.0, 0.0);
        }
        let n = self.cfg.block_len as f64;
        let s = self.shape[k];
        let real_bin = k == 0 || (self.cfg.block_len % 2 == 0 && k == self.cfg.block_len / 2);
        if real_bin {
            Complex64::new((n * s).sqrt() * z.0, 0.0)
        } else {
            Complex64::new(z.0, z.1) * (0.5 * n * s).sqrt()
        }
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, t: usize) -> Complex64 {
        let tone = self.tones[t];
        let var = self.jitter_var[t];
        if var == 0.0 {
            return tone.value;
        }
        rng.set_word_pos(4 * (self.n_bins() + t) as u128);
        let (z, _) = box_muller(rng);
        tone.value * Complex64::from_polar(1.0, var.sqrt() * z)
    }

    /// One-sided spectrum `X_0..X_{N/2}` of block `block`.
    pub fn block_bins(&self, block: usize) -> Vec<Complex64> {
        let mut rng = self.rng(block);
        let mut bins: Vec<Complex64> = (0..self.n_bins())
            .map(|k| {
                let z = box_muller(&mut rng);
                self.noise_bin(k, z)
            })
            .collect();
        for t in 0..self.tones.len() {
            let v = self.jittered(&mut rng, t);
            bins[self.tones[t].bin] += v;
        }
        bins
    }

    /// Only the beat bins of block `block`, as `(bin, X_bin)`; identical to
    /// the corresponding entries of [`Self::block_bins`].
    pub fn tone_bins(&self, block: usize) -> Vec<(usize, Complex64)> {
        let mut rng = self.rng(block);
        let mut out: Vec<(usize, Complex64)> = Vec::with_capacity(self.tones.len());
        for (t, tone) in self.tones.iter().enumerate() {
            rng.set_word_pos(4 * tone.bin as u128);
            let z = box_muller(&mut rng);
            let noise = self.noise_bin(tone.bin, z);
            let v = self.jittered(&mut rng, t);
            match out.iter_mut().find(|(b, _)| *b == tone.bin) {
                Some(slot) => slot.1 += v,
                None => out.push((tone.bin, noise + v)),
            }
        }
        out
    }

    /// Time samples of block `block`.
    pub fn block_samples(&self, block: usize) -> Vec<f64> {
        let n = self.cfg.block_len;
        let bins = self.block_bins(block);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..bins.len()].copy_from_slice(&bins);
        for k in 1..bins.len() {
            if n - k >= bins.len() {
                buf[n - k] = bins[k].conj();
            }
        }
        self.ifft.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    /// Whole interferogram in memory; blocks are generated in parallel.
    pub fn interferogram(&self) -> Interferogram {
        let blocks: Vec<Vec<f64>> = (0..self.n_blocks())
            .into_par_iter()
            .map(|b| self.block_samples(b))
            .collect();
        Interferogram {
            sample_rate_hz: self.cfg.sample_rate_hz,
            duration_s: self.cfg.duration_s,
            seed: self.cfg.seed,
            samples: blocks.concat(),
        }
    }

    /// Streams the interferogram to `out` in the binary format without
    /// holding it in memory.
    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = InterferogramWriter::new(
            out,
            self.cfg.sample_rate_hz,
            self.cfg.duration_s,
            self.cfg.seed,
            self.n_samples as u64,
        )?;
        let chunk = rayon::current_num_threads().max(1) * 4;
        for start in (0..self.n_blocks()).step_by(chunk) {
            let end = (start + chunk).min(self.n_blocks());
            let blocks: Vec<Vec<f64>> = (start..end).into_par_iter().map(|b| self.block_samples(b)).collect();
            for b in &blocks {
                w.write_samples(b)?;
            }
        }
        w.finish()?;
        Ok(())
    }
}

/// Convenience wrapper: synthesize a whole interferogram.
pub fn synthesize(records: &[BeatnoteRecord], cfg: &SynthesisConfig) -> Result<Interferogram> {
    Ok(Synthesizer::new(records, cfg)?.interferogram())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rect,
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n).map(|t| 0.5 - 0.5 * (TAU * t as f64 / n as f64).cos()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub rbw_hz: f64,
    pub window: Window,
    /// Samples per segment.
    pub segment_len: usize,
    /// Shot-noise-normalized power per bin.
    pub power: Vec<f64>,
    /// Tone phasor estimate per bin.
    pub phasor: Vec<Complex64>,
    pub n_averaged: usize,
    /// `sum w² / (sum w)²`; equals `1/N` for the rectangular window.
    pub noise_bandwidth: f64,
}

impl Spectrum {
    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.rbw_hz
    }

    pub fn n_bins(&self) -> usize {
        self.power.len()
    }

    /// One-sided power sum `(P_0 + 2 sum P_k + P_Nyq) / N`. For the
    /// rectangular window this equals the segment's mean square; for Hann it
    /// equals the `w²`-weighted mean square.
    pub fn integrated_power(&self) -> f64 {
        let n = self.segment_len;
        let last = self.power.len() - 1;
        let edge = if n % 2 == 0 { self.power[last] } else { 2.0 * self.power[last] };
        (self.power[0] + 2.0 * self.power[1..last].iter().sum::<f64>() + edge) / n as f64
    }

    fn check_compatible(&self, other: &Spectrum) -> Result<()> {
        if self.rbw_hz != other.rbw_hz || self.segment_len != other.segment_len || self.window != other.window {
            return Err(EdcsError::Mismatch("spectra on different grids".into()));
        }
        Ok(())
    }
}

/// Per-segment periodogram engine.
#[derive(Clone)]
pub struct SegmentAnalyzer {
    fs: f64,
    window: Window,
    coeffs: Vec<f64>,
    sum_w: f64,
    sum_w2: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl SegmentAnalyzer {
    pub fn new(fs: f64, segment_len: usize, window: Window) -> Result<Self> {
        if segment_len < 2 {
            return Err(invalid("segment length", "must be >= 2 samples"));
        }
        let coeffs = window.coefficients(segment_len);
        Ok(Self {
            fs,
            window,
            sum_w: coeffs.iter().sum(),
            sum_w2: coeffs.iter().map(|w| w * w).sum(),
            coeffs,
            fft: FftPlanner::new().plan_fft_forward(segment_len),
        })
    }

    pub fn analyze(&self, segment: &[f64]) -> Spectrum {
        let n = self.coeffs.len();
        let mut buf: Vec<Complex64> = segment
            .iter()
            .zip(&self.coeffs)
            .map(|(x, w)| Complex64::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(n / 2 + 1);
        Spectrum {
            rbw_hz: self.fs / n as f64,
            window: self.window,
            segment_len: n,
            power: buf.iter().map(|y| y.norm_sqr() / self.sum_w2).collect(),
            phasor: buf.iter().map(|y| y * (2.0 / self.sum_w)).collect(),
            n_averaged: 1,
            noise_bandwidth: self.sum_w2 / (self.sum_w * self.sum_w),
        }
    }

    /// Spectrum straight from synthesized one-sided bins (rectangular window);
    /// equal to `analyze` of the block's samples up to FFT round-off.
    pub fn from_bins(&self, bins: &[Complex64]) -> Result<Spectrum> {
        let n = self.coeffs.len();
        if self.window != Window::Rect || bins.len() != n / 2 + 1 {
            return Err(EdcsError::Mismatch("bins do not match a rectangular segment".into()));
        }
        Ok(Spectrum {
            rbw_hz: self.fs / n as f64,
            window: Window::Rect,
            segment_len: n,
            power: bins.iter().map(|y| y.norm_sqr() / n as f64).collect(),
            phasor: bins.iter().map(|y| y * (2.0 / n as f64)).collect(),
            n_averaged: 1,
            noise_bandwidth: 1.0 / n as f64,
        })
    }
}

/// Segment length (samples) and count for `rbw_hz` over `n_samples`.
pub fn segment_plan(fs: f64, n_samples: usize, rbw_hz: f64) -> Result<(usize, usize)> {
    if !(rbw_hz > 0.0) || !rbw_hz.is_finite() {
        return Err(invalid("rbw_hz", "must be positive"));
    }
    let len = fs / rbw_hz;
    if (len - len.round()).abs() > 1e-6 {
        return Err(invalid("rbw_hz", "sample_rate / rbw must be a whole number of samples"));
    }
    let len = len.round() as usize;
    if len > n_samples {
        return Err(invalid("rbw_hz", "segment is longer than the record"));
    }
    if n_samples % len != 0 {
        return Err(invalid("rbw_hz", "record is not a whole number of segments"));
    }
    Ok((len, n_samples / len))
}

/// Non-overlapping segments of length `1/rbw`, one periodogram each.
pub fn segment_and_fft(ifg: &Interferogram, rbw_hz: f64, window: Window) -> Result<Vec<Spectrum>> {
    ifg.validate()?;
    let (len, _) = segment_plan(ifg.sample_rate_hz, ifg.samples.len(), rbw_hz)?;
    let an = SegmentAnalyzer::new(ifg.sample_rate_hz, len, window)?;
    Ok(ifg.samples.par_chunks(len).map(|s| an.analyze(s)).collect())
}

/// Running bin-wise mean of spectra (power and phasor).
#[derive(Debug, Clone)]
pub struct SpectrumAccumulator {
    sum: Option<Spectrum>,
}

impl Default for SpectrumAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl SpectrumAccumulator {
    pub fn new() -> Self {
        Self { sum: None }
    }

    /// Adds `s`, weighted by its own `n_averaged`.
    pub fn add(&mut self, s: &Spectrum) -> Result<()> {
        let w = s.n_averaged as f64;
        match &mut self.sum {
            None => {
                let mut t = s.clone();
                t.power.iter_mut().for_each(|p| *p *= w);
                t.phasor.iter_mut().for_each(|p| *p *= w);
                self.sum = Some(t);
            }
            Some(acc) => {
                acc.check_compatible(s)?;
                if acc.power.len() != s.power.len() {
                    return Err(EdcsError::Mismatch("bin counts differ".into()));
                }
                for (a, b) in acc.power.iter_mut().zip(&s.power) {
                    *a += w * b;
                }
                for (a, b) in acc.phasor.iter_mut().zip(&s.phasor) {
                    *a += w * b;
                }
                acc.n_averaged += s.n_averaged;
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.sum.as_ref().map_or(0, |s| s.n_averaged)
    }

    /// Current mean.
    pub fn mean(&self) -> Result<Spectrum> {
        let s = self.sum.as_ref().ok_or_else(|| invalid("spectra", "nothing to average"))?;
        let m = s.n_averaged as f64;
        let mut out = s.clone();
        out.power.iter_mut().for_each(|p| *p /= m);
        out.phasor.iter_mut().for_each(|p| *p /= m);
        Ok(out)
    }
}

/// Bin-wise mean of power and phasor over all spectra.
pub fn average_spectra(spectra: &[Spectrum]) -> Result<Spectrum> {
    let mut acc = SpectrumAccumulator::new();
    for s in spectra {
        acc.add(s)?;
    }
    acc.mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractOptions {
    /// Neighbor bins on each side used for the noise floor.
    pub half_window: usize,
    /// Bins on each side of any beat excluded from the floor.
    pub exclude: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            half_window: 10,
            exclude: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractedBeat {
    pub n: u32,
    pub freq_hz: f64,
    pub amplitude: Complex64,
    /// Local noise power (same units as [`Spectrum::power`]).
    pub noise_floor: f64,
    /// 1σ noise of each amplitude component.
    pub amplitude_sigma: f64,
}

/// Median of a Gamma(M, 1/M) variable: the median of an `M`-fold averaged
/// unit-mean exponential power.
fn averaged_power_median(m: usize) -> f64 {
    Gamma::new(m as f64, m as f64)
        .map(|g| g.inverse_cdf(0.5))
        .unwrap_or(1.0)
}

/// Amplitudes and local noise floors of beatnotes `n = 1..=n_max` at `n delta_f`.
///
/// The floor is the median power of the `half_window` bins on each side,
/// skipping bins within `exclude` of any beat and the DC bin, divided by the
/// median of a Gamma(M, 1/M) variable so it estimates the mean noise power.
pub fn extract_beatnotes(spec: &Spectrum, delta_f_hz: f64, n_max: u32, opts: &ExtractOptions) -> Result<Vec<ExtractedBeat>> {
    if !(delta_f_hz > 0.0) {
        return Err(invalid("delta_f_hz", "must be positive"));
    }
    let bins: Vec<usize> = (1..=n_max)
        .map(|n| bin_of(n as f64 * delta_f_hz, spec.rbw_hz))
        .collect::<Result<_>>()?;
    if let Some(&b) = bins.iter().find(|&&b| b >= spec.n_bins()) {
        return Err(EdcsError::Aliasing {
            freq_hz: spec.freq(b),
            nyquist_hz: spec.freq(spec.n_bins() - 1),
        });
    }
    let correction = averaged_power_median(spec.n_averaged.max(1));
    let near_beat = |j: usize| bins.iter().any(|&b| j.abs_diff(b) <= opts.exclude);
    bins.iter()
        .enumerate()
        .map(|(i, &b)| {
            let lo = b.saturating_sub(opts.half_window).max(1);
            let hi = (b + opts.half_window).min(spec.n_bins() - 1);
            let mut nb: Vec<f64> = (lo..=hi).filter(|&j| !near_beat(j)).map(|j| spec.power[j]).collect();
            if nb.is_empty() {
                return Err(invalid("half_window", "no neighbor bins left for the noise floor"));
            }
            nb.sort_by(f64::total_cmp);
            let mid = nb.len() / 2;
            let median = if nb.len() % 2 == 1 { nb[mid] } else { 0.5 * (nb[mid - 1] + nb[mid]) };
            let floor = median / correction;
            Ok(ExtractedBeat {
                n: i as u32 + 1,
                freq_hz: spec.freq(b),
                amplitude: spec.phasor[b],
                noise_floor: floor,
                amplitude_sigma: (2.0 * floor * spec.noise_bandwidth / spec.n_averaged.max(1) as f64).sqrt(),
            })
        })
        .collect()
}

/// Complex amplitude of one comb line (signed index) with per-component 1σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEstimate {
    pub index: i32,
    pub amplitude: Complex64,
    pub sigma: f64,
}

impl From<&ExtractedBeat> for AmplitudeEstimate {
    /// Pair-level (aliased) estimate, indexed by `+n`.
    fn from(b: &ExtractedBeat) -> Self {
        Self {
            index: b.n as i32,
            amplitude: b.amplitude,
            sigma: b.amplitude_sigma,
        }
    }
}

/// Per-line amplitudes from the two shots of the two-shot protocol
/// (`+alpha_n`, then `-alpha_n` on the positive lines).
pub fn resolve_two_shot_beats(shot_plus: &[ExtractedBeat], shot_minus: &[ExtractedBeat]) -> Result<Vec<AmplitudeEstimate>> {
    if shot_plus.len() != shot_minus.len() {
        return Err(EdcsError::Mismatch("shots have different beat counts".into()));
    }
    let mut out = Vec::with_capacity(2 * shot_plus.len());
    for (p, m) in shot_plus.iter().zip(shot_minus) {
        if p.n != m.n {
            return Err(EdcsError::Mismatch(format!("beats {} and {}", p.n, m.n)));
        }
        let sigma = 0.5 * (p.amplitude_sigma.powi(2) + m.amplitude_sigma.powi(2)).sqrt();
        out.push(AmplitudeEstimate {
            index: p.n as i32,
            amplitude: ((p.amplitude - m.amplitude) * 0.5).conj(),
            sigma,
        });
        out.push(AmplitudeEstimate {
            index: -(p.n as i32),
            amplitude: (p.amplitude + m.amplitude) * 0.5,
            sigma,
        });
    }
    out.sort_by_key(|a| a.index);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmittanceEstimate {
    pub index: i32,
    pub transmittance: f64,
    /// Propagated 1σ from both amplitude uncertainties.
    pub sigma: f64,
}

/// `eta_n = |A_sample,n|² / |A_ref,n|²` with first-order error propagation.
pub fn estimate_transmittance(sample: &[AmplitudeEstimate], reference: &[AmplitudeEstimate]) -> Result<Vec<TransmittanceEstimate>> {
    if sample.len() != reference.len() {
        return Err(EdcsError::Mismatch("sample and reference line sets differ".into()));
    }
    sample
        .iter()
        .zip(reference)
        .map(|(s, r)| {
            if s.index != r.index {
                return Err(EdcsError::Mismatch(format!("lines {} and {}", s.index, r.index)));
            }
            let ref2 = r.amplitude.norm_sqr();
            if ref2 == 0.0 {
                return Err(invalid("reference amplitude", "must be nonzero"));
            }
            let eta = s.amplitude.norm_sqr() / ref2;
            let rel_s = if s.amplitude.norm() > 0.0 { s.sigma / s.amplitude.norm() } else { 0.0 };
            let rel_r = r.sigma / ref2.sqrt();
            Ok(TransmittanceEstimate {
                index: s.index,
                transmittance: eta,
                sigma: 2.0 * eta * rel_s.hypot(rel_r),
            })
        })
        .collect()
}

/// Writes the binary header, then accepts samples in chunks.
pub struct InterferogramWriter<W: Write> {
    out: W,
    expected: u64,
    written: u64,
}

impl<W: Write> InterferogramWriter<W> {
    pub fn new(mut out: W, fs: f64, duration: f64, seed: u64, n_samples: u64) -> Result<Self> {
        out.write_all(&IFG_MAGIC)?;
        out.write_u32::<LittleEndian>(IFG_VERSION)?;
        out.write_f64::<LittleEndian>(fs)?;
        out.write_f64::<LittleEndian>(duration)?;
        out.write_u64::<LittleEndian>(seed)?;
        out.write_u64::<LittleEndian>(n_samples)?;
        Ok(Self {
            out,
            expected: n_samples,
            written: 0,
        })
    }

    pub fn write_samples(&mut self, samples: &[f64]) -> Result<()> {
        self.written += samples.len() as u64;
        if self.written > self.expected {
            return Err(EdcsError::Format("more samples than declared in the header".into()));
        }
        let mut bytes = Vec::with_capacity(8 * samples.len());
        for &x in samples {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        self.out.write_all(&bytes)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.expected {
            return Err(EdcsError::Format(format!(
                "wrote {} of {} declared samples",
                self.written, self.expected
            )));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Binary layout (little-endian): magic `EDCSIFG\0`, `u32` version,
/// `f64` sample rate, `f64` duration, `u64` seed, `u64` sample count, then
/// the samples as `f64`.
pub fn write_interferogram(out: impl Write, ifg: &Interferogram) -> Result<()> {
    let mut w = InterferogramWriter::new(out, ifg.sample_rate_hz, ifg.duration_s, ifg.seed, ifg.samples.len() as u64)?;
    w.write_samples(&ifg.samples)?;
    w.finish()?;
    Ok(())
}

pub fn read_interferogram(mut input: impl Read) -> Result<Interferogram> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if magic != IFG_MAGIC {
        return Err(EdcsError::Format("bad magic".into()));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != IFG_VERSION {
        return Err(EdcsError::Format(format!("unsupported version {version}")));
    }
    let fs = input.read_f64::<LittleEndian>()?;
    let duration = input.read_f64::<LittleEndian>()?;
    let seed = input.read_u64::<LittleEndian>()?;
    let n = input.read_u64::<LittleEndian>()? as usize;
    let mut samples = vec![0.0; n];
    input
        .read_f64_into::<LittleEndian>(&mut samples)
        .map_err(|e| EdcsError::Format(format!("truncated sample data: {e}")))?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(EdcsError::Format("trailing bytes after samples".into()));
    }
    let ifg = Interferogram {
        sample_rate_hz: fs,
        duration_s: duration,
        seed,
        samples,
    };
    ifg.validate()?;
    Ok(ifg)
}

pub fn save_interferogram(path: impl AsRef<Path>, ifg: &Interferogram) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_interferogram(f, ifg)
}

pub fn load_interferogram(path: impl AsRef<Path>) -> Result<Interferogram> {
    read_interferogram(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Columns: `freq_hz,power,phasor_re,phasor_im`.
pub fn write_spectrum_csv(out: impl Write, spec: &Spectrum) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["freq_hz", "power", "phasor_re", "phasor_im"])?;
    for k in 0..spec.n_bins() {
        w.write_record(&[
            spec.freq(k).to_string(),
            spec.power[k].to_string(),
            spec.phasor[k].re.to_string(),
            spec.phasor[k].im.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Phase of a tone of frequency `f` at sample `k` of a block, as used in the
/// `Re[A exp(i 2 pi f t)]` convention.
pub fn tone_phase(f_hz: f64, fs_hz: f64, k: usize) -> f64 {
    2.0 * PI * f_hz * k as f64 / fs_hz
}
