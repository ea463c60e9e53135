//! Comb descriptions and construction of the displaced entangled signal comb.
//!
//! Lines are addressed by signed index `n` in `{-N..=-1, 1..=N}`; index 0 is
//! the central line, which only serves as a phase reference and never
//! produces a beatnote.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, EdcsError, Result};
use crate::optim::{minimize_phase_pair, wrap_phase};
use crate::gaussian::{
    mixed_tmsv_from_measured, PairState, QuadratureSelector, SingleModeState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombRole {
    Entangled,
    Classical,
    Lo,
}

/// Complex line amplitude stored as magnitude and phase (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineAmplitude {
    pub magnitude: f64,
    #[serde(default)]
    pub phase: f64,
}

impl LineAmplitude {
    pub fn new(magnitude: f64, phase: f64) -> Self {
        Self { magnitude, phase }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.phase)
    }
}

/// Amplitudes of the two lines of pair `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLines {
    pub plus: LineAmplitude,
    pub minus: LineAmplitude,
}

/// Spectral description of one comb.
///
/// Line `n` sits at `center + n (line_spacing + offset_spacing)`. The LO and
/// entangled combs have zero offset; the classical comb carries the
/// dual-comb offset `delta f_rep`, so the beat of pair `n` lands at
/// `n |offset_spacing|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombConfig {
    pub role: CombRole,
    pub center_freq_hz: f64,
    pub line_spacing_hz: f64,
    #[serde(default)]
    pub offset_spacing_hz: f64,
    /// Global field-amplitude scale (power reduction knob).
    #[serde(default = "unit_scale")]
    pub amplitude_scale: f64,
    /// `lines[k]` holds pair `n = k + 1`.
    pub lines: Vec<PairLines>,
}

fn unit_scale() -> f64 {
    1.0
}

impl CombConfig {
    /// Comb with `n_pairs` pairs of equal real amplitude.
    pub fn uniform(
        role: CombRole,
        center_freq_hz: f64,
        line_spacing_hz: f64,
        offset_spacing_hz: f64,
        n_pairs: usize,
        magnitude: f64,
    ) -> Result<Self> {
        let line = LineAmplitude::new(magnitude, 0.0);
        let cfg = Self {
            role,
            center_freq_hz,
            line_spacing_hz,
            offset_spacing_hz,
            amplitude_scale: 1.0,
            lines: vec![PairLines { plus: line, minus: line }; n_pairs],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lines.is_empty() {
            return Err(invalid("comb n_pairs", "must be >= 1"));
        }
        ensure_finite("center_freq_hz", self.center_freq_hz)?;
        ensure_finite("offset_spacing_hz", self.offset_spacing_hz)?;
        if !(self.line_spacing_hz > 0.0) || !self.line_spacing_hz.is_finite() {
            return Err(invalid("line_spacing_hz", "must be positive"));
        }
        if self.offset_spacing_hz.abs() >= 0.5 * self.line_spacing_hz {
            return Err(invalid(
                "offset_spacing_hz",
                "|offset| must be below half the line spacing",
            ));
        }
        if !(self.amplitude_scale >= 0.0) || !self.amplitude_scale.is_finite() {
            return Err(invalid("amplitude_scale", "must be finite and >= 0"));
        }
        for p in &self.lines {
            for l in [p.plus, p.minus] {
                ensure_finite("line phase", l.phase)?;
                if !(l.magnitude >= 0.0) || !l.magnitude.is_finite() {
                    return Err(invalid("line magnitude", "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.lines.len()
    }

    fn pair_lines(&self, n: u32) -> Result<&PairLines> {
        if n == 0 {
            return Err(invalid("pair index", "pairs are numbered from 1"));
        }
        self.lines.get(n as usize - 1).ok_or_else(|| {
            EdcsError::Mismatch(format!(
                "comb has {} pairs, pair {n} requested",
                self.lines.len()
            ))
        })
    }

    /// Scaled complex amplitudes `(line +n, line -n)`.
    pub fn pair_amplitudes(&self, n: u32) -> Result<(Complex64, Complex64)> {
        let p = self.pair_lines(n)?;
        Ok((
            p.plus.to_complex() * self.amplitude_scale,
            p.minus.to_complex() * self.amplitude_scale,
        ))
    }

    /// Optical frequency of line `n` (signed).
    pub fn line_frequency(&self, n: i32) -> f64 {
        self.center_freq_hz + n as f64 * (self.line_spacing_hz + self.offset_spacing_hz)
    }

    /// All non-central line frequencies, ascending.
    pub fn line_frequencies(&self) -> Vec<f64> {
        let n = self.n_pairs() as i32;
        (-n..=n)
            .filter(|&k| k != 0)
            .map(|k| self.line_frequency(k))
            .collect()
    }

    /// RF beat frequency of pair `n` against an LO at zero offset.
    pub fn beat_frequency(&self, n: u32) -> f64 {
        n as f64 * self.offset_spacing_hz.abs()
    }

    fn expect_role(&self, role: CombRole) -> Result<()> {
        if self.role != role {
            return Err(EdcsError::Mismatch(format!(
                "expected a {role:?} comb, got {:?}",
                self.role
            )));
        }
        Ok(())
    }
}

/// Squeezing and anti-squeezing of one pair, in dB relative to vacuum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSqueezing {
    pub squeeze_db: f64,
    pub antisqueeze_db: f64,
}

impl PairSqueezing {
    pub const NONE: Self = Self {
        squeeze_db: 0.0,
        antisqueeze_db: 0.0,
    };
}

/// Per-pair squeezing levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SqueezingProfile {
    /// Individually specified (e.g. measured) levels, one entry per pair.
    Measured { pairs: Vec<PairSqueezing> },
    /// The same levels on every pair.
    FlatTop {
        n_pairs: usize,
        squeeze_db: f64,
        antisqueeze_db: f64,
    },
}

impl SqueezingProfile {
    pub fn n_pairs(&self) -> usize {
        match self {
            SqueezingProfile::Measured { pairs } => pairs.len(),
            SqueezingProfile::FlatTop { n_pairs, .. } => *n_pairs,
        }
    }

    pub fn pairs(&self) -> Vec<PairSqueezing> {
        match self {
            SqueezingProfile::Measured { pairs } => pairs.clone(),
            SqueezingProfile::FlatTop {
                n_pairs,
                squeeze_db,
                antisqueeze_db,
            } => vec![
                PairSqueezing {
                    squeeze_db: *squeeze_db,
                    antisqueeze_db: *antisqueeze_db,
                };
                *n_pairs
            ],
        }
    }

    /// A profile with the same pair count and no squeezing (classical DCS).
    pub fn vacuum_like(&self) -> Self {
        SqueezingProfile::Measured {
            pairs: vec![PairSqueezing::NONE; self.n_pairs()],
        }
    }
}

/// Entangled comb and the tap that displaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntangledCombSpec {
    pub profile: SqueezingProfile,
    /// Power transmissivity of the displacement beam splitter for the entangled comb.
    pub tap_ratio: f64,
    /// Central line; kept for phase locking only and never detected.
    #[serde(default)]
    pub central_line: Option<PairSqueezing>,
}

impl EntangledCombSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tap_ratio > 0.0 && self.tap_ratio <= 1.0) {
            return Err(invalid("tap_ratio", "must lie in (0, 1]"));
        }
        if self.profile.n_pairs() == 0 {
            return Err(invalid("squeezing profile", "needs at least one pair"));
        }
        for p in self.profile.pairs() {
            mixed_tmsv_from_measured(p.squeeze_db, p.antisqueeze_db)?;
        }
        if let Some(c) = self.central_line {
            mixed_tmsv_from_measured(c.squeeze_db, c.antisqueeze_db)?;
        }
        Ok(())
    }
}

/// Output of [`build_entangled_comb`].
#[derive(Debug, Clone, PartialEq)]
pub struct EntangledComb {
    /// Displaced two-mode squeezed states, `pairs[k]` is pair `k + 1`.
    pub pairs: Vec<PairState>,
    /// Central single-mode squeezed line (phase reference only).
    pub central: Option<SingleModeState>,
}

/// Displaces each TMSV pair with the matching classical comb lines on an
/// unbalanced beam splitter.
///
/// Per pair: lossy TMSV from the dB levels, transmission `T` through the tap,
/// then displacement by `sqrt(1 - T)` times the classical line amplitude.
pub fn build_entangled_comb(spec: &EntangledCombSpec, classical: &CombConfig) -> Result<EntangledComb> {
    classical.expect_role(CombRole::Classical)?;
    classical.validate()?;
    if !(spec.tap_ratio > 0.0 && spec.tap_ratio <= 1.0) {
        return Err(invalid("tap_ratio", "must lie in (0, 1]"));
    }
    let levels = spec.profile.pairs();
    if levels.len() != classical.n_pairs() {
        return Err(EdcsError::Mismatch(format!(
            "{} squeezing entries for {} classical pairs",
            levels.len(),
            classical.n_pairs()
        )));
    }
    let t = spec.tap_ratio;
    let coupling = (1.0 - t).sqrt();
    let pairs = levels
        .iter()
        .enumerate()
        .map(|(k, lv)| {
            let n = k as u32 + 1;
            let (a_plus, a_minus) = classical.pair_amplitudes(n)?;
            mixed_tmsv_from_measured(lv.squeeze_db, lv.antisqueeze_db)?
                .state(n)?
                .apply_loss(t, t)?
                .displace(a_plus * coupling, a_minus * coupling)
        })
        .collect::<Result<Vec<_>>>()?;
    let central = spec
        .central_line
        .map(|c| {
            mixed_tmsv_from_measured(c.squeeze_db, c.antisqueeze_db)?
                .single_mode_state()?
                .apply_loss(t)
        })
        .transpose()?;
    Ok(EntangledComb { pairs, central })
}

/// Phases `(theta_n, theta_-n)` minimizing the balanced-selector variance of
/// `pair`, keeping `theta_n` at `hint.0` unless freeing it does strictly better.
pub fn squeezed_phases(pair: &PairState, hint: (f64, f64)) -> (f64, f64) {
    let (a, b, _) = minimize_phase_pair(
        |a, b| {
            pair.quadrature_moments(&QuadratureSelector::balanced([a, b]))
                .variance
        },
        hint.0,
    );
    (wrap_phase(a), wrap_phase(b))
}

/// Returns an LO whose phases read each pair's squeezed joint quadrature and
/// whose two lines per pair carry equal power (total power preserved).
pub fn align_lo_phases(pairs: &[PairState], lo: &CombConfig) -> Result<CombConfig> {
    lo.expect_role(CombRole::Lo)?;
    lo.validate()?;
    if pairs.len() != lo.n_pairs() {
        return Err(EdcsError::Mismatch(format!(
            "{} pair states for {} LO pairs",
            pairs.len(),
            lo.n_pairs()
        )));
    }
    let mut out = lo.clone();
    for (line, pair) in out.lines.iter_mut().zip(pairs) {
        let hint = (line.plus.phase, line.minus.phase);
        let (tp, tm) = squeezed_phases(pair, hint);
        let mag = (0.5 * (line.plus.magnitude.powi(2) + line.minus.magnitude.powi(2))).sqrt();
        line.plus = LineAmplitude::new(mag, tp);
        line.minus = LineAmplitude::new(mag, tm);
    }
    Ok(out)
}

/// Copies of `base` with the center shifted by `k * step_hz`, `k = 0..n_sweeps`.
pub fn sweep_centers(base: &CombConfig, n_sweeps: usize, step_hz: f64) -> Result<Vec<CombConfig>> {
    base.validate()?;
    if n_sweeps == 0 {
        return Err(invalid("n_sweeps", "must be >= 1"));
    }
    if n_sweeps > 1 && !(step_hz > 0.0) {
        return Err(invalid("step_hz", "must be positive"));
    }
    if step_hz >= base.line_spacing_hz {
        return Err(invalid("step_hz", "must be smaller than the line spacing"));
    }
    Ok((0..n_sweeps)
        .map(|k| {
            let mut c = base.clone();
            c.center_freq_hz += k as f64 * step_hz;
            c
        })
        .collect())
}

/// Sorted union of the line frequencies of several configs.
pub fn union_line_frequencies(configs: &[CombConfig]) -> Vec<f64> {
    let mut f: Vec<f64> = configs.iter().flat_map(|c| c.line_frequencies()).collect();
    f.sort_by(f64::total_cmp);
    f
}

/// Gaps left uncovered when every line is swept over `±half_range_hz`
/// (the RF fill-in step), between the lowest and highest line.
pub fn uncovered_gaps(line_freqs: &[f64], half_range_hz: f64) -> Vec<(f64, f64)> {
    let mut f = line_freqs.to_vec();
    f.sort_by(f64::total_cmp);
    f.windows(2)
        .filter_map(|w| {
            let lo = w[0] + half_range_hz;
            let hi = w[1] - half_range_hz;
            (hi > lo).then_some((lo, hi))
        })
        .collect()
}
