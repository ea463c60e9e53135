//! Line-by-line Beer–Lambert absorption with Voigt profiles, and a weighted
//! least-squares fit of cell parameters to transmittance data.
//!
//! Line-list CSV schema (header row required, `#` starts a comment line):
//!
//! | column         | unit                       |
//! |----------------|----------------------------|
//! | `center_hz`    | Hz                         |
//! | `strength`     | cm⁻¹/(molecule·cm⁻²) at 296 K |
//! | `gamma_air`    | cm⁻¹/atm, Lorentz HWHM     |
//! | `gamma_self`   | cm⁻¹/atm, Lorentz HWHM     |
//! | `mass_amu`     | amu                        |
//! | `lower_energy` | cm⁻¹, may be empty         |
//!
//! Temperature scaling is simplified: `S(T) = S(296) (296/T)^1.5
//! exp(-c2 E'' (1/T - 1/296))`, pressure broadening scales as `(296/T)^0.75`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

use crate::error::{ensure_finite, invalid, EdcsError, Result};
use crate::units::{
    doppler_sigma_hz, number_density_cm3, torr_to_atm, C2_CM_K, C_CM_PER_S, T_REF_K,
};
use crate::voigt::voigt_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralLine {
    pub center_hz: f64,
    pub strength: f64,
    pub gamma_air: f64,
    pub gamma_self: f64,
    pub mass_amu: f64,
    #[serde(default)]
    pub lower_energy: Option<f64>,
}

impl SpectralLine {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_hz > 0.0) || !self.center_hz.is_finite() {
            return Err(invalid("center_hz", "must be positive"));
        }
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(invalid("strength", "must be finite and >= 0"));
        }
        for (name, v) in [
            ("gamma_air", self.gamma_air),
            ("gamma_self", self.gamma_self),
            ("mass_amu", self.mass_amu),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        if let Some(e) = self.lower_energy {
            ensure_finite("lower_energy", e)?;
        }
        Ok(())
    }

    /// Line strength at temperature `t` (same units as `strength`).
    pub fn strength_at(&self, t: f64) -> f64 {
        let mut s = self.strength * (T_REF_K / t).powf(1.5);
        if let Some(e) = self.lower_energy {
            s *= (-C2_CM_K * e * (1.0 / t - 1.0 / T_REF_K)).exp();
        }
        s
    }

    /// Lorentz HWHM in Hz.
    pub fn lorentz_hwhm_hz(&self, cell: &GasCell) -> f64 {
        let x = cell.mole_fraction;
        let gamma_cm = (self.gamma_air * (1.0 - x) + self.gamma_self * x)
            * torr_to_atm(cell.pressure_torr)
            * (T_REF_K / cell.temperature_k).powf(0.75);
        gamma_cm * C_CM_PER_S
    }

    pub fn doppler_sigma_hz(&self, cell: &GasCell) -> f64 {
        doppler_sigma_hz(self.center_hz, cell.temperature_k, self.mass_amu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasCell {
    pub path_length_cm: f64,
    pub pressure_torr: f64,
    pub temperature_k: f64,
    pub mole_fraction: f64,
}

impl GasCell {
    pub fn new(path_length_cm: f64, pressure_torr: f64, temperature_k: f64, mole_fraction: f64) -> Result<Self> {
        let c = Self {
            path_length_cm,
            pressure_torr,
            temperature_k,
            mole_fraction,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("path_length_cm", self.path_length_cm),
            ("pressure_torr", self.pressure_torr),
            ("temperature_k", self.temperature_k),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.mole_fraction) {
            return Err(invalid("mole_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    center_hz: f64,
    strength: f64,
    gamma_air: f64,
    gamma_self: f64,
    mass_amu: f64,
    #[serde(default)]
    lower_energy: Option<f64>,
}

/// Reads a line list in the CSV schema above; result is sorted by center.
pub fn ingest_line_list(path: impl AsRef<Path>) -> Result<Vec<SpectralLine>> {
    parse_line_list(std::fs::File::open(path)?)
}

pub fn parse_line_list(reader: impl Read) -> Result<Vec<SpectralLine>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| EdcsError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line_no = rec.position().map_or(0, |p| p.line());
        let row: Row = rec.deserialize(Some(&headers)).map_err(|e| EdcsError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let line = SpectralLine {
            center_hz: row.center_hz,
            strength: row.strength,
            gamma_air: row.gamma_air,
            gamma_self: row.gamma_self,
            mass_amu: row.mass_amu,
            lower_energy: row.lower_energy,
        };
        line.validate().map_err(|e| EdcsError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(EdcsError::NoLines);
    }
    lines.sort_by(|a, b| a.center_hz.total_cmp(&b.center_hz));
    Ok(lines)
}

fn absorbance_unchecked(freq_hz: f64, cell: &GasCell, lines: &[SpectralLine]) -> f64 {
    let column = number_density_cm3(cell.pressure_torr * cell.mole_fraction, cell.temperature_k)
        * cell.path_length_cm;
    if column == 0.0 {
        return 0.0;
    }
    let sum: f64 = lines
        .iter()
        .map(|l| {
            let phi_hz = voigt_unchecked(
                freq_hz - l.center_hz,
                l.lorentz_hwhm_hz(cell),
                l.doppler_sigma_hz(cell),
            );
            // Profile per cm⁻¹ = profile per Hz times c.
            l.strength_at(cell.temperature_k) * phi_hz * C_CM_PER_S
        })
        .sum();
    sum * column
}

/// Optical depth `-ln T` at `freq_hz`.
pub fn absorbance(freq_hz: f64, cell: &GasCell, lines: &[SpectralLine]) -> Result<f64> {
    cell.validate()?;
    Ok(absorbance_unchecked(freq_hz, cell, lines))
}

pub fn transmittance(freq_hz: f64, cell: &GasCell, lines: &[SpectralLine]) -> Result<f64> {
    Ok((-absorbance(freq_hz, cell, lines)?).exp())
}

/// Transmittance at many frequencies, evaluated in parallel.
pub fn transmittance_spectrum(freqs_hz: &[f64], cell: &GasCell, lines: &[SpectralLine]) -> Result<Vec<f64>> {
    cell.validate()?;
    Ok(freqs_hz
        .par_iter()
        .map(|&f| (-absorbance_unchecked(f, cell, lines)).exp())
        .collect())
}

/// Factor by which all strengths must be multiplied so the deepest line
/// center of `cell` shows `depth_db` of attenuation.
pub fn calibrate_strength_scale(lines: &[SpectralLine], cell: &GasCell, depth_db: f64) -> Result<f64> {
    cell.validate()?;
    if lines.is_empty() {
        return Err(EdcsError::NoLines);
    }
    if !(depth_db > 0.0) || !depth_db.is_finite() {
        return Err(invalid("depth_db", "must be positive"));
    }
    let peak = lines
        .iter()
        .map(|l| absorbance_unchecked(l.center_hz, cell, lines))
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(invalid("cell", "no absorption to calibrate"));
    }
    Ok(depth_db * std::f64::consts::LN_10 / 10.0 / peak)
}

pub fn scale_strengths(lines: &[SpectralLine], factor: f64) -> Vec<SpectralLine> {
    lines
        .iter()
        .map(|l| SpectralLine {
            strength: l.strength * factor,
            ..*l
        })
        .collect()
}

/// One transmittance sample with its 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPoint {
    pub freq_hz: f64,
    pub transmittance: f64,
    pub sigma: f64,
}

/// Which cell parameters the fit may move; the rest stay at their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParams {
    pub mole_fraction: bool,
    pub pressure: bool,
}

impl Default for FreeParams {
    fn default() -> Self {
        Self {
            mole_fraction: true,
            pressure: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once `max |J^T r| <= gradient_tol` (J, r in σ units).
    pub gradient_tol: f64,
    /// ...or once the accepted relative step drops below this.
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-9,
            step_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub freq_hz: f64,
    pub measured: f64,
    pub model: f64,
    /// `(measured - model) / sigma`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub cell: GasCell,
    pub params: Vec<FitParam>,
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub residuals: Vec<Residual>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }
}

struct Problem<'a> {
    points: &'a [MeasuredPoint],
    lines: &'a [SpectralLine],
    base: GasCell,
    free: FreeParams,
}

impl Problem<'_> {
    fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.free.mole_fraction {
            v.push("mole_fraction");
        }
        if self.free.pressure {
            v.push("pressure_torr");
        }
        v
    }

    fn pack(&self, c: &GasCell) -> Vec<f64> {
        let mut v = Vec::new();
        if self.free.mole_fraction {
            v.push(c.mole_fraction);
        }
        if self.free.pressure {
            v.push(c.pressure_torr);
        }
        v
    }

    fn unpack(&self, p: &[f64]) -> GasCell {
        let mut c = self.base;
        let mut it = p.iter();
        if self.free.mole_fraction {
            c.mole_fraction = *it.next().unwrap();
        }
        if self.free.pressure {
            c.pressure_torr = *it.next().unwrap();
        }
        c
    }

    fn model(&self, p: &[f64]) -> Option<DVector<f64>> {
        let c = self.unpack(p);
        c.validate().ok()?;
        Some(DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .map(|m| (-absorbance_unchecked(m.freq_hz, &c, self.lines)).exp()),
        ))
    }

    fn residuals(&self, model: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .zip(model.iter())
                .map(|(m, t)| (m.transmittance - t) / m.sigma),
        )
    }

    /// Central-difference Jacobian of the σ-weighted model.
    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.points.len(), p.len());
        for k in 0..p.len() {
            let h = 1e-6 * p[k].abs().max(1e-6);
            let (mut up, mut dn) = (p.to_vec(), p.to_vec());
            up[k] += h;
            dn[k] -= h;
            // One-sided at the mole-fraction bounds.
            let (mu, md, span) = match (self.model(&up), self.model(&dn)) {
                (Some(a), Some(b)) => (a, b, 2.0 * h),
                (Some(a), None) => (a, self.model(p).unwrap(), h),
                (None, Some(b)) => (self.model(p).unwrap(), b, h),
                (None, None) => {
                    return Err(EdcsError::DegenerateJacobian(
                        "cannot perturb parameters inside their domain".into(),
                    ))
                }
            };
            for (i, m) in self.points.iter().enumerate() {
                j[(i, k)] = (mu[i] - md[i]) / span / m.sigma;
            }
        }
        Ok(j)
    }
}

/// Weighted Levenberg–Marquardt fit of the free cell parameters.
///
/// `init` supplies the fixed path length and temperature as well as the
/// starting values. Uncertainties come from `(J^T W J)^-1` without rescaling
/// by the reduced chi-square, so they assume the sigmas are correct.
pub fn fit_cell_params(
    measured: &[MeasuredPoint],
    lines: &[SpectralLine],
    init: &GasCell,
    free: FreeParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    init.validate()?;
    if lines.is_empty() {
        return Err(EdcsError::NoLines);
    }
    let problem = Problem {
        points: measured,
        lines,
        base: *init,
        free,
    };
    let n_par = problem.names().len();
    if n_par == 0 {
        return Err(invalid("free", "at least one parameter must be free"));
    }
    if measured.len() < n_par {
        return Err(invalid("measured", "fewer points than free parameters"));
    }
    for m in measured {
        if !(m.sigma > 0.0) || !m.sigma.is_finite() {
            return Err(invalid("sigma", "must be positive"));
        }
        ensure_finite("transmittance", m.transmittance)?;
        ensure_finite("freq_hz", m.freq_hz)?;
    }

    let mut p = problem.pack(init);
    let mut model = problem.model(&p).expect("validated init");
    let mut r = problem.residuals(&model);
    let mut chi2 = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let j = problem.jacobian(&p)?;
        let jtj = j.transpose() * &j;
        check_rank(&jtj, &p)?;
        let g = j.transpose() * &r;
        if g.amax() <= opts.gradient_tol || chi2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..n_par {
                a[(k, k)] += lambda * jtj[(k, k)];
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(m) = problem.model(&trial) {
                let rt = problem.residuals(&m);
                let c2 = rt.norm_squared();
                if c2 <= chi2 {
                    let rel = step
                        .iter()
                        .zip(&p)
                        .map(|(d, v)| (d / v.abs().max(1e-300)).abs())
                        .fold(0.0, f64::max);
                    p = trial;
                    model = m;
                    r = rt;
                    chi2 = c2;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    converged = rel < opts.step_tol;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(EdcsError::NonConvergence {
            iterations,
            best_chi2: chi2,
            best_params: p,
        });
    }

    let j = problem.jacobian(&p)?;
    let jtj = j.transpose() * &j;
    check_rank(&jtj, &p)?;
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| EdcsError::DegenerateJacobian("J^T J is singular".into()))?;
    let params = problem
        .names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| FitParam {
            name: name.to_string(),
            value: p[k],
            sigma: cov[(k, k)].sqrt(),
        })
        .collect();
    let residuals = measured
        .iter()
        .zip(model.iter())
        .zip(r.iter())
        .map(|((m, &t), &z)| Residual {
            freq_hz: m.freq_hz,
            measured: m.transmittance,
            model: t,
            normalized: z,
        })
        .collect();
    Ok(FitResult {
        cell: problem.unpack(&p),
        params,
        covariance: (0..n_par)
            .map(|i| (0..n_par).map(|k| cov[(i, k)]).collect())
            .collect(),
        chi2,
        dof: measured.len() - n_par,
        iterations,
        residuals,
    })
}

fn check_rank(jtj: &DMatrix<f64>, p: &[f64]) -> Result<()> {
    let n = jtj.nrows();
    let d: Vec<f64> = (0..n).map(|k| jtj[(k, k)]).collect();
    // A 100% change of the parameter must move the model by more than 1e-8 sigma.
    if d
        .iter()
        .zip(p)
        .any(|(&v, &x)| !(v.sqrt() * x.abs() > 1e-8) || !v.is_finite())
    {
        return Err(EdcsError::DegenerateJacobian(
            "a free parameter has no effect on the model".into(),
        ));
    }
    // Correlation-normalized matrix; tiny eigenvalue means colinear columns.
    let norm = DMatrix::from_fn(n, n, |i, k| jtj[(i, k)] / (d[i] * d[k]).sqrt());
    let min_eig = norm.symmetric_eigenvalues().min();
    if min_eig < 1e-12 {
        return Err(EdcsError::DegenerateJacobian(format!(
            "free parameters are not separable (min normalized eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}
