//! Gaussian states of independent comb-line pairs.
//!
//! Conventions used throughout the crate:
//!
//! * Quadratures are ordered `(x_n, p_n, x_-n, p_-n)` and measured in
//!   shot-noise units, so the vacuum covariance is the identity and the
//!   standard quantum limit is the literal constant `1.0`.
//! * A coherent displacement `alpha` shifts a mode's mean by
//!   `(sqrt(2) Re alpha, sqrt(2) Im alpha)`.
//! * A two-mode squeezed vacuum with squeezing `r` has its noise reduced in
//!   the joint quadratures `(x_n + x_-n)/sqrt(2)` and `(p_n - p_-n)/sqrt(2)`.
//!   For a balanced selector with phases `(theta_n, theta_-n)` the variance is
//!   `cosh 2r - sinh 2r * cos(theta_n + theta_-n)`, so an LO with phase sum
//!   zero reads the squeezed quadrature.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::SQRT_2;

use crate::error::{ensure_finite, invalid, EdcsError, Result};

/// Symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Slack allowed on the `nu >= 1` uncertainty bound.
pub const PHYSICALITY_TOL: f64 = 1e-9;

/// One of the two modes of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// The line at `+n`.
    Plus,
    /// The line at `-n`.
    Minus,
}

impl Mode {
    fn offset(self) -> usize {
        match self {
            Mode::Plus => 0,
            Mode::Minus => 2,
        }
    }
}

/// First and second moments of a measured quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureMoments {
    pub mean: f64,
    pub variance: f64,
}

/// The quadrature an LO pair picks out of a two-mode state.
///
/// The observable is `sum_i w_i (x_i cos th_i + p_i sin th_i) / |w|`, which has
/// unit variance on vacuum for any weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSelector {
    weights: [f64; 2],
    phases: [f64; 2],
}

impl QuadratureSelector {
    /// `weights` and `phases` are `[+n, -n]`.
    pub fn new(weights: [f64; 2], phases: [f64; 2]) -> Result<Self> {
        for &w in weights.iter().chain(phases.iter()) {
            ensure_finite("quadrature selector", w)?;
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(invalid("selector weights", "must be non-negative"));
        }
        if weights[0] == 0.0 && weights[1] == 0.0 {
            return Err(invalid("selector weights", "all weights are zero"));
        }
        Ok(Self { weights, phases })
    }

    /// Equal weights on both lines.
    pub fn balanced(phases: [f64; 2]) -> Self {
        Self {
            weights: [1.0, 1.0],
            phases,
        }
    }

    pub fn weights(&self) -> [f64; 2] {
        self.weights
    }

    pub fn phases(&self) -> [f64; 2] {
        self.phases
    }

    /// Weights divided by their Euclidean norm.
    pub fn normalized_weights(&self) -> [f64; 2] {
        let norm = self.weights[0].hypot(self.weights[1]);
        [self.weights[0] / norm, self.weights[1] / norm]
    }

    /// Unit vector `v` such that the observable is `v . (x_n, p_n, x_-n, p_-n)`.
    pub fn observable(&self) -> Vector4<f64> {
        let [wp, wm] = self.normalized_weights();
        let [tp, tm] = self.phases;
        Vector4::new(wp * tp.cos(), wp * tp.sin(), wm * tm.cos(), wm * tm.sin())
    }

    /// Same weights, phases rotated to `(theta_n + d_n, theta_-n + d_-n)`.
    pub fn rotated(&self, d_plus: f64, d_minus: f64) -> Self {
        Self {
            weights: self.weights,
            phases: [self.phases[0] + d_plus, self.phases[1] + d_minus],
        }
    }
}

/// Gaussian state of the pair of lines `(+n, -n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairState {
    mean: Vector4<f64>,
    cov: Matrix4<f64>,
    pair_index: u32,
}

impl PairState {
    pub fn vacuum(pair_index: u32) -> Self {
        Self {
            mean: Vector4::zeros(),
            cov: Matrix4::identity(),
            pair_index,
        }
    }

    /// Pure two-mode squeezed vacuum with squeezing parameter `r`.
    pub fn tmsv(r: f64, pair_index: u32) -> Result<Self> {
        ensure_finite("squeezing r", r)?;
        if r < 0.0 {
            return Err(invalid("squeezing r", format!("must be >= 0, got {r}")));
        }
        let c = (2.0 * r).cosh();
        let s = (2.0 * r).sinh();
        #[rustfmt::skip]
        let cov = Matrix4::new(
            c,   0.0, -s,  0.0,
            0.0, c,   0.0, s,
            -s,  0.0, c,   0.0,
            0.0, s,   0.0, c,
        );
        Ok(Self {
            mean: Vector4::zeros(),
            cov,
            pair_index,
        })
    }

    /// Builds a state from raw moments, checking symmetry and physicality.
    pub fn from_moments(mean: Vector4<f64>, cov: Matrix4<f64>, pair_index: u32) -> Result<Self> {
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("pair state", "non-finite moment"));
        }
        let state = Self {
            mean,
            cov,
            pair_index,
        };
        if (cov - cov.transpose()).amax() > SYMMETRY_TOL {
            return Err(invalid("pair covariance", "not symmetric"));
        }
        if !state.is_physical() {
            return Err(invalid(
                "pair covariance",
                format!(
                    "violates the uncertainty principle (symplectic eigenvalues {:?})",
                    state.symplectic_eigenvalues()
                ),
            ));
        }
        Ok(state)
    }

    pub fn mean(&self) -> &Vector4<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix4<f64> {
        &self.cov
    }

    pub fn pair_index(&self) -> u32 {
        self.pair_index
    }

    /// Complex amplitude `(x + i p)/sqrt(2)` of one mode's mean field.
    pub fn mean_field(&self, mode: Mode) -> Complex64 {
        let o = mode.offset();
        Complex64::new(self.mean[o], self.mean[o + 1]) / SQRT_2
    }

    /// Symplectic eigenvalues `(nu_-, nu_+)`, ascending. Vacuum gives `(1, 1)`.
    ///
    /// Computed as the square roots of the (doubly degenerate) eigenvalues of
    /// `M^T M` with `M = S Omega S`, `S = cov^{1/2}`; a symmetric eigenproblem
    /// stays accurate when the two values coincide, as they do for pure states.
    pub fn symplectic_eigenvalues(&self) -> [f64; 2] {
        let eig = nalgebra::SymmetricEigen::new(self.cov);
        let sqrt_cov = eig.eigenvectors
            * Matrix4::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
            * eig.eigenvectors.transpose();
        let m = sqrt_cov * symplectic_form() * sqrt_cov;
        let mut nu: Vec<f64> = nalgebra::SymmetricEigen::new(m.transpose() * m)
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        nu.sort_by(f64::total_cmp);
        [0.5 * (nu[0] + nu[1]), 0.5 * (nu[2] + nu[3])]
    }

    /// `cov + i Omega >= 0` within [`PHYSICALITY_TOL`], with a positive-definite `cov`.
    pub fn is_physical(&self) -> bool {
        let pd = self.cov.cholesky().is_some();
        pd && self.symplectic_eigenvalues()[0] >= 1.0 - PHYSICALITY_TOL
    }

    /// Adds a coherent displacement to each mode. The covariance is untouched.
    pub fn displace(&self, alpha_plus: Complex64, alpha_minus: Complex64) -> Result<Self> {
        for v in [alpha_plus.re, alpha_plus.im, alpha_minus.re, alpha_minus.im] {
            ensure_finite("displacement", v)?;
        }
        let shift = Vector4::new(alpha_plus.re, alpha_plus.im, alpha_minus.re, alpha_minus.im) * SQRT_2;
        Ok(Self {
            mean: self.mean + shift,
            cov: self.cov,
            pair_index: self.pair_index,
        })
    }

    /// Pure-loss channel with power transmittance `eta` on each mode
    /// (vacuum admixed on a beam splitter).
    pub fn apply_loss(&self, eta_plus: f64, eta_minus: f64) -> Result<Self> {
        check_transmittance("eta_n", eta_plus)?;
        check_transmittance("eta_-n", eta_minus)?;
        if eta_plus == 1.0 && eta_minus == 1.0 {
            return Ok(self.clone());
        }
        let g = Vector4::new(
            eta_plus.sqrt(),
            eta_plus.sqrt(),
            eta_minus.sqrt(),
            eta_minus.sqrt(),
        );
        let gm = Matrix4::from_diagonal(&g);
        let noise = Matrix4::from_diagonal(&g.map(|x| 1.0 - x * x));
        let mut cov = gm * self.cov * gm + noise;
        cov = 0.5 * (cov + cov.transpose());
        Ok(Self {
            mean: gm * self.mean,
            cov,
            pair_index: self.pair_index,
        })
    }

    /// Mean and variance of the normalized observable chosen by `sel`.
    pub fn quadrature_moments(&self, sel: &QuadratureSelector) -> QuadratureMoments {
        let v = sel.observable();
        QuadratureMoments {
            mean: v.dot(&self.mean),
            variance: (v.transpose() * self.cov * v)[(0, 0)],
        }
    }

    /// Reduced state of one mode.
    pub fn marginal(&self, mode: Mode) -> SingleModeState {
        let o = mode.offset();
        SingleModeState {
            mean: Vector2::new(self.mean[o], self.mean[o + 1]),
            cov: self.cov.fixed_view::<2, 2>(o, o).into_owned(),
        }
    }

    /// Draws `n_samples` i.i.d. outcomes of the selected quadrature.
    pub fn sample_quadrature(
        &self,
        sel: &QuadratureSelector,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let m = self.quadrature_moments(sel);
        sample_normal(m.mean, m.variance, n_samples, seed)
    }
}

/// `Omega = diag(J, J)` with `J = [[0, 1], [-1, 0]]`.
pub fn symplectic_form() -> Matrix4<f64> {
    #[rustfmt::skip]
    let omega = Matrix4::new(
        0.0,  1.0, 0.0,  0.0,
        -1.0, 0.0, 0.0,  0.0,
        0.0,  0.0, 0.0,  1.0,
        0.0,  0.0, -1.0, 0.0,
    );
    omega
}

fn check_transmittance(name: &'static str, eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(name, format!("transmittance must lie in [0, 1], got {eta}")));
    }
    Ok(())
}

pub(crate) fn sample_normal(mean: f64, variance: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("n_samples", "must be >= 1"));
    }
    let dist = Normal::new(mean, variance.max(0.0).sqrt())
        .map_err(|e| invalid("quadrature variance", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Gaussian state of a single mode (the central comb line).
#[derive(Debug, Clone, PartialEq)]
pub struct SingleModeState {
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
}

impl SingleModeState {
    pub fn vacuum() -> Self {
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::identity(),
        }
    }

    /// Squeezed vacuum with reduced noise in `x`.
    pub fn squeezed(r: f64) -> Result<Self> {
        ensure_finite("squeezing r", r)?;
        if r < 0.0 {
            return Err(invalid("squeezing r", format!("must be >= 0, got {r}")));
        }
        Ok(Self {
            mean: Vector2::zeros(),
            cov: Matrix2::new((-2.0 * r).exp(), 0.0, 0.0, (2.0 * r).exp()),
        })
    }

    pub fn mean(&self) -> &Vector2<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix2<f64> {
        &self.cov
    }

    pub fn symplectic_eigenvalue(&self) -> f64 {
        self.cov.determinant().max(0.0).sqrt()
    }

    pub fn is_physical(&self) -> bool {
        self.cov.cholesky().is_some() && self.symplectic_eigenvalue() >= 1.0 - PHYSICALITY_TOL
    }

    pub fn displace(&self, alpha: Complex64) -> Result<Self> {
        ensure_finite("displacement", alpha.re)?;
        ensure_finite("displacement", alpha.im)?;
        Ok(Self {
            mean: self.mean + Vector2::new(alpha.re, alpha.im) * SQRT_2,
            cov: self.cov,
        })
    }

    pub fn apply_loss(&self, eta: f64) -> Result<Self> {
        check_transmittance("eta", eta)?;
        if eta == 1.0 {
            return Ok(self.clone());
        }
        Ok(Self {
            mean: self.mean * eta.sqrt(),
            cov: self.cov * eta + Matrix2::identity() * (1.0 - eta),
        })
    }

    /// Moments of `x cos theta + p sin theta`.
    pub fn quadrature_moments(&self, theta: f64) -> QuadratureMoments {
        let v = Vector2::new(theta.cos(), theta.sin());
        QuadratureMoments {
            mean: v.dot(&self.mean),
            variance: (v.transpose() * self.cov * v)[(0, 0)],
        }
    }
}

/// Parameters of a TMSV degraded by symmetric vacuum admixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedSqueezing {
    /// Squeezing parameter of the underlying pure state.
    pub r: f64,
    /// Transmittance of the loss that accounts for the excess anti-squeezing.
    pub eta: f64,
}

impl MixedSqueezing {
    /// The lossy TMSV this parameter set describes.
    pub fn state(&self, pair_index: u32) -> Result<PairState> {
        PairState::tmsv(self.r, pair_index)?.apply_loss(self.eta, self.eta)
    }

    /// The single-mode analogue (central line).
    pub fn single_mode_state(&self) -> Result<SingleModeState> {
        SingleModeState::squeezed(self.r)?.apply_loss(self.eta)
    }
}

/// Solves for `(r, eta)` such that a pure TMSV with squeezing `r` sent through
/// loss `eta` shows `squeeze_db` of squeezing and `antisqueeze_db` of
/// anti-squeezing relative to vacuum:
///
/// ```text
/// eta e^{-2r} + 1 - eta = 10^{-S/10}
/// eta e^{+2r} + 1 - eta = 10^{+A/10}
/// ```
///
/// Dividing the two shows `e^{2r} = (a - 1)/(1 - s)` in linear units.
/// `S = A = 0` is accepted as the vacuum limit `(0, 1)`.
pub fn mixed_tmsv_from_measured(squeeze_db: f64, antisqueeze_db: f64) -> Result<MixedSqueezing> {
    let infeasible = |reason: &str| EdcsError::InfeasibleSqueezing {
        squeeze_db,
        antisqueeze_db,
        reason: reason.to_string(),
    };
    if !squeeze_db.is_finite() || !antisqueeze_db.is_finite() {
        return Err(infeasible("non-finite dB value"));
    }
    if squeeze_db == 0.0 && antisqueeze_db == 0.0 {
        return Ok(MixedSqueezing { r: 0.0, eta: 1.0 });
    }
    if squeeze_db <= 0.0 {
        return Err(infeasible("squeezing must be > 0 dB (or both values zero for vacuum)"));
    }
    if antisqueeze_db < squeeze_db {
        return Err(infeasible(
            "anti-squeezing below squeezing requires eta > 1 (state below the uncertainty bound)",
        ));
    }
    let s = 10f64.powf(-squeeze_db / 10.0);
    let a = 10f64.powf(antisqueeze_db / 10.0);
    let u = (a - 1.0) / (1.0 - s);
    let eta = ((a - 1.0) / (u - 1.0)).min(1.0);
    Ok(MixedSqueezing {
        r: 0.5 * u.ln(),
        eta,
    })
}
