//! Physical constants and unit conversions used by the absorption model.
//!
//! Every conversion between spectroscopic units (wavenumber, Torr, amu)
//! and SI goes through this module.

/// Speed of light in cm/s.
pub const C_CM_PER_S: f64 = 2.997_924_58e10;
/// Speed of light in m/s.
pub const C_M_PER_S: f64 = 2.997_924_58e8;
/// Boltzmann constant, J/K.
pub const K_BOLTZMANN: f64 = 1.380_649e-23;
/// Atomic mass unit, kg.
pub const AMU_KG: f64 = 1.660_539_066_60e-27;
/// Second radiation constant hc/k, cm·K.
pub const C2_CM_K: f64 = 1.438_776_877;
/// Pa per standard atmosphere.
pub const PA_PER_ATM: f64 = 101_325.0;
/// Torr per standard atmosphere.
pub const TORR_PER_ATM: f64 = 760.0;
/// Line-list reference temperature, K.
pub const T_REF_K: f64 = 296.0;

pub fn torr_to_atm(p_torr: f64) -> f64 {
    p_torr / TORR_PER_ATM
}

pub fn torr_to_pa(p_torr: f64) -> f64 {
    torr_to_atm(p_torr) * PA_PER_ATM
}

pub fn wavenumber_to_hz(nu_cm: f64) -> f64 {
    nu_cm * C_CM_PER_S
}

pub fn hz_to_wavenumber(f_hz: f64) -> f64 {
    f_hz / C_CM_PER_S
}

/// Ideal-gas number density in molecules/cm³.
pub fn number_density_cm3(p_torr: f64, temperature_k: f64) -> f64 {
    torr_to_pa(p_torr) / (K_BOLTZMANN * temperature_k) * 1e-6
}

/// Gaussian standard deviation (Hz) of the Doppler profile of a line at `center_hz`.
pub fn doppler_sigma_hz(center_hz: f64, temperature_k: f64, mass_amu: f64) -> f64 {
    center_hz / C_M_PER_S * (K_BOLTZMANN * temperature_k / (mass_amu * AMU_KG)).sqrt()
}

/// Power ratio expressed in dB.
pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pressure_conversions() {
        assert!((torr_to_atm(760.0) - 1.0).abs() < 1e-15);
        assert!((torr_to_pa(760.0) - 101_325.0).abs() < 1e-9);
    }

    #[test]
    fn wavenumber_round_trip() {
        let f = wavenumber_to_hz(6500.0);
        assert!((f - 1.948_651e14).abs() / f < 1e-6);
        assert!((hz_to_wavenumber(f) - 6500.0).abs() < 1e-9);
    }

    #[test]
    fn loschmidt_like_density() {
        // 1 atm at 273.15 K is the Loschmidt constant, 2.6868e19 cm^-3.
        let n = number_density_cm3(760.0, 273.15);
        assert!((n - 2.686_78e19).abs() / n < 1e-4);
    }

    #[test]
    fn doppler_width_for_hcn_near_1550nm() {
        // sqrt(kT/m) for m = 27 amu at 296 K is ~302 m/s.
        let s = doppler_sigma_hz(1.95e14, 296.0, 27.0);
        assert!((s / 1.95e14 * C_M_PER_S - 302.2).abs() < 0.5, "{s}");
    }

    #[test]
    fn db_round_trip() {
        assert!((to_db(from_db(-2.6)) + 2.6).abs() < 1e-12);
        assert!((from_db(3.0) - 1.995_262_3).abs() < 1e-6);
    }
}
