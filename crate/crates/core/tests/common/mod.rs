#![allow(dead_code)]

use edcs_core::comb::{PairSqueezing, SqueezingProfile};
use edcs_core::detection::{DetectionImperfections, SqueezingReference};
use edcs_core::metrics::{CombSection, Experiment, LoMode, SampleModel, SqueezingSection};

/// Measured per-pair squeezing / anti-squeezing of the five pairs.
pub const SQUEEZE_DB: [f64; 5] = [2.8, 2.6, 2.5, 2.3, 2.1];
pub const ANTISQUEEZE_DB: [f64; 5] = [13.3, 12.3, 11.3, 10.3, 9.3];

pub fn measured_profile() -> SqueezingProfile {
    SqueezingProfile::Measured {
        pairs: SQUEEZE_DB
            .iter()
            .zip(ANTISQUEEZE_DB)
            .map(|(&s, a)| PairSqueezing {
                squeeze_db: s,
                antisqueeze_db: a,
            })
            .collect(),
    }
}

pub fn experiment(reference: SqueezingReference, detection: DetectionImperfections) -> Experiment {
    Experiment {
        comb: CombSection {
            n_pairs: 5,
            center_freq_hz: 193.4e12,
            line_spacing_hz: 17.565e9,
            delta_f_rep_hz: 4e6,
            line_amplitude: 3.5,
            lo_amplitude: 1.0,
        },
        squeezing: SqueezingSection {
            profile: measured_profile(),
            reference,
            tap_ratio: 0.99,
        },
        detection,
        lo: LoMode::Balanced,
        sample: SampleModel::Flat { transmittance: 1.0 },
    }
}
