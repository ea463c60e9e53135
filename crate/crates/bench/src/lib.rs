//! Shared inputs for the criterion benches.

use edcs_core::comb::{PairSqueezing, SqueezingProfile};
use edcs_core::detection::{DetectionImperfections, SqueezingReference};
use edcs_core::metrics::{CombSection, Experiment, LoMode, SampleModel, SqueezingSection};

/// Five measured pairs behind the experimental detector, 4 MHz beat spacing.
pub fn experiment() -> Experiment {
    let s = [2.8, 2.6, 2.5, 2.3, 2.1];
    let a = [13.3, 12.3, 11.3, 10.3, 9.3];
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
            profile: SqueezingProfile::Measured {
                pairs: s
                    .iter()
                    .zip(a)
                    .map(|(&squeeze_db, antisqueeze_db)| PairSqueezing { squeeze_db, antisqueeze_db })
                    .collect(),
            },
            reference: SqueezingReference::Detected,
            tap_ratio: 0.99,
        },
        detection: DetectionImperfections::experiment(),
        lo: LoMode::Balanced,
        sample: SampleModel::Flat { transmittance: 1.0 },
    }
}
