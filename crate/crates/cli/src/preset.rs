//! Bundled experiment families: model shape, noise level and the algorithm
//! line-up for each.

use std::str::FromStr;

use mlcsc::generate::{meyer29, FilterSpec, GenConfig, LayerGenSpec};

use crate::algorithm::Algorithm;

/// Stride shared by every bundled layer.
pub const PRESET_STRIDE: usize = 6;
/// Candidate pool for the coherence-selected sparse filters.
pub const PRESET_CANDIDATES: usize = 2000;

/// A ready-made experiment family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Three layers, clean signals: thresholding recovers every support.
    NoiselessK3,
    /// Two layers at 68.53 dB input SNR: thresholding is stable under noise.
    NoisyK2,
    /// Five layers at 124.43 dB input SNR: thresholding breaks down while
    /// layered shrinkage still satisfies its guarantee.
    BpK5,
}

/// Everything needed to generate and run one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub gen: GenConfig,
    pub realizations: usize,
    pub algorithms: Vec<Algorithm>,
}

fn wavelet_layer() -> LayerGenSpec {
    LayerGenSpec { filter: FilterSpec::Fixed(meyer29()), stride: PRESET_STRIDE }
}

fn sparse_layer() -> LayerGenSpec {
    LayerGenSpec {
        filter: FilterSpec::RandomDiscrete {
            len: 20,
            nnz: 7,
            value_lo: -8,
            value_hi: 8,
            candidates: PRESET_CANDIDATES,
        },
        stride: PRESET_STRIDE,
    }
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::NoiselessK3, Preset::NoisyK2, Preset::BpK5];

    pub fn name(self) -> &'static str {
        match self {
            Preset::NoiselessK3 => "noiseless_k3",
            Preset::NoisyK2 => "noisy_k2",
            Preset::BpK5 => "bp_k5",
        }
    }

    /// The full experiment this preset stands for, under a given seed.
    pub fn spec(self, seed: u64) -> ExperimentSpec {
        let (depth, snr_db, realizations, algorithms) = match self {
            Preset::NoiselessK3 => (
                3,
                None,
                100,
                vec![
                    Algorithm::LayeredHard,
                    Algorithm::LayeredSoft,
                    Algorithm::LayeredSoftOracle,
                    Algorithm::LayeredBp,
                ],
            ),
            Preset::NoisyK2 => (
                2,
                Some(68.53),
                100,
                vec![
                    Algorithm::LayeredHard,
                    Algorithm::LayeredSoft,
                    Algorithm::LayeredSoftOracle,
                    Algorithm::LayeredBp,
                ],
            ),
            Preset::BpK5 => (
                5,
                Some(124.43),
                20,
                vec![
                    Algorithm::LayeredHard,
                    Algorithm::LayeredSoft,
                    Algorithm::LayeredBp,
                    Algorithm::LayeredBpHandpicked,
                ],
            ),
        };
        let mut layers = vec![wavelet_layer()];
        layers.extend(std::iter::repeat_with(sparse_layer).take(depth - 1));
        ExperimentSpec {
            gen: GenConfig { layers, deepest_len: 100, l0_range: (20, 66), snr_db, seed },
            realizations,
            algorithms,
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset {s:?}; expected one of noiseless_k3, noisy_k2, bp_k5"))
    }
}
