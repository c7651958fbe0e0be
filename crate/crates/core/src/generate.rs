//! Reproducible random models and signal realizations.
//!
//! A [`GenConfig`] fixes a layer stack, a sparsity range for the deepest
//! representation, an optional noise level and a master seed. From it,
//! [`build_model`] draws the random filters once and [`sample_realization`]
//! draws any number of independent signal realizations. Every draw comes
//! from its own counter-derived stream, so realization `i` is the same
//! whether or not realizations before it were generated.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::dict::{ConvDictionary, LocalFilterBank, ModelStack};
use crate::error::{Error, Result};
use crate::signal::{
    norm_l0inf_patch, norm_l0inf_stripe, norm_l2inf_patch, LayeredVector, ZERO_TOL,
};
use crate::theory::LayerStats;

/// Candidate filters whose coherence is at or below this are discarded as
/// degenerate: a dictionary with (numerically) orthogonal atoms carries no
/// cross-correlation structure and its stability bounds are vacuous.
const DEGENERATE_MU: f64 = 1e-12;

/// Stream slot reserved for realization-independent draws (filter selection).
const MODEL_SLOT: u64 = 0;

const MEYER29_TEXT: &str = include_str!("../data/meyer29.txt");

/// The built-in 29-tap symmetric wavelet filter used as the shallowest
/// dictionary in the bundled experiment presets. Taps have unit Euclidean
/// norm up to the stored precision.
pub fn meyer29() -> Vec<f64> {
    MEYER29_TEXT
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse().expect("embedded filter data is valid"))
        .collect()
}

/// Independent purposes a random stream can serve. Each (slot, purpose)
/// pair maps to a distinct stream of the counter-based generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StreamPurpose {
    /// Discrete structure: filter draws, support positions.
    Structure = 0,
    /// Nonzero coefficient values.
    Values = 1,
    /// Additive measurement noise.
    Noise = 2,
}

fn stream_rng(seed: u64, slot: u64, purpose: StreamPurpose) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((slot << 8) | purpose as u64);
    rng
}

/// How one layer's filter is produced.
#[derive(Clone, Debug)]
pub enum FilterSpec {
    /// Use these taps directly (normalized on dictionary construction).
    Fixed(Vec<f64>),
    /// Draw `candidates` random sparse filters and keep the one whose
    /// dictionary has the smallest mutual coherence. Each candidate has
    /// `nnz` nonzero taps at uniform positions, with integer values uniform
    /// on `[value_lo, value_hi]` excluding zero.
    RandomDiscrete {
        len: usize,
        nnz: usize,
        value_lo: i32,
        value_hi: i32,
        candidates: usize,
    },
}

/// One layer of a generated model: its filter recipe and stride.
#[derive(Clone, Debug)]
pub struct LayerGenSpec {
    pub filter: FilterSpec,
    pub stride: usize,
}

/// Full description of a generated experiment family. Layer specs are
/// ordered shallowest first; generated dictionaries always have a single
/// filter per layer, so every level is single-channel.
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub layers: Vec<LayerGenSpec>,
    /// Spatial length of the deepest representation.
    pub deepest_len: usize,
    /// Inclusive range for the deepest representation's nonzero count.
    pub l0_range: (usize, usize),
    /// Target global signal-to-noise ratio in dB; `None` for clean signals.
    pub snr_db: Option<f64>,
    /// Master seed; every random draw derives from it.
    pub seed: u64,
}

/// The part of a config that drives realization sampling. Sampling only
/// needs these and a model, so a model restored from disk can be sampled
/// without its generation recipe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleParams {
    /// Inclusive range for the deepest representation's nonzero count.
    pub l0_range: (usize, usize),
    /// Target global signal-to-noise ratio in dB; `None` for clean signals.
    pub snr_db: Option<f64>,
    /// Master seed shared with model generation.
    pub seed: u64,
}

impl SampleParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.l0_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidParameter(format!(
                "sparsity range [{lo}, {hi}] must satisfy 1 <= lo <= hi"
            )));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::InvalidParameter(format!("snr_db must be finite, got {snr}")));
            }
        }
        Ok(())
    }
}

impl GenConfig {
    pub fn sample_params(&self) -> SampleParams {
        SampleParams { l0_range: self.l0_range, snr_db: self.snr_db, seed: self.seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("model needs at least one layer".into()));
        }
        if self.deepest_len == 0 {
            return Err(Error::InvalidParameter("deepest_len must be positive".into()));
        }
        self.sample_params().validate()?;
        if self.l0_range.1 > self.deepest_len {
            return Err(Error::InvalidParameter(format!(
                "sparsity bound {} exceeds deepest length {}",
                self.l0_range.1, self.deepest_len
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.stride == 0 {
                return Err(Error::InvalidParameter(format!("layer {i}: stride must be positive")));
            }
            match &layer.filter {
                FilterSpec::Fixed(taps) => {
                    if taps.is_empty() {
                        return Err(Error::InvalidParameter(format!(
                            "layer {i}: fixed filter must not be empty"
                        )));
                    }
                }
                FilterSpec::RandomDiscrete { len, nnz, value_lo, value_hi, candidates } => {
                    if *len == 0 || *nnz == 0 || *nnz > *len {
                        return Err(Error::InvalidParameter(format!(
                            "layer {i}: need 1 <= nnz <= len, got nnz {nnz}, len {len}"
                        )));
                    }
                    if *candidates == 0 {
                        return Err(Error::InvalidParameter(format!(
                            "layer {i}: need at least one candidate"
                        )));
                    }
                    if nonzero_values(*value_lo, *value_hi).is_empty() {
                        return Err(Error::InvalidParameter(format!(
                            "layer {i}: value range [{value_lo}, {value_hi}] has no nonzero entries"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn nonzero_values(lo: i32, hi: i32) -> Vec<i32> {
    (lo..=hi).filter(|&v| v != 0).collect()
}

fn gen_sparse_filter(
    rng: &mut ChaCha12Rng,
    len: usize,
    nnz: usize,
    value_lo: i32,
    value_hi: i32,
) -> Vec<f64> {
    let allowed = nonzero_values(value_lo, value_hi);
    let mut positions = index::sample(rng, len, nnz).into_vec();
    positions.sort_unstable();
    let mut taps = vec![0.0; len];
    for p in positions {
        taps[p] = allowed[rng.random_range(0..allowed.len())] as f64;
    }
    taps
}

/// Mutual coherence of the single-filter dictionary these taps induce,
/// evaluated on the shortest input that exposes every distinct shift
/// overlap exactly once.
fn canonical_coherence(taps: &[f64], stride: usize) -> Result<f64> {
    let bank = LocalFilterBank::new(vec![taps.to_vec()])?;
    let in_len = (2 * taps.len()).div_ceil(stride);
    let dict = ConvDictionary::new(bank, in_len, stride, 1)?;
    dict.mutual_coherence()
}

fn select_filter_by_coherence(
    rng: &mut ChaCha12Rng,
    len: usize,
    nnz: usize,
    value_lo: i32,
    value_hi: i32,
    candidates: usize,
    stride: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..candidates {
        let taps = gen_sparse_filter(rng, len, nnz, value_lo, value_hi);
        let mu = canonical_coherence(&taps, stride)?;
        if mu <= DEGENERATE_MU {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| mu < *b) {
            best = Some((taps, mu));
        }
    }
    best.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "all {candidates} candidate filters had coherence <= {DEGENERATE_MU:e}"
        ))
    })
}

/// Builds the model a config describes, drawing random filters from the
/// config's seed. The same config always yields the same model.
pub fn build_model(cfg: &GenConfig) -> Result<ModelStack> {
    cfg.validate()?;
    let depth = cfg.layers.len();
    let mut level_len = vec![0usize; depth + 1];
    level_len[depth] = cfg.deepest_len;
    for i in (0..depth).rev() {
        level_len[i] = level_len[i + 1].checked_mul(cfg.layers[i].stride).ok_or_else(|| {
            Error::InvalidParameter("signal length overflows usize".into())
        })?;
    }
    let mut rng = stream_rng(cfg.seed, MODEL_SLOT, StreamPurpose::Structure);
    let mut dicts = Vec::with_capacity(depth);
    for (i, layer) in cfg.layers.iter().enumerate() {
        let taps = match &layer.filter {
            FilterSpec::Fixed(taps) => taps.clone(),
            FilterSpec::RandomDiscrete { len, nnz, value_lo, value_hi, candidates } => {
                select_filter_by_coherence(
                    &mut rng, *len, *nnz, *value_lo, *value_hi, *candidates, layer.stride,
                )?
                .0
            }
        };
        let bank = LocalFilterBank::new(vec![taps])?;
        dicts.push(ConvDictionary::new(bank, level_len[i + 1], layer.stride, 1)?);
    }
    ModelStack::new(dicts)
}

/// One drawn signal: its true representations, the clean and observed
/// signals and the noise level actually realized.
#[derive(Clone, Debug)]
pub struct Realization {
    /// Index of this realization under the master seed.
    pub index: usize,
    /// True representations, shallowest layer first.
    pub reps: Vec<LayeredVector>,
    /// Clean signal synthesized from the representations.
    pub x: LayeredVector,
    /// Observed signal: `x` plus noise when a target SNR is set.
    pub y: LayeredVector,
    /// Largest windowed Euclidean norm of the noise at the signal level.
    pub eps0_local: f64,
    /// Achieved global signal-to-noise ratio in dB (infinite when clean).
    pub snr_global_db: f64,
}

/// Draws realization `index` of the given parameters against a model. The
/// deepest representation gets a nonzero count uniform on the requested
/// range, support uniform without replacement and values of unit magnitude
/// with random signs; shallower representations and the signal follow from
/// the synthesis chain. Realizations with different indices are independent.
pub fn sample_realization(
    model: &ModelStack,
    params: &SampleParams,
    index: usize,
) -> Result<Realization> {
    params.validate()?;
    let deepest_geom = model.geometry(model.depth())?.clone();
    let total = deepest_geom.total_len();
    let (lo, hi) = params.l0_range;
    if hi > total {
        return Err(Error::InvalidParameter(format!(
            "sparsity bound {hi} exceeds deepest capacity {total}"
        )));
    }
    let slot = index as u64 + 1;
    let mut support_rng = stream_rng(params.seed, slot, StreamPurpose::Structure);
    let k = support_rng.random_range(lo..=hi);
    let mut support = index::sample(&mut support_rng, total, k).into_vec();
    support.sort_unstable();
    let mut values_rng = stream_rng(params.seed, slot, StreamPurpose::Values);
    let mut deepest = LayeredVector::zeros(deepest_geom);
    for &j in &support {
        deepest.data_mut()[j] = if values_rng.next_u32() & 1 == 0 { 1.0 } else { -1.0 };
    }
    let levels = model.synthesize_chain(&deepest)?;
    let mut levels = levels.into_iter();
    let x = levels.next().expect("chain includes the signal level");
    let reps: Vec<LayeredVector> = levels.collect();

    let (y, eps0_local, snr_global_db) = match params.snr_db {
        None => (x.clone(), 0.0, f64::INFINITY),
        Some(snr) => {
            let x_norm = l2(x.data());
            let n = x.data().len() as f64;
            let sigma = x_norm / (n.sqrt() * 10f64.powf(snr / 20.0));
            let mut noise_rng = stream_rng(params.seed, slot, StreamPurpose::Noise);
            let e_data: Vec<f64> = (0..x.data().len())
                .map(|_| sigma * noise_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let e = LayeredVector::new(x.geom().clone(), e_data)?;
            let e_norm = l2(e.data());
            let achieved = if e_norm == 0.0 {
                f64::INFINITY
            } else {
                20.0 * (x_norm / e_norm).log10()
            };
            let y_data: Vec<f64> =
                x.data().iter().zip(e.data()).map(|(a, b)| a + b).collect();
            let y = LayeredVector::new(x.geom().clone(), y_data)?;
            (y, norm_l2inf_patch(&e), achieved)
        }
    };
    Ok(Realization { index, reps, x, y, eps0_local, snr_global_db })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Mutual coherence of every dictionary in the stack, shallowest first.
pub fn model_coherences(model: &ModelStack) -> Result<Vec<f64>> {
    model.dicts().iter().map(|d| d.mutual_coherence()).collect()
}

/// Per-layer sparsity and magnitude statistics of true representations.
/// `reps` holds the layers shallowest first and `mus` the matching
/// dictionary coherences, as from [`model_coherences`].
pub fn measure_stats(reps: &[LayeredVector], mus: &[f64]) -> Result<Vec<LayerStats>> {
    if reps.len() != mus.len() {
        return Err(Error::GeometryMismatch(format!(
            "{} layers but {} coherence values",
            reps.len(),
            mus.len()
        )));
    }
    Ok(reps
        .iter()
        .zip(mus)
        .map(|(g, &mu)| {
            let mut gmin = f64::INFINITY;
            let mut gmax: f64 = 0.0;
            for &v in g.data() {
                let a = v.abs();
                if a > ZERO_TOL {
                    gmin = gmin.min(a);
                    gmax = gmax.max(a);
                }
            }
            if gmax == 0.0 {
                gmin = 0.0;
            }
            LayerStats {
                l0inf_stripe: norm_l0inf_stripe(g),
                l0inf_patch: norm_l0inf_patch(g),
                gamma_min_abs: gmin,
                gamma_max_abs: gmax,
                mu,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::LayerGeometry;
    use approx::assert_relative_eq;

    fn wavelet_layer(stride: usize) -> LayerGenSpec {
        LayerGenSpec { filter: FilterSpec::Fixed(meyer29()), stride }
    }

    fn sparse_layer(stride: usize, candidates: usize) -> LayerGenSpec {
        LayerGenSpec {
            filter: FilterSpec::RandomDiscrete {
                len: 20,
                nnz: 7,
                value_lo: -8,
                value_hi: 8,
                candidates,
            },
            stride,
        }
    }

    fn small_cfg() -> GenConfig {
        GenConfig {
            layers: vec![wavelet_layer(6), sparse_layer(6, 25)],
            deepest_len: 40,
            l0_range: (5, 12),
            snr_db: None,
            seed: 7,
        }
    }

    #[test]
    fn embedded_wavelet_is_symmetric_and_normalized() {
        let taps = meyer29();
        assert_eq!(taps.len(), 29);
        for i in 0..taps.len() {
            assert_eq!(taps[i], taps[taps.len() - 1 - i]);
        }
        assert_eq!(taps[14], -0.7437512725609593);
        assert_relative_eq!(l2(&taps), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn wavelet_dictionary_coherence_matches_reference() {
        let mu = canonical_coherence(&meyer29(), 6).unwrap();
        assert_relative_eq!(mu, 2.4370523132954345e-4, max_relative = 1e-12);
    }

    #[test]
    fn sparse_filter_has_requested_structure() {
        let mut rng = stream_rng(3, MODEL_SLOT, StreamPurpose::Structure);
        let taps = gen_sparse_filter(&mut rng, 20, 7, -8, 8);
        assert_eq!(taps.len(), 20);
        let nonzero: Vec<f64> = taps.iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero.len(), 7);
        for v in nonzero {
            assert_eq!(v, v.trunc());
            assert!((1.0..=8.0).contains(&v.abs()));
        }
    }

    #[test]
    fn selection_rejects_fully_degenerate_candidates() {
        // A single tap in a length-2 filter never overlaps its own shifts,
        // so every candidate has zero coherence.
        let mut rng = stream_rng(0, MODEL_SLOT, StreamPurpose::Structure);
        let err = select_filter_by_coherence(&mut rng, 2, 1, -8, 8, 5, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn selection_returns_positive_coherence() {
        let mut rng = stream_rng(11, MODEL_SLOT, StreamPurpose::Structure);
        let (taps, mu) = select_filter_by_coherence(&mut rng, 20, 7, -8, 8, 25, 6).unwrap();
        assert!(mu > DEGENERATE_MU);
        assert_eq!(taps.iter().filter(|&&v| v != 0.0).count(), 7);
        assert_relative_eq!(canonical_coherence(&taps, 6).unwrap(), mu);
    }

    #[test]
    fn build_model_produces_expected_geometry() {
        let cfg = GenConfig {
            layers: vec![wavelet_layer(6), sparse_layer(6, 10), sparse_layer(6, 10)],
            deepest_len: 100,
            l0_range: (20, 66),
            snr_db: None,
            seed: 1,
        };
        let model = build_model(&cfg).unwrap();
        assert_eq!(model.depth(), 3);
        let lens: Vec<usize> =
            (0..=3).map(|l| model.geometry(l).unwrap().spatial_len).collect();
        assert_eq!(lens, vec![21_600, 3_600, 600, 100]);
        let stripes: Vec<usize> =
            (1..=3).map(|l| model.geometry(l).unwrap().stripe_len).collect();
        assert_eq!(stripes, vec![9, 7, 7]);
        let patches: Vec<usize> =
            (1..=3).map(|l| model.geometry(l).unwrap().patch_len).collect();
        assert_eq!(patches, vec![20, 20, 7]);
    }

    #[test]
    fn build_model_is_deterministic() {
        let cfg = small_cfg();
        let a = build_model(&cfg).unwrap();
        let b = build_model(&cfg).unwrap();
        for (da, db) in a.dicts().iter().zip(b.dicts()) {
            assert_eq!(da.bank().filter(0), db.bank().filter(0));
        }
    }

    #[test]
    fn realizations_are_deterministic_and_index_distinct() {
        let cfg = small_cfg();
        let model = build_model(&cfg).unwrap();
        let a = sample_realization(&model, &cfg.sample_params(), 3).unwrap();
        let b = sample_realization(&model, &cfg.sample_params(), 3).unwrap();
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.y.data(), b.y.data());
        assert_eq!(a.eps0_local, b.eps0_local);
        let c = sample_realization(&model, &cfg.sample_params(), 4).unwrap();
        assert_ne!(
            a.reps.last().unwrap().support(ZERO_TOL),
            c.reps.last().unwrap().support(ZERO_TOL)
        );
    }

    #[test]
    fn deepest_sparsity_and_values_are_in_range() {
        let cfg = small_cfg();
        let model = build_model(&cfg).unwrap();
        for index in 0..8 {
            let r = sample_realization(&model, &cfg.sample_params(), index).unwrap();
            let deepest = r.reps.last().unwrap();
            let k = deepest.nnz();
            assert!((5..=12).contains(&k), "nnz {k} outside [5, 12]");
            for &v in deepest.data() {
                assert!(v == 0.0 || v == 1.0 || v == -1.0);
            }
            assert_eq!(r.x.data(), r.y.data());
            assert_eq!(r.eps0_local, 0.0);
            assert!(r.snr_global_db.is_infinite());
        }
    }

    #[test]
    fn noise_matches_target_snr() {
        let mut cfg = small_cfg();
        cfg.snr_db = Some(20.0);
        let model = build_model(&cfg).unwrap();
        let r = sample_realization(&model, &cfg.sample_params(), 0).unwrap();
        assert!((r.snr_global_db - 20.0).abs() < 1.0, "snr {}", r.snr_global_db);
        assert!(r.eps0_local > 0.0);
        assert_ne!(r.x.data(), r.y.data());
        let direct: f64 = 20.0
            * (l2(r.x.data())
                / l2(&r
                    .y
                    .data()
                    .iter()
                    .zip(r.x.data())
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>()))
            .log10();
        assert_relative_eq!(direct, r.snr_global_db, max_relative = 1e-12);
    }

    #[test]
    fn measured_stats_match_hand_count() {
        let geom = LayerGeometry::new(6, 1, 3, 3).unwrap();
        let g = LayeredVector::new(geom, vec![1.0, 0.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let stats = measure_stats(&[g], &[0.25]).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].l0inf_stripe, 2);
        assert_eq!(stats[0].l0inf_patch, 2);
        assert_eq!(stats[0].gamma_min_abs, 1.0);
        assert_eq!(stats[0].gamma_max_abs, 2.0);
        assert_eq!(stats[0].mu, 0.25);
    }

    #[test]
    fn stats_of_sampled_realization_are_consistent() {
        let cfg = small_cfg();
        let model = build_model(&cfg).unwrap();
        let r = sample_realization(&model, &cfg.sample_params(), 1).unwrap();
        let mus = model_coherences(&model).unwrap();
        let stats = measure_stats(&r.reps, &mus).unwrap();
        assert_eq!(stats.len(), 2);
        let deepest = stats.last().unwrap();
        assert_eq!(deepest.gamma_min_abs, 1.0);
        assert_eq!(deepest.gamma_max_abs, 1.0);
        for (s, g) in stats.iter().zip(&r.reps) {
            let cap = g.geom().stripe_len * g.geom().channels;
            assert!(s.l0inf_stripe <= cap);
            assert!(s.l0inf_patch <= g.geom().patch_len * g.geom().channels);
            assert!(s.mu > 0.0 && s.mu < 1.0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.l0_range = (0, 5);
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.l0_range = (10, 5);
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.l0_range = (5, 41);
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.snr_db = Some(f64::NAN);
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.layers.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.layers[1] = LayerGenSpec {
            filter: FilterSpec::RandomDiscrete {
                len: 20,
                nnz: 7,
                value_lo: 0,
                value_hi: 0,
                candidates: 10,
            },
            stride: 6,
        };
        assert!(cfg.validate().is_err());
    }
}
