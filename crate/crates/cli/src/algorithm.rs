//! The pursuit strategies the harness compares, each with its policy for
//! picking per-layer threshold or shrinkage levels.

use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use mlcsc::dict::ModelStack;
use mlcsc::pursuit::{ist, layered_ist_continuation, layered_threshold, ContinuationConfig, IstConfig, LayeredThreshConfig};
use mlcsc::signal::LayeredVector;
use mlcsc::theory::{basis_pursuit_bounds, hard_stability, soft_stability, LayerStats};
use mlcsc::threshold::{oracle_threshold, ThresholdKind};

/// Tolerance for the power iteration that bounds each Gram's spectrum.
pub const SPECTRAL_TOL: f64 = 1e-6;

/// Number of shrinkage levels the hand-picked variant tries per layer.
const GRID_POINTS: usize = 10;
/// Exponent range of the hand-picked grid: levels span
/// `linf(D^T input) * 10^-e` for `e` from `GRID_EXP_LO` to `GRID_EXP_HI`.
const GRID_EXP_LO: f64 = 1.0;
const GRID_EXP_HI: f64 = 6.0;

/// Shrinkage level used for a layer whose propagated theory level is
/// undefined, as a fraction of the largest analysis response.
const FALLBACK_LEVEL_SCALE: f64 = 0.1;

/// A pursuit strategy runnable end to end over a model.
///
/// The variant order defines the sort order in emitted tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    /// Hard threshold per layer at the midpoint of the admissible interval.
    LayeredHard,
    /// Soft threshold per layer at the same midpoint levels.
    LayeredSoft,
    /// Soft threshold with the level picked per layer so the survivor count
    /// matches the true layer sparsity.
    LayeredSoftOracle,
    /// Iterative shrinkage per layer: level `4 eps_{i-1}` under noise, a
    /// decreasing continuation schedule when the input is clean.
    LayeredBp,
    /// Iterative shrinkage with the level grid-searched per layer against
    /// the true representation.
    LayeredBpHandpicked,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::LayeredHard,
        Algorithm::LayeredSoft,
        Algorithm::LayeredSoftOracle,
        Algorithm::LayeredBp,
        Algorithm::LayeredBpHandpicked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LayeredHard => "layered_hard",
            Algorithm::LayeredSoft => "layered_soft",
            Algorithm::LayeredSoftOracle => "layered_soft_oracle",
            Algorithm::LayeredBp => "layered_bp",
            Algorithm::LayeredBpHandpicked => "layered_bp_handpicked",
        }
    }

    /// Whether running this strategy needs precomputed Gram spectral bounds.
    pub fn needs_spectral(self) -> bool {
        matches!(self, Algorithm::LayeredBp | Algorithm::LayeredBpHandpicked)
    }

    /// Whether a recovery guarantee backs this strategy's default levels.
    pub fn has_bound(self) -> bool {
        matches!(self, Algorithm::LayeredHard | Algorithm::LayeredSoft | Algorithm::LayeredBp)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
            format!("unknown algorithm {s:?}; expected one of {}", names.join(", "))
        })
    }
}

/// User-supplied levels replacing the theory-derived defaults.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    /// Per-layer levels for the hard and soft threshold passes.
    pub betas: Option<Vec<f64>>,
    /// Per-layer levels for the layered shrinkage pursuit.
    pub xis: Option<Vec<f64>>,
}

fn check_len(name: &str, given: usize, depth: usize) -> Result<()> {
    if given != depth {
        bail!("{given} {name} levels for {depth} layers");
    }
    Ok(())
}

/// Gram spectral bounds for every layer, computed once per model.
pub fn spectral_bounds(model: &ModelStack) -> Result<Vec<f64>> {
    model.dicts().iter().map(|d| Ok(d.gram_spectral_bound(SPECTRAL_TOL)?)).collect()
}

fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn threshold_chain(
    model: &ModelStack,
    y: &LayeredVector,
    kind: ThresholdKind,
    betas: Vec<f64>,
) -> Result<Vec<LayeredVector>> {
    Ok(layered_threshold(model, y, &LayeredThreshConfig { kind, betas })?.reps)
}

fn oracle_chain(
    model: &ModelStack,
    y: &LayeredVector,
    truth: &[LayeredVector],
) -> Result<Vec<LayeredVector>> {
    let mut reps: Vec<LayeredVector> = Vec::with_capacity(model.depth());
    for (i, d) in model.dicts().iter().enumerate() {
        let input = if i == 0 { y } else { &reps[i - 1] };
        let mut z = d.analyze(input)?;
        let beta = oracle_threshold(z.data(), truth[i].nnz())?.beta;
        ThresholdKind::Soft.apply_slice(z.data_mut(), beta)?;
        reps.push(z);
    }
    Ok(reps)
}

enum ShrinkLevels {
    Given(Vec<f64>),
    Theory(Vec<f64>),
}

fn shrinkage_chain(
    model: &ModelStack,
    y: &LayeredVector,
    cs: &[f64],
    levels: ShrinkLevels,
) -> Result<Vec<LayeredVector>> {
    let mut reps: Vec<LayeredVector> = Vec::with_capacity(model.depth());
    for (i, d) in model.dicts().iter().enumerate() {
        let input = if i == 0 { y } else { &reps[i - 1] };
        let xi = match &levels {
            ShrinkLevels::Given(xs) => xs[i],
            ShrinkLevels::Theory(xs) if xs[i].is_finite() => xs[i],
            ShrinkLevels::Theory(_) => FALLBACK_LEVEL_SCALE * linf(d.analyze(input)?.data()),
        };
        let cfg = IstConfig { xi, c: Some(cs[i]), ..IstConfig::default() };
        let (g, _) = ist(d, input, &cfg, None)?;
        reps.push(g);
    }
    Ok(reps)
}

fn handpicked_chain(
    model: &ModelStack,
    y: &LayeredVector,
    truth: &[LayeredVector],
    cs: &[f64],
) -> Result<Vec<LayeredVector>> {
    let mut reps: Vec<LayeredVector> = Vec::with_capacity(model.depth());
    for (i, d) in model.dicts().iter().enumerate() {
        let input = if i == 0 { y } else { &reps[i - 1] };
        let scale = linf(d.analyze(input)?.data());
        let mut best: Option<(f64, LayeredVector)> = None;
        for t in 0..GRID_POINTS {
            let expo = GRID_EXP_LO
                + (GRID_EXP_HI - GRID_EXP_LO) * t as f64 / (GRID_POINTS - 1) as f64;
            let cfg =
                IstConfig { xi: scale * 10f64.powf(-expo), c: Some(cs[i]), ..IstConfig::default() };
            let (g, _) = ist(d, input, &cfg, None)?;
            let err = layer_err(&truth[i], &g)?;
            if best.as_ref().is_none_or(|(b, _)| err < *b) {
                best = Some((err, g));
            }
        }
        reps.push(best.expect("grid is nonempty").1);
    }
    Ok(reps)
}

/// Largest windowed l2 norm of the estimate's deviation from the truth.
pub fn layer_err(truth: &LayeredVector, est: &LayeredVector) -> Result<f64> {
    if truth.geom() != est.geom() {
        bail!("estimate geometry does not match the truth");
    }
    let data: Vec<f64> = truth.data().iter().zip(est.data()).map(|(t, e)| t - e).collect();
    let diff = LayeredVector::new(truth.geom().clone(), data)?;
    Ok(mlcsc::signal::norm_l2inf_patch(&diff))
}

/// Runs one strategy over all layers and returns the per-layer estimates,
/// shallowest first.
///
/// `truth` is consulted only by the oracle and hand-picked variants; `cs`
/// must hold per-layer spectral bounds whenever [`Algorithm::needs_spectral`]
/// says so. A theory shrinkage level that is undefined because an earlier
/// layer broke its condition falls back to a tenth of the layer's largest
/// analysis response.
#[allow(clippy::too_many_arguments)]
pub fn run_algorithm(
    model: &ModelStack,
    y: &LayeredVector,
    truth: &[LayeredVector],
    stats: &[LayerStats],
    eps0: f64,
    cs: Option<&[f64]>,
    overrides: &Overrides,
    alg: Algorithm,
) -> Result<Vec<LayeredVector>> {
    let depth = model.depth();
    if let Some(b) = &overrides.betas {
        check_len("threshold", b.len(), depth)?;
    }
    if let Some(x) = &overrides.xis {
        check_len("shrinkage", x.len(), depth)?;
    }
    let need_cs = || {
        cs.ok_or_else(|| anyhow!("{alg} needs precomputed spectral bounds"))
            .and_then(|cs| check_len("spectral bound", cs.len(), depth).map(|()| cs))
    };
    match alg {
        Algorithm::LayeredHard | Algorithm::LayeredSoft => {
            let kind = match alg {
                Algorithm::LayeredHard => ThresholdKind::Hard,
                _ => ThresholdKind::Soft,
            };
            let betas = match &overrides.betas {
                Some(b) => b.clone(),
                None => hard_stability(stats, eps0, None)
                    .context("deriving threshold levels")?
                    .layers
                    .iter()
                    .map(|l| l.chosen)
                    .collect(),
            };
            threshold_chain(model, y, kind, betas)
        }
        Algorithm::LayeredSoftOracle => oracle_chain(model, y, truth),
        Algorithm::LayeredBp => {
            let cs = need_cs()?;
            match (&overrides.xis, eps0 > 0.0) {
                (Some(xs), _) => shrinkage_chain(model, y, cs, ShrinkLevels::Given(xs.clone())),
                (None, true) => {
                    let xs = basis_pursuit_bounds(stats, eps0)
                        .context("deriving shrinkage levels")?
                        .layers
                        .iter()
                        .map(|l| l.chosen)
                        .collect();
                    shrinkage_chain(model, y, cs, ShrinkLevels::Theory(xs))
                }
                (None, false) => {
                    let cfgs: Vec<ContinuationConfig> = cs
                        .iter()
                        .map(|&c| ContinuationConfig { c: Some(c), ..ContinuationConfig::default() })
                        .collect();
                    Ok(layered_ist_continuation(model, y, &cfgs)?.reps)
                }
            }
        }
        Algorithm::LayeredBpHandpicked => handpicked_chain(model, y, truth, need_cs()?),
    }
}

/// Worst-case windowed error per layer promised by the strategy's guarantee.
///
/// NaN marks layers without a promise: the oracle and hand-picked variants
/// everywhere, shrinkage under a level override, and any layer past a broken
/// condition. A clean-input shrinkage promise is exact recovery, reported as
/// zero.
pub fn algorithm_bounds(
    alg: Algorithm,
    stats: &[LayerStats],
    eps0: f64,
    overrides: &Overrides,
) -> Result<Vec<f64>> {
    let eps_of = |r: mlcsc::theory::TheoremReport| r.layers.iter().map(|l| l.eps).collect();
    Ok(match alg {
        Algorithm::LayeredHard => eps_of(hard_stability(stats, eps0, overrides.betas.as_deref())?),
        Algorithm::LayeredSoft => eps_of(soft_stability(stats, eps0, overrides.betas.as_deref())?),
        Algorithm::LayeredBp if overrides.xis.is_none() => {
            eps_of(basis_pursuit_bounds(stats, eps0)?)
        }
        _ => vec![f64::NAN; stats.len()],
    })
}

/// Per-layer flags telling whether the strategy's guarantee applies. All
/// false for strategies without one.
pub fn algorithm_conditions(
    alg: Algorithm,
    stats: &[LayerStats],
    eps0: f64,
    overrides: &Overrides,
) -> Result<Vec<bool>> {
    let ok_of =
        |r: mlcsc::theory::TheoremReport| r.layers.iter().map(|l| l.condition_ok).collect();
    Ok(match alg {
        Algorithm::LayeredHard => ok_of(hard_stability(stats, eps0, overrides.betas.as_deref())?),
        Algorithm::LayeredSoft => ok_of(soft_stability(stats, eps0, overrides.betas.as_deref())?),
        Algorithm::LayeredBp if overrides.xis.is_none() => {
            ok_of(basis_pursuit_bounds(stats, eps0)?)
        }
        _ => vec![false; stats.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mlcsc::generate::{
        build_model, measure_stats, model_coherences, sample_realization, FilterSpec, GenConfig,
        LayerGenSpec, SampleParams,
    };
    use mlcsc::signal::ZERO_TOL;

    fn small_model() -> (ModelStack, Vec<f64>) {
        let cfg = GenConfig {
            layers: vec![
                LayerGenSpec { filter: FilterSpec::Fixed(vec![0.2, 0.9, -0.5, 0.1, 0.3]), stride: 2 },
                LayerGenSpec { filter: FilterSpec::Fixed(vec![1.0, 0.0, -0.4, 0.2]), stride: 2 },
            ],
            deepest_len: 25,
            l0_range: (2, 4),
            snr_db: Some(40.0),
            seed: 11,
        };
        let model = build_model(&cfg).unwrap();
        let mus = model_coherences(&model).unwrap();
        (model, mus)
    }

    fn instance(
        model: &ModelStack,
        snr_db: Option<f64>,
    ) -> (LayeredVector, Vec<LayeredVector>, Vec<LayerStats>, f64) {
        let params = SampleParams { l0_range: (2, 4), snr_db, seed: 11 };
        let r = sample_realization(model, &params, 0).unwrap();
        let mus = model_coherences(model).unwrap();
        let stats = measure_stats(&r.reps, &mus).unwrap();
        (r.y, r.reps, stats, r.eps0_local)
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        let err = "layered".parse::<Algorithm>().unwrap_err();
        assert!(err.contains("layered_bp_handpicked"), "{err}");
    }

    #[test]
    fn spectral_flags_match_variants() {
        assert!(Algorithm::LayeredBp.needs_spectral());
        assert!(Algorithm::LayeredBpHandpicked.needs_spectral());
        assert!(!Algorithm::LayeredHard.needs_spectral());
        assert!(!Algorithm::LayeredSoftOracle.needs_spectral());
        assert!(Algorithm::LayeredHard.has_bound());
        assert!(!Algorithm::LayeredBpHandpicked.has_bound());
    }

    #[test]
    fn hard_run_matches_direct_threshold_pass() {
        let (model, _) = small_model();
        let (y, truth, stats, eps0) = instance(&model, Some(40.0));
        let ests = run_algorithm(
            &model,
            &y,
            &truth,
            &stats,
            eps0,
            None,
            &Overrides::default(),
            Algorithm::LayeredHard,
        )
        .unwrap();
        let betas: Vec<f64> =
            hard_stability(&stats, eps0, None).unwrap().layers.iter().map(|l| l.chosen).collect();
        let direct =
            layered_threshold(&model, &y, &LayeredThreshConfig { kind: ThresholdKind::Hard, betas })
                .unwrap();
        for (a, b) in ests.iter().zip(&direct.reps) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn oracle_keeps_exactly_the_true_count() {
        let (model, _) = small_model();
        let (y, truth, stats, eps0) = instance(&model, Some(40.0));
        let ests = run_algorithm(
            &model,
            &y,
            &truth,
            &stats,
            eps0,
            None,
            &Overrides::default(),
            Algorithm::LayeredSoftOracle,
        )
        .unwrap();
        for (est, t) in ests.iter().zip(&truth) {
            assert_eq!(est.support(ZERO_TOL).len(), t.nnz());
        }
    }

    #[test]
    fn beta_override_feeds_the_threshold_pass() {
        let (model, _) = small_model();
        let (y, truth, stats, eps0) = instance(&model, Some(40.0));
        let overrides = Overrides { betas: Some(vec![1e9, 1e9]), xis: None };
        let ests = run_algorithm(
            &model,
            &y,
            &truth,
            &stats,
            eps0,
            None,
            &overrides,
            Algorithm::LayeredHard,
        )
        .unwrap();
        assert!(ests.iter().all(|e| e.nnz() == 0));
        let wrong = Overrides { betas: Some(vec![1.0]), xis: None };
        assert!(run_algorithm(
            &model,
            &y,
            &truth,
            &stats,
            eps0,
            None,
            &wrong,
            Algorithm::LayeredHard
        )
        .is_err());
    }

    #[test]
    fn shrinkage_requires_spectral_bounds() {
        let (model, _) = small_model();
        let (y, truth, stats, eps0) = instance(&model, Some(40.0));
        let err = run_algorithm(
            &model,
            &y,
            &truth,
            &stats,
            eps0,
            None,
            &Overrides::default(),
            Algorithm::LayeredBp,
        )
        .unwrap_err();
        assert!(err.to_string().contains("spectral"), "{err}");
    }

    #[test]
    fn shrinkage_runs_with_bounds_and_produces_layers() {
        let (model, _) = small_model();
        let (y, truth, stats, eps0) = instance(&model, Some(40.0));
        let cs = spectral_bounds(&model).unwrap();
        for alg in [Algorithm::LayeredBp, Algorithm::LayeredBpHandpicked] {
            let ests = run_algorithm(
                &model,
                &y,
                &truth,
                &stats,
                eps0,
                Some(&cs),
                &Overrides::default(),
                alg,
            )
            .unwrap();
            assert_eq!(ests.len(), model.depth());
            for (e, t) in ests.iter().zip(&truth) {
                assert_eq!(e.geom(), t.geom());
            }
        }
    }

    #[test]
    fn bounds_follow_the_matching_theorem() {
        let (model, _) = small_model();
        let (_, _, stats, eps0) = instance(&model, Some(40.0));
        let o = Overrides::default();
        let hard = algorithm_bounds(Algorithm::LayeredHard, &stats, eps0, &o).unwrap();
        let want: Vec<f64> =
            hard_stability(&stats, eps0, None).unwrap().layers.iter().map(|l| l.eps).collect();
        for (a, b) in hard.iter().zip(&want) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()), "{a} vs {b}");
        }
        let oracle = algorithm_bounds(Algorithm::LayeredSoftOracle, &stats, eps0, &o).unwrap();
        assert!(oracle.iter().all(|b| b.is_nan()));
        let with_xi = Overrides { betas: None, xis: Some(vec![0.1, 0.1]) };
        let bp = algorithm_bounds(Algorithm::LayeredBp, &stats, eps0, &with_xi).unwrap();
        assert!(bp.iter().all(|b| b.is_nan()));
        let conds = algorithm_conditions(Algorithm::LayeredBp, &stats, eps0, &with_xi).unwrap();
        assert!(conds.iter().all(|c| !c));
    }

    #[test]
    fn clean_input_shrinkage_bound_is_zero_when_condition_holds() {
        let (model, _) = small_model();
        let (_, _, stats, _) = instance(&model, None);
        let bounds =
            algorithm_bounds(Algorithm::LayeredBp, &stats, 0.0, &Overrides::default()).unwrap();
        let conds =
            algorithm_conditions(Algorithm::LayeredBp, &stats, 0.0, &Overrides::default()).unwrap();
        for (b, ok) in bounds.iter().zip(&conds) {
            if *ok {
                assert_eq!(*b, 0.0);
            } else {
                assert!(b.is_nan());
            }
        }
    }
}
