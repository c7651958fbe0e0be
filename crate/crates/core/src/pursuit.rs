//! Pursuit algorithms that estimate every layer from the signal downward.
//!
//! The layered threshold pass mirrors a convolutional network forward pass:
//! each layer analyzes the previous layer's estimate and applies an
//! elementwise threshold, and the estimate becomes the next layer's input.
//! Iterative shrinkage refines one layer at a time by stepping along the
//! residual gradient before shrinking; run with a single iteration and unit
//! step it reproduces the threshold pass exactly. The continuation variant
//! re-solves with a geometrically decreasing shrinkage level to approach the
//! minimum-l1 decomposition of a noiseless signal.

use crate::dict::{ConvDictionary, ModelStack};
use crate::error::{Error, Result};
use crate::signal::{norm_l0inf_stripe, LayeredVector};
use crate::threshold::ThresholdKind;

/// Support sets are read off estimates at this fraction of the largest
/// magnitude.
pub const SUPPORT_REL_TOL: f64 = 1e-6;

const DEFAULT_SPECTRAL_TOL: f64 = 1e-6;

/// Entries with magnitude above `SUPPORT_REL_TOL` times the largest
/// magnitude.
pub fn relative_support(v: &LayeredVector) -> Vec<usize> {
    let max = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.support(SUPPORT_REL_TOL * max)
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// One threshold level per layer, applied with the same operator.
#[derive(Clone, Debug)]
pub struct LayeredThreshConfig {
    pub kind: ThresholdKind,
    pub betas: Vec<f64>,
}

/// Parameters for iterative shrinkage on one layer. `c` is the majorization
/// constant: gradient steps are scaled by `1 / c` and the shrinkage level is
/// `xi / c`. When absent, a spectral bound of the dictionary Gram is used.
#[derive(Clone, Debug)]
pub struct IstConfig {
    pub kind: ThresholdKind,
    pub xi: f64,
    pub c: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for IstConfig {
    fn default() -> Self {
        Self { kind: ThresholdKind::Soft, xi: 0.0, c: None, max_iters: 5000, rel_tol: 1e-8 }
    }
}

/// Re-solves with shrinkage levels `initial_scale * ||D^T y||_inf / decay^t`
/// for `t` in `0..stages`, warm-starting each stage from the last.
#[derive(Clone, Debug)]
pub struct ContinuationConfig {
    pub stages: usize,
    pub initial_scale: f64,
    pub decay: f64,
    pub c: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self { stages: 10, initial_scale: 0.1, decay: 10.0, c: None, max_iters: 5000, rel_tol: 1e-8 }
    }
}

/// Diagnostics for one recovered layer.
#[derive(Clone, Debug)]
pub struct LayerOutcome {
    pub support: Vec<usize>,
    pub iterations: usize,
    /// Final shrinkage objective `xi ||g||_1 + 0.5 ||y - D g||_2^2`, absent
    /// for plain thresholding.
    pub objective: Option<f64>,
    pub residual_norm: f64,
}

/// Estimates for layers `1..=depth`, shallowest first.
#[derive(Clone, Debug)]
pub struct PursuitResult {
    pub reps: Vec<LayeredVector>,
    pub layers: Vec<LayerOutcome>,
}

fn check_signal(model: &ModelStack, x: &LayeredVector) -> Result<()> {
    if x.geom() != model.geometry(0)? {
        return Err(Error::GeometryMismatch(
            "signal does not match the model's layer 0 geometry".into(),
        ));
    }
    Ok(())
}

/// One analysis-plus-threshold step per layer, feeding each estimate to the
/// next layer.
pub fn layered_threshold(
    model: &ModelStack,
    x: &LayeredVector,
    cfg: &LayeredThreshConfig,
) -> Result<PursuitResult> {
    if cfg.betas.len() != model.depth() {
        return Err(Error::InvalidParameter(format!(
            "{} thresholds for {} layers",
            cfg.betas.len(),
            model.depth()
        )));
    }
    check_signal(model, x)?;
    let mut reps: Vec<LayeredVector> = Vec::with_capacity(model.depth());
    let mut layers = Vec::with_capacity(model.depth());
    for (i, d) in model.dicts().iter().enumerate() {
        let input = if i == 0 { x } else { &reps[i - 1] };
        let mut z = d.analyze(input)?;
        cfg.kind.apply_slice(z.data_mut(), cfg.betas[i])?;
        let synth = d.synthesize(&z)?;
        layers.push(LayerOutcome {
            support: relative_support(&z),
            iterations: 1,
            objective: None,
            residual_norm: l2_diff(input.data(), synth.data()),
        });
        reps.push(z);
    }
    Ok(PursuitResult { reps, layers })
}

fn validate_ist(cfg: &IstConfig) -> Result<()> {
    if !(cfg.xi.is_finite() && cfg.xi >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shrinkage level must be finite and nonnegative, got {}",
            cfg.xi
        )));
    }
    if let Some(c) = cfg.c {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "majorization constant must be finite and positive, got {c}"
            )));
        }
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be positive".into()));
    }
    if !(cfg.rel_tol.is_finite() && cfg.rel_tol >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "relative tolerance must be finite and nonnegative, got {}",
            cfg.rel_tol
        )));
    }
    Ok(())
}

/// Iterative shrinkage for one layer: repeat
/// `g <- T(g + D^T (y - D g) / c, xi / c)` until the update is small relative
/// to the iterate or the iteration budget runs out. `T` is the configured
/// threshold operator; `init` defaults to zero.
pub fn ist(
    d: &ConvDictionary,
    y: &LayeredVector,
    cfg: &IstConfig,
    init: Option<&LayeredVector>,
) -> Result<(LayeredVector, LayerOutcome)> {
    validate_ist(cfg)?;
    if y.geom() != d.out_geom() {
        return Err(Error::GeometryMismatch(
            "shrinkage target does not match the dictionary's output geometry".into(),
        ));
    }
    let c = match cfg.c {
        Some(c) => c,
        None => d.gram_spectral_bound(DEFAULT_SPECTRAL_TOL)?,
    };
    let beta = cfg.xi / c;
    let mut gamma = match init {
        Some(g) => {
            if g.geom() != d.in_geom() {
                return Err(Error::GeometryMismatch(
                    "warm start does not match the dictionary's input geometry".into(),
                ));
            }
            g.clone()
        }
        None => LayeredVector::zeros(d.in_geom().clone()),
    };
    let mut residual = y.clone();
    let synth = d.synthesize(&gamma)?;
    for (r, s) in residual.data_mut().iter_mut().zip(synth.data()) {
        *r -= s;
    }
    let mut iterations = 0;
    let mut objective = f64::NAN;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let grad = d.analyze(&residual)?;
        let mut delta_sq = 0.0;
        let mut norm_sq = 0.0;
        for (g, up) in gamma.data_mut().iter_mut().zip(grad.data()) {
            let z = *g + up / c;
            let new = cfg.kind.apply(z, beta);
            delta_sq += (new - *g) * (new - *g);
            norm_sq += new * new;
            *g = new;
        }
        let synth = d.synthesize(&gamma)?;
        for ((r, yv), s) in residual.data_mut().iter_mut().zip(y.data()).zip(synth.data()) {
            *r = yv - s;
        }
        let res_sq: f64 = residual.data().iter().map(|r| r * r).sum();
        let l1: f64 = gamma.data().iter().map(|g| g.abs()).sum();
        objective = cfg.xi * l1 + 0.5 * res_sq;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "shrinkage objective became non-finite after {iterations} iterations"
            )));
        }
        if delta_sq.sqrt() <= cfg.rel_tol * norm_sq.sqrt() {
            break;
        }
    }
    let outcome = LayerOutcome {
        support: relative_support(&gamma),
        iterations,
        objective: Some(objective),
        residual_norm: residual.data().iter().map(|r| r * r).sum::<f64>().sqrt(),
    };
    Ok((gamma, outcome))
}

/// Iterative shrinkage on every layer in turn, each targeting the previous
/// layer's estimate from a zero start.
pub fn layered_ist(model: &ModelStack, x: &LayeredVector, cfgs: &[IstConfig]) -> Result<PursuitResult> {
    if cfgs.len() != model.depth() {
        return Err(Error::InvalidParameter(format!(
            "{} shrinkage configs for {} layers",
            cfgs.len(),
            model.depth()
        )));
    }
    check_signal(model, x)?;
    let mut reps: Vec<LayeredVector> = Vec::with_capacity(model.depth());
    let mut layers = Vec::with_capacity(model.depth());
    for (i, d) in model.dicts().iter().enumerate() {
        let input = if i == 0 { x } else { &reps[i - 1] };
        let (g, outcome) = ist(d, input, &cfgs[i], None)?;
        reps.push(g);
        layers.push(outcome);
    }
    Ok(PursuitResult { reps, layers })
}

/// Shrinkage with a decreasing level: stage `t` runs [`ist`] at level
/// `initial_scale * ||D^T y||_inf / decay^t`, warm-started from the previous
/// stage. The reported iteration count sums all stages.
pub fn ist_continuation(
    d: &ConvDictionary,
    y: &LayeredVector,
    cfg: &ContinuationConfig,
) -> Result<(LayeredVector, LayerOutcome)> {
    if cfg.stages == 0 {
        return Err(Error::InvalidParameter("continuation needs at least one stage".into()));
    }
    if !(cfg.initial_scale.is_finite() && cfg.initial_scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "initial scale must be finite and positive, got {}",
            cfg.initial_scale
        )));
    }
    if !(cfg.decay.is_finite() && cfg.decay > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "decay must be finite and above one, got {}",
            cfg.decay
        )));
    }
    let c = match cfg.c {
        Some(c) => c,
        None => d.gram_spectral_bound(DEFAULT_SPECTRAL_TOL)?,
    };
    let scale = linf(d.analyze(y)?.data());
    if scale == 0.0 {
        let gamma = LayeredVector::zeros(d.in_geom().clone());
        let outcome = LayerOutcome {
            support: Vec::new(),
            iterations: 0,
            objective: Some(0.5 * y.data().iter().map(|v| v * v).sum::<f64>()),
            residual_norm: y.data().iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        return Ok((gamma, outcome));
    }
    let mut gamma: Option<LayeredVector> = None;
    let mut last: Option<LayerOutcome> = None;
    let mut total_iters = 0;
    let mut xi = cfg.initial_scale * scale;
    for _ in 0..cfg.stages {
        let stage = IstConfig {
            kind: ThresholdKind::Soft,
            xi,
            c: Some(c),
            max_iters: cfg.max_iters,
            rel_tol: cfg.rel_tol,
        };
        let (g, o) = ist(d, y, &stage, gamma.as_ref())?;
        total_iters += o.iterations;
        gamma = Some(g);
        last = Some(o);
        xi /= cfg.decay;
    }
    let mut outcome = last.expect("at least one stage");
    outcome.iterations = total_iters;
    Ok((gamma.expect("at least one stage"), outcome))
}

/// [`ist_continuation`] on every layer in turn, each targeting the previous
/// layer's estimate.
pub fn layered_ist_continuation(
    model: &ModelStack,
    x: &LayeredVector,
    cfgs: &[ContinuationConfig],
) -> Result<PursuitResult> {
    if cfgs.len() != model.depth() {
        return Err(Error::InvalidParameter(format!(
            "{} continuation configs for {} layers",
            cfgs.len(),
            model.depth()
        )));
    }
    check_signal(model, x)?;
    let mut reps: Vec<LayeredVector> = Vec::with_capacity(model.depth());
    let mut layers = Vec::with_capacity(model.depth());
    for (i, d) in model.dicts().iter().enumerate() {
        let input = if i == 0 { x } else { &reps[i - 1] };
        let (g, outcome) = ist_continuation(d, input, &cfgs[i])?;
        reps.push(g);
        layers.push(outcome);
    }
    Ok(PursuitResult { reps, layers })
}

/// Result of checking a full set of layer estimates against decomposition
/// tolerances and stripe sparsity budgets.
#[derive(Clone, Debug)]
pub struct ChainCheck {
    /// `||prev - Di gi||_2` per layer, where `prev` is the signal for the
    /// first layer.
    pub fit_errors: Vec<f64>,
    pub stripe_norms: Vec<usize>,
    pub feasible: bool,
}

/// Checks that the estimates `reps` (shallowest first) synthesize each other
/// within `fit_tols` and keep their stripe norms within `budgets`.
pub fn check_chain(
    model: &ModelStack,
    x: &LayeredVector,
    reps: &[LayeredVector],
    budgets: &[usize],
    fit_tols: &[f64],
) -> Result<ChainCheck> {
    let k = model.depth();
    if reps.len() != k || budgets.len() != k || fit_tols.len() != k {
        return Err(Error::InvalidParameter(format!(
            "expected {k} layers of estimates, budgets and tolerances"
        )));
    }
    check_signal(model, x)?;
    for (i, g) in reps.iter().enumerate() {
        if g.geom() != model.geometry(i + 1)? {
            return Err(Error::GeometryMismatch(format!(
                "estimate for layer {} has the wrong geometry",
                i + 1
            )));
        }
    }
    let mut fit_errors = Vec::with_capacity(k);
    let mut stripe_norms = Vec::with_capacity(k);
    let mut feasible = true;
    for i in 0..k {
        let input = if i == 0 { x } else { &reps[i - 1] };
        let synth = model.dicts()[i].synthesize(&reps[i])?;
        let fit = l2_diff(input.data(), synth.data());
        let stripe = norm_l0inf_stripe(&reps[i]);
        if fit > fit_tols[i] || stripe > budgets[i] {
            feasible = false;
        }
        fit_errors.push(fit);
        stripe_norms.push(stripe);
    }
    Ok(ChainCheck { fit_errors, stripe_norms, feasible })
}
