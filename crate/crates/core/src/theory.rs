//! Recovery conditions and error propagation for the layered pursuits.
//!
//! All guarantees are driven by per-layer summary statistics: the local
//! sparsity of the true representation (stripe and patch counts), its extreme
//! nonzero magnitudes, and the mutual coherence of the layer's dictionary.
//! Each check reports, layer by layer, whether the success condition holds,
//! the admissible threshold interval where one exists, the level assumed by
//! the bound, and the worst-case patch energy of the estimation error. A
//! failed layer poisons everything deeper: its error bound is reported as NaN
//! and the NaN propagates.

use crate::dict::ModelStack;
use crate::error::{Error, Result};

/// Measured summary of one true representation layer and its dictionary.
#[derive(Clone, Copy, Debug)]
pub struct LayerStats {
    /// Largest nonzero count over stripe windows.
    pub l0inf_stripe: usize,
    /// Largest nonzero count over patch windows.
    pub l0inf_patch: usize,
    /// Smallest nonzero magnitude, zero for an empty layer.
    pub gamma_min_abs: f64,
    /// Largest magnitude.
    pub gamma_max_abs: f64,
    /// Mutual coherence of the layer's dictionary.
    pub mu: f64,
}

/// Which guarantee produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    Uniqueness,
    GlobalStability,
    HardThreshold,
    SoftThreshold,
    BasisPursuit,
}

/// Outcome of one guarantee at one layer. Fields that a guarantee does not
/// define are NaN.
#[derive(Clone, Copy, Debug)]
pub struct LayerBound {
    /// Whether the layer's success condition holds (and, where an interval
    /// applies, whether the chosen level lies strictly inside it).
    pub condition_ok: bool,
    /// Admissible threshold interval edges.
    pub lo: f64,
    pub hi: f64,
    /// Threshold or shrinkage level the bound assumes.
    pub chosen: f64,
    /// Worst-case patch energy of the estimation error after this layer.
    pub eps: f64,
    /// Magnitude above which true coefficients are guaranteed recovered.
    pub recoverable: f64,
}

#[derive(Clone, Debug)]
pub struct TheoremReport {
    pub kind: BoundKind,
    pub layers: Vec<LayerBound>,
}

fn validate_stats(stats: &[LayerStats]) -> Result<()> {
    if stats.is_empty() {
        return Err(Error::InvalidParameter("no layer statistics given".into()));
    }
    for (i, s) in stats.iter().enumerate() {
        if !(s.mu.is_finite() && s.mu >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "layer {} coherence must be finite and nonnegative, got {}",
                i + 1,
                s.mu
            )));
        }
        if !(s.gamma_min_abs.is_finite()
            && s.gamma_max_abs.is_finite()
            && s.gamma_min_abs >= 0.0
            && s.gamma_min_abs <= s.gamma_max_abs)
        {
            return Err(Error::InvalidParameter(format!(
                "layer {} magnitudes are inconsistent: min {} max {}",
                i + 1,
                s.gamma_min_abs,
                s.gamma_max_abs
            )));
        }
    }
    Ok(())
}

fn validate_eps0(eps0: f64) -> Result<()> {
    if !(eps0.is_finite() && eps0 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "input perturbation energy must be finite and nonnegative, got {eps0}"
        )));
    }
    Ok(())
}

/// Sparsest-decomposition condition per layer: the stripe count must stay
/// below `(1 + 1/mu) / 2`. Only `condition_ok` is meaningful.
pub fn check_uniqueness(stats: &[LayerStats]) -> Result<TheoremReport> {
    validate_stats(stats)?;
    let layers = stats
        .iter()
        .map(|s| LayerBound {
            condition_ok: (s.l0inf_stripe as f64) < 0.5 * (1.0 + 1.0 / s.mu),
            lo: f64::NAN,
            hi: f64::NAN,
            chosen: f64::NAN,
            eps: f64::NAN,
            recoverable: f64::NAN,
        })
        .collect();
    Ok(TheoremReport { kind: BoundKind::Uniqueness, layers })
}

/// Worst-case energy growth of a signal perturbation through the layers when
/// each layer is solved to its sparsest decomposition:
/// `E_i^2 = 4 E_{i-1}^2 / (1 - (2 S_i - 1) mu_i)` with `E_0 = e0`.
pub fn global_stability_bounds(stats: &[LayerStats], e0: f64) -> Result<TheoremReport> {
    validate_stats(stats)?;
    validate_eps0(e0)?;
    let mut layers = Vec::with_capacity(stats.len());
    let mut prev_sq = e0 * e0;
    for s in stats {
        let shrink = 1.0 - (2.0 * s.l0inf_stripe as f64 - 1.0) * s.mu;
        let ok = shrink > 0.0;
        let eps_sq = if ok { 4.0 * prev_sq / shrink } else { f64::NAN };
        layers.push(LayerBound {
            condition_ok: ok && prev_sq.is_finite(),
            lo: f64::NAN,
            hi: f64::NAN,
            chosen: f64::NAN,
            eps: eps_sq.sqrt(),
            recoverable: f64::NAN,
        });
        prev_sq = eps_sq;
    }
    Ok(TheoremReport { kind: BoundKind::GlobalStability, layers })
}

/// Admissible interval for a layer's threshold given the contamination
/// `eps_prev` of its input: off-support responses stay below the lower edge,
/// on-support responses above the upper edge.
fn threshold_interval(s: &LayerStats, eps_prev: f64) -> (f64, f64) {
    let sf = s.l0inf_stripe as f64;
    let lo = sf * s.mu * s.gamma_max_abs + eps_prev;
    let hi = s.gamma_min_abs - (sf - 1.0) * s.mu * s.gamma_max_abs - eps_prev;
    (lo, hi)
}

fn pick_level(lo: f64, hi: f64, betas: Option<&[f64]>, i: usize) -> f64 {
    match betas {
        Some(b) => b[i],
        None => (0.5 * (lo + hi)).max(0.0),
    }
}

fn check_betas(stats: &[LayerStats], betas: Option<&[f64]>) -> Result<()> {
    if let Some(b) = betas {
        if b.len() != stats.len() {
            return Err(Error::InvalidParameter(format!(
                "{} thresholds for {} layers",
                b.len(),
                stats.len()
            )));
        }
    }
    Ok(())
}

/// Support recovery and error propagation for the layered hard threshold
/// pass. With the level inside the admissible interval the support is
/// recovered exactly and the patch error after layer `i` is
/// `sqrt(P_i) (eps_{i-1} + mu_i (S_i - 1) max_i)`. `betas` overrides the
/// default midpoint level.
pub fn hard_stability(
    stats: &[LayerStats],
    eps0: f64,
    betas: Option<&[f64]>,
) -> Result<TheoremReport> {
    validate_stats(stats)?;
    validate_eps0(eps0)?;
    check_betas(stats, betas)?;
    let mut layers = Vec::with_capacity(stats.len());
    let mut eps_prev = eps0;
    for (i, s) in stats.iter().enumerate() {
        let (lo, hi) = threshold_interval(s, eps_prev);
        let chosen = pick_level(lo, hi, betas, i);
        let ok = lo < chosen && chosen < hi;
        let sf = s.l0inf_stripe as f64;
        let eps = if ok {
            (s.l0inf_patch as f64).sqrt() * (eps_prev + s.mu * (sf - 1.0) * s.gamma_max_abs)
        } else {
            f64::NAN
        };
        layers.push(LayerBound { condition_ok: ok, lo, hi, chosen, eps, recoverable: f64::NAN });
        eps_prev = eps;
    }
    Ok(TheoremReport { kind: BoundKind::HardThreshold, layers })
}

/// Same admissible interval as the hard pass; the bias of shrinking the
/// survivors adds the chosen level to the propagated error:
/// `eps_i = sqrt(P_i) (eps_{i-1} + mu_i (S_i - 1) max_i + beta_i)`.
pub fn soft_stability(
    stats: &[LayerStats],
    eps0: f64,
    betas: Option<&[f64]>,
) -> Result<TheoremReport> {
    validate_stats(stats)?;
    validate_eps0(eps0)?;
    check_betas(stats, betas)?;
    let mut layers = Vec::with_capacity(stats.len());
    let mut eps_prev = eps0;
    for (i, s) in stats.iter().enumerate() {
        let (lo, hi) = threshold_interval(s, eps_prev);
        let chosen = pick_level(lo, hi, betas, i);
        let ok = lo < chosen && chosen < hi;
        let sf = s.l0inf_stripe as f64;
        let eps = if ok {
            (s.l0inf_patch as f64).sqrt()
                * (eps_prev + s.mu * (sf - 1.0) * s.gamma_max_abs + chosen)
        } else {
            f64::NAN
        };
        layers.push(LayerBound { condition_ok: ok, lo, hi, chosen, eps, recoverable: f64::NAN });
        eps_prev = eps;
    }
    Ok(TheoremReport { kind: BoundKind::SoftThreshold, layers })
}

/// Success condition and error propagation for layered shrinkage run at
/// levels `xi_i = 4 eps_{i-1}`: when the stripe count stays below
/// `(1 + 1/mu) / 3` the estimated support is contained in the true one,
/// every coefficient larger than `recoverable` is found, and the patch error
/// grows as `eps_i = 7.5 sqrt(P_i) eps_{i-1}`.
pub fn basis_pursuit_bounds(stats: &[LayerStats], eps0: f64) -> Result<TheoremReport> {
    validate_stats(stats)?;
    validate_eps0(eps0)?;
    let mut layers = Vec::with_capacity(stats.len());
    let mut eps_prev = eps0;
    for s in stats {
        let ok = eps_prev.is_finite() && (s.l0inf_stripe as f64) < (1.0 + 1.0 / s.mu) / 3.0;
        let chosen = 4.0 * eps_prev;
        let (eps, recoverable) = if ok {
            let e = 7.5 * (s.l0inf_patch as f64).sqrt() * eps_prev;
            (e, 7.5 * eps_prev)
        } else {
            (f64::NAN, f64::NAN)
        };
        layers.push(LayerBound {
            condition_ok: ok,
            lo: f64::NAN,
            hi: f64::NAN,
            chosen,
            eps,
            recoverable,
        });
        eps_prev = eps;
    }
    Ok(TheoremReport { kind: BoundKind::BasisPursuit, layers })
}

/// Worst-case nonzero counts implied by the deepest layer's total count.
#[derive(Clone, Debug)]
pub struct SparsityPropagation {
    /// Per level (0 the signal), a cap on the total nonzero count.
    pub total: Vec<usize>,
    /// Per level, a cap on the stripe count: the total cap clipped to the
    /// stripe capacity.
    pub stripe: Vec<usize>,
}

/// Propagates a deepest-layer nonzero count down the model: each coefficient
/// of layer `i` creates at most `induced_l0` nonzeros in layer `i - 1`, and
/// no level can exceed its own length. `deepest_total` must not exceed the
/// deepest layer's length.
pub fn l0inf_propagation(model: &ModelStack, deepest_total: usize) -> Result<SparsityPropagation> {
    let k = model.depth();
    let deepest_len = model.geometry(k)?.total_len();
    if deepest_total > deepest_len {
        return Err(Error::InvalidParameter(format!(
            "deepest count {deepest_total} exceeds layer length {deepest_len}"
        )));
    }
    let mut total = vec![0usize; k + 1];
    total[k] = deepest_total;
    for i in (0..k).rev() {
        let spread = model.dicts()[i].induced_l0();
        let cap = model.geometry(i)?.total_len();
        total[i] = total[i + 1].saturating_mul(spread).min(cap);
    }
    let mut stripe = Vec::with_capacity(k + 1);
    for (level, &t) in total.iter().enumerate() {
        let g = model.geometry(level)?;
        stripe.push(t.min(g.stripe_len * g.channels));
    }
    Ok(SparsityPropagation { total, stripe })
}
